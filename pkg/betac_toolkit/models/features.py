"""
Feature ordering and training-set models.
"""
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from ..errors import InvalidArgumentError


ENGINEERED_FEATURES: Tuple[Tuple[str, str], ...] = (
    ("pressure_streamline", "(2/pi) arccos(grad p . U / (|grad p| |U|)) - 1"),
    ("time_scale_ratio", "2 [(S / (S + omega))^(1/4) - 1/2]"),
    ("q_criterion", "(S^2 - W^2) / (S^2 + W^2)"),
    ("turbulence_intensity", "2 [(k / (|U|^2 / 2 + k))^(1/4) - 1/2]"),
    ("viscosity_ratio", "2 [nu_t / (100 nu + nu_t) - 1/2]"),
)

# Minimal integrity basis of one symmetric tensor S and three antisymmetric
# tensors W, Ap, Ak: each entry is the trace of the product of its factors.
INVARIANT_BASIS: Tuple[Tuple[str, ...], ...] = (
    ("S2",),
    ("S2", "S"),
    ("W2",),
    ("Ap2",),
    ("Ak2",),
    ("W2", "S"),
    ("W2", "S2"),
    ("W2", "S", "W", "S2"),
    ("Ap2", "S"),
    ("Ap2", "S2"),
    ("Ap2", "S", "Ap", "S2"),
    ("Ak2", "S"),
    ("Ak2", "S2"),
    ("Ak2", "S", "Ak", "S2"),
    ("W", "Ap"),
    ("Ap", "Ak"),
    ("W", "Ak"),
    ("W", "Ap", "S"),
    ("W", "Ap", "S2"),
    ("W2", "Ap", "S"),
    ("Ap2", "W", "S"),
    ("W2", "Ap", "S2"),
    ("Ap2", "W", "S2"),
    ("W2", "S", "Ap", "S2"),
    ("Ap2", "S", "W", "S2"),
    ("W", "Ak", "S"),
    ("W", "Ak", "S2"),
    ("W2", "Ak", "S"),
    ("Ak2", "W", "S"),
    ("W2", "Ak", "S2"),
    ("Ak2", "W", "S2"),
    ("W2", "S", "Ak", "S2"),
    ("Ak2", "S", "W", "S2"),
    ("Ap", "Ak", "S"),
    ("Ap", "Ak", "S2"),
    ("Ap2", "Ak", "S"),
    ("Ak2", "Ap", "S"),
    ("Ap2", "Ak", "S2"),
    ("Ak2", "Ap", "S2"),
    ("Ap2", "S", "Ak", "S2"),
    ("Ak2", "S", "Ap", "S2"),
    ("W", "Ap", "Ak"),
    ("W", "Ap", "Ak", "S"),
    ("W", "Ak", "Ap", "S"),
    ("W", "Ap", "Ak", "S2"),
    ("W", "Ak", "Ap", "S2"),
    ("W", "Ap", "S", "Ak", "S2"),
)


def invariant_name(factors: Tuple[str, ...]) -> str:
    return "tr(" + ".".join(factors) + ")"


FEATURE_NAMES: Tuple[str, ...] = (
    tuple(name for name, _ in ENGINEERED_FEATURES)
    + tuple(invariant_name(factors) for factors in INVARIANT_BASIS)
)
N_ENGINEERED = len(ENGINEERED_FEATURES)
N_INVARIANTS = len(INVARIANT_BASIS)
N_FEATURES = len(FEATURE_NAMES)

NORMALIZATION = {
    "S": "S / (|S| + omega)",
    "W": "W / (|W| + omega)",
    "Ap": "Ap / (|Ap| + |U . grad U|), Ap = -I x grad p",
    "Ak": "Ak / (|Ak| + omega sqrt(k)), Ak = -I x grad k",
}


def feature_index_map() -> List[Dict[str, object]]:
    rows: List[Dict[str, object]] = []
    for index, (name, definition) in enumerate(ENGINEERED_FEATURES):
        rows.append({"index": index, "name": name, "definition": definition})
    for offset, factors in enumerate(INVARIANT_BASIS):
        rows.append({
            "index": N_ENGINEERED + offset,
            "name": invariant_name(factors),
            "definition": "squash(trace(" + " @ ".join(factors) + "))",
        })
    return rows


@dataclass
class TrainingSource:
    name: str
    X: np.ndarray
    Y: np.ndarray
    cells: Optional[np.ndarray] = None
    provenance: str = ""

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.Y = np.asarray(self.Y, dtype=float)
        if self.X.ndim != 2 or self.X.shape[0] != self.Y.shape[0]:
            raise InvalidArgumentError(
                f"Source {self.name}: X shape {self.X.shape} does not match {self.Y.shape[0]} targets"
            )
        if not np.all(np.isfinite(self.X)) or not np.all(np.isfinite(self.Y)):
            raise InvalidArgumentError(f"Source {self.name} contains non-finite rows")

    @property
    def n_samples(self) -> int:
        return self.X.shape[0]


@dataclass
class BandFilterRecord:
    """Closed interval removed from the targets and what the filter did per source."""

    lower: float
    upper: float
    total: Dict[str, int] = field(default_factory=dict)
    retained: Dict[str, int] = field(default_factory=dict)
    dropped: List[str] = field(default_factory=list)


@dataclass
class TrainingSet:
    sources: List[TrainingSource]
    band: BandFilterRecord

    def __post_init__(self):
        widths = {source.X.shape[1] for source in self.sources}
        if len(widths) > 1:
            raise InvalidArgumentError(f"Sources disagree on feature width: {sorted(widths)}")

    @property
    def n_sources(self) -> int:
        return len(self.sources)

    @property
    def names(self) -> List[str]:
        return [source.name for source in self.sources]

    @property
    def X(self) -> np.ndarray:
        return np.vstack([source.X for source in self.sources])

    @property
    def Y(self) -> np.ndarray:
        return np.concatenate([source.Y for source in self.sources])

    def source(self, name: str) -> TrainingSource:
        for source in self.sources:
            if source.name == name:
                return source
        raise InvalidArgumentError(f"Unknown training source: {name}")
