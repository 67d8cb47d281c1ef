"""
Artifact reading and writing: CSV (pandas), legacy VTK, JSON and YAML.
"""
import hashlib
import json
import logging
import re
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple, Union

import numpy as np
import pandas as pd

from .errors import ArtifactIOError, InvalidArgumentError
from .models.features import FEATURE_NAMES, feature_index_map
from .models.flow import BoundaryConditions, FlowState, TurbulenceModel
from .models.mesh import Mesh


logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

UNITS = {
    "x": "m",
    "y": "m",
    "u": "m/s",
    "v": "m/s",
    "p": "m2/s2",
    "k": "m2/s2",
    "omega": "1/s",
    "nu_t": "m2/s",
}
STATE_FIELDS = ("u", "v", "p", "k", "omega", "nu_t")
_UNIT_SUFFIX = re.compile(r"\s*\[[^\]]*\]$")


def label(name: str, unit: Optional[str] = None) -> str:
    unit = UNITS.get(name) if unit is None else unit
    return f"{name} [{unit}]" if unit else name


def strip_units(frame: pd.DataFrame) -> pd.DataFrame:
    return frame.rename(columns=lambda column: _UNIT_SUFFIX.sub("", str(column)))


def sha256_file(path: PathLike) -> str:
    digest = hashlib.sha256()
    try:
        with open(path, "rb") as f:
            for chunk in iter(lambda: f.read(1 << 20), b""):
                digest.update(chunk)
    except OSError as e:
        raise ArtifactIOError(f"Could not hash artifact: {e}", path=str(path))
    return digest.hexdigest()


def _prepare(path: PathLike) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise ArtifactIOError(f"Could not create directory: {e}", path=str(path.parent))
    return path


def write_frame(frame: pd.DataFrame, path: PathLike) -> Path:
    path = _prepare(path)
    try:
        frame.to_csv(path, index=False, lineterminator="\n")
    except OSError as e:
        raise ArtifactIOError(f"Could not write CSV: {e}", path=str(path))
    logger.debug(f"Wrote {path}", extra={'path': str(path), 'rows': len(frame)})
    return path


def read_frame(path: PathLike) -> pd.DataFrame:
    path = Path(path)
    try:
        return pd.read_csv(path, float_precision="round_trip")
    except FileNotFoundError:
        raise ArtifactIOError("File not found", path=str(path))
    except (OSError, ValueError, pd.errors.ParserError) as e:
        raise ArtifactIOError(f"Could not read CSV: {e}", path=str(path))


def _to_builtin(value: Any) -> Any:
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"Cannot serialise {type(value).__name__}")


def write_json(data: Any, path: PathLike) -> Path:
    path = _prepare(path)
    try:
        path.write_text(json.dumps(data, indent=2, sort_keys=True, default=_to_builtin) + "\n")
    except OSError as e:
        raise ArtifactIOError(f"Could not write JSON: {e}", path=str(path))
    return path


def read_json(path: PathLike) -> Any:
    path = Path(path)
    try:
        return json.loads(path.read_text())
    except FileNotFoundError:
        raise ArtifactIOError("File not found", path=str(path))
    except (OSError, ValueError) as e:
        raise ArtifactIOError(f"Could not read JSON: {e}", path=str(path))


def write_text(text: str, path: PathLike) -> Path:
    path = _prepare(path)
    try:
        path.write_text(text)
    except OSError as e:
        raise ArtifactIOError(f"Could not write file: {e}", path=str(path))
    return path


# flow states


def state_frame(state: FlowState) -> pd.DataFrame:
    mesh = state.mesh
    columns = {
        "cell": np.arange(mesh.n_cells),
        label("x"): mesh.centers[:, 0],
        label("y"): mesh.centers[:, 1],
    }
    for name in STATE_FIELDS:
        columns[label(name)] = getattr(state, name)
    return pd.DataFrame(columns)


def write_state_csv(state: FlowState, path: PathLike) -> Path:
    return write_frame(state_frame(state), path)


def read_state_csv(path: PathLike, mesh: Mesh, bc: BoundaryConditions, model: TurbulenceModel) -> FlowState:
    frame = strip_units(read_frame(path))
    missing = {"cell", *STATE_FIELDS} - set(frame.columns)
    if missing:
        raise ArtifactIOError(f"State file lacks columns: {sorted(missing)}", path=str(path))
    if len(frame) != mesh.n_cells or not np.array_equal(frame["cell"].to_numpy(), np.arange(mesh.n_cells)):
        raise ArtifactIOError(f"State file does not match a mesh of {mesh.n_cells} cells", path=str(path))
    fields = {name: frame[name].to_numpy(dtype=float) for name in STATE_FIELDS}
    return FlowState(mesh=mesh, nu=bc.nu, model=model, forcing=bc.forcing, bc=bc, **fields)


def write_history_csv(history: List[Dict[str, float]], path: PathLike) -> Path:
    return write_frame(pd.DataFrame(history), path)


def write_vtk(mesh: Mesh, cell_data: Mapping[str, np.ndarray], path: PathLike, title: str = "betac") -> Path:
    """Legacy ASCII rectilinear grid with one scalar per cell field."""
    path = _prepare(path)
    lines = [
        "# vtk DataFile Version 3.0",
        title[:255],
        "ASCII",
        "DATASET RECTILINEAR_GRID",
        f"DIMENSIONS {len(mesh.x_nodes)} {len(mesh.y_nodes)} 1",
        f"X_COORDINATES {len(mesh.x_nodes)} double",
        " ".join(repr(float(x)) for x in mesh.x_nodes),
        f"Y_COORDINATES {len(mesh.y_nodes)} double",
        " ".join(repr(float(y)) for y in mesh.y_nodes),
        "Z_COORDINATES 1 double",
        "0.0",
        f"CELL_DATA {mesh.n_cells}",
    ]
    for name, values in cell_data.items():
        values = np.asarray(values, dtype=float)
        if values.shape != (mesh.n_cells,):
            raise InvalidArgumentError(f"Cell field {name} has shape {values.shape}, expected ({mesh.n_cells},)")
        lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
        lines += [repr(float(value)) for value in values]
    return write_text("\n".join(lines) + "\n", path)


def write_state_vtk(state: FlowState, path: PathLike, extra: Optional[Mapping[str, np.ndarray]] = None) -> Path:
    data = {name: getattr(state, name) for name in STATE_FIELDS}
    data["blanked"] = state.mesh.blanked.astype(float)
    data.update(extra or {})
    return write_vtk(state.mesh, data, path)


# features


def write_feature_csv(
    features: np.ndarray,
    path: PathLike,
    cells: Optional[np.ndarray] = None,
    beta: Optional[np.ndarray] = None
) -> Path:
    if features.shape[1] != len(FEATURE_NAMES):
        raise InvalidArgumentError(f"Expected {len(FEATURE_NAMES)} feature columns, got {features.shape[1]}")
    frame = pd.DataFrame(features, columns=list(FEATURE_NAMES))
    if cells is not None:
        frame.insert(0, "cell", cells)
    if beta is not None:
        frame["beta_c"] = beta
    return write_frame(frame, path)


def read_feature_csv(path: PathLike) -> Tuple[np.ndarray, Optional[np.ndarray], Optional[np.ndarray]]:
    """(X, beta_c or None, cells or None) from a feature CSV."""
    frame = read_frame(path)
    missing = [name for name in FEATURE_NAMES if name not in frame.columns]
    if missing:
        raise ArtifactIOError(f"Feature file lacks {len(missing)} feature columns", path=str(path))
    X = frame[list(FEATURE_NAMES)].to_numpy(dtype=float)
    beta = frame["beta_c"].to_numpy(dtype=float) if "beta_c" in frame.columns else None
    cells = frame["cell"].to_numpy(dtype=int) if "cell" in frame.columns else None
    return X, beta, cells


def write_feature_index(path: PathLike) -> Path:
    return write_frame(pd.DataFrame(feature_index_map()), path)
