"""
Deep ensemble of mean/variance networks trained with a Gaussian negative log likelihood.
"""
import logging
import pickle
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
import torch.optim as optim

from ..errors import ArtifactIOError, DeepEnsembleTrainingError, InvalidArgumentError
from ..models.ensemble import DeepEnsembleOptions


logger = logging.getLogger(__name__)

ARCHIVE_FORMAT_VERSION = 1
VARIANCE_FLOOR = 1e-6


class MeanVarianceNet(nn.Module):
    def __init__(self, input_dim: int, hidden_units: int, hidden_layers: int):
        super().__init__()
        layers: List[nn.Module] = []
        width = input_dim
        for _ in range(hidden_layers):
            layers += [nn.Linear(width, hidden_units), nn.Tanh()]
            width = hidden_units
        self.layers = nn.Sequential(*layers)
        self.mean_head = nn.Linear(width, 1)
        self.var_head = nn.Linear(width, 1)

    def forward(self, x):
        h = self.layers(x)
        mean = self.mean_head(h)
        var = F.softplus(self.var_head(h)) + VARIANCE_FLOOR
        return mean, var


@dataclass
class DeepEnsembleModel:
    members: List[MeanVarianceNet]
    x_shift: np.ndarray
    x_scale: np.ndarray
    options: DeepEnsembleOptions
    kind: str = "de"
    weighting: str = "uniform"

    @property
    def width(self) -> int:
        return len(self.x_shift)

    def _inputs(self, X: np.ndarray) -> torch.Tensor:
        return torch.as_tensor((X - self.x_shift) / self.x_scale, dtype=torch.float64)

    def predict_moments(self, X: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.width:
            raise InvalidArgumentError(f"Query has {X.shape[1]} features, ensemble was trained on {self.width}")
        inputs = self._inputs(X)
        means, stds = [], []
        with torch.no_grad():
            for member in self.members:
                member.eval()
                mean, var = member(inputs)
                means.append(mean.squeeze(-1).numpy())
                stds.append(torch.sqrt(var).squeeze(-1).numpy())
        return np.column_stack(means), np.column_stack(stds)


def _member_seeds(opts: DeepEnsembleOptions) -> List[int]:
    if opts.shared_seed:
        return [opts.seed] * opts.members
    children = np.random.SeedSequence(opts.seed).spawn(opts.members)
    return [int(child.generate_state(1)[0]) for child in children]


def _train_member(inputs: torch.Tensor, targets: torch.Tensor, opts: DeepEnsembleOptions,
                  seed: int, index: int) -> MeanVarianceNet:
    loss_fn = nn.GaussianNLLLoss()
    for attempt in range(opts.max_restarts + 1):
        with torch.random.fork_rng():
            torch.manual_seed(seed + 7919 * attempt)
            member = MeanVarianceNet(inputs.shape[1], opts.hidden_units, opts.hidden_layers).double()
        optimizer = optim.Adam(member.parameters(), lr=opts.learning_rate)

        member.train()
        finite = True
        for epoch in range(opts.epochs):
            optimizer.zero_grad()
            mean, var = member(inputs)
            loss = loss_fn(mean, targets, var)
            if not torch.isfinite(loss):
                finite = False
                break
            loss.backward()
            optimizer.step()

        if finite:
            logger.debug(
                f"Member {index} trained, final loss {loss.item():.4e}",
                extra={'member': index, 'loss': loss.item(), 'attempt': attempt}
            )
            return member
        logger.warning(
            f"Member {index} hit a non-finite loss at epoch {epoch}, restarting",
            extra={'member': index, 'attempt': attempt}
        )
    raise DeepEnsembleTrainingError(f"Member {index} diverged after {opts.max_restarts} restarts")


def train_deep_ensemble(X: np.ndarray, Y: np.ndarray, opts: Optional[DeepEnsembleOptions] = None) -> DeepEnsembleModel:
    """Train M members on the pooled data from every source."""
    opts = opts or DeepEnsembleOptions()
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float).ravel()
    if X.ndim != 2 or X.shape[0] != Y.shape[0] or X.shape[0] < 2:
        raise InvalidArgumentError(f"Need matching X {X.shape} and Y {Y.shape} with at least two rows")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
        raise InvalidArgumentError("Training data contains non-finite values")

    x_shift = X.mean(axis=0)
    spread = X.std(axis=0)
    x_scale = np.where(spread > 0, spread, 1.0)
    inputs = torch.as_tensor((X - x_shift) / x_scale, dtype=torch.float64)
    targets = torch.as_tensor(Y, dtype=torch.float64).unsqueeze(-1)

    members = [
        _train_member(inputs, targets, opts, seed, index)
        for index, seed in enumerate(_member_seeds(opts))
    ]
    logger.info(
        f"Trained deep ensemble with {len(members)} members on {len(Y)} samples",
        extra={'members': len(members), 'n_train': len(Y)}
    )
    return DeepEnsembleModel(members=members, x_shift=x_shift, x_scale=x_scale, options=opts)


def save_deep_ensemble(model: DeepEnsembleModel, path: Union[str, Path]) -> Path:
    path = Path(path)
    bundle = {
        "format_version": ARCHIVE_FORMAT_VERSION,
        "kind": "de",
        "options": model.options.model_dump(),
        "x_shift": torch.as_tensor(model.x_shift),
        "x_scale": torch.as_tensor(model.x_scale),
        "states": [member.state_dict() for member in model.members],
    }
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        torch.save(bundle, path)
    except OSError as e:
        raise ArtifactIOError(f"Could not write model archive: {e}", path=str(path))
    return path


def load_deep_ensemble(path: Union[str, Path]) -> DeepEnsembleModel:
    path = Path(path)
    try:
        bundle = torch.load(path, weights_only=True)
    except (OSError, RuntimeError, EOFError, ValueError, pickle.UnpicklingError) as e:
        raise ArtifactIOError(f"Could not read model archive: {e}", path=str(path))
    if not isinstance(bundle, dict) or bundle.get("format_version") != ARCHIVE_FORMAT_VERSION or bundle.get("kind") != "de":
        raise ArtifactIOError("Unsupported deep-ensemble archive", path=str(path))

    opts = DeepEnsembleOptions(**bundle["options"])
    x_shift = bundle["x_shift"].numpy()
    members = []
    for state in bundle["states"]:
        member = MeanVarianceNet(len(x_shift), opts.hidden_units, opts.hidden_layers).double()
        member.load_state_dict(state)
        members.append(member)
    return DeepEnsembleModel(members=members, x_shift=x_shift, x_scale=bundle["x_scale"].numpy(), options=opts)
