"""
Ensembles of per-source emulators: mixture moments, acceptance gating,
field prediction, diagnostics and archives.
"""
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Protocol, Tuple, Union

import numpy as np
from scipy.stats import spearmanr

from ..errors import ArtifactIOError, InvalidArgumentError, TrainingError
from ..models.ensemble import EnsemblePrediction, ErrorUncertaintyBins, GpeSubmodel, GpeTrainingOptions
from ..models.features import TrainingSet
from ..models.flow import CorrectionField
from .gpe import predict_gpe, train_gpe


logger = logging.getLogger(__name__)

SIGMA_FLOOR = 1e-9
BETA_FLOOR = 1e-3
ARCHIVE_FORMAT_VERSION = 1
DEFAULT_SIGMA_BAR = {"gpe": 0.2, "de": 0.1}


class EnsembleModel(Protocol):
    kind: str
    weighting: str

    @property
    def width(self) -> int: ...

    def predict_moments(self, X: np.ndarray) -> Tuple[np.ndarray, np.ndarray]: ...


@dataclass
class GpeEnsemble:
    models: List[GpeSubmodel]
    kind: str = "gpe"
    weighting: str = "inverse_variance"

    def __post_init__(self):
        if not self.models:
            raise InvalidArgumentError("An ensemble needs at least one submodel")
        widths = {model.width for model in self.models}
        if len(widths) != 1:
            raise InvalidArgumentError(f"Submodels disagree on feature width: {sorted(widths)}")

    @property
    def width(self) -> int:
        return self.models[0].width

    @property
    def names(self) -> List[str]:
        return [model.name for model in self.models]

    def predict_moments(self, X: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        moments = [predict_gpe(model, X) for model in self.models]
        return np.column_stack([m[0] for m in moments]), np.column_stack([m[1] for m in moments])


def train_gpe_ensemble(training: TrainingSet, opts: Optional[GpeTrainingOptions] = None,
                       workers: int = 1) -> GpeEnsemble:
    """One GP per training source, trained in parallel with per-source seeds."""
    opts = opts or GpeTrainingOptions()
    if training.n_sources == 0:
        raise TrainingError("Training set has no sources left after band filtering")
    children = np.random.SeedSequence(opts.seed).spawn(training.n_sources)
    jobs = [
        (source, opts.model_copy(update={"seed": int(child.generate_state(1)[0])}))
        for source, child in zip(training.sources, children)
    ]

    def fit(job) -> GpeSubmodel:
        source, source_opts = job
        try:
            return train_gpe(source.X, source.Y, source_opts, name=source.name)
        except TrainingError as e:
            e.source = source.name
            raise

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        models = list(pool.map(fit, jobs))
    return GpeEnsemble(models=models)


def mixture_moments(means: np.ndarray, stds: np.ndarray, weighting: str = "inverse_variance") -> EnsemblePrediction:
    means = np.atleast_2d(np.asarray(means, dtype=float))
    stds = np.maximum(np.atleast_2d(np.asarray(stds, dtype=float)), SIGMA_FLOOR)
    if means.shape != stds.shape:
        raise InvalidArgumentError(f"Means {means.shape} and stds {stds.shape} differ in shape")

    if weighting == "inverse_variance":
        precision = 1.0 / stds ** 2
        weights = precision / precision.sum(axis=1, keepdims=True)
    elif weighting == "uniform":
        weights = np.full(means.shape, 1.0 / means.shape[1])
    else:
        raise InvalidArgumentError(f"Unknown weighting: {weighting}")

    mean = np.sum(weights * means, axis=1)
    variance_mu = np.maximum(np.sum(weights * (means - mean[:, None]) ** 2, axis=1), 0.0)
    variance_sigma = np.sum(weights * stds ** 2, axis=1)
    return EnsemblePrediction(
        means=means,
        stds=stds,
        weights=weights,
        mean=mean,
        variance_mu=variance_mu,
        variance_sigma=variance_sigma,
    )


def ensemble_predict(model: EnsembleModel, X: np.ndarray) -> EnsemblePrediction:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != model.width:
        raise InvalidArgumentError(f"Features have width {X.shape[1]}, model expects {model.width}")
    means, stds = model.predict_moments(X)
    return mixture_moments(means, stds, model.weighting)


def apply_acceptance(prediction: EnsemblePrediction, sigma_bar: float) -> np.ndarray:
    """beta_c = mu* where sigma* <= sigma_bar, else 1."""
    if not sigma_bar >= 0:
        raise InvalidArgumentError(f"sigma_bar must be >= 0, got {sigma_bar}")
    accepted = prediction.sigma <= sigma_bar
    beta = np.where(accepted, prediction.mean, 1.0)
    low = accepted & (beta < BETA_FLOOR)
    if np.any(low):
        logger.warning(
            f"{int(np.count_nonzero(low))} accepted predictions below {BETA_FLOOR} were raised to it",
            extra={'sigma_bar': sigma_bar}
        )
        beta[low] = BETA_FLOOR
    prediction.beta = beta
    prediction.accepted = accepted
    return beta


def predict_field(
    model: EnsembleModel,
    features: np.ndarray,
    sigma_bar: float,
    fluid: Optional[np.ndarray] = None
) -> Tuple[CorrectionField, EnsemblePrediction]:
    """Gated correction field for every row of the feature matrix; rows outside fluid keep beta_c = 1."""
    prediction = ensemble_predict(model, features)
    beta = apply_acceptance(prediction, sigma_bar)
    if fluid is not None:
        beta[~fluid] = 1.0
        prediction.accepted = prediction.accepted & fluid
    logger.info(
        f"Accepted {int(np.count_nonzero(prediction.accepted))} of {len(beta)} cells at sigma_bar={sigma_bar:g}",
        extra={'sigma_bar': sigma_bar, 'accepted': int(np.count_nonzero(prediction.accepted))}
    )
    return CorrectionField(beta=beta), prediction


def prior_sigma_asymptote(ensemble: GpeEnsemble) -> float:
    """Far-field sigma*_sigma of a GP ensemble; an upper bound worth considering for sigma_bar."""
    prior_variances = np.array([max(model.prior_std, SIGMA_FLOOR) ** 2 for model in ensemble.models])
    return float(np.sqrt(len(prior_variances) / np.sum(1.0 / prior_variances)))


def error_uncertainty_bins(errors: np.ndarray, sigma: np.ndarray, n_bins: int = 10) -> ErrorUncertaintyBins:
    """Mean absolute error in equal-count bins of sigma, with the rank correlation of the bin means."""
    errors = np.abs(np.asarray(errors, dtype=float))
    sigma = np.asarray(sigma, dtype=float)
    if errors.shape != sigma.shape or errors.size < 2:
        raise InvalidArgumentError("Need matching error and sigma arrays with at least two entries")
    n_bins = max(2, min(n_bins, errors.size))
    order = np.argsort(sigma, kind="stable")
    bins = np.array_split(order, n_bins)
    centers = np.array([sigma[b].mean() for b in bins])
    mean_error = np.array([errors[b].mean() for b in bins])
    counts = np.array([len(b) for b in bins])
    correlation = spearmanr(centers, mean_error).statistic
    return ErrorUncertaintyBins(
        sigma_centers=centers,
        mean_error=mean_error,
        counts=counts,
        spearman=float(correlation) if np.isfinite(correlation) else 0.0,
    )


# archives


_ARRAY_FIELDS = ("X", "Y", "lengthscales", "alpha", "chol", "inducing", "chol_inducing")


def save_gpe_ensemble(ensemble: GpeEnsemble, path: Union[str, Path]) -> Path:
    path = Path(path)
    arrays = {}
    entries = []
    for index, model in enumerate(ensemble.models):
        for name in _ARRAY_FIELDS:
            value = getattr(model, name)
            if value is not None:
                arrays[f"m{index}_{name}"] = value
        entries.append({
            "name": model.name,
            "signal_variance": model.signal_variance,
            "noise_variance": model.noise_variance,
            "prior_mean": model.prior_mean,
            "jitter": model.jitter,
            "mode": model.mode,
            "include_noise": model.include_noise,
        })
    metadata = {"format_version": ARCHIVE_FORMAT_VERSION, "kind": "gpe", "models": entries}
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "wb") as f:
            np.savez(f, metadata=np.array(json.dumps(metadata)), **arrays)
    except OSError as e:
        raise ArtifactIOError(f"Could not write model archive: {e}", path=str(path))
    return path


def load_gpe_ensemble(path: Union[str, Path]) -> GpeEnsemble:
    path = Path(path)
    try:
        with np.load(path, allow_pickle=False) as archive:
            metadata = json.loads(str(archive["metadata"]))
            if metadata.get("format_version") != ARCHIVE_FORMAT_VERSION or metadata.get("kind") != "gpe":
                raise ArtifactIOError(
                    f"Unsupported archive (format_version={metadata.get('format_version')}, kind={metadata.get('kind')})",
                    path=str(path),
                )
            models = []
            for index, entry in enumerate(metadata["models"]):
                arrays = {
                    name: archive[f"m{index}_{name}"] if f"m{index}_{name}" in archive.files else None
                    for name in _ARRAY_FIELDS
                }
                models.append(GpeSubmodel(**entry, **arrays))
    except ArtifactIOError:
        raise
    except (OSError, KeyError, ValueError) as e:
        raise ArtifactIOError(f"Could not read model archive: {e}", path=str(path))
    return GpeEnsemble(models=models)


def load_model(path: Union[str, Path]) -> EnsembleModel:
    path = Path(path)
    if not path.exists():
        raise ArtifactIOError("Model archive not found", path=str(path))
    if path.suffix == ".npz":
        return load_gpe_ensemble(path)
    from .deep_ensemble import load_deep_ensemble
    return load_deep_ensemble(path)


def save_model(model: EnsembleModel, path: Union[str, Path]) -> Path:
    if model.kind == "gpe":
        return save_gpe_ensemble(model, path)
    from .deep_ensemble import save_deep_ensemble
    return save_deep_ensemble(model, path)
