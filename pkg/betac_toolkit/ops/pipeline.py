"""
End-to-end workflow stages: solve, invert, features, train, predict-correct,
sigma sweeps and verification, each recorded in the run manifest.
"""
import logging
import time
import uuid
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from importlib import metadata
from pathlib import Path
from typing import Any, Dict, Iterable, Iterator, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .. import io
from ..config import CaseConfig, RunConfig, fingerprint
from ..errors import ArtifactIOError, InvalidArgumentError, SolverError, TrainingError
from ..models.common import StageResult
from ..models.features import BandFilterRecord, TrainingSet, TrainingSource
from ..models.flow import CorrectionField, FlowState, TurbulenceModel
from ..models.inversion import AssimilationData, InversionProblem
from ..models.manifest import ManifestEntry, RunManifest
from ..models.mesh import Mesh
from .deep_ensemble import train_deep_ensemble
from .ensemble import (
    EnsembleModel,
    GpeEnsemble,
    apply_acceptance,
    ensemble_predict,
    error_uncertainty_bins,
    load_model,
    predict_field,
    prior_sigma_asymptote,
    save_model,
    train_gpe_ensemble,
)
from .features import assemble_training_set, compute_features
from .inversion import assimilation_from_samples, assimilation_from_state, box_mask, invert, twin_beta
from .novelty import fit_lof, score_lof
from .solver import fit_log_law, skin_friction, solve_rans, wall_units


logger = logging.getLogger(__name__)

RESOLVED_CONFIG = "resolved_config.yaml"
MANIFEST = "manifest.jsonl"
_TRACKED_PACKAGES = ("numpy", "scipy", "scikit-learn", "torch", "pandas", "pydantic")


@dataclass
class RunContext:
    """One output directory: resolved config, manifest and per-case meshes."""

    config: RunConfig
    out_dir: Path
    run_id: str
    manifest: RunManifest
    _meshes: Dict[str, Mesh] = field(default_factory=dict, repr=False)

    def mesh(self, case: CaseConfig) -> Mesh:
        if case.name not in self._meshes:
            self._meshes[case.name] = case.mesh.build()
        return self._meshes[case.name]

    def path(self, *parts: str) -> Path:
        return self.out_dir.joinpath(*parts)

    def relative(self, path: Path) -> str:
        return Path(path).relative_to(self.out_dir).as_posix()


def open_run(config: RunConfig, run_id: Optional[str] = None) -> RunContext:
    out_dir = Path(config.output_dir)
    run_id = run_id or str(uuid.uuid4())
    io.write_text(config.to_yaml(), out_dir / RESOLVED_CONFIG)
    logger.info(
        f"[{run_id}] Output directory {out_dir}",
        extra={'run_id': run_id, 'output_dir': str(out_dir)}
    )
    return RunContext(
        config=config,
        out_dir=out_dir,
        run_id=run_id,
        manifest=RunManifest(path=out_dir / MANIFEST, run_id=run_id),
    )


def _versions() -> Dict[str, str]:
    from .. import __version__

    versions = {"betac-toolkit": __version__}
    for package in _TRACKED_PACKAGES:
        try:
            versions[package] = metadata.version(package)
        except metadata.PackageNotFoundError:
            versions[package] = "unknown"
    return versions


@dataclass
class _StageRecord:
    outputs: List[Path] = field(default_factory=list)
    inputs: List[Path] = field(default_factory=list)
    warnings: List[str] = field(default_factory=list)

    def output(self, path: Path) -> Path:
        self.outputs.append(Path(path))
        return Path(path)


@contextmanager
def _stage(context: RunContext, stage: str, case: Optional[str] = None, config_hash: str = "") -> Iterator[_StageRecord]:
    record = _StageRecord()
    started = datetime.now(timezone.utc).isoformat()
    t0 = time.perf_counter()

    def entry(status: str, error: Optional[str] = None) -> ManifestEntry:
        return ManifestEntry(
            run_id=context.run_id,
            stage=stage,
            case=case,
            status=status,
            started_at=started,
            wall_time_s=time.perf_counter() - t0,
            seed=context.config.seed,
            config_hash=config_hash,
            inputs={context.relative(p): io.sha256_file(p) for p in record.inputs if p.exists()},
            outputs={context.relative(p): io.sha256_file(p) for p in record.outputs if p.exists()},
            versions=_versions(),
            warnings=record.warnings,
            error=error,
        )

    logger.info(
        f"[{context.run_id}] Stage {stage} started" + (f" for {case}" if case else ""),
        extra={'run_id': context.run_id, 'stage': stage, 'case': case}
    )
    try:
        yield record
    except Exception as e:
        context.manifest.append(entry("failed", error=repr(e)))
        logger.error(
            f"[{context.run_id}] Stage {stage} failed: {e}",
            extra={'run_id': context.run_id, 'stage': stage, 'case': case, 'error': str(e)}
        )
        raise
    context.manifest.append(entry("ok"))
    logger.info(
        f"[{context.run_id}] Stage {stage} finished in {time.perf_counter() - t0:.2f}s",
        extra={'run_id': context.run_id, 'stage': stage, 'case': case}
    )


def _reusable(context: RunContext, stage: str, case: Optional[str], config_hash: str) -> Optional[ManifestEntry]:
    """Latest matching entry whose outputs are all present and unchanged."""
    entry = context.manifest.latest(stage, case, config_hash)
    if entry is None or not entry.outputs:
        return None
    for name, digest in entry.outputs.items():
        path = context.path(name)
        if not path.exists() or io.sha256_file(path) != digest:
            return None
    logger.info(
        f"[{context.run_id}] Reusing {stage} outputs" + (f" for {case}" if case else ""),
        extra={'run_id': context.run_id, 'stage': stage, 'case': case}
    )
    return entry


def _map(context: RunContext, fn, items: Sequence) -> List:
    with ThreadPoolExecutor(max_workers=context.config.threads) as pool:
        return list(pool.map(fn, items))


# profiles and comparisons


def station_cells(mesh: Mesh, stations: Sequence[float]) -> List[Tuple[float, np.ndarray]]:
    """(x, fluid cells of the nearest column) per station; a 1D channel has one full profile."""
    if mesh.dimensionality == 1:
        return [(float(mesh.centers[0, 0]), np.flatnonzero(mesh.fluid))]
    xc = mesh.centers[:mesh.nx, 0]
    out = []
    for x in stations:
        i = int(np.argmin(np.abs(xc - x)))
        cells = np.arange(mesh.ny) * mesh.nx + i
        out.append((float(xc[i]), cells[mesh.fluid[cells]]))
    return out


def profile_frame(states: Dict[str, FlowState], stations: Sequence[float]) -> pd.DataFrame:
    frames = []
    for variant, state in states.items():
        for x, cells in station_cells(state.mesh, stations):
            frames.append(pd.DataFrame({
                "variant": variant,
                io.label("station", "m"): x,
                io.label("y"): state.mesh.centers[cells, 1],
                io.label("u"): state.u[cells],
                io.label("v"): state.v[cells],
            }))
    if not frames:
        return pd.DataFrame(columns=["variant", io.label("station", "m"), io.label("y"), io.label("u"), io.label("v")])
    return pd.concat(frames, ignore_index=True)


def velocity_error(state: FlowState, data: AssimilationData, cells: Optional[np.ndarray] = None) -> float:
    """RMS velocity mismatch over the assimilated cells (optionally restricted)."""
    selected = data.cells
    keep = np.ones(len(selected), dtype=bool) if cells is None else np.isin(selected, cells)
    if not np.any(keep):
        return float("nan")
    error = (state.u[selected] - data.u_ref)[keep] ** 2
    if data.v_ref is not None:
        error = error + (state.v[selected] - data.v_ref)[keep] ** 2
    return float(np.sqrt(np.mean(error)))


def station_errors(state: FlowState, data: AssimilationData, stations: Sequence[float]) -> Dict[str, float]:
    return {
        f"{x:g}": velocity_error(state, data, cells)
        for x, cells in station_cells(state.mesh, stations)
    }


def _wall_frame(state: FlowState, case: CaseConfig) -> Optional[pd.DataFrame]:
    if state.mesh.dimensionality == 1:
        y_plus, u_plus, _ = wall_units(state)
        fluid = state.mesh.fluid
        return pd.DataFrame({"y+ [-]": y_plus[fluid], "u+ [-]": u_plus[fluid]})
    reference = case.reference_velocity or case.flow.inlet_velocity
    if not reference:
        return None
    centres, cf = skin_friction(state, reference)
    return pd.DataFrame({io.label("x"): centres[:, 0], io.label("y"): centres[:, 1], "cf [-]": cf})


def _log_law(state: FlowState) -> Optional[Dict[str, float]]:
    if state.mesh.dimensionality != 1 or state.model == TurbulenceModel.LAMINAR:
        return None
    y_plus, u_plus, u_tau = wall_units(state)
    try:
        kappa, intercept = fit_log_law(y_plus, u_plus)
    except InvalidArgumentError:
        return None
    return {"kappa": kappa, "B": intercept, "u_tau": u_tau}


def _cell_frame(mesh: Mesh, **columns: np.ndarray) -> pd.DataFrame:
    frame = pd.DataFrame({"cell": np.arange(mesh.n_cells), io.label("x"): mesh.centers[:, 0], io.label("y"): mesh.centers[:, 1]})
    for name, values in columns.items():
        frame[name] = values
    return frame


# solve


def _solve_hash(case: CaseConfig) -> str:
    return fingerprint("solve", case.mesh, case.flow, case.solver)


def _write_state(record: _StageRecord, state: FlowState, directory: Path, prefix: str = "state") -> Path:
    path = record.output(io.write_state_csv(state, directory / f"{prefix}.csv"))
    record.output(io.write_state_vtk(state, directory / f"{prefix}.vtk"))
    return path


def baseline_state(context: RunContext, case: CaseConfig) -> FlowState:
    """Converged uncorrected state of a case, reused when its artifacts are intact."""
    mesh = context.mesh(case)
    config_hash = _solve_hash(case)
    directory = context.path("cases", case.name, "baseline")
    if _reusable(context, "solve", case.name, config_hash):
        return io.read_state_csv(directory / "state.csv", mesh, case.flow, case.solver.model)

    with _stage(context, "solve", case.name, config_hash) as record:
        state = solve_rans(mesh, case.flow, 1.0, case.solver)
        _write_state(record, state, directory)
        record.output(io.write_history_csv(state.history, directory / "history.csv"))
        wall = _wall_frame(state, case)
        if wall is not None:
            record.output(io.write_frame(wall, directory / "wall.csv"))
        if mesh.dimensionality == 1 or case.stations:
            record.output(io.write_frame(profile_frame({"baseline": state}, case.stations), directory / "profiles.csv"))
        log_law = _log_law(state)
        if state.clip_events:
            record.warnings.append(f"{state.clip_events} turbulence clipping events")
        record.output(io.write_json({
            "case": case.name,
            "iterations": state.iterations,
            "residual_norms": state.residual_norms,
            "clip_events": state.clip_events,
            "log_law": log_law,
        }, directory / "summary.json"))
    return state


def cmd_solve(config: RunConfig, context: Optional[RunContext] = None) -> StageResult:
    """Baseline (beta_c = 1) solve of every case."""
    context = context or open_run(config)
    states = _map(context, lambda case: baseline_state(context, case), config.cases)
    artifacts = {
        case.name: str(context.path("cases", case.name, "baseline", "state.csv"))
        for case in config.cases
    }
    return StageResult.success("solve", data=dict(zip([c.name for c in config.cases], states)), artifacts=artifacts)


# reference data and inversion


def _check_reference_files(cases: Iterable[CaseConfig]) -> None:
    for case in cases:
        if case.reference is not None and not Path(case.reference.path).is_file():
            raise ArtifactIOError(f"Reference data for case {case.name} not found", path=case.reference.path)


def reference_data(context: RunContext, case: CaseConfig, baseline: FlowState) -> Tuple[AssimilationData, Optional[FlowState]]:
    """Assimilation data of a case and, for twin experiments, the full reference state."""
    mesh = context.mesh(case)
    box = case.inversion.assimilation_box
    if case.reference is not None:
        samples = io.read_frame(case.reference.path)
        if box is not None:
            x0, x1, y0, y1 = box
            samples = samples[samples["x"].between(x0, x1) & samples["y"].between(y0, y1)]
        return assimilation_from_samples(mesh, samples, source=case.reference.path), None
    if case.twin is None:
        raise InvalidArgumentError(f"Case {case.name} has no reference data")

    twin = case.twin
    config_hash = fingerprint("reference", case.mesh, case.flow, case.solver, twin)
    directory = context.path("cases", case.name, "reference")
    if _reusable(context, "reference", case.name, config_hash):
        reference = io.read_state_csv(directory / "state.csv", mesh, case.flow, case.solver.model)
    else:
        with _stage(context, "reference", case.name, config_hash) as record:
            beta_true = twin_beta(mesh, depth=twin.depth, center=twin.center, width=twin.width)
            reference = solve_rans(mesh, case.flow, beta_true, case.solver, initial=baseline)
            _write_state(record, reference, directory)
            record.output(io.write_frame(_cell_frame(mesh, beta_c=beta_true.beta), directory / "beta_true.csv"))
    mask = box_mask(mesh, box) if box is not None else None
    data = assimilation_from_state(reference, mask, source="twin", include_v=twin.include_v)
    return data, reference


def _inversion_hash(case: CaseConfig) -> str:
    return fingerprint("invert", case)


def inverted_case(context: RunContext, case: CaseConfig) -> Tuple[CorrectionField, FlowState]:
    mesh = context.mesh(case)
    config_hash = _inversion_hash(case)
    directory = context.path("cases", case.name, "inversion")
    if _reusable(context, "invert", case.name, config_hash):
        beta = io.strip_units(io.read_frame(directory / "beta.csv"))["beta_c"].to_numpy(dtype=float)
        state = io.read_state_csv(directory / "state.csv", mesh, case.flow, case.solver.model)
        return CorrectionField(beta=beta), state

    baseline = baseline_state(context, case)
    data, reference = reference_data(context, case, baseline)
    with _stage(context, "invert", case.name, config_hash) as record:
        active = box_mask(mesh, case.inversion.active_box) if case.inversion.active_box is not None else None
        problem = InversionProblem(
            mesh=mesh,
            bc=case.flow,
            data=data,
            settings=case.solver,
            regularization=case.inversion.regularization,
            active=active,
            optimizer=case.inversion.optimizer,
        )
        result = invert(problem, initial_state=baseline)

        record.output(io.write_frame(_cell_frame(mesh, beta_c=result.beta.beta), directory / "beta.csv"))
        _write_state(record, result.state, directory)
        record.output(io.write_vtk(mesh, {"beta_c": result.beta.beta}, directory / "beta.vtk"))
        record.output(io.write_frame(pd.DataFrame({
            "iteration": np.arange(len(result.objective_history)),
            "J [-]": result.objective_history,
            "grad_norm [-]": result.gradient_norm_history,
        }), directory / "history.csv"))

        uncorrected = velocity_error(baseline, data)
        corrected = velocity_error(result.state, data)
        summary = result.summary()
        summary.update({
            "case": case.name,
            "reduction_factor": result.initial_objective / result.final_objective if result.final_objective > 0 else float("inf"),
            "max_abs_beta_deviation": float(np.max(np.abs(result.beta.beta - 1.0))),
            "velocity_error_uncorrected": uncorrected,
            "velocity_error_corrected": corrected,
            "n_assimilated": data.n_assimilated,
        })
        record.output(io.write_json(summary, directory / "summary.json"))
        logger.info(
            f"[{context.run_id}] Inversion of {case.name}: J {result.initial_objective:.3e} -> {result.final_objective:.3e} ({result.reason.value})",
            extra={'run_id': context.run_id, 'case': case.name, 'reason': result.reason.value}
        )
    return result.beta, result.state


def cmd_invert(config: RunConfig, context: Optional[RunContext] = None) -> StageResult:
    """Field inversion of every training case."""
    cases = config.cases_with_role("training")
    if not cases:
        raise InvalidArgumentError("No training cases to invert")
    _check_reference_files(cases)
    context = context or open_run(config)
    results = _map(context, lambda case: inverted_case(context, case), cases)
    summaries = {
        case.name: io.read_json(context.path("cases", case.name, "inversion", "summary.json"))
        for case in cases
    }
    artifacts = {case.name: str(context.path("cases", case.name, "inversion", "beta.csv")) for case in cases}
    return StageResult.success(
        "invert",
        data={"results": dict(zip([c.name for c in cases], results)), "summaries": summaries},
        artifacts=artifacts,
    )


# features and training set


def _features_hash(config: RunConfig) -> str:
    return fingerprint("features", [case.model_dump(mode="json") for case in config.cases], config.features)


def _write_training_set(record: _StageRecord, training: TrainingSet, directory: Path) -> None:
    for source in training.sources:
        record.output(io.write_feature_csv(source.X, directory / f"{source.name}.csv", cells=source.cells, beta=source.Y))
    record.output(io.write_json({
        "band": [training.band.lower, training.band.upper],
        "sources": [{"name": s.name, "provenance": s.provenance, "rows": s.n_samples} for s in training.sources],
        "total": training.band.total,
        "retained": training.band.retained,
        "dropped": training.band.dropped,
    }, directory / "manifest.json"))


def _read_training_set(directory: Path) -> TrainingSet:
    summary = io.read_json(directory / "manifest.json")
    sources = []
    for entry in summary["sources"]:
        X, Y, cells = io.read_feature_csv(directory / f"{entry['name']}.csv")
        sources.append(TrainingSource(name=entry["name"], X=X, Y=Y, cells=cells, provenance=entry["provenance"]))
    lower, upper = summary["band"]
    band = BandFilterRecord(lower=lower, upper=upper, total=summary["total"],
                            retained=summary["retained"], dropped=summary["dropped"])
    return TrainingSet(sources=sources, band=band)


def training_set(context: RunContext) -> TrainingSet:
    config = context.config
    config_hash = _features_hash(config)
    directory = context.path("training_set")
    if _reusable(context, "features", None, config_hash):
        return _read_training_set(directory)

    training_cases = config.cases_with_role("training")
    if not training_cases:
        raise InvalidArgumentError("No training cases configured")
    _check_reference_files(training_cases)
    inverted = _map(context, lambda case: inverted_case(context, case), training_cases)
    baselines = _map(context, lambda case: baseline_state(context, case), config.cases_with_role("test"))

    with _stage(context, "features", None, config_hash) as record:
        record.output(io.write_feature_index(context.path("features", "feature_index.csv")))
        cases = []
        for case, (beta, state) in zip(training_cases, inverted):
            features = compute_features(state, squash=config.features.squash)
            fluid = np.flatnonzero(state.mesh.fluid)
            record.output(io.write_feature_csv(
                features[fluid], context.path("features", f"{case.name}.csv"), cells=fluid, beta=beta.beta[fluid]
            ))
            cases.append((state, beta, case.name))
        for case, state in zip(config.cases_with_role("test"), baselines):
            features = compute_features(state, squash=config.features.squash)
            fluid = np.flatnonzero(state.mesh.fluid)
            record.output(io.write_feature_csv(features[fluid], context.path("features", f"{case.name}.csv"), cells=fluid))

        training = assemble_training_set(cases, band=config.features.band, squash=config.features.squash)
        for source in training.sources:
            source.provenance = f"inversion of {source.name} ({_inversion_hash(config.case(source.name))[:12]})"
        for name in training.band.dropped:
            record.warnings.append(f"source {name} dropped by the band filter")
        _write_training_set(record, training, directory)
    return training


def cmd_features(config: RunConfig, context: Optional[RunContext] = None) -> StageResult:
    """Feature matrices of every case and the band-filtered training set."""
    context = context or open_run(config)
    training = training_set(context)
    result = StageResult.success(
        "features",
        data=training,
        artifacts={"training_set": str(context.path("training_set", "manifest.json"))},
    )
    for name in training.band.dropped:
        result.add_warning(f"source {name} dropped by the band filter")
    return result


# training


def _train_hash(config: RunConfig) -> str:
    options = config.gpe_options() if config.model.kind == "gpe" else config.de_options()
    return fingerprint("train", _features_hash(config), config.model.kind, options)


def _archive_path(context: RunContext) -> Path:
    suffix = ".npz" if context.config.model.kind == "gpe" else ".pt"
    return context.path("model", f"ensemble{suffix}")


def _training_report(model: EnsembleModel, training: TrainingSet) -> Dict[str, Any]:
    report: Dict[str, Any] = {
        "kind": model.kind,
        "weighting": model.weighting,
        "feature_width": model.width,
        "band": [training.band.lower, training.band.upper],
        "total": training.band.total,
        "retained": training.band.retained,
        "dropped": training.band.dropped,
    }
    if isinstance(model, GpeEnsemble):
        report["submodels"] = [
            {
                "name": sub.name,
                "n_train": sub.n_train,
                "mode": sub.mode,
                "lengthscales": sub.lengthscales,
                "signal_variance": sub.signal_variance,
                "noise_variance": sub.noise_variance,
                "prior_mean": sub.prior_mean,
                "jitter": sub.jitter,
            }
            for sub in model.models
        ]
        report["sigma_bar_upper_bound"] = prior_sigma_asymptote(model)
    else:
        report["members"] = len(model.members)
        report["options"] = model.options.model_dump()
    return report


def trained_model(context: RunContext) -> EnsembleModel:
    config = context.config
    config_hash = _train_hash(config)
    archive = _archive_path(context)
    if _reusable(context, "train", None, config_hash):
        return load_model(archive)

    training = training_set(context)
    if training.n_sources == 0:
        raise TrainingError("Every training source was removed by the band filter")

    with _stage(context, "train", None, config_hash) as record:
        record.inputs.append(context.path("training_set", "manifest.json"))
        if config.model.kind == "gpe":
            model: EnsembleModel = train_gpe_ensemble(training, config.gpe_options(), workers=config.threads)
        else:
            model = train_deep_ensemble(training.X, training.Y, config.de_options())
        record.output(save_model(model, archive))

        prediction = ensemble_predict(model, training.X)
        report = _training_report(model, training)
        errors = np.abs(prediction.mean - training.Y)
        if errors.size >= 2:
            bins = error_uncertainty_bins(errors, prediction.sigma)
            report["error_uncertainty_spearman"] = bins.spearman
            record.output(io.write_frame(pd.DataFrame({
                "sigma [-]": bins.sigma_centers,
                "mean_abs_error [-]": bins.mean_error,
                "count": bins.counts,
            }), context.path("model", "error_uncertainty.csv")))
        record.output(io.write_json(report, context.path("model", "training_report.json")))
        for name in training.band.dropped:
            record.warnings.append(f"source {name} dropped by the band filter")
    return model


def cmd_train(config: RunConfig, context: Optional[RunContext] = None) -> StageResult:
    """Train the configured ensemble on the assembled training set and persist it."""
    context = context or open_run(config)
    model = trained_model(context)
    report = io.read_json(context.path("model", "training_report.json"))
    result = StageResult.success(
        "train",
        data={"model": model, "report": report},
        artifacts={"model": str(_archive_path(context)), "report": str(context.path("model", "training_report.json"))},
    )
    for name in report.get("dropped", []):
        result.add_warning(f"source {name} dropped by the band filter")
    return result


# prediction and correction


def corrected_solve(case: CaseConfig, mesh: Mesh, baseline: FlowState, beta: CorrectionField) -> Tuple[FlowState, str]:
    """Re-solve with a frozen beta_c, warm-started from the uncorrected state.

    Returns the uncorrected state when nothing is accepted or the re-solve fails.
    """
    if np.all(beta.beta == 1.0):
        return baseline.copy(), "unchanged"
    try:
        return solve_rans(mesh, case.flow, beta, case.solver, initial=baseline), "corrected"
    except SolverError as e:
        logger.warning(
            f"Corrected solve of {case.name} failed, keeping the uncorrected state: {e}",
            extra={'case': case.name, 'error': str(e)}
        )
        return baseline.copy(), "diverged"


def _novelty(context: RunContext):
    training = training_set(context)
    X = training.X
    n_neighbors = min(context.config.model.lof_neighbors, X.shape[0] - 1)
    return fit_lof(X, n_neighbors)


def _test_cases(config: RunConfig) -> List[CaseConfig]:
    cases = config.cases_with_role("test")
    if not cases:
        raise InvalidArgumentError("No test cases configured")
    return cases


def cmd_predict_correct(
    config: RunConfig,
    context: Optional[RunContext] = None,
    sigma_bar: Optional[float] = None
) -> StageResult:
    """Gated one-time correction of every test case."""
    sigma_bar = config.model.resolved_sigma_bar() if sigma_bar is None else sigma_bar
    if not np.isfinite(sigma_bar) or sigma_bar < 0:
        raise InvalidArgumentError(f"sigma_bar must be finite and >= 0, got {sigma_bar}")
    cases = _test_cases(config)
    _check_reference_files(cases)
    context = context or open_run(config)
    model = trained_model(context)
    lof = _novelty(context)
    result = StageResult.success("predict-correct", data={})

    for case in cases:
        mesh = context.mesh(case)
        baseline = baseline_state(context, case)
        directory = context.path("cases", case.name, "predict")
        with _stage(context, "predict-correct", case.name, fingerprint("predict", _train_hash(config), case, sigma_bar)) as record:
            features = compute_features(baseline, squash=config.features.squash)
            beta, prediction = predict_field(model, features, sigma_bar, fluid=mesh.fluid)
            novelty = np.zeros(mesh.n_cells)
            novelty[mesh.fluid] = score_lof(lof, features[mesh.fluid])

            corrected, status = corrected_solve(case, mesh, baseline, beta)
            if status == "diverged":
                record.warnings.append("corrected solve diverged; the uncorrected state was kept")
                result.add_warning(f"{case.name}: corrected solve diverged")

            maps = {
                "mean": prediction.mean,
                "sigma": prediction.sigma,
                "sigma_mu": prediction.sigma_mu,
                "sigma_sigma": prediction.sigma_sigma,
                "accepted": prediction.accepted.astype(float),
                "beta_c": beta.beta,
                "lof": novelty,
            }
            record.output(io.write_frame(_cell_frame(mesh, beta_c=beta.beta), directory / "beta.csv"))
            record.output(io.write_frame(_cell_frame(mesh, **maps), directory / "uncertainty.csv"))
            record.output(io.write_vtk(mesh, maps, directory / "uncertainty.vtk"))
            _write_state(record, corrected, directory, prefix="corrected_state")

            states = {"uncorrected": baseline, "corrected": corrected}
            summary: Dict[str, Any] = {
                "case": case.name,
                "sigma_bar": sigma_bar,
                "status": status,
                "accepted_cells": int(np.count_nonzero(prediction.accepted)),
                "fluid_cells": mesh.n_fluid,
                "mean_lof": float(np.mean(novelty[mesh.fluid])),
            }
            if case.has_reference:
                data, reference = reference_data(context, case, baseline)
                if reference is not None:
                    states["reference"] = reference
                summary["velocity_error_uncorrected"] = velocity_error(baseline, data)
                summary["velocity_error_corrected"] = velocity_error(corrected, data)
                summary["station_errors_uncorrected"] = station_errors(baseline, data, case.stations)
                summary["station_errors_corrected"] = station_errors(corrected, data, case.stations)
            if mesh.dimensionality == 1 or case.stations:
                record.output(io.write_frame(profile_frame(states, case.stations), directory / "profiles.csv"))
            record.output(io.write_json(summary, directory / "summary.json"))

        result.data[case.name] = {"beta": beta, "prediction": prediction, "lof": novelty, "state": corrected, "summary": summary}
        result.add_artifact(case.name, str(directory / "summary.json"))
    return result


def _sweep_values(values: Sequence[float]) -> Tuple[List[float], Optional[str]]:
    values = [float(v) for v in values]
    if not values:
        raise InvalidArgumentError("The sigma_bar list is empty")
    for value in values:
        if not np.isfinite(value) or value < 0:
            raise InvalidArgumentError(f"sigma_bar values must be finite and >= 0, got {value}")
    unique = sorted(set(values))
    warning = None
    if len(unique) < len(values):
        warning = f"removed {len(values) - len(unique)} duplicate sigma_bar value(s)"
        logger.warning(warning.capitalize(), extra={'sigma_bar': unique})
    return unique, warning


def cmd_sweep_sigma(
    config: RunConfig,
    sigma_bars: Optional[Sequence[float]] = None,
    context: Optional[RunContext] = None
) -> StageResult:
    """Corrected runs of every test case over a list of acceptance tolerances."""
    values, warning = _sweep_values(config.model.sweep if sigma_bars is None else sigma_bars)
    cases = _test_cases(config)
    _check_reference_files(cases)
    context = context or open_run(config)
    model = trained_model(context)
    result = StageResult.success("sweep-sigma", data={})
    if warning:
        result.add_warning(warning)

    for case in cases:
        mesh = context.mesh(case)
        baseline = baseline_state(context, case)
        data = reference_data(context, case, baseline)[0] if case.has_reference else None
        directory = context.path("sweep", case.name)
        with _stage(context, "sweep-sigma", case.name, fingerprint("sweep", _train_hash(config), case, values)) as record:
            if warning:
                record.warnings.append(warning)
            features = compute_features(baseline, squash=config.features.squash)
            prediction = ensemble_predict(model, features)

            def run(sigma_bar: float) -> Dict[str, Any]:
                gated = replace(prediction)
                beta = apply_acceptance(gated, sigma_bar)
                beta[~mesh.fluid] = 1.0
                accepted = gated.accepted & mesh.fluid
                state, status = corrected_solve(case, mesh, baseline, CorrectionField(beta=beta))
                return {
                    "sigma_bar": sigma_bar,
                    "active_cells": int(np.count_nonzero(accepted)),
                    "status": status,
                    "velocity_error": velocity_error(state, data) if data is not None else float("nan"),
                    "state": state,
                }

            points = _map(context, run, values)
            counts = [point["active_cells"] for point in points]
            if any(b < a for a, b in zip(counts, counts[1:])):
                record.warnings.append("active-cell count decreased with sigma_bar")
            for point in points:
                if point["status"] == "diverged":
                    record.warnings.append(f"sigma_bar={point['sigma_bar']:g}: corrected solve diverged")
                    result.add_warning(f"{case.name} sigma_bar={point['sigma_bar']:g}: corrected solve diverged")

            table = pd.DataFrame([{k: v for k, v in point.items() if k != "state"} for point in points])
            record.output(io.write_frame(table.rename(columns={"velocity_error": "velocity_error [m/s]"}), directory / "sweep.csv"))
            if mesh.dimensionality == 1 or case.stations:
                family = profile_frame({f"sigma_bar={p['sigma_bar']:g}": p["state"] for p in points}, case.stations)
                record.output(io.write_frame(family, directory / "profiles.csv"))

        result.data[case.name] = table
        result.add_artifact(case.name, str(directory / "sweep.csv"))
    return result


# verification


def cmd_verify(config: Optional[RunConfig] = None, context: Optional[RunContext] = None) -> StageResult:
    """Run the oracle suites; the stage fails if any check fails."""
    from ..verify import run_suites

    seed = config.seed if config is not None else 0
    report = run_suites(seed=seed)
    failed = [check.name for check in report if not check.passed]
    if config is not None:
        context = context or open_run(config)
        with _stage(context, "verify", None, fingerprint("verify", seed)) as record:
            record.output(io.write_json([check.as_dict() for check in report], context.path("verify_report.json")))
            record.warnings.extend(f"{name} failed" for name in failed)
    if failed:
        return StageResult.failure("verify", data=report, warnings=[f"{name} failed" for name in failed])
    return StageResult.success("verify", data=report)
