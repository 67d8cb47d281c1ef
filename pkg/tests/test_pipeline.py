"""
Unit tests for workflow stages and the run manifest.
"""
import pytest
import numpy as np

import sys
import os
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from betac_toolkit import io
from betac_toolkit.config import RunConfig
from betac_toolkit.errors import ArtifactIOError, InvalidArgumentError, SolverDivergenceError
from betac_toolkit.models.flow import CorrectionField
from betac_toolkit.models.manifest import ManifestEntry, RunManifest
from betac_toolkit.ops import pipeline
from betac_toolkit.ops.ensemble import GpeEnsemble, predict_field
from betac_toolkit.ops.features import compute_features
from betac_toolkit.ops.gpe import build_gpe
from betac_toolkit.verify import OracleCheck


def laminar_case(name, role="test", **extra):
    data = {
        "name": name,
        "role": role,
        "mesh": {"kind": "channel_1d", "n_cells": 16},
        "flow": {"nu": 0.01, "forcing": 1.0},
        "solver": {"model": "laminar", "tolerance": 1e-10},
    }
    data.update(extra)
    return data


@pytest.fixture
def config(tmp_path):
    return RunConfig.from_dict({
        "cases": [laminar_case("narrow"), laminar_case("wide", mesh={"kind": "channel_1d", "n_cells": 24})],
        "output_dir": str(tmp_path / "run"),
    })


def stage_entries(context, stage):
    return [entry for entry in context.manifest.entries() if entry.stage == stage]


class TestSolveStage:

    def test_writes_artifacts(self, config):
        context = pipeline.open_run(config, "run-1")
        result = pipeline.cmd_solve(config, context)

        assert result.ok
        assert set(result.data) == {"narrow", "wide"}
        directory = context.path("cases", "narrow", "baseline")
        for name in ("state.csv", "state.vtk", "history.csv", "wall.csv", "profiles.csv", "summary.json"):
            assert (directory / name).is_file()
        assert context.path(pipeline.RESOLVED_CONFIG).is_file()

    def test_manifest_records_each_case(self, config):
        context = pipeline.open_run(config, "run-1")
        pipeline.cmd_solve(config, context)

        entries = stage_entries(context, "solve")
        assert sorted(entry.case for entry in entries) == ["narrow", "wide"]
        for entry in entries:
            assert entry.status == "ok"
            assert entry.run_id == "run-1"
            assert "cases/%s/baseline/state.csv" % entry.case in entry.outputs
            assert entry.versions["betac-toolkit"]

    def test_intact_outputs_are_reused(self, config):
        first = pipeline.cmd_solve(config, pipeline.open_run(config))
        context = pipeline.open_run(config)
        second = pipeline.cmd_solve(config, context)

        assert len(stage_entries(context, "solve")) == 2
        assert np.allclose(first.data["narrow"].u, second.data["narrow"].u)

    def test_changed_outputs_are_recomputed(self, config):
        context = pipeline.open_run(config)
        pipeline.cmd_solve(config, context)
        io.write_json({"tampered": True}, context.path("cases", "wide", "baseline", "summary.json"))

        pipeline.cmd_solve(config, pipeline.open_run(config))

        cases = [entry.case for entry in stage_entries(context, "solve")]
        assert cases.count("wide") == 2
        assert cases.count("narrow") == 1

    def test_failure_is_recorded(self, config, mocker):
        mocker.patch("betac_toolkit.ops.pipeline.solve_rans", side_effect=SolverDivergenceError("stalled"))
        context = pipeline.open_run(config)

        with pytest.raises(SolverDivergenceError):
            pipeline.cmd_solve(config, context)

        entries = stage_entries(context, "solve")
        assert entries
        assert all(entry.status == "failed" for entry in entries)
        assert "stalled" in entries[0].error


class TestCorrectedSolve:

    def test_identity_correction_skips_the_solve(self, config, mocker):
        context = pipeline.open_run(config)
        case = config.case("narrow")
        baseline = pipeline.baseline_state(context, case)
        solve = mocker.patch("betac_toolkit.ops.pipeline.solve_rans")

        state, status = pipeline.corrected_solve(case, context.mesh(case), baseline, CorrectionField(beta=np.ones(16)))

        assert status == "unchanged"
        assert np.array_equal(state.u, baseline.u)
        solve.assert_not_called()

    def test_divergence_keeps_uncorrected_state(self, config, mocker):
        context = pipeline.open_run(config)
        case = config.case("narrow")
        baseline = pipeline.baseline_state(context, case)
        mocker.patch("betac_toolkit.ops.pipeline.solve_rans", side_effect=SolverDivergenceError())

        state, status = pipeline.corrected_solve(
            case, context.mesh(case), baseline, CorrectionField(beta=np.full(16, 0.8))
        )

        assert status == "diverged"
        assert np.array_equal(state.u, baseline.u)

    def test_out_of_distribution_cells_keep_the_baseline(self, config, mocker):
        context = pipeline.open_run(config)
        case = config.case("narrow")
        baseline = pipeline.baseline_state(context, case)
        X = np.full((4, 52), 50.0) + np.arange(4)[:, None]
        model = GpeEnsemble(models=[
            build_gpe(X, np.full(4, 0.7), 1.0, 0.04, 1e-4, name="low"),
            build_gpe(X, np.full(4, 0.8), 1.0, 0.04, 1e-4, name="high"),
        ])
        solve = mocker.patch("betac_toolkit.ops.pipeline.solve_rans")

        beta, prediction = predict_field(model, compute_features(baseline), 0.1)
        state, status = pipeline.corrected_solve(case, context.mesh(case), baseline, beta)

        assert not np.any(prediction.accepted)
        assert np.all(beta.beta == 1.0)
        assert status == "unchanged"
        for name in ("u", "v", "p", "k", "omega", "nu_t"):
            assert np.array_equal(getattr(state, name), getattr(baseline, name))
        solve.assert_not_called()


class TestStageArguments:

    def test_sweep_values_sorted_and_deduplicated(self):
        values, warning = pipeline._sweep_values([0.2, 0.05, 0.2, 0.1])

        assert values == [0.05, 0.1, 0.2]
        assert "1 duplicate" in warning

    def test_sweep_values_without_duplicates(self):
        assert pipeline._sweep_values([0.1, 0.3]) == ([0.1, 0.3], None)

    @pytest.mark.parametrize("values", [[], [0.1, -0.2], [np.inf]])
    def test_invalid_sweep_values(self, values):
        with pytest.raises(InvalidArgumentError):
            pipeline._sweep_values(values)

    def test_invert_needs_training_cases(self, config):
        with pytest.raises(InvalidArgumentError):
            pipeline.cmd_invert(config)

    def test_predict_needs_test_cases(self, tmp_path):
        config = RunConfig.from_dict({
            "cases": [laminar_case("train", role="training", twin={})],
            "output_dir": str(tmp_path / "run"),
        })
        with pytest.raises(InvalidArgumentError):
            pipeline.cmd_predict_correct(config)

    def test_negative_tolerance(self, config):
        with pytest.raises(InvalidArgumentError):
            pipeline.cmd_predict_correct(config, sigma_bar=-0.1)

    def test_missing_reference_file(self, tmp_path):
        config = RunConfig.from_dict({
            "cases": [laminar_case("train", role="training", reference={"path": str(tmp_path / "absent.csv")})],
            "output_dir": str(tmp_path / "run"),
        })
        with pytest.raises(ArtifactIOError) as exc_info:
            pipeline.cmd_invert(config)
        assert exc_info.value.exit_code == 5


class TestVerify:

    def test_failed_check_fails_the_stage(self, config, mocker):
        mocker.patch("betac_toolkit.verify.run_suites", return_value=[
            OracleCheck("poiseuille", True),
            OracleCheck("adjoint", False, {"relative_error": 0.1}),
        ])
        context = pipeline.open_run(config)

        result = pipeline.cmd_verify(config, context)

        assert not result.ok
        assert result.warnings == ["adjoint failed"]
        report = io.read_json(context.path("verify_report.json"))
        assert [row["name"] for row in report] == ["poiseuille", "adjoint"]
        assert stage_entries(context, "verify")[0].warnings == ["adjoint failed"]

    def test_without_config(self, mocker):
        mocker.patch("betac_toolkit.verify.run_suites", return_value=[OracleCheck("lof", True)])

        result = pipeline.cmd_verify()

        assert result.ok
        assert result.data[0].name == "lof"


class TestHelpers:

    def test_one_profile_per_channel(self, config):
        mesh = config.case("narrow").mesh.build()
        stations = pipeline.station_cells(mesh, [0.1, 0.5])

        assert len(stations) == 1
        assert len(stations[0][1]) == 16

    def test_profile_frame(self, config):
        context = pipeline.open_run(config)
        state = pipeline.baseline_state(context, config.case("narrow"))

        frame = pipeline.profile_frame({"baseline": state}, [])

        assert len(frame) == 16
        assert set(frame["variant"]) == {"baseline"}


@pytest.mark.slow
class TestWorkflow:

    @pytest.fixture(scope="class")
    def workflow(self, tmp_path_factory):
        def sst_case(name, role, n_cells, nu, center):
            return {
                "name": name,
                "role": role,
                "mesh": {"kind": "channel_1d", "n_cells": n_cells, "stretch_ratio": 1.15},
                "flow": {"nu": nu, "forcing": 1.0},
                "solver": {"model": "sst", "tolerance": 1e-9, "max_iterations": 400},
                "twin": {"depth": 0.5, "center": center, "width": 0.2},
                "inversion": {"optimizer": {"max_iterations": 6, "initial_step": 0.1}},
            }

        config = RunConfig.from_dict({
            "cases": [
                sst_case("re180", "training", 32, 1.0 / 180.0, 0.5),
                sst_case("re250", "training", 32, 1.0 / 250.0, 0.4),
                sst_case("re210", "test", 32, 1.0 / 210.0, 0.45),
            ],
            "features": {"band": [0.999, 1.001]},
            "model": {"kind": "gpe", "sigma_bar": 0.2, "sweep": [0.2, 0.0, 0.1], "gpe": {"restarts": 1}},
            "output_dir": str(tmp_path_factory.mktemp("workflow")),
        })
        context = pipeline.open_run(config, "workflow")
        return config, context, pipeline.cmd_train(config, context)

    def test_train_persists_model(self, workflow):
        config, context, trained = workflow

        assert trained.ok
        assert trained.data["model"].kind == "gpe"
        assert context.path("model", "ensemble.npz").is_file()
        report = trained.data["report"]
        assert report["feature_width"] == 52
        assert report["sigma_bar_upper_bound"] > 0

    def test_train_is_reused(self, workflow):
        config, context, _ = workflow
        before = len(stage_entries(context, "train"))

        pipeline.cmd_train(config, pipeline.open_run(config))

        assert len(stage_entries(context, "train")) == before

    def test_predict_correct(self, workflow):
        config, context, _ = workflow

        result = pipeline.cmd_predict_correct(config, context)

        summary = result.data["re210"]["summary"]
        assert summary["status"] in ("unchanged", "corrected", "diverged")
        assert 0 <= summary["accepted_cells"] <= summary["fluid_cells"]
        assert np.isfinite(summary["velocity_error_uncorrected"])
        frame = io.read_frame(context.path("cases", "re210", "predict", "uncertainty.csv"))
        assert {"mean", "sigma", "sigma_mu", "sigma_sigma", "accepted", "beta_c", "lof"} <= set(frame.columns)
        assert np.all(frame.loc[frame["accepted"] == 0.0, "beta_c"] == 1.0)

    def test_sweep_is_monotone(self, workflow):
        config, context, _ = workflow

        result = pipeline.cmd_sweep_sigma(config, context=context)

        table = result.data["re210"]
        assert list(table["sigma_bar"]) == [0.0, 0.1, 0.2]
        assert table["active_cells"].iloc[0] == 0
        assert list(table["active_cells"]) == sorted(table["active_cells"])


@pytest.mark.slow
class TestTwinWorkflow:

    @pytest.fixture(scope="class")
    def twin_run(self, tmp_path_factory):
        def twin_case(name, role):
            return {
                "name": name,
                "role": role,
                "mesh": {"kind": "channel_1d", "n_cells": 32, "stretch_ratio": 1.15},
                "flow": {"nu": 1.0 / 180.0, "forcing": 1.0},
                "solver": {"model": "sst", "tolerance": 1e-9, "max_iterations": 400},
                "twin": {"depth": 0.5, "center": 0.5, "width": 0.2},
                "inversion": {"optimizer": {"max_iterations": 100, "target_reduction": 0.1}},
            }

        config = RunConfig.from_dict({
            "cases": [twin_case("seen", "training"), twin_case("repeat", "test")],
            "model": {"kind": "gpe", "sigma_bar": 10.0, "gpe": {"restarts": 1}},
            "output_dir": str(tmp_path_factory.mktemp("twin")),
        })
        context = pipeline.open_run(config, "twin")
        return config, context

    def test_inversion_reduces_objective_tenfold(self, twin_run):
        config, context = twin_run

        result = pipeline.cmd_invert(config, context)

        assert result.data["summaries"]["seen"]["reduction_factor"] >= 10.0

    def test_corrected_profiles_beat_uncorrected(self, twin_run):
        config, context = twin_run

        result = pipeline.cmd_predict_correct(config, context)

        summary = result.data["repeat"]["summary"]
        assert summary["status"] == "corrected"
        corrected = summary["station_errors_corrected"]
        uncorrected = summary["station_errors_uncorrected"]
        assert corrected.keys() == uncorrected.keys()
        for station in corrected:
            assert corrected[station] < uncorrected[station]


class TestRunManifest:

    def entry(self, stage, case=None, config_hash="h", status="ok", outputs=None):
        return ManifestEntry(
            run_id="r", stage=stage, case=case, status=status,
            started_at="2024-01-01T00:00:00+00:00", config_hash=config_hash, outputs=outputs or {},
        )

    def test_latest_matching_entry(self, tmp_path):
        manifest = RunManifest(path=tmp_path / "manifest.jsonl", run_id="r")
        manifest.append(self.entry("solve", "a", "old"))
        manifest.append(self.entry("solve", "a", "new"))
        manifest.append(self.entry("solve", "a", "new", status="failed"))

        assert manifest.latest("solve", "a").config_hash == "new"
        assert manifest.latest("solve", "a", "old").config_hash == "old"
        assert manifest.latest("solve", "b") is None
        assert manifest.latest("train") is None

    def test_emitted_files(self, tmp_path):
        manifest = RunManifest(path=tmp_path / "manifest.jsonl", run_id="r")
        manifest.append(self.entry("solve", "a", outputs={"a.csv": "1"}))
        manifest.append(self.entry("solve", "b", outputs={"b.csv": "2", "a.csv": "3"}))

        assert manifest.emitted_files() == ["a.csv", "b.csv"]

    def test_missing_manifest_is_empty(self, tmp_path):
        assert RunManifest(path=tmp_path / "none.jsonl", run_id="r").entries() == []

    def test_corrupt_manifest(self, tmp_path):
        path = tmp_path / "manifest.jsonl"
        path.write_text("{not json\n")
        with pytest.raises(ArtifactIOError):
            RunManifest(path=path, run_id="r").entries()


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
