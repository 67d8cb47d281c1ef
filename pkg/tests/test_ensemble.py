"""
Unit tests for ensemble mixture moments, acceptance gating and archives.
"""
import pytest
import numpy as np

import sys
import os
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from betac_toolkit.errors import ArtifactIOError, InvalidArgumentError, TrainingError
from betac_toolkit.models.ensemble import GpeTrainingOptions
from betac_toolkit.models.features import BandFilterRecord, TrainingSet, TrainingSource
from betac_toolkit.ops.ensemble import (
    BETA_FLOOR,
    GpeEnsemble,
    apply_acceptance,
    ensemble_predict,
    error_uncertainty_bins,
    load_model,
    mixture_moments,
    predict_field,
    prior_sigma_asymptote,
    save_model,
    train_gpe_ensemble,
)
from betac_toolkit.ops.gpe import build_gpe


@pytest.fixture
def grid():
    rng = np.random.default_rng(0)
    return rng.uniform(-1.0, 1.0, size=(30, 2))


@pytest.fixture
def conflicting(grid):
    low = build_gpe(grid, np.full(30, 0.5), 0.5, 1.0, 1e-4, name="low")
    high = build_gpe(grid, np.full(30, 1.5), 0.5, 1.0, 1e-4, name="high")
    return GpeEnsemble(models=[low, high])


class TestMixtureMoments:

    def test_uniform_weights(self):
        prediction = mixture_moments(np.array([[0.8, 1.2]]), np.array([[0.1, 0.1]]), "uniform")
        assert prediction.mean[0] == pytest.approx(1.0)
        assert prediction.variance_mu[0] == pytest.approx(0.04)
        assert prediction.variance_sigma[0] == pytest.approx(0.01)
        assert prediction.sigma[0] == pytest.approx(np.sqrt(0.05))

    def test_inverse_variance_weights(self):
        prediction = mixture_moments(np.array([[1.0, 2.0]]), np.array([[0.1, 0.2]]))
        assert np.allclose(prediction.weights, [[0.8, 0.2]])
        assert prediction.mean[0] == pytest.approx(1.2)

    def test_matches_monte_carlo(self):
        rng = np.random.default_rng(7)
        means = np.array([[0.6, 1.0, 1.3]])
        stds = np.array([[0.05, 0.2, 0.1]])
        prediction = mixture_moments(means, stds)
        component = rng.choice(3, size=400_000, p=prediction.weights[0])
        draws = rng.normal(means[0, component], stds[0, component])
        assert draws.mean() == pytest.approx(prediction.mean[0], abs=2e-3)
        assert draws.var() == pytest.approx(prediction.variance[0], rel=2e-2)

    def test_zero_std_is_floored(self):
        prediction = mixture_moments(np.array([[1.0, 1.0]]), np.zeros((1, 2)))
        assert np.all(np.isfinite(prediction.weights))
        assert np.all(prediction.sigma > 0)

    def test_shape_mismatch(self):
        with pytest.raises(InvalidArgumentError):
            mixture_moments(np.ones((2, 2)), np.ones((2, 3)))

    def test_unknown_weighting(self):
        with pytest.raises(InvalidArgumentError):
            mixture_moments(np.ones((1, 2)), np.ones((1, 2)), "median")


class TestAcceptance:

    def test_boundary_is_accepted(self):
        prediction = mixture_moments(np.array([[0.6, 0.6]]), np.array([[0.25, 0.25]]))
        beta = apply_acceptance(prediction, 0.25)
        assert prediction.accepted[0]
        assert beta[0] == pytest.approx(0.6)

    def test_rejected_cells_revert_to_one(self):
        prediction = mixture_moments(np.array([[0.6, 0.6], [0.7, 0.7]]), np.array([[0.1, 0.1], [0.5, 0.5]]))
        beta = apply_acceptance(prediction, 0.2)
        assert list(prediction.accepted) == [True, False]
        assert np.allclose(beta, [0.6, 1.0])

    def test_zero_tolerance_rejects_everything(self):
        prediction = mixture_moments(np.array([[0.6, 0.6]]), np.zeros((1, 2)))
        assert np.all(apply_acceptance(prediction, 0.0) == 1.0)

    def test_accepted_set_grows_with_tolerance(self):
        rng = np.random.default_rng(1)
        prediction = mixture_moments(rng.normal(1.0, 0.2, (200, 3)), rng.uniform(0.01, 0.4, (200, 3)))
        counts = []
        for sigma_bar in (0.05, 0.1, 0.15, 0.2, 0.25):
            apply_acceptance(prediction, sigma_bar)
            counts.append(int(prediction.accepted.sum()))
        assert counts == sorted(counts)

    def test_accepted_values_are_floored(self):
        prediction = mixture_moments(np.array([[-0.5, -0.5]]), np.array([[0.01, 0.01]]))
        assert apply_acceptance(prediction, 0.1)[0] == BETA_FLOOR

    @pytest.mark.parametrize("sigma_bar", [-0.1, np.nan])
    def test_invalid_tolerance(self, sigma_bar):
        prediction = mixture_moments(np.ones((1, 2)), np.ones((1, 2)))
        with pytest.raises(InvalidArgumentError):
            apply_acceptance(prediction, sigma_bar)


class TestGpeEnsemble:

    def test_conflicting_sources_raise_model_uncertainty(self, conflicting, grid):
        prediction = ensemble_predict(conflicting, grid)
        assert np.all(prediction.sigma_mu >= 0.4)
        assert np.allclose(prediction.mean, 1.0, atol=1e-3)

    def test_conflict_is_never_accepted(self, conflicting, grid):
        beta, prediction = predict_field(conflicting, grid, 0.2)
        assert np.all(beta.beta == 1.0)
        assert not prediction.accepted.any()

    def test_far_queries_revert_to_one(self, grid):
        model = build_gpe(grid, np.full(30, 0.5), 0.5, 0.09, 1e-4, name="dip")
        ensemble = GpeEnsemble(models=[model, model])
        far = np.full((3, 2), 50.0)
        beta, prediction = predict_field(ensemble, far, 0.2)
        assert np.allclose(prediction.sigma, 0.3)
        assert np.all(beta.beta == 1.0)

    def test_fluid_mask(self, grid):
        model = build_gpe(grid, np.full(30, 0.5), 0.5, 1.0, 1e-4)
        ensemble = GpeEnsemble(models=[model])
        fluid = np.ones(30, dtype=bool)
        fluid[:4] = False
        beta, prediction = predict_field(ensemble, grid, 0.2, fluid=fluid)
        assert np.all(beta.beta[:4] == 1.0)
        assert not prediction.accepted[:4].any()
        assert np.allclose(beta.beta[4:], 0.5, atol=1e-3)

    def test_width_mismatch(self, conflicting):
        with pytest.raises(InvalidArgumentError):
            ensemble_predict(conflicting, np.zeros((2, 3)))

    def test_prior_sigma_asymptote(self, grid):
        a = build_gpe(grid, np.zeros(30), 0.5, 1.0, 1e-4)
        b = build_gpe(grid, np.zeros(30), 0.5, 4.0, 1e-4)
        assert prior_sigma_asymptote(GpeEnsemble(models=[a, b])) == pytest.approx(np.sqrt(1.6))

    def test_empty_ensemble(self):
        with pytest.raises(InvalidArgumentError):
            GpeEnsemble(models=[])


class TestTraining:

    @pytest.fixture
    def training(self, grid):
        sources = [
            TrainingSource(name="a", X=grid, Y=0.8 + 0.1 * grid[:, 0]),
            TrainingSource(name="b", X=grid + 0.1, Y=0.6 + 0.2 * grid[:, 1]),
        ]
        return TrainingSet(sources=sources, band=BandFilterRecord(lower=0.9, upper=1.1))

    def test_one_model_per_source(self, training):
        ensemble = train_gpe_ensemble(training, GpeTrainingOptions(restarts=1), workers=2)
        assert ensemble.names == ["a", "b"]

    def test_training_is_reproducible(self, training):
        opts = GpeTrainingOptions(restarts=2, seed=3)
        first = train_gpe_ensemble(training, opts)
        second = train_gpe_ensemble(training, opts, workers=2)
        for m1, m2 in zip(first.models, second.models):
            assert np.array_equal(m1.lengthscales, m2.lengthscales)
            assert np.array_equal(m1.alpha, m2.alpha)

    def test_no_sources(self):
        with pytest.raises(TrainingError) as exc_info:
            train_gpe_ensemble(TrainingSet(sources=[], band=BandFilterRecord(lower=0.9, upper=1.1)))
        assert exc_info.value.exit_code == 4


class TestDiagnostics:

    def test_monotone_bins(self):
        sigma = np.linspace(0.01, 1.0, 100)
        bins = error_uncertainty_bins(2.0 * sigma, sigma, n_bins=5)
        assert bins.spearman == pytest.approx(1.0)
        assert bins.counts.sum() == 100
        assert np.all(np.diff(bins.sigma_centers) > 0)

    def test_bins_need_two_entries(self):
        with pytest.raises(InvalidArgumentError):
            error_uncertainty_bins(np.ones(1), np.ones(1))


class TestArchive:

    def test_round_trip(self, conflicting, grid, tmp_path):
        path = save_model(conflicting, tmp_path / "model" / "ensemble.npz")
        loaded = load_model(path)
        assert loaded.kind == "gpe"
        assert loaded.names == ["low", "high"]
        original = ensemble_predict(conflicting, grid)
        restored = ensemble_predict(loaded, grid)
        assert np.array_equal(original.mean, restored.mean)
        assert np.array_equal(original.sigma, restored.sigma)

    def test_missing_archive(self, tmp_path):
        with pytest.raises(ArtifactIOError) as exc_info:
            load_model(tmp_path / "absent.npz")
        assert exc_info.value.exit_code == 5

    def test_corrupt_archive(self, tmp_path):
        path = tmp_path / "ensemble.npz"
        path.write_bytes(b"not an archive")
        with pytest.raises(ArtifactIOError):
            load_model(path)


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
