"""
Unit tests for feature extraction and training-set assembly.
"""
import pytest
import numpy as np
from scipy.spatial.transform import Rotation

import sys
import os
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from betac_toolkit.errors import InvalidArgumentError
from betac_toolkit.models.features import (
    FEATURE_NAMES,
    INVARIANT_BASIS,
    N_ENGINEERED,
    N_FEATURES,
    TrainingSet,
    TrainingSource,
    BandFilterRecord,
    feature_index_map,
)
from betac_toolkit.models.flow import BoundaryConditions, FlowState, SolverSettings, TurbulenceModel
from betac_toolkit.ops.features import (
    antisymmetric_from_vector,
    assemble_from_matrices,
    assemble_training_set,
    band_mask,
    compute_features,
    engineered_from_values,
    invariants_from_tensors,
)
from betac_toolkit.ops.mesh import build_channel_1d, build_step_2d
from betac_toolkit.ops.solver import solve_rans


def synthetic_state(mesh, model=TurbulenceModel.SST):
    x, y = mesh.centers[:, 0], mesh.centers[:, 1]
    n = mesh.n_cells
    return FlowState(
        mesh=mesh,
        nu=1e-3,
        model=model,
        u=1.0 + 0.3 * y ** 2,
        v=0.05 * x,
        p=-0.2 * x + 0.1 * y,
        k=0.01 + 0.005 * y,
        omega=1.0 + x,
        nu_t=np.full(n, 0.01),
    )


def random_tensors(rng, n):
    A = rng.normal(size=(n, 3, 3))
    S = 0.5 * (A + A.transpose(0, 2, 1))
    W = 0.5 * (A - A.transpose(0, 2, 1))
    Ap = antisymmetric_from_vector(rng.normal(size=(n, 3)))
    Ak = antisymmetric_from_vector(rng.normal(size=(n, 3)))
    return S, W, Ap, Ak


class TestFeatureCatalogue:

    def test_width(self):
        assert N_FEATURES == 52
        assert len(FEATURE_NAMES) == 52
        assert len(set(FEATURE_NAMES)) == 52

    def test_index_map_is_ordered(self):
        rows = feature_index_map()
        assert [row["index"] for row in rows] == list(range(52))
        assert [row["name"] for row in rows] == list(FEATURE_NAMES)


class TestEngineeredFeatures:

    def test_pressure_alignment_endpoints(self):
        velocity = np.array([[1.0, 0.0, 0.0]] * 4)
        grad_p = np.array([[2.0, 0.0, 0.0], [0.0, 2.0, 0.0], [-2.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
        ones = np.ones(4)
        values = engineered_from_values(grad_p, velocity, ones, ones, ones, ones, ones, 1.0)
        assert np.allclose(values[:, 0], [-1.0, 0.0, 1.0, 0.0])

    def test_q_criterion_endpoints(self):
        zeros3 = np.zeros((2, 3))
        ones = np.ones(2)
        values = engineered_from_values(zeros3, zeros3, np.array([1.0, 0.0]), np.array([0.0, 1.0]),
                                        ones, ones, ones, 1.0)
        assert np.allclose(values[:, 2], [1.0, -1.0])

    def test_time_scale_and_viscosity_endpoints(self):
        zeros3 = np.zeros((2, 3))
        values = engineered_from_values(zeros3, zeros3, np.array([0.0, 5.0]), np.zeros(2),
                                        np.ones(2), np.array([1.0, 0.0]), np.array([0.0, 1e9]), 1.0)
        assert np.allclose(values[:, 1], [-1.0, 1.0])
        assert values[0, 4] == pytest.approx(-1.0)
        assert values[1, 4] == pytest.approx(1.0, abs=1e-6)

    def test_random_values_are_bounded(self):
        rng = np.random.default_rng(0)
        n = 200
        values = engineered_from_values(
            rng.normal(size=(n, 3)), rng.normal(size=(n, 3)),
            rng.uniform(0, 10, n), rng.uniform(0, 10, n),
            rng.uniform(0, 1, n), rng.uniform(0, 10, n), rng.uniform(0, 1, n), 1e-3,
        )
        assert np.all(np.abs(values) <= 1.0)


class TestInvariants:

    def test_rotation_invariance(self):
        rng = np.random.default_rng(1)
        S, W, Ap, Ak = random_tensors(rng, 20)
        Q = Rotation.from_rotvec([0.3, -1.1, 0.7]).as_matrix()

        def rotate(T):
            return Q @ T @ Q.T

        base = invariants_from_tensors(S, W, Ap, Ak, squash=False)
        rotated = invariants_from_tensors(rotate(S), rotate(W), rotate(Ap), rotate(Ak), squash=False)
        assert np.allclose(base, rotated, rtol=1e-10, atol=1e-10)

    def test_squash(self):
        rng = np.random.default_rng(1)
        S, W, Ap, Ak = random_tensors(rng, 20)
        raw = invariants_from_tensors(S, W, Ap, Ak, squash=False)
        squashed = invariants_from_tensors(S, W, Ap, Ak)
        assert np.allclose(squashed, raw / (np.abs(raw) + 1.0))
        assert np.all(np.abs(squashed) < 1.0)

    def test_antisymmetric_from_vector(self):
        A = antisymmetric_from_vector(np.array([[1.0, 2.0, 3.0]]))[0]
        assert np.allclose(A, -A.T)
        assert np.allclose(A @ np.array([1.0, 2.0, 3.0]), 0.0)


class TestComputeFeatures:

    def test_laminar_channel(self):
        mesh = build_channel_1d(16, 1.0, 1.0)
        state = solve_rans(mesh, BoundaryConditions(nu=0.01, forcing=1.0), 1.0,
                           SolverSettings(model=TurbulenceModel.LAMINAR, tolerance=1e-10))
        features = compute_features(state)
        assert features.shape == (16, 52)
        assert np.all(np.isfinite(features))
        assert np.all(np.abs(features) <= 1.0)

    def test_blanked_rows_are_zero(self):
        mesh = build_step_2d(16, 16, 0.5, 4.0, 2.0)
        features = compute_features(synthetic_state(mesh))
        assert features.shape == (256, 52)
        assert np.all(features[mesh.blanked] == 0.0)
        assert np.any(features[mesh.fluid] != 0.0)

    def test_galilean_shift(self):
        mesh = build_step_2d(16, 16, 0.5, 4.0, 2.0)
        state = synthetic_state(mesh)
        shifted = synthetic_state(mesh)
        shifted.u = shifted.u + 2.0
        shifted.v = shifted.v + 0.5
        base = compute_features(state)[mesh.fluid]
        moved = compute_features(shifted)[mesh.fluid]

        for column in (0, 3):
            assert not np.allclose(base[:, column], moved[:, column])
        # Ap is scaled by the convective term, so only S, W and Ak words are frame-free
        frame_free = [1, 2, 4] + [
            N_ENGINEERED + offset for offset, factors in enumerate(INVARIANT_BASIS)
            if not any(factor.startswith("Ap") for factor in factors)
        ]
        assert len(frame_free) > 10
        assert np.allclose(base[:, frame_free], moved[:, frame_free], rtol=1e-8, atol=1e-10)

    def test_non_finite_state_rejected(self):
        mesh = build_channel_1d(16, 1.0, 1.0)
        state = synthetic_state(mesh)
        state.u[3] = np.nan
        with pytest.raises(InvalidArgumentError):
            compute_features(state)


class TestBandFilter:

    def test_closed_interval_is_removed(self):
        targets = np.array([0.8999, 0.9, 1.0, 1.1, 1.1001])
        assert list(band_mask(targets, (0.9, 1.1))) == [True, False, False, False, True]

    @pytest.mark.parametrize("band", [(1.1, 0.9), (0.9,), (np.nan, 1.0)])
    def test_invalid_band(self, band):
        with pytest.raises(InvalidArgumentError):
            band_mask(np.ones(3), band)

    def test_sources_with_nothing_left_are_dropped(self):
        rng = np.random.default_rng(0)
        X = rng.normal(size=(6, 52))
        training = assemble_from_matrices([
            (X, np.array([0.5, 1.0, 1.0, 1.5, 0.95, 0.7]), "separated"),
            (X, np.ones(6), "attached"),
        ])
        assert training.names == ["separated"]
        assert training.source("separated").n_samples == 3
        assert training.band.dropped == ["attached"]
        assert training.band.retained == {"separated": 3, "attached": 0}
        assert training.band.total == {"separated": 6, "attached": 6}

    def test_assembles_from_states(self):
        mesh = build_step_2d(16, 16, 0.5, 4.0, 2.0)
        state = synthetic_state(mesh)
        beta = np.where(mesh.centers[:, 1] > 1.5, 0.5, 1.0)
        training = assemble_training_set([(state, beta, "step")])
        source = training.source("step")
        assert source.X.shape[1] == 52
        assert np.all(source.Y == 0.5)
        assert np.all(mesh.fluid[source.cells])
        assert len(source.cells) == np.count_nonzero(mesh.fluid & (mesh.centers[:, 1] > 1.5))

    def test_unknown_source(self):
        training = TrainingSet(sources=[], band=BandFilterRecord(lower=0.9, upper=1.1))
        with pytest.raises(InvalidArgumentError):
            training.source("missing")

    def test_width_mismatch(self):
        with pytest.raises(InvalidArgumentError):
            TrainingSet(
                sources=[
                    TrainingSource(name="a", X=np.zeros((2, 3)), Y=np.zeros(2)),
                    TrainingSource(name="b", X=np.zeros((2, 4)), Y=np.zeros(2)),
                ],
                band=BandFilterRecord(lower=0.9, upper=1.1),
            )


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
