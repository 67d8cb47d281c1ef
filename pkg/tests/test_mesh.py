"""
Unit tests for mesh construction and gradient operators.
"""
import pytest
import numpy as np

import sys
import os
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from betac_toolkit.errors import InvalidArgumentError
from betac_toolkit.models.mesh import FaceTag
from betac_toolkit.ops.mesh import (
    build_channel_1d,
    build_channel_2d,
    build_step_2d,
    boundary_flux,
    closure_residual,
    geometric_nodes,
    gradient,
)


class TestGeometricNodes:

    def test_uniform_spacing(self):
        nodes = geometric_nodes(10, 1.0, 2.0)
        assert np.allclose(np.diff(nodes), 0.2)

    def test_stretched_spacing_grows_by_ratio(self):
        nodes = geometric_nodes(12, 1.1, 1.0)
        spacing = np.diff(nodes)
        assert nodes[0] == 0.0
        assert nodes[-1] == 1.0
        assert np.allclose(spacing[1:] / spacing[:-1], 1.1)


class TestChannel1D:

    def test_cell_count_and_volumes(self):
        mesh = build_channel_1d(32, 1.15, 1.0)
        assert mesh.n_cells == 32
        assert mesh.dimensionality == 1
        assert np.isclose(mesh.volumes.sum(), 1.0)

    def test_first_cell_is_finest(self):
        mesh = build_channel_1d(32, 1.15, 1.0)
        assert mesh.dy[0] == mesh.dy.min()
        assert mesh.dy[-1] == mesh.dy.max()

    def test_boundary_tags(self):
        mesh = build_channel_1d(16, 1.0, 1.0)
        assert len(mesh.faces_with_tag(FaceTag.WALL)) == 1
        assert len(mesh.faces_with_tag(FaceTag.SYMMETRY)) == 1
        assert len(mesh.faces_with_tag(FaceTag.PERIODIC)) == 32

    def test_wall_distance_is_centre_height(self):
        mesh = build_channel_1d(16, 1.1, 1.0)
        assert np.allclose(mesh.wall_distance, mesh.centers[:, 1])

    def test_arrays_are_read_only(self):
        mesh = build_channel_1d(16, 1.0, 1.0)
        with pytest.raises(ValueError):
            mesh.volumes[0] = 2.0

    @pytest.mark.parametrize("n_cells, ratio, height", [
        (4, 1.0, 1.0),
        (16, 0.9, 1.0),
        (16, 1.0, 0.0),
        (16, 1.0, -1.0),
    ])
    def test_invalid_arguments(self, n_cells, ratio, height):
        with pytest.raises(InvalidArgumentError):
            build_channel_1d(n_cells, ratio, height)

    def test_non_integer_count_rejected(self):
        with pytest.raises(InvalidArgumentError):
            build_channel_1d(16.5, 1.0, 1.0)


class TestChannel2D:

    def test_face_counts(self):
        mesh = build_channel_2d(6, 5, 3.0, 1.0)
        assert mesh.n_cells == 30
        assert len(mesh.faces_with_tag(FaceTag.INLET)) == 5
        assert len(mesh.faces_with_tag(FaceTag.OUTLET)) == 5
        assert len(mesh.faces_with_tag(FaceTag.WALL)) == 12

    def test_symmetry_top(self):
        mesh = build_channel_2d(6, 5, 3.0, 1.0, top=FaceTag.SYMMETRY)
        assert len(mesh.faces_with_tag(FaceTag.SYMMETRY)) == 6
        assert len(mesh.faces_with_tag(FaceTag.WALL)) == 6

    def test_invalid_top(self):
        with pytest.raises(InvalidArgumentError):
            build_channel_2d(6, 5, 3.0, 1.0, top=FaceTag.INLET)

    def test_control_volumes_are_closed(self):
        mesh = build_channel_2d(6, 5, 3.0, 1.0)
        assert np.allclose(closure_residual(mesh), 0.0, atol=1e-14)


class TestStep2D:

    @pytest.fixture
    def mesh(self):
        return build_step_2d(16, 16, 0.5, 4.0, 2.0)

    def test_step_is_blanked(self, mesh):
        blanked = mesh.blanked.reshape(mesh.ny, mesh.nx)
        assert blanked[:8, :4].all()
        assert not blanked[8:, :].any()
        assert not blanked[:, 4:].any()
        assert mesh.n_fluid == 256 - 32

    def test_blanked_cells_have_no_faces(self, mesh):
        blanked_cells = np.flatnonzero(mesh.blanked)
        assert not np.isin(mesh.face_owner, blanked_cells).any()
        assert not np.isin(mesh.face_neighbour, blanked_cells).any()

    def test_step_faces_are_walls(self, mesh):
        inlet = mesh.faces_with_tag(FaceTag.INLET)
        assert len(inlet) == 8
        assert np.all(mesh.face_center[inlet, 1] > 1.0)

    def test_fluid_volumes_are_closed(self, mesh):
        assert np.allclose(closure_residual(mesh), 0.0, atol=1e-14)

    def test_wall_distance_positive_in_fluid(self, mesh):
        assert np.all(mesh.wall_distance[mesh.fluid] > 0)
        assert np.all(mesh.wall_distance[mesh.blanked] == 0)

    def test_blocked_inlet_rejected(self):
        with pytest.raises(InvalidArgumentError):
            build_step_2d(16, 16, 0.99, 4.0, 2.0)

    @pytest.mark.parametrize("fraction", [0.0, 1.0, 1.5])
    def test_step_fraction_range(self, fraction):
        with pytest.raises(InvalidArgumentError):
            build_step_2d(16, 16, fraction, 4.0, 2.0)


class TestGradient:

    def test_linear_field_2d(self):
        mesh = build_channel_2d(6, 5, 3.0, 1.0)
        x, y = mesh.centers[:, 0], mesh.centers[:, 1]
        grad = gradient(2.0 * x - 3.0 * y + 1.0, mesh)
        assert np.allclose(grad[:, 0], 2.0)
        assert np.allclose(grad[:, 1], -3.0)

    def test_linear_field_1d(self):
        mesh = build_channel_1d(20, 1.1, 1.0)
        grad = gradient(4.0 * mesh.centers[:, 1], mesh)
        assert np.allclose(grad[:, 1], 4.0)
        assert np.allclose(grad[:, 0], 0.0)

    def test_shape_mismatch(self):
        mesh = build_channel_1d(20, 1.0, 1.0)
        with pytest.raises(InvalidArgumentError):
            gradient(np.zeros(19), mesh)

    def test_constant_boundary_flux_vanishes(self):
        mesh = build_channel_2d(6, 5, 3.0, 1.0)
        flux = boundary_flux(np.ones(len(mesh.boundary_faces)), mesh)
        assert np.allclose(flux, 0.0)


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
