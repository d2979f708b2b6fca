import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cocgan import tensor as T
from cocgan.errors import ContractError, InputError
from cocgan.pointset import PointSet, grid_positions, image_to_points, points_to_image


class TestGridPositions:
    def test_centred_in_unit_square(self):
        pos = grid_positions(2, 2, np.float64)
        np.testing.assert_allclose(pos, [[-0.25, -0.25], [0.25, -0.25], [-0.25, 0.25], [0.25, 0.25]])

    @given(st.integers(1, 30), st.integers(1, 30))
    def test_bounded_and_mean_zero(self, h, w):
        pos = grid_positions(h, w, np.float64)
        assert pos.shape == (h * w, 2)
        assert np.all(np.abs(pos) < 0.5)
        np.testing.assert_allclose(pos.mean(axis=0), 0, atol=1e-12)


class TestPointSet:
    def test_rejects_mismatched_grid(self):
        with pytest.raises((ContractError, InputError)):
            PointSet(T.Tensor(np.zeros((1, 5, 2))), (2, 2))

    def test_round_trip(self, rng):
        img = rng.uniform(-1, 1, (3, 28, 28, 1)).astype(np.float32)
        ps = image_to_points(img)
        assert ps.n == 784 and ps.d == 1 and ps.grid == (28, 28)
        np.testing.assert_array_equal(points_to_image(ps), img)

    def test_single_image(self, rng):
        img = rng.uniform(-1, 1, (4, 4, 3)).astype(np.float32)
        ps = image_to_points(img)
        assert ps.features.shape == (1, 16, 3)
