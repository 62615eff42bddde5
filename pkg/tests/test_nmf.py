import numpy as np
import pytest
import torch

from landmark_forge.schemas.features import FeatureMap
from landmark_forge.services.errors import ConfigError
from landmark_forge.services.nmf_service import nmf, nmf_parts, project_onto_basis, relative_error


@pytest.fixture
def rank_two():
    rng = np.random.default_rng(0)
    return rng.uniform(0.1, 1.0, (30, 2)) @ rng.uniform(0.1, 1.0, (2, 10))


class TestFactorization:
    def test_recovers_an_exact_rank_two_matrix(self, rank_two):
        coefficients, basis, errors = nmf(rank_two, 2, max_iter=5000, tol=0.0, seed=0)
        assert len(errors) == 5001
        assert relative_error(rank_two, coefficients, basis) < 1e-2

    def test_error_never_increases(self, rank_two):
        noisy = rank_two + np.random.default_rng(1).uniform(0, 0.05, rank_two.shape)
        _, _, errors = nmf(noisy, 3, max_iter=300, tol=0.0)
        assert all(b <= a + 1e-12 for a, b in zip(errors, errors[1:]))

    def test_factors_stay_non_negative(self, rank_two):
        coefficients, basis, _ = nmf(rank_two, 2, max_iter=50)
        assert (coefficients >= 0).all() and (basis >= 0).all()

    def test_tolerance_stops_early(self, rank_two):
        _, _, errors = nmf(rank_two, 2, max_iter=5000, tol=1e-3)
        assert len(errors) < 5001

    def test_same_seed_same_factors(self, rank_two):
        a = nmf(rank_two, 2, max_iter=20, seed=4)
        b = nmf(rank_two, 2, max_iter=20, seed=4)
        np.testing.assert_array_equal(a[1], b[1])

    def test_rank_bounds(self, rank_two):
        with pytest.raises(ConfigError):
            nmf(rank_two, 0)
        with pytest.raises(ConfigError):
            nmf(rank_two, 11)

    def test_negative_input(self):
        with pytest.raises(ConfigError):
            nmf(-np.ones((4, 4)), 2)


class TestParts:
    def test_heatmaps_per_image(self):
        grid = torch.randn(3, 8, 5, 6)
        parts = nmf_parts(FeatureMap(grid=grid, downscale=4, source_size=(20, 24)), rank=4, max_iter=30)
        assert parts.heat.shape == (3, 4, 5, 6)
        assert parts.basis.shape == (4, 8)
        assert parts.rank == 4
        assert parts.shift == pytest.approx(-float(grid.min()), rel=1e-6)
        assert (parts.heat >= 0).all()

    def test_non_negative_features_need_no_shift(self):
        parts = nmf_parts(torch.rand(2, 5, 3, 3), rank=2, max_iter=10)
        assert parts.shift == 0.0

    def test_projection_onto_a_fixed_basis(self):
        grid = torch.randn(2, 8, 4, 4)
        parts = nmf_parts(grid, rank=3, max_iter=50)
        coefficients = project_onto_basis(grid, parts.basis, parts.shift)
        assert coefficients.shape == (2, 3, 4, 4)
        assert (coefficients >= 0).all()
