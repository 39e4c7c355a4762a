import math

import numpy as np
import pytest
import torch

from tempseg import similarity
from tempseg.errors import ShapeMismatchError, ValidationError
from util import autograd_vs_fd, brute_force_cosine_map


class TestAtOperator:
    def test_orthonormal_rows(self):
        x = torch.eye(2, dtype=torch.float64)
        assert torch.allclose(similarity.at_operator(x, x), torch.eye(2, dtype=torch.float64))

    def test_known_pair_value(self):
        x1 = torch.tensor([[1.0, 0.0], [0.0, 1.0]], dtype=torch.float64)
        x2 = torch.tensor([[1.0, 1.0], [1.0, 0.0]], dtype=torch.float64)
        out = similarity.at_operator(x1, x2)
        assert abs(float(out[0, 0]) - 1 / math.sqrt(2)) < 1e-12

    @pytest.mark.parametrize("seed", range(20))
    def test_matches_double_loop_oracle(self, seed):
        rng = np.random.default_rng(seed)
        x1 = rng.standard_normal((4, 3))
        x2 = rng.standard_normal((4, 3))
        got = similarity.at_operator(torch.from_numpy(x1), torch.from_numpy(x2)).numpy()
        assert np.abs(got - brute_force_cosine_map(x1, x2)).max() < 1e-12

    def test_self_similarity_symmetric_unit_diagonal(self):
        rng = np.random.default_rng(5)
        x = torch.from_numpy(rng.standard_normal((6, 4)))
        a = similarity.at_operator(x, x)
        assert torch.allclose(a, a.T, atol=1e-12)
        assert torch.allclose(torch.diagonal(a), torch.ones(6, dtype=torch.float64), atol=1e-12)

    def test_entries_bounded(self):
        rng = np.random.default_rng(9)
        x1 = torch.from_numpy(rng.standard_normal((8, 5)))
        x2 = torch.from_numpy(rng.standard_normal((8, 5)))
        a = similarity.at_operator(x1, x2)
        assert float(a.abs().max()) <= 1 + 1e-12

    def test_scale_invariance(self):
        rng = np.random.default_rng(2)
        x1 = torch.from_numpy(rng.standard_normal((5, 3)))
        x2 = torch.from_numpy(rng.standard_normal((5, 3)))
        a = similarity.at_operator(x1, x2)
        b = similarity.at_operator(37.5 * x1, x2)
        assert torch.allclose(a, b, atol=1e-10)

    def test_zero_norm_row_gives_zero_similarity_and_zero_gradient(self):
        x1 = torch.tensor([[0.0, 0.0], [1.0, 2.0]], dtype=torch.float64, requires_grad=True)
        x2 = torch.tensor([[1.0, 0.0], [0.0, 1.0]], dtype=torch.float64)
        a = similarity.at_operator(x1, x2)
        assert torch.equal(a[0], torch.zeros(2, dtype=torch.float64))
        a.sum().backward()
        assert torch.equal(x1.grad[0], torch.zeros(2, dtype=torch.float64))
        assert torch.isfinite(x1.grad).all()

    @pytest.mark.parametrize("seed", range(5))
    def test_gradient_matches_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        other = torch.from_numpy(rng.standard_normal((4, 3)) + 0.5)
        weights = torch.from_numpy(rng.standard_normal((4, 4)))

        def fn_x1(x):
            return (similarity.at_operator(x, other) * weights).sum()

        def fn_x2(x):
            return (similarity.at_operator(other, x) * weights).sum()

        x = torch.from_numpy(rng.standard_normal((4, 3)) + 0.5)
        assert autograd_vs_fd(fn_x1, x) < 1e-5
        assert autograd_vs_fd(fn_x2, x.clone()) < 1e-5

    def test_channel_mismatch_raises(self):
        with pytest.raises(ShapeMismatchError):
            similarity.at_operator(torch.rand(3, 2), torch.rand(3, 4))


class TestPoolToGrid:
    def test_constant_map(self):
        fm = torch.full((1, 4, 4), 3.25, dtype=torch.float64)
        grid = similarity.pool_to_grid(fm, (2, 2))
        assert grid.shape == (4, 1)
        assert torch.allclose(grid, torch.full((4, 1), 3.25, dtype=torch.float64))

    def test_global_mean(self):
        fm = torch.tensor([[[1.0, 2.0], [3.0, 4.0]]], dtype=torch.float64)
        grid = similarity.pool_to_grid(fm, (1, 1))
        assert torch.allclose(grid, torch.tensor([[2.5]], dtype=torch.float64))

    def test_identity_when_target_equals_input(self):
        rng = np.random.default_rng(4)
        fm = torch.from_numpy(rng.random((3, 4, 5)))
        grid = similarity.pool_to_grid(fm, (4, 5))
        assert torch.allclose(grid, fm.permute(1, 2, 0).reshape(20, 3), atol=1e-14)

    def test_row_major_flattening(self):
        fm = torch.arange(16, dtype=torch.float64).reshape(1, 4, 4)
        grid = similarity.pool_to_grid(fm, (2, 2))
        # block means: [[2.5, 4.5], [10.5, 12.5]] flattened row-major
        assert torch.allclose(grid[:, 0], torch.tensor([2.5, 4.5, 10.5, 12.5], dtype=torch.float64))

    def test_target_larger_than_input_raises(self):
        with pytest.raises(ValidationError):
            similarity.pool_to_grid(torch.rand(1, 2, 2), (4, 4))
