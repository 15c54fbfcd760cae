import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kornlab.calculus import (MAX_DEGREE, PolyField, check_identity, check_identity_fd,
                              laplacian_identity_residual)
from kornlab.errors import ValidationError


def sin_field(x):
    return np.stack([np.sin(x[..., 1]), 0 * x[..., 0]], axis=-1)


def mixed_field(x):
    x1, x2, x3 = np.moveaxis(x, -1, 0)
    return np.stack([np.sin(x2 * x3) + np.exp(x1), np.cos(x1 + 2 * x3), x1 * np.sin(x2)], axis=-1)


class TestPolynomial:
    def test_quadratic_example(self):
        f = PolyField.from_terms(2, 2, {(0, (2, 0)): 1.0, (1, (1, 1)): 1.0})
        assert check_identity(f) <= 1e-14
        assert f(np.array([2.0, 3.0])).tolist() == [4.0, 6.0]

    def test_linear_field_both_sides_zero(self, rng):
        f = PolyField.random(3, 1, rng)
        assert check_identity(f) == 0.0

    @pytest.mark.parametrize("N", [2, 3])
    def test_random_degree_four(self, rng, N):
        for _ in range(100):
            assert check_identity(PolyField.random(N, 4, rng)) <= 1e-12

    @settings(max_examples=30, deadline=None)
    @given(N=st.sampled_from([2, 3]), degree=st.integers(0, MAX_DEGREE), seed=st.integers(0, 2**32 - 1))
    def test_laplacian_contraction(self, N, degree, seed):
        f = PolyField.random(N, degree, np.random.default_rng(seed))
        assert laplacian_identity_residual(f) <= 1e-12

    def test_random_respects_total_degree(self, rng):
        f = PolyField.random(3, 3, rng)
        tot = np.indices(f.coeffs.shape[1:]).sum(axis=0)
        assert np.all(f.coeffs[:, tot > 3] == 0)

    @pytest.mark.parametrize("shape", [(4, 3, 3, 3, 3), (2, 3, 4), (2, 8, 8)])
    def test_bad_tables(self, shape):
        with pytest.raises(ValidationError):
            PolyField(np.zeros(shape))


class TestFiniteDifference:
    def test_second_order_on_sine(self):
        r1, r2 = check_identity_fd(sin_field, 1e-2, 2), check_identity_fd(sin_field, 5e-3, 2)
        assert 3.2 <= r1 / r2 <= 4.8

    def test_second_order_in_3d(self):
        r1, r2 = check_identity_fd(mixed_field, 1e-2, 3), check_identity_fd(mixed_field, 5e-3, 3)
        assert 3.2 <= r1 / r2 <= 4.8

    # the differences are exact on quadratics; small h only magnifies rounding
    @pytest.mark.parametrize("h", [1e-1, 1e-2, 5e-3])
    def test_quadratic_exact(self, rng, h):
        assert check_identity_fd(PolyField.random(3, 2, rng), h, 3) <= 1e-10

    @pytest.mark.parametrize("h", [1e-1, 5e-2, 1e-2])
    def test_cubic_exact(self, rng, h):
        assert check_identity_fd(PolyField.random(3, 3, rng), h, 3) <= 1e-9

    @pytest.mark.parametrize("h", [0.0, -1e-3])
    def test_bad_step(self, h):
        with pytest.raises(ValidationError, match="positive"):
            check_identity_fd(sin_field, h, 2)
