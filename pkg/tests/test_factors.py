import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import subspace_angles

from fqra.errors import KTooLargeError, NonFiniteInputError
from fqra.factors import (
    bic_curve,
    extract_factors,
    numerical_rank,
    select_k_bic,
    standardize_cross_section,
)


def low_rank(rng, T, N, r):
    return rng.normal(size=(T, r)) @ rng.normal(size=(r, N))


class TestStandardize:
    def test_identical_row(self):
        sp = standardize_cross_section(np.array([[3.0, 3.0, 3.0], [1.0, 2.0, 3.0]]))
        np.testing.assert_array_equal(sp.values[0], 0.0)
        assert sp.mu[0] == 3.0
        assert sp.degenerate.tolist() == [True, False]
        assert sp.sigma[0] == sp.eps_floor and sp.sigma_raw[0] == 0.0

    def test_two_point_row(self):
        sp = standardize_cross_section(np.array([[-1.0, 1.0]]))
        assert sp.mu[0] == 0.0
        assert sp.sigma[0] == pytest.approx(np.sqrt(2.0))
        # (x - 0) / sqrt(2); a unit z-score would need the n denominator
        np.testing.assert_allclose(sp.values[0], [-1 / np.sqrt(2), 1 / np.sqrt(2)])

    def test_row_moments(self, rng):
        M = rng.normal(loc=5, scale=3, size=(50, 12))
        sp = standardize_cross_section(M)
        assert np.abs(sp.values.mean(axis=1)).max() <= 1e-10
        np.testing.assert_allclose(sp.values.std(axis=1, ddof=1), 1.0, atol=1e-12)

    def test_round_trip(self, rng):
        M = rng.normal(loc=40, scale=10, size=(30, 7))
        sp = standardize_cross_section(M)
        assert np.abs(sp.back_transform(sp.values) - M).max() <= 1e-12

    def test_back_transform_trailing_axis(self, rng):
        M = rng.normal(size=(4, 5))
        sp = standardize_cross_section(M)
        p = np.ones((2, 3))
        out = sp.back_transform(p, slice(2, 4))
        np.testing.assert_allclose(out, (sp.sigma[2:] + sp.mu[2:])[:, None] * np.ones(3))

    def test_needs_two_columns(self):
        with pytest.raises(ValueError):
            standardize_cross_section(np.ones((3, 1)))


class TestExtractFactors:
    def test_rank_one_exact(self, rng):
        M = np.outer(rng.normal(size=40), rng.normal(size=8) + 3)
        fs = extract_factors(M, 1)
        assert np.abs(fs.reconstruct() - M).max() <= 1e-8

    def test_identical_columns(self, rng):
        col = rng.normal(size=30)
        M = np.tile(col[:, None], (1, 6))
        fs = extract_factors(M, 1)
        corr = np.corrcoef(fs.factors[:, 0], col)[0, 1]
        assert abs(corr) == pytest.approx(1.0, abs=1e-12)
        assert np.abs(fs.reconstruct() - M).max() <= 1e-10

    def test_rank_three_50x20(self, rng):
        M = low_rank(rng, 50, 20, 3)
        fs = extract_factors(M, 3)
        assert np.linalg.norm(fs.reconstruct() - M) <= 1e-8

    def test_orthogonality_and_order(self, rng):
        M = rng.normal(size=(60, 9))
        fs = extract_factors(M, 4)
        np.testing.assert_allclose(fs.factors.T @ fs.factors, 60 * np.eye(4), atol=1e-8 * 60)
        assert (np.diff(fs.eigenvalues) <= 0).all()
        assert (fs.loadings.sum(axis=0) >= 0).all()

    @pytest.mark.parametrize("shape", [(120, 15), (15, 40)])
    def test_routes_agree(self, rng, shape):
        M = low_rank(rng, *shape, 4) + 1e-3 * rng.normal(size=shape)
        a = extract_factors(M, 4, route="time")
        b = extract_factors(M, 4, route="cross")
        assert np.max(subspace_angles(a.factors, b.factors)) <= 1e-6
        np.testing.assert_allclose(a.factors, b.factors, atol=1e-6)

    def test_auto_route(self, rng):
        assert extract_factors(rng.normal(size=(30, 5)), 2).route == "cross"
        assert extract_factors(rng.normal(size=(5, 30)), 2).route == "time"

    def test_column_permutation_invariance(self, rng):
        M = low_rank(rng, 80, 12, 3) + 0.01 * rng.normal(size=(80, 12))
        perm = rng.permutation(12)
        a = extract_factors(M, 3)
        b = extract_factors(M[:, perm], 3)
        np.testing.assert_allclose(a.factors, b.factors, atol=1e-8)
        np.testing.assert_allclose(a.loadings[perm], b.loadings, atol=1e-8)

    def test_errors(self, rng):
        M = rng.normal(size=(10, 4))
        with pytest.raises(KTooLargeError):
            extract_factors(M, 5)
        with pytest.raises(KTooLargeError):
            extract_factors(M, 0)
        M[2, 2] = np.inf
        with pytest.raises(NonFiniteInputError):
            extract_factors(M, 1)

    def test_numerical_rank(self, rng):
        assert numerical_rank(low_rank(rng, 30, 10, 2)) == 2
        assert numerical_rank(np.zeros((3, 3))) == 0

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10_000), st.integers(1, 5), st.integers(20, 200), st.integers(6, 50))
    def test_rank_r_reconstruction(self, seed, r, T, N):
        rng = np.random.default_rng(seed)
        M = low_rank(rng, T, N, r)
        fs = extract_factors(M, r)
        assert np.linalg.norm(fs.reconstruct() - M) <= 1e-8 * max(1.0, np.linalg.norm(M))


class TestBic:
    def test_two_factor_target(self, rng):
        T, N = 24 * 20, 15
        M = low_rank(rng, T + 24, N, 4) + 0.01 * rng.normal(size=(T + 24, N))
        fs = extract_factors(M, 6)
        y = 2.0 * fs.factors[:T, 0] - 1.5 * fs.factors[:T, 1] + 1e-3 * rng.normal(size=T)
        assert select_k_bic(M, y, 6, "linear", fs) == 2
        assert select_k_bic(M, y, 6, "median-pinball", fs) == 2

    def test_k_max_one(self, rng):
        M = rng.normal(size=(50, 5))
        assert select_k_bic(M, rng.normal(size=40), 1) == 1

    def test_pure_noise_prefers_one(self):
        ones = 0
        for seed in range(100):
            rng = np.random.default_rng(seed)
            M = low_rank(rng, 200, 10, 6) + rng.normal(size=(200, 10))
            if select_k_bic(M, rng.normal(size=176), 6) == 1:
                ones += 1
        assert ones >= 90

    def test_k_max_too_large(self, rng):
        with pytest.raises(KTooLargeError):
            select_k_bic(rng.normal(size=(10, 3)), rng.normal(size=8), 4)

    def test_curve_formula(self, rng):
        F = rng.normal(size=(40, 2))
        y = rng.normal(size=40)
        X = np.column_stack([np.ones(40), F[:, :1]])
        rss = ((y - X @ np.linalg.lstsq(X, y, rcond=None)[0]) ** 2).sum()
        assert bic_curve(F, y)[0] == pytest.approx(40 * np.log(rss / 40) + 2 * np.log(40))

    def test_unknown_mode(self, rng):
        with pytest.raises(ValueError):
            bic_curve(rng.normal(size=(10, 1)), rng.normal(size=10), "aic")
