"""Eigendecomposition, truncation, exponential filters, diffusion integrator."""

import numpy as np
import pytest
import scipy.linalg

from cosimo.complexes import build_complex, hodge_operators, random_points
from cosimo.delaunay import delaunay_complex
from cosimo.spectral import (
    LOW_FREQUENCY,
    DOMINANT,
    LevelSpectra,
    cosimo_filter,
    eig_sym,
    exp_filter,
    full_spectrum,
    integrate_diffusion,
    load_spectrum,
    matrix_exp_oracle,
    save_spectrum,
    truncate,
)

from test_complexes import charpoly_roots_3x3


def random_psd(n, rng, scale=1.0):
    A = rng.standard_normal((n, n))
    return scale * (A @ A.T) / n


class TestEigSym:
    def test_hollow_triangle_matches_charpoly(self):
        c = build_complex(edges=[(0, 1), (0, 2), (1, 2)])
        L = hodge_operators(c, 0).L
        spec = eig_sym(L)
        np.testing.assert_allclose(spec.eigenvalues, charpoly_roots_3x3(L), atol=1e-9)

    def test_diagonal_input(self):
        spec = eig_sym(np.diag([3.0, 1.0, 2.0]))
        np.testing.assert_allclose(spec.eigenvalues, [1.0, 2.0, 3.0])
        perm = np.abs(spec.eigenvectors)
        np.testing.assert_allclose(perm @ perm.T, np.eye(3), atol=1e-12)

    def test_reconstruction_and_orthonormality(self):
        rng = np.random.default_rng(0)
        L = random_psd(20, rng, scale=5.0)
        spec = eig_sym(L)
        V, w = spec.eigenvectors, spec.eigenvalues
        assert np.max(np.abs(V.T @ V - np.eye(20))) <= 1e-10
        recon = V @ np.diag(w) @ V.T
        assert np.max(np.abs(recon - L)) <= 1e-8 * np.max(np.abs(L))
        assert w[0] >= -1e-10
        assert np.all(np.diff(w) >= 0)

    def test_sign_convention_deterministic(self):
        rng = np.random.default_rng(1)
        L = random_psd(12, rng)
        a = eig_sym(L)
        b = eig_sym(L.copy())
        np.testing.assert_array_equal(a.eigenvectors, b.eigenvectors)
        for j in range(12):
            col = a.eigenvectors[:, j]
            nz = np.nonzero(np.abs(col) > 1e-12 * np.abs(col).max())[0]
            assert col[nz[0]] > 0

    def test_rejects_non_symmetric(self):
        with pytest.raises(ValueError, match="not symmetric"):
            eig_sym(np.array([[0.0, 1.0], [0.0, 0.0]]))


class TestTruncate:
    def test_full_k_identical_under_both_policies(self):
        rng = np.random.default_rng(2)
        spec = eig_sym(random_psd(8, rng))
        for policy in (LOW_FREQUENCY, DOMINANT):
            tr = truncate(spec, 8, policy)
            np.testing.assert_array_equal(tr.eigenvalues, spec.eigenvalues)
            np.testing.assert_array_equal(tr.eigenvectors, spec.eigenvectors)

    def test_policies_on_three_mode_spectrum(self):
        spec = eig_sym(np.diag([0.0, 1.0, 5.0]))
        low = truncate(spec, 2, LOW_FREQUENCY)
        np.testing.assert_allclose(sorted(low.eigenvalues), [0.0, 1.0])
        dom = truncate(spec, 2, DOMINANT)
        np.testing.assert_allclose(sorted(dom.eigenvalues), [1.0, 5.0])

    def test_k_out_of_range(self):
        spec = eig_sym(np.eye(3))
        with pytest.raises(ValueError):
            truncate(spec, 0)
        with pytest.raises(ValueError):
            truncate(spec, 4)

    def test_retained_columns_orthonormal(self):
        rng = np.random.default_rng(3)
        spec = eig_sym(random_psd(10, rng))
        tr = truncate(spec, 4)
        assert np.max(np.abs(tr.eigenvectors.T @ tr.eigenvectors - np.eye(4))) <= 1e-10


class TestExpFilter:
    def test_t_zero_full_k_is_xw(self):
        rng = np.random.default_rng(4)
        L = random_psd(9, rng)
        tr = full_spectrum(L)
        X = rng.standard_normal((9, 3))
        W = rng.standard_normal((3, 2))
        assert np.max(np.abs(exp_filter(tr, 0.0, X, W) - X @ W)) <= 1e-10

    def test_matches_dense_oracle_at_full_k(self):
        rng = np.random.default_rng(5)
        for _ in range(10):
            n = int(rng.integers(5, 16))
            L = random_psd(n, rng, scale=3.0)
            t = float(rng.uniform(0.0, 2.0))
            X = rng.standard_normal((n, 3))
            W = rng.standard_normal((3, 3))
            got = exp_filter(full_spectrum(L), t, X, W)
            want = matrix_exp_oracle(L, t) @ X @ W
            scale = max(np.max(np.abs(want)), 1e-30)
            assert np.max(np.abs(got - want)) <= 1e-8 * scale

    def test_truncation_error_non_increasing_in_k(self):
        rng = np.random.default_rng(6)
        L = random_psd(14, rng, scale=4.0)
        spec = eig_sym(L)
        X = rng.standard_normal((14, 2))
        W = rng.standard_normal((2, 2))
        dense = matrix_exp_oracle(L, 1.0) @ X @ W
        errs = []
        for K in range(1, 15):
            approx = exp_filter(truncate(spec, K, LOW_FREQUENCY), 1.0, X, W)
            errs.append(np.linalg.norm(approx - dense))
        for a, b in zip(errs, errs[1:]):
            assert b <= a * (1 + 1e-9) + 1e-12

    def test_linearity_in_x_and_w(self):
        rng = np.random.default_rng(7)
        L = random_psd(10, rng)
        tr = full_spectrum(L)
        X1, X2 = rng.standard_normal((2, 10, 3))
        W1, W2 = rng.standard_normal((2, 3, 2))
        lhs = exp_filter(tr, 0.7, X1 + 2.0 * X2, W1)
        rhs = exp_filter(tr, 0.7, X1, W1) + 2.0 * exp_filter(tr, 0.7, X2, W1)
        assert np.max(np.abs(lhs - rhs)) <= 1e-10
        lhs = exp_filter(tr, 0.7, X1, W1 + 3.0 * W2)
        rhs = exp_filter(tr, 0.7, X1, W1) + 3.0 * exp_filter(tr, 0.7, X1, W2)
        assert np.max(np.abs(lhs - rhs)) <= 1e-10

    def test_semigroup_property(self):
        rng = np.random.default_rng(8)
        L = random_psd(12, rng, scale=2.0)
        tr = full_spectrum(L)
        X = rng.standard_normal((12, 4))
        once = exp_filter(tr, 0.9, exp_filter(tr, 0.4, X))
        direct = exp_filter(tr, 1.3, X)
        assert np.max(np.abs(once - direct)) <= 1e-8

    def test_rejects_negative_t_and_bad_shapes(self):
        tr = full_spectrum(np.eye(3))
        with pytest.raises(ValueError, match="nonnegative"):
            exp_filter(tr, -0.1, np.zeros((3, 1)))
        with pytest.raises(ValueError, match="rows"):
            exp_filter(tr, 0.1, np.zeros((4, 1)))


class TestMatrixExpOracle:
    def test_identity_at_t_zero(self):
        rng = np.random.default_rng(9)
        L = random_psd(6, rng)
        np.testing.assert_allclose(matrix_exp_oracle(L, 0.0), np.eye(6), atol=1e-14)

    def test_diagonal_operator(self):
        d = np.array([0.0, 0.5, 2.0, 7.0])
        got = matrix_exp_oracle(np.diag(d), 1.3)
        np.testing.assert_allclose(got, np.diag(np.exp(-1.3 * d)), rtol=1e-12)

    def test_agrees_with_eig_route(self):
        rng = np.random.default_rng(10)
        L = random_psd(15, rng, scale=3.0)
        spec = eig_sym(L)
        V, w = spec.eigenvectors, spec.eigenvalues
        for t in (0.3, 1.0, 2.5):
            via_eig = V @ np.diag(np.exp(-t * w)) @ V.T
            assert np.max(np.abs(matrix_exp_oracle(L, t) - via_eig)) <= 1e-10

    def test_agrees_with_scipy(self):
        rng = np.random.default_rng(11)
        for _ in range(5):
            L = random_psd(10, rng, scale=5.0)
            t = float(rng.uniform(0.1, 3.0))
            want = scipy.linalg.expm(-t * L)
            got = matrix_exp_oracle(L, t)
            assert np.max(np.abs(got - want)) <= 1e-11 * max(1.0, np.max(np.abs(want)))

    def test_norm_overflow_guard(self):
        with pytest.raises(OverflowError):
            matrix_exp_oracle(np.eye(3) * 1e7, 100.0)


class TestCosimoFilter:
    @staticmethod
    def _level_one(seed=12, n=20):
        c = delaunay_complex(random_points(n, rng_seed=seed))
        ops = hodge_operators(c, 1)
        spec = LevelSpectra.from_operators(ops)
        return ops, spec

    def test_zero_times_reduce_to_sum(self):
        ops, spec = self._level_one()
        rng = np.random.default_rng(13)
        xd, xu, xj = (rng.standard_normal((ops.n, 1)) for _ in range(3))
        got = cosimo_filter(spec.down, spec.up, xd, xu, xj, 0.0, 0.0)
        np.testing.assert_allclose(got, xd + xu + 2.0 * xj, atol=1e-10)

    def test_large_t_converges_to_kernel_projection(self):
        ops, spec = self._level_one()
        rng = np.random.default_rng(14)
        xd, xu, xj = (rng.standard_normal((ops.n, 1)) for _ in range(3))

        def kernel_projector(tr):
            lam_max = max(tr.eigenvalues.max(), 1.0)
            cols = tr.eigenvectors[:, tr.eigenvalues <= 1e-10 * lam_max]
            return cols @ cols.T

        Pd = kernel_projector(spec.down)
        Pu = kernel_projector(spec.up)
        want = Pd @ xd + Pu @ xu + Pd @ xj + Pu @ xj
        got = cosimo_filter(spec.down, spec.up, xd, xu, xj, 1e3, 1e3)
        np.testing.assert_allclose(got, want, atol=1e-10)

    def test_matches_term_by_term_oracle(self):
        ops, spec = self._level_one(seed=15)
        rng = np.random.default_rng(16)
        xd, xu, xj = (rng.standard_normal((ops.n, 1)) for _ in range(3))
        t_d, t_u = 1.0, 2.0
        Ed = matrix_exp_oracle(ops.L_down, t_d)
        Eu = matrix_exp_oracle(ops.L_up, t_u)
        want = Ed @ xd + Eu @ xu + Ed @ xj + Eu @ xj
        got = cosimo_filter(spec.down, spec.up, xd, xu, xj, t_d, t_u)
        np.testing.assert_allclose(got, want, atol=1e-9)


class TestIntegrateDiffusion:
    def test_zero_time_returns_initial(self):
        rng = np.random.default_rng(17)
        L = random_psd(8, rng)
        x0 = rng.standard_normal(8)
        np.testing.assert_array_equal(integrate_diffusion(L, x0, 0.0, 0.1), x0)

    def test_kernel_is_fixed_point(self):
        c = build_complex(edges=[(0, 1), (0, 2), (1, 2)])
        L = hodge_operators(c, 0).L
        ones = np.ones(3)
        got = integrate_diffusion(L, ones, 2.0, 0.05)
        np.testing.assert_allclose(got, ones, atol=1e-12)

    def test_first_order_convergence(self):
        c = delaunay_complex(random_points(15, rng_seed=18))
        L = hodge_operators(c, 0).L
        rng = np.random.default_rng(19)
        x0 = rng.standard_normal(L.shape[0])
        exact = matrix_exp_oracle(L, 1.0) @ x0
        dts = [0.08 / 2**i for i in range(4)]
        errs = [np.max(np.abs(integrate_diffusion(L, x0, 1.0, dt) - exact)) for dt in dts]
        ratios = [a / b for a, b in zip(errs, errs[1:])]
        for r in ratios:
            assert 1.6 <= r <= 2.4  # halving dt roughly halves the error

    def test_unstable_dt_rejected_with_threshold(self):
        L = np.diag([10.0, 1.0])
        with pytest.raises(ValueError, match="need dt <"):
            integrate_diffusion(L, np.ones(2), 1.0, 0.5)


class TestSpectralIdentities:
    def test_dirichlet_identity_in_eigenbasis(self):
        rng = np.random.default_rng(20)
        c = delaunay_complex(random_points(20, rng_seed=21))
        for k in (0, 1):
            L = hodge_operators(c, k).L
            spec = eig_sym(L)
            for _ in range(20):
                x = rng.standard_normal(L.shape[0])
                xt = spec.eigenvectors.T @ x
                direct = float(x @ L @ x)
                spectral = float(np.sum(spec.eigenvalues * xt**2))
                assert abs(direct - spectral) <= 1e-9 * max(1.0, abs(direct))

    def test_heat_kernel_energy_contraction(self):
        rng = np.random.default_rng(22)
        c = delaunay_complex(random_points(15, rng_seed=23))
        L = hodge_operators(c, 0).L
        spec = eig_sym(L)
        tr = truncate(spec, spec.n)
        lam_max = spec.eigenvalues[-1]
        lam_pos = spec.eigenvalues[spec.eigenvalues > 1e-9 * lam_max][0]
        for _ in range(100):
            x = rng.standard_normal((L.shape[0], 1))
            ex = exp_filter(tr, 1.0, x)
            e_before = float(np.sum(x * (L @ x)))
            e_after = float(np.sum(ex * (L @ ex)))
            assert e_after <= np.exp(-2.0 * lam_pos) * e_before + 1e-12


class TestSpectrumCache:
    def test_round_trip_and_stale_rejection(self, tmp_path):
        rng = np.random.default_rng(24)
        L = random_psd(7, rng)
        spec = eig_sym(L, source="L_1,d")
        path = tmp_path / "spec.json"
        save_spectrum(spec, L, path)
        loaded = load_spectrum(path, L)
        assert loaded.source == "L_1,d"
        np.testing.assert_allclose(loaded.eigenvalues, spec.eigenvalues)
        np.testing.assert_allclose(loaded.eigenvectors, spec.eigenvectors)
        with pytest.raises(ValueError, match="stale"):
            load_spectrum(path, L + np.eye(7))
