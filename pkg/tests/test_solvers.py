import math

import numpy as np
import pytest
from scipy.sparse.linalg import LinearOperator, cg

from nlrspirit.calibration import CalibKernel, build_delta_inverse, calibrate_from_mask, kernel_to_image_operator
from nlrspirit.fourier import SamplingMask, apply_encoding, apply_encoding_adjoint, fft2c, ifft2c, sos_combine
from nlrspirit.patches import block_match
from nlrspirit.sampling import MaskSpec, PhantomSpec, make_mask, make_phantom, phantom_support
from nlrspirit.solvers import (
    STOPPING_1D,
    STOPPING_2D,
    ReconConfig,
    SolverDivergence,
    b_update,
    compute_re,
    default_stopping,
    multiplier_update,
    reconstruct,
    solve_admm,
    solve_ne,
    with_stopping_for,
    x_update,
    x_update_admm,
    z_update,
)

from conftest import crandn


def random_mask(rng, n=16, frac=0.35):
    keep = rng.random((n, n)) < frac
    keep[n // 2 - 2 : n // 2 + 2, n // 2 - 2 : n // 2 + 2] = True
    return SamplingMask(keep, (n // 2 - 2, n // 2 + 2), (n // 2 - 2, n // 2 + 2))


def identity_kernel(C, ks=3):
    w = np.zeros((ks, ks, C, C), dtype=complex)
    for c in range(C):
        w[ks // 2, ks // 2, c, c] = 1.0
    return CalibKernel(w)


class TestXUpdate:
    def test_cg_oracle(self, rng):
        for _ in range(5):
            mask = random_mask(rng)
            C, shape = 2, (2, 16, 16)
            Y = apply_encoding(crandn(rng, *shape), mask)
            Z, u, Q = crandn(rng, *shape), crandn(rng, *shape), crandn(rng, *shape)
            beta, mu2 = 0.3, 1.0
            X = x_update(Y, mask, Z, u, Q, beta, mu2)

            def normal(v):
                v = v.reshape(shape)
                return (apply_encoding_adjoint(apply_encoding(v, mask), mask) + (beta + mu2) * v).ravel()

            rhs = (apply_encoding_adjoint(Y, mask) + beta * (Z - u) + mu2 * Q).ravel()
            op = LinearOperator((rhs.size, rhs.size), matvec=normal, dtype=complex)
            x_cg, info = cg(op, rhs, rtol=1e-13, atol=0, maxiter=500)
            assert info == 0
            res = np.linalg.norm(normal(X.ravel()) - rhs) / np.linalg.norm(rhs)
            assert res <= 1e-9
            assert np.linalg.norm(X.ravel() - x_cg) <= 1e-9 * np.linalg.norm(x_cg)

    def test_data_only_limit(self, rng):
        mask = SamplingMask.full(8, 8)
        Y = crandn(rng, 2, 8, 8)
        zero = np.zeros_like(Y)
        np.testing.assert_allclose(x_update(Y, mask, zero, zero, zero, 0.0, 0.0), ifft2c(Y), atol=1e-14)
        np.testing.assert_allclose(x_update_admm(Y, mask, zero, zero, zero, zero, 0.0, 0.0), ifft2c(Y), atol=1e-14)

    def test_prior_only_limit(self, rng):
        mask = SamplingMask(np.zeros((8, 8), bool), (0, 0), (0, 0))
        Q = crandn(rng, 2, 8, 8)
        zero = np.zeros_like(Q)
        np.testing.assert_allclose(x_update(zero, mask, zero, zero, Q, 0.0, 2.0), Q, atol=1e-14)

    def test_zero_denominator(self, rng):
        mask = random_mask(rng)
        zero = np.zeros((1, 16, 16), complex)
        with pytest.raises(ZeroDivisionError):
            x_update(zero, mask, zero, zero, zero, 0.0, 0.0)


class TestZUpdate:
    def test_zero_kernel(self, rng):
        X = crandn(rng, 3, 8, 8)
        G = kernel_to_image_operator(CalibKernel(np.zeros((3, 3, 3, 3))), 8, 8)
        Z = z_update(X, np.zeros_like(X), build_delta_inverse(G, 1.0, 0.3), 0.3)
        np.testing.assert_allclose(Z, (0.3 / 1.3) * X, atol=1e-14)

    def test_mu1_zero(self, rng):
        X, u = crandn(rng, 2, 8, 8), crandn(rng, 2, 8, 8)
        G = kernel_to_image_operator(CalibKernel(0.2 * crandn(rng, 3, 3, 2, 2)), 8, 8)
        np.testing.assert_allclose(z_update(X, u, build_delta_inverse(G, 0.0, 0.3), 0.3), X + u, atol=1e-13)

    def test_residual(self, rng):
        from nlrspirit.calibration import delta_blocks

        X, u = crandn(rng, 3, 10, 10), crandn(rng, 3, 10, 10)
        G = kernel_to_image_operator(CalibKernel(0.3 * crandn(rng, 5, 5, 3, 3)), 10, 10)
        Z = z_update(X, u, build_delta_inverse(G, 1.0, 0.3), 0.3)
        lhs = np.einsum("xyts,sxy->txy", delta_blocks(G, 1.0, 0.3), Z)
        np.testing.assert_allclose(lhs, 0.3 * (X + u), atol=1e-10)


def test_multiplier_update(rng):
    X, Z, u = crandn(rng, 2, 4, 4), crandn(rng, 2, 4, 4), crandn(rng, 2, 4, 4)
    np.testing.assert_array_equal(multiplier_update(u, X, X, 1.3), u)
    eta = math.sqrt(2)
    np.testing.assert_allclose(multiplier_update(0 * u, X, Z, eta), eta * (X - Z))
    twice = multiplier_update(multiplier_update(u, X, Z, eta), X, Z, eta)
    np.testing.assert_allclose(twice - u, 2 * eta * (X - Z), atol=1e-14)


def test_compute_re(rng):
    x = rng.random((8, 8)) + 0.1
    y = rng.random((8, 8))
    assert compute_re(x, x) == 0
    assert compute_re(2 * x, x) == pytest.approx(1.0)
    assert compute_re(y, x) == pytest.approx(np.linalg.norm(y - x) / np.linalg.norm(x), rel=1e-14)
    with pytest.raises(ValueError):
        compute_re(x, np.zeros_like(x))


def test_b_update_limits(rng):
    X = crandn(rng, 2, 24, 24)
    g = block_match(X, 4, 4, 12, 6)
    D = crandn(rng, 2, g.n_groups, g.n, g.m)
    uB = crandn(rng, 2, 24, 24)
    np.testing.assert_allclose(b_update(D, 0 * D, X, uB, g, 0.0, 0.3), X + uB, atol=1e-14)
    from nlrspirit.patches import extract_groups

    B = b_update(extract_groups(X, g), 0 * D, X, 0 * uB, g, 0.7, 0.3)
    np.testing.assert_allclose(B, X, atol=1e-12)


def test_config_validation():
    with pytest.raises(ValueError):
        ReconConfig(beta=0)
    with pytest.raises(ValueError):
        ReconConfig(K=0)
    with pytest.raises(ValueError):
        ReconConfig(solver="cg")
    with pytest.raises(ValueError):
        ReconConfig(eta2=-1.0)
    with pytest.raises(ValueError, match="uncovered"):
        ReconConfig(patch_side=4, stride=5)
    cfg = ReconConfig(beta2=0.5)
    assert cfg.admm_penalties() == (0.3, 0.5, 0.3, math.sqrt(2), math.sqrt(2), math.sqrt(2))
    assert "threads" not in cfg.to_dict()
    assert ReconConfig(threads=4) == ReconConfig(threads=1)


def test_default_stopping():
    assert default_stopping(make_mask(MaskSpec("poisson2d", 3.0), 64, 64)) == STOPPING_2D == (30, 1e-4)
    m1 = make_mask(MaskSpec("uniform1d", 3.0, (20,)), 64, 64)
    assert default_stopping(m1) == STOPPING_1D == (80, 5e-5)
    assert with_stopping_for(ReconConfig(), m1).K == 80


def test_fixed_point_consistency():
    # constant coil images: G = I holds for the identity kernel, every group is
    # rank one with a huge singular value, and full sampling gives A X = Y
    X = np.stack([1000.0 * np.ones((32, 32)), 700.0j * np.ones((32, 32))])
    mask = SamplingMask.full(32, 32)
    Y = apply_encoding(X, mask)
    cfg = ReconConfig(K=1, window=16, m=10)
    out = solve_ne(Y, mask, identity_kernel(2), cfg)
    assert compute_re(out.image, sos_combine(X)) < 1e-8


@pytest.fixture(scope="module")
def small_problem():
    coils, ref = make_phantom(PhantomSpec(32, 32, 3, seed=2, amplitude=100.0, edge_sigma=0.8))
    mask = make_mask(MaskSpec("poisson2d", 2.5, (12, 12), seed=1), 32, 32)
    Y = apply_encoding(coils, mask)
    kernel = calibrate_from_mask(Y, mask, 3)
    return Y, mask, kernel, ref, phantom_support(ref)


@pytest.mark.parametrize("solver", ["ne", "admm"])
def test_solver_runs_and_logs(small_problem, solver):
    Y, mask, kernel, ref, roi = small_problem
    cfg = ReconConfig(K=4, window=16, m=12, solver=solver)
    out = reconstruct(Y, mask, kernel, cfg, ref, roi)
    assert out.coils.shape == Y.shape and out.image.shape == (32, 32)
    assert out.log.n_iter == 4 and len(out.log.snr_db) == 4
    rows = list(out.log.rows())
    assert list(rows[0]) == ["iter", "re", "elapsed_s", "snr_db", "hfen", "ssim"]
    np.testing.assert_allclose(out.image, sos_combine(out.coils))
    no_ref = reconstruct(Y, mask, kernel, cfg)
    assert not no_ref.log.has_metrics
    assert list(next(no_ref.log.rows())) == ["iter", "re", "elapsed_s"]


@pytest.mark.parametrize("solver", [solve_ne, solve_admm])
def test_thread_and_repeat_determinism(small_problem, solver):
    Y, mask, kernel, _, _ = small_problem
    a = solver(Y, mask, kernel, ReconConfig(K=4, window=16, m=12, threads=1))
    b = solver(Y, mask, kernel, ReconConfig(K=4, window=16, m=12, threads=3))
    c = solver(Y, mask, kernel, ReconConfig(K=4, window=16, m=12, threads=1))
    assert a.coils.tobytes() == b.coils.tobytes() == c.coils.tobytes()
    assert a.log.re == b.log.re == c.log.re


def test_ne_improves_on_zero_fill(small_problem):
    Y, mask, kernel, ref, roi = small_problem
    from nlrspirit.metrics import snr

    out = solve_ne(Y, mask, kernel, ReconConfig(K=10, window=16, m=12), ref, roi)
    assert out.log.snr_db[-1] > snr(ref, sos_combine(ifft2c(Y)), roi) + 3


def test_input_validation(small_problem):
    Y, mask, kernel, _, _ = small_problem
    with pytest.raises(ValueError):
        solve_ne(Y[:, :16], mask, kernel)
    with pytest.raises(ValueError):
        solve_ne(Y[:2], mask, kernel)


def test_non_finite_data_rejected(small_problem):
    Y, mask, kernel, _, _ = small_problem
    bad = Y.copy()
    r, c = np.argwhere(mask.keep)[0]
    bad[0, r, c] = np.inf
    with pytest.raises(ValueError, match="non-finite"):
        solve_ne(bad, mask, kernel, ReconConfig(K=2, window=16, m=12))


def test_divergence_is_reported(small_problem, monkeypatch):
    import nlrspirit.solvers as S

    Y, mask, kernel, _, _ = small_problem
    monkeypatch.setattr(S, "aggregate_Q", lambda D, g: np.full(Y.shape, np.nan, complex))
    with pytest.raises(SolverDivergence):
        solve_ne(Y, mask, kernel, ReconConfig(K=2, window=16, m=12))
