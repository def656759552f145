import warnings

import numpy as np
import pytest

from nlrspirit.calibration import (
    CalibKernel,
    CalibrationError,
    apply_G,
    apply_kspace_kernel,
    build_delta_inverse,
    calibrate,
    calibrate_from_mask,
    delta_blocks,
    kernel_to_image_operator,
)
from nlrspirit.fourier import SamplingMask, fft2c, ifft2c
from nlrspirit.sampling import MaskSpec, PhantomSpec, make_mask, make_phantom

from conftest import crandn


def random_kernel(rng, ks, C, scale=0.1):
    return CalibKernel(scale * crandn(rng, ks, ks, C, C))


def self_consistent_kspace(rng, C=3, n=24, ks=3):
    """k-space whose coils are exact linear combinations of shifted copies of a
    base signal, so every point is predicted by its neighbourhood."""
    base = crandn(rng, n, n)
    mix = crandn(rng, C, 3)
    shifts = [(0, 0), (1, 0), (0, 1)]
    sources = np.stack([np.roll(base, s, axis=(0, 1)) for s in shifts])
    return np.einsum("ck,kxy->cxy", mix, sources)


def test_calibration_reproduces_self_consistent_data(rng):
    K = self_consistent_kspace(rng)
    kernel = calibrate(K, ks=3, tikhonov_lambda=0.0)
    assert kernel.ks == 3 and kernel.n_coils == 3
    pred = apply_kspace_kernel(kernel, K)
    inner = (slice(None), slice(1, -1), slice(1, -1))
    err = np.linalg.norm(pred[inner] - K[inner]) / np.linalg.norm(K[inner])
    assert err < 1e-6
    assert kernel.rel_residuals.max() < 1e-6


def test_center_tap_of_target_is_excluded(rng):
    K = self_consistent_kspace(rng)
    kernel = calibrate(K, ks=3)
    for t in range(3):
        assert kernel.weights[1, 1, t, t] == 0


def test_default_lambda_is_small_ridge(rng):
    K = crandn(rng, 2, 16, 16)
    k0 = calibrate(K, ks=3, tikhonov_lambda=0.0)
    kd = calibrate(K, ks=3)
    np.testing.assert_allclose(kd.weights, k0.weights, atol=1e-4)


def test_underdetermined_acs_raises(rng):
    with pytest.raises(CalibrationError):
        calibrate(crandn(rng, 4, 6, 6), ks=5)


def test_small_acs_warns_and_flags(rng):
    with pytest.warns(UserWarning, match="small ACS"):
        kernel = calibrate(crandn(rng, 2, 7, 7), ks=3)
    assert kernel.flagged


def test_even_kernel_rejected(rng):
    with pytest.raises(ValueError):
        calibrate(crandn(rng, 2, 16, 16), ks=4)


def test_calibrate_from_mask_uses_acs_block(rng):
    K = crandn(rng, 2, 32, 32)
    keep = np.zeros((32, 32), bool)
    keep[10:22, 8:24] = True
    mask = SamplingMask(keep, (10, 22), (8, 24))
    a = calibrate_from_mask(K, mask, 3)
    b = calibrate(K[:, 10:22, 8:24], ks=3)
    np.testing.assert_array_equal(a.weights, b.weights)
    c = calibrate_from_mask(K, mask, 3, acs_size=(8, 8))
    d = calibrate(K[:, 12:20, 12:20], ks=3)
    np.testing.assert_array_equal(c.weights, d.weights)
    with pytest.raises(CalibrationError):
        calibrate_from_mask(K, mask, 3, acs_size=(20, 20))


@pytest.mark.parametrize("shape", [(16, 16), (15, 18), (9, 11)])
@pytest.mark.parametrize("ks", [3, 5])
def test_image_operator_matches_kspace_convolution(rng, shape, ks):
    C = 3
    kernel = random_kernel(rng, ks, C)
    x = crandn(rng, C, *shape)
    op = kernel_to_image_operator(kernel, *shape)
    got = apply_G(op, x)
    expect = ifft2c(apply_kspace_kernel(kernel, fft2c(x)))
    assert np.abs(got - expect).max() <= 1e-10 * np.abs(expect).max()


def test_kspace_kernel_brute_force(rng):
    kernel = random_kernel(rng, 3, 2)
    K = crandn(rng, 2, 7, 6)
    out = apply_kspace_kernel(kernel, K)
    p = (2, 4)
    expect = sum(
        kernel.weights[dx, dy, s, 1] * K[s, (p[0] + dx - 1) % 7, (p[1] + dy - 1) % 6]
        for dx in range(3)
        for dy in range(3)
        for s in range(2)
    )
    assert np.isclose(out[1, p[0], p[1]], expect, atol=1e-13)


def test_delta_inverse_is_inverse(rng):
    op = kernel_to_image_operator(random_kernel(rng, 5, 4, 0.3), 16, 16)
    inv = build_delta_inverse(op, 1.0, 0.3)
    prod = np.einsum("xyab,xybc->xyac", delta_blocks(op, 1.0, 0.3), inv.blocks)
    assert np.abs(prod - np.eye(4)).max() < 1e-12
    np.testing.assert_array_equal(inv.blocks, np.conj(np.swapaxes(inv.blocks, -1, -2)))


def test_delta_inverse_limits(rng):
    op = kernel_to_image_operator(random_kernel(rng, 3, 2), 8, 8)
    inv = build_delta_inverse(op, 0.0, 0.5)
    np.testing.assert_allclose(inv.blocks, np.broadcast_to(2 * np.eye(2), (8, 8, 2, 2)), atol=1e-15)
    with pytest.raises(ValueError):
        build_delta_inverse(op, 1.0, 0.0)
    with pytest.raises(ValueError):
        build_delta_inverse(op, -1.0, 0.3)


def test_operator_shape_checks(rng):
    op = kernel_to_image_operator(random_kernel(rng, 3, 2), 8, 8)
    with pytest.raises(ValueError):
        apply_G(op, np.zeros((3, 8, 8)))
    with pytest.raises(ValueError):
        kernel_to_image_operator(random_kernel(rng, 5, 2), 4, 4)
    with pytest.raises(ValueError):
        CalibKernel(np.zeros((4, 4, 2, 2)))


def test_phantom_calibration_is_consistent():
    coils, _ = make_phantom(PhantomSpec(64, 64, 4))
    mask = make_mask(MaskSpec("poisson2d", 3.0, (24, 24)), 64, 64)
    K = fft2c(coils)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        kernel = calibrate_from_mask(K, mask, 5)
    G = kernel_to_image_operator(kernel, 64, 64)
    rel = np.linalg.norm(apply_G(G, coils) - coils) / np.linalg.norm(coils)
    assert rel < 0.05
