"""SPIRiT kernel calibration and its per-pixel image-domain realization.

Kernel layout: ``weights[dx, dy, s, t]`` is the weight of source coil ``s``
at k-space offset ``(dx - h, dy - h)`` (``h = ks // 2``) when predicting
target coil ``t``::

    Khat[t, p] = sum_{dx, dy, s} weights[dx, dy, s, t] * K[s, p + (dx - h, dy - h)]

Image-domain blocks are stored as ``(Nx, Ny, C, C)`` with ``blocks[x, y, t, s]``
mapping input coil ``s`` to output coil ``t``.
"""

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .fourier import as_multicoil, ifft2c

__all__ = [
    "CalibKernel",
    "CalibrationError",
    "ImagePointwiseOperator",
    "calibrate",
    "calibrate_from_mask",
    "kernel_to_image_operator",
    "apply_G",
    "apply_kspace_kernel",
    "build_delta_inverse",
]

log = logging.getLogger(__name__)


class CalibrationError(ValueError):
    """The ACS block cannot determine the requested kernel."""


@dataclass(frozen=True, eq=False)
class CalibKernel:
    weights: np.ndarray
    residuals: np.ndarray = field(default_factory=lambda: np.zeros(0))
    rel_residuals: np.ndarray = field(default_factory=lambda: np.zeros(0))
    flagged: bool = False

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.complex128)
        if w.ndim != 4 or w.shape[0] != w.shape[1] or w.shape[2] != w.shape[3]:
            raise ValueError(f"kernel weights must be (ks, ks, C, C), got {w.shape}")
        if w.shape[0] % 2 != 1:
            raise ValueError(f"kernel size must be odd, got {w.shape[0]}")
        object.__setattr__(self, "weights", w)

    @property
    def ks(self):
        return self.weights.shape[0]

    @property
    def n_coils(self):
        return self.weights.shape[2]


@dataclass(frozen=True, eq=False)
class ImagePointwiseOperator:
    blocks: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.blocks, dtype=np.complex128)
        if b.ndim != 4 or b.shape[2] != b.shape[3]:
            raise ValueError(f"blocks must be (Nx, Ny, C, C), got {b.shape}")
        object.__setattr__(self, "blocks", b)

    @property
    def shape(self):
        return self.blocks.shape[:2]

    @property
    def n_coils(self):
        return self.blocks.shape[2]

    def __call__(self, x):
        return apply_G(self, x)


def _calibration_system(acs, ks):
    """Rows: every interior ACS point. Columns: (source coil, dx, dy)."""
    C = acs.shape[0]
    win = sliding_window_view(acs, (ks, ks), axis=(1, 2))  # (C, R, Cc, ks, ks)
    R, Cc = win.shape[1], win.shape[2]
    A = win.transpose(1, 2, 0, 3, 4).reshape(R * Cc, C * ks * ks)
    h = ks // 2
    b = acs[:, h : h + R, h : h + Cc].reshape(C, R * Cc)
    return A, b


def calibrate(acs_kspace, acs_region=None, ks=5, tikhonov_lambda=None):
    """Fit a SPIRiT kernel by ridge regression on the ACS block.

    Parameters
    ----------
    acs_kspace : ndarray, (C, Nx, Ny)
        k-space holding (at least) a fully sampled ACS block.
    acs_region : tuple of two (start, stop) pairs, optional
        ACS row and column ranges; default is the whole array.
    ks : int
        Odd kernel width.
    tikhonov_lambda : float, optional
        Ridge weight. Default ``1e-6 * ||A||_F^2 / rows`` per target coil.

    Returns
    -------
    CalibKernel
    """
    K = as_multicoil(acs_kspace)
    if ks < 1 or ks % 2 != 1:
        raise ValueError(f"kernel size must be a positive odd integer, got {ks}")
    if acs_region is not None:
        (r0, r1), (c0, c1) = acs_region
        K = K[:, r0:r1, c0:c1]
    C, ar, ac = K.shape
    unknowns = ks * ks * C - 1
    rows = max(ar - ks + 1, 0) * max(ac - ks + 1, 0)
    if rows < unknowns:
        raise CalibrationError(
            f"ACS {ar}x{ac} gives {rows} equations for {unknowns} unknowns at ks={ks}"
        )
    flagged = rows < 2 * unknowns
    if flagged:
        warnings.warn(
            f"small ACS {ar}x{ac} for ks={ks}: {rows} equations for {unknowns} unknowns",
            stacklevel=2,
        )

    A, b = _calibration_system(K, ks)
    h = ks // 2
    center = h * ks + h
    weights = np.zeros((C, ks * ks, C), dtype=np.complex128)  # (s, offset, t)
    residuals = np.empty(C)
    rel = np.empty(C)
    for t in range(C):
        cols = np.ones(C * ks * ks, dtype=bool)
        cols[t * ks * ks + center] = False
        At = A[:, cols]
        AhA = At.conj().T @ At
        lam = tikhonov_lambda
        if lam is None:
            lam = 1e-6 * np.real(np.trace(AhA)) / At.shape[0]
        w = np.linalg.solve(AhA + lam * np.eye(AhA.shape[0]), At.conj().T @ b[t])
        full = np.zeros(C * ks * ks, dtype=np.complex128)
        full[cols] = w
        weights[:, :, t] = full.reshape(C, ks * ks)
        residuals[t] = np.linalg.norm(At @ w - b[t])
        bn = np.linalg.norm(b[t])
        rel[t] = residuals[t] / bn if bn > 0 else 0.0
    log.debug("calibration relative residuals: %s", rel)
    w4 = weights.reshape(C, ks, ks, C).transpose(1, 2, 0, 3)
    return CalibKernel(w4, residuals, rel, flagged)


def calibrate_from_mask(kspace, mask, ks=5, tikhonov_lambda=None, acs_size=None):
    """Calibrate from the mask's ACS block, or a centred ``acs_size`` sub-block of it."""
    rows, cols = mask.acs_rows, mask.acs_cols
    if acs_size is not None:
        ar, ac = (int(v) for v in np.broadcast_to(np.ravel(acs_size), (2,)))
        if ar > rows[1] - rows[0] or ac > cols[1] - cols[0]:
            raise CalibrationError(f"ACS size {acs_size} exceeds the mask ACS block")
        rc, cc = (rows[0] + rows[1]) // 2, (cols[0] + cols[1]) // 2
        rows = (rc - ar // 2, rc - ar // 2 + ar)
        cols = (cc - ac // 2, cc - ac // 2 + ac)
    return calibrate(kspace, (rows, cols), ks, tikhonov_lambda)


def apply_kspace_kernel(kernel, kspace):
    """Circular k-space application of the kernel (the reference definition of G)."""
    K = as_multicoil(kspace)
    w = kernel.weights
    ks = kernel.ks
    h = ks // 2
    out = np.zeros_like(K)
    for dx in range(ks):
        for dy in range(ks):
            shifted = np.roll(K, shift=(h - dx, h - dy), axis=(1, 2))
            out += np.einsum("st,sxy->txy", w[dx, dy], shifted)
    return out


def kernel_to_image_operator(kernel, nx, ny):
    """Per-pixel ``C x C`` image-domain blocks equivalent to circular k-space
    application of ``kernel`` under the unitary centred FFT."""
    w = kernel.weights
    ks, C = kernel.ks, kernel.n_coils
    if ks > nx or ks > ny:
        raise ValueError(f"kernel size {ks} exceeds grid {nx}x{ny}")
    h = ks // 2
    # correlation weights flipped into a convolution kernel centred at (nx//2, ny//2)
    pad = np.zeros((C, C, nx, ny), dtype=np.complex128)  # (t, s, x, y)
    cx, cy = nx // 2, ny // 2
    flipped = w[::-1, ::-1].transpose(3, 2, 0, 1)
    pad[:, :, cx - h : cx - h + ks, cy - h : cy - h + ks] = flipped
    blocks = np.sqrt(nx * ny) * ifft2c(pad)
    return ImagePointwiseOperator(np.ascontiguousarray(blocks.transpose(2, 3, 0, 1)))


def apply_G(op, x):
    """Pixelwise ``C x C`` matrix-vector product."""
    x = as_multicoil(x)
    if x.shape[1:] != op.shape or x.shape[0] != op.n_coils:
        raise ValueError(
            f"image shape {x.shape} does not match operator ({op.n_coils}, {op.shape})"
        )
    return np.einsum("xyts,sxy->txy", op.blocks, x)


def build_delta_inverse(op_G, mu1, beta):
    """Blocks of ``(mu1 (G - I)^H (G - I) + beta I)^{-1}``, exactly Hermitian."""
    if not beta > 0:
        raise ValueError(f"beta must be > 0, got {beta}")
    if mu1 < 0:
        raise ValueError(f"mu1 must be >= 0, got {mu1}")
    C = op_G.n_coils
    eye = np.eye(C)
    M = op_G.blocks - eye
    delta = mu1 * np.einsum("xyst,xysu->xytu", M.conj(), M) + beta * eye
    inv = np.linalg.inv(delta)
    inv = 0.5 * (inv + np.conj(np.swapaxes(inv, -1, -2)))
    return ImagePointwiseOperator(inv)


def delta_blocks(op_G, mu1, beta):
    """The forward ``Delta`` blocks (for residual checks)."""
    C = op_G.n_coils
    M = op_G.blocks - np.eye(C)
    return mu1 * np.einsum("xyst,xysu->xytu", M.conj(), M) + beta * np.eye(C)
