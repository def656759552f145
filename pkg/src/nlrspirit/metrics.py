"""Image quality metrics computed on magnitude images over a region of interest."""

from dataclasses import asdict, dataclass

import numpy as np
from scipy import ndimage

__all__ = ["MetricReport", "snr", "hfen", "ssim", "log_kernel", "evaluate"]

SSIM_C1 = 0.01
SSIM_C2 = 0.03


@dataclass(frozen=True)
class MetricReport:
    snr_db: float
    hfen: float
    ssim: float

    def as_dict(self):
        return asdict(self)


def _prepare(x, xhat, roi):
    x = np.asarray(x, dtype=float)
    xhat = np.asarray(xhat, dtype=float)
    if x.shape != xhat.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {xhat.shape}")
    if roi is None:
        roi = np.ones(x.shape, dtype=bool)
    roi = np.asarray(roi, dtype=bool)
    if roi.shape != x.shape:
        raise ValueError(f"ROI shape {roi.shape} does not match image shape {x.shape}")
    if not roi.any():
        raise ValueError("empty ROI")
    return x, xhat, roi


def snr(x, xhat, roi=None):
    """``10 log10(Var(x) / MSE(x, xhat))`` over the ROI, in dB.

    An exact reconstruction returns ``inf``.
    """
    x, xhat, roi = _prepare(x, xhat, roi)
    err = np.mean((x[roi] - xhat[roi]) ** 2)
    if err == 0:
        return np.inf
    return float(10.0 * np.log10(np.var(x[roi]) / err))


def log_kernel(size=15, sigma=1.5):
    """Zero-sum Laplacian-of-Gaussian kernel (same construction as MATLAB's
    ``fspecial('log', size, sigma)``)."""
    half = (size - 1) / 2.0
    yy, xx = np.mgrid[-half : half + 1, -half : half + 1]
    r2 = xx**2 + yy**2
    g = np.exp(-r2 / (2.0 * sigma**2))
    g /= g.sum()
    h = g * (r2 - 2.0 * sigma**2) / sigma**4
    return h - h.sum() / h.size


def hfen(x, xhat, roi=None, size=15, sigma=1.5):
    """Relative L2 error of LoG-filtered images over the ROI."""
    x, xhat, roi = _prepare(x, xhat, roi)
    k = log_kernel(size, sigma)
    fx = ndimage.correlate(x, k, mode="reflect")
    fxh = ndimage.correlate(xhat, k, mode="reflect")
    den = np.linalg.norm(fx[roi])
    if den == 0:
        raise ValueError("filtered reference has zero norm on the ROI")
    return float(np.linalg.norm(fxh[roi] - fx[roi]) / den)


def ssim(x, xhat, roi=None, c1=SSIM_C1, c2=SSIM_C2, c1_twice=False):
    """Global-statistics SSIM on images scaled by the reference maximum.

    With ``c1_twice=True`` the second denominator factor uses ``c1``
    instead of ``c2``; that variant does not give 1 for identical images.
    """
    x, xhat, roi = _prepare(x, xhat, roi)
    peak = np.max(np.abs(x))
    if peak > 0:
        x = x / peak
        xhat = xhat / peak
    a, b = x[roi], xhat[roi]
    ua, ub = a.mean(), b.mean()
    va, vb = a.var(), b.var()
    cov = np.mean((a - ua) * (b - ub))
    c_den = c1 if c1_twice else c2
    num = (2 * ua * ub + c1) * (2 * cov + c2)
    den = (ua**2 + ub**2 + c1) * (va + vb + c_den)
    return float(num / den)


def evaluate(x, xhat, roi=None):
    return MetricReport(snr(x, xhat, roi), hfen(x, xhat, roi), ssim(x, xhat, roi))
