"""Singular-value shrinkage of patch-group matrices."""

from dataclasses import dataclass

import numpy as np

__all__ = [
    "ShrinkageParams",
    "soft_threshold",
    "wnn_weights",
    "shrink_group",
    "shrink_groups",
]

EPSILON = 1e-16


@dataclass(frozen=True)
class ShrinkageParams:
    """Threshold settings.

    ``delta`` sets the noise scale (the rank penalty is ``delta**2 / 2``),
    ``b0`` scales the adaptive weights. ``mode`` is ``"weighted"`` for
    weighted nuclear norm shrinkage or ``"nuclear"`` for a constant
    threshold ``delta**2 / 2``.
    """

    delta: float = 3.0
    b0: float = 0.4
    epsilon: float = EPSILON
    mode: str = "weighted"

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError(f"delta must be > 0, got {self.delta}")
        if not self.b0 > 0:
            raise ValueError(f"b0 must be > 0, got {self.b0}")
        if self.mode not in ("weighted", "nuclear"):
            raise ValueError(f"mode must be 'weighted' or 'nuclear', got {self.mode!r}")


def soft_threshold(sigma, w):
    """``max(sigma - w, 0)``, elementwise."""
    return np.maximum(np.asarray(sigma, dtype=float) - w, 0.0)


def wnn_weights(singular_values, m, params):
    """Adaptive weights ``b0 * sqrt(m) / (sigma_hat + eps)`` where
    ``sigma_hat = sqrt(max(sigma**2 - m * delta**2, 0))`` estimates the
    noise-free singular value."""
    s = np.asarray(singular_values, dtype=float)
    sig_hat = np.sqrt(np.maximum(s * s - m * params.delta**2, 0.0))
    return params.b0 * np.sqrt(m) / (sig_hat + params.epsilon)


def _thresholds(s, m, params):
    if params.mode == "weighted":
        return wnn_weights(s, m, params)
    return np.full_like(s, 0.5 * params.delta**2)


def shrink_group(V, params):
    """Shrink the singular values of one ``n x m`` group matrix.

    Returns ``U diag(gamma) V^H`` with ``gamma_j = soft(sigma_j, w_j)``.
    """
    V = np.asarray(V)
    if V.ndim != 2:
        raise ValueError(f"expected a 2D group matrix, got shape {V.shape}")
    return shrink_groups(V[np.newaxis], params)[0]


def shrink_groups(stack, params):
    """Batched :func:`shrink_group` over the leading axes of ``(..., n, m)``.

    All-zero groups are returned as zeros without an SVD.
    """
    stack = np.asarray(stack)
    if not np.isfinite(stack).all():
        raise ValueError("group matrices contain non-finite entries")
    lead = stack.shape[:-2]
    n, m = stack.shape[-2:]
    flat = stack.reshape((-1, n, m))
    out = np.zeros(flat.shape, dtype=np.result_type(flat.dtype, np.complex128))
    live = np.flatnonzero(np.any(flat != 0, axis=(1, 2)))
    if len(live):
        U, s, Vh = np.linalg.svd(flat[live], full_matrices=False)
        gamma = soft_threshold(s, _thresholds(s, m, params))
        out[live] = (U * gamma[:, np.newaxis, :]) @ Vh
    return out.reshape(lead + (n, m))
