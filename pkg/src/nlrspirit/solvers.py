"""Nonlocal low-rank regularized SPIRiT reconstruction.

Two solvers share one stopping rule (relative change of the SOS image):

* :func:`solve_ne` alternates a patch-group low-rank step with a single pass
  of a three-step ADMM for the calibration-consistent least-squares problem.
* :func:`solve_admm` splits all terms at once (auxiliaries ``Z``, ``D_ci``
  and ``B``) with three multiplier updates.
"""

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import NamedTuple, Optional

import numpy as np

from .calibration import apply_G, build_delta_inverse, kernel_to_image_operator
from .fourier import as_multicoil, fft2c, ifft2c, sos_combine
from .lowrank import ShrinkageParams, shrink_groups
from .metrics import hfen, snr, ssim
from .patches import aggregate_Q, block_match, extract_groups, place_groups_adjoint

__all__ = [
    "ReconConfig",
    "IterationLog",
    "Reconstruction",
    "SolverDivergence",
    "default_stopping",
    "z_update",
    "x_update",
    "x_update_admm",
    "b_update",
    "multiplier_update",
    "compute_re",
    "solve_ne",
    "solve_admm",
    "reconstruct",
]

log = logging.getLogger(__name__)

# maximum iterations and RE tolerance for 2D and 1D undersampling
STOPPING_2D = (30, 1e-4)
STOPPING_1D = (80, 5e-5)


class SolverDivergence(RuntimeError):
    """Raised when the iterate stops being finite."""


@dataclass(frozen=True)
class ReconConfig:
    mu1: float = 1.0
    mu2: float = 1.0
    delta: float = 3.0
    beta: float = 0.3
    eta: float = math.sqrt(2.0)
    b0: float = 0.4
    patch_side: int = 6
    m: int = 43
    window: int = 40
    stride: int = 5
    T: int = 3
    K: int = 30
    tol: float = 1e-4
    mode: str = "weighted"
    solver: str = "ne"
    beta1: Optional[float] = None
    beta2: Optional[float] = None
    beta3: Optional[float] = None
    eta1: Optional[float] = None
    eta2: Optional[float] = None
    eta3: Optional[float] = None
    threads: int = field(default=1, compare=False)

    def __post_init__(self):
        for name in ("delta", "beta", "eta", "b0", "tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0, got {getattr(self, name)}")
        for name in ("mu1", "mu2"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0, got {getattr(self, name)}")
        for name in ("patch_side", "m", "window", "stride", "T", "K", "threads"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        for name in ("beta1", "beta2", "beta3", "eta1", "eta2", "eta3"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ValueError(f"{name} must be > 0, got {v}")
        if self.stride > self.patch_side:
            raise ValueError(f"stride {self.stride} exceeds patch side {self.patch_side}; pixels would go uncovered")
        if self.mode not in ("weighted", "nuclear"):
            raise ValueError(f"mode must be 'weighted' or 'nuclear', got {self.mode!r}")
        if self.solver not in ("ne", "admm"):
            raise ValueError(f"solver must be 'ne' or 'admm', got {self.solver!r}")

    @property
    def shrinkage(self):
        return ShrinkageParams(delta=self.delta, b0=self.b0, mode=self.mode)

    def admm_penalties(self):
        """``(beta1, beta2, beta3, eta1, eta2, eta3)`` with unset values taken from beta/eta."""
        b = [self.beta if v is None else v for v in (self.beta1, self.beta2, self.beta3)]
        e = [self.eta if v is None else v for v in (self.eta1, self.eta2, self.eta3)]
        return (*b, *e)

    def to_dict(self):
        d = asdict(self)
        d.pop("threads")
        return d


def default_stopping(mask):
    """``(K, tol)`` for the mask's pattern dimensionality."""
    return STOPPING_1D if mask.is_1d else STOPPING_2D


@dataclass
class IterationLog:
    """Per-iteration trace; metric lists are empty without a reference."""

    re: list = field(default_factory=list)
    elapsed_s: list = field(default_factory=list)
    snr_db: list = field(default_factory=list)
    hfen: list = field(default_factory=list)
    ssim: list = field(default_factory=list)
    converged: bool = False

    @property
    def n_iter(self):
        return len(self.re)

    @property
    def has_metrics(self):
        return len(self.snr_db) > 0

    def rows(self):
        for k in range(self.n_iter):
            row = {"iter": k + 1, "re": self.re[k], "elapsed_s": self.elapsed_s[k]}
            if self.has_metrics:
                row.update(snr_db=self.snr_db[k], hfen=self.hfen[k], ssim=self.ssim[k])
            yield row


class Reconstruction(NamedTuple):
    coils: np.ndarray
    image: np.ndarray
    log: IterationLog


def compute_re(x_new, x_old):
    """``||x_new - x_old|| / ||x_old||``."""
    x_new = np.asarray(x_new)
    x_old = np.asarray(x_old)
    if x_new.shape != x_old.shape:
        raise ValueError(f"shape mismatch: {x_new.shape} vs {x_old.shape}")
    den = np.linalg.norm(x_old)
    if den == 0:
        raise ValueError("relative error undefined for a zero previous image")
    return float(np.linalg.norm(x_new - x_old) / den)


def z_update(X, u_Z, delta_inv, beta):
    """``Z = Delta^{-1} (beta (X + u_Z))``."""
    return apply_G(delta_inv, beta * (as_multicoil(X) + u_Z))


def _fourier_solve(Y, mask, rhs_image, weight):
    """``F^H [(P^H Y + F rhs) / (P^H P + weight)]``."""
    den = mask.keep + weight
    if np.any(den == 0):
        raise ZeroDivisionError("x-update denominator vanishes on unsampled k-space")
    return ifft2c((np.asarray(Y) * mask.keep + fft2c(rhs_image)) / den)


def x_update(Y, mask, Z, u_Z, Q, beta, mu2):
    """Closed-form minimizer of
    ``||A X - Y||^2 + beta ||X - Z + u_Z||^2 + mu2 ||X - Q||^2``."""
    return _fourier_solve(Y, mask, beta * (Z - u_Z) + mu2 * Q, beta + mu2)


def x_update_admm(Y, mask, Z, u_Z, B, u_B, beta1, beta3):
    """Closed-form X step of the fully split ADMM variant."""
    return _fourier_solve(Y, mask, beta1 * (Z - u_Z) + beta3 * (B - u_B), beta1 + beta3)


def b_update(D, u_D, X, u_B, grouping, beta2, beta3):
    """Count-weighted average of placed-back groups and ``X + u_B``."""
    placed, counts = place_groups_adjoint(D - u_D, grouping)
    return (beta2 * placed + beta3 * (X + u_B)) / (beta2 * counts + beta3)


def multiplier_update(u, X, Z, eta):
    """``u + eta (X - Z)``."""
    return u + eta * (X - Z)


def _shrink_parallel(groups, params, threads):
    C, Np = groups.shape[:2]
    if threads <= 1:
        return shrink_groups(groups, params)
    flat = groups.reshape((C * Np,) + groups.shape[2:])
    bounds = np.linspace(0, len(flat), threads + 1).astype(int)
    chunks = [(a, b) for a, b in zip(bounds[:-1], bounds[1:]) if a < b]
    out = np.empty_like(flat, dtype=np.complex128)
    with ThreadPoolExecutor(max_workers=threads) as pool:
        for (a, b), res in zip(chunks, pool.map(lambda ab: shrink_groups(flat[ab[0] : ab[1]], params), chunks)):
            out[a:b] = res
    return out.reshape(groups.shape)


class _Tracker:
    """Shared RE / metric bookkeeping for both solvers."""

    def __init__(self, config, reference, roi):
        self.config = config
        self.reference = None if reference is None else np.asarray(reference, dtype=float)
        self.roi = roi
        self.log = IterationLog()
        self.t0 = time.perf_counter()

    def record(self, k, X, x_prev):
        if not np.isfinite(X).all():
            raise SolverDivergence(f"non-finite iterate at iteration {k + 1}")
        x = sos_combine(X)
        re = compute_re(x, x_prev)
        lg = self.log
        lg.re.append(re)
        lg.elapsed_s.append(time.perf_counter() - self.t0)
        if self.reference is not None:
            lg.snr_db.append(snr(self.reference, x, self.roi))
            lg.hfen.append(hfen(self.reference, x, self.roi))
            lg.ssim.append(ssim(self.reference, x, self.roi))
            log.debug("iter %d RE %.3e SNR %.3f", k + 1, re, lg.snr_db[-1])
        else:
            log.debug("iter %d RE %.3e", k + 1, re)
        return x, re < self.config.tol


def _prepare(Y, mask, kernel, config):
    Y = as_multicoil(Y)
    if Y.shape[1:] != mask.shape:
        raise ValueError(f"k-space shape {Y.shape[1:]} does not match mask {mask.shape}")
    if not np.isfinite(Y[:, mask.keep]).all():
        raise ValueError("measured k-space contains non-finite samples")
    if kernel.n_coils != Y.shape[0]:
        raise ValueError(f"kernel has {kernel.n_coils} coils, data has {Y.shape[0]}")
    Y = Y * mask.keep
    G = kernel_to_image_operator(kernel, *mask.shape)
    return Y, G


def _match(X, config):
    return block_match(
        X, config.patch_side, config.stride, config.window, config.m, threads=config.threads
    )


def solve_ne(Y, mask, kernel, config=None, reference=None, roi=None):
    """Reconstruct with the Nash-equilibrium split and one inner ADMM pass per iteration.

    Parameters
    ----------
    Y : ndarray, (C, Nx, Ny)
        Measured k-space (entries outside ``mask`` are ignored).
    mask : SamplingMask
    kernel : CalibKernel
    config : ReconConfig, optional
    reference, roi : ndarray, optional
        When ``reference`` is given, SNR/HFEN/SSIM are logged every iteration.

    Returns
    -------
    Reconstruction
        ``(coils, sos_image, log)``.
    """
    config = config or ReconConfig()
    Y, G = _prepare(Y, mask, kernel, config)
    delta_inv = build_delta_inverse(G, config.mu1, config.beta)
    params = config.shrinkage

    X = ifft2c(Y)
    u_Z = np.zeros_like(X)
    x_prev = sos_combine(X)
    tracker = _Tracker(config, reference, roi)
    grouping = None
    for k in range(config.K):
        if k % config.T == 0:
            grouping = _match(X, config)
        D = _shrink_parallel(extract_groups(X, grouping), params, config.threads)
        Q = aggregate_Q(D, grouping)
        Z = z_update(X, u_Z, delta_inv, config.beta)
        X_new = x_update(Y, mask, Z, u_Z, Q, config.beta, config.mu2)
        u_Z = multiplier_update(u_Z, X_new, Z, config.eta)
        X = X_new
        x_prev, done = tracker.record(k, X, x_prev)
        if done:
            tracker.log.converged = True
            break
    return Reconstruction(X, x_prev, tracker.log)


def solve_admm(Y, mask, kernel, config=None, reference=None, roi=None):
    """Reconstruct with the fully split ADMM variant (same outputs as :func:`solve_ne`)."""
    config = config or ReconConfig()
    Y, G = _prepare(Y, mask, kernel, config)
    beta1, beta2, beta3, eta1, eta2, eta3 = config.admm_penalties()
    delta_inv = build_delta_inverse(G, config.mu1, beta1)
    params = config.shrinkage

    X = ifft2c(Y)
    u_Z = np.zeros_like(X)
    u_B = np.zeros_like(X)
    u_D = None
    x_prev = sos_combine(X)
    tracker = _Tracker(config, reference, roi)
    grouping = None
    for k in range(config.K):
        if k % config.T == 0:
            # u_D is indexed by group slot and carries over when groups are refreshed
            grouping = _match(X, config)
        VX = extract_groups(X, grouping)
        if u_D is None:
            u_D = np.zeros_like(VX)
        Z = z_update(X, u_Z, delta_inv, beta1)
        D = _shrink_parallel(VX + u_D, params, config.threads)
        B = b_update(D, u_D, X, u_B, grouping, beta2, beta3)
        X_new = x_update_admm(Y, mask, Z, u_Z, B, u_B, beta1, beta3)
        u_Z = multiplier_update(u_Z, X_new, Z, eta1)
        u_D = u_D + eta2 * (extract_groups(X_new, grouping) - D)
        u_B = multiplier_update(u_B, X_new, B, eta3)
        X = X_new
        x_prev, done = tracker.record(k, X, x_prev)
        if done:
            tracker.log.converged = True
            break
    return Reconstruction(X, x_prev, tracker.log)


def reconstruct(Y, mask, kernel, config=None, reference=None, roi=None):
    """Dispatch on ``config.solver``."""
    config = config or ReconConfig()
    fn = solve_ne if config.solver == "ne" else solve_admm
    return fn(Y, mask, kernel, config, reference, roi)


def with_stopping_for(config, mask):
    """Copy of ``config`` with the pattern-dependent default ``K`` and ``tol``."""
    K, tol = default_stopping(mask)
    return replace(config, K=K, tol=tol)
