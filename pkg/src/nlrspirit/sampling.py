"""Undersampling patterns and a synthetic multicoil phantom."""

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import kernels
from .fourier import SamplingMask

__all__ = [
    "MaskSpec",
    "PhantomSpec",
    "make_mask",
    "make_phantom",
    "uniform_columns",
    "coil_sensitivities",
    "phantom_support",
    "shepp_logan",
    "PATTERNS",
]

PATTERNS = ("poisson2d", "uniform1d", "gaussian1d", "full")
AF_TOLERANCE = 0.05
COIL_WIDTH = 0.6
EDGE_SIGMA = 2.0
SUPPORT_FRACTION = 0.01


@dataclass(frozen=True)
class MaskSpec:
    """Sampling pattern request.

    ``acs_size`` is ``(rows, cols)`` for ``poisson2d`` and a column count for
    the 1D patterns. ``gaussian_std`` is the column-density standard deviation
    as a fraction of ``Ny``.
    """

    pattern: str = "poisson2d"
    af_target: float = 5.0
    acs_size: object = (24, 24)
    seed: int = 0
    gaussian_std: float = 0.2

    def __post_init__(self):
        if self.pattern not in PATTERNS:
            raise ValueError(f"unknown pattern {self.pattern!r}; expected one of {PATTERNS}")
        if not self.af_target >= 1:
            raise ValueError(f"af_target must be >= 1, got {self.af_target}")


@dataclass(frozen=True)
class PhantomSpec:
    nx: int = 64
    ny: int = 64
    n_coils: int = 4
    noise_sigma: float = 0.0
    seed: int = 0
    amplitude: float = 2000.0
    edge_sigma: float = EDGE_SIGMA

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1:
            raise ValueError("phantom grid must be at least 1x1")
        if self.n_coils < 1:
            raise ValueError(f"n_coils must be >= 1, got {self.n_coils}")
        if self.noise_sigma < 0:
            raise ValueError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if self.edge_sigma < 0:
            raise ValueError(f"edge_sigma must be >= 0, got {self.edge_sigma}")


def _centered(n, size):
    start = n // 2 - size // 2
    return start, start + size


def _acs_ranges(spec, nx, ny):
    if spec.pattern in ("uniform1d", "gaussian1d"):
        lines = int(np.ravel(spec.acs_size)[0])
        return (0, nx), _centered(ny, lines)
    rows, cols = (int(v) for v in np.broadcast_to(np.ravel(spec.acs_size), (2,)))
    return _centered(nx, rows), _centered(ny, cols)


def uniform_columns(ny, step, acs_cols=(0, 0)):
    """Column indices kept by a uniform 1D pattern with (possibly fractional)
    spacing ``step``, anchored on the centre column, plus the ACS columns."""
    center = ny // 2
    j = np.arange(-int(np.ceil(center / step)) - 1, int(np.ceil(ny / step)) + 2)
    cols = np.round(center + j * step).astype(np.int64)
    cols = cols[(cols >= 0) & (cols < ny)]
    return np.union1d(cols, np.arange(*acs_cols))


def _check_af(mask, af_target):
    af = mask.acceleration
    if abs(af - af_target) > AF_TOLERANCE * af_target:
        raise ValueError(f"realized AF {af:.3f} is not within 5% of target {af_target}")
    return mask


def make_mask(spec, nx, ny):
    """Build a :class:`SamplingMask` for ``spec`` on an ``nx`` x ``ny`` grid.

    Raises ``ValueError`` when the ACS block alone exceeds the sample budget
    or the realized acceleration misses the target by more than 5%.
    """
    if spec.pattern == "full":
        return SamplingMask.full(nx, ny)

    acs_rows, acs_cols = _acs_ranges(spec, nx, ny)
    if acs_rows[1] - acs_rows[0] > nx or acs_cols[1] - acs_cols[0] > ny or min(acs_rows + acs_cols) < 0:
        raise ValueError(f"ACS size {spec.acs_size} does not fit in {nx}x{ny}")
    budget = int(round(nx * ny / spec.af_target))
    n_acs = (acs_rows[1] - acs_rows[0]) * (acs_cols[1] - acs_cols[0])
    if n_acs > budget:
        raise ValueError(
            f"infeasible AF {spec.af_target}: ACS holds {n_acs} samples, budget is {budget}"
        )
    rng = np.random.default_rng(spec.seed)
    keep = np.zeros((nx, ny), dtype=bool)
    keep[slice(*acs_rows), slice(*acs_cols)] = True
    info = {"pattern": spec.pattern, "af_target": float(spec.af_target), "seed": int(spec.seed)}

    if spec.pattern == "uniform1d":
        target_cols = ny / spec.af_target
        lo, hi = 1.0, float(ny)
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            if len(uniform_columns(ny, mid, acs_cols)) >= target_cols:
                lo = mid
            else:
                hi = mid
        cands = [uniform_columns(ny, s, acs_cols) for s in (lo, hi)]
        cols = min(cands, key=lambda c: abs(len(c) - target_cols))
        keep[:, cols] = True
        info["step"] = float(lo if cols is cands[0] else hi)

    elif spec.pattern == "gaussian1d":
        n_cols = int(round(ny / spec.af_target))
        acs_set = np.arange(*acs_cols)
        free = np.setdiff1d(np.arange(ny), acs_set)
        need = n_cols - len(acs_set)
        if need > len(free):
            raise ValueError("gaussian1d: not enough columns outside the ACS block")
        if need > 0:
            std = spec.gaussian_std * ny
            p = np.exp(-0.5 * ((free - ny // 2) / std) ** 2)
            picked = rng.choice(free, size=need, replace=False, p=p / p.sum())
            keep[:, picked] = True

    elif spec.pattern == "poisson2d":
        outside = np.flatnonzero(~keep.ravel())
        order = rng.permutation(outside)
        rows, cols = order // ny, order % ny
        need = budget - n_acs
        lo, hi = 0.5, float(np.hypot(nx, ny))
        for _ in range(40):
            mid = 0.5 * (lo + hi)
            if len(kernels.poisson_darts(rows, cols, mid, nx, ny)) >= need:
                lo = mid
            else:
                hi = mid
        accepted = kernels.poisson_darts(rows, cols, lo, nx, ny)[:need]
        keep[rows[accepted], cols[accepted]] = True
        info["radius"] = float(lo)

    mask = SamplingMask(keep, acs_rows, acs_cols, info)
    return _check_af(mask, spec.af_target)


# (intensity, semi-axis a, semi-axis b, x0, y0, angle in degrees)
_SHEPP_LOGAN = (
    (1.0, 0.69, 0.92, 0.0, 0.0, 0.0),
    (-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0),
    (-0.2, 0.11, 0.31, 0.22, 0.0, -18.0),
    (-0.2, 0.16, 0.41, -0.22, 0.0, 18.0),
    (0.1, 0.21, 0.25, 0.0, 0.35, 0.0),
    (0.1, 0.046, 0.046, 0.0, 0.1, 0.0),
    (0.1, 0.046, 0.046, 0.0, -0.1, 0.0),
    (0.1, 0.046, 0.023, -0.08, -0.605, 0.0),
    (0.1, 0.023, 0.023, 0.0, -0.606, 0.0),
    (0.1, 0.023, 0.046, 0.06, -0.605, 0.0),
)


def _grid(nx, ny):
    y = np.linspace(1.0, -1.0, nx)
    x = np.linspace(-1.0, 1.0, ny)
    return np.meshgrid(y, x, indexing="ij")


def shepp_logan(nx, ny, edge_sigma=EDGE_SIGMA):
    """Modified Shepp-Logan phantom with a smooth in-object intensity modulation.

    Edges are softened by a Gaussian of ``edge_sigma`` pixels (0 keeps them
    sharp), which keeps the object representable on a coarse grid.
    """
    yy, xx = _grid(nx, ny)
    img = np.zeros((nx, ny))
    for amp, a, b, x0, y0, deg in _SHEPP_LOGAN:
        t = np.deg2rad(deg)
        u = (xx - x0) * np.cos(t) + (yy - y0) * np.sin(t)
        v = -(xx - x0) * np.sin(t) + (yy - y0) * np.cos(t)
        img[(u / a) ** 2 + (v / b) ** 2 <= 1.0] += amp
    img = np.clip(img, 0.0, None)
    smooth = 1.0 + 0.15 * np.cos(np.pi * 0.6 * xx) * np.cos(np.pi * 0.4 * yy)
    img = img * smooth
    if edge_sigma > 0:
        img = np.clip(ndimage.gaussian_filter(img, edge_sigma, mode="constant"), 0.0, None)
    return img


def coil_sensitivities(nx, ny, n_coils, seed=0):
    """Smooth complex receive profiles normalized so their root sum of squares is 1.

    Coils sit on a ring just outside the field of view with Gaussian magnitude
    falloff and a gentle linear phase. A single coil is the constant map 1.
    """
    if n_coils == 1:
        return np.ones((1, nx, ny), dtype=np.complex128)
    rng = np.random.default_rng(seed)
    yy, xx = _grid(nx, ny)
    maps = np.empty((n_coils, nx, ny), dtype=np.complex128)
    for c in range(n_coils):
        ang = 2 * np.pi * c / n_coils
        cx, cy = 1.3 * np.cos(ang), 1.3 * np.sin(ang)
        mag = np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * COIL_WIDTH**2))
        phase = 0.5 * np.pi * (np.cos(ang) * yy - np.sin(ang) * xx) + rng.uniform(-np.pi, np.pi)
        maps[c] = mag * np.exp(1j * phase)
    return maps / np.sqrt(np.sum(np.abs(maps) ** 2, axis=0))


def make_phantom(spec):
    """Return ``(coil_images, reference)`` for a :class:`PhantomSpec`.

    ``coil_images`` is ``(C, Nx, Ny)`` complex; ``reference`` is the real
    magnitude image, equal to the SOS of the noiseless coil images.
    """
    ref = spec.amplitude * shepp_logan(spec.nx, spec.ny, spec.edge_sigma)
    sens = coil_sensitivities(spec.nx, spec.ny, spec.n_coils, spec.seed)
    coils = sens * ref
    if spec.noise_sigma > 0:
        rng = np.random.default_rng([spec.seed, 1])
        scale = spec.noise_sigma / np.sqrt(2.0)
        coils = coils + scale * (
            rng.standard_normal(coils.shape) + 1j * rng.standard_normal(coils.shape)
        )
    return coils, ref


def phantom_support(reference):
    """Object support of a phantom reference: pixels above 1% of the maximum."""
    reference = np.asarray(reference)
    return reference > SUPPORT_FRACTION * np.max(reference)
