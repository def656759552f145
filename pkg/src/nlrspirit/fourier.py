"""Centered unitary Fourier transforms and the undersampled encoding operator.

Multicoil arrays are stored coil-major as ``(C, Nx, Ny)`` complex arrays;
single images are ``(Nx, Ny)``. Every transform acts on the last two axes.
"""

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "SamplingMask",
    "fft2c",
    "ifft2c",
    "apply_encoding",
    "apply_encoding_adjoint",
    "sos_combine",
    "as_multicoil",
]

_AXES = (-2, -1)


def as_multicoil(x):
    """Return ``x`` as a complex128 ``(C, Nx, Ny)`` array, promoting 2D input."""
    x = np.asarray(x)
    if x.ndim == 2:
        x = x[np.newaxis]
    if x.ndim != 3:
        raise ValueError(f"expected (C, Nx, Ny) or (Nx, Ny) array, got shape {x.shape}")
    if x.shape[0] < 1 or x.shape[1] < 1 or x.shape[2] < 1:
        raise ValueError(f"empty multicoil array of shape {x.shape}")
    return x.astype(np.complex128, copy=False)


def fft2c(x):
    """Unitary 2D DFT with the zero frequency at index ``(Nx//2, Ny//2)``."""
    x = np.asarray(x)
    if x.ndim < 2 or x.size == 0:
        raise ValueError(f"fft2c needs a non-empty array with >= 2 dims, got {x.shape}")
    return np.fft.fftshift(
        np.fft.fft2(np.fft.ifftshift(x, axes=_AXES), axes=_AXES, norm="ortho"),
        axes=_AXES,
    )


def ifft2c(k):
    """Inverse of :func:`fft2c` (also its adjoint)."""
    k = np.asarray(k)
    if k.ndim < 2 or k.size == 0:
        raise ValueError(f"ifft2c needs a non-empty array with >= 2 dims, got {k.shape}")
    return np.fft.fftshift(
        np.fft.ifft2(np.fft.ifftshift(k, axes=_AXES), axes=_AXES, norm="ortho"),
        axes=_AXES,
    )


@dataclass(frozen=True, eq=False)
class SamplingMask:
    """Binary k-space sampling pattern with a fully sampled calibration block.

    Parameters
    ----------
    keep : ndarray of bool, shape (Nx, Ny)
        True where k-space is acquired.
    acs_rows, acs_cols : tuple of int
        Half-open ``(start, stop)`` index ranges of the ACS block.
    info : dict
        Generator metadata (pattern name, Poisson-disc radius, ...).
    """

    keep: np.ndarray
    acs_rows: tuple
    acs_cols: tuple
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        keep = np.asarray(self.keep, dtype=bool)
        if keep.ndim != 2 or keep.size == 0:
            raise ValueError(f"mask must be a non-empty 2D array, got shape {keep.shape}")
        keep = keep.copy()
        keep.setflags(write=False)
        object.__setattr__(self, "keep", keep)
        r0, r1 = (int(v) for v in self.acs_rows)
        c0, c1 = (int(v) for v in self.acs_cols)
        nx, ny = keep.shape
        if not (0 <= r0 <= r1 <= nx and 0 <= c0 <= c1 <= ny):
            raise ValueError(f"ACS ranges {self.acs_rows}, {self.acs_cols} outside {keep.shape}")
        object.__setattr__(self, "acs_rows", (r0, r1))
        object.__setattr__(self, "acs_cols", (c0, c1))
        if not keep[r0:r1, c0:c1].all():
            raise ValueError("ACS region is not fully sampled")

    @property
    def shape(self):
        return self.keep.shape

    @property
    def M(self):
        """Number of acquired k-space locations."""
        return int(np.count_nonzero(self.keep))

    @property
    def acceleration(self):
        m = self.M
        return np.inf if m == 0 else self.keep.size / m

    @property
    def acs_slices(self):
        return slice(*self.acs_rows), slice(*self.acs_cols)

    @property
    def is_1d(self):
        """True when every phase-encode column is either fully acquired or empty."""
        cols = self.keep.any(axis=0)
        return bool(np.array_equal(self.keep, np.broadcast_to(cols, self.keep.shape)))

    def __eq__(self, other):
        if not isinstance(other, SamplingMask):
            return NotImplemented
        return (
            np.array_equal(self.keep, other.keep)
            and self.acs_rows == other.acs_rows
            and self.acs_cols == other.acs_cols
        )

    @classmethod
    def full(cls, nx, ny):
        return cls(np.ones((nx, ny), dtype=bool), (0, nx), (0, ny), {"pattern": "full"})


def _check_shapes(arr, mask):
    if arr.shape[-2:] != mask.shape:
        raise ValueError(f"array shape {arr.shape[-2:]} does not match mask shape {mask.shape}")


def apply_encoding(x, mask):
    """``A X``: per-coil centered FFT followed by the sampling projection."""
    x = as_multicoil(x)
    _check_shapes(x, mask)
    return fft2c(x) * mask.keep


def apply_encoding_adjoint(y, mask):
    """``A^H Y``: zero unsampled entries, then per-coil inverse FFT."""
    y = as_multicoil(y)
    _check_shapes(y, mask)
    return ifft2c(y * mask.keep)


def sos_combine(x):
    """Root sum of squares over the coil axis."""
    x = as_multicoil(x)
    return np.sqrt(np.sum(x.real**2 + x.imag**2, axis=0))
