"""Nonlocal patch grouping: block matching, group extraction and placement.

Patch-group matrices are stacked as a ``(C, Np, n, m)`` complex array:
coil, reference patch, pixel within the patch (row-major), group member.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import kernels
from .fourier import as_multicoil

__all__ = [
    "PatchGrouping",
    "reference_lattice",
    "block_match",
    "extract_groups",
    "place_groups_adjoint",
    "aggregate_Q",
]


def reference_lattice(size, patch, stride):
    """Top-left coordinates ``0, stride, 2*stride, ...`` plus the last valid
    position so that the final patch touches the border."""
    last = size - patch
    pos = np.arange(0, last + 1, stride, dtype=np.int64)
    if pos[-1] != last:
        pos = np.append(pos, last)
    return pos


@dataclass(frozen=True, eq=False)
class PatchGrouping:
    """Block-matching result for every coil.

    Attributes
    ----------
    patch_side : int
    shape : tuple
        Image shape ``(Nx, Ny)``.
    refs : ndarray, (Np, 2)
        Reference top-left coordinates (shared by all coils).
    members : ndarray, (C, Np, m, 2)
        Member top-left coordinates; ``members[:, :, 0] == refs``.
    """

    patch_side: int
    shape: tuple
    refs: np.ndarray
    members: np.ndarray

    def __post_init__(self):
        refs = np.asarray(self.refs, dtype=np.int64)
        members = np.asarray(self.members, dtype=np.int64)
        if members.ndim != 4 or members.shape[-1] != 2 or members.shape[1] != len(refs):
            raise ValueError(f"members must be (C, Np, m, 2) aligned with refs, got {members.shape}")
        p = int(self.patch_side)
        nx, ny = (int(v) for v in self.shape)
        if (members < 0).any() or (members[..., 0] > nx - p).any() or (members[..., 1] > ny - p).any():
            raise ValueError("group member patch extends beyond the image")
        if not np.array_equal(members[:, :, 0], np.broadcast_to(refs, members.shape[:2] + (2,))):
            raise ValueError("the first member of every group must be its reference patch")
        for a in (refs, members):
            a.setflags(write=False)
        object.__setattr__(self, "refs", refs)
        object.__setattr__(self, "members", members)
        object.__setattr__(self, "patch_side", p)
        object.__setattr__(self, "shape", (nx, ny))

    @property
    def n_coils(self):
        return self.members.shape[0]

    @property
    def n_groups(self):
        return self.members.shape[1]

    @property
    def m(self):
        return self.members.shape[2]

    @property
    def n(self):
        return self.patch_side**2

    @cached_property
    def counts(self):
        """Per-coil number of group members covering each pixel, ``(C, Nx, Ny)``."""
        out = np.zeros((self.n_coils,) + self.shape)
        dummy = np.zeros(self.shape, dtype=np.complex128)
        zeros = np.zeros((self.n_groups, self.n, self.m), dtype=np.complex128)
        for c in range(self.n_coils):
            kernels.scatter_add_coil(zeros, self.members[c], self.patch_side, dummy, out[c])
        out.setflags(write=False)
        return out

    def same_as(self, other):
        return (
            self.patch_side == other.patch_side
            and self.shape == other.shape
            and np.array_equal(self.members, other.members)
        )


def _pool_map(fn, items, threads):
    if threads is None or threads <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def block_match(x, patch_side=6, stride=5, window=40, m=43, threads=1):
    """Exhaustive windowed block matching, independently per coil.

    For every reference on the stride lattice, candidates are all patches whose
    top-left lies in the ``window`` x ``window`` box centred on the reference
    (clipped to the image). Members are the reference followed by the ``m - 1``
    nearest candidates by squared complex Euclidean distance, ties broken by
    row-major candidate order.
    """
    x = as_multicoil(x)
    C, nx, ny = x.shape
    p = int(patch_side)
    if p < 1 or p > min(nx, ny):
        raise ValueError(f"patch side {p} must be in [1, {min(nx, ny)}]")
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    if window < p:
        raise ValueError(f"window {window} smaller than patch side {p}")
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    rows = reference_lattice(nx, p, stride)
    cols = reference_lattice(ny, p, stride)
    fewest = _fewest_candidates(rows, cols, nx - p, ny - p, window)
    if fewest < m:
        raise ValueError(f"window {window} holds only {fewest} candidate patches, need m={m}")
    rr, cc = (a.ravel() for a in np.meshgrid(rows, cols, indexing="ij"))
    refs = np.stack([rr, cc], axis=1)

    # split references across workers; output placement is by index so the
    # result does not depend on scheduling
    n_chunks = max(1, int(threads or 1))
    bounds = np.linspace(0, len(rr), n_chunks + 1).astype(int)
    jobs = [(c, bounds[j], bounds[j + 1]) for c in range(C) for j in range(n_chunks) if bounds[j] < bounds[j + 1]]

    def run(job):
        c, a, b = job
        return kernels.block_match_coil(x[c], rr[a:b], cc[a:b], p, window, m)

    parts = _pool_map(run, jobs, threads)
    members = np.empty((C, len(rr), m, 2), dtype=np.int64)
    for (c, a, b), res in zip(jobs, parts):
        members[c, a:b] = res
    return PatchGrouping(p, (nx, ny), refs, members)


def _fewest_candidates(rows, cols, lr, lc, window):
    def span(pos, limit):
        lo, hi = kernels.window_bounds(int(pos), limit, window)
        return hi - lo + 1

    return min(span(r, lr) for r in rows) * min(span(c, lc) for c in cols)


def _check_image(x, grouping):
    if x.shape[1:] != grouping.shape or x.shape[0] != grouping.n_coils:
        raise ValueError(
            f"image shape {x.shape} does not match grouping ({grouping.n_coils}, {grouping.shape})"
        )


def extract_groups(x, grouping):
    """Materialize every patch-group matrix ``V_ci(X)`` as a ``(C, Np, n, m)`` array."""
    x = as_multicoil(x)
    _check_image(x, grouping)
    return np.stack(
        [kernels.extract_coil(x[c], grouping.members[c], grouping.patch_side) for c in range(x.shape[0])]
    )


def _check_groups(groups, grouping, shape):
    groups = np.asarray(groups, dtype=np.complex128)
    expect = (grouping.n_coils, grouping.n_groups, grouping.n, grouping.m)
    if groups.shape != expect:
        raise ValueError(f"groups shape {groups.shape} does not match grouping {expect}")
    if tuple(shape)[-2:] != grouping.shape:
        raise ValueError(f"shape {shape} does not match grouping {grouping.shape}")
    return groups


def place_groups_adjoint(groups, grouping, shape=None):
    """Adjoint of :func:`extract_groups`: scatter-add every column back to its patch.

    Returns ``(image, counts)`` where ``counts`` is the per-pixel number of
    contributions.
    """
    shape = grouping.shape if shape is None else shape
    groups = _check_groups(groups, grouping, shape)
    out = np.zeros((grouping.n_coils,) + grouping.shape, dtype=np.complex128)
    for c in range(grouping.n_coils):
        kernels.scatter_add_coil(groups[c], grouping.members[c], grouping.patch_side, out[c])
    return out, grouping.counts


def aggregate_Q(groups, grouping, shape=None):
    """Overlap-averaged image from (denoised) patch groups."""
    summed, counts = place_groups_adjoint(groups, grouping, shape)
    if (counts < 1).any():
        raise ValueError("some pixels are not covered by any group member")
    return summed / counts
