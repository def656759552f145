"""Pure numpy implementations of the hot loops.

Accumulation orders mirror ``_ckernels.pyx`` exactly so both backends
produce bitwise identical groupings, aggregates and masks.
"""

import numpy as np

BACKEND = "python"


def window_bounds(pos, limit, window):
    """Inclusive range of candidate top-left coordinates along one axis."""
    half = window // 2
    lo = max(0, pos - half)
    hi = min(limit, pos - half + window - 1)
    return lo, hi


def block_match_coil(img, ref_rows, ref_cols, patch, window, m):
    """Group the ``m`` nearest patches for every reference on one coil image.

    Returns an int64 array of shape ``(len(ref_rows), m, 2)`` holding member
    top-left coordinates; member 0 is always the reference.
    """
    img = np.ascontiguousarray(img, dtype=np.complex128)
    nx, ny = img.shape
    lr, lc = nx - patch, ny - patch
    re = img.real
    im = img.imag
    out = np.empty((len(ref_rows), m, 2), dtype=np.int64)
    for g, (r, c) in enumerate(zip(ref_rows, ref_cols)):
        r0, r1 = window_bounds(r, lr, window)
        c0, c1 = window_bounds(c, lc, window)
        hr, hc = r1 - r0 + 1, c1 - c0 + 1
        acc = np.zeros((hr, hc))
        for dx in range(patch):
            for dy in range(patch):
                dre = re[r0 + dx : r1 + dx + 1, c0 + dy : c1 + dy + 1] - re[r + dx, c + dy]
                dim = im[r0 + dx : r1 + dx + 1, c0 + dy : c1 + dy + 1] - im[r + dx, c + dy]
                acc += dre * dre + dim * dim
        flat = acc.ravel()
        flat[(r - r0) * hc + (c - c0)] = np.inf
        order = np.argsort(flat, kind="stable")[: m - 1]
        out[g, 0] = (r, c)
        out[g, 1:, 0] = r0 + order // hc
        out[g, 1:, 1] = c0 + order % hc
    return out


def _flat_indices(members, patch, ny):
    dx, dy = np.meshgrid(np.arange(patch), np.arange(patch), indexing="ij")
    offs = (dx * ny + dy).ravel()
    base = members[..., 0] * ny + members[..., 1]
    # (group, member, entry) ordering
    return base[..., None] + offs


def extract_coil(img, members, patch):
    """Gather ``(Np, n, m)`` patch-group matrices from one coil image."""
    nx, ny = img.shape
    idx = _flat_indices(members, patch, ny)
    return np.ascontiguousarray(img.ravel()[idx].transpose(0, 2, 1))


def scatter_add_coil(groups, members, patch, out, counts=None):
    """Accumulate group columns back into ``out`` (and overlap into ``counts``) in place."""
    nx, ny = out.shape
    idx = _flat_indices(members, patch, ny).ravel()
    vals = np.ascontiguousarray(np.asarray(groups).transpose(0, 2, 1)).ravel()
    flat = out.reshape(-1)
    np.add.at(flat, idx, vals)
    if counts is not None:
        np.add.at(counts.reshape(-1), idx, 1.0)


def poisson_darts(cand_rows, cand_cols, radius, nx, ny):
    """Dart throwing: accept candidates (in the given order) farther than ``radius``
    from every previously accepted one. Returns accepted candidate positions."""
    rad2 = radius * radius
    reach = int(np.ceil(radius))
    occ = np.zeros((nx, ny), dtype=bool)
    ii, jj = np.meshgrid(np.arange(-reach, reach + 1), np.arange(-reach, reach + 1), indexing="ij")
    disk = (ii * ii + jj * jj) < rad2
    accepted = []
    for k in range(len(cand_rows)):
        r = int(cand_rows[k])
        c = int(cand_cols[k])
        a0, a1 = max(0, r - reach), min(nx, r + reach + 1)
        b0, b1 = max(0, c - reach), min(ny, c + reach + 1)
        sub = occ[a0:a1, b0:b1]
        d = disk[a0 - r + reach : a1 - r + reach, b0 - c + reach : b1 - c + reach]
        if not (sub & d).any():
            occ[r, c] = True
            accepted.append(k)
    return np.asarray(accepted, dtype=np.int64)
