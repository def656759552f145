# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops; semantics and floating-point order match ``_pykernels``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport ceil
from libc.stdlib cimport malloc, free

cnp.import_array()

BACKEND = "cython"


cdef inline void _bounds(Py_ssize_t pos, Py_ssize_t limit, Py_ssize_t window,
                         Py_ssize_t *lo, Py_ssize_t *hi) noexcept nogil:
    cdef Py_ssize_t half = window // 2
    lo[0] = pos - half if pos - half > 0 else 0
    hi[0] = pos - half + window - 1 if pos - half + window - 1 < limit else limit


def window_bounds(pos, limit, window):
    cdef Py_ssize_t lo, hi
    _bounds(pos, limit, window, &lo, &hi)
    return lo, hi


def block_match_coil(img, ref_rows, ref_cols, Py_ssize_t patch, Py_ssize_t window, Py_ssize_t m):
    cdef const double[:, ::1] re = np.ascontiguousarray(np.real(img), dtype=np.float64)
    cdef const double[:, ::1] im = np.ascontiguousarray(np.imag(img), dtype=np.float64)
    cdef const cnp.int64_t[::1] rr = np.ascontiguousarray(ref_rows, dtype=np.int64)
    cdef const cnp.int64_t[::1] cc = np.ascontiguousarray(ref_cols, dtype=np.int64)
    cdef Py_ssize_t nref = rr.shape[0]
    cdef Py_ssize_t nx = re.shape[0], ny = re.shape[1]
    cdef Py_ssize_t lr = nx - patch, lc = ny - patch
    out_arr = np.empty((nref, m, 2), dtype=np.int64)
    cdef cnp.int64_t[:, :, ::1] out = out_arr
    cdef Py_ssize_t g, r, c, r0, r1, c0, c1, hc, a, b, dx, dy, j, pos, keep
    cdef Py_ssize_t cand
    cdef double acc, dre, dim
    cdef Py_ssize_t nbest = m - 1
    cdef double *best_d = <double *> malloc((nbest + 1) * sizeof(double))
    cdef Py_ssize_t *best_i = <Py_ssize_t *> malloc((nbest + 1) * sizeof(Py_ssize_t))
    if best_d == NULL or best_i == NULL:
        free(best_d)
        free(best_i)
        raise MemoryError()
    try:
        with nogil:
            for g in range(nref):
                r = rr[g]
                c = cc[g]
                _bounds(r, lr, window, &r0, &r1)
                _bounds(c, lc, window, &c0, &c1)
                hc = c1 - c0 + 1
                keep = 0
                for a in range(r0, r1 + 1):
                    for b in range(c0, c1 + 1):
                        if a == r and b == c:
                            continue
                        acc = 0.0
                        for dx in range(patch):
                            for dy in range(patch):
                                dre = re[a + dx, b + dy] - re[r + dx, c + dy]
                                dim = im[a + dx, b + dy] - im[r + dx, c + dy]
                                acc = acc + (dre * dre + dim * dim)
                        cand = (a - r0) * hc + (b - c0)
                        if keep == nbest and (nbest == 0 or not (acc < best_d[nbest - 1])):
                            continue
                        # stable insertion: after every entry with distance <= acc
                        pos = keep if keep < nbest else nbest - 1
                        while pos > 0 and best_d[pos - 1] > acc:
                            best_d[pos] = best_d[pos - 1]
                            best_i[pos] = best_i[pos - 1]
                            pos -= 1
                        best_d[pos] = acc
                        best_i[pos] = cand
                        if keep < nbest:
                            keep += 1
                out[g, 0, 0] = r
                out[g, 0, 1] = c
                for j in range(keep):
                    out[g, j + 1, 0] = r0 + best_i[j] // hc
                    out[g, j + 1, 1] = c0 + best_i[j] % hc
    finally:
        free(best_d)
        free(best_i)
    return out_arr


def extract_coil(img, members, Py_ssize_t patch):
    cdef const double complex[:, ::1] x = np.ascontiguousarray(img, dtype=np.complex128)
    cdef const cnp.int64_t[:, :, ::1] mem = np.ascontiguousarray(members, dtype=np.int64)
    cdef Py_ssize_t ng = mem.shape[0], m = mem.shape[1], n = patch * patch
    out_arr = np.empty((ng, n, m), dtype=np.complex128)
    cdef double complex[:, :, ::1] out = out_arr
    cdef Py_ssize_t g, j, dx, dy, r, c
    with nogil:
        for g in range(ng):
            for j in range(m):
                r = mem[g, j, 0]
                c = mem[g, j, 1]
                for dx in range(patch):
                    for dy in range(patch):
                        out[g, dx * patch + dy, j] = x[r + dx, c + dy]
    return out_arr


def scatter_add_coil(groups, members, Py_ssize_t patch, out, counts=None):
    cdef const double complex[:, :, :] gr = np.asarray(groups, dtype=np.complex128)
    cdef const cnp.int64_t[:, :, ::1] mem = np.ascontiguousarray(members, dtype=np.int64)
    cdef double complex[:, ::1] o = out
    cdef double[:, ::1] cnt
    cdef bint with_counts = counts is not None
    if with_counts:
        cnt = counts
    cdef Py_ssize_t ng = mem.shape[0], m = mem.shape[1]
    cdef Py_ssize_t g, j, dx, dy, r, c
    with nogil:
        for g in range(ng):
            for j in range(m):
                r = mem[g, j, 0]
                c = mem[g, j, 1]
                for dx in range(patch):
                    for dy in range(patch):
                        o[r + dx, c + dy] = o[r + dx, c + dy] + gr[g, dx * patch + dy, j]
                        if with_counts:
                            cnt[r + dx, c + dy] += 1.0


def poisson_darts(cand_rows, cand_cols, double radius, Py_ssize_t nx, Py_ssize_t ny):
    cdef const cnp.int64_t[::1] cr = np.ascontiguousarray(cand_rows, dtype=np.int64)
    cdef const cnp.int64_t[::1] ccol = np.ascontiguousarray(cand_cols, dtype=np.int64)
    cdef Py_ssize_t ncand = cr.shape[0]
    occ_arr = np.zeros((nx, ny), dtype=np.uint8)
    cdef cnp.uint8_t[:, ::1] occ = occ_arr
    acc_arr = np.empty(ncand, dtype=np.int64)
    cdef cnp.int64_t[::1] accepted = acc_arr
    cdef Py_ssize_t reach = <Py_ssize_t> ceil(radius)
    cdef double rad2 = radius * radius
    cdef Py_ssize_t k, r, c, a, b, nacc = 0
    cdef bint ok
    with nogil:
        for k in range(ncand):
            r = cr[k]
            c = ccol[k]
            ok = True
            for a in range(r - reach if r - reach > 0 else 0, r + reach + 1 if r + reach + 1 < nx else nx):
                for b in range(c - reach if c - reach > 0 else 0, c + reach + 1 if c + reach + 1 < ny else ny):
                    if occ[a, b] and <double> ((a - r) * (a - r) + (b - c) * (b - c)) < rad2:
                        ok = False
                        break
                if not ok:
                    break
            if ok:
                occ[r, c] = 1
                accepted[nacc] = k
                nacc += 1
    return acc_arr[:nacc].copy()
