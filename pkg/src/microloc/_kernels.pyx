# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops: greedy net selection and Radon line-integral kernels.

The pure-Python equivalents live in ``_kernels_py``; both implementations
consume identical precomputed geometry so results agree to rounding order.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport floor, sqrt

cnp.import_array()


def greedy_select(cnp.ndarray[cnp.float64_t, ndim=2] cands, double min_sep):
    """Scan candidate points in order, admit those >= min_sep from all admitted.

    Uses a uniform cell hash with cell size min_sep, so only the 3^n
    neighboring cells are searched per candidate.
    """
    cdef Py_ssize_t m = cands.shape[0]
    cdef Py_ssize_t n = cands.shape[1]
    cdef double sep2 = min_sep * min_sep
    cdef dict cells = {}
    cdef list admitted = []
    cdef cnp.ndarray[cnp.float64_t, ndim=2] pts = np.empty((m, n), dtype=np.float64)
    cdef Py_ssize_t i, j, d, na = 0
    cdef long cx, cy, ox, oy
    cdef double dist2, diff
    cdef tuple key
    cdef list bucket

    for i in range(m):
        cx = <long>floor(cands[i, 0] / min_sep)
        cy = <long>floor(cands[i, 1] / min_sep) if n > 1 else 0
        ok = True
        for ox in range(cx - 1, cx + 2):
            for oy in range(cy - 1, cy + 2):
                key = (ox, oy)
                bucket = <list>cells.get(key)
                if bucket is None:
                    continue
                for j in bucket:
                    dist2 = 0.0
                    for d in range(n):
                        diff = cands[i, d] - pts[j, d]
                        dist2 += diff * diff
                    if dist2 < sep2:
                        ok = False
                        break
                if not ok:
                    break
            if not ok:
                break
        if ok:
            for d in range(n):
                pts[na, d] = cands[i, d]
            key = (cx, cy)
            bucket = <list>cells.get(key)
            if bucket is None:
                cells[key] = [na]
            else:
                bucket.append(na)
            admitted.append(i)
            na += 1
    return np.asarray(admitted, dtype=np.int64)


def radon_gather(cnp.ndarray[cnp.float64_t, ndim=2] img,
                 cnp.ndarray[cnp.int64_t, ndim=2] ix,
                 cnp.ndarray[cnp.int64_t, ndim=2] iy,
                 cnp.ndarray[cnp.float64_t, ndim=2] wx,
                 cnp.ndarray[cnp.float64_t, ndim=2] wy,
                 double dt):
    """Line integrals by bilinear gathering: one row of offsets for one angle."""
    cdef Py_ssize_t S = ix.shape[0]
    cdef Py_ssize_t T = ix.shape[1]
    cdef Py_ssize_t N = img.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.zeros(S, dtype=np.float64)
    cdef Py_ssize_t s, t
    cdef long a, b
    cdef double u, v, acc

    for s in range(S):
        acc = 0.0
        for t in range(T):
            a = ix[s, t]
            b = iy[s, t]
            u = wx[s, t]
            v = wy[s, t]
            acc += ((1.0 - u) * (1.0 - v) * img[a, b]
                    + u * (1.0 - v) * img[a + 1, b]
                    + (1.0 - u) * v * img[a, b + 1]
                    + u * v * img[a + 1, b + 1])
        out[s] = acc * dt
    return out


def radon_matrix_block(cnp.ndarray[cnp.int64_t, ndim=2] ix,
                       cnp.ndarray[cnp.int64_t, ndim=2] iy,
                       cnp.ndarray[cnp.float64_t, ndim=2] wx,
                       cnp.ndarray[cnp.float64_t, ndim=2] wy,
                       double dt, Py_ssize_t npix_axis):
    """Dense (offsets x pixels) forward matrix for one angle."""
    cdef Py_ssize_t S = ix.shape[0]
    cdef Py_ssize_t T = ix.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out = np.zeros(
        (S, npix_axis * npix_axis), dtype=np.float64)
    cdef Py_ssize_t s, t
    cdef long a, b
    cdef double u, v

    for s in range(S):
        for t in range(T):
            a = ix[s, t]
            b = iy[s, t]
            u = wx[s, t]
            v = wy[s, t]
            out[s, a * npix_axis + b] += (1.0 - u) * (1.0 - v) * dt
            out[s, (a + 1) * npix_axis + b] += u * (1.0 - v) * dt
            out[s, a * npix_axis + b + 1] += (1.0 - u) * v * dt
            out[s, (a + 1) * npix_axis + b + 1] += u * v * dt
    return out
