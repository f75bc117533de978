# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled particle-grid kernels: cloud-in-cell deposit and trilinear gather.

Node ``(i, j, k)`` sits at ``origin + (i, j, k) * h`` and has flat index
``(i * ny + j) * nz + k``.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport floor, isnan, NAN

cnp.import_array()


def deposit_cic(const double[:, ::1] pos, const double[::1] w, const double[::1] origin,
                double h, shape, const long long[::1] fold, double[::1] out):
    """Accumulate particle weights onto ``out``; returns the number of rejected particles.

    Corner weights landing on nodes with ``fold == -1`` (or off-grid) reject the
    whole particle; other exterior corners are redirected through ``fold``.
    """
    cdef Py_ssize_t n = pos.shape[0]
    cdef long long nx = shape[0], ny = shape[1], nz = shape[2]
    cdef double inv_h = 1.0 / h
    cdef double ox = origin[0], oy = origin[1], oz = origin[2]
    cdef Py_ssize_t p
    cdef long long i0, j0, k0, di, dj, dk, node, tgt
    cdef double sx, sy, sz, fx, fy, fz, wx, wy, wz, wp
    cdef long long nbad = 0
    cdef int ok
    cdef long long tg[8]
    cdef double cw[8]
    cdef int c
    with nogil:
        for p in range(n):
            sx = (pos[p, 0] - ox) * inv_h
            sy = (pos[p, 1] - oy) * inv_h
            sz = (pos[p, 2] - oz) * inv_h
            i0 = <long long>floor(sx)
            j0 = <long long>floor(sy)
            k0 = <long long>floor(sz)
            fx = sx - i0
            fy = sy - j0
            fz = sz - k0
            if i0 < 0 or j0 < 0 or k0 < 0 or i0 + 1 >= nx or j0 + 1 >= ny or k0 + 1 >= nz:
                nbad += 1
                continue
            wp = w[p]
            ok = 1
            c = 0
            for di in range(2):
                wx = fx if di else 1.0 - fx
                for dj in range(2):
                    wy = fy if dj else 1.0 - fy
                    for dk in range(2):
                        wz = fz if dk else 1.0 - fz
                        node = ((i0 + di) * ny + (j0 + dj)) * nz + (k0 + dk)
                        tgt = fold[node]
                        cw[c] = wp * wx * wy * wz
                        tg[c] = tgt
                        if tgt < 0 and cw[c] != 0.0:
                            ok = 0
                        c += 1
            if not ok:
                nbad += 1
                continue
            for c in range(8):
                if cw[c] != 0.0:
                    out[tg[c]] += cw[c]
    return nbad


def gather_cic(const double[:, ::1] pos, const double[::1] origin, double h, shape,
               const double[:, ::1] nodal, double[:, ::1] out):
    """Trilinear interpolation of ``nodal`` (ncomp, nnodes) at ``pos``; returns rejects."""
    cdef Py_ssize_t n = pos.shape[0]
    cdef Py_ssize_t ncomp = nodal.shape[0]
    cdef long long nx = shape[0], ny = shape[1], nz = shape[2]
    cdef double inv_h = 1.0 / h
    cdef double ox = origin[0], oy = origin[1], oz = origin[2]
    cdef Py_ssize_t p, q
    cdef long long i0, j0, k0, di, dj, dk, node
    cdef double sx, sy, sz, fx, fy, fz, wx, wy, wz, wt, val
    cdef long long nbad = 0
    with nogil:
        for p in range(n):
            for q in range(ncomp):
                out[p, q] = 0.0
            sx = (pos[p, 0] - ox) * inv_h
            sy = (pos[p, 1] - oy) * inv_h
            sz = (pos[p, 2] - oz) * inv_h
            i0 = <long long>floor(sx)
            j0 = <long long>floor(sy)
            k0 = <long long>floor(sz)
            fx = sx - i0
            fy = sy - j0
            fz = sz - k0
            if i0 < 0 or j0 < 0 or k0 < 0 or i0 + 1 >= nx or j0 + 1 >= ny or k0 + 1 >= nz:
                nbad += 1
                for q in range(ncomp):
                    out[p, q] = NAN
                continue
            for di in range(2):
                wx = fx if di else 1.0 - fx
                for dj in range(2):
                    wy = fy if dj else 1.0 - fy
                    for dk in range(2):
                        wz = fz if dk else 1.0 - fz
                        wt = wx * wy * wz
                        if wt == 0.0:
                            continue
                        node = ((i0 + di) * ny + (j0 + dj)) * nz + (k0 + dk)
                        for q in range(ncomp):
                            val = nodal[q, node]
                            out[p, q] += wt * val
            for q in range(ncomp):
                if isnan(out[p, q]):
                    nbad += 1
                    break
    return nbad
