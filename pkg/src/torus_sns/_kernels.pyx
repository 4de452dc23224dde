# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled direct triad convolution ``S_k = sum_{l+m=k} (k . u_l) v_m``."""

import numpy as np

cimport cython
from libc.stdlib cimport free, malloc


def triad_sum_cube(const double complex[:, :, :, :, ::1] uc,
                   const double complex[:, :, :, :, ::1] vc,
                   const long[:, ::1] reps,
                   int N):
    """``uc, vc``: (B, L, L, L, 3) full-lattice cubes (index = k + N)."""
    cdef Py_ssize_t B = uc.shape[0]
    cdef Py_ssize_t M = reps.shape[0]
    out_arr = np.zeros((B, M, 3), dtype=np.complex128)
    cdef double complex[:, :, ::1] out = out_arr
    cdef Py_ssize_t b, i
    cdef long kx, ky, kz, lx, ly, lz, mx, my, mz
    cdef long lx0, lx1, ly0, ly1, lz0, lz1
    cdef double complex dot, s0, s1, s2
    for b in range(B):
        for i in range(M):
            kx = reps[i, 0]
            ky = reps[i, 1]
            kz = reps[i, 2]
            lx0 = max(-N, kx - N)
            lx1 = min(N, kx + N)
            ly0 = max(-N, ky - N)
            ly1 = min(N, ky + N)
            lz0 = max(-N, kz - N)
            lz1 = min(N, kz + N)
            s0 = 0
            s1 = 0
            s2 = 0
            for lx in range(lx0, lx1 + 1):
                mx = kx - lx
                for ly in range(ly0, ly1 + 1):
                    my = ky - ly
                    for lz in range(lz0, lz1 + 1):
                        mz = kz - lz
                        dot = (kx * uc[b, lx + N, ly + N, lz + N, 0]
                               + ky * uc[b, lx + N, ly + N, lz + N, 1]
                               + kz * uc[b, lx + N, ly + N, lz + N, 2])
                        s0 = s0 + dot * vc[b, mx + N, my + N, mz + N, 0]
                        s1 = s1 + dot * vc[b, mx + N, my + N, mz + N, 1]
                        s2 = s2 + dot * vc[b, mx + N, my + N, mz + N, 2]
            out[b, i, 0] = s0
            out[b, i, 1] = s1
            out[b, i, 2] = s2
    return out_arr


def triad_sum_lanes(const double[:, :, :, :, ::1] ur, const double[:, :, :, :, ::1] ui,
                    const double[:, :, :, :, ::1] vr, const double[:, :, :, :, ::1] vi,
                    const long[:, ::1] reps, int N):
    """Batch-innermost variant: inputs (L, L, L, 3, B) real/imag planes.

    Returns ``(out_re, out_im)`` of shape (M, 3, B).  The innermost loop runs
    over the batch, so it vectorises.
    """
    cdef Py_ssize_t B = ur.shape[4]
    cdef Py_ssize_t M = reps.shape[0]
    ore_arr = np.zeros((M, 3, B))
    oim_arr = np.zeros((M, 3, B))
    cdef double[:, :, ::1] ore = ore_arr
    cdef double[:, :, ::1] oim = oim_arr
    cdef Py_ssize_t i, b, c
    cdef long kx, ky, kz, lx, ly, lz
    cdef Py_ssize_t ax, ay, az, mx, my, mz
    cdef double fx, fy, fz, dr, di
    cdef double* dre = <double*> malloc(B * sizeof(double))
    cdef double* dim = <double*> malloc(B * sizeof(double))
    try:
        for i in range(M):
            kx = reps[i, 0]
            ky = reps[i, 1]
            kz = reps[i, 2]
            fx = kx
            fy = ky
            fz = kz
            for lx in range(max(-N, kx - N), min(N, kx + N) + 1):
                ax = lx + N
                mx = kx - lx + N
                for ly in range(max(-N, ky - N), min(N, ky + N) + 1):
                    ay = ly + N
                    my = ky - ly + N
                    for lz in range(max(-N, kz - N), min(N, kz + N) + 1):
                        az = lz + N
                        mz = kz - lz + N
                        for b in range(B):
                            dre[b] = fx * ur[ax, ay, az, 0, b] + fy * ur[ax, ay, az, 1, b] + fz * ur[ax, ay, az, 2, b]
                            dim[b] = fx * ui[ax, ay, az, 0, b] + fy * ui[ax, ay, az, 1, b] + fz * ui[ax, ay, az, 2, b]
                        for c in range(3):
                            for b in range(B):
                                ore[i, c, b] += dre[b] * vr[mx, my, mz, c, b] - dim[b] * vi[mx, my, mz, c, b]
                                oim[i, c, b] += dre[b] * vi[mx, my, mz, c, b] + dim[b] * vr[mx, my, mz, c, b]
    finally:
        free(dre)
        free(dim)
    return ore_arr, oim_arr
