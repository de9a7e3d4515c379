# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled pair-loss kernel. Same contract as ``cosca._pairs_py.pair_loss``."""
import numpy as np
from libc.math cimport sqrt


def pair_loss(const double[:, ::1] fa, const double[:, ::1] fb,
              const Py_ssize_t[::1] ia, const Py_ssize_t[::1] ib,
              const unsigned char[::1] same, double margin, bint with_grad=True):
    cdef Py_ssize_t npairs = ia.shape[0]
    cdef Py_ssize_t d = fa.shape[1]
    cdef Py_ssize_t p, k, i, j
    cdef double total = 0.0, sq, diff, dist, hinge, coef
    cdef double[:, ::1] ga_v
    cdef double[:, ::1] gb_v
    if ia.shape[0] != ib.shape[0] or same.shape[0] != npairs or fb.shape[1] != d:
        raise ValueError("inconsistent pair-kernel inputs")
    ga = np.zeros((fa.shape[0], d)) if with_grad else None
    gb = np.zeros((fb.shape[0], d)) if with_grad else None
    if with_grad:
        ga_v = ga
        gb_v = gb
    with nogil:
        for p in range(npairs):
            i = ia[p]
            j = ib[p]
            sq = 0.0
            for k in range(d):
                diff = fa[i, k] - fb[j, k]
                sq = sq + diff * diff
            if same[p]:
                total = total + sq
                coef = 2.0
            else:
                dist = sqrt(sq)
                hinge = margin - dist
                if hinge <= 0.0:
                    continue
                total = total + hinge * hinge
                if dist <= 0.0:
                    continue
                coef = -2.0 * hinge / dist
            if with_grad:
                for k in range(d):
                    diff = coef * (fa[i, k] - fb[j, k])
                    ga_v[i, k] = ga_v[i, k] + diff
                    gb_v[j, k] = gb_v[j, k] - diff
    return total, ga, gb
