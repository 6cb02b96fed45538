# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops; same contracts as ``zapfdr._kernels_py``."""

import numpy as np

from libc.math cimport exp, fabs, floor, rint, INFINITY
from libc.float cimport DBL_EPSILON


cdef struct Hyp:
    double cl, al, bl, cr, ar, br
    Py_ssize_t n, p
    const double* u
    const double* lu
    const double* l1


cdef inline double _a(const Hyp* h, Py_ssize_t j) noexcept nogil:
    return 1.0 / (1.0 + exp(h.cl + h.al * h.lu[j] + h.bl * h.l1[j])
                  + exp(h.cr + h.ar * h.lu[j] + h.br * h.l1[j]))


cdef inline double _slope(const Hyp* h, Py_ssize_t j) noexcept nogil:
    cdef double u = h.u[j]
    cdef double el = exp(h.cl + h.al * h.lu[j] + h.bl * h.l1[j])
    cdef double er = exp(h.cr + h.ar * h.lu[j] + h.br * h.l1[j])
    return el * (h.al / u - h.bl / (1.0 - u)) + er * (h.ar / u - h.br / (1.0 - u))


cdef inline double _run_a(const Hyp* h, Py_ssize_t j) noexcept nogil:
    return _a(h, j)


cdef inline double _run_b(const Hyp* h, Py_ssize_t j) noexcept nogil:
    return _a(h, h.n - 1 - j)


cdef Py_ssize_t _mode(Hyp* h) noexcept nogil:
    cdef Py_ssize_t lo = 0, hi = h.n, mid
    while lo < hi:
        mid = (lo + hi) // 2
        if _slope(h, mid) >= 0.0:
            hi = mid
        else:
            lo = mid + 1
    return lo


cdef Py_ssize_t _count_le(const Hyp* h, double t) noexcept nogil:
    cdef Py_ssize_t lo = 0, hi = h.p, mid, total
    while lo < hi:
        mid = (lo + hi) // 2
        if _run_a(h, mid) > t:
            hi = mid
        else:
            lo = mid + 1
    total = lo
    lo = 0
    hi = h.n - h.p
    while lo < hi:
        mid = (lo + hi) // 2
        if _run_b(h, mid) > t:
            hi = mid
        else:
            lo = mid + 1
    return total + lo


cdef double _kth(const Hyp* h, Py_ssize_t k) noexcept nogil:
    cdef Py_ssize_t na = h.p, nb = h.n - h.p
    cdef Py_ssize_t lo = k + 1 - nb, hi = k + 1, i
    cdef double va = -INFINITY, vb = -INFINITY
    if lo < 0:
        lo = 0
    if hi > na:
        hi = na
    while lo < hi:
        i = (lo + hi) // 2
        if _run_a(h, i) < _run_b(h, k - i):
            lo = i + 1
        else:
            hi = i
    i = lo
    if i > 0:
        va = _run_a(h, i - 1)
    if k + 1 - i > 0:
        vb = _run_b(h, k - i)
    return va if va > vb else vb


cdef double _quantile(const Hyp* h, double q) noexcept nogil:
    cdef double hh = q * (h.n - 1)
    cdef double near = rint(hh)
    cdef Py_ssize_t lo
    cdef double frac, x0, x1
    if fabs(hh - near) <= 4.0 * DBL_EPSILON * h.n:
        hh = near
    lo = <Py_ssize_t> floor(hh)
    if lo > h.n - 1:
        lo = h.n - 1
    frac = hh - lo
    x0 = _kth(h, lo)
    if frac == 0.0:
        return x0
    x1 = _kth(h, lo + 1 if lo + 1 < h.n else h.n - 1)
    if frac == 1.0:
        return x1
    return x0 + frac * (x1 - x0)


def mirror_stats(const double[::1] t_hat, const double[::1] cl, const double[::1] al, const double[::1] bl,
                 const double[::1] cr, const double[::1] ar, const double[::1] br,
                 const double[::1] u_sorted, const double[::1] log_u, const double[::1] log_1mu):
    cdef Py_ssize_t m = t_hat.shape[0]
    cdef Py_ssize_t n = u_sorted.shape[0]
    cdef Py_ssize_t i
    cdef double s
    cdef Hyp h
    s_np = np.empty(m)
    mir_np = np.empty(m)
    med_np = np.empty(m)
    cdef double[::1] s_out = s_np
    cdef double[::1] mir_out = mir_np
    cdef double[::1] med_out = med_np
    h.n = n
    h.u = &u_sorted[0]
    h.lu = &log_u[0]
    h.l1 = &log_1mu[0]
    with nogil:
        for i in range(m):
            h.cl = cl[i]; h.al = al[i]; h.bl = bl[i]
            h.cr = cr[i]; h.ar = ar[i]; h.br = br[i]
            h.p = _mode(&h)
            s = <double> _count_le(&h, t_hat[i]) / <double> n
            s_out[i] = s
            mir_out[i] = _quantile(&h, 1.0 - s)
            med_out[i] = _quantile(&h, 0.5)
    return s_np, mir_np, med_np


def assessor_values(const double[::1] cl, const double[::1] al, const double[::1] bl,
                    const double[::1] cr, const double[::1] ar, const double[::1] br,
                    const double[::1] log_u, const double[::1] log_1mu):
    """Elementwise assessor for aligned coefficient and log-u arrays."""
    cdef Py_ssize_t n = log_u.shape[0]
    cdef Py_ssize_t j
    out_np = np.empty(n)
    cdef double[::1] out = out_np
    with nogil:
        for j in range(n):
            out[j] = 1.0 / (1.0 + exp(cl[j] + al[j] * log_u[j] + bl[j] * log_1mu[j])
                            + exp(cr[j] + ar[j] * log_u[j] + br[j] * log_1mu[j]))
    return out_np
