"""Kernel backend selection.

The compiled extension ``zapfdr._kernels`` is used when it imports;
otherwise, or when ``ZAP_PURE_PYTHON=1`` is set, the numpy versions in
``zapfdr._kernels_py`` are used.  Both expose the same functions.
"""

import os

import numpy as np

from . import _kernels_py

BACKEND = "python"
_native = None
if os.environ.get("ZAP_PURE_PYTHON", "") != "1":
    try:
        from . import _kernels as _native

        BACKEND = "native"
    except ImportError:
        _native = None


def _c(a):
    return np.array(a, dtype=np.float64, order="C")


def mirror_stats(t_hat, coefs, u_sorted, log_u, log_1mu, backend=None):
    """Null-CDF values, mirror statistics and null medians per hypothesis.

    ``coefs`` is the 6-tuple ``(cl, al, bl, cr, ar, br)`` of per-hypothesis
    assessor coefficients (see :func:`zapfdr.asymp.assessor_coefficients`)
    and ``u_sorted`` the ascending uniform pool.  ``backend="bruteforce"``
    evaluates every pool point and is meant for testing.
    """
    m = np.size(t_hat)
    args = [_c(t_hat)] + [_c(np.broadcast_to(c, (m,))) for c in coefs]
    args += [_c(u_sorted), _c(log_u), _c(log_1mu)]
    if backend == "bruteforce":
        return _kernels_py.mirror_stats_bruteforce(*args)
    return _pick(backend).mirror_stats(*args)


def assessor_values(coefs, log_u, log_1mu, backend=None):
    mod = _pick(backend)
    n = np.size(log_u)
    args = [_c(np.broadcast_to(c, (n,))) for c in coefs] + [_c(log_u), _c(log_1mu)]
    return np.asarray(mod.assessor_values(*args))


def _pick(backend):
    backend = backend or BACKEND
    if backend == "native":
        if _native is None:
            raise RuntimeError("compiled kernels are not available")
        return _native
    if backend == "python":
        return _kernels_py
    raise ValueError(f"unknown backend {backend!r}")
