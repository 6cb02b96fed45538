"""Scalar special functions and empirical-distribution helpers.

Thin wrappers over ``scipy.special`` that add domain checking and the
u-value clamping convention used throughout the package.
"""

import numpy as np
from scipy import special

#: Half-width of the excluded boundary on the unit interval.
EPS_U = 1e-15

_SQRT_2PI = np.sqrt(2.0 * np.pi)


def norm_pdf(z):
    """Standard normal density."""
    z = np.asarray(z, dtype=float)
    return np.exp(-0.5 * z * z) / _SQRT_2PI


def norm_logpdf(z):
    z = np.asarray(z, dtype=float)
    return -0.5 * z * z - np.log(_SQRT_2PI)


def norm_cdf(z):
    """Standard normal distribution function (erfc based)."""
    return special.ndtr(np.asarray(z, dtype=float))


def norm_ppf(p):
    """Inverse of :func:`norm_cdf`.

    Raises
    ------
    ValueError
        If any ``p`` lies outside the open interval (0, 1).
    """
    p = np.asarray(p, dtype=float)
    if np.any(~((p > 0.0) & (p < 1.0))):
        raise ValueError("norm_ppf requires 0 < p < 1")
    return special.ndtri(p)


def clamp_unit(u):
    """Clip values into ``[EPS_U, 1 - EPS_U]``."""
    return np.clip(np.asarray(u, dtype=float), EPS_U, 1.0 - EPS_U)


def _check_positive(name, *args):
    for a in args:
        a = np.asarray(a, dtype=float)
        if np.any(~(a > 0.0)):
            raise ValueError(f"{name} requires strictly positive arguments")


def log_beta(a, b):
    """``log B(a, b) = lgamma(a) + lgamma(b) - lgamma(a + b)``."""
    _check_positive("log_beta", a, b)
    return special.betaln(a, b)


def digamma(x):
    _check_positive("digamma", x)
    return special.digamma(x)


def trigamma(x):
    """Second derivative of ``lgamma``.

    Shifts the argument by 10 with the recurrence
    ``psi1(x) = psi1(x + 1) + 1 / x**2`` and finishes with the asymptotic
    series; absolute error below 1e-12 for ``x > 0``.
    """
    _check_positive("trigamma", x)
    return _trigamma(np.asarray(x, dtype=float))


def _trigamma(x):
    # fixed shift keeps the loop branch-free; exact for any x > 0
    acc = np.zeros_like(x)
    for j in range(_TRIGAMMA_SHIFT):
        y = x + j
        acc += 1.0 / (y * y)
    r = 1.0 / (x + _TRIGAMMA_SHIFT)
    r2 = r * r
    series = r + 0.5 * r2 + r * r2 * (
        1.0 / 6.0 - r2 * (1.0 / 30.0 - r2 * (1.0 / 42.0 - r2 * (1.0 / 30.0 - r2 * 5.0 / 66.0)))
    )
    return acc + series


_TRIGAMMA_SHIFT = 10


def empirical_quantile(sample, q):
    """Linearly interpolated quantile of a sorted sample.

    Order statistic ``j`` (1-based) sits at plotting position
    ``(j - 1) / (N - 1)``; ``q = 0`` gives the minimum and ``q = 1`` the
    maximum.

    Parameters
    ----------
    sample : array_like
        Values sorted ascending.
    q : float or array_like
        Probabilities in [0, 1].
    """
    x = np.asarray(sample, dtype=float)
    if x.size == 0:
        raise ValueError("empirical_quantile of an empty sample")
    q = np.asarray(q, dtype=float)
    if np.any((q < 0.0) | (q > 1.0)) or np.any(np.isnan(q)):
        raise ValueError("quantile level must lie in [0, 1]")
    n = x.size
    if n == 1:
        return np.full(q.shape, x[0]) if q.ndim else float(x[0])
    h = q * (n - 1)
    # q = j / (n - 1) must land exactly on order statistic j
    near = np.rint(h)
    h = np.where(np.abs(h - near) <= 4.0 * np.finfo(float).eps * n, near, h)
    lo = np.floor(h).astype(np.int64)
    lo = np.minimum(lo, n - 2)
    frac = h - lo
    out = x[lo] + frac * (x[lo + 1] - x[lo])
    out = np.where(frac == 1.0, x[lo + 1], out)
    return out if q.ndim else float(out)


def ecdf(sample, t):
    """``#{x <= t} / N`` for a sorted sample."""
    x = np.asarray(sample, dtype=float)
    if x.size == 0:
        raise ValueError("ecdf of an empty sample")
    count = np.searchsorted(x, t, side="right")
    return count / x.size


def make_rng(*keys):
    """Counter-based (Philox) generator keyed by one or more integers."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(k) for k in keys])))
