"""Numpy implementation of the hot loops (fallback for ``_kernels``).

Every hypothesis carries six assessor coefficients ``(cl, al, bl, cr, ar,
br)`` so that, on the log scale,

    a(u) = 1 / (1 + exp(cl + al*log u + bl*log(1-u))
                  + exp(cr + ar*log u + br*log(1-u))).

With ``al, br < 0`` and ``bl, ar >= 1`` the reciprocal ``1/a`` is convex
in ``u``, so along an ascending pool of uniforms ``a`` first rises and then
falls.  Counts ``#{a <= t}`` and order statistics of ``a`` over the pool
then reduce to binary searches on the two monotone runs.
"""

import numpy as np

_CHUNK_CELLS = 1 << 21
_EPS = np.finfo(float).eps


def assessor_values(cl, al, bl, cr, ar, br, log_u, log_1mu):
    """Elementwise assessor; arguments broadcast against each other."""
    with np.errstate(over="ignore"):
        el = np.exp(cl + al * log_u + bl * log_1mu)
        er = np.exp(cr + ar * log_u + br * log_1mu)
    return 1.0 / (1.0 + el + er)


def _slope_sign(coefs, u, log_u, log_1mu):
    cl, al, bl, cr, ar, br = coefs
    with np.errstate(over="ignore", invalid="ignore"):
        el = np.exp(cl + al * log_u + bl * log_1mu)
        er = np.exp(cr + ar * log_u + br * log_1mu)
        return el * (al / u - bl / (1.0 - u)) + er * (ar / u - br / (1.0 - u))


class _Runs:
    """Ascending run ``A`` (pool indices ``0..p-1``) and the descending run
    read backwards as ascending ``B`` (pool indices ``n-1`` down to ``p``)."""

    def __init__(self, coefs, u, log_u, log_1mu):
        self.coefs = coefs
        self.log_u = log_u
        self.log_1mu = log_1mu
        n = u.size
        m = coefs[0].size
        # p = first pool index where the reciprocal starts increasing
        lo = np.zeros(m, dtype=np.int64)
        hi = np.full(m, n, dtype=np.int64)
        while True:
            act = lo < hi
            if not act.any():
                break
            mid = (lo + hi) // 2
            idx = np.minimum(mid, n - 1)
            sgn = _slope_sign(coefs, u[idx], log_u[idx], log_1mu[idx])
            up = act & (sgn >= 0.0)
            hi = np.where(up, mid, hi)
            lo = np.where(act & ~up, mid + 1, lo)
        self.p = lo
        self.n = n
        self.na = lo
        self.nb = n - lo

    def _val(self, pool_idx):
        c = self.coefs
        j = np.clip(pool_idx, 0, self.n - 1)
        return assessor_values(c[0], c[1], c[2], c[3], c[4], c[5], self.log_u[j], self.log_1mu[j])

    def a(self, j):
        return self._val(j)

    def b(self, j):
        return self._val(self.n - 1 - j)

    def _count_run(self, get, length, t):
        lo = np.zeros_like(length)
        hi = length.copy()
        while True:
            act = lo < hi
            if not act.any():
                return lo
            mid = (lo + hi) // 2
            over = get(mid) > t
            hi = np.where(act & over, mid, hi)
            lo = np.where(act & ~over, mid + 1, lo)

    def count_le(self, t):
        return self._count_run(self.a, self.na, t) + self._count_run(self.b, self.nb, t)

    def kth(self, k):
        """0-based ``k``-th smallest assessor value over the pool."""
        na, nb = self.na, self.nb
        lo = np.maximum(0, k + 1 - nb)
        hi = np.minimum(k + 1, na)
        while True:
            act = lo < hi
            if not act.any():
                break
            i = (lo + hi) // 2
            more = self.a(i) < self.b(k - i)
            lo = np.where(act & more, i + 1, lo)
            hi = np.where(act & ~more, i, hi)
        i = lo
        from_a = np.where(i > 0, self.a(i - 1), -np.inf)
        from_b = np.where(k + 1 - i > 0, self.b(k - i), -np.inf)
        return np.maximum(from_a, from_b)

    def quantile(self, q):
        h = _snap(q * (self.n - 1), self.n)
        lo = np.minimum(np.floor(h).astype(np.int64), self.n - 1)
        frac = h - lo
        x0 = self.kth(lo)
        x1 = self.kth(np.minimum(lo + 1, self.n - 1))
        out = x0 + frac * (x1 - x0)
        out = np.where(frac == 0.0, x0, out)
        return np.where(frac == 1.0, x1, out)


def mirror_stats(t_hat, cl, al, bl, cr, ar, br, u_sorted, log_u, log_1mu):
    """Per-hypothesis null CDF at ``t_hat``, mirror statistic and null median.

    ``u_sorted`` is the ascending uniform pool and ``log_u``/``log_1mu`` its
    logs.  Returns ``(s, mirror, median)`` where ``s = #{a <= t} / N``, the
    mirror is the ``1 - s`` quantile and the median the 0.5 quantile of the
    pool's assessor values, both by linear interpolation.
    """
    t_hat = np.asarray(t_hat, dtype=float)
    coefs = tuple(np.asarray(c, dtype=float) for c in (cl, al, bl, cr, ar, br))
    runs = _Runs(coefs, u_sorted, log_u, log_1mu)
    n = u_sorted.size
    s = runs.count_le(t_hat) / n
    mirror = runs.quantile(1.0 - s)
    median = runs.quantile(np.full(t_hat.shape, 0.5))
    return s, mirror, median


def mirror_stats_bruteforce(t_hat, cl, al, bl, cr, ar, br, u_sorted, log_u, log_1mu):
    """Reference version: evaluates every pool point for every hypothesis."""
    t_hat = np.asarray(t_hat, dtype=float)
    m, n = t_hat.size, log_u.size
    out = np.empty((3, m))
    rows = max(1, _CHUNK_CELLS // n)
    for start in range(0, m, rows):
        sl = slice(start, min(start + rows, m))
        vals = assessor_values(
            cl[sl, None], al[sl, None], bl[sl, None],
            cr[sl, None], ar[sl, None], br[sl, None],
            log_u[None, :], log_1mu[None, :],
        )
        vals.sort(axis=1)
        s = np.count_nonzero(vals <= t_hat[sl, None], axis=1) / n
        for r, i in enumerate(range(sl.start, sl.stop)):
            out[0, i] = s[r]
            out[1, i] = _sorted_quantile(vals[r], 1.0 - s[r])
            out[2, i] = _sorted_quantile(vals[r], 0.5)
    return out[0], out[1], out[2]


def _snap(h, n):
    """Round positions within a few ulps of an integer onto it."""
    near = np.rint(h)
    return np.where(np.abs(h - near) <= 4.0 * _EPS * n, near, h)


def _sorted_quantile(x, q):
    n = x.size
    h = float(_snap(q * (n - 1), n))
    lo = min(int(np.floor(h)), n - 1)
    frac = h - lo
    if frac == 0.0:
        return x[lo]
    if frac == 1.0:
        return x[lo + 1]
    return x[lo] + frac * (x[lo + 1] - x[lo])
