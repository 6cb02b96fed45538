"""Oracle procedures under a known normal-mixture generative model.

The true conditional local FDR, ``P(H = 0 | statistic, x)``, is computed
either from the z-value or from the two-sided p-value, and thresholded by
the rank rule that rejects the largest prefix of sorted CLfdr values whose
running mean stays at or below ``alpha``.
"""

from dataclasses import dataclass, field

import numpy as np

from .asymp import RejectionResult
from .numeric import norm_logpdf, norm_ppf

#: Alternative mean used by the stylized examples.
EXAMPLE_MU = 1.5

SCENARIOS = ("null", "example2.1", "example2.2", "example2.3", "setup1", "setup2",
             "setup3", "appG", "mixture")

_DEFAULTS = {
    "setup1": {"eps": 2.1, "eta": -2.0, "zeta": 1.0, "sigma": 1.0},
    "setup2": {"eps": 2.1, "eta": -2.5, "zeta": 1.0, "sigma": 1.0},
    "setup3": {"eps": 2.1, "eta": -2.0, "zeta": 1.5, "sigma": 1.0},
    "appG": {"w": 0.2, "rho": 0.5, "mu_l": -2.5, "mu_r": 2.5},
}


def _expit(v):
    return 1.0 / (1.0 + np.exp(-v))


def _x_dot(x, m):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        return x
    if x.ndim == 2 and x.shape[1] == 0:
        return np.zeros(m)
    return x.sum(axis=1)


@dataclass(frozen=True)
class OracleModel:
    """Normal-mixture model ``(1 - w_x) N(0,1) + sum_k w_{k,x} N(mu_{k,x}, s_k^2)``.

    ``family`` names one of :data:`SCENARIOS` and ``params`` holds its
    parameters; ``"mixture"`` takes constant ``components``, a list of
    ``[weight, mean, scale]`` triples.
    """

    family: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.family not in SCENARIOS:
            raise ValueError(f"unknown scenario family {self.family!r}")
        merged = {**_DEFAULTS.get(self.family, {}), **dict(self.params)}
        object.__setattr__(self, "params", merged)
        if self.family == "mixture":
            comps = np.asarray(merged.get("components", []), dtype=float).reshape(-1, 3)
            if np.any(comps[:, 0] < 0) or comps[:, 0].sum() > 1.0 + 1e-12 or np.any(comps[:, 2] <= 0):
                raise ValueError("mixture components need weights >= 0 summing to <= 1 and scales > 0")
        if self.family == "appG":
            if not 0.0 <= merged["w"] < 1.0 or not 0.0 <= merged["rho"] <= 1.0:
                raise ValueError("appG needs w in [0, 1) and rho in [0, 1]")

    def to_dict(self):
        return {"family": self.family, "params": dict(self.params)}

    @classmethod
    def from_dict(cls, d):
        return cls(d["family"], dict(d.get("params", {})))

    def components(self, x, m=None):
        """Alternative weights, means and scales, each of shape ``(m, K)``.

        ``x`` is the covariate array (``(m,)`` or ``(m, p)``); it is ignored
        by covariate-free families when ``m`` is given.
        """
        f, p = self.family, self.params
        if x is None:
            if m is None:
                raise ValueError("need covariates or m")
            x = np.zeros((m, 0))
        x = np.asarray(x, dtype=float)
        m = x.shape[0]
        one = np.ones(m)
        if f == "null":
            return np.zeros((m, 0)), np.zeros((m, 0)), np.ones((m, 0))
        if f == "mixture":
            c = np.asarray(p.get("components", []), dtype=float).reshape(-1, 3)
            return (np.tile(c[:, 0], (m, 1)), np.tile(c[:, 1], (m, 1)), np.tile(c[:, 2], (m, 1)))
        if f == "appG":
            w, rho = p["w"], p["rho"]
            wts = np.column_stack([w * (1 - rho) * one, w * rho * one])
            mus = np.column_stack([p["mu_l"] * one, p["mu_r"] * one])
            return wts, mus, np.ones((m, 2))
        if f.startswith("example"):
            xv = x if x.ndim == 1 else x[:, 0]
            mu = EXAMPLE_MU
            if f == "example2.1":
                return ((xv + 2.0)[:, None] / 10.0, mu * one[:, None], one[:, None])
            if f == "example2.2":
                wts = np.column_stack([(1.0 - xv) / 10.0, (1.0 + xv) / 10.0])
                return wts, np.column_stack([-mu * one, mu * one]), np.ones((m, 2))
            sgn = np.where(xv >= 0.0, 1.0, -1.0)
            return 0.1 * one[:, None], (mu * sgn)[:, None], one[:, None]
        xd = _x_dot(x, m)
        eps, eta, zeta, sig = p["eps"], p["eta"], p["zeta"], p["sigma"]
        if f == "setup1":
            w_r = _expit(eta + zeta * xd)
            w_l = np.zeros(m)
            mu_r = 2.0 * eps * _expit(zeta * xd)
            mu_l = np.zeros(m)
        elif f == "setup2":
            den = np.exp(-eta) + np.exp(-zeta * xd) + np.exp(zeta * xd)
            w_r = np.exp(zeta * xd) / den
            w_l = np.exp(-zeta * xd) / den
            mu_r, mu_l = eps * one, -eps * one
        else:
            w_l = w_r = 0.5 * _expit(eta) * one
            mu_r = 2.0 * eps * _expit(zeta * xd)
            mu_l = -2.0 * eps / (1.0 + np.exp(zeta * xd))
        return (np.column_stack([w_l, w_r]), np.column_stack([mu_l, mu_r]),
                np.full((m, 2), float(sig)))

    def nonnull_weight(self, x, m=None):
        wts, _, _ = self.components(x, m)
        return wts.sum(axis=1)


def _log_alt_ratio(z, wts, mus, scales):
    """``log sum_k w_k phi_k(z) - log phi(z)`` per row (``-inf`` if no mass)."""
    z = np.asarray(z, dtype=float)[:, None]
    with np.errstate(divide="ignore"):
        lw = np.log(wts)
    terms = lw + norm_logpdf((z - mus) / scales) - np.log(scales) - norm_logpdf(z)
    if terms.shape[1] == 0:
        return np.full(z.shape[0], -np.inf)
    mx = np.max(terms, axis=1, keepdims=True)
    safe = np.where(np.isfinite(mx), mx, 0.0)
    out = safe[:, 0] + np.log(np.sum(np.exp(terms - safe), axis=1))
    return np.where(np.isfinite(mx[:, 0]), out, -np.inf)


def _clfdr_from_log_ratio(null_w, log_ratio):
    # clfdr = 1 / (1 + exp(log_ratio) / null_w)
    with np.errstate(divide="ignore", over="ignore"):
        v = log_ratio - np.log(null_w)
        return np.where(null_w > 0, 1.0 / (1.0 + np.exp(v)), 0.0)


def clfdr_true(model, value, x, mode="z"):
    """True CLfdr at ``value`` (z-value or two-sided p-value) and covariates ``x``.

    Parameters
    ----------
    model : OracleModel
    value : float or array
    x : array
        Covariates: a scalar/1-d vector for one point, or rows aligned with
        ``value``.
    mode : {"z", "p"}

    Raises
    ------
    ValueError
        For p-values outside ``(0, 1]`` or an unknown mode.
    """
    value = np.atleast_1d(np.asarray(value, dtype=float))
    scalar = value.size == 1 and np.ndim(x) <= 1 and np.size(x) <= 1
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = np.full(value.size, float(x))
    elif x.ndim == 1 and x.size != value.size:
        x = np.tile(x, (value.size, 1))
    wts, mus, scales = model.components(x, value.size)
    null_w = 1.0 - wts.sum(axis=1)
    if mode == "z":
        lr = _log_alt_ratio(value, wts, mus, scales)
    elif mode == "p":
        if np.any(~((value > 0.0) & (value <= 1.0))):
            raise ValueError("p-values must lie in (0, 1]")
        az = -norm_ppf(np.minimum(value / 2.0, 0.5))
        # g_1(p) averages the alternative over +|z| and -|z|
        lr = np.logaddexp(_log_alt_ratio(az, wts, mus, scales),
                          _log_alt_ratio(-az, wts, mus, scales)) - np.log(2.0)
    else:
        raise ValueError(f"mode must be 'z' or 'p', got {mode!r}")
    out = _clfdr_from_log_ratio(null_w, lr)
    return float(out[0]) if scalar else out


@dataclass
class OracleThreshold:
    j: int
    threshold_value: float
    conditional_fdr: float


def oracle_threshold(clfdr_values, alpha):
    """Rank rule: reject the ``j`` smallest values, ``j`` the largest prefix
    length with mean at most ``alpha``.

    Returns ``(OracleThreshold, rejected indices)``; ``j = 0`` (threshold
    ``-inf``, conditional FDR 0) when even the smallest value exceeds
    ``alpha``.  Ties are ordered by index.
    """
    v = np.asarray(clfdr_values, dtype=float)
    if np.any(np.isnan(v)) or np.any((v < 0.0) | (v > 1.0)):
        raise ValueError("CLfdr values must lie in [0, 1]")
    order = np.argsort(v, kind="stable")
    running = np.cumsum(v[order]) / np.arange(1, v.size + 1)
    ok = np.flatnonzero(running <= alpha)
    if ok.size == 0:
        return OracleThreshold(0, -np.inf, 0.0), np.zeros(0, dtype=np.int64)
    j = int(ok[-1]) + 1
    th = OracleThreshold(j, float(v[order[j - 1]]), float(running[j - 1]))
    return th, np.sort(order[:j])


def run_oracle(model, data, alpha, mode="z"):
    """Oracle procedure on ``data`` (a TestingInput) under ``model``."""
    x = data.covariates
    if mode == "z":
        z = data.z if data.z is not None else norm_ppf(data.u)
        vals = clfdr_true(model, z, x if x.shape[1] else np.zeros((data.m, 0)), "z")
    else:
        vals = clfdr_true(model, data.p_values(), x if x.shape[1] else np.zeros((data.m, 0)), "p")
    vals = np.atleast_1d(vals)
    th, rej = oracle_threshold(vals, alpha)
    res = RejectionResult(rej, th.threshold_value, th.conditional_fdr, vals, alpha)
    res.extra["oracle"] = th
    return res


def rejection_boundary_ex22(x, lambda_star, mu=EXAMPLE_MU):
    """Closed-form z-boundaries of ``{CLfdr <= lambda_star}`` in Example 2.2.

    With ``c = (1 - lambda) / lambda`` the boundaries solve
    ``(1 + x) y^2 - 8 c e^{mu^2/2} y + (1 - x) = 0`` for ``y = e^{mu z}``.

    Returns
    -------
    (z_low, z_high)
        The region is ``z <= z_low`` or ``z >= z_high``.

    Raises
    ------
    ValueError
        If ``x`` is outside (-1, 1), ``lambda_star`` outside (0, 1), or the
        discriminant is not positive.
    """
    if not -1.0 < x < 1.0:
        raise ValueError("x must lie in (-1, 1)")
    if not 0.0 < lambda_star < 1.0:
        raise ValueError("lambda_star must lie in (0, 1)")
    c = (1.0 - lambda_star) / lambda_star
    disc = 16.0 * c * c * np.exp(mu * mu) - (1.0 - x) * (1.0 + x)
    if disc <= 0.0:
        raise ValueError("non-positive discriminant: no two-sided boundary")
    b = 4.0 * c * np.exp(mu * mu / 2.0)
    r = np.sqrt(disc)
    lo_arg, hi_arg = (b - r) / (1.0 + x), (b + r) / (1.0 + x)
    if lo_arg <= 0.0:
        raise ValueError("non-positive log argument")
    return float(np.log(lo_arg) / mu), float(np.log(hi_arg) / mu)


__all__ = [
    "OracleModel", "OracleThreshold", "clfdr_true", "oracle_threshold", "run_oracle",
    "rejection_boundary_ex22", "SCENARIOS",
]
