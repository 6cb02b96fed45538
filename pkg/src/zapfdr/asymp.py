"""Asymptotic ZAP.

Fit the working model on all data, rank hypotheses by the assessor
``T_i = a_{X_i}(U_i)``, estimate each hypothesis' null distribution
``c_i`` of ``a_{X_i}(U)`` from one shared pool of uniforms, and pick the
largest threshold whose mirror-based FDP estimate is at most ``alpha``.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import special

from . import kernels
from .em import EMConfig, fit_full_em
from .model import DEFAULT_GAMMA, _as_design, local_params
from .numeric import EPS_U, ecdf, empirical_quantile, make_rng

DEFAULT_N_MC = 50000
MIN_N_MC = 1000


def shared_uniforms(n, seed):
    """Sorted pool of ``n`` uniforms, clamped like u-values."""
    if n < 1:
        raise ValueError("uniform pool must be nonempty")
    u = make_rng(seed, 0x5A9).random(n)
    return np.sort(np.clip(u, EPS_U, 1.0 - EPS_U))


def assessor_coefficients(params, xt):
    """Per-row ``(cl, al, bl, cr, ar, br)`` for the kernels' assessor form."""
    lp0, lpl, lpr, k_l, k_r = local_params(params, xt)
    gl, gr = params.gamma_l, params.gamma_r
    cl = lpl - lp0 - special.betaln(k_l, gl)
    cr = lpr - lp0 - special.betaln(gr, k_r)
    ones = np.ones_like(k_l)
    return (cl, k_l - 1.0, (gl - 1.0) * ones, cr, (gr - 1.0) * ones, k_r - 1.0)


def null_reference(params, x, uniforms):
    """Sorted assessor values ``a_x(u_j)`` over the shared pool."""
    u = np.asarray(uniforms, dtype=float)
    if u.size == 0:
        raise ValueError("uniform pool must be nonempty")
    coefs = assessor_coefficients(params, _as_design(params, x))
    vals = kernels.assessor_values([c[0] for c in coefs], np.log(u), np.log1p(-u))
    return np.sort(vals)


def mirror_statistic(t_i, null_sample):
    """``c^{-1}(1 - c(t_i))`` with ``c`` the empirical CDF of the sample."""
    s = ecdf(null_sample, t_i)
    return empirical_quantile(null_sample, 1.0 - s)


@dataclass
class AssessorStatistics:
    t_hat: np.ndarray
    t_mirror: np.ndarray
    s_hat: np.ndarray
    null_samples_seed: int
    n_monte_carlo: int
    null_median: np.ndarray = None

    @property
    def t_max(self):
        """Largest ``t`` with every ``c_i(t) <= 0.5`` (minimum null median)."""
        return float(np.min(self.null_median))


@dataclass
class RejectionResult:
    rejected: np.ndarray
    threshold: float
    fdp_estimate: float
    stats: object = None
    alpha: float = None
    extra: dict = field(default_factory=dict)

    @property
    def n_rejected(self):
        return int(self.rejected.size)

    def mask(self, m):
        out = np.zeros(m, dtype=bool)
        out[self.rejected] = True
        return out


def select_threshold_asymp(t_hat, t_mirror, alpha, t_max=None):
    """Largest observed threshold with ``(1 + V(t)) / max(R(t), 1) <= alpha``.

    ``R(t) = #{T_i <= t}`` and ``V(t) = #{mirror_i <= t}``.  Candidates
    are the distinct observed ``T_i`` (optionally only those ``<= t_max``).
    When none is feasible nothing is rejected, the threshold is ``-inf``
    and the estimate ``+inf``.
    """
    t_hat = np.asarray(t_hat, dtype=float)
    t_mirror = np.asarray(t_mirror, dtype=float)
    if t_hat.shape != t_mirror.shape or t_hat.ndim != 1:
        raise ValueError("t_hat and t_mirror must be 1-d of equal length")
    if np.any(np.isnan(t_hat)) or np.any(np.isnan(t_mirror)):
        raise ValueError("NaN in significance statistics")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    cand = np.unique(t_hat)
    if t_max is not None:
        cand = cand[cand <= t_max]
    r = np.searchsorted(np.sort(t_hat), cand, side="right")
    v = np.searchsorted(np.sort(t_mirror), cand, side="right")
    est = (1.0 + v) / np.maximum(r, 1)
    ok = np.flatnonzero(est <= alpha)
    if ok.size == 0:
        return RejectionResult(np.zeros(0, dtype=np.int64), -np.inf, np.inf, t_hat, alpha)
    k = ok[-1]
    thr = float(cand[k])
    return RejectionResult(np.flatnonzero(t_hat <= thr), thr, float(est[k]), t_hat, alpha)


@dataclass(frozen=True)
class AsympConfig:
    gammas: tuple = (DEFAULT_GAMMA, DEFAULT_GAMMA)
    n_mc: int = DEFAULT_N_MC
    seed: int = 0
    em: EMConfig = EMConfig()
    use_t_max: bool = False
    backend: str = None


def asymp_statistics(data, params, config=AsympConfig()):
    """Assessor statistics of ``data`` under fitted ``params``."""
    if config.n_mc < MIN_N_MC:
        raise ValueError(f"n_mc must be at least {MIN_N_MC}")
    pool = shared_uniforms(config.n_mc, config.seed)
    lu_pool, l1_pool = np.log(pool), np.log1p(-pool)
    coefs = assessor_coefficients(params, data.design())
    t_hat = kernels.assessor_values(coefs, np.log(data.u), np.log1p(-data.u), backend=config.backend)
    s, mirror, median = kernels.mirror_stats(t_hat, coefs, pool, lu_pool, l1_pool,
                                             backend=config.backend)
    return AssessorStatistics(t_hat, np.asarray(mirror), np.asarray(s), config.seed,
                              config.n_mc, np.asarray(median))


def run_zap_asymp(data, alpha, config=AsympConfig(), fit=None):
    """Asymptotic ZAP at level ``alpha``.

    Parameters
    ----------
    data : TestingInput
    alpha : float
    config : AsympConfig
    fit : EmFitReport, optional
        Reuse an existing working-model fit instead of refitting.

    Returns
    -------
    RejectionResult
        ``stats`` holds the :class:`AssessorStatistics`; ``extra["fit"]``
        the EM report.
    """
    if fit is None:
        fit = fit_full_em(data, config.gammas, config.em)
    st = asymp_statistics(data, fit.params, config)
    t_max = st.t_max if config.use_t_max else None
    res = select_threshold_asymp(st.t_hat, st.t_mirror, alpha, t_max)
    res.stats = st
    res.extra["fit"] = fit
    return res


__all__ = [
    "AsympConfig", "AssessorStatistics", "RejectionResult", "shared_uniforms",
    "null_reference", "mirror_statistic", "select_threshold_asymp", "asymp_statistics",
    "run_zap_asymp", "assessor_coefficients",
]
