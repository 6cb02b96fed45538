"""EM fitting of the beta-mixture working model on fully observed data.

The M-step splits into three decoupled blocks that are each solved by a
damped Newton iteration with backtracking:

* ``theta`` block: soft-label three-class multinomial logistic regression;
* ``beta_l`` / ``beta_r`` blocks: weighted beta log-likelihoods in the
  shape ``k = expit(xt . beta)``.

The blocks consume expected sufficient statistics, so the masked-data EM
reuses them unchanged.
"""

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import special

from .model import BetaMixtureParams, ETA_CLIP, local_params, mixing_logprobs, shape_from_predictor
from .numeric import trigamma

log = logging.getLogger(__name__)

MIN_HYPOTHESES = 10
# stop a Newton block once the predicted gain g' H^-1 g / 2 is negligible
NEWTON_DECREMENT_TOL = 2e-12


class EMError(RuntimeError):
    """Raised when an EM fit produces a non-finite likelihood."""


@dataclass(frozen=True)
class EMConfig:
    tol: float = 1e-8
    max_iter: int = 200
    newton_iter: int = 25
    coef_bound: float = 20.0
    init: dict = None
    # converged also needs every coefficient to move by less than this
    param_tol: float = 1e-5

    @classmethod
    def from_dict(cls, d):
        d = dict(d or {})
        known = {k: d[k] for k in ("tol", "max_iter", "newton_iter", "coef_bound", "init", "param_tol") if k in d}
        return cls(**known)


@dataclass
class PosteriorWeights:
    w_l: np.ndarray
    w_r: np.ndarray


@dataclass
class SufficientStats:
    """Expected complete-data statistics consumed by the M-step.

    ``e_logu_l`` is ``E[H_l log U]`` and ``e_log1mu_r`` is
    ``E[H_r log(1 - U)]``; the remaining two log moments only enter the
    objective as constants.
    """

    h_l: np.ndarray
    h_r: np.ndarray
    e_logu_l: np.ndarray
    e_log1mu_l: np.ndarray
    e_logu_r: np.ndarray
    e_log1mu_r: np.ndarray


@dataclass
class EmFitReport:
    params: BetaMixtureParams
    loglik_trace: list
    iterations: int
    converged: bool
    m_step_stalls: int = 0
    extra: dict = field(default_factory=dict)


# --------------------------------------------------------------------------
# M-step blocks


@dataclass(frozen=True)
class Design:
    """Augmented design with duplicate rows collapsed.

    Every M-step objective is a sum of per-row terms that are linear in the
    sufficient statistics, so rows sharing a covariate value can be merged
    by summing their statistics.
    """

    rows: np.ndarray
    inverse: np.ndarray = None

    @classmethod
    def build(cls, xt):
        if isinstance(xt, cls):
            return xt
        uniq, inv = np.unique(xt, axis=0, return_inverse=True)
        if uniq.shape[0] * 2 > xt.shape[0]:
            return cls(xt)
        return cls(uniq, inv.ravel())

    def reduce(self, v):
        if self.inverse is None:
            return v
        return np.bincount(self.inverse, weights=v, minlength=self.rows.shape[0])


def _theta_objective(xt, h_l, h_r, theta_l, theta_r, h_0=None):
    lp0, lpl, lpr = mixing_logprobs(theta_l, theta_r, xt)
    if h_0 is None:
        h_0 = 1.0 - h_l - h_r
    return float(np.sum(h_l * lpl + h_r * lpr + h_0 * lp0))


def _shape_objective(xt, weight, e_log, beta, gamma):
    k = shape_from_predictor(xt @ beta)
    return float(np.sum((k - 1.0) * e_log - weight * special.betaln(k, gamma)))


def _line_search(f, x0, f0, direction, bound, max_halvings=30):
    """Backtrack along ``direction`` from ``x0`` inside the coefficient box.

    Returns the accepted point and value, or ``(x0, f0)`` if nothing
    improves.
    """
    step = 1.0
    for _ in range(max_halvings):
        x1 = np.clip(x0 + step * direction, -bound, bound)
        f1 = f(x1)
        if np.isfinite(f1) and f1 >= f0:
            return x1, f1, True
        step *= 0.5
    return x0, f0, False


def fit_theta_block(xt, h_l, h_r, theta_l, theta_r, max_iter=25, bound=20.0,
                    ridge=1e-8, h_0=None):
    """Maximize the soft-label multinomial logistic log-likelihood.

    ``h_0`` defaults to ``1 - h_l - h_r`` (one observation per row).
    Returns ``(theta_l, theta_r, stalled)``.
    """
    d = xt.shape[1]
    if h_0 is None:
        h_0 = 1.0 - h_l - h_r
    x = np.concatenate([theta_l, theta_r])

    def obj(v):
        return _theta_objective(xt, h_l, h_r, v[:d], v[d:], h_0)

    fx = obj(x)
    stalled = False
    for _ in range(max_iter):
        lp0, lpl, lpr = mixing_logprobs(x[:d], x[d:], xt)
        pl, pr = np.exp(lpl), np.exp(lpr)
        tot = h_l + h_r + h_0
        g = np.concatenate([xt.T @ (h_l - tot * pl), xt.T @ (h_r - tot * pr)])
        wll = tot * pl * (1.0 - pl)
        wrr = tot * pr * (1.0 - pr)
        wlr = -tot * pl * pr
        info = np.empty((2 * d, 2 * d))
        info[:d, :d] = (xt * wll[:, None]).T @ xt
        info[d:, d:] = (xt * wrr[:, None]).T @ xt
        info[:d, d:] = (xt * wlr[:, None]).T @ xt
        info[d:, :d] = info[:d, d:].T
        info[np.diag_indices_from(info)] += ridge * (1.0 + np.abs(np.diag(info)).max())
        try:
            direction = np.linalg.solve(info, g)
        except np.linalg.LinAlgError:
            direction = g
        if g @ direction < NEWTON_DECREMENT_TOL * (1.0 + abs(fx)):
            break
        x_new, f_new, ok = _line_search(obj, x, fx, direction, bound)
        if not ok:
            stalled = np.max(np.abs(g)) > 1e-6 * (1.0 + abs(fx))
            break
        gain = f_new - fx
        moved = np.max(np.abs(x_new - x))
        x, fx = x_new, f_new
        if gain <= 1e-13 * (1.0 + abs(fx)) or moved < 1e-10:
            break
    return x[:d].copy(), x[d:].copy(), bool(stalled)


def fit_shape_block(xt, weight, e_log, beta, gamma, max_iter=25, bound=20.0,
                    ridge=1e-8):
    """Maximize ``sum[(k - 1) * e_log - weight * log B(k, gamma)]`` over beta.

    ``e_log`` is the weighted log moment: ``E[H_l log U]`` for the left
    component or ``E[H_r log(1 - U)]`` for the right one.  Uses Fisher
    scoring in the logit of ``k`` with backtracking.
    """
    if not np.any(weight > 0):
        return beta.copy(), False

    def obj(b):
        return _shape_objective(xt, weight, e_log, b, gamma)

    b = beta.copy()
    fb = obj(b)
    stalled = False
    for _ in range(max_iter):
        k = shape_from_predictor(xt @ b)
        dk = k * (1.0 - k)
        score_k = e_log - weight * (special.digamma(k) - special.digamma(k + gamma))
        curv_k = weight * (trigamma(k) - trigamma(k + gamma))
        g = xt.T @ (score_k * dk)
        info = (xt * (curv_k * dk * dk)[:, None]).T @ xt
        info[np.diag_indices_from(info)] += ridge * (1.0 + np.abs(np.diag(info)).max())
        try:
            direction = np.linalg.solve(info, g)
        except np.linalg.LinAlgError:
            direction = g
        if g @ direction < NEWTON_DECREMENT_TOL * (1.0 + abs(fb)):
            break
        b_new, f_new, ok = _line_search(obj, b, fb, direction, bound)
        if not ok:
            stalled = np.max(np.abs(g)) > 1e-6 * (1.0 + abs(fb))
            break
        gain = f_new - fb
        moved = np.max(np.abs(b_new - b))
        b, fb = b_new, f_new
        if gain <= 1e-13 * (1.0 + abs(fb)) or moved < 1e-10:
            break
    return b, bool(stalled)


def q_objective(params, stats, xt):
    """Parameter-dependent part of the expected complete-data log-likelihood."""
    return (
        _theta_objective(xt, stats.h_l, stats.h_r, params.theta_l, params.theta_r)
        + _shape_objective(xt, stats.h_l, stats.e_logu_l, params.beta_l, params.gamma_l)
        + _shape_objective(xt, stats.h_r, stats.e_log1mu_r, params.beta_r, params.gamma_r)
    )


def q_gradient(params, stats, xt):
    """Analytic gradient of :func:`q_objective` in (theta_l, theta_r, beta_l, beta_r)."""
    lp0, lpl, lpr = mixing_logprobs(params.theta_l, params.theta_r, xt)
    pl, pr = np.exp(lpl), np.exp(lpr)
    g_tl = xt.T @ (stats.h_l - pl)
    g_tr = xt.T @ (stats.h_r - pr)
    out = [g_tl, g_tr]
    for beta, gamma, w, e in (
        (params.beta_l, params.gamma_l, stats.h_l, stats.e_logu_l),
        (params.beta_r, params.gamma_r, stats.h_r, stats.e_log1mu_r),
    ):
        k = shape_from_predictor(xt @ beta)
        score_k = e - w * (special.digamma(k) - special.digamma(k + gamma))
        out.append(xt.T @ (score_k * k * (1.0 - k)))
    return np.concatenate(out)


def m_step(stats, xt, warm_start, config=EMConfig()):
    """Blockwise maximization of Q from ``warm_start``.

    Returns ``(params, stalled)``; ``stalled`` flags a block whose line
    search could not improve despite a non-negligible gradient, in which
    case that block keeps its warm-start value.
    """
    design = Design.build(xt)
    rows, red = design.rows, design.reduce
    kw = dict(max_iter=config.newton_iter, bound=config.coef_bound)
    h_l, h_r = red(stats.h_l), red(stats.h_r)
    h_0 = red(1.0 - stats.h_l - stats.h_r)
    tl, tr, s0 = fit_theta_block(rows, h_l, h_r, warm_start.theta_l,
                                 warm_start.theta_r, h_0=h_0, **kw)
    bl, s1 = fit_shape_block(rows, h_l, red(stats.e_logu_l),
                             warm_start.beta_l, warm_start.gamma_l, **kw)
    br, s2 = fit_shape_block(rows, h_r, red(stats.e_log1mu_r),
                             warm_start.beta_r, warm_start.gamma_r, **kw)
    params = BetaMixtureParams(tl, tr, bl, br, warm_start.gamma_l, warm_start.gamma_r)
    return params, bool(s0 or s1 or s2)


# --------------------------------------------------------------------------
# full-data E-step and driver


class LocalTerms:
    """Per-hypothesis mixture coefficients, computed once per distinct row."""

    def __init__(self, params, design):
        design = Design.build(design)
        lp0, lpl, lpr, k_l, k_r = local_params(params, design.rows)
        gl, gr = params.gamma_l, params.gamma_r
        cols = [lp0, lpl - special.betaln(k_l, gl), lpr - special.betaln(gr, k_r), k_l, k_r]
        if design.inverse is not None:
            cols = [c[design.inverse] for c in cols]
        self.lp0, self.cl, self.cr, self.k_l, self.k_r = cols
        self.gamma_l, self.gamma_r = gl, gr

    def terms(self, log_u, log_1mu):
        """``(log pi_0, log pi_l h_l, log pi_r h_r)`` at the given points."""
        tl = self.cl + (self.k_l - 1.0) * log_u + (self.gamma_l - 1.0) * log_1mu
        tr = self.cr + (self.gamma_r - 1.0) * log_u + (self.k_r - 1.0) * log_1mu
        return self.lp0, tl, tr


def _point_terms(params, xt, u):
    lu, l1mu = np.log(u), np.log1p(-u)
    t0, tl, tr = LocalTerms(params, xt).terms(lu, l1mu)
    logh = np.logaddexp(t0, np.logaddexp(tl, tr))
    return tl, tr, logh, lu, l1mu


def _check_finite(logh):
    bad = np.flatnonzero(~np.isfinite(logh))
    if bad.size:
        raise EMError(f"non-finite mixture log-density at hypothesis index {int(bad[0])}")


def e_step_full(params, data):
    """Posterior probabilities of the left and right components."""
    weights, _, _ = _e_step_full(params, data.design(), data.u)
    return weights


def _e_step_full(params, xt, u):
    tl, tr, logh, lu, l1mu = _point_terms(params, xt, u)
    _check_finite(logh)
    w_l = np.exp(tl - logh)
    w_r = np.exp(tr - logh)
    stats = SufficientStats(w_l, w_r, w_l * lu, w_l * l1mu, w_r * lu, w_r * l1mu)
    return PosteriorWeights(w_l, w_r), stats, float(np.sum(logh))


def full_loglik(params, data):
    """Observed-data log-likelihood ``sum log h_{X_i}(U_i)``."""
    _, _, logh, _, _ = _point_terms(params, data.design(), data.u)
    return float(np.sum(logh))


def weights_to_stats(weights, data):
    lu, l1mu = np.log(data.u), np.log1p(-data.u)
    w_l, w_r = weights.w_l, weights.w_r
    return SufficientStats(w_l, w_r, w_l * lu, w_l * l1mu, w_r * lu, w_r * l1mu)


def m_step_full(weights, data, gammas, warm_start, config=EMConfig()):
    """One M-step on fully observed data (see :func:`m_step`)."""
    if weights.w_l.shape != data.u.shape:
        raise ValueError("weights and data lengths differ")
    if (warm_start.gamma_l, warm_start.gamma_r) != tuple(gammas):
        warm_start = replace(warm_start, gamma_l=gammas[0], gamma_r=gammas[1])
    return m_step(weights_to_stats(weights, data), data.design(), warm_start, config)


def _max_change(a, b):
    return max(float(np.max(np.abs(getattr(a, f) - getattr(b, f))))
               for f in ("theta_l", "theta_r", "beta_l", "beta_r"))


def run_em(e_step, xt, init, config):
    """Generic EM loop.

    ``e_step(params)`` must return ``(stats, loglik)`` where ``loglik`` is
    the observed-data log-likelihood at ``params``.
    """
    params = init
    design = Design.build(xt)
    trace = []
    converged = False
    stalls = 0
    decreased = False
    stats, ll = e_step(params)
    trace.append(ll)
    it = 0
    for it in range(1, config.max_iter + 1):
        new_params, stalled = m_step(stats, design, params, config)
        stalls += int(stalled)
        stats_new, ll_new = e_step(new_params)
        if ll_new < ll - 1e-8 * (1.0 + abs(ll)):
            # numerical safeguard; EM ascent should make this unreachable
            log.debug("EM likelihood decreased (%.3g); keeping previous iterate", ll - ll_new)
            decreased = True
            converged = True
            break
        moved = _max_change(params, new_params)
        params, stats = new_params, stats_new
        trace.append(ll_new)
        if abs(ll_new - ll) < config.tol * (1.0 + abs(ll)) and moved < config.param_tol:
            ll = ll_new
            converged = True
            break
        ll = ll_new
    return EmFitReport(params, trace, it, converged, stalls, {"decreased": decreased})


def initial_params(dim, gammas, config=EMConfig()):
    if config.init:
        p = BetaMixtureParams.from_dict({**config.init, "gamma_l": gammas[0], "gamma_r": gammas[1]})
        if p.dim != dim:
            raise ValueError("init override has the wrong coefficient length")
        return p
    return BetaMixtureParams.initial(dim, gammas[0], gammas[1])


def fit_full_em(data, gammas=(4.0, 4.0), config=EMConfig(), init=None):
    """Maximum-likelihood fit of the working model by EM.

    Parameters
    ----------
    data : TestingInput
    gammas : (float, float)
        Fixed shapes ``(gamma_l, gamma_r)``, both > 2.
    config : EMConfig
    init : BetaMixtureParams, optional
        Starting point; defaults to ``pi_l = pi_r = 0.05``, ``k = 0.5``.
    """
    if data.m < MIN_HYPOTHESES:
        raise ValueError(f"need at least {MIN_HYPOTHESES} hypotheses, got {data.m}")
    xt = data.design()
    if init is None:
        init = initial_params(xt.shape[1], gammas, config)
    design = Design.build(xt)

    def e_step(params):
        _, stats, ll = _e_step_full(params, design, data.u)
        return stats, ll

    return run_em(e_step, xt, init, config)


__all__ = [
    "EMConfig", "EMError", "EmFitReport", "PosteriorWeights", "SufficientStats",
    "e_step_full", "m_step_full", "fit_full_em", "full_loglik", "m_step",
    "q_objective", "q_gradient", "run_em", "ETA_CLIP",
]
