"""EM for the working model when part of the data is masked.

A masked hypothesis contributes the pair ``{lo, hi}`` instead of ``u``;
since the reflection has unit Jacobian its likelihood contribution is
``h(lo) + h(hi)``.  The E-step replaces point values by density-weighted
averages over the pair; the M-step is shared with the full-data EM.
"""

from dataclasses import dataclass, field

import numpy as np

from .em import (
    Design, EMConfig, LocalTerms, MIN_HYPOTHESES, SufficientStats, _check_finite, fit_shape_block,
    fit_theta_block, initial_params, run_em,
)
from .masking import MaskState
from .model import BetaMixtureParams

PROB_FLOOR = 0.01
PROB_CEIL = 0.99
SLIVER_MIN = 0.02


@dataclass
class MaskedSufficientStats(SufficientStats):
    """Expected statistics given the masked data.

    The ``y_*`` properties are the conditional log moments per unit of
    component probability (``E[H_l log U | D] = y_l_a * h_l``).
    """

    @staticmethod
    def _ratio(num, den):
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)

    @property
    def y_l_a(self):
        return self._ratio(self.e_logu_l, self.h_l)

    @property
    def y_r_a(self):
        return self._ratio(self.e_logu_r, self.h_r)

    @property
    def y_l_b(self):
        return self._ratio(self.e_log1mu_l, self.h_l)

    @property
    def y_r_b(self):
        return self._ratio(self.e_log1mu_r, self.h_r)


def _masked_e_step(params, xt, lo, hi, masked):
    local = LocalTerms(params, xt)
    lu_a, l1_a = np.log(lo), np.log1p(-lo)
    t0a, tla, tra = local.terms(lu_a, l1_a)
    logh_a = np.logaddexp(t0a, np.logaddexp(tla, tra))
    _check_finite(logh_a)
    if not np.any(masked):
        wl, wr = np.exp(tla - logh_a), np.exp(tra - logh_a)
        stats = MaskedSufficientStats(wl, wr, wl * lu_a, wl * l1_a, wr * lu_a, wr * l1_a)
        return stats, float(np.sum(logh_a))

    lu_b, l1_b = np.log(hi), np.log1p(-hi)
    t0b, tlb, trb = local.terms(lu_b, l1_b)
    logh_b = np.logaddexp(t0b, np.logaddexp(tlb, trb))
    _check_finite(logh_b)
    # unmasked rows keep the single point
    logh_b = np.where(masked, logh_b, -np.inf)
    logh = np.logaddexp(logh_a, logh_b)
    ra_l, rb_l = np.exp(tla - logh), np.where(masked, np.exp(tlb - logh), 0.0)
    ra_r, rb_r = np.exp(tra - logh), np.where(masked, np.exp(trb - logh), 0.0)
    stats = MaskedSufficientStats(
        ra_l + rb_l,
        ra_r + rb_r,
        ra_l * lu_a + rb_l * lu_b,
        ra_l * l1_a + rb_l * l1_b,
        ra_r * lu_a + rb_r * lu_b,
        ra_r * l1_a + rb_r * l1_b,
    )
    return stats, float(np.sum(logh))


def e_step_masked(params, state, data):
    """Conditional expectations of the complete-data statistics.

    For a masked pair the left posterior is
    ``pi_l (h_l(lo) + h_l(hi)) / (h(lo) + h(hi))`` and the log moments are
    averages of ``log u`` (or ``log(1 - u)``) over the pair weighted by the
    component density.  Unmasked hypotheses use their point value.

    Raises
    ------
    EMError
        If a mixture density is not finite; the message names the index.
    """
    stats, _ = _masked_e_step(params, data.design(), state.lo, state.hi, state.masked)
    return stats


def masked_loglik(params, state, data):
    """``sum_unmasked log h(u) + sum_masked log(h(lo) + h(hi))``."""
    _, ll = _masked_e_step(params, data.design(), state.lo, state.hi, state.masked)
    return ll


# --------------------------------------------------------------------------
# initialization


@dataclass
class MaskedInitState:
    params0: BetaMixtureParams
    diagnostics: dict = field(default_factory=dict)


def logistic_fit(xt, y, ridge=1e-6, max_iter=50, tol=1e-10, max_coef=15.0):
    """Ridge-penalized logistic regression by Newton-Raphson.

    Returns ``(coef, ok)``; ``ok`` is False when Newton did not converge or
    the coefficients drifted past ``max_coef`` (quasi-separation).
    """
    y = np.asarray(y, dtype=float)
    d = xt.shape[1]
    b = np.zeros(d)
    for _ in range(max_iter):
        eta = np.clip(xt @ b, -35.0, 35.0)
        p = 1.0 / (1.0 + np.exp(-eta))
        g = xt.T @ (y - p) - ridge * b
        w = p * (1.0 - p)
        info = (xt * w[:, None]).T @ xt + ridge * np.eye(d)
        try:
            step = np.linalg.solve(info, g)
        except np.linalg.LinAlgError:
            return b, False
        b = b + step
        if not np.all(np.isfinite(b)) or np.max(np.abs(b)) > max_coef:
            return b, False
        if np.max(np.abs(step)) < tol:
            return b, True
    return b, False


def _predict_binary(xt_fit, y, xt_all):
    """Fitted probabilities for every row of ``xt_all``.

    Falls back to the sample proportion (the intercept-only MLE) when the
    fit degenerates or the response is constant.
    """
    y = np.asarray(y, dtype=float)
    n = y.size
    if n == 0:
        return np.full(xt_all.shape[0], 0.5), "empty"
    mean = float(y.mean())
    if mean in (0.0, 1.0) or xt_fit.shape[1] == 1:
        return np.full(xt_all.shape[0], mean), "intercept"
    coef, ok = logistic_fit(xt_fit, y)
    if not ok:
        return np.full(xt_all.shape[0], mean), "intercept-fallback"
    eta = np.clip(xt_all @ coef, -35.0, 35.0)
    return 1.0 / (1.0 + np.exp(-eta)), "logistic"


def _side_share(pi_j, width):
    """Conservative non-null share inside one group.

    ``width`` is the unmasked sliver length within the group (out of 0.5);
    a near-empty sliver skips the correction.
    """
    with np.errstate(divide="ignore", invalid="ignore"):
        corrected = (1.0 - pi_j) + pi_j * (1.0 - 0.5 / width)
    out = np.where(width <= SLIVER_MIN, 1.0 - pi_j, corrected)
    return out


def _beta_init(xt, values, log_fn, gamma, config):
    beta0 = np.zeros(xt.shape[1])
    if values.size == 0:
        return beta0
    e_log = log_fn(values)
    beta, _ = fit_shape_block(xt, np.ones(values.size), e_log, beta0, gamma,
                              max_iter=config.newton_iter, bound=config.coef_bound)
    return beta


def initialize_masked(state, data, gammas=(4.0, 4.0), config=EMConfig()):
    """Data-driven starting values for the masked EM.

    Shapes come from beta MLEs on the outer pair elements of each group;
    mixing weights from conservative products ``pi_r = pi_r+ * P(U > 0.5 | x)``
    and ``pi_l = pi_l- * P(U <= 0.5 | x)``, each factor clamped to
    ``[0.01, 0.99]``.
    """
    xt = data.design()
    right = state.right
    left = ~right
    unmasked = ~state.masked
    diag = {}

    # outer pair elements, independent of the order the pair is stored in
    outer_l = np.minimum(state.lo, state.hi)[left]
    outer_r = np.maximum(state.lo, state.hi)[right]
    beta_l = _beta_init(xt[left], outer_l, np.log, gammas[0], config)
    beta_r = _beta_init(xt[right], outer_r, lambda v: np.log1p(-v), gammas[1], config)

    pi_plus, diag["pi_plus_fit"] = _predict_binary(xt, right.astype(float), xt)
    pj_plus, diag["pi_j_plus_fit"] = _predict_binary(xt[right], unmasked[right], xt)
    pj_minus, diag["pi_j_minus_fit"] = _predict_binary(xt[left], unmasked[left], xt)

    s_l, s_r = state.thresholds.s_l, state.thresholds.s_r
    raw_r = _side_share(pj_plus, 0.5 - 2.0 * (1.0 - s_r))
    raw_l = _side_share(pj_minus, 0.5 - 2.0 * s_l)
    pi_r_plus = np.clip(raw_r, PROB_FLOOR, PROB_CEIL)
    pi_l_minus = np.clip(raw_l, PROB_FLOOR, PROB_CEIL)
    pi_plus_c = np.clip(pi_plus, PROB_FLOOR, PROB_CEIL)
    pi_r0 = pi_r_plus * pi_plus_c
    pi_l0 = pi_l_minus * (1.0 - pi_plus_c)

    init = BetaMixtureParams.initial(xt.shape[1], gammas[0], gammas[1])
    tl, tr, _ = fit_theta_block(xt, pi_l0, pi_r0, init.theta_l, init.theta_r,
                                max_iter=config.newton_iter, bound=config.coef_bound)
    params = BetaMixtureParams(tl, tr, beta_l, beta_r, gammas[0], gammas[1])
    diag.update(
        pi_plus=pi_plus, pi_j_plus=pj_plus, pi_j_minus=pj_minus,
        pi_r_plus_raw=raw_r, pi_l_minus_raw=raw_l, pi_l0=pi_l0, pi_r0=pi_r0,
    )
    return MaskedInitState(params, diag)


# --------------------------------------------------------------------------
# driver


def fit_masked_em(state, data, gammas=(4.0, 4.0), config=EMConfig(), init=None):
    """Fit the working model to the masked view ``state`` of ``data``.

    Only the masked pairs, the unmasked point values and the covariates
    are read; which pair element is the true u-value is never used.

    Parameters
    ----------
    state : MaskState
    data : TestingInput
        Supplies covariates; its u-values are not read.
    init : BetaMixtureParams, optional
        Starting point; defaults to :func:`initialize_masked`, or to the
        ``config.init`` override when present.
    """
    if not isinstance(state, MaskState):
        raise TypeError("state must be a MaskState")
    if state.m != data.m:
        raise ValueError("state and data lengths differ")
    if data.m < MIN_HYPOTHESES:
        raise ValueError(f"need at least {MIN_HYPOTHESES} hypotheses, got {data.m}")
    xt = data.design()
    design = Design.build(xt)
    if init is None:
        if config.init:
            init = initial_params(xt.shape[1], gammas, config)
        else:
            init = initialize_masked(state, data, gammas, config).params0
    lo, hi, masked = state.lo, state.hi, state.masked

    def e_step(params):
        return _masked_e_step(params, design, lo, hi, masked)

    return run_em(e_step, xt, init, config)


__all__ = [
    "MaskedSufficientStats", "MaskedInitState", "e_step_masked", "masked_loglik",
    "initialize_masked", "fit_masked_em", "logistic_fit",
]
