"""Finite-sample ZAP.

Starting from constant thresholds, candidate rejections and their
reflections are masked.  While the estimate ``(1 + |A_t|) / |R_t|``
exceeds ``alpha`` the least promising masked hypothesis (largest assessor
at its outer pair element) is revealed and its threshold moved past it.
The working model is refitted on the masked view every ``refit_every``
reveals, so every decision depends on the data only through the masked
view and the counts.
"""

import csv
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .asymp import RejectionResult
from .em import EMConfig, EMError
from .em_masked import fit_masked_em, initialize_masked
from .masking import MaskState, Region, ThresholdFunctions, masked_view
from .model import DEFAULT_GAMMA, BetaMixtureParams, assessor_rows

log = logging.getLogger(__name__)

_REJECT = np.array([Region.REJECT_LEFT, Region.REJECT_RIGHT], dtype=np.int8)
_ACCEPT = np.array([Region.ACCEPT_LEFT, Region.ACCEPT_RIGHT], dtype=np.int8)


@dataclass(frozen=True)
class FiniteRunConfig:
    alpha: float = 0.05
    s_l0: float = 0.2
    s_r0: float = 0.8
    refit_every: int = None
    gammas: tuple = (DEFAULT_GAMMA, DEFAULT_GAMMA)
    em: EMConfig = EMConfig()
    refit_max_iter: int = 20
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.s_l0 <= 0.25:
            raise ValueError("s_l0 must lie in (0, 0.25]")
        if not 0.75 <= self.s_r0 < 1.0:
            raise ValueError("s_r0 must lie in [0.75, 1)")
        if self.refit_max_iter < 1:
            raise ValueError("refit_max_iter must be at least 1")
        if self.refit_every is not None and self.refit_every < 1:
            raise ValueError("refit_every must be at least 1")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")

    def cadence(self, m):
        return self.refit_every if self.refit_every is not None else max(1, math.ceil(m / 100))


@dataclass
class RevealTrace:
    """One row per reveal: the state *before* the reveal and what moved.

    ``fdp`` is the estimate at the step the reveal was decided; ``n_reject``
    and ``n_accept`` are the counts at that step.
    """

    step: list = field(default_factory=list)
    index: list = field(default_factory=list)
    fdp: list = field(default_factory=list)
    n_reject: list = field(default_factory=list)
    n_accept: list = field(default_factory=list)
    side: list = field(default_factory=list)
    new_threshold: list = field(default_factory=list)
    refits: list = field(default_factory=list)
    final_fdp: float = None

    def __len__(self):
        return len(self.step)

    def append(self, step, index, fdp, n_r, n_a, side, thr):
        self.step.append(step)
        self.index.append(index)
        self.fdp.append(fdp)
        self.n_reject.append(n_r)
        self.n_accept.append(n_a)
        self.side.append(side)
        self.new_threshold.append(thr)

    def rows(self):
        return zip(self.step, self.index, self.fdp, self.n_reject, self.n_accept,
                   self.side, self.new_threshold)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "index", "fdp", "n_reject", "n_accept", "side", "new_threshold"])
            for row in self.rows():
                w.writerow([row[0], row[1], repr(float(row[2])), row[3], row[4], row[5],
                            repr(float(row[6]))])


def _outer(lo, hi):
    return np.where(lo > 0.5, np.maximum(lo, hi), np.minimum(lo, hi))


def score_masked(params, state, data):
    """Assessor at the outer pair element for each masked hypothesis.

    Returns ``(indices, scores)``; the outer element is the pair minimum
    in the left group and the maximum in the right group, so the scores
    depend on the masked pair only.
    """
    idx = np.flatnonzero(state.masked)
    if idx.size == 0:
        raise ValueError("no masked hypotheses to score")
    u_out = _outer(state.lo[idx], state.hi[idx])
    return idx, assessor_rows(params, data.design()[idx], u_out)


def _argmax_first(idx, scores):
    best = np.flatnonzero(scores == scores.max())
    return int(idx[best].min())


def reveal_least_significant(state, scores, data):
    """Reveal the masked hypothesis with the largest score.

    Parameters
    ----------
    state : MaskState
    scores : (indices, values)
        Output of :func:`score_masked`.  Ties go to the smallest index.
    data : TestingInput
        Supplies the true u-value of the revealed hypothesis.
    """
    idx, vals = scores
    j = _argmax_first(np.asarray(idx), np.asarray(vals))
    return state.reveal(j, float(data.u[j]))


def _fit(state, data, config, warm):
    """Masked EM fit; refits warm-start and run at most ``refit_max_iter`` cycles."""
    try:
        if warm is None:
            return fit_masked_em(state, data, config.gammas, config.em).params
        em = replace(config.em, max_iter=min(config.em.max_iter, config.refit_max_iter))
        return fit_masked_em(state, data, config.gammas, em, init=warm).params
    except (EMError, np.linalg.LinAlgError, FloatingPointError, ValueError) as exc:
        log.warning("masked EM refit failed (%s); keeping previous parameters", exc)
        if warm is not None:
            return warm
        try:
            return initialize_masked(state, data, config.gammas, config.em).params0
        except (np.linalg.LinAlgError, FloatingPointError, ValueError):
            return BetaMixtureParams.initial(data.design().shape[1], *config.gammas)


def reveal_path(data, config=FiniteRunConfig(), alphas=None, stop_alpha=None):
    """Run the reveal loop and return per-alpha stopping information.

    The loop stops once the estimate is at most ``stop_alpha`` (default:
    the smallest requested alpha; pass ``0`` to reveal everything) or the
    masked set is empty.  Because reveals never depend on ``alpha``, one
    path answers every ``alpha``: it stops at the first step whose
    estimate is at most that level.

    Returns
    -------
    stops : dict
        ``alpha -> (rejected indices, fdp estimate, MaskState at stop)``;
        rejected is empty when the masked set ran out first.
    trace : RevealTrace
    final : MaskState
    """
    if data.m < 10:
        raise ValueError("need at least 10 hypotheses")
    alphas = sorted(set(alphas if alphas is not None else [config.alpha]))
    if stop_alpha is None:
        stop_alpha = alphas[0]
    m = data.m
    cadence = config.cadence(m)
    st0 = masked_view(data, ThresholdFunctions.constant(m, config.s_l0, config.s_r0))
    region = st0.region.copy()
    lo, hi = st0.lo.copy(), st0.hi.copy()
    revealed = st0.revealed.copy()
    s_l, s_r = st0.thresholds.s_l.copy(), st0.thresholds.s_r.copy()
    n_r = int(np.isin(region, _REJECT).sum())
    n_a = int(np.isin(region, _ACCEPT).sum())
    xt = data.design()

    def snapshot(step):
        return MaskState(region.copy(), lo.copy(), hi.copy(), revealed.copy(),
                         ThresholdFunctions(s_l.copy(), s_r.copy()), step)

    stops = {}
    pending = list(alphas)
    trace = RevealTrace()
    params = None
    queue = []
    since_fit = 0
    step = 0
    while True:
        est = (1.0 + n_a) / max(n_r, 1)
        hit = [a for a in pending if est <= a]
        if hit:
            rej = np.flatnonzero(np.isin(region, _REJECT))
            snap = snapshot(step)
            for a in hit:
                stops[a] = (rej, est, snap)
            pending = [a for a in pending if a not in hit]
        if est <= stop_alpha or n_r + n_a == 0:
            break
        if params is None or since_fit >= cadence or not queue:
            state = snapshot(step)
            params = _fit(state, data, config, params)
            trace.refits.append(step)
            idx = np.flatnonzero(region != Region.UNMASKED)
            u_out = _outer(lo[idx], hi[idx])
            scores = assessor_rows(params, xt[idx], u_out)
            order = np.lexsort((idx, -scores))
            queue = list(idx[order][::-1])
            since_fit = 0
        j = int(queue.pop())
        right = lo[j] > 0.5
        if right:
            s_r[j] = max(s_r[j], hi[j])
            thr = s_r[j]
        else:
            s_l[j] = min(s_l[j], lo[j])
            thr = s_l[j]
        trace.append(step, j, est, n_r, n_a, "right" if right else "left", float(thr))
        if region[j] in _REJECT:
            n_r -= 1
        else:
            n_a -= 1
        region[j] = Region.UNMASKED
        lo[j] = hi[j] = data.u[j]
        revealed[j] = True
        since_fit += 1
        step += 1
    trace.final_fdp = (1.0 + n_a) / max(n_r, 1)
    for a in pending:
        stops[a] = (np.zeros(0, dtype=np.int64), np.inf, snapshot(step))
    return stops, trace, snapshot(step)


def _finite_stats(data, state):
    u = data.u
    stat = np.minimum(u - state.thresholds.s_l, state.thresholds.s_r - u)
    stat[state.revealed] = np.inf
    return stat


def run_zap_finite(data, config=FiniteRunConfig()):
    """Finite-sample ZAP at ``config.alpha``.

    Returns
    -------
    result : RejectionResult
        ``stats`` is ``min(u - s_l, s_r - u)`` at the final thresholds
        (``+inf`` for revealed hypotheses); rejected hypotheses are exactly
        those with ``stats <= 0``, so ``threshold`` is 0.  The final
        thresholds are in ``extra["thresholds"]``.
    trace : RevealTrace
    """
    stops, trace, _ = reveal_path(data, config, [config.alpha])
    rej, est, state = stops[config.alpha]
    res = RejectionResult(rej, 0.0, est, _finite_stats(data, state), config.alpha)
    res.extra.update(thresholds=state.thresholds, state=state)
    return res, trace


def run_zap_finite_multi(data, alphas, config=FiniteRunConfig()):
    """:func:`run_zap_finite` for several levels from one reveal path."""
    stops, trace, _ = reveal_path(data, config, alphas)
    out = {}
    for a, (rej, est, state) in stops.items():
        res = RejectionResult(rej, 0.0, est, _finite_stats(data, state), a)
        res.extra.update(thresholds=state.thresholds, state=state)
        out[a] = res
    return out, trace


__all__ = [
    "FiniteRunConfig", "RevealTrace", "score_masked", "reveal_least_significant",
    "reveal_path", "run_zap_finite", "run_zap_finite_multi",
]
