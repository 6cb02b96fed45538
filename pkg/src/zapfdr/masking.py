"""Data masking on the u-scale.

Each u-value belongs to the left group (``u <= 0.5``) or the right group
(``u > 0.5``) and has a reflection ``ǔ`` inside its group: ``0.5 - u`` on
the left and ``1.5 - u`` on the right.  Given per-hypothesis thresholds
``s_l <= 0.25`` and ``s_r >= 0.75`` a hypothesis is

* a candidate rejection when ``u <= s_l`` (left) or ``u >= s_r`` (right);
* a candidate acceptance when ``u`` is the reflection of such a point;
* unmasked otherwise.

Candidates are only revealed as the unordered pair ``{u, ǔ}``, which is
stored here sorted as ``(lo, hi)``.
"""

from dataclasses import dataclass, replace
from enum import IntEnum

import numpy as np

from .numeric import EPS_U


class Region(IntEnum):
    UNMASKED = 0
    REJECT_LEFT = 1
    ACCEPT_LEFT = 2
    REJECT_RIGHT = 3
    ACCEPT_RIGHT = 4


_REJECT = (Region.REJECT_LEFT, Region.REJECT_RIGHT)
_ACCEPT = (Region.ACCEPT_LEFT, Region.ACCEPT_RIGHT)


def reflect(u):
    """Reflection about 0.25 on ``[0, 0.5]`` and about 0.75 on ``(0.5, 1]``."""
    u = np.asarray(u, dtype=float)
    out = np.where(u > 0.5, 1.5 - u, 0.5 - u)
    out = np.clip(out, EPS_U, 1.0 - EPS_U)
    return out if out.ndim else float(out)


def _check_thresholds(s_l, s_r):
    s_l = np.asarray(s_l, dtype=float)
    s_r = np.asarray(s_r, dtype=float)
    if np.any(~((s_l >= 0.0) & (s_l <= 0.25))):
        raise ValueError("s_l must lie in [0, 0.25]")
    if np.any(~((s_r >= 0.75) & (s_r <= 1.0))):
        raise ValueError("s_r must lie in [0.75, 1]")
    return s_l, s_r


def partition(u, s_l, s_r):
    """Region label(s) of ``u`` under thresholds ``s_l``, ``s_r``.

    Rules are applied in order: reject-left, accept-left, reject-right,
    accept-right, otherwise unmasked.
    """
    s_l, s_r = _check_thresholds(s_l, s_r)
    u = np.asarray(u, dtype=float)
    out = np.full(np.broadcast(u, s_l, s_r).shape, int(Region.UNMASKED), dtype=np.int8)
    left = u <= 0.5
    conds = [
        (left & (u <= s_l), Region.REJECT_LEFT),
        (left & (u >= 0.5 - s_l), Region.ACCEPT_LEFT),
        (~left & (u >= s_r), Region.REJECT_RIGHT),
        (~left & (u <= 1.5 - s_r), Region.ACCEPT_RIGHT),
    ]
    done = np.zeros(out.shape, dtype=bool)
    for cond, label in conds:
        hit = np.broadcast_to(cond, out.shape) & ~done
        out[hit] = int(label)
        done |= hit
    if out.ndim == 0:
        return Region(int(out))
    return out


@dataclass(frozen=True)
class ThresholdFunctions:
    """Thresholds stored pointwise at the observed covariates."""

    s_l: np.ndarray
    s_r: np.ndarray

    def __post_init__(self):
        s_l, s_r = _check_thresholds(self.s_l, self.s_r)
        if s_l.shape != s_r.shape or s_l.ndim != 1:
            raise ValueError("s_l and s_r must be 1-d arrays of equal length")
        object.__setattr__(self, "s_l", s_l)
        object.__setattr__(self, "s_r", s_r)

    @classmethod
    def constant(cls, m, s_l=0.2, s_r=0.8):
        return cls(np.full(m, float(s_l)), np.full(m, float(s_r)))

    def update(self, j, *, s_l=None, s_r=None):
        """Copy with the thresholds of hypothesis ``j`` moved.

        Thresholds may only shrink the masked region (``s_l`` down, ``s_r``
        up).
        """
        new_l, new_r = self.s_l.copy(), self.s_r.copy()
        if s_l is not None:
            if s_l > new_l[j]:
                raise ValueError("s_l may not increase")
            new_l[j] = s_l
        if s_r is not None:
            if s_r < new_r[j]:
                raise ValueError("s_r may not decrease")
            new_r[j] = s_r
        return ThresholdFunctions(new_l, new_r)


@dataclass(frozen=True)
class MaskState:
    """Masked view of the data at one step.

    Attributes
    ----------
    region : int8 array
        :class:`Region` label per hypothesis.
    lo, hi : float arrays
        The sorted pair ``{u, ǔ}`` for masked hypotheses; both equal ``u``
        for unmasked ones.
    revealed : bool array
        Hypotheses revealed by the reveal loop (forced unmasked).
    thresholds : ThresholdFunctions
    step : int
    """

    region: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    revealed: np.ndarray
    thresholds: ThresholdFunctions
    step: int = 0

    @property
    def m(self):
        return self.region.size

    @property
    def masked(self):
        return self.region != Region.UNMASKED

    @property
    def right(self):
        """Group membership, known for masked and unmasked hypotheses alike."""
        return self.lo > 0.5

    @property
    def n_reject(self):
        return int(np.count_nonzero(np.isin(self.region, _REJECT)))

    @property
    def n_accept(self):
        return int(np.count_nonzero(np.isin(self.region, _ACCEPT)))

    def rejection_set(self):
        return np.flatnonzero(np.isin(self.region, _REJECT))

    def acceptance_set(self):
        return np.flatnonzero(np.isin(self.region, _ACCEPT))

    def u_tilde(self, i):
        """The masked value: a float, or a sorted 2-tuple for masked ``i``."""
        if self.region[i] == Region.UNMASKED:
            return float(self.lo[i])
        return float(self.lo[i]), float(self.hi[i])

    def reveal(self, j, u_j):
        """Copy with hypothesis ``j`` revealed at its true value ``u_j``.

        The threshold moves to the pair's outer element, which removes the
        pair from the masked region.
        """
        if self.region[j] == Region.UNMASKED:
            raise ValueError(f"hypothesis {j} is not masked")
        if u_j not in (self.lo[j], self.hi[j]):
            raise ValueError("revealed value is not an element of the masked pair")
        pair = (float(self.lo[j]), float(self.hi[j]))
        if self.right[j]:
            th = self.thresholds.update(j, s_r=max(self.thresholds.s_r[j], max(pair)))
        else:
            th = self.thresholds.update(j, s_l=min(self.thresholds.s_l[j], min(pair)))
        region, lo, hi, rev = self.region.copy(), self.lo.copy(), self.hi.copy(), self.revealed.copy()
        region[j] = Region.UNMASKED
        lo[j] = hi[j] = u_j
        rev[j] = True
        return replace(self, region=region, lo=lo, hi=hi, revealed=rev, thresholds=th,
                       step=self.step + 1)


def masked_view(data, thresholds, revealed=None):
    """Mask ``data`` under ``thresholds``.

    Parameters
    ----------
    data : TestingInput or array_like
        Anything with a ``u`` attribute, or the u-values themselves.
    thresholds : ThresholdFunctions
    revealed : bool array, optional
        Hypotheses forced to stay unmasked.
    """
    u = np.asarray(getattr(data, "u", data), dtype=float)
    if thresholds.s_l.shape != u.shape:
        raise ValueError("thresholds and data lengths differ")
    region = np.asarray(partition(u, thresholds.s_l, thresholds.s_r), dtype=np.int8)
    if revealed is None:
        revealed = np.zeros(u.size, dtype=bool)
    else:
        revealed = np.asarray(revealed, dtype=bool).copy()
        region[revealed] = Region.UNMASKED
    mask = region != Region.UNMASKED
    r = reflect(u)
    lo = np.where(mask, np.minimum(u, r), u)
    hi = np.where(mask, np.maximum(u, r), u)
    return MaskState(region, lo, hi, revealed, thresholds, 0)


def fdp_finite(state_or_counts, n_reject=None):
    """``(1 + |A|) / max(|R|, 1)``.

    Accepts a :class:`MaskState` or the pair of counts ``(n_accept,
    n_reject)``.
    """
    if isinstance(state_or_counts, MaskState):
        a, r = state_or_counts.n_accept, state_or_counts.n_reject
    else:
        a, r = state_or_counts, n_reject
    return (1.0 + a) / max(r, 1)


__all__ = [
    "Region", "reflect", "partition", "ThresholdFunctions", "MaskState",
    "masked_view", "fdp_finite",
]
