"""Simulated data, error metrics, the BH baseline and a replication runner."""

import csv
import logging
import math
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from .asymp import AsympConfig, asymp_statistics, select_threshold_asymp
from .em import EMConfig, fit_full_em
from .finite import FiniteRunConfig, run_zap_finite_multi
from .model import TestingInput
from .numeric import make_rng, norm_cdf
from .oracle import OracleModel, run_oracle

log = logging.getLogger(__name__)

NULL, LEFT, RIGHT = 0, 1, 2

_EXAMPLE_IDS = {"2.1": "example2.1", "2.2": "example2.2", "2.3": "example2.3"}
_SETUP_IDS = {1: "setup1", 2: "setup2", 3: "setup3"}


def _rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    keys = seed if isinstance(seed, (tuple, list)) else (seed,)
    return make_rng(*keys)


@dataclass
class SimulatedTruth:
    """``h`` non-null indicators, ``mu`` effects, ``component`` in {0, 1, 2}
    (null, left, right)."""

    h: np.ndarray
    mu: np.ndarray
    component: np.ndarray


def _draw(model, x, m, rng):
    wts, mus, scales = model.components(x, m)
    cum = np.cumsum(wts, axis=1)
    c = rng.random(m)
    k = np.sum(c[:, None] >= cum, axis=1)
    nonnull = k < wts.shape[1]
    kk = np.where(nonnull, k, 0)
    rows = np.arange(m)
    if wts.shape[1]:
        mu = np.where(nonnull, mus[rows, kk], 0.0)
        sd = np.where(nonnull, scales[rows, kk], 1.0)
    else:
        mu, sd = np.zeros(m), np.ones(m)
    z = mu + sd * rng.standard_normal(m)
    comp = np.where(~nonnull, NULL, np.where(mu < 0.0, LEFT, RIGHT))
    return z, SimulatedTruth(nonnull.astype(np.int8), mu, comp.astype(np.int8))


def gen_example(example_id, m, seed):
    """Stylized example data with one ``Unif(-1, 1)`` covariate.

    ``example_id`` is ``"2.1"`` (one-sided, covariate-dependent density of
    signals), ``"2.2"`` (covariate tilts between left and right signals) or
    ``"2.3"`` (sign of the effect given by the sign of x).

    Returns
    -------
    (TestingInput, SimulatedTruth, OracleModel)
    """
    key = str(example_id).replace("example", "")
    if key not in _EXAMPLE_IDS:
        raise ValueError(f"unknown example id {example_id!r}")
    model = OracleModel(_EXAMPLE_IDS[key])
    rng = _rng(seed)
    x = rng.uniform(-1.0, 1.0, m)
    z, truth = _draw(model, x, m, rng)
    return TestingInput.from_z(z, x[:, None]), truth, model


@dataclass(frozen=True)
class ScenarioConfig:
    """One simulation scenario.

    ``scenario`` is ``null``, ``example2.1``-``example2.3``,
    ``setup1``-``setup3`` or ``appG``.  Unset parameters take the family
    defaults (``eta`` -2 for setups 1 and 3, -2.5 for setup 2).  ``p`` is
    the number of pure-noise covariates for the null scenario.
    """

    scenario: str
    m: int = 1000
    eps: float = None
    eta: float = None
    zeta: float = None
    sigma: float = None
    w: float = None
    rho: float = None
    mu_l: float = None
    mu_r: float = None
    p: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("m must be at least 1")
        OracleModel(self.scenario, self.model_params())

    def model_params(self):
        keys = ("eps", "eta", "zeta", "sigma", "w", "rho", "mu_l", "mu_r")
        return {k: getattr(self, k) for k in keys if getattr(self, k) is not None}

    def oracle_model(self):
        return OracleModel(self.scenario, self.model_params())

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown scenario fields: {sorted(unknown)}")
        return cls(**d)


def gen_setup(setup_id, config):
    """Setup 1-3 data with covariates ``X ~ N(0, diag(1/2, 1/2))``."""
    if setup_id not in _SETUP_IDS:
        raise ValueError(f"unknown setup id {setup_id!r}")
    config = replace(config, scenario=_SETUP_IDS[setup_id])
    return gen_scenario(config)


def gen_appG(w, rho, mu_l, mu_r, m, seed):
    """Covariate-free draws from ``(1-w) N(0,1) + w(1-rho) N(mu_l,1) + w rho N(mu_r,1)``."""
    data, _, _ = gen_scenario(ScenarioConfig("appG", m=m, w=w, rho=rho, mu_l=mu_l,
                                             mu_r=mu_r, seed=seed))
    return data


def gen_scenario(config, seed=None):
    """Draw ``(TestingInput, SimulatedTruth, OracleModel)`` for a scenario.

    ``seed`` overrides ``config.seed`` and may be a tuple of integers.
    """
    model = config.oracle_model()
    rng = _rng(config.seed if seed is None else seed)
    m = config.m
    fam = config.scenario
    if fam.startswith("example"):
        x = rng.uniform(-1.0, 1.0, m)[:, None]
    elif fam.startswith("setup"):
        x = rng.normal(0.0, math.sqrt(0.5), (m, 2))
    elif fam == "null":
        x = rng.standard_normal((m, config.p))
    else:
        x = np.zeros((m, 0))
    z, truth = _draw(model, x, m, rng)
    return TestingInput.from_z(z, x), truth, model


# --------------------------------------------------------------------------
# metrics and baseline


@dataclass
class MetricsEntry:
    fdp: float
    tpr: float
    etd: int
    v: int
    r: int


def metrics(rejected, truth):
    """FDP ``V / (R v 1)``, TPR ``(R - V) / (sum h v 1)`` and ETD ``R - V``."""
    h = np.asarray(truth.h if hasattr(truth, "h") else truth, dtype=bool)
    rej = np.unique(np.asarray(rejected, dtype=np.int64))
    if rej.size and (rej[0] < 0 or rej[-1] >= h.size):
        raise ValueError("rejected index out of range")
    r = int(rej.size)
    v = int(np.count_nonzero(~h[rej]))
    return MetricsEntry(v / max(r, 1), (r - v) / max(int(h.sum()), 1), r - v, v, r)


def bh_procedure(p_values, alpha):
    """Benjamini-Hochberg step-up: reject the ``k`` smallest p-values with
    ``k = max{k : p_(k) <= k alpha / m}``."""
    p = np.asarray(p_values, dtype=float)
    if np.any(np.isnan(p)) or np.any((p < 0.0) | (p > 1.0)):
        raise ValueError("p-values must lie in [0, 1]")
    m = p.size
    if m == 0:
        return np.zeros(0, dtype=np.int64)
    order = np.argsort(p, kind="stable")
    ok = np.flatnonzero(p[order] <= alpha * np.arange(1, m + 1) / m)
    if ok.size == 0:
        return np.zeros(0, dtype=np.int64)
    return np.sort(order[: ok[-1] + 1])


def two_sided_p(z):
    return 2.0 * norm_cdf(-np.abs(np.asarray(z, dtype=float)))


# --------------------------------------------------------------------------
# replication


METHODS = ("zap-asymp", "zap-finite", "bh", "oracle-z", "oracle-p")


@dataclass
class MethodOptions:
    """Options shared by the methods of one replication batch."""

    gammas: tuple = (4.0, 4.0)
    n_mc: int = 50000
    s_l0: float = 0.2
    s_r0: float = 0.8
    refit_every: int = None
    refit_max_iter: int = 20
    em: EMConfig = EMConfig()
    intercept_only: bool = False


def rep_seed(master, rep):
    """Integer seed for repetition ``rep`` derived from the master seed."""
    return int(np.random.SeedSequence([int(master), int(rep)]).generate_state(1)[0])


def run_methods(data, truth, model, methods, alphas, options=MethodOptions(), seed=0):
    """Apply each method at each level; returns ``{(method, alpha): rejected}``."""
    out = {}
    if options.intercept_only:
        data = TestingInput(data.u, np.zeros((data.m, 0)), data.z)
    for meth in methods:
        if meth == "zap-asymp":
            cfg = AsympConfig(options.gammas, options.n_mc, seed, options.em)
            fit = fit_full_em(data, cfg.gammas, cfg.em)
            st = asymp_statistics(data, fit.params, cfg)
            for a in alphas:
                out[(meth, a)] = select_threshold_asymp(st.t_hat, st.t_mirror, a).rejected
        elif meth == "zap-finite":
            cfg = FiniteRunConfig(min(alphas), options.s_l0, options.s_r0, options.refit_every,
                                  options.gammas, options.em, options.refit_max_iter, seed)
            res, _ = run_zap_finite_multi(data, alphas, cfg)
            for a in alphas:
                out[(meth, a)] = res[a].rejected
        elif meth == "bh":
            p = data.p_values()
            for a in alphas:
                out[(meth, a)] = bh_procedure(p, a)
        elif meth in ("oracle-z", "oracle-p"):
            for a in alphas:
                out[(meth, a)] = run_oracle(model, data, a, meth[-1]).rejected
        else:
            raise ValueError(f"unknown method {meth!r}")
    return out


@dataclass
class ReplicationRow:
    scenario: str
    method: str
    alpha: float
    rep: int
    fdp: float
    tpr: float
    etd: int
    v: int
    r: int
    failed: bool = False
    error: str = ""


def _one_rep(args):
    scenario, methods, alphas, options, master, rep = args
    seed = rep_seed(master, rep)
    rows = []
    try:
        data, truth, model = gen_scenario(scenario, seed=(master, rep))
    except Exception as exc:  # noqa: BLE001 - recorded per repetition
        return [ReplicationRow(scenario.scenario, m, a, rep, math.nan, math.nan, 0, 0, 0, True,
                               f"data: {exc}") for m in methods for a in alphas]
    for meth in methods:
        try:
            res = run_methods(data, truth, model, [meth], alphas, options, seed)
            for a in alphas:
                e = metrics(res[(meth, a)], truth)
                rows.append(ReplicationRow(scenario.scenario, meth, a, rep, e.fdp, e.tpr, e.etd,
                                           e.v, e.r))
        except Exception as exc:  # noqa: BLE001 - recorded per repetition
            log.debug("rep %d method %s failed:\n%s", rep, meth, traceback.format_exc())
            rows.extend(ReplicationRow(scenario.scenario, meth, a, rep, math.nan, math.nan, 0, 0, 0,
                                       True, f"{type(exc).__name__}: {exc}") for a in alphas)
    return rows


@dataclass
class SummaryRow:
    method: str
    alpha: float
    reps: int
    failures: int
    fdr: float
    fdr_se: float
    tpr: float
    tpr_se: float
    etd: float
    etd_se: float


def _mean_se(vals):
    n = len(vals)
    if n == 0:
        return math.nan, math.nan
    mean = math.fsum(vals) / n
    if n == 1:
        return mean, 0.0
    var = math.fsum((v - mean) ** 2 for v in vals) / (n - 1)
    return mean, math.sqrt(var / n)


@dataclass
class ReplicationResult:
    scenario: ScenarioConfig
    rows: list = field(default_factory=list)

    def summary(self):
        keys = sorted({(r.method, r.alpha) for r in self.rows}, key=lambda k: (k[0], k[1]))
        out = []
        for meth, a in keys:
            sel = [r for r in self.rows if r.method == meth and r.alpha == a]
            ok = [r for r in sel if not r.failed]
            fdr = _mean_se([r.fdp for r in ok])
            tpr = _mean_se([r.tpr for r in ok])
            etd = _mean_se([float(r.etd) for r in ok])
            out.append(SummaryRow(meth, a, len(sel), len(sel) - len(ok), *fdr, *tpr, *etd))
        return out

    def lookup(self, method, alpha):
        for s in self.summary():
            if s.method == method and s.alpha == alpha:
                return s
        raise KeyError((method, alpha))

    def to_csv(self, path):
        names = [f.name for f in fields(ReplicationRow)]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(names)
            for r in self.rows:
                w.writerow([_fmt(getattr(r, n)) for n in names])

    def summary_to_csv(self, path):
        names = [f.name for f in fields(SummaryRow)]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["scenario"] + names)
            for s in self.summary():
                w.writerow([self.scenario.scenario] + [_fmt(getattr(s, n)) for n in names])


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, bool):
        return int(v)
    return v


def replicate(scenario, methods, reps, alpha, options=MethodOptions(), workers=1):
    """Seeded independent repetitions of ``methods`` on ``scenario``.

    Repetition ``r`` draws its data from the stream keyed by
    ``(scenario.seed, r)``, so results do not depend on ``workers``.  A
    failing method is recorded with ``failed=True`` instead of aborting.

    Parameters
    ----------
    alpha : float or sequence of float
        One or more target levels; all share each repetition's data.
    workers : int
        Process count; 1 runs in-process.
    """
    if reps < 1:
        raise ValueError("reps must be at least 1")
    alphas = sorted(set(np.atleast_1d(alpha).astype(float).tolist()))
    for m in methods:
        if m not in METHODS:
            raise ValueError(f"unknown method {m!r}; choose from {METHODS}")
    jobs = [(scenario, tuple(methods), alphas, options, scenario.seed, r) for r in range(reps)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            chunks = list(ex.map(_one_rep, jobs))
    else:
        chunks = [_one_rep(j) for j in jobs]
    result = ReplicationResult(scenario)
    for c in chunks:
        result.rows.extend(c)
    return result


__all__ = [
    "SimulatedTruth", "ScenarioConfig", "MetricsEntry", "MethodOptions", "ReplicationResult",
    "ReplicationRow", "SummaryRow", "gen_example", "gen_setup", "gen_appG", "gen_scenario",
    "metrics", "bh_procedure", "two_sided_p", "replicate", "run_methods", "rep_seed", "METHODS",
]
