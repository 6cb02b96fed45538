"""Three-component beta-mixture working model on the u-value scale.

Given a covariate ``x`` with augmented design ``xt = (1, x)``::

    h_x(u) = (1 - pi_l - pi_r) + pi_l * h_l(u) + pi_r * h_r(u)

where ``(pi_l, pi_r)`` are multinomial-logit probabilities in ``xt``,
``h_l`` is Beta(k_l, gamma_l), ``h_r`` is Beta(gamma_r, k_r) and the
``k`` shapes are logistic in ``xt``.  The assessor is the working-model
null posterior ``a_x(u) = (1 - pi_l - pi_r) / h_x(u)``.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .numeric import EPS_U, clamp_unit, log_beta, norm_cdf

#: Linear predictors of the mixing probabilities are clipped to this range.
ETA_CLIP = 35.0
DEFAULT_GAMMA = 4.0


def design_matrix(x, m=None):
    """Prepend an intercept column to a covariate matrix.

    ``x`` may be ``None`` (intercept only, needs ``m``), a 1-D array of
    length ``m`` (one covariate) or an ``(m, p)`` array.
    """
    if x is None:
        if m is None:
            raise ValueError("need m for an intercept-only design")
        return np.ones((m, 1))
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise ValueError("covariates must be a 1-D or 2-D array")
    return np.hstack([np.ones((x.shape[0], 1)), x])


@dataclass(frozen=True)
class TestingInput:
    """u-values, covariates and (optionally) the z-values they came from.

    Build from z-values with :meth:`from_z`; ``covariates`` is an
    ``(m, p)`` array, possibly with ``p = 0``.
    """

    __test__ = False  # not a pytest class

    u: np.ndarray
    covariates: np.ndarray
    z: np.ndarray = None

    def __post_init__(self):
        u = np.asarray(self.u, dtype=float)
        if u.ndim != 1 or u.size < 1:
            raise ValueError("u must be a non-empty 1-D array")
        if np.any(np.isnan(u)):
            raise ValueError("u contains NaN")
        if np.any((u < 0.0) | (u > 1.0)):
            raise ValueError("u-values must lie in [0, 1]")
        cov = self.covariates
        if cov is None:
            cov = np.zeros((u.size, 0))
        cov = np.asarray(cov, dtype=float)
        if cov.ndim == 1:
            cov = cov[:, None]
        if cov.shape[0] != u.size:
            raise ValueError(
                f"{cov.shape[0]} covariate rows for {u.size} u-values"
            )
        if not np.all(np.isfinite(cov)):
            raise ValueError("covariates must be finite")
        object.__setattr__(self, "u", clamp_unit(u))
        object.__setattr__(self, "covariates", cov)
        if self.z is not None:
            z = np.asarray(self.z, dtype=float)
            if z.shape != u.shape:
                raise ValueError("z and u lengths differ")
            object.__setattr__(self, "z", z)

    @classmethod
    def from_z(cls, z, covariates=None):
        z = np.asarray(z, dtype=float)
        return cls(u=u_transform(z), covariates=covariates, z=z)

    @property
    def m(self):
        return self.u.size

    @property
    def p(self):
        return self.covariates.shape[1]

    def design(self):
        return np.hstack([np.ones((self.m, 1)), self.covariates])

    def p_values(self):
        """Two-sided p-values ``2 * Phi(-|z|)`` (needs z, else from u)."""
        if self.z is not None:
            return 2.0 * norm_cdf(-np.abs(self.z))
        return 2.0 * np.minimum(self.u, 1.0 - self.u)

    def take(self, idx):
        idx = np.asarray(idx)
        return TestingInput(
            u=self.u[idx],
            covariates=self.covariates[idx],
            z=None if self.z is None else self.z[idx],
        )


@dataclass(frozen=True)
class LocalMixture:
    pi_l: float
    pi_r: float
    k_l: float
    k_r: float


@dataclass(frozen=True)
class BetaMixtureParams:
    """Regression coefficients and fixed shapes of the working model.

    All four coefficient vectors are intercept-augmented and share one
    length ``p + 1``.
    """

    theta_l: np.ndarray
    theta_r: np.ndarray
    beta_l: np.ndarray
    beta_r: np.ndarray
    gamma_l: float = DEFAULT_GAMMA
    gamma_r: float = DEFAULT_GAMMA
    meta: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        vecs = []
        for name in ("theta_l", "theta_r", "beta_l", "beta_r"):
            v = np.atleast_1d(np.asarray(getattr(self, name), dtype=float))
            if v.ndim != 1:
                raise ValueError(f"{name} must be a vector")
            object.__setattr__(self, name, v)
            vecs.append(v)
        if len({v.size for v in vecs}) != 1:
            raise ValueError("coefficient vectors must share one length")
        if not (self.gamma_l > 2.0 and self.gamma_r > 2.0):
            raise ValueError("gamma_l and gamma_r must exceed 2")

    @property
    def dim(self):
        return self.theta_l.size

    @classmethod
    def initial(cls, dim, gamma_l=DEFAULT_GAMMA, gamma_r=DEFAULT_GAMMA,
                pi=0.05, k=0.5):
        """Symmetric start: ``pi_l = pi_r = pi`` and ``k_l = k_r = k``."""
        theta = np.zeros(dim)
        theta[0] = np.log(pi / (1.0 - 2.0 * pi))
        beta = np.zeros(dim)
        beta[0] = np.log(k / (1.0 - k))
        return cls(theta, theta.copy(), beta, beta.copy(), gamma_l, gamma_r)

    def mirrored(self):
        """Swap the left and right components."""
        return BetaMixtureParams(
            self.theta_r, self.theta_l, self.beta_r, self.beta_l,
            self.gamma_r, self.gamma_l,
        )

    def to_dict(self):
        return {
            "theta_l": self.theta_l.tolist(),
            "theta_r": self.theta_r.tolist(),
            "beta_l": self.beta_l.tolist(),
            "beta_r": self.beta_r.tolist(),
            "gamma_l": float(self.gamma_l),
            "gamma_r": float(self.gamma_r),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            np.asarray(d["theta_l"], float),
            np.asarray(d["theta_r"], float),
            np.asarray(d["beta_l"], float),
            np.asarray(d["beta_r"], float),
            float(d.get("gamma_l", DEFAULT_GAMMA)),
            float(d.get("gamma_r", DEFAULT_GAMMA)),
        )


def _as_design(params, x):
    """Augmented design for one covariate vector or a matrix of them."""
    x = np.asarray(x, dtype=float)
    if x.ndim <= 1:
        xt = np.concatenate([[1.0], np.atleast_1d(x)]) if x.size else np.ones(1)
        xt = xt[None, :]
    else:
        xt = np.hstack([np.ones((x.shape[0], 1)), x])
    if xt.shape[1] != params.dim:
        raise ValueError(
            f"covariate dimension {xt.shape[1] - 1} does not match "
            f"coefficient length {params.dim}"
        )
    return xt


def mixing_logprobs(theta_l, theta_r, xt):
    """Log of (pi_0, pi_l, pi_r) for each row of an augmented design."""
    eta_l = np.clip(xt @ theta_l, -ETA_CLIP, ETA_CLIP)
    eta_r = np.clip(xt @ theta_r, -ETA_CLIP, ETA_CLIP)
    lse = np.logaddexp(0.0, np.logaddexp(eta_l, eta_r))
    return -lse, eta_l - lse, eta_r - lse


def shape_from_predictor(eta):
    """Logistic link kept strictly inside (0, 1)."""
    return np.clip(special.expit(eta), 1e-300, 1.0 - EPS_U)


def local_params(params, xt):
    """Per-row ``(log pi_0, log pi_l, log pi_r, k_l, k_r)``."""
    lp0, lpl, lpr = mixing_logprobs(params.theta_l, params.theta_r, xt)
    k_l = shape_from_predictor(xt @ params.beta_l)
    k_r = shape_from_predictor(xt @ params.beta_r)
    return lp0, lpl, lpr, k_l, k_r


def link_probabilities(params, x):
    """``(pi_l, pi_r)`` at covariate ``x`` (vector) or each row of ``x``."""
    xt = _as_design(params, x)
    _, lpl, lpr = mixing_logprobs(params.theta_l, params.theta_r, xt)
    pl, pr = np.exp(lpl), np.exp(lpr)
    if np.asarray(x).ndim <= 1:
        return float(pl[0]), float(pr[0])
    return pl, pr


def link_shape(beta, x):
    """Logistic shape ``k = 1 / (1 + exp(-xt . beta))``."""
    beta = np.atleast_1d(np.asarray(beta, dtype=float))
    x = np.atleast_1d(np.asarray(x, dtype=float))
    xt = np.concatenate([[1.0], x]) if x.size else np.ones(1)
    if xt.size != beta.size:
        raise ValueError("beta and augmented covariate lengths differ")
    return float(shape_from_predictor(xt @ beta))


def log_left_density(log_u, log_1mu, k, gamma):
    return (k - 1.0) * log_u + (gamma - 1.0) * log_1mu - log_beta(k, gamma)


def log_right_density(log_u, log_1mu, k, gamma):
    return (gamma - 1.0) * log_u + (k - 1.0) * log_1mu - log_beta(gamma, k)


def _check_unit(u):
    u = np.asarray(u, dtype=float)
    if np.any(np.isnan(u)) or np.any((u < EPS_U) | (u > 1.0 - EPS_U)):
        raise ValueError("u must lie inside the clamped unit interval")
    return u


def beta_component_density(u, k, gamma, side="left"):
    """Left-leaning Beta(k, gamma) or right-leaning Beta(gamma, k) density."""
    u = _check_unit(u)
    if not 0.0 < k < 1.0:
        raise ValueError("k must lie in (0, 1)")
    if gamma <= 2.0:
        raise ValueError("gamma must exceed 2")
    lu, l1mu = np.log(u), np.log1p(-u)
    if side == "left":
        out = np.exp(log_left_density(lu, l1mu, k, gamma))
    elif side == "right":
        out = np.exp(log_right_density(lu, l1mu, k, gamma))
    else:
        raise ValueError(f"side must be 'left' or 'right', got {side!r}")
    return out if out.ndim else float(out)


def log_mixture_terms(params, xt, log_u, log_1mu):
    """Stacked log terms ``[log pi_0, log pi_l h_l, log pi_r h_r]``.

    Rows of ``xt`` pair elementwise with ``log_u``.
    """
    lp0, lpl, lpr, k_l, k_r = local_params(params, xt)
    t0 = np.broadcast_to(lp0, np.shape(log_u))
    tl = lpl + log_left_density(log_u, log_1mu, k_l, params.gamma_l)
    tr = lpr + log_right_density(log_u, log_1mu, k_r, params.gamma_r)
    return t0, tl, tr


def log_working_density(params, xt, u):
    u = np.asarray(u, dtype=float)
    t0, tl, tr = log_mixture_terms(params, xt, np.log(u), np.log1p(-u))
    return np.logaddexp(t0, np.logaddexp(tl, tr))


def working_density(u, params, x):
    """Working-model density ``h_x(u)``; ``x`` a vector or ``(m, p)`` rows."""
    u = _check_unit(u)
    xt = _as_design(params, x)
    out = np.exp(log_working_density(params, xt, np.atleast_1d(u)))
    return float(out[0]) if u.ndim == 0 and out.size == 1 else out


def assessor_eval(u, params, x):
    """Assessor ``a_x(u) = (1 - pi_l - pi_r) / h_x(u)``."""
    u = _check_unit(u)
    xt = _as_design(params, x)
    lp0, _, _ = mixing_logprobs(params.theta_l, params.theta_r, xt)
    if np.any(lp0 == -np.inf):
        raise ValueError("degenerate mixture: pi_l + pi_r = 1")
    out = np.exp(lp0 - log_working_density(params, xt, np.atleast_1d(u)))
    out = np.minimum(out, 1.0)
    return float(out[0]) if u.ndim == 0 and out.size == 1 else out


def assessor_rows(params, xt, u):
    """Assessor for each (row of ``xt``, ``u``) pair; no validation."""
    lp0, _, _ = mixing_logprobs(params.theta_l, params.theta_r, xt)
    return np.minimum(np.exp(lp0 - log_working_density(params, xt, u)), 1.0)


def u_transform(z):
    """``Phi(z)`` clamped to ``[EPS_U, 1 - EPS_U]``."""
    z = np.asarray(z, dtype=float)
    if np.any(np.isnan(z)):
        raise ValueError("z contains NaN")
    out = clamp_unit(norm_cdf(z))
    return out if out.ndim else float(out)
