"""Hierarchical model of user author-gender tendencies and their propagation.

Per user u we observe the known-gender profile size n_u and female-authored
count y_u.  The model is

    y_u ~ Binomial(n_u, theta_u)
    logit(theta_u) ~ Normal(mu, sigma)
    n_u ~ NegBinomial(nu, gamma)          (shape/rate: mean nu/gamma)

optionally extended with per-algorithm recommendation-list observations,
regressing the smoothed list proportion on the user tendency in log-odds:

    logit(theta_bar_ua) ~ Normal(b_a + s_a * logit(theta_u), sigma_a)

Priors: sigma, nu, gamma, sigma_a ~ Exponential(0.01); mu, b_a, s_a ~
Normal(0, 100).  Sampling runs on an unconstrained vector (log transforms
for positive scales, logit for tendencies) and all densities here include
the corresponding Jacobian terms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.special import digamma, expit, gammaln

__all__ = [
    "ModelParams",
    "PosteriorModel",
    "ProfileObservation",
    "RecObservation",
    "inv_logit",
    "log_posterior",
    "grad_log_posterior",
    "logit",
    "smoothed_list_proportion",
]

_PRIOR_RATE = 0.01  # Exponential prior rate for positive scale parameters
_PRIOR_SD = 100.0  # Normal prior sd for unconstrained location parameters
_LOG_2PI = math.log(2.0 * math.pi)


def logit(p):
    """Log odds of a probability; requires p strictly inside (0, 1)."""
    arr = np.asarray(p, dtype=float)
    if np.any(arr <= 0.0) or np.any(arr >= 1.0):
        raise ValueError("logit requires probabilities strictly in (0, 1)")
    out = np.log(arr) - np.log1p(-arr)
    return float(out) if np.isscalar(p) else out


def inv_logit(x):
    """Inverse of :func:`logit`."""
    out = expit(np.asarray(x, dtype=float))
    return float(out) if np.isscalar(x) else out


def smoothed_list_proportion(y, n) -> float:
    """Add-one smoothed female proportion (y + 1) / (n + 2), always in (0, 1)."""
    if y < 0 or n < 0 or y > n:
        raise ValueError(f"need 0 <= y <= n, got y={y}, n={n}")
    return (y + 1) / (n + 2)


@dataclass(frozen=True)
class ProfileObservation:
    """Observed per-user profile counts (known-gender items, female-authored)."""

    user_id: str
    n: int
    y: int

    def __post_init__(self):
        if not 0 <= self.y <= self.n:
            raise ValueError(f"need 0 <= y <= n, got y={self.y}, n={self.n}")


@dataclass(frozen=True)
class RecObservation:
    """Known-gender composition of one algorithm's list for one user."""

    user_id: str
    algorithm_id: str
    n: int
    y: int

    def __post_init__(self):
        if not 0 <= self.y <= self.n:
            raise ValueError(f"need 0 <= y <= n, got y={self.y}, n={self.n}")

    @property
    def theta_bar(self) -> float:
        return smoothed_list_proportion(self.y, self.n)


@dataclass
class ModelParams:
    """One constrained parameter state."""

    mu: float
    sigma: float
    nu: float
    gamma: float
    theta: Mapping[str, float]
    b: Mapping[str, float] = field(default_factory=dict)
    s: Mapping[str, float] = field(default_factory=dict)
    sigma_a: Mapping[str, float] = field(default_factory=dict)

    def satisfies_constraints(self) -> bool:
        if not (self.sigma > 0 and self.nu > 0 and self.gamma > 0):
            return False
        if any(not 0.0 < t < 1.0 for t in self.theta.values()):
            return False
        if any(v <= 0 for v in self.sigma_a.values()):
            return False
        return True


class PosteriorModel:
    """Unconstrained-space posterior density, gradient, and layout.

    The flat coordinate vector is laid out as
    ``[mu, log sigma, log nu, log gamma, eta_1..eta_U, (b_a, s_a, log sigma_a)...]``
    with users and algorithms in sorted id order and any fixed hyperparameters
    removed from the vector.
    """

    FIXABLE = ("mu", "sigma", "nu", "gamma")

    def __init__(
        self,
        profiles: Sequence[ProfileObservation],
        recs: Sequence[RecObservation] = (),
        fixed: Mapping[str, float] | None = None,
    ):
        if not profiles:
            raise ValueError("at least one profile observation is required")
        profiles = sorted(profiles, key=lambda p: p.user_id)
        ids = [p.user_id for p in profiles]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate user ids in profiles")
        self.user_ids = ids
        self._uidx = {u: i for i, u in enumerate(ids)}
        self.n = np.array([p.n for p in profiles], dtype=np.float64)
        self.y = np.array([p.y for p in profiles], dtype=np.float64)
        self.n_users = len(ids)
        # Binomial coefficients are parameter-independent but kept so the
        # density matches the written-out joint model.
        self._log_binom_coef = float(
            np.sum(gammaln(self.n + 1) - gammaln(self.y + 1) - gammaln(self.n - self.y + 1))
        )

        self.algorithm_ids = sorted({r.algorithm_id for r in recs})
        self._aidx = {a: i for i, a in enumerate(self.algorithm_ids)}
        self.n_algs = len(self.algorithm_ids)
        recs = sorted(recs, key=lambda r: (r.algorithm_id, r.user_id))
        missing = [r.user_id for r in recs if r.user_id not in self._uidx]
        if missing:
            raise ValueError(f"rec observations for unknown users: {sorted(set(missing))[:5]}")
        self.obs_user = np.array([self._uidx[r.user_id] for r in recs], dtype=np.intp)
        self.obs_alg = np.array([self._aidx[r.algorithm_id] for r in recs], dtype=np.intp)
        self.obs_z = np.array([logit(r.theta_bar) for r in recs], dtype=np.float64)
        self.obs_per_alg = np.bincount(self.obs_alg, minlength=self.n_algs).astype(np.float64)
        # Observations are sorted by algorithm, so each algorithm owns a
        # contiguous slice of the obs arrays.
        bounds = np.searchsorted(self.obs_alg, np.arange(self.n_algs + 1))
        self.alg_slices = [slice(bounds[i], bounds[i + 1]) for i in range(self.n_algs)]

        fixed = dict(fixed or {})
        unknown = set(fixed) - set(self.FIXABLE)
        if unknown:
            raise ValueError(f"cannot fix parameters {sorted(unknown)}")
        for name in ("sigma", "nu", "gamma"):
            if name in fixed and fixed[name] <= 0:
                raise ValueError(f"fixed {name} must be positive")
        self.fixed = fixed

        # Flat layout for the free coordinates.
        names = []
        for name in self.FIXABLE:
            if name not in fixed:
                names.append(name)
        self.hyper_slots = {name: i for i, name in enumerate(names)}
        self.eta_start = len(names)
        self.alg_start = self.eta_start + self.n_users
        self.n_free = self.alg_start + 3 * self.n_algs
        self.coord_names = (
            names
            + [f"eta[{u}]" for u in ids]
            + [
                f"{p}[{a}]"
                for a in self.algorithm_ids
                for p in ("b", "s", "log_sigma_a")
            ]
        )

    # -- state packing -----------------------------------------------------

    def unpack(self, zvec: np.ndarray):
        """Split a flat vector into (mu, sigma, nu, gamma, eta, b, s, sigma_a)."""
        get = self.hyper_slots.get
        mu = zvec[get("mu")] if "mu" in self.hyper_slots else self.fixed["mu"]
        sigma = (
            math.exp(zvec[get("sigma")]) if "sigma" in self.hyper_slots else self.fixed["sigma"]
        )
        nu = math.exp(zvec[get("nu")]) if "nu" in self.hyper_slots else self.fixed["nu"]
        gamma = (
            math.exp(zvec[get("gamma")]) if "gamma" in self.hyper_slots else self.fixed["gamma"]
        )
        eta = zvec[self.eta_start : self.alg_start]
        tail = zvec[self.alg_start :].reshape(self.n_algs, 3) if self.n_algs else np.empty((0, 3))
        b = tail[:, 0]
        s = tail[:, 1]
        sigma_a = np.exp(tail[:, 2])
        return mu, sigma, nu, gamma, eta, b, s, sigma_a

    def pack(self, params: ModelParams) -> np.ndarray:
        z = np.zeros(self.n_free)
        if "mu" in self.hyper_slots:
            z[self.hyper_slots["mu"]] = params.mu
        if "sigma" in self.hyper_slots:
            z[self.hyper_slots["sigma"]] = math.log(params.sigma)
        if "nu" in self.hyper_slots:
            z[self.hyper_slots["nu"]] = math.log(params.nu)
        if "gamma" in self.hyper_slots:
            z[self.hyper_slots["gamma"]] = math.log(params.gamma)
        eta = np.array([logit(params.theta[u]) for u in self.user_ids])
        z[self.eta_start : self.alg_start] = eta
        for k, a in enumerate(self.algorithm_ids):
            z[self.alg_start + 3 * k] = params.b[a]
            z[self.alg_start + 3 * k + 1] = params.s[a]
            z[self.alg_start + 3 * k + 2] = math.log(params.sigma_a[a])
        return z

    # -- density and gradient ----------------------------------------------

    def log_density(self, zvec: np.ndarray) -> float:
        """Unnormalized log posterior on the unconstrained coordinates.

        Includes the log-Jacobian of the log transforms, so this is the exact
        target the sampler explores.
        """
        mu, sigma, nu, gamma, eta, b, s, sigma_a = self.unpack(zvec)
        n, y = self.n, self.y
        U = self.n_users

        ll = self._log_binom_coef + float(np.sum(y * eta - n * np.logaddexp(0.0, eta)))
        resid_eta = eta - mu
        ll += -U * (math.log(sigma) + 0.5 * _LOG_2PI) - float(
            np.sum(resid_eta**2)
        ) / (2.0 * sigma**2)
        ll += float(
            np.sum(gammaln(n + nu)) - U * gammaln(nu) - np.sum(gammaln(n + 1))
        ) + U * nu * math.log(gamma) - float(np.sum(n + nu)) * math.log1p(gamma)

        if len(self.obs_z):
            sd = sigma_a[self.obs_alg]
            resid = self.obs_z - b[self.obs_alg] - s[self.obs_alg] * eta[self.obs_user]
            ll += float(np.sum(-np.log(sd) - 0.5 * _LOG_2PI - resid**2 / (2.0 * sd**2)))

        # Priors, with Jacobians for every log-transformed coordinate.
        lp = 0.0
        for val, name in ((sigma, "sigma"), (nu, "nu"), (gamma, "gamma")):
            lp += math.log(_PRIOR_RATE) - _PRIOR_RATE * val
            if name in self.hyper_slots:
                lp += math.log(val)
        lp += -0.5 * _LOG_2PI - math.log(_PRIOR_SD) - mu**2 / (2.0 * _PRIOR_SD**2)
        if self.n_algs:
            lp += float(
                np.sum(
                    -0.5 * _LOG_2PI
                    - math.log(_PRIOR_SD)
                    - b**2 / (2.0 * _PRIOR_SD**2)
                    - 0.5 * _LOG_2PI
                    - math.log(_PRIOR_SD)
                    - s**2 / (2.0 * _PRIOR_SD**2)
                    + math.log(_PRIOR_RATE)
                    - _PRIOR_RATE * sigma_a
                    + np.log(sigma_a)
                )
            )
        return ll + lp

    def grad_log_density(self, zvec: np.ndarray) -> np.ndarray:
        """Gradient of :func:`log_density` in the unconstrained coordinates."""
        mu, sigma, nu, gamma, eta, b, s, sigma_a = self.unpack(zvec)
        n, y = self.n, self.y
        U = self.n_users
        grad = np.zeros_like(zvec)

        resid_eta = eta - mu
        g_eta = y - n * expit(eta) - resid_eta / sigma**2
        if len(self.obs_z):
            sd2 = sigma_a[self.obs_alg] ** 2
            resid = self.obs_z - b[self.obs_alg] - s[self.obs_alg] * eta[self.obs_user]
            g_eta += np.bincount(
                self.obs_user,
                weights=s[self.obs_alg] * resid / sd2,
                minlength=U,
            )
        grad[self.eta_start : self.alg_start] = g_eta

        if "mu" in self.hyper_slots:
            grad[self.hyper_slots["mu"]] = float(np.sum(resid_eta)) / sigma**2 - mu / _PRIOR_SD**2
        if "sigma" in self.hyper_slots:
            grad[self.hyper_slots["sigma"]] = (
                -U + float(np.sum(resid_eta**2)) / sigma**2 - _PRIOR_RATE * sigma + 1.0
            )
        if "nu" in self.hyper_slots:
            dnu = float(np.sum(digamma(n + nu))) - U * digamma(nu) + U * (
                math.log(gamma) - math.log1p(gamma)
            )
            grad[self.hyper_slots["nu"]] = nu * dnu - _PRIOR_RATE * nu + 1.0
        if "gamma" in self.hyper_slots:
            grad[self.hyper_slots["gamma"]] = (
                U * nu - (gamma / (1.0 + gamma)) * float(np.sum(n + nu))
                - _PRIOR_RATE * gamma
                + 1.0
            )

        if self.n_algs and len(self.obs_z):
            sd2 = sigma_a**2
            resid = self.obs_z - b[self.obs_alg] - s[self.obs_alg] * eta[self.obs_user]
            gb = np.bincount(self.obs_alg, weights=resid, minlength=self.n_algs)
            gs = np.bincount(
                self.obs_alg, weights=eta[self.obs_user] * resid, minlength=self.n_algs
            )
            gr2 = np.bincount(self.obs_alg, weights=resid**2, minlength=self.n_algs)
            tail = np.stack(
                [
                    gb / sd2 - b / _PRIOR_SD**2,
                    gs / sd2 - s / _PRIOR_SD**2,
                    -self.obs_per_alg + gr2 / sd2 - _PRIOR_RATE * sigma_a + 1.0,
                ],
                axis=1,
            )
            grad[self.alg_start :] = tail.ravel()
        elif self.n_algs:
            tail = np.stack(
                [
                    -b / _PRIOR_SD**2,
                    -s / _PRIOR_SD**2,
                    -self.obs_per_alg - _PRIOR_RATE * sigma_a + 1.0,
                ],
                axis=1,
            )
            grad[self.alg_start :] = tail.ravel()
        return grad

    # -- per-block pieces used by the sampler --------------------------------

    def eta_terms(self, eta, mu, sigma, b, s, sigma_a):
        """Per-user conditional log density of eta (constants dropped)."""
        out = self.y * eta - self.n * np.logaddexp(0.0, eta) - (eta - mu) ** 2 / (2 * sigma**2)
        if len(self.obs_z):
            sd2 = sigma_a[self.obs_alg] ** 2
            resid = self.obs_z - b[self.obs_alg] - s[self.obs_alg] * eta[self.obs_user]
            out += np.bincount(
                self.obs_user, weights=-(resid**2) / (2 * sd2), minlength=self.n_users
            )
        return out

    def eta_grad(self, eta, mu, sigma, b, s, sigma_a):
        """Per-user gradient of :func:`eta_terms`."""
        g = self.y - self.n * expit(eta) - (eta - mu) / sigma**2
        if len(self.obs_z):
            sd2 = sigma_a[self.obs_alg] ** 2
            resid = self.obs_z - b[self.obs_alg] - s[self.obs_alg] * eta[self.obs_user]
            g += np.bincount(
                self.obs_user,
                weights=s[self.obs_alg] * resid / sd2,
                minlength=self.n_users,
            )
        return g

    def mu_sigma_terms(self, mu, w_sigma, eta) -> float:
        """Block target for (mu, log sigma) given eta (constants dropped)."""
        sigma = math.exp(w_sigma)
        val = -self.n_users * w_sigma - float(np.sum((eta - mu) ** 2)) / (2 * sigma**2)
        val += -_PRIOR_RATE * sigma + w_sigma
        val += -(mu**2) / (2 * _PRIOR_SD**2)
        return val

    def nu_gamma_terms(self, w_nu, w_gamma) -> float:
        """Block target for (log nu, log gamma); depends only on profile sizes."""
        nu = math.exp(w_nu)
        gamma = math.exp(w_gamma)
        n, U = self.n, self.n_users
        val = float(np.sum(gammaln(n + nu))) - U * gammaln(nu)
        val += U * nu * math.log(gamma) - float(np.sum(n + nu)) * math.log1p(gamma)
        val += -_PRIOR_RATE * nu + w_nu - _PRIOR_RATE * gamma + w_gamma
        return float(val)

    def alg_terms(self, a: int, b_a, s_a, w_a, eta) -> float:
        """Block target for one algorithm's (b, s, log sigma_a)."""
        sd = math.exp(w_a)
        sl = self.alg_slices[a]
        resid = self.obs_z[sl] - b_a - s_a * eta[self.obs_user[sl]]
        val = -self.obs_per_alg[a] * w_a - float(np.sum(resid**2)) / (2 * sd**2)
        val += -_PRIOR_RATE * sd + w_a
        val += -(b_a**2) / (2 * _PRIOR_SD**2) - (s_a**2) / (2 * _PRIOR_SD**2)
        return val


def log_posterior(
    params: ModelParams,
    profiles: Iterable[ProfileObservation],
    recs: Iterable[RecObservation] = (),
) -> float:
    """Unnormalized log posterior of a constrained parameter state.

    Constraint violations return -inf rather than raising.  The value
    includes the Jacobian terms of the sampling transforms, so differences
    between two states are exactly the sampler's acceptance log-ratios.
    """
    model = PosteriorModel(list(profiles), list(recs))
    if not params.satisfies_constraints():
        return float("-inf")
    missing = [u for u in model.user_ids if u not in params.theta]
    if missing:
        raise ValueError(f"params.theta missing users {missing[:5]}")
    return model.log_density(model.pack(params))


def grad_log_posterior(
    params: ModelParams,
    profiles: Iterable[ProfileObservation],
    recs: Iterable[RecObservation] = (),
) -> np.ndarray:
    """Gradient of :func:`log_posterior` in the unconstrained coordinates.

    Coordinate order matches ``PosteriorModel.coord_names``.
    """
    model = PosteriorModel(list(profiles), list(recs))
    if not params.satisfies_constraints():
        raise ValueError("gradient requested at a constraint-violating state")
    return model.grad_log_density(model.pack(params))
