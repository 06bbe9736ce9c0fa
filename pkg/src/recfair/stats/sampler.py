"""Adaptive MCMC for the hierarchical tendency model.

User tendencies move by per-user Langevin (MALA) steps, which are valid
independent scalar Metropolis updates because the tendencies are
conditionally independent given the hyperparameters.  Hyperparameters move
in small blocks by random-walk Metropolis with proposal covariance learned
during warmup.  All adaptation freezes when warmup ends, so the sampling
phase is a fixed-kernel chain.  Chains are deterministic given (seed, chain
index) and may run in parallel processes.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.special import expit

from .diagnostics import ess, split_rhat
from .model import PosteriorModel, ProfileObservation, RecObservation

__all__ = ["McmcConfig", "PosteriorSamples", "fit"]

_TARGET_ACCEPT_ETA = 0.574  # scalar MALA optimum
_TARGET_ACCEPT_BLOCK = 0.30
_DRIFT_CAP = 2.0  # cap on the Langevin drift, keeps early steps sane
_HYPER_PASSES = 2  # hyper blocks update this many times per iteration
_RHAT_FLAG = 1.1


@dataclass
class McmcConfig:
    """Chain layout: warmup draws are discarded, iterations are retained."""

    chains: int = 4
    warmup: int = 2500
    iterations: int = 2500
    seed: int = 0

    def __post_init__(self):
        if self.chains < 1 or self.warmup < 1 or self.iterations < 1:
            raise ValueError("chains, warmup, and iterations must be positive")
        if self.seed is None:
            raise ValueError("seed is mandatory")


class _Block:
    """Adaptive random-walk Metropolis on a small coordinate block."""

    def __init__(self, dim: int, scale: float = 0.2):
        self.dim = dim
        self.log_scale = math.log(scale)
        self.count = 0
        self.mean = np.zeros(dim)
        self.m2 = np.zeros((dim, dim))

    def _observe(self, x: np.ndarray) -> None:
        self.count += 1
        delta = x - self.mean
        self.mean += delta / self.count
        self.m2 += np.outer(delta, x - self.mean)

    def propose(self, x: np.ndarray, rng) -> np.ndarray:
        step = rng.standard_normal(self.dim)
        if self.count > 100:
            cov = self.m2 / (self.count - 1) + 1e-8 * np.eye(self.dim)
            step = np.linalg.cholesky(cov) @ step
        return x + math.exp(self.log_scale) * step

    def adapt(self, x: np.ndarray, alpha: float, t: int) -> None:
        self._observe(x)
        self.log_scale += (t + 1) ** -0.6 * (alpha - _TARGET_ACCEPT_BLOCK)
        self.log_scale = min(max(self.log_scale, -15.0), 5.0)


def _metropolis(target, cur_x, cur_val, block: _Block, rng, adapt: bool, t: int):
    prop = block.propose(cur_x, rng)
    prop_val = target(prop)
    log_alpha = prop_val - cur_val
    if not math.isfinite(prop_val):
        log_alpha = -math.inf
    if math.log(rng.uniform()) < log_alpha:
        cur_x, cur_val = prop, prop_val
    if adapt:
        block.adapt(cur_x, math.exp(min(0.0, log_alpha)), t)
    return cur_x, cur_val


def _initial_state(model: PosteriorModel, rng):
    """Data-informed starting point with chain-specific jitter."""
    n, y = model.n, model.y
    phat = (y + 1.0) / (n + 2.0)
    eta_hat = np.log(phat) - np.log1p(-phat)
    eta = eta_hat + 0.5 * rng.standard_normal(model.n_users)

    fixed = model.fixed
    mu = fixed.get("mu", float(np.mean(eta_hat)) + 0.3 * rng.standard_normal())
    sigma = fixed.get(
        "sigma",
        float(np.clip(np.std(eta_hat), 0.2, 5.0)) * math.exp(0.3 * rng.standard_normal()),
    )
    m = float(np.mean(n))
    v = float(np.var(n))
    if v > m * 1.01:
        gamma0 = m / (v - m)
    else:
        gamma0 = 1.0
    gamma0 = float(np.clip(gamma0, 1e-2, 1e2))
    nu0 = float(np.clip(m * gamma0, 1e-2, 1e3))
    nu = fixed.get("nu", nu0 * math.exp(0.3 * rng.standard_normal()))
    gamma = fixed.get("gamma", gamma0 * math.exp(0.3 * rng.standard_normal()))

    b = np.zeros(model.n_algs)
    s = np.zeros(model.n_algs)
    w_a = np.zeros(model.n_algs)
    for a in range(model.n_algs):
        sl = model.alg_slices[a]
        x = eta_hat[model.obs_user[sl]]
        z = model.obs_z[sl]
        if len(z) >= 2 and np.std(x) > 1e-9:
            slope, intercept = np.polyfit(x, z, 1)
            resid_sd = float(np.std(z - intercept - slope * x))
        else:
            slope, intercept, resid_sd = 0.0, float(np.mean(z)) if len(z) else 0.0, 1.0
        b[a] = intercept + 0.3 * rng.standard_normal()
        s[a] = slope + 0.3 * rng.standard_normal()
        w_a[a] = math.log(max(resid_sd, 0.05)) + 0.3 * rng.standard_normal()
    return eta, mu, sigma, nu, gamma, b, s, w_a


def _run_chain(model: PosteriorModel, config: McmcConfig, chain: int) -> dict:
    rng = np.random.default_rng([config.seed, chain])
    U, A = model.n_users, model.n_algs
    eta, mu, sigma, nu, gamma, b, s, w_a = _initial_state(model, rng)
    w_sigma = math.log(sigma)
    w_nu = math.log(nu)
    w_gamma = math.log(gamma)

    free_mu = "mu" not in model.fixed
    free_sigma = "sigma" not in model.fixed
    free_nu = "nu" not in model.fixed
    free_gamma = "gamma" not in model.fixed

    log_eps = np.full(U, math.log(0.5))
    ms_free = [free_mu, free_sigma]
    ng_free = [free_nu, free_gamma]
    ms_block = _Block(sum(ms_free)) if any(ms_free) else None
    ng_block = _Block(sum(ng_free)) if any(ng_free) else None
    alg_blocks = [_Block(3) for _ in range(A)]

    T = config.iterations
    out = {
        "theta": np.empty((T, U)),
        "mu": np.empty(T),
        "sigma": np.empty(T),
        "nu": np.empty(T),
        "gamma": np.empty(T),
        "b": np.empty((T, A)),
        "s": np.empty((T, A)),
        "sigma_a": np.empty((T, A)),
    }
    accept_eta = np.zeros(U)

    total = config.warmup + T
    for t in range(total):
        adapt = t < config.warmup

        # --- user tendencies: one vectorized per-user MALA step
        sigma_a = np.exp(w_a)
        eps = np.exp(log_eps)
        eps2 = eps**2
        g = model.eta_grad(eta, mu, sigma, b, s, sigma_a)
        drift = np.clip(0.5 * eps2 * g, -_DRIFT_CAP, _DRIFT_CAP)
        prop = eta + drift + eps * rng.standard_normal(U)
        gp = model.eta_grad(prop, mu, sigma, b, s, sigma_a)
        drift_p = np.clip(0.5 * eps2 * gp, -_DRIFT_CAP, _DRIFT_CAP)
        ell_cur = model.eta_terms(eta, mu, sigma, b, s, sigma_a)
        ell_prop = model.eta_terms(prop, mu, sigma, b, s, sigma_a)
        fwd = prop - eta - drift
        rev = eta - prop - drift_p
        log_alpha = ell_prop - ell_cur + (fwd**2 - rev**2) / (2.0 * eps2)
        log_alpha = np.where(np.isfinite(log_alpha), log_alpha, -np.inf)
        accept = np.log(rng.uniform(size=U)) < log_alpha
        eta = np.where(accept, prop, eta)
        if adapt:
            alpha = np.exp(np.minimum(0.0, log_alpha))
            log_eps += (t + 1) ** -0.6 * (alpha - _TARGET_ACCEPT_ETA)
            np.clip(log_eps, -12.0, 4.0, out=log_eps)
        elif not adapt:
            accept_eta += accept

        # --- hyperparameter blocks
        for _ in range(_HYPER_PASSES):
            if ms_block is not None:

                def ms_target(vec, _eta=eta):
                    vals = iter(vec)
                    m_ = next(vals) if free_mu else mu
                    w_ = next(vals) if free_sigma else w_sigma
                    return model.mu_sigma_terms(m_, w_, _eta)

                cur = np.array([v for v, f in ((mu, free_mu), (w_sigma, free_sigma)) if f])
                cur, _ = _metropolis(ms_target, cur, ms_target(cur), ms_block, rng, adapt, t)
                vals = iter(cur)
                if free_mu:
                    mu = float(next(vals))
                if free_sigma:
                    w_sigma = float(next(vals))
                    sigma = math.exp(w_sigma)

            if ng_block is not None:

                def ng_target(vec):
                    vals = iter(vec)
                    wn = next(vals) if free_nu else w_nu
                    wg = next(vals) if free_gamma else w_gamma
                    return model.nu_gamma_terms(wn, wg)

                cur = np.array([v for v, f in ((w_nu, free_nu), (w_gamma, free_gamma)) if f])
                cur, _ = _metropolis(ng_target, cur, ng_target(cur), ng_block, rng, adapt, t)
                vals = iter(cur)
                if free_nu:
                    w_nu = float(next(vals))
                    nu = math.exp(w_nu)
                if free_gamma:
                    w_gamma = float(next(vals))
                    gamma = math.exp(w_gamma)

            for a in range(A):

                def alg_target(vec, _a=a, _eta=eta):
                    return model.alg_terms(_a, vec[0], vec[1], vec[2], _eta)

                cur = np.array([b[a], s[a], w_a[a]])
                cur, _ = _metropolis(
                    alg_target, cur, alg_target(cur), alg_blocks[a], rng, adapt, t
                )
                b[a], s[a], w_a[a] = cur

        if not adapt:
            i = t - config.warmup
            out["theta"][i] = expit(eta)
            out["mu"][i] = mu
            out["sigma"][i] = sigma
            out["nu"][i] = nu
            out["gamma"][i] = gamma
            out["b"][i] = b
            out["s"][i] = s
            out["sigma_a"][i] = np.exp(w_a)

    out["accept_eta"] = accept_eta / T
    return out


@dataclass
class PosteriorSamples:
    """Retained MCMC draws with per-parameter convergence diagnostics."""

    draws: dict
    user_ids: list[str]
    algorithm_ids: list[str]
    warmup: int
    seed: int
    fixed: dict
    diagnostics: dict = field(default_factory=dict)
    converged: bool = True
    nonconverged: list[str] = field(default_factory=list)
    sampler_info: dict = field(default_factory=dict)

    @property
    def n_chains(self) -> int:
        return self.draws["mu"].shape[0]

    @property
    def n_iterations(self) -> int:
        return self.draws["mu"].shape[1]

    @property
    def total_retained(self) -> int:
        return self.n_chains * self.n_iterations

    def scalar_names(self) -> list[str]:
        names = [p for p in ("mu", "sigma", "nu", "gamma") if p not in self.fixed]
        names += [f"theta[{u}]" for u in self.user_ids]
        for a in self.algorithm_ids:
            names += [f"b[{a}]", f"s[{a}]", f"sigma_a[{a}]"]
        return names

    def scalar_draws(self, name: str) -> np.ndarray:
        """Draws of one scalar parameter, shaped (chains, iterations)."""
        if name in ("mu", "sigma", "nu", "gamma"):
            if name in self.fixed:
                c, t = self.draws["mu"].shape
                return np.full((c, t), self.fixed[name])
            return self.draws[name]
        base, _, key = name.partition("[")
        key = key.rstrip("]")
        if base == "theta":
            return self.draws["theta"][:, :, self.user_ids.index(key)]
        if base in ("b", "s", "sigma_a"):
            return self.draws[base][:, :, self.algorithm_ids.index(key)]
        raise KeyError(name)

    def flat(self, name: str) -> np.ndarray:
        """All retained draws of one scalar, chain-major order."""
        return self.scalar_draws(name).reshape(-1)

    def compute_diagnostics(self) -> None:
        diag = {}
        offenders = []
        for name in self.scalar_names():
            d = self.scalar_draws(name)
            r = split_rhat(d)
            e = ess(d)
            diag[name] = {"rhat": r, "ess": e}
            if r > _RHAT_FLAG:
                offenders.append(name)
        self.diagnostics = diag
        self.nonconverged = offenders
        self.converged = not offenders


def fit(
    profiles: Sequence[ProfileObservation],
    recs: Sequence[RecObservation] = (),
    config: McmcConfig | None = None,
    fixed: Mapping[str, float] | None = None,
    threads: int = 1,
) -> PosteriorSamples:
    """Draw from the joint posterior of the tendency model.

    ``fixed`` clamps named hyperparameters (mu, sigma, nu, gamma) instead of
    sampling them.  Needs at least two users unless both mu and sigma are
    fixed.  Identical seeds give identical draws; chains run in separate
    processes when ``threads`` exceeds one, with results identical to the
    sequential run.
    """
    if config is None:
        raise ValueError("an explicit McmcConfig (with seed) is required")
    fixed = dict(fixed or {})
    if len(profiles) < 2 and not ("mu" in fixed and "sigma" in fixed):
        raise ValueError("need at least 2 users when mu and sigma are free")
    model = PosteriorModel(list(profiles), list(recs), fixed=fixed)

    workers = min(threads, config.chains)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chains = list(
                pool.map(_run_chain, [model] * config.chains, [config] * config.chains,
                         range(config.chains))
            )
    else:
        chains = [_run_chain(model, config, c) for c in range(config.chains)]

    draws = {
        key: np.stack([c[key] for c in chains])
        for key in ("theta", "mu", "sigma", "nu", "gamma", "b", "s", "sigma_a")
    }
    samples = PosteriorSamples(
        draws=draws,
        user_ids=list(model.user_ids),
        algorithm_ids=list(model.algorithm_ids),
        warmup=config.warmup,
        seed=config.seed,
        fixed=fixed,
        sampler_info={"accept_eta": np.stack([c["accept_eta"] for c in chains])},
    )
    samples.compute_diagnostics()
    return samples
