"""Alternating least squares matrix factorization, explicit and implicit.

The explicit variant minimizes squared error on observed ratings with L2
regularization.  The implicit variant is weighted regularized factorization
where observed interactions get confidence ``1 + alpha * r`` and every
unobserved cell counts as a zero-preference observation with unit confidence.
Each half-sweep solves exact per-row normal equations, so the training
objective never increases between half-sweeps.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sps

from . import ModelConfig, RatingMatrix, TrainingError, register_model

__all__ = ["ExplicitALS", "ImplicitALS"]

_REL_TOL = 1e-5  # early stop when the objective moves less than this, relatively


class _MFBase:
    def __init__(self, config, user_ids, item_ids, P, Q):
        self.config = config
        self.algorithm = config.algorithm
        self.user_ids = list(user_ids)
        self.item_ids = list(item_ids)
        self.user_index = {u: i for i, u in enumerate(self.user_ids)}
        self.item_index = {t: i for i, t in enumerate(self.item_ids)}
        self.P = P  # users x f
        self.Q = Q  # items x f

    def score_items(self, user_id: str) -> np.ndarray:
        u = self.user_index[user_id]
        return self.Q @ self.P[u]

    def to_payload(self) -> dict:
        return {"P": self.P.tolist(), "Q": self.Q.tolist()}

    @classmethod
    def from_saved(cls, payload: dict):
        d = payload["data"]
        return cls(
            ModelConfig.from_dict(payload["config"]),
            payload["user_ids"],
            payload["item_ids"],
            np.array(d["P"], dtype=np.float64),
            np.array(d["Q"], dtype=np.float64),
        )


def _init_factors(rng: np.random.Generator, n: int, f: int) -> np.ndarray:
    return rng.uniform(-0.01, 0.01, size=(n, f))


def _solve_row(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.solve(A, b)
    except np.linalg.LinAlgError:
        return np.linalg.lstsq(A, b, rcond=None)[0]


@register_model("als-explicit")
class ExplicitALS(_MFBase):
    """Regularized least-squares factorization of observed ratings."""

    @classmethod
    def fit(cls, matrix: RatingMatrix, config: ModelConfig) -> "ExplicitALS":
        rng = np.random.default_rng(config.seed)
        n_users, n_items = matrix.shape
        f, lam = config.factors, config.reg
        P = _init_factors(rng, n_users, f)
        Q = _init_factors(rng, n_items, f)
        R = matrix.csr
        Rt = R.T.tocsr()

        prev = cls.objective_value(R, P, Q, lam)
        for _ in range(config.epochs):
            cls.half_sweep(R, P, Q, lam)
            cls.half_sweep(Rt, Q, P, lam)
            if not (np.all(np.isfinite(P)) and np.all(np.isfinite(Q))):
                raise TrainingError("als diverged: non-finite factors")
            obj = cls.objective_value(R, P, Q, lam)
            if prev > 0 and abs(prev - obj) / prev < _REL_TOL:
                prev = obj
                break
            prev = obj
        return cls(config, matrix.user_ids, matrix.item_ids, P, Q)

    @staticmethod
    def half_sweep(R: sps.csr_matrix, this: np.ndarray, other: np.ndarray, lam: float) -> None:
        f = this.shape[1]
        lamI = lam * np.eye(f)
        for i in range(this.shape[0]):
            lo, hi = R.indptr[i], R.indptr[i + 1]
            if lo == hi:
                continue
            cols = R.indices[lo:hi]
            vals = R.data[lo:hi]
            M = other[cols]
            A = M.T @ M + lamI
            b = M.T @ vals
            this[i] = _solve_row(A, b)

    @staticmethod
    def objective_value(R: sps.csr_matrix, P: np.ndarray, Q: np.ndarray, lam: float) -> float:
        rows, cols = R.nonzero()
        pred = np.einsum("ij,ij->i", P[rows], Q[cols])
        err = np.asarray(R[rows, cols]).ravel() - pred
        return float(err @ err + lam * ((P * P).sum() + (Q * Q).sum()))

    def objective(self, matrix: RatingMatrix) -> float:
        """Regularized squared error of the current factors on the training data."""
        return self.objective_value(matrix.csr, self.P, self.Q, self.config.reg)

    def training_rmse(self, matrix: RatingMatrix) -> float:
        R = matrix.csr
        rows, cols = R.nonzero()
        pred = np.einsum("ij,ij->i", self.P[rows], self.Q[cols])
        err = np.asarray(R[rows, cols]).ravel() - pred
        return float(np.sqrt(np.mean(err * err)))


@register_model("als-implicit")
class ImplicitALS(_MFBase):
    """Confidence-weighted factorization of the preference indicator matrix."""

    @classmethod
    def fit(cls, matrix: RatingMatrix, config: ModelConfig) -> "ImplicitALS":
        rng = np.random.default_rng(config.seed)
        n_users, n_items = matrix.shape
        f, lam, alpha = config.factors, config.reg, config.alpha
        P = _init_factors(rng, n_users, f)
        Q = _init_factors(rng, n_items, f)
        R = matrix.csr
        Rt = R.T.tocsr()

        prev = cls.objective_value(R, P, Q, lam, alpha)
        for _ in range(config.epochs):
            cls.half_sweep(R, P, Q, lam, alpha)
            cls.half_sweep(Rt, Q, P, lam, alpha)
            if not (np.all(np.isfinite(P)) and np.all(np.isfinite(Q))):
                raise TrainingError("als diverged: non-finite factors")
            obj = cls.objective_value(R, P, Q, lam, alpha)
            if prev > 0 and abs(prev - obj) / prev < _REL_TOL:
                prev = obj
                break
            prev = obj
        return cls(config, matrix.user_ids, matrix.item_ids, P, Q)

    @staticmethod
    def half_sweep(R, this, other, lam, alpha) -> None:
        f = other.shape[1]
        base = other.T @ other + lam * np.eye(f)
        for i in range(this.shape[0]):
            lo, hi = R.indptr[i], R.indptr[i + 1]
            if lo == hi:
                continue
            cols = R.indices[lo:hi]
            conf = 1.0 + alpha * R.data[lo:hi]
            M = other[cols]
            A = base + M.T @ ((conf - 1.0)[:, None] * M)
            b = M.T @ conf
            this[i] = _solve_row(A, b)

    @staticmethod
    def objective_value(R: sps.csr_matrix, P, Q, lam: float, alpha: float) -> float:
        # Sum over every cell of c * (p - x.y)^2, folded so only observed
        # cells need individual treatment:
        #   sum_all (x.y)^2 = tr((P'P)(Q'Q))
        #   observed cells add c*(1 - s)^2 - s^2 with s = x.y, c = 1 + alpha*r
        total_sq = float(np.trace((P.T @ P) @ (Q.T @ Q)))
        rows, cols = R.nonzero()
        s = np.einsum("ij,ij->i", P[rows], Q[cols])
        conf = 1.0 + alpha * np.asarray(R[rows, cols]).ravel()
        obs = conf * (1.0 - s) ** 2 - s**2
        return float(total_sq + obs.sum() + lam * ((P * P).sum() + (Q * Q).sum()))

    def objective(self, matrix: RatingMatrix) -> float:
        """Weighted implicit objective of the current factors on the training data."""
        return self.objective_value(
            matrix.csr, self.P, self.Q, self.config.reg, self.config.alpha
        )
