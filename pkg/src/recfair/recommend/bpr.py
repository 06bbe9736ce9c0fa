"""Bayesian personalized ranking: pairwise matrix factorization by SGD.

Each training step samples an observed (user, item) pair and a uniformly
random unobserved item, then descends the regularized pairwise logistic
loss on the score difference.  Implicit feedback only.
"""

from __future__ import annotations

import numpy as np

from . import ModelConfig, RatingMatrix, register_model

__all__ = ["BPR", "pairwise_grad", "pairwise_loss"]


def _sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + np.exp(-x))
    e = np.exp(x)
    return e / (1.0 + e)


def pairwise_loss(P, Q, u: int, i: int, j: int, reg: float) -> float:
    """Per-sample objective: -log sigma(x_ui - x_uj) plus the L2 penalty."""
    x = float(P[u] @ (Q[i] - Q[j]))
    # log(1 + exp(-x)) without overflow
    nll = np.logaddexp(0.0, -x)
    pen = 0.5 * reg * (P[u] @ P[u] + Q[i] @ Q[i] + Q[j] @ Q[j])
    return float(nll + pen)


def pairwise_grad(P, Q, u: int, i: int, j: int, reg: float):
    """Gradient of :func:`pairwise_loss` in (P[u], Q[i], Q[j])."""
    x = float(P[u] @ (Q[i] - Q[j]))
    g = -_sigmoid(-x)  # d nll / d x
    gp = g * (Q[i] - Q[j]) + reg * P[u]
    gi = g * P[u] + reg * Q[i]
    gj = -g * P[u] + reg * Q[j]
    return gp, gi, gj


@register_model("bpr")
class BPR:
    """Pairwise-ranking matrix factorization."""

    def __init__(self, config, user_ids, item_ids, P, Q):
        self.config = config
        self.algorithm = config.algorithm
        self.user_ids = list(user_ids)
        self.item_ids = list(item_ids)
        self.user_index = {u: i for i, u in enumerate(self.user_ids)}
        self.item_index = {t: i for i, t in enumerate(self.item_ids)}
        self.P = P
        self.Q = Q

    @classmethod
    def fit(cls, matrix: RatingMatrix, config: ModelConfig) -> "BPR":
        rng = np.random.default_rng(config.seed)
        n_users, n_items = matrix.shape
        f = config.factors
        P = rng.uniform(-0.01, 0.01, size=(n_users, f))
        Q = rng.uniform(-0.01, 0.01, size=(n_items, f))

        coo = matrix.csr.tocoo()
        pos_u = coo.row
        pos_i = coo.col
        nnz = len(pos_u)
        profiles = [set(matrix.csr.getrow(u).indices) for u in range(n_users)]

        lr, reg = config.learn_rate, config.reg
        for _ in range(config.epochs):
            for _ in range(nnz):
                idx = int(rng.integers(nnz))
                u, i = int(pos_u[idx]), int(pos_i[idx])
                if len(profiles[u]) >= n_items:
                    continue  # no negative item exists for this user
                j = int(rng.integers(n_items))
                while j in profiles[u]:
                    j = int(rng.integers(n_items))
                gp, gi, gj = pairwise_grad(P, Q, u, i, j, reg)
                P[u] -= lr * gp
                Q[i] -= lr * gi
                Q[j] -= lr * gj
        return cls(config, matrix.user_ids, matrix.item_ids, P, Q)

    def score_items(self, user_id: str) -> np.ndarray:
        u = self.user_index[user_id]
        return self.Q @ self.P[u]

    def to_payload(self) -> dict:
        return {"P": self.P.tolist(), "Q": self.Q.tolist()}

    @classmethod
    def from_saved(cls, payload: dict) -> "BPR":
        d = payload["data"]
        return cls(
            ModelConfig.from_dict(payload["config"]),
            payload["user_ids"],
            payload["item_ids"],
            np.array(d["P"], dtype=np.float64),
            np.array(d["Q"], dtype=np.float64),
        )
