"""Non-personalized baselines: interaction counts and damped mean ratings."""

from __future__ import annotations

import numpy as np

from . import ModelConfig, RatingMatrix, register_model

__all__ = ["AvgRating", "Popular"]


class _ScoreTable:
    """A fixed per-item score vector served to every user."""

    def __init__(self, config, user_ids, item_ids, scores):
        self.config = config
        self.algorithm = config.algorithm
        self.user_ids = list(user_ids)
        self.item_ids = list(item_ids)
        self.user_index = {u: i for i, u in enumerate(self.user_ids)}
        self.item_index = {t: i for i, t in enumerate(self.item_ids)}
        self.scores = np.asarray(scores, dtype=np.float64)

    def score_items(self, user_id: str) -> np.ndarray:
        return self.scores.copy()

    def to_payload(self) -> dict:
        return {"scores": self.scores.tolist()}

    @classmethod
    def from_saved(cls, payload: dict):
        return cls(
            ModelConfig.from_dict(payload["config"]),
            payload["user_ids"],
            payload["item_ids"],
            np.array(payload["data"]["scores"], dtype=np.float64),
        )


@register_model("popular")
class Popular(_ScoreTable):
    """Most-popular recommender: score is the item's interaction count."""

    @classmethod
    def fit(cls, matrix: RatingMatrix, config: ModelConfig) -> "Popular":
        counts = np.diff(matrix.csr.tocsc().indptr).astype(np.float64)
        return cls(config, matrix.user_ids, matrix.item_ids, counts)


@register_model("avg-rating")
class AvgRating(_ScoreTable):
    """Highest-average-rating recommender with Bayesian damping.

    Scores are (sum + d * global_mean) / (count + d), which keeps items with
    a single enthusiastic rating from dominating the ranking.
    """

    @classmethod
    def fit(cls, matrix: RatingMatrix, config: ModelConfig) -> "AvgRating":
        csc = matrix.csr.tocsc()
        counts = np.diff(csc.indptr).astype(np.float64)
        sums = np.asarray(csc.sum(axis=0)).ravel()
        global_mean = matrix.csr.data.mean()
        d = config.damping
        scores = (sums + d * global_mean) / (counts + d)
        return cls(config, matrix.user_ids, matrix.item_ids, scores)
