"""Collaborative filtering recommenders and non-personalized baselines.

Five trainable models (user/item kNN in explicit and implicit flavors,
explicit and implicit ALS matrix factorization, BPR pairwise ranking) plus
interaction-count and damped-mean-rating baselines.  All models share the
``train`` / ``recommend`` entry points and a JSON save format.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sps

from ..interactions import EXPLICIT, IMPLICIT, InteractionSet

__all__ = [
    "ALGORITHMS",
    "ModelConfig",
    "RatingMatrix",
    "RecList",
    "TrainingError",
    "load_model",
    "recommend",
    "save_model",
    "train",
]

ALGORITHMS = ("uu", "ii", "als", "bpr", "popular", "avg-rating")


class TrainingError(RuntimeError):
    """Raised when a model cannot be trained on the given data."""


@dataclass
class ModelConfig:
    """Algorithm choice plus hyperparameters.

    Only the parameters relevant to the chosen algorithm are consulted.
    ``seed`` is mandatory for the stochastic trainers (als, bpr).
    """

    algorithm: str
    k: int = 20
    factors: int = 50
    reg: float = 0.1
    learn_rate: float = 0.05
    epochs: int = 20
    alpha: float = 40.0
    min_neighbors: int = 2
    damping: float = 5.0
    seed: int | None = None

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        for name in ("k", "factors", "epochs", "min_neighbors"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        for name in ("learn_rate", "alpha"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.reg < 0 or self.damping < 0:
            raise ValueError("reg and damping must be non-negative")
        if self.algorithm in ("als", "bpr") and self.seed is None:
            raise ValueError(f"{self.algorithm} requires an explicit seed")

    def validate_mode(self, mode: str) -> None:
        if self.algorithm == "bpr" and mode != IMPLICIT:
            raise ValueError("bpr trains on implicit feedback only")
        if self.algorithm == "avg-rating" and mode != EXPLICIT:
            raise ValueError("avg-rating needs explicit ratings")

    def to_dict(self) -> dict:
        return {
            "algorithm": self.algorithm,
            "k": self.k,
            "factors": self.factors,
            "reg": self.reg,
            "learn_rate": self.learn_rate,
            "epochs": self.epochs,
            "alpha": self.alpha,
            "min_neighbors": self.min_neighbors,
            "damping": self.damping,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


class RatingMatrix:
    """Sparse user-by-item matrix with deterministic (sorted) index order."""

    def __init__(self, mode, csr, user_ids, item_ids, scale=None):
        self.mode = mode
        self.csr = csr.tocsr()
        self.user_ids = list(user_ids)
        self.item_ids = list(item_ids)
        self.user_index = {u: i for i, u in enumerate(self.user_ids)}
        self.item_index = {t: i for i, t in enumerate(self.item_ids)}
        self.scale = scale
        if mode == EXPLICIT:
            counts = np.diff(self.csr.indptr)
            sums = np.asarray(self.csr.sum(axis=1)).ravel()
            with np.errstate(invalid="ignore"):
                self.user_means = np.where(counts > 0, sums / np.maximum(counts, 1), 0.0)
            csc = self.csr.tocsc()
            icounts = np.diff(csc.indptr)
            isums = np.asarray(csc.sum(axis=0)).ravel()
            self.item_means = np.where(icounts > 0, isums / np.maximum(icounts, 1), 0.0)
        else:
            self.user_means = None
            self.item_means = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.csr.shape

    @property
    def nnz(self) -> int:
        return self.csr.nnz

    @classmethod
    def from_interactions(
        cls, iset: InteractionSet, scale: tuple[float, float] | None = None
    ) -> "RatingMatrix":
        users = iset.users()
        items = iset.items()
        uidx = {u: i for i, u in enumerate(users)}
        iidx = {t: i for i, t in enumerate(items)}
        rows, cols, vals = [], [], []
        for it in iset.interactions:
            rows.append(uidx[it.user_id])
            cols.append(iidx[it.item_id])
            vals.append(1.0 if iset.mode == IMPLICIT else float(it.rating))
        csr = sps.csr_matrix(
            (vals, (rows, cols)), shape=(len(users), len(items)), dtype=np.float64
        )
        if scale is None and iset.mode == EXPLICIT and vals:
            scale = (min(vals), max(vals))
        return cls(iset.mode, csr, users, items, scale=scale)

    def user_row(self, user_id: str):
        return self.csr.getrow(self.user_index[user_id])


@dataclass
class RecList:
    """An ordered recommendation list for one user.

    ``no_coverage`` marks the unknown-user case; a known user for whom the
    model can score fewer than ``n`` items just gets a short list.
    """

    user_id: str
    entries: list[tuple[str, float]]
    algorithm: str
    no_coverage: bool = False

    def item_ids(self) -> list[str]:
        return [item for item, _ in self.entries]

    def __len__(self) -> int:
        return len(self.entries)


def train(matrix: RatingMatrix, config: ModelConfig):
    """Fit the configured model on the matrix."""
    from . import als, baselines, bpr, knn

    if matrix.nnz == 0:
        raise TrainingError("empty rating matrix")
    config.validate_mode(matrix.mode)
    if config.algorithm == "uu":
        return knn.UserKNN.fit(matrix, config)
    if config.algorithm == "ii":
        return knn.ItemKNN.fit(matrix, config)
    if config.algorithm == "als":
        if matrix.mode == EXPLICIT:
            return als.ExplicitALS.fit(matrix, config)
        return als.ImplicitALS.fit(matrix, config)
    if config.algorithm == "bpr":
        return bpr.BPR.fit(matrix, config)
    if config.algorithm == "popular":
        return baselines.Popular.fit(matrix, config)
    return baselines.AvgRating.fit(matrix, config)


def recommend(model, user_id: str, n: int, matrix: RatingMatrix) -> RecList:
    """Top-n items by model score, excluding the user's training items.

    Ties break by ascending item id so identical inputs always produce
    identical lists.  Unknown users yield an empty list flagged no-coverage.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    if user_id not in model.user_index:
        return RecList(user_id, [], model.algorithm, no_coverage=True)
    scores = model.score_items(user_id)
    rated = set()
    if user_id in matrix.user_index:
        row = matrix.user_row(user_id)
        rated = {matrix.item_ids[j] for j in row.indices}
    scored = []
    for j, s in enumerate(scores):
        if np.isnan(s):
            continue
        item = model.item_ids[j]
        if item in rated:
            continue
        scored.append((item, float(s)))
    scored.sort(key=lambda e: (-e[1], e[0]))
    return RecList(user_id, scored[:n], model.algorithm)


_MODEL_KINDS: dict = {}


def register_model(kind: str):
    def deco(cls):
        _MODEL_KINDS[kind] = cls
        cls.kind = kind
        return cls

    return deco


def save_model(model, path) -> None:
    """Persist a trained model as a deterministic JSON container."""
    payload = {
        "format": "recfair-model",
        "version": 1,
        "kind": model.kind,
        "algorithm": model.algorithm,
        "config": model.config.to_dict(),
        "user_ids": model.user_ids,
        "item_ids": model.item_ids,
        "data": model.to_payload(),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def load_model(path):
    """Load a model saved by :func:`save_model`."""
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("format") != "recfair-model":
        raise ValueError(f"{path} is not a recfair model file")
    cls = _MODEL_KINDS[payload["kind"]]
    return cls.from_saved(payload)


# Imported for the side effect of registering model classes.
from . import als as _als  # noqa: E402,F401
from . import baselines as _baselines  # noqa: E402,F401
from . import bpr as _bpr  # noqa: E402,F401
from . import knn as _knn  # noqa: E402,F401
