"""User-based and item-based k-nearest-neighbor collaborative filtering.

Explicit mode computes cosine similarity on mean-centered vectors and
predicts with a similarity-weighted average of centered neighbor ratings on
top of the target mean.  Implicit mode uses plain cosine on the interaction
pattern and scores candidates by summing neighbor similarities.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sps

from ..interactions import EXPLICIT
from . import ModelConfig, RatingMatrix, register_model

__all__ = ["ItemKNN", "UserKNN", "combine_neighbor_ratings", "cosine_rows"]


def combine_neighbor_ratings(base_mean, sims, centered) -> float:
    """Weighted-average prediction: base mean plus sim-weighted centered values."""
    sims = np.asarray(sims, dtype=float)
    centered = np.asarray(centered, dtype=float)
    return float(base_mean + np.dot(sims, centered) / np.sum(sims))


def _center_rows(csr: sps.csr_matrix, means: np.ndarray) -> sps.csr_matrix:
    out = csr.copy().astype(np.float64)
    for i in range(out.shape[0]):
        lo, hi = out.indptr[i], out.indptr[i + 1]
        out.data[lo:hi] -= means[i]
    return out


def _normalize_rows(csr: sps.csr_matrix) -> sps.csr_matrix:
    out = csr.copy().astype(np.float64)
    norms = np.sqrt(np.asarray(out.multiply(out).sum(axis=1)).ravel())
    for i in range(out.shape[0]):
        lo, hi = out.indptr[i], out.indptr[i + 1]
        if norms[i] > 0:
            out.data[lo:hi] /= norms[i]
    return out


def cosine_rows(csr: sps.csr_matrix, i: int) -> np.ndarray:
    """Cosine similarity of row ``i`` against every row (self included)."""
    normed = _normalize_rows(csr)
    return np.asarray(normed @ normed.getrow(i).T.todense()).ravel()


def _topk_desc(values: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k largest values, ties broken by ascending index."""
    order = np.lexsort((np.arange(len(values)), -values))
    return order[:k]


def _binary(csr: sps.csr_matrix) -> sps.csr_matrix:
    out = csr.copy().astype(np.float64)
    out.data[:] = 1.0
    return out


class _KnnBase:
    def __init__(self, matrix_mode, config, user_ids, item_ids):
        self.mode = matrix_mode
        self.config = config
        self.algorithm = config.algorithm
        self.user_ids = list(user_ids)
        self.item_ids = list(item_ids)
        self.user_index = {u: i for i, u in enumerate(self.user_ids)}
        self.item_index = {t: i for i, t in enumerate(self.item_ids)}

    def _clamp(self, scores: np.ndarray) -> np.ndarray:
        if self.scale is not None:
            lo, hi = self.scale
            return np.clip(scores, lo, hi)
        return scores


@register_model("uu")
class UserKNN(_KnnBase):
    """User-user kNN.  The neighborhood is the user's k most similar peers."""

    def __init__(self, mode, config, user_ids, item_ids, normed, centered, pattern,
                 user_means, scale):
        super().__init__(mode, config, user_ids, item_ids)
        self._normed = normed        # row-normalized (centered) profiles, for cosine
        self._centered = centered    # mean-centered ratings (explicit) or None
        self._pattern = pattern      # binary interaction pattern
        self.user_means = user_means
        self.scale = scale

    @classmethod
    def fit(cls, matrix: RatingMatrix, config: ModelConfig) -> "UserKNN":
        pattern = _binary(matrix.csr)
        if matrix.mode == EXPLICIT:
            centered = _center_rows(matrix.csr, matrix.user_means)
            normed = _normalize_rows(centered)
            return cls(matrix.mode, config, matrix.user_ids, matrix.item_ids,
                       normed, centered, pattern, matrix.user_means.copy(), matrix.scale)
        normed = _normalize_rows(pattern)
        return cls(matrix.mode, config, matrix.user_ids, matrix.item_ids,
                   normed, None, pattern, None, None)

    def similarities(self, user_id: str) -> np.ndarray:
        """Cosine similarity of this user to every user (self set to 0)."""
        u = self.user_index[user_id]
        sims = np.asarray((self._normed @ self._normed.getrow(u).T).todense()).ravel()
        sims[u] = 0.0
        return sims

    def score_items(self, user_id: str) -> np.ndarray:
        u = self.user_index[user_id]
        sims = self.similarities(user_id)
        sims[sims <= 0.0] = 0.0
        hood = _topk_desc(sims, self.config.k)
        hood = hood[sims[hood] > 0.0]
        n_items = len(self.item_ids)
        if len(hood) < self.config.min_neighbors:
            return np.full(n_items, np.nan)

        w = sims[hood]
        pat = self._pattern[hood]
        counts = np.asarray(pat.sum(axis=0)).ravel()
        denom = np.asarray(pat.multiply(w[:, None]).sum(axis=0)).ravel()
        usable = (counts >= self.config.min_neighbors) & (denom > 0)
        scores = np.full(n_items, np.nan)
        if self.mode == EXPLICIT:
            num = np.asarray(self._centered[hood].multiply(w[:, None]).sum(axis=0)).ravel()
            with np.errstate(invalid="ignore", divide="ignore"):
                pred = self.user_means[u] + num / denom
            scores[usable] = self._clamp(pred[usable])
        else:
            scores[usable] = denom[usable]
        return scores

    def to_payload(self) -> dict:
        return {
            "mode": self.mode,
            "normed": _csr_payload(self._normed),
            "centered": None if self._centered is None else _csr_payload(self._centered),
            "pattern": _csr_payload(self._pattern),
            "user_means": None if self.user_means is None else self.user_means.tolist(),
            "scale": list(self.scale) if self.scale else None,
        }

    @classmethod
    def from_saved(cls, payload: dict) -> "UserKNN":
        d = payload["data"]
        n_items = len(payload["item_ids"])
        return cls(
            d["mode"],
            ModelConfig.from_dict(payload["config"]),
            payload["user_ids"],
            payload["item_ids"],
            _csr_from_payload(d["normed"], n_items),
            None if d["centered"] is None else _csr_from_payload(d["centered"], n_items),
            _csr_from_payload(d["pattern"], n_items),
            None if d["user_means"] is None else np.array(d["user_means"]),
            tuple(d["scale"]) if d["scale"] else None,
        )


@register_model("ii")
class ItemKNN(_KnnBase):
    """Item-item kNN with per-item truncated neighbor lists."""

    def __init__(self, mode, config, user_ids, item_ids, neighbor_sims, item_means, scale):
        super().__init__(mode, config, user_ids, item_ids)
        self._nbr = neighbor_sims    # csr, row i = sims of i's top-k neighbors
        self.item_means = item_means
        self.scale = scale
        self._user_rows: dict[str, tuple[np.ndarray, np.ndarray]] = {}

    @classmethod
    def fit(cls, matrix: RatingMatrix, config: ModelConfig) -> "ItemKNN":
        csc = matrix.csr.tocsc()
        if matrix.mode == EXPLICIT:
            cols = _center_rows(csc.T.tocsr(), matrix.item_means)  # items x users
        else:
            cols = _binary(csc.T.tocsr())
        normed = _normalize_rows(cols)
        n_items = normed.shape[0]
        rows, colidx, vals = [], [], []
        block = 512
        for start in range(0, n_items, block):
            stop = min(start + block, n_items)
            sims = np.asarray((normed[start:stop] @ normed.T).todense())
            for local in range(stop - start):
                i = start + local
                s = sims[local]
                s[i] = 0.0
                s = np.where(s > 0.0, s, 0.0)
                hood = _topk_desc(s, config.k)
                hood = hood[s[hood] > 0.0]
                for j in hood:
                    rows.append(i)
                    colidx.append(j)
                    vals.append(s[j])
        nbr = sps.csr_matrix((vals, (rows, colidx)), shape=(n_items, n_items))
        item_means = matrix.item_means.copy() if matrix.mode == EXPLICIT else None
        model = cls(matrix.mode, config, matrix.user_ids, matrix.item_ids,
                    nbr, item_means, matrix.scale)
        model._index_users(matrix)
        return model

    def _index_users(self, matrix: RatingMatrix) -> None:
        for u, uid in enumerate(matrix.user_ids):
            row = matrix.csr.getrow(u)
            self._user_rows[uid] = (row.indices.copy(), row.data.copy())

    def neighbor_sims(self, item_id: str) -> dict[str, float]:
        """The stored neighbor list of one item, keyed by neighbor item id."""
        i = self.item_index[item_id]
        row = self._nbr.getrow(i)
        return {self.item_ids[j]: float(v) for j, v in zip(row.indices, row.data)}

    def score_items(self, user_id: str) -> np.ndarray:
        cols, vals = self._user_rows[user_id]
        n_items = len(self.item_ids)
        ind = np.zeros(n_items)
        ind[cols] = 1.0
        counts = self._nbr.sign() @ ind
        denom = self._nbr @ ind
        usable = (counts >= self.config.min_neighbors) & (denom > 0)
        scores = np.full(n_items, np.nan)
        if self.mode == EXPLICIT:
            dvec = np.zeros(n_items)
            dvec[cols] = vals - self.item_means[cols]
            num = self._nbr @ dvec
            with np.errstate(invalid="ignore", divide="ignore"):
                pred = self.item_means + num / denom
            scores[usable] = self._clamp(pred[usable])
        else:
            scores[usable] = denom[usable]
        return scores

    def to_payload(self) -> dict:
        return {
            "mode": self.mode,
            "neighbors": _csr_payload(self._nbr),
            "item_means": None if self.item_means is None else self.item_means.tolist(),
            "scale": list(self.scale) if self.scale else None,
            "user_rows": {
                uid: [cols.tolist(), vals.tolist()]
                for uid, (cols, vals) in sorted(self._user_rows.items())
            },
        }

    @classmethod
    def from_saved(cls, payload: dict) -> "ItemKNN":
        d = payload["data"]
        n_items = len(payload["item_ids"])
        model = cls(
            d["mode"],
            ModelConfig.from_dict(payload["config"]),
            payload["user_ids"],
            payload["item_ids"],
            _csr_from_payload(d["neighbors"], n_items),
            None if d["item_means"] is None else np.array(d["item_means"]),
            tuple(d["scale"]) if d["scale"] else None,
        )
        model._user_rows = {
            uid: (np.array(cols, dtype=np.int64), np.array(vals, dtype=np.float64))
            for uid, (cols, vals) in d["user_rows"].items()
        }
        return model


def _csr_payload(m: sps.csr_matrix) -> dict:
    m = m.tocsr()
    return {
        "data": m.data.tolist(),
        "indices": m.indices.tolist(),
        "indptr": m.indptr.tolist(),
        "cols": m.shape[1],
    }


def _csr_from_payload(d: dict, n_cols: int | None = None) -> sps.csr_matrix:
    cols = d.get("cols", n_cols)
    indptr = np.array(d["indptr"], dtype=np.int64)
    return sps.csr_matrix(
        (np.array(d["data"], dtype=np.float64), np.array(d["indices"], dtype=np.int64), indptr),
        shape=(len(indptr) - 1, cols),
    )
