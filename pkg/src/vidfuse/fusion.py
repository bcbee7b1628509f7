"""Turn component score vectors into distributions and fuse them into one ranking.

Every component is softmaxed over the videos of a query. The default rule
weights each distribution by the reciprocal of its Shannon entropy (natural
log), so confident, peaked components dominate the sum.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Sequence

import numpy as np

from .model import FusedRanking, InvalidInputError, ScoreComponentMatrix

ENTROPY_FLOOR = 1e-12


class FusionMethod(str, Enum):
    INV_ENTROPY = "inv_entropy"
    MEAN = "mean"
    MAX = "max"
    RRF = "rrf"
    NEG_EXP_ENTROPY = "neg_exp_entropy"


@dataclass(frozen=True, eq=False)
class ComponentDistribution:
    probs: np.ndarray
    entropy: float

    def __len__(self):
        return self.probs.shape[0]


def entropy(probs) -> float:
    p = np.asarray(probs, dtype=np.float64)
    nz = p[p > 0]
    return float(max(0.0, -np.sum(nz * np.log(nz))))


def softmax_over_videos(scores) -> ComponentDistribution:
    s = np.asarray(scores, dtype=np.float64).ravel()
    if s.size == 0:
        raise InvalidInputError("cannot softmax an empty score vector")
    if not np.all(np.isfinite(s)):
        raise InvalidInputError("scores must be finite")
    x = s - s.max()
    e = np.exp(x)
    top = int(np.argmax(x))
    # z = 1 + rest; H = ln z - sum(p * x) keeps full precision when one
    # video dominates, where -sum(p ln p) cancels catastrophically.
    rest = float(np.sum(np.delete(e, top))) if e.size > 1 else 0.0
    p = e / (1.0 + rest)
    h = max(0.0, math.log1p(rest) - float(np.sum(p * x)))
    p.setflags(write=False)
    return ComponentDistribution(p, h)


def rank_order(scores, video_ids: Sequence[str]) -> np.ndarray:
    """Indices sorted by descending score, ties by ascending video id."""
    scores = np.asarray(scores, dtype=np.float64)
    id_rank = np.empty(len(video_ids), dtype=np.int64)
    id_rank[np.argsort(np.asarray(video_ids, dtype=object), kind="stable")] = np.arange(len(video_ids))
    return np.lexsort((id_rank, -scores))


def _check(dists: Sequence[ComponentDistribution], video_ids: Sequence[str]) -> np.ndarray:
    if not dists:
        raise InvalidInputError("no distributions to fuse")
    n = len(video_ids)
    for d in dists:
        if len(d) != n:
            raise InvalidInputError(f"distribution length {len(d)} != {n} videos")
    return np.vstack([d.probs for d in dists])


def _result(query_id, scores, video_ids) -> FusedRanking:
    return FusedRanking(query_id, scores, rank_order(scores, video_ids), tuple(video_ids))


def _weighted_sum(weights, probs) -> np.ndarray:
    # Elementwise accumulation in component order. A BLAS product may round
    # columns differently, which turns exact ties into 1-ulp gaps.
    fused = np.zeros(probs.shape[1])
    for w, row in zip(weights, probs):
        fused += w * row
    return fused


def fuse_inverse_entropy(dists, video_ids, query_id: str = "") -> FusedRanking:
    probs = _check(dists, video_ids)
    weights = [1.0 / max(d.entropy, ENTROPY_FLOOR) for d in dists]
    return _result(query_id, _weighted_sum(weights, probs), video_ids)


def fuse_neg_exp_entropy(dists, video_ids, query_id: str = "") -> FusedRanking:
    probs = _check(dists, video_ids)
    weights = [float(np.exp(-d.entropy)) for d in dists]
    return _result(query_id, _weighted_sum(weights, probs), video_ids)


def fuse_mean(dists, video_ids, query_id: str = "") -> FusedRanking:
    probs = _check(dists, video_ids)
    return _result(query_id, _weighted_sum([1.0] * len(probs), probs) / len(probs), video_ids)


def fuse_max(dists, video_ids, query_id: str = "") -> FusedRanking:
    probs = _check(dists, video_ids)
    return _result(query_id, probs.max(axis=0), video_ids)


def fuse_rrf(dists, video_ids, query_id: str = "", k: float = 0.0) -> FusedRanking:
    """Sum of 1 / (k + rank) with 1-based ranks per component.

    ``k = 0`` is plain reciprocal rank; set e.g. ``k = 60`` for the usual
    smoothed variant.
    """
    probs = _check(dists, video_ids)
    fused = np.zeros(len(video_ids))
    for row in probs:
        ranks = np.empty(len(video_ids))
        ranks[rank_order(row, video_ids)] = np.arange(1, len(video_ids) + 1)
        fused += 1.0 / (k + ranks)
    return _result(query_id, fused, video_ids)


FUSERS: dict[FusionMethod, Callable[..., FusedRanking]] = {
    FusionMethod.INV_ENTROPY: fuse_inverse_entropy,
    FusionMethod.MEAN: fuse_mean,
    FusionMethod.MAX: fuse_max,
    FusionMethod.RRF: fuse_rrf,
    FusionMethod.NEG_EXP_ENTROPY: fuse_neg_exp_entropy,
}


def fuse(dists, video_ids, method: FusionMethod | str = FusionMethod.INV_ENTROPY,
         query_id: str = "", rrf_k: float = 0.0) -> FusedRanking:
    method = FusionMethod(method)
    if method is FusionMethod.RRF:
        return fuse_rrf(dists, video_ids, query_id, k=rrf_k)
    return FUSERS[method](dists, video_ids, query_id)


def fuse_matrix(matrix: ScoreComponentMatrix, method: FusionMethod | str = FusionMethod.INV_ENTROPY,
                rrf_k: float = 0.0) -> FusedRanking:
    """Softmax every component present in the matrix and fuse them."""
    dists = [softmax_over_videos(matrix.components[k]) for k in matrix.kinds]
    return fuse(dists, matrix.video_order, method, matrix.query_id, rrf_k)
