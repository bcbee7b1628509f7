"""Retrieval metrics over ranked video id lists with binary relevance."""

from __future__ import annotations

import math
import statistics
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .model import InvalidInputError, RelevanceJudgments


def _clamp(k: int, n: int) -> int:
    if k < 1:
        raise InvalidInputError(f"k must be >= 1, got {k}")
    return min(k, n)


def _hits(ranking: Sequence[str], relevant) -> int:
    return sum(1 for v in ranking if v in relevant)


def recall_at_k(ranking: Sequence[str], relevant, k: int) -> float:
    if not relevant:
        raise InvalidInputError("relevant set is empty")
    k = _clamp(k, len(ranking))
    return _hits(ranking[:k], relevant) / len(relevant)


def precision_at_k(ranking: Sequence[str], relevant, k: int) -> float:
    k = _clamp(k, len(ranking))
    return _hits(ranking[:k], relevant) / k


def first_relevant_rank(ranking: Sequence[str], relevant) -> int:
    """1-based rank of the first relevant item; ``len(ranking) + 1`` if none is ranked."""
    for i, v in enumerate(ranking, 1):
        if v in relevant:
            return i
    return len(ranking) + 1


def mean_relevant_rank(ranking: Sequence[str], relevant) -> float:
    """Mean 1-based rank over all relevant items (unranked ones count as ``len + 1``)."""
    pos = {v: i for i, v in enumerate(ranking, 1)}
    return sum(pos.get(v, len(ranking) + 1) for v in relevant) / len(relevant)


def mrr(ranking: Sequence[str], relevant) -> float:
    r = first_relevant_rank(ranking, relevant)
    return 0.0 if r > len(ranking) else 1.0 / r


def ndcg_at_k(ranking: Sequence[str], relevant, k: int | None = None) -> float:
    """Binary-gain NDCG with 1/log2(rank + 1) discount; ``k=None`` scores the full list."""
    if not relevant:
        raise InvalidInputError("relevant set is empty")
    k = len(ranking) if k is None else _clamp(k, len(ranking))
    dcg = sum(1.0 / math.log2(i + 1) for i, v in enumerate(ranking[:k], 1) if v in relevant)
    ideal = sum(1.0 / math.log2(i + 1) for i in range(1, min(k, len(relevant)) + 1))
    return dcg / ideal


def average_precision(ranking: Sequence[str], relevant) -> float:
    if not relevant:
        raise InvalidInputError("relevant set is empty")
    hits = 0
    total = 0.0
    for i, v in enumerate(ranking, 1):
        if v in relevant:
            hits += 1
            total += hits / i
    return total / len(relevant)


PERCENT_METRICS = ("R@", "P@", "NDCG", "MAP")


@dataclass
class MetricReport:
    """Macro-averaged metrics, optionally with per-group sub-reports."""

    metrics: dict[str, float]
    num_queries: int
    ks: tuple[int, ...]
    num_unjudged: int = 0
    clamped_ks: dict[str, int] = field(default_factory=dict)
    rank_mode: str = "first"
    groups: dict[str, "MetricReport"] = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {
            "metrics": dict(self.metrics),
            "num_queries": self.num_queries,
            "num_unjudged": self.num_unjudged,
            "ks": list(self.ks),
            "clamped_ks": dict(self.clamped_ks),
            "rank_mode": self.rank_mode,
        }
        if self.groups:
            out["groups"] = {g: r.to_dict() for g, r in sorted(self.groups.items())}
        return out

    def rendered(self) -> dict[str, str]:
        """Table-style strings: rates as percentages, MRR/MnR/MdR as raw numbers."""
        out = {}
        for name, value in self.metrics.items():
            if name.startswith(PERCENT_METRICS):
                out[name] = f"{100.0 * value:.2f}"
            else:
                out[name] = f"{value:.2f}"
        return out


def metric_names(ks: Sequence[int], ndcg_ks: Sequence[int] = ()) -> list[str]:
    names = [f"R@{k}" for k in ks] + [f"P@{k}" for k in ks]
    names += ["MRR", "NDCG"] + [f"NDCG@{k}" for k in ndcg_ks]
    return names + ["MAP", "MnR", "MdR"]


def query_metrics(ranking: Sequence[str], relevant, ks: Sequence[int],
                  ndcg_ks: Sequence[int] = (), rank_mode: str = "first") -> dict[str, float]:
    relevant = frozenset(relevant)
    out: dict[str, float] = {}
    for k in ks:
        out[f"R@{k}"] = recall_at_k(ranking, relevant, k)
    for k in ks:
        out[f"P@{k}"] = precision_at_k(ranking, relevant, k)
    out["MRR"] = mrr(ranking, relevant)
    out["NDCG"] = ndcg_at_k(ranking, relevant)
    for k in ndcg_ks:
        out[f"NDCG@{k}"] = ndcg_at_k(ranking, relevant, k)
    out["MAP"] = average_precision(ranking, relevant)
    if rank_mode == "first":
        out["rank"] = float(first_relevant_rank(ranking, relevant))
    elif rank_mode == "mean":
        out["rank"] = mean_relevant_rank(ranking, relevant)
    else:
        raise InvalidInputError(f"unknown rank mode {rank_mode!r}")
    return out


def _aggregate(per_query: list[dict[str, float]], names: list[str]) -> dict[str, float]:
    n = len(per_query)
    agg = {}
    for name in names:
        if name in ("MnR", "MdR"):
            continue
        agg[name] = math.fsum(m[name] for m in per_query) / n
    ranks = [m["rank"] for m in per_query]
    agg["MnR"] = math.fsum(ranks) / n
    agg["MdR"] = float(statistics.median(ranks))
    return {name: agg[name] for name in names}


def evaluate_run(
    rankings: Mapping[str, Sequence[str]],
    judgments: RelevanceJudgments,
    ks: Iterable[int] = (1, 5, 10),
    group_by: str | None = None,
    *,
    ndcg_ks: Iterable[int] = (),
    rank_mode: str = "first",
    query_labels: Mapping[str, Mapping[str, str]] | None = None,
) -> MetricReport:
    """Macro-average every metric over the judged queries of a run.

    Queries without judgments are skipped and counted. With ``group_by``
    (e.g. ``"language"``) a sub-report is built per label value, taken from
    the judgments first and ``query_labels`` second.
    """
    ks = tuple(ks)
    ndcg_ks = tuple(ndcg_ks)
    names = metric_names(ks, ndcg_ks)
    judged = [q for q in sorted(rankings) if q in judgments]
    unjudged = len(rankings) - len(judged)
    if not judged:
        raise InvalidInputError("no judged queries in run")

    per_query = {q: query_metrics(rankings[q], judgments[q], ks, ndcg_ks, rank_mode) for q in judged}
    corpus_size = max(len(rankings[q]) for q in judged)
    clamped = {f"@{k}": corpus_size for k in ks + ndcg_ks if k > corpus_size}

    report = MetricReport(
        _aggregate([per_query[q] for q in judged], names),
        len(judged), ks, unjudged, clamped, rank_mode,
    )
    if group_by:
        buckets: dict[str, list[str]] = {}
        for q in judged:
            label = judgments.label(q, group_by)
            if label is None and query_labels:
                label = query_labels.get(q, {}).get(group_by)
            buckets.setdefault(label if label is not None else "<none>", []).append(q)
        for label, qs in buckets.items():
            report.groups[label] = MetricReport(
                _aggregate([per_query[q] for q in qs], names), len(qs), ks, 0, clamped, rank_mode
            )
    return report


def report_to_tsv(report: MetricReport, label: str = "all") -> str:
    """Aligned-column table, one row for the whole run plus one per group."""
    rows = [(label, report)] + [(g, r) for g, r in sorted(report.groups.items())]
    header = ["group", "n"] + list(report.metrics)
    body = [[name, str(r.num_queries)] + list(r.rendered().values()) for name, r in rows]
    return format_table(header, body)


def format_table(header: Sequence[str], body: Sequence[Sequence[str]]) -> str:
    widths = [max(len(str(row[i])) for row in [header, *body]) for i in range(len(header))]
    lines = ["\t".join(str(c).ljust(w) for c, w in zip(row, widths)).rstrip() for row in [header, *body]]
    return "\n".join(lines) + "\n"
