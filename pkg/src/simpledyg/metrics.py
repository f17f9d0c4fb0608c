"""Ranking metrics and the recency/frequency comparator."""

from __future__ import annotations

import math
from collections import Counter
from typing import Iterable, Sequence

from .graph import Interaction, Op

JACCARD_KS = (1, 5, 10, 20)


def ndcg_at_k(pred: Sequence[str], truth: Iterable[str], k: int = 5) -> float:
    """Binary-relevance NDCG; ``truth`` must be nonempty."""
    if k < 1:
        raise ValueError("k must be >= 1")
    truth = set(truth)
    if not truth:
        raise ValueError("ndcg_at_k: empty ground truth")
    dcg = sum(1.0 / math.log2(i + 2) for i, p in enumerate(pred[:k]) if p in truth)
    idcg = sum(1.0 / math.log2(i + 2) for i in range(min(k, len(truth))))
    return dcg / idcg


def jaccard(pred: Iterable[str], truth: Iterable[str]) -> float:
    a, b = set(pred), set(truth)
    if not b:
        raise ValueError("jaccard: empty ground truth")
    return len(a & b) / len(a | b)


def jaccard_max_over_k(ranked: Sequence[str], truth: Iterable[str], ks: Sequence[int] = JACCARD_KS) -> float:
    """Best Jaccard over top-k cutoffs of a score ranking (for non-generative rankers)."""
    truth = set(truth)
    return max(jaccard(ranked[:k], truth) for k in ks)


def recency_frequency_baseline(history: Sequence[Interaction]) -> list[str]:
    """Neighbors by interaction count, then most recent interaction, then id."""
    counts: Counter[str] = Counter()
    last: dict[str, float] = {}
    for it in history:
        if it.op is Op.DELETE:
            continue
        counts[it.neighbor] += 1
        last[it.neighbor] = max(last.get(it.neighbor, -math.inf), it.time)
    return sorted(counts, key=lambda n: (-counts[n], -last[n], n))
