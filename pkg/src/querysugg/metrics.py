"""Ranking and judgment metrics: DCG, GSB, PNR, Recall@K, plus aggregation.

PNR degenerate cases are reported as sentinels rather than smoothed:
math.inf when every comparable pair is concordant, math.nan when there is
nothing to compare (or all scores tie).  Aggregation excludes sentinel
queries and reports their counts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence


@dataclass
class RankedList:
    """Ordered suggestions with binary relevance and a model score (1-indexed)."""

    ids: tuple[str, ...]
    relevances: tuple[int, ...]
    scores: tuple[float, ...]


def dcg(relevances: Sequence[int], k: int) -> float:
    """Discounted cumulative gain of the top-k binary relevances."""
    if k > len(relevances):
        raise ValueError(f"k={k} exceeds list length {len(relevances)}")
    return float(sum(relevances[i] / math.log2(i + 2) for i in range(k)))


def gsb(good: int, same: int, bad: int) -> float:
    """(good - bad) / (good + same + bad) from side-by-side judgments."""
    if good < 0 or same < 0 or bad < 0:
        raise ValueError("judgment counts must be non-negative")
    total = good + same + bad
    if total == 0:
        raise ValueError("no judgments recorded")
    return (good - bad) / total


def pnr(labels: Sequence[int], scores: Sequence[float]) -> float:
    """Concordant over discordant ordered pairs with labels[i] > labels[j].

    Score ties count for neither side.  Returns math.inf when concordant
    pairs exist but no discordant ones, and math.nan when no pairs are
    comparable at all (also when every comparable pair ties in score).
    """
    if len(labels) != len(scores):
        raise ValueError("labels and scores differ in length")
    concordant = 0
    discordant = 0
    comparable = 0
    for i in range(len(labels)):
        for j in range(len(labels)):
            if labels[i] > labels[j]:
                comparable += 1
                if scores[i] > scores[j]:
                    concordant += 1
                elif scores[i] < scores[j]:
                    discordant += 1
    if comparable == 0:
        return math.nan
    if discordant == 0:
        return math.inf if concordant > 0 else math.nan
    return concordant / discordant


def recall_at_k(retrieved: Sequence[str], truth: Sequence[str], k: int) -> float:
    """|truth ∩ retrieved| / k with the denominator fixed at k."""
    if len(retrieved) != k:
        raise ValueError(f"retrieved list must have exactly k={k} entries")
    return len(set(truth) & set(retrieved)) / k


def aggregate_pnr(values: Sequence[float]) -> tuple[float | None, dict[str, int]]:
    """Mean of the finite PNR values; sentinel queries are counted, not averaged."""
    finite = [v for v in values if math.isfinite(v)]
    counts = {
        "pnr_infinite": sum(1 for v in values if math.isinf(v)),
        "pnr_undefined": sum(1 for v in values if math.isnan(v)),
    }
    mean = sum(finite) / len(finite) if finite else None
    return mean, counts
