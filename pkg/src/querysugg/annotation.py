"""Three-step data collection: stub labels, confidence routing, human merge.

The stub labeler plays the role of an external labeling model; anything it
is unsure about (confidence <= alpha) goes to a human queue.  Final labels
are the stub label for auto-routed pairs and the human label otherwise.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

from .data import LabeledPair, Suggestion, World


@dataclass
class ThresholdConfig:
    alpha: float = 0.6

    def validate(self) -> None:
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must be in [0, 1]")


@dataclass
class AnnotationQueueItem:
    pair: LabeledPair
    presented_text: str
    enqueue_time: float
    status: str = "pending"  # pending | labeled
    annotator_id: str | None = None

    @property
    def pair_id(self) -> str:
        return self.pair.pair_id


def route(
    pairs: Sequence[LabeledPair],
    alpha: float,
    suggestions: Mapping[str, Suggestion] | None = None,
    start_time: float = 0.0,
) -> tuple[list[LabeledPair], list[AnnotationQueueItem]]:
    """Partition pairs by confidence: > alpha auto-labels, <= alpha queues.

    Auto pairs get final_label = stub_label; queued pairs keep final_label
    unset until a human labels them.  Input order is preserved on both sides.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must be in [0, 1]")
    auto: list[LabeledPair] = []
    queue: list[AnnotationQueueItem] = []
    for pair in pairs:
        if pair.confidence is None:
            raise ValueError(f"pair {pair.pair_id} has no confidence")
        if pair.stub_label not in (0, 1):
            raise ValueError(f"pair {pair.pair_id} has no stub label")
        if pair.confidence > alpha:
            pair.final_label = pair.stub_label
            auto.append(pair)
        else:
            pair.final_label = None
            if suggestions is not None and pair.suggestion_id in suggestions:
                text = " ".join(str(t) for t in suggestions[pair.suggestion_id].tokens)
            else:
                text = pair.suggestion_id
            queue.append(
                AnnotationQueueItem(pair, text, start_time + len(queue), status="pending")
            )
    return auto, queue


def apply_human_label(item: AnnotationQueueItem, label: int, annotator_id: str) -> LabeledPair:
    """Record a human label on a queued pair; re-labeling overwrites."""
    if label not in (0, 1):
        raise ValueError(f"label must be 0 or 1, got {label!r}")
    if item.status not in ("pending", "labeled"):
        raise ValueError(f"cannot label an item with status {item.status!r}")
    item.pair.human_label = label
    item.pair.final_label = label
    item.status = "labeled"
    item.annotator_id = annotator_id
    return item.pair


def majority_vote(labels: Sequence[int]) -> int:
    """Strict majority of binary labels; an exact tie resolves to 0."""
    if not labels:
        raise ValueError("cannot vote over an empty label list")
    ones = sum(1 for l in labels if l == 1)
    return 1 if ones > len(labels) - ones else 0


def label_accuracy(labeler_labels: Sequence[int], checker_labels: Sequence[int]) -> float:
    """Fraction of exact agreements between two aligned label lists."""
    if len(labeler_labels) != len(checker_labels):
        raise ValueError("label lists differ in length")
    if not labeler_labels:
        raise ValueError("empty label lists")
    agree = sum(1 for a, b in zip(labeler_labels, checker_labels) if a == b)
    return agree / len(labeler_labels)


def oracle_annotate(world: World, alpha: float) -> tuple[int, int]:
    """Route all pairs and resolve the queue with ground-truth intent flags.

    Stands in for the human leg when running headless.  Returns
    (num_auto, num_queued).
    """
    auto, queue = route(world.pairs, alpha, world.suggestion_index)
    for item in queue:
        truth = int(world.suggestion_index[item.pair.suggestion_id].intent_flag)
        apply_human_label(item, truth, "oracle")
    return len(auto), len(queue)


def queue_item_record(item: AnnotationQueueItem) -> dict:
    return {
        "pair_id": item.pair_id,
        "presented_text": item.presented_text,
        "enqueue_time": item.enqueue_time,
        "status": item.status,
        "annotator_id": item.annotator_id,
    }


def save_queue(queue: Sequence[AnnotationQueueItem], path: Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for item in queue:
            fh.write(json.dumps(queue_item_record(item), separators=(",", ":")) + "\n")
