"""Domain types, synthetic intent-world generation, similarity primitives, dataset io.

A "world" is a synthetic stand-in for a labeled image/suggestion corpus:
topic centroids play the role of frozen image-encoder features, a global
intent direction separates clickable from merely-related suggestions, and a
stub labeler emits noisy labels with calibrated confidence scores.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

TOKEN_MAX_LEN = 16
# Embedding geometry of generated worlds.  The intent component is what makes
# a clickable suggestion statistically separable from a same-topic hard
# negative; the image component ties an image's own suggestions to it.
INTENT_COMPONENT = 0.6
IMAGE_COMPONENT = 0.4
TRAIN_FRACTION = 0.8


class ZeroVectorError(ValueError):
    """A similarity or normalization was asked of an all-zero vector."""


class DatasetFormatError(ValueError):
    """A dataset file contained a line that does not parse."""


@dataclass
class WorldConfig:
    dim: int = 64
    vocab: int = 64
    topics: int = 4
    images_per_topic: int = 12
    suggestions_per_image: int = 5
    noise_scale: float = 0.05
    seed: int = 0

    def validate(self) -> None:
        if self.dim < 1 or self.vocab < 1 or self.topics < 1 or self.images_per_topic < 1:
            raise ValueError("all world counts must be >= 1")
        if self.suggestions_per_image < 2:
            raise ValueError(
                "suggestions_per_image must be >= 2 (one planted positive and one hard negative)"
            )
        if self.noise_scale < 0:
            raise ValueError("noise_scale must be >= 0")


@dataclass(eq=False)
class QueryImage:
    image_id: str
    features: np.ndarray  # (d,)
    topic_id: int


@dataclass(eq=False)
class Suggestion:
    suggestion_id: str
    tokens: tuple[int, ...]
    embedding: np.ndarray  # (d,)
    topic_id: int
    intent_flag: bool


@dataclass
class LabeledPair:
    image_id: str
    suggestion_id: str
    stub_label: int
    confidence: float
    human_label: int | None = None
    final_label: int | None = None
    split: str = "train"

    @property
    def pair_id(self) -> str:
        return f"{self.image_id}:{self.suggestion_id}"


@dataclass(eq=False)
class CandidateSet:
    """The candidate suggestions the policy produced for one image."""

    image_id: str
    suggestion_ids: tuple[str, ...]


@dataclass(eq=False)
class World:
    config: WorldConfig
    images: list[QueryImage]
    suggestions: list[Suggestion]
    pairs: list[LabeledPair]
    image_index: dict[str, QueryImage] = field(default_factory=dict)
    suggestion_index: dict[str, Suggestion] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.image_index:
            self.image_index = {img.image_id: img for img in self.images}
        if not self.suggestion_index:
            self.suggestion_index = {s.suggestion_id: s for s in self.suggestions}

    def pairs_for_image(self, image_id: str) -> list[LabeledPair]:
        return [p for p in self.pairs if p.image_id == image_id]

    def image_split(self, image_id: str) -> str:
        for p in self.pairs:
            if p.image_id == image_id:
                return p.split
        raise KeyError(image_id)

    def split_images(self, split: str) -> list[QueryImage]:
        ids = {p.image_id for p in self.pairs if p.split == split}
        return [img for img in self.images if img.image_id in ids]

    def split_suggestions(self, split: str) -> list[Suggestion]:
        ids = {p.suggestion_id for p in self.pairs if p.split == split}
        return [s for s in self.suggestions if s.suggestion_id in ids]


# ---------------------------------------------------------------------------
# similarity primitives


def _as_vector(v) -> np.ndarray:
    arr = np.asarray(v, dtype=float)
    if arr.ndim != 1:
        raise ValueError(f"expected a 1-d vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("vector has non-finite entries")
    return arr


def cosine(a, b) -> float:
    """Cosine similarity in [-1, 1]; raises ZeroVectorError on zero input."""
    va, vb = _as_vector(a), _as_vector(b)
    if va.shape != vb.shape:
        raise ValueError(f"dimension mismatch: {va.shape} vs {vb.shape}")
    na, nb = np.linalg.norm(va), np.linalg.norm(vb)
    if na == 0.0 or nb == 0.0:
        raise ZeroVectorError("cosine of a zero vector is undefined")
    return float(np.clip(np.dot(va, vb) / (na * nb), -1.0, 1.0))


def sigma(a, b) -> float:
    """Similarity rescaled to [0, 1]: (cosine + 1) / 2."""
    return (cosine(a, b) + 1.0) / 2.0


def l2_normalize(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v)
    if n == 0.0:
        raise ZeroVectorError("cannot normalize a zero vector")
    return v / n


# ---------------------------------------------------------------------------
# world generation


def _unit(rng: np.random.Generator, d: int) -> np.ndarray:
    v = rng.normal(size=d)
    n = np.linalg.norm(v)
    while n == 0.0:  # pragma: no cover - probability zero
        v = rng.normal(size=d)
        n = np.linalg.norm(v)
    return v / n


def _topic_tokens(rng: np.random.Generator, topic: int, vocab: int) -> tuple[int, ...]:
    block = max(4, vocab // 8)
    base = (topic * block) % vocab
    length = int(rng.integers(3, min(8, TOKEN_MAX_LEN) + 1))
    toks = (base + rng.integers(0, block, size=length)) % vocab
    return tuple(int(t) for t in toks)


def planted_positive_fraction(cfg: WorldConfig) -> float:
    """Expected fraction of intent-true pairs under the planting scheme."""
    s = cfg.suggestions_per_image
    return (1.0 + (s - 2) * 0.5 / cfg.topics) / s


def generate_world(cfg: WorldConfig) -> World:
    """Deterministically generate a world from its config (seed included).

    Every image gets one same-topic clickable suggestion, one same-topic
    hard negative, and random-topic fillers.  Stub labels are correct with
    probability 0.5 + 0.5 * confidence.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    d, v_size = cfg.dim, cfg.vocab

    centroids = np.stack([_unit(rng, d) for _ in range(cfg.topics)])
    intent_dir = _unit(rng, d)

    images: list[QueryImage] = []
    suggestions: list[Suggestion] = []
    pairs: list[LabeledPair] = []
    train_per_topic = math.ceil(TRAIN_FRACTION * cfg.images_per_topic)

    img_n = 0
    sug_n = 0
    for topic in range(cfg.topics):
        for i in range(cfg.images_per_topic):
            image_id = f"img-{img_n:04d}"
            img_n += 1
            identity = _unit(rng, d) * IMAGE_COMPONENT
            features = centroids[topic] + identity + cfg.noise_scale * rng.normal(size=d)
            images.append(QueryImage(image_id, features, topic))
            split = "train" if i < train_per_topic else "test"

            for slot in range(cfg.suggestions_per_image):
                if slot == 0:
                    s_topic, intent = topic, True
                elif slot == 1:
                    s_topic, intent = topic, False
                else:
                    s_topic = int(rng.integers(cfg.topics))
                    intent = bool(s_topic == topic and rng.random() < 0.5)
                sign = 1.0 if intent else -1.0
                emb = centroids[s_topic] + sign * INTENT_COMPONENT * intent_dir
                if s_topic == topic:
                    emb = emb + identity
                emb = emb + cfg.noise_scale * rng.normal(size=d)

                suggestion_id = f"sug-{sug_n:05d}"
                sug_n += 1
                suggestions.append(
                    Suggestion(suggestion_id, _topic_tokens(rng, s_topic, v_size), emb, s_topic, intent)
                )

                confidence = float(1.0 - rng.random())  # (0, 1]
                accuracy = 0.5 + 0.5 * confidence
                truth = int(intent)
                stub = truth if rng.random() < accuracy else 1 - truth
                pairs.append(
                    LabeledPair(image_id, suggestion_id, stub, confidence, split=split)
                )

    return World(cfg, images, suggestions, pairs)


# ---------------------------------------------------------------------------
# dataset io (line-delimited json)

_IMAGES_FILE = "images.jsonl"
_SUGGESTIONS_FILE = "suggestions.jsonl"
_PAIRS_FILE = "pairs.jsonl"
_CONFIG_FILE = "config.json"


def _dump_line(obj: dict) -> str:
    return json.dumps(obj, separators=(",", ":")) + "\n"


def _image_record(img: QueryImage) -> dict:
    return {"id": img.image_id, "values": [float(x) for x in img.features], "topic_id": img.topic_id}


def _suggestion_record(s: Suggestion) -> dict:
    return {
        "id": s.suggestion_id,
        "values": [float(x) for x in s.embedding],
        "tokens": list(s.tokens),
        "topic_id": s.topic_id,
        "intent_flag": s.intent_flag,
    }


def pair_record(p: LabeledPair) -> dict:
    return {
        "image_id": p.image_id,
        "suggestion_id": p.suggestion_id,
        "stub_label": p.stub_label,
        "confidence": p.confidence,
        "human_label": p.human_label,
        "final_label": p.final_label,
        "split": p.split,
    }


def pair_from_record(rec: dict) -> LabeledPair:
    return LabeledPair(
        image_id=rec["image_id"],
        suggestion_id=rec["suggestion_id"],
        stub_label=int(rec["stub_label"]),
        confidence=float(rec["confidence"]),
        human_label=None if rec.get("human_label") is None else int(rec["human_label"]),
        final_label=None if rec.get("final_label") is None else int(rec["final_label"]),
        split=rec.get("split", "train"),
    )


def _write_jsonl(path: Path, records: Iterable[dict]) -> None:
    with path.open("w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(_dump_line(rec))


def _read_jsonl(path: Path) -> list[dict]:
    records = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise DatasetFormatError(f"{path}:{lineno}: {exc}") from exc
    return records


def save_pairs(pairs: list[LabeledPair], path: Path) -> None:
    _write_jsonl(Path(path), (pair_record(p) for p in pairs))


def load_pairs(path: Path) -> list[LabeledPair]:
    return [pair_from_record(rec) for rec in _read_jsonl(Path(path))]


def save_dataset(world: World, directory: Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / _CONFIG_FILE).write_text(
        json.dumps(world.config.__dict__, indent=2) + "\n", encoding="utf-8"
    )
    _write_jsonl(directory / _IMAGES_FILE, (_image_record(i) for i in world.images))
    _write_jsonl(directory / _SUGGESTIONS_FILE, (_suggestion_record(s) for s in world.suggestions))
    save_pairs(world.pairs, directory / _PAIRS_FILE)


def load_dataset(directory: Path) -> World:
    directory = Path(directory)
    for name in (_CONFIG_FILE, _IMAGES_FILE, _SUGGESTIONS_FILE, _PAIRS_FILE):
        if not (directory / name).exists():
            raise FileNotFoundError(f"missing dataset file: {directory / name}")
    cfg = WorldConfig(**json.loads((directory / _CONFIG_FILE).read_text(encoding="utf-8")))
    images = [
        QueryImage(rec["id"], np.asarray(rec["values"], dtype=float), int(rec["topic_id"]))
        for rec in _read_jsonl(directory / _IMAGES_FILE)
    ]
    suggestions = [
        Suggestion(
            rec["id"],
            tuple(int(t) for t in rec["tokens"]),
            np.asarray(rec["values"], dtype=float),
            int(rec["topic_id"]),
            bool(rec["intent_flag"]),
        )
        for rec in _read_jsonl(directory / _SUGGESTIONS_FILE)
    ]
    pairs = load_pairs(directory / _PAIRS_FILE)
    return World(cfg, images, suggestions, pairs)


def worlds_equal(a: World, b: World) -> bool:
    if a.config != b.config or len(a.images) != len(b.images):
        return False
    if len(a.suggestions) != len(b.suggestions) or len(a.pairs) != len(b.pairs):
        return False
    for x, y in zip(a.images, b.images):
        if x.image_id != y.image_id or x.topic_id != y.topic_id:
            return False
        if not np.array_equal(x.features, y.features):
            return False
    for s, t in zip(a.suggestions, b.suggestions):
        if (s.suggestion_id, s.tokens, s.topic_id, s.intent_flag) != (
            t.suggestion_id,
            t.tokens,
            t.topic_id,
            t.intent_flag,
        ):
            return False
        if not np.array_equal(s.embedding, t.embedding):
            return False
    return all(pair_record(p) == pair_record(q) for p, q in zip(a.pairs, b.pairs))
