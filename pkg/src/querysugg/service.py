"""Retrieval serving: suggestion vector store, exact kNN, click feedback,
annotation queue access, and batched online fine-tuning with atomic
generation swaps.

Readers always serve from an immutable Generation snapshot; all writes
(feedback ingestion, annotation, reindex, online updates) are serialized
through a single lock and finish by swapping the snapshot pointer.
"""

from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from pydantic import BaseModel

from . import agentd as agentd_mod
from . import annotation, policynet, rewardnet
from .agentd import AgentDConfig, AgentDParams
from .data import LabeledPair, World
from .policynet import PolicyParams
from .rewardnet import RewardConfig, RewardParams


@dataclass
class OnlineConfig:
    batch_events: int = 100
    reward_epochs: int = 2
    head_epochs: int = 2
    agentd_sets: int = 5
    agentd_episodes: int = 20
    implicit_negatives: bool = False


@dataclass(eq=False)
class ClickEvent:
    image_id: str
    suggestion_id: str
    clicked: bool
    timestamp: float

    def record(self) -> dict:
        return {
            "image_id": self.image_id,
            "suggestion_id": self.suggestion_id,
            "clicked": self.clicked,
            "timestamp": self.timestamp,
        }


class VectorStore:
    """Immutable id -> embedding map with exact cosine kNN."""

    def __init__(self, ids: Sequence[str], matrix: np.ndarray, generation: int = 0):
        if len(ids) != len(matrix):
            raise ValueError("ids and matrix length mismatch")
        self.ids = tuple(ids)
        self.matrix = np.asarray(matrix, dtype=float)
        self.generation = generation

    def __len__(self) -> int:
        return len(self.ids)

    def knn(self, query: np.ndarray, k: int) -> list[tuple[str, float]]:
        """Top-k (id, cosine) descending; ties broken by lower id."""
        if len(self.ids) == 0:
            raise ValueError("empty store")
        if k > len(self.ids):
            raise ValueError(f"k={k} exceeds store size {len(self.ids)}")
        query = np.asarray(query, dtype=float)
        qn = np.linalg.norm(query)
        if qn == 0.0:
            raise ValueError("zero query vector")
        norms = np.linalg.norm(self.matrix, axis=1)
        scores = (self.matrix @ query) / (norms * qn)
        order = sorted(range(len(self.ids)), key=lambda i: (-scores[i], self.ids[i]))
        return [(self.ids[i], float(scores[i])) for i in order[:k]]


def build_index(
    suggestions: Sequence, towers: RewardParams, generation: int = 0
) -> VectorStore:
    """Embed every suggestion through the text tower and store the vectors."""
    ids = [s.suggestion_id for s in suggestions]
    if not ids:
        return VectorStore((), np.zeros((0, towers.cfg.dim)), generation)
    matrix = np.stack([rewardnet.encode_text(s, towers) for s in suggestions])
    return VectorStore(ids, matrix, generation)


@dataclass(eq=False)
class Generation:
    number: int
    store: VectorStore
    policy: PolicyParams
    reward: RewardParams
    agentd: AgentDParams


class ServiceError(Exception):
    def __init__(self, message: str, status: int):
        super().__init__(message)
        self.status = status


class SuggestService:
    def __init__(
        self,
        world: World,
        policy: PolicyParams,
        reward: RewardParams,
        agentd: AgentDParams,
        alpha: float = 0.6,
        online: OnlineConfig | None = None,
        click_log_path: Path | None = None,
        seed: int = 0,
    ):
        self.world = world
        self.alpha = alpha
        self.online = online or OnlineConfig()
        self.click_log_path = Path(click_log_path) if click_log_path else None
        self._write_lock = threading.Lock()
        self._rng = np.random.default_rng(seed)
        self.events: list[ClickEvent] = []
        self._pending_events: list[ClickEvent] = []

        unresolved = [p for p in world.pairs if p.final_label is None]
        _, queue = annotation.route(unresolved, alpha, world.suggestion_index)
        self.queue = {item.pair_id: item for item in queue}

        store = build_index(world.suggestions, policy.towers, generation=1)
        self._generation = Generation(1, store, policy, reward, agentd)

    # -- readers ------------------------------------------------------------

    def snapshot(self) -> Generation:
        return self._generation  # atomic reference read

    def health(self) -> dict:
        gen = self.snapshot()
        return {"status": "ok", "generation": gen.number}

    def suggest(self, image_id: str | None = None, features=None, k: int = 10) -> dict:
        gen = self.snapshot()
        if image_id is not None:
            if image_id not in self.world.image_index:
                raise ServiceError(f"unknown image_id {image_id!r}", 404)
            query = policynet.build_state(self.world.image_index[image_id], gen.policy)
        elif features is not None:
            feats = np.asarray(features, dtype=float)
            if feats.shape != (self.world.config.dim,):
                raise ServiceError(
                    f"features must have dimension {self.world.config.dim}", 400
                )
            query = policynet.build_state(feats, gen.policy)
        else:
            raise ServiceError("provide image_id or features", 400)
        if k < 1:
            raise ServiceError("k must be >= 1", 400)
        try:
            ranked = gen.store.knn(query, k)
        except ValueError as exc:
            raise ServiceError(str(exc), 400) from exc
        return {
            "generation": gen.number,
            "suggestions": [
                {
                    "id": sid,
                    "tokens": list(self.world.suggestion_index[sid].tokens),
                    "score": score,
                }
                for sid, score in ranked
            ],
        }

    # -- annotation queue ---------------------------------------------------

    def pending(self, limit: int | None = None) -> dict:
        gen = self.snapshot()
        items = [it for it in self.queue.values() if it.status == "pending"]
        shown = items if limit is None else items[: max(limit, 0)]
        payload = []
        for it in shown:
            pair = it.pair
            img = self.world.image_index[pair.image_id]
            payload.append(
                {
                    "pair_id": it.pair_id,
                    "image_id": pair.image_id,
                    "suggestion_id": pair.suggestion_id,
                    "presented_text": it.presented_text,
                    "tokens": list(self.world.suggestion_index[pair.suggestion_id].tokens),
                    "stub_label": pair.stub_label,
                    "confidence": pair.confidence,
                    "topic_id": img.topic_id,
                    "features": [float(x) for x in img.features],
                }
            )
        return {
            "generation": gen.number,
            "items": payload,
            "remaining": len(items),
        }

    def annotate(self, pair_id: str, label: int, annotator_id: str) -> dict:
        if pair_id not in self.queue:
            raise ServiceError(f"pair {pair_id!r} is not in the annotation queue", 404)
        if label not in (0, 1):
            raise ServiceError("label must be 0 or 1", 400)
        with self._write_lock:
            item = self.queue[pair_id]
            pair = annotation.apply_human_label(item, label, annotator_id)
        return {"pair_id": pair_id, "final_label": pair.final_label, "status": item.status}

    # -- click feedback and online learning ----------------------------------

    def feedback(self, image_id: str, suggestion_id: str, clicked: bool) -> dict:
        if image_id not in self.world.image_index:
            raise ServiceError(f"unknown image_id {image_id!r}", 404)
        if suggestion_id not in self.world.suggestion_index:
            raise ServiceError(f"unknown suggestion_id {suggestion_id!r}", 404)
        event = ClickEvent(image_id, suggestion_id, bool(clicked), time.time())
        updated = False
        with self._write_lock:
            self.events.append(event)
            self._pending_events.append(event)
            apply_click_events(self.world, [event], self.online.implicit_negatives)
            if self.click_log_path is not None:
                with self.click_log_path.open("a", encoding="utf-8") as fh:
                    fh.write(json.dumps(event.record(), separators=(",", ":")) + "\n")
            if len(self._pending_events) >= self.online.batch_events:
                self._pending_events = []
                self._online_update()
                updated = True
        return {
            "generation": self.snapshot().number,
            "events": len(self.events),
            "updated": updated,
        }

    def _online_update(self) -> None:
        """Fine-tune all three models on the click-updated dataset and
        atomically publish a new generation.  Caller holds the write lock."""
        gen = self._generation

        reward_cfg = RewardConfig(
            dim=self.world.config.dim,
            vocab=self.world.config.vocab,
            epochs=self.online.reward_epochs,
            seed=int(self._rng.integers(2**31)),
        )
        new_reward, _ = rewardnet.train_reward(
            self.world, reward_cfg, initial=gen.reward, epochs=self.online.reward_epochs
        )
        new_policy = _finetune_policy_heads(
            self.world, gen.policy, epochs=self.online.head_epochs,
            seed=int(self._rng.integers(2**31)),
        )
        agentd_cfg = AgentDConfig(
            n_candidates=min(gen.agentd.cfg.n_candidates, len(self.world.suggestions)),
            window=gen.agentd.cfg.window,
            dim=self.world.config.dim,
            pretrain_sets=self.online.agentd_sets,
            episodes_per_set=self.online.agentd_episodes,
            seed=int(self._rng.integers(2**31)),
        )
        new_agentd, _ = agentd_mod.pretrain_agent_d(self.world, agentd_cfg, initial=gen.agentd)

        store = build_index(
            self.world.suggestions, new_policy.towers, generation=gen.number + 1
        )
        self._generation = Generation(
            gen.number + 1, store, new_policy, new_reward, new_agentd
        )

    def reindex(self) -> int:
        with self._write_lock:
            gen = self._generation
            store = build_index(
                self.world.suggestions, gen.policy.towers, generation=gen.number + 1
            )
            self._generation = Generation(
                gen.number + 1, store, gen.policy, gen.reward, gen.agentd
            )
            return self._generation.number

    def swap_generation(self, generation: Generation) -> None:
        """Publish a prebuilt generation snapshot (used by tests and updates)."""
        with self._write_lock:
            self._generation = generation


def _finetune_policy_heads(
    world: World, policy: PolicyParams, epochs: int, seed: int
) -> PolicyParams:
    """A bounded continuation of the warm-start head training on fresh labels."""
    from .optim import Adam
    from . import nnops

    params = policy.copy()
    positives = [pr for pr in world.pairs if pr.split == "train" and pr.final_label == 1]
    if not positives:
        return params
    states = {img.image_id: policynet.build_state(img, params) for img in world.images}
    adam = Adam(lr=0.01)
    rng = np.random.default_rng(seed)
    for _ in range(epochs):
        order = rng.permutation(len(positives))
        for start in range(0, len(order), 16):
            chunk = order[start : start + 16]
            grads: dict[str, np.ndarray] = {}
            for i in chunk:
                pr = positives[i]
                z = states[pr.image_id]
                target = params.pool_index[pr.suggestion_id]
                logits = params.blocks["pool_w"] @ z + params.blocks["pool_b"]
                dlogits = np.exp(logits - nnops.logsumexp(logits))
                dlogits[target] -= 1.0
                dlogits /= len(chunk)
                nnops.add_grads(grads, {"pool_w": np.outer(dlogits, z), "pool_b": dlogits})
            adam.step(params.blocks, grads)
    return params


def apply_click_events(
    world: World, events: Sequence[ClickEvent], implicit_negatives: bool = False
) -> None:
    """Replayable fold of click events into the dataset: clicked pairs become
    label-1 train pairs (created if absent)."""
    by_key = {(p.image_id, p.suggestion_id): p for p in world.pairs}
    for ev in events:
        key = (ev.image_id, ev.suggestion_id)
        label = 1 if ev.clicked else 0
        if not ev.clicked and not implicit_negatives:
            continue
        pair = by_key.get(key)
        if pair is None:
            pair = LabeledPair(
                image_id=ev.image_id,
                suggestion_id=ev.suggestion_id,
                stub_label=label,
                confidence=1.0,
                human_label=label,
                final_label=label,
                split="train",
            )
            world.pairs.append(pair)
            by_key[key] = pair
        else:
            pair.human_label = label
            pair.final_label = label
            pair.split = "train"


def load_click_log(path: Path) -> list[ClickEvent]:
    events = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            events.append(
                ClickEvent(
                    rec["image_id"], rec["suggestion_id"], bool(rec["clicked"]), rec["timestamp"]
                )
            )
    return events


# ---------------------------------------------------------------------------
# HTTP layer


class SuggestBody(BaseModel):
    image_id: str | None = None
    features: list[float] | None = None
    k: int = 10


class FeedbackBody(BaseModel):
    image_id: str
    suggestion_id: str
    clicked: bool


class AnnotationBody(BaseModel):
    pair_id: str
    label: int
    annotator_id: str


def create_app(service: SuggestService):
    from fastapi import FastAPI, Request
    from fastapi.exceptions import RequestValidationError
    from fastapi.middleware.cors import CORSMiddleware
    from fastapi.responses import JSONResponse

    app = FastAPI(title="querysugg service")
    # the labeler app is served separately during annotation sessions
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )

    @app.exception_handler(ServiceError)
    async def _service_error(_: Request, exc: ServiceError):
        return JSONResponse({"error": str(exc), "code": exc.status}, status_code=exc.status)

    @app.exception_handler(RequestValidationError)
    async def _validation_error(_: Request, exc: RequestValidationError):
        return JSONResponse({"error": str(exc), "code": 400}, status_code=400)

    @app.get("/health")
    def health():
        return service.health()

    @app.post("/suggest")
    def suggest(body: SuggestBody):
        return service.suggest(body.image_id, body.features, body.k)

    @app.post("/feedback")
    def feedback(body: FeedbackBody):
        return service.feedback(body.image_id, body.suggestion_id, body.clicked)

    @app.get("/annotations/pending")
    def pending(limit: int | None = None):
        return service.pending(limit)

    @app.post("/annotations")
    def annotate(body: AnnotationBody):
        return service.annotate(body.pair_id, body.label, body.annotator_id)

    @app.post("/admin/reindex")
    def reindex():
        return {"generation": service.reindex()}

    return app
