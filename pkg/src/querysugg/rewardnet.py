"""Two-tower reward model trained on alignment, generation, and matching tasks.

The image tower is a bank of learned affine "query heads" over frozen image
features; the text tower is one affine map over stored suggestion embeddings.
All outputs are L2-normalized.  Three losses are combined:

  alignment   - in-batch contrastive loss, image-side similarity taken as the
                max over the query heads, denominator over j != i anchors
  generation  - autoregressive token loss conditioned on the image summary
  matching    - binary cross-entropy of a matched/unmatched head over the
                best-matching query head and the text embedding

The matched probability doubles as the reward score in (0, 1).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import nnops
from .data import LabeledPair, QueryImage, Suggestion, World
from .optim import Adam

PROB_CLAMP = 1e-7
PARAMS_FORMAT_VERSION = 1


@dataclass
class RewardConfig:
    dim: int = 64
    vocab: int = 64
    num_queries: int = 8  # M query heads on the image side
    temperature: float = 0.07
    include_positive_in_denominator: bool = False
    learning_rate: float = 0.01
    epochs: int = 30
    batch_size: int = 16
    seed: int = 0


@dataclass
class LossReport:
    isa: float
    isg: float
    ism: float
    total: float
    grad_norms: dict[str, float] = field(default_factory=dict)


class RewardParams:
    kind = "reward"

    def __init__(self, cfg: RewardConfig, blocks: dict[str, np.ndarray]):
        self.cfg = cfg
        self.blocks = blocks

    @classmethod
    def init(cls, cfg: RewardConfig, seed: int | None = None) -> "RewardParams":
        rng = np.random.default_rng(cfg.seed if seed is None else seed)
        d, v, m = cfg.dim, cfg.vocab, cfg.num_queries
        bound = 1.0 / np.sqrt(d)
        uni = lambda *shape: rng.uniform(-bound, bound, size=shape)
        blocks = {
            "image_w": uni(m, d, d),
            "image_b": np.zeros((m, d)),
            "text_w": uni(d, d),
            "text_b": np.zeros(d),
            "token_emb": uni(v, d),
            "bos_emb": uni(d),
            "isg_w": uni(v, 2 * d),
            "isg_b": np.zeros(v),
            "ism_w": uni(2 * d),
            "ism_b": np.zeros(1),
        }
        return cls(cfg, blocks)

    def copy(self) -> "RewardParams":
        return RewardParams(self.cfg, {k: v.copy() for k, v in self.blocks.items()})

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for key in sorted(self.blocks):
            h.update(key.encode())
            h.update(np.ascontiguousarray(self.blocks[key]).tobytes())
        return h.hexdigest()


def save_params(params, path: Path) -> None:
    doc = {
        "format_version": PARAMS_FORMAT_VERSION,
        "kind": params.kind,
        "config": params.cfg.__dict__,
        "weights": {k: v.tolist() for k, v in params.blocks.items()},
    }
    Path(path).write_text(json.dumps(doc), encoding="utf-8")


def load_params(path: Path) -> RewardParams:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format_version") != PARAMS_FORMAT_VERSION:
        raise ValueError(f"unsupported params format version in {path}")
    if doc.get("kind") != "reward":
        raise ValueError(f"{path} holds {doc.get('kind')!r} params, expected reward")
    cfg = RewardConfig(**doc["config"])
    blocks = {k: np.asarray(v, dtype=float) for k, v in doc["weights"].items()}
    return RewardParams(cfg, blocks)


# ---------------------------------------------------------------------------
# encoders


def _features_of(img) -> np.ndarray:
    return img.features if isinstance(img, QueryImage) else np.asarray(img, dtype=float)


def _embedding_of(sugg) -> np.ndarray:
    return sugg.embedding if isinstance(sugg, Suggestion) else np.asarray(sugg, dtype=float)


def _encode_image_fwd(x: np.ndarray, p: RewardParams):
    pre = p.blocks["image_w"] @ x + p.blocks["image_b"]  # (M, d)
    q, norms = nnops.normalize_rows(pre)
    return q, (x, q, norms)


def _encode_text_fwd(e: np.ndarray, p: RewardParams):
    pre = p.blocks["text_w"] @ e + p.blocks["text_b"]  # (d,)
    t, norms = nnops.normalize_rows(pre[None, :])
    return t[0], (e, t[0], norms[0])


def encode_image(img, p: RewardParams) -> np.ndarray:
    """M L2-normalized query embeddings for an image, shape (M, d)."""
    q, _ = _encode_image_fwd(_features_of(img), p)
    return q


def encode_text(sugg, p: RewardParams) -> np.ndarray:
    """L2-normalized text embedding for a suggestion, shape (d,)."""
    t, _ = _encode_text_fwd(_embedding_of(sugg), p)
    return t


def image_summary(img, p: RewardParams) -> np.ndarray:
    """Mean of the M query embeddings; the conditioning vector for generation."""
    return encode_image(img, p).mean(axis=0)


def _image_backward(dq: np.ndarray, cache, grads: dict) -> None:
    x, q, norms = cache
    dpre = nnops.normalize_rows_backward(dq, q, norms)  # (M, d)
    nnops.add_grads(grads, {"image_w": np.einsum("mi,j->mij", dpre, x), "image_b": dpre})


def _text_backward(dt: np.ndarray, cache, grads: dict) -> None:
    e, t, norm = cache
    dpre = nnops.normalize_rows_backward(dt[None, :], t[None, :], np.array([norm]))[0]
    nnops.add_grads(grads, {"text_w": np.outer(dpre, e), "text_b": dpre})


# ---------------------------------------------------------------------------
# losses


def isa_loss(pairs: Sequence[tuple], p: RewardParams) -> tuple[float, dict[str, np.ndarray]]:
    """Contrastive alignment loss over a batch of positive (image, suggestion) pairs.

    Per-anchor mean of both directions: image anchored against all other
    suggestions in the batch and vice versa.  Requires batch size >= 2 so
    negatives exist.
    """
    n = len(pairs)
    if n < 2:
        raise ValueError("alignment loss needs a batch of at least 2 pairs")
    tau = p.cfg.temperature
    q_all, q_caches, t_all, t_caches = [], [], [], []
    for img, sugg in pairs:
        q, qc = _encode_image_fwd(_features_of(img), p)
        t, tc = _encode_text_fwd(_embedding_of(sugg), p)
        q_all.append(q)
        q_caches.append(qc)
        t_all.append(t)
        t_caches.append(tc)
    Q = np.stack(q_all)  # (n, M, d)
    T = np.stack(t_all)  # (n, d)

    sims_full = np.einsum("imd,jd->imj", Q, T)  # (n, M, n)
    head = sims_full.argmax(axis=1)  # (n, n) winning query head per (i, j)
    sim = sims_full.max(axis=1)  # (n, n)
    scaled = sim / tau

    include_diag = p.cfg.include_positive_in_denominator
    coeff = np.zeros((n, n))
    loss = 0.0
    for i in range(n):
        idx = np.arange(n) if include_diag else np.array([j for j in range(n) if j != i])
        # image anchor i against suggestion columns
        row = scaled[i, idx]
        lse = nnops.logsumexp(row)
        loss += (lse - scaled[i, i]) / n
        w = np.exp(row - lse)
        coeff[i, idx] += w / (n * tau)
        coeff[i, i] -= 1.0 / (n * tau)
        # suggestion anchor i against image rows
        col = scaled[idx, i]
        lse_c = nnops.logsumexp(col)
        loss += (lse_c - scaled[i, i]) / n
        w_c = np.exp(col - lse_c)
        coeff[idx, i] += w_c / (n * tau)
        coeff[i, i] -= 1.0 / (n * tau)
    loss *= 0.5
    coeff *= 0.5

    dQ = np.zeros_like(Q)
    dT = np.zeros_like(T)
    for i in range(n):
        for j in range(n):
            c = coeff[i, j]
            if c == 0.0:
                continue
            m = head[i, j]
            dQ[i, m] += c * T[j]
            dT[j] += c * Q[i, m]
    grads: dict[str, np.ndarray] = {}
    for i in range(n):
        _image_backward(dQ[i], q_caches[i], grads)
        _text_backward(dT[i], t_caches[i], grads)
    return float(loss), grads


def isg_loss(img, sugg, p: RewardParams) -> tuple[float, dict[str, np.ndarray]]:
    """Token-level generation loss for one positive pair, summed over positions."""
    tokens = sugg.tokens if isinstance(sugg, Suggestion) else tuple(sugg)
    x = _features_of(img)
    q, qcache = _encode_image_fwd(x, p)
    summary = q.mean(axis=0)
    loss, cache = nnops.sequence_nll(
        summary, tokens, p.blocks["isg_w"], p.blocks["isg_b"], p.blocks["token_emb"], p.blocks["bos_emb"]
    )
    back = nnops.sequence_nll_backward(cache, p.blocks["isg_w"])
    grads: dict[str, np.ndarray] = {
        "isg_w": back["head_w"],
        "isg_b": back["head_b"],
        "token_emb": back["token_emb"],
        "bos_emb": back["bos_emb"],
    }
    m = p.cfg.num_queries
    dq = np.tile(back["summary"] / m, (m, 1))
    _image_backward(dq, qcache, grads)
    return float(loss), grads


def _match_logit_fwd(img, sugg, p: RewardParams):
    x = _features_of(img)
    e = _embedding_of(sugg)
    q, qcache = _encode_image_fwd(x, p)
    t, tcache = _encode_text_fwd(e, p)
    best = int(np.argmax(q @ t))
    feat = np.concatenate([q[best], t])  # (2d,)
    logit = float(p.blocks["ism_w"] @ feat + p.blocks["ism_b"][0])
    return logit, (q, qcache, t, tcache, best, feat)


def _match_logit_backward(dlogit: float, fwd, p: RewardParams, grads: dict) -> None:
    q, qcache, t, tcache, best, feat = fwd
    d = p.cfg.dim
    nnops.add_grads(grads, {"ism_w": dlogit * feat, "ism_b": np.array([dlogit])})
    w = p.blocks["ism_w"]
    dq = np.zeros_like(q)
    dq[best] = dlogit * w[:d]
    _image_backward(dq, qcache, grads)
    _text_backward(dlogit * w[d:], tcache, grads)


def ism_loss(items: Sequence[tuple], p: RewardParams) -> tuple[float, dict[str, np.ndarray]]:
    """Mean binary cross-entropy over (image, suggestion, label) triples."""
    if not items:
        raise ValueError("matching loss needs a non-empty batch")
    grads: dict[str, np.ndarray] = {}
    loss = 0.0
    n = len(items)
    for img, sugg, y in items:
        if y not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {y!r}")
        logit, fwd = _match_logit_fwd(img, sugg, p)
        prob = nnops.sigmoid(logit)
        clamped = min(max(prob, PROB_CLAMP), 1.0 - PROB_CLAMP)
        loss += (-(y * np.log(clamped) + (1 - y) * np.log(1.0 - clamped))) / n
        _match_logit_backward((prob - y) / n, fwd, p, grads)
    return float(loss), grads


def score(img, sugg, p: RewardParams) -> float:
    """Reward in (0, 1): the matched probability from the matching head."""
    logit, _ = _match_logit_fwd(img, sugg, p)
    return nnops.sigmoid(logit)


# ---------------------------------------------------------------------------
# training


def _batches(order: np.ndarray, size: int):
    for start in range(0, len(order), size):
        chunk = order[start : start + size]
        if len(chunk) >= 2:
            yield chunk


def build_ism_items(
    batch: Sequence[LabeledPair], world: World, rng: np.random.Generator
) -> list[tuple]:
    """Positives plus one negative each: same-image label-0 when available,
    otherwise a random suggestion from another image."""
    hard: dict[str, list[LabeledPair]] = {}
    for pr in world.pairs:
        if pr.final_label == 0:
            hard.setdefault(pr.image_id, []).append(pr)
    items = []
    for pr in batch:
        img = world.image_index[pr.image_id]
        items.append((img, world.suggestion_index[pr.suggestion_id], 1))
        negatives = hard.get(pr.image_id)
        if negatives:
            neg = negatives[int(rng.integers(len(negatives)))]
            items.append((img, world.suggestion_index[neg.suggestion_id], 0))
        else:
            while True:
                cand = world.suggestions[int(rng.integers(len(world.suggestions)))]
                if cand.suggestion_id != pr.suggestion_id:
                    break
            items.append((img, cand, 0))
    return items


def train_reward(
    world: World,
    cfg: RewardConfig,
    initial: RewardParams | None = None,
    epochs: int | None = None,
) -> tuple[RewardParams, list[LossReport]]:
    """Adam on the summed three-task loss; deterministic given cfg.seed."""
    train = [pr for pr in world.pairs if pr.split == "train" and pr.final_label is not None]
    if not train:
        raise ValueError("empty train split: no pairs with final labels")
    positives = [pr for pr in train if pr.final_label == 1]
    if len(positives) < 2:
        raise ValueError("need at least 2 positive train pairs")

    params = initial.copy() if initial is not None else RewardParams.init(cfg)
    adam = Adam(lr=cfg.learning_rate)
    rng = np.random.default_rng(cfg.seed)
    history: list[LossReport] = []
    n_epochs = cfg.epochs if epochs is None else epochs

    for _ in range(n_epochs):
        order = rng.permutation(len(positives))
        sums = np.zeros(3)
        norm_acc: dict[str, float] = {}
        n_batches = 0
        for chunk in _batches(order, cfg.batch_size):
            batch = [positives[i] for i in chunk]
            pair_batch = [
                (world.image_index[pr.image_id], world.suggestion_index[pr.suggestion_id])
                for pr in batch
            ]
            isa_v, grads = isa_loss(pair_batch, params)
            isg_v = 0.0
            for img, sugg in pair_batch:
                v, g = isg_loss(img, sugg, params)
                isg_v += v / len(pair_batch)
                nnops.add_grads(grads, {k: a / len(pair_batch) for k, a in g.items()})
            ism_v, g = ism_loss(build_ism_items(batch, world, rng), params)
            nnops.add_grads(grads, g)
            adam.step(params.blocks, grads)
            sums += (isa_v, isg_v, ism_v)
            for k, nv in nnops.grad_norms(grads).items():
                norm_acc[k] = norm_acc.get(k, 0.0) + nv
            n_batches += 1
        isa_m, isg_m, ism_m = (sums / max(n_batches, 1)).tolist()
        history.append(
            LossReport(
                isa=isa_m,
                isg=isg_m,
                ism=ism_m,
                total=isa_m + isg_m + ism_m,
                grad_norms={k: v / max(n_batches, 1) for k, v in norm_acc.items()},
            )
        )
    return params, history
