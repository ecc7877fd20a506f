"""Diversity selection over candidate suggestions.

A sliding window of size k scans the candidate list: each step drops one of
the k windowed suggestions and shifts the next candidate in.  The tracked
quantity is the best window diversity seen so far; the per-step reward is
its improvement, so episode rewards telescope to (final best - initial
best).  A small MLP policy learns which slot to drop; greedy, threshold and
exhaustive selectors serve as baselines and oracle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import Sequence

import numpy as np

from . import nnops
from .data import World, ZeroVectorError
from .optim import Adam


@dataclass
class AgentDConfig:
    n_candidates: int = 20
    window: int = 3
    dim: int = 64
    hidden1: int = 512
    hidden2: int = 128
    dropout: float = 0.5
    learning_rate: float = 1e-3
    discount: float = 0.99
    pretrain_sets: int = 100
    episodes_per_set: int = 200
    update_batch: int = 10
    seed: int = 0


class AgentDParams:
    kind = "agentd"

    def __init__(self, cfg: AgentDConfig, blocks: dict[str, np.ndarray]):
        self.cfg = cfg
        self.blocks = blocks

    @classmethod
    def init(cls, cfg: AgentDConfig, seed: int | None = None) -> "AgentDParams":
        rng = np.random.default_rng(cfg.seed if seed is None else seed)
        n_in = cfg.n_candidates * cfg.dim
        def layer(fan_in, fan_out):
            bound = 1.0 / np.sqrt(fan_in)
            return rng.uniform(-bound, bound, size=(fan_out, fan_in))
        blocks = {
            "w1": layer(n_in, cfg.hidden1),
            "b1": np.zeros(cfg.hidden1),
            "w2": layer(cfg.hidden1, cfg.hidden2),
            "b2": np.zeros(cfg.hidden2),
            "w3": layer(cfg.hidden2, cfg.window),
            "b3": np.zeros(cfg.window),
        }
        return cls(cfg, blocks)

    def copy(self) -> "AgentDParams":
        return AgentDParams(self.cfg, {k: v.copy() for k, v in self.blocks.items()})

    def fingerprint(self) -> str:
        import hashlib

        h = hashlib.sha256()
        for key in sorted(self.blocks):
            h.update(key.encode())
            h.update(np.ascontiguousarray(self.blocks[key]).tobytes())
        return h.hexdigest()


def save_agentd(params: AgentDParams, path) -> None:
    import json
    from pathlib import Path

    doc = {
        "format_version": 1,
        "kind": "agentd",
        "config": params.cfg.__dict__,
        "weights": {k: v.tolist() for k, v in params.blocks.items()},
    }
    Path(path).write_text(json.dumps(doc), encoding="utf-8")


def load_agentd(path) -> AgentDParams:
    import json
    from pathlib import Path

    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("kind") != "agentd":
        raise ValueError(f"{path} holds {doc.get('kind')!r} params, expected agentd")
    return AgentDParams(
        AgentDConfig(**doc["config"]),
        {k: np.asarray(v, dtype=float) for k, v in doc["weights"].items()},
    )


# ---------------------------------------------------------------------------
# diversity objective


def _pairwise_sigma(embs: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(embs, axis=1)
    if np.any(norms == 0.0):
        raise ZeroVectorError("diversity is undefined for zero embeddings")
    unit = embs / norms[:, None]
    cos = np.clip(unit @ unit.T, -1.0, 1.0)
    return (cos + 1.0) / 2.0


def div(embs: np.ndarray) -> float:
    """Diversity of a suggestion set: 1/2 - sum of pairwise similarities / (k(k-1))."""
    embs = np.asarray(embs, dtype=float)
    k = len(embs)
    if k < 2:
        raise ValueError("diversity needs at least 2 suggestions")
    sim = _pairwise_sigma(embs)
    total = float(np.sum(np.triu(sim, k=1)))
    return 0.5 - total / (k * (k - 1))


def _div_from_sigma(sim: np.ndarray, idx: Sequence[int]) -> float:
    k = len(idx)
    sub = sim[np.ix_(idx, idx)]
    total = float(np.sum(np.triu(sub, k=1)))
    return 0.5 - total / (k * (k - 1))


# ---------------------------------------------------------------------------
# sliding-window environment


@dataclass(eq=False)
class WindowState:
    embeddings: np.ndarray  # (remaining, d); window is the first k rows
    ids: tuple[str, ...]
    window: int  # k
    total: int  # n, fixes the padded state length
    best_div: float
    best_ids: tuple[str, ...]
    best_embeddings: np.ndarray

    @property
    def terminal(self) -> bool:
        return len(self.embeddings) <= self.window

    def vector(self) -> np.ndarray:
        """Remaining embeddings concatenated and zero-padded to total * d."""
        d = self.embeddings.shape[1]
        out = np.zeros(self.total * d)
        flat = self.embeddings.reshape(-1)
        out[: flat.size] = flat
        return out


def initial_state(embs: np.ndarray, ids: Sequence[str], k: int) -> WindowState:
    embs = np.asarray(embs, dtype=float)
    if k < 2:
        raise ValueError("window size must be >= 2")
    if len(embs) < k:
        raise ValueError(f"need at least {k} candidates, got {len(embs)}")
    first = div(embs[:k])
    return WindowState(
        embeddings=embs.copy(),
        ids=tuple(ids),
        window=k,
        total=len(embs),
        best_div=first,
        best_ids=tuple(ids[:k]),
        best_embeddings=embs[:k].copy(),
    )


def window_step(state: WindowState, action: int) -> tuple[WindowState, float]:
    """Drop window slot `action` (1-indexed), shift the next candidate in.

    Reward is the improvement of the best diversity seen so far (>= 0).
    """
    if state.terminal:
        raise ValueError("cannot step a terminal window state")
    k = state.window
    if not 1 <= action <= k:
        raise ValueError(f"action must be in [1, {k}], got {action}")
    keep = [i for i in range(len(state.embeddings)) if i != action - 1]
    embs = state.embeddings[keep]
    ids = tuple(state.ids[i] for i in keep)
    new_div = div(embs[:k])
    if new_div > state.best_div:
        best_div, best_ids, best_embs = new_div, ids[:k], embs[:k].copy()
    else:
        best_div, best_ids, best_embs = state.best_div, state.best_ids, state.best_embeddings
    reward = best_div - state.best_div
    next_state = WindowState(
        embeddings=embs,
        ids=ids,
        window=k,
        total=state.total,
        best_div=best_div,
        best_ids=best_ids,
        best_embeddings=best_embs,
    )
    return next_state, float(reward)


# ---------------------------------------------------------------------------
# policy network


def _forward(params: AgentDParams, x: np.ndarray, train: bool, rng: np.random.Generator | None):
    b = params.blocks
    p_drop = params.cfg.dropout
    a1 = np.maximum(b["w1"] @ x + b["b1"], 0.0)
    if train:
        m1 = (rng.random(a1.shape) >= p_drop).astype(float)
        h1 = a1 * m1 / (1.0 - p_drop)
    else:
        m1 = None
        h1 = a1
    a2 = np.maximum(b["w2"] @ h1 + b["b2"], 0.0)
    if train:
        m2 = (rng.random(a2.shape) >= p_drop).astype(float)
        h2 = a2 * m2 / (1.0 - p_drop)
    else:
        m2 = None
        h2 = a2
    logits = b["w3"] @ h2 + b["b3"]
    cache = {"x": x, "a1": a1, "m1": m1, "h1": h1, "a2": a2, "m2": m2, "h2": h2}
    return logits, cache


@dataclass(eq=False)
class EpisodeStep:
    action: int  # 1-indexed dropped slot
    log_prob: float
    reward: float


@dataclass(eq=False)
class EpisodeTrace:
    steps: list[EpisodeStep]
    initial_div: float
    best_div: float
    selected_ids: tuple[str, ...]
    selected_embeddings: np.ndarray
    caches: list[dict] = field(default_factory=list, repr=False)

    @property
    def rewards(self) -> list[float]:
        return [s.reward for s in self.steps]


def run_episode(
    params: AgentDParams,
    embs: np.ndarray,
    ids: Sequence[str] | None,
    k: int,
    mode: str = "sample",
    rng: np.random.Generator | None = None,
) -> EpisodeTrace:
    """Scan the candidates with the learned drop policy.

    mode="sample" draws actions from the softmax with dropout active (needs
    rng); mode="argmax" is deterministic evaluation.  With n <= k the episode
    degenerates to returning all candidates unstepped.
    """
    embs = np.asarray(embs, dtype=float)
    n = len(embs)
    if ids is None:
        ids = tuple(f"c{i}" for i in range(n))
    if mode not in ("sample", "argmax"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "sample" and rng is None:
        raise ValueError("sample mode needs an rng")
    if n <= k:
        d0 = div(embs) if n >= 2 else 0.0
        return EpisodeTrace([], d0, d0, tuple(ids), embs.copy())

    # windows are tracked as index lists; pairwise similarities are computed
    # once so window diversity is a lookup
    sim = _pairwise_sigma(embs)
    d = embs.shape[1]
    state_len = params.blocks["w1"].shape[1]
    if n * d > state_len:
        raise ValueError(
            f"{n} candidates of dimension {d} exceed the policy input length {state_len}"
        )
    remaining = list(range(n))
    best_idx = tuple(remaining[:k])
    best = _div_from_sigma(sim, best_idx)
    initial = best
    steps: list[EpisodeStep] = []
    caches: list[dict] = []
    train = mode == "sample"
    x = np.zeros(state_len)
    while len(remaining) > k:
        x[:] = 0.0
        flat = embs[remaining].reshape(-1)
        x[: flat.size] = flat
        logits, cache = _forward(params, x.copy(), train=train, rng=rng)
        logp_all = logits - nnops.logsumexp(logits)
        if train:
            probs = np.exp(logp_all)
            probs /= probs.sum()
            a = int(rng.choice(k, p=probs))
        else:
            a = int(np.argmax(logits))
        cache["probs"] = np.exp(logp_all)
        cache["action"] = a
        del remaining[a]
        window = tuple(remaining[:k])
        new_div = _div_from_sigma(sim, window)
        reward = max(new_div - best, 0.0)
        if new_div > best:
            best = new_div
            best_idx = window
        steps.append(EpisodeStep(a + 1, float(logp_all[a]), float(reward)))
        caches.append(cache)
    return EpisodeTrace(
        steps,
        initial_div=initial,
        best_div=best,
        selected_ids=tuple(ids[i] for i in best_idx),
        selected_embeddings=embs[list(best_idx)].copy(),
        caches=caches,
    )


def discounted_returns(rewards: Sequence[float], discount: float) -> np.ndarray:
    out = np.zeros(len(rewards))
    acc = 0.0
    for i in range(len(rewards) - 1, -1, -1):
        acc = rewards[i] + discount * acc
        out[i] = acc
    return out


def logprob_grads(params: AgentDParams, cache: dict, action_index: int) -> dict[str, np.ndarray]:
    """Gradients of log pi(action | state) for one cached forward pass."""
    probs = cache["probs"]
    dlogits = -probs.copy()
    dlogits[action_index] += 1.0
    return _backward(params, cache, dlogits)


def _backward(params: AgentDParams, cache: dict, dlogits: np.ndarray) -> dict[str, np.ndarray]:
    b = params.blocks
    p_drop = params.cfg.dropout
    grads = {
        "w3": np.outer(dlogits, cache["h2"]),
        "b3": dlogits.copy(),
    }
    dh2 = b["w3"].T @ dlogits
    if cache["m2"] is not None:
        da2 = dh2 * cache["m2"] / (1.0 - p_drop)
    else:
        da2 = dh2
    dz2 = da2 * (cache["a2"] > 0)
    grads["w2"] = np.outer(dz2, cache["h1"])
    grads["b2"] = dz2
    dh1 = b["w2"].T @ dz2
    if cache["m1"] is not None:
        da1 = dh1 * cache["m1"] / (1.0 - p_drop)
    else:
        da1 = dh1
    dz1 = da1 * (cache["a1"] > 0)
    grads["w1"] = np.outer(dz1, cache["x"])
    grads["b1"] = dz1
    return grads


def reinforce_loss_and_grads(
    traces: Sequence[EpisodeTrace], params: AgentDParams, discount: float
) -> tuple[float, dict[str, np.ndarray]]:
    """Policy-gradient loss -sum_t R_t log pi(a_t | s_t) over all episodes.

    The backward pass is batched over every step of every episode.
    """
    loss = 0.0
    rows: list[dict] = []
    weights: list[float] = []
    for trace in traces:
        if trace.steps and not trace.caches:
            raise ValueError("trace is missing forward caches; rerun in sample mode")
        returns = discounted_returns(trace.rewards, discount)
        for step, cache, ret in zip(trace.steps, trace.caches, returns):
            loss += -ret * step.log_prob
            if ret != 0.0:
                rows.append(cache)
                weights.append(ret)
    if not rows:
        return float(loss), {k: np.zeros_like(v) for k, v in params.blocks.items()}

    b = params.blocks
    p_drop = params.cfg.dropout
    x = np.stack([c["x"] for c in rows])
    a1 = np.stack([c["a1"] for c in rows])
    h1 = np.stack([c["h1"] for c in rows])
    a2 = np.stack([c["a2"] for c in rows])
    h2 = np.stack([c["h2"] for c in rows])
    probs = np.stack([c["probs"] for c in rows])
    actions = np.array([c["action"] for c in rows])
    w = np.asarray(weights)

    # d(-R log pi)/dlogits = -R * (onehot - probs)
    dlogits = probs * w[:, None]
    dlogits[np.arange(len(rows)), actions] -= w
    grads = {"w3": dlogits.T @ h2, "b3": dlogits.sum(axis=0)}
    dh2 = dlogits @ b["w3"]
    if rows[0]["m2"] is not None:
        dh2 = dh2 * np.stack([c["m2"] for c in rows]) / (1.0 - p_drop)
    dz2 = dh2 * (a2 > 0)
    grads["w2"] = dz2.T @ h1
    grads["b2"] = dz2.sum(axis=0)
    dh1 = dz2 @ b["w2"]
    if rows[0]["m1"] is not None:
        dh1 = dh1 * np.stack([c["m1"] for c in rows]) / (1.0 - p_drop)
    dz1 = dh1 * (a1 > 0)
    grads["w1"] = dz1.T @ x
    grads["b1"] = dz1.sum(axis=0)
    return float(loss), grads


def reinforce_update(
    traces: Sequence[EpisodeTrace],
    params: AgentDParams,
    config: AgentDConfig | None = None,
    optimizer: Adam | None = None,
) -> AgentDParams:
    """One adaptive-gradient step on the summed episode losses (in place)."""
    if not traces:
        raise ValueError("no episode traces to learn from")
    cfg = config or params.cfg
    opt = optimizer or Adam(lr=cfg.learning_rate)
    _, grads = reinforce_loss_and_grads(traces, params, cfg.discount)
    opt.step(params.blocks, grads)
    return params


def _rollout_batch(
    params: AgentDParams,
    embs: np.ndarray,
    ids: tuple[str, ...],
    sim: np.ndarray,
    k: int,
    batch: int,
    rng: np.random.Generator,
) -> list[EpisodeTrace]:
    """Sample `batch` episodes of one candidate set in lockstep.

    All episodes have the same length, so each step is one batched forward.
    RNG consumption order per step: dropout mask 1, dropout mask 2, one
    uniform per episode for the action draw.
    """
    n, d = embs.shape
    b = params.blocks
    p_drop = params.cfg.dropout
    state_len = b["w1"].shape[1]
    remaining = [list(range(n)) for _ in range(batch)]
    best_idx = [tuple(range(k))] * batch
    initial = _div_from_sigma(sim, tuple(range(k)))
    best = np.full(batch, initial)
    steps: list[list[EpisodeStep]] = [[] for _ in range(batch)]
    caches: list[list[dict]] = [[] for _ in range(batch)]

    for _ in range(n - k):
        x = np.zeros((batch, state_len))
        for i in range(batch):
            flat = embs[remaining[i]].reshape(-1)
            x[i, : flat.size] = flat
        a1 = np.maximum(x @ b["w1"].T + b["b1"], 0.0)
        m1 = (rng.random(a1.shape) >= p_drop).astype(float)
        h1 = a1 * m1 / (1.0 - p_drop)
        a2 = np.maximum(h1 @ b["w2"].T + b["b2"], 0.0)
        m2 = (rng.random(a2.shape) >= p_drop).astype(float)
        h2 = a2 * m2 / (1.0 - p_drop)
        logits = h2 @ b["w3"].T + b["b3"]
        shifted = logits - logits.max(axis=1, keepdims=True)
        expv = np.exp(shifted)
        probs = expv / expv.sum(axis=1, keepdims=True)
        u = rng.random(batch)
        cums = np.cumsum(probs, axis=1)
        actions = (u[:, None] > cums).sum(axis=1).clip(0, k - 1)
        logp = np.log(probs[np.arange(batch), actions])
        for i in range(batch):
            a = int(actions[i])
            del remaining[i][a]
            window = tuple(remaining[i][:k])
            new_div = _div_from_sigma(sim, window)
            reward = max(new_div - best[i], 0.0)
            if new_div > best[i]:
                best[i] = new_div
                best_idx[i] = window
            steps[i].append(EpisodeStep(a + 1, float(logp[i]), float(reward)))
            caches[i].append(
                {
                    "x": x[i],
                    "a1": a1[i],
                    "m1": m1[i],
                    "h1": h1[i],
                    "a2": a2[i],
                    "m2": m2[i],
                    "h2": h2[i],
                    "probs": probs[i],
                    "action": a,
                }
            )
    return [
        EpisodeTrace(
            steps[i],
            initial_div=initial,
            best_div=float(best[i]),
            selected_ids=tuple(ids[j] for j in best_idx[i]),
            selected_embeddings=embs[list(best_idx[i])].copy(),
            caches=caches[i],
        )
        for i in range(batch)
    ]


def sample_candidate_set(
    world: World, n: int, rng: np.random.Generator, split: str = "train"
) -> tuple[np.ndarray, tuple[str, ...]]:
    """One candidate set of n suggestions, grouped image-wise like the
    candidates the suggestion policy emits (falls back to uniform sampling
    when the split has too few images)."""
    images = world.split_images(split) or world.images
    per_image = world.config.suggestions_per_image
    needed = -(-n // per_image)
    if len(images) >= needed:
        chosen = rng.choice(len(images), size=needed, replace=False)
        ids: list[str] = []
        for ci in chosen:
            ids.extend(p.suggestion_id for p in world.pairs_for_image(images[ci].image_id))
        ids = ids[:n]
    else:
        pool = world.split_suggestions(split) or world.suggestions
        if len(pool) < n:
            raise ValueError("world smaller than one candidate set")
        idx = rng.choice(len(pool), size=n, replace=False)
        ids = [pool[i].suggestion_id for i in idx]
    embs = np.stack([world.suggestion_index[s].embedding for s in ids])
    return embs, tuple(ids)


def pretrain_agent_d(
    world: World,
    cfg: AgentDConfig,
    initial: AgentDParams | None = None,
) -> tuple[AgentDParams, list[float]]:
    """REINFORCE pretraining on candidate sets sampled from the train split."""
    rng = np.random.default_rng(cfg.seed)
    params = initial.copy() if initial is not None else AgentDParams.init(cfg)
    adam = Adam(lr=cfg.learning_rate)
    history: list[float] = []
    for _ in range(cfg.pretrain_sets):
        embs, ids = sample_candidate_set(world, cfg.n_candidates, rng)
        sim = _pairwise_sigma(embs)
        set_divs = []
        remaining_eps = cfg.episodes_per_set
        while remaining_eps > 0:
            batch = min(cfg.update_batch, remaining_eps)
            traces = _rollout_batch(params, embs, ids, sim, cfg.window, batch, rng)
            reinforce_update(traces, params, cfg, adam)
            set_divs.extend(t.best_div for t in traces)
            remaining_eps -= batch
        history.append(float(np.mean(set_divs)))
    return params, history


# ---------------------------------------------------------------------------
# baseline selectors and the exhaustive oracle


@dataclass(eq=False)
class SelectionResult:
    ids: tuple[str, ...]
    embeddings: np.ndarray
    div_value: float


def _ids_or_default(embs: np.ndarray, ids: Sequence[str] | None) -> tuple[str, ...]:
    if ids is None:
        return tuple(f"c{i}" for i in range(len(embs)))
    return tuple(ids)


def greedy_select(embs: np.ndarray, ids: Sequence[str] | None, k: int) -> SelectionResult:
    """Sliding scan dropping the slot most similar on average to the rest of
    the window; ties break to the lowest index."""
    embs = np.asarray(embs, dtype=float)
    ids = _ids_or_default(embs, ids)
    if len(embs) < k:
        raise ValueError(f"need at least {k} candidates")
    if len(embs) == k:
        return SelectionResult(ids, embs.copy(), div(embs))
    state = initial_state(embs, ids, k)
    while not state.terminal:
        window = state.embeddings[:k]
        sim = _pairwise_sigma(window)
        np.fill_diagonal(sim, 0.0)
        mean_sim = sim.sum(axis=1) / (k - 1)
        drop = int(np.argmax(mean_sim))  # argmax returns the lowest tied index
        state, _ = window_step(state, drop + 1)
    return SelectionResult(state.best_ids, state.best_embeddings.copy(), state.best_div)


def threshold_select(
    embs: np.ndarray, ids: Sequence[str] | None, k: int, delta: float
) -> SelectionResult:
    """Keep a candidate iff its max similarity to all kept ones is below delta;
    stop once k are kept.  May return fewer than k."""
    if not 0.0 <= delta <= 1.0:
        raise ValueError("delta must be in [0, 1]")
    embs = np.asarray(embs, dtype=float)
    ids = _ids_or_default(embs, ids)
    kept = [0]
    sim = _pairwise_sigma(embs)
    for i in range(1, len(embs)):
        if len(kept) >= k:
            break
        if max(sim[i, j] for j in kept) < delta:
            kept.append(i)
    chosen = embs[kept]
    value = div(chosen) if len(kept) >= 2 else 0.0
    return SelectionResult(tuple(ids[i] for i in kept), chosen.copy(), value)


def first_k_select(embs: np.ndarray, ids: Sequence[str] | None, k: int) -> SelectionResult:
    """No-selection baseline: the first k candidates as given."""
    embs = np.asarray(embs, dtype=float)
    ids = _ids_or_default(embs, ids)
    if len(embs) < k:
        raise ValueError(f"need at least {k} candidates")
    return SelectionResult(tuple(ids[:k]), embs[:k].copy(), div(embs[:k]))


MAX_ORACLE_COMBINATIONS = 10**6


def oracle_select(embs: np.ndarray, ids: Sequence[str] | None, k: int) -> SelectionResult:
    """Exhaustive maximizer of diversity over all k-subsets; ties resolve to
    the lexicographically smallest index set."""
    embs = np.asarray(embs, dtype=float)
    ids = _ids_or_default(embs, ids)
    n = len(embs)
    if n < k:
        raise ValueError(f"need at least {k} candidates")
    if math.comb(n, k) > MAX_ORACLE_COMBINATIONS:
        raise ValueError(f"C({n},{k}) exceeds the exhaustive-search bound")
    sim = _pairwise_sigma(embs)
    best_idx: tuple[int, ...] | None = None
    best_val = -np.inf
    for combo in combinations(range(n), k):
        val = _div_from_sigma(sim, combo)
        if val > best_val:
            best_val = val
            best_idx = combo
    assert best_idx is not None
    return SelectionResult(
        tuple(ids[i] for i in best_idx), embs[list(best_idx)].copy(), float(best_val)
    )
