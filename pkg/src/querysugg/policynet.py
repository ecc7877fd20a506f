"""Suggestion policy: SFT warm start, candidate generation, bandit PPO.

The policy owns its own two-tower copy (trained exactly like the reward
model), a pool head mapping the image state to logits over a fixed pool of
candidate suggestions, and a token decoder for the language term.  PPO
fine-tunes the pool head and decoder while the towers stay frozen, keeping a
frozen SFT snapshot for the KL penalty.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import nnops, rewardnet
from .data import CandidateSet, QueryImage, Suggestion, World
from .optim import Adam
from .rewardnet import RewardConfig, RewardParams

POLICY_BLOCKS = ("pool_w", "pool_b", "dec_w", "dec_b", "dec_token_emb", "dec_bos_emb")


@dataclass
class SftConfig:
    tower_epochs: int = 30
    head_epochs: int = 40
    learning_rate: float = 0.01
    batch_size: int = 16
    kl_beta: float = 0.1
    lang_gamma: float = 1.0
    seed: int = 0


@dataclass
class PpoConfig:
    iterations: int = 80
    batch_size: int = 8
    clip_ratio: float = 0.2
    learning_rate: float = 0.03
    n_candidates: int = 20
    k_outputs: int = 3
    baseline_momentum: float = 0.9
    seed: int = 0


@dataclass(eq=False)
class BanditEpisode:
    """One bandit episode: an image, one sampled candidate action, the shared
    delayed reward of the diversity-selected outputs it contributed to."""

    image_id: str
    action: int  # pool index
    logp_rl: float
    logp_sft: float
    reward: float
    selected_ids: tuple[str, ...] = ()
    logp_old: float | None = None  # behavior-policy log-prob for the PPO ratio

    def __post_init__(self) -> None:
        if not np.isfinite(self.logp_rl) or not np.isfinite(self.logp_sft):
            raise ValueError("episode log-probs must be finite")
        if not 0.0 < self.reward < 1.0:
            raise ValueError("episode reward must lie in (0, 1)")


class PolicyParams:
    kind = "policy"

    def __init__(
        self,
        towers: RewardParams,
        blocks: dict[str, np.ndarray],
        pool_ids: tuple[str, ...],
        kl_beta: float = 0.1,
        lang_gamma: float = 1.0,
    ):
        self.towers = towers
        self.blocks = blocks
        self.pool_ids = tuple(pool_ids)
        self.pool_index = {sid: i for i, sid in enumerate(self.pool_ids)}
        if kl_beta < 0 or lang_gamma < 0:
            raise ValueError("kl_beta and lang_gamma must be >= 0")
        self.kl_beta = kl_beta
        self.lang_gamma = lang_gamma

    @classmethod
    def init(
        cls,
        towers: RewardParams,
        pool_ids: Sequence[str],
        seed: int = 0,
        kl_beta: float = 0.1,
        lang_gamma: float = 1.0,
    ) -> "PolicyParams":
        rng = np.random.default_rng(seed)
        d, v = towers.cfg.dim, towers.cfg.vocab
        bound = 1.0 / np.sqrt(d)
        uni = lambda *shape: rng.uniform(-bound, bound, size=shape)
        blocks = {
            "pool_w": uni(len(pool_ids), d),
            "pool_b": np.zeros(len(pool_ids)),
            "dec_w": uni(v, 2 * d),
            "dec_b": np.zeros(v),
            "dec_token_emb": uni(v, d),
            "dec_bos_emb": uni(d),
        }
        return cls(towers, blocks, tuple(pool_ids), kl_beta, lang_gamma)

    def copy(self) -> "PolicyParams":
        return PolicyParams(
            self.towers.copy(),
            {k: v.copy() for k, v in self.blocks.items()},
            self.pool_ids,
            self.kl_beta,
            self.lang_gamma,
        )

    def fingerprint(self) -> str:
        import hashlib

        h = hashlib.sha256()
        h.update(self.towers.fingerprint().encode())
        for key in sorted(self.blocks):
            h.update(key.encode())
            h.update(np.ascontiguousarray(self.blocks[key]).tobytes())
        return h.hexdigest()


def save_policy(params: PolicyParams, path: Path) -> None:
    doc = {
        "format_version": rewardnet.PARAMS_FORMAT_VERSION,
        "kind": "policy",
        "config": params.towers.cfg.__dict__,
        "pool_ids": list(params.pool_ids),
        "kl_beta": params.kl_beta,
        "lang_gamma": params.lang_gamma,
        "tower_weights": {k: v.tolist() for k, v in params.towers.blocks.items()},
        "weights": {k: v.tolist() for k, v in params.blocks.items()},
    }
    Path(path).write_text(json.dumps(doc), encoding="utf-8")


def load_policy(path: Path) -> PolicyParams:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("kind") != "policy":
        raise ValueError(f"{path} holds {doc.get('kind')!r} params, expected policy")
    towers = RewardParams(
        RewardConfig(**doc["config"]),
        {k: np.asarray(v, dtype=float) for k, v in doc["tower_weights"].items()},
    )
    return PolicyParams(
        towers,
        {k: np.asarray(v, dtype=float) for k, v in doc["weights"].items()},
        tuple(doc["pool_ids"]),
        float(doc["kl_beta"]),
        float(doc["lang_gamma"]),
    )


# ---------------------------------------------------------------------------
# state and pool distribution


def build_state(img, p: PolicyParams) -> np.ndarray:
    """State summary: mean of the policy towers' query embeddings, shape (d,)."""
    return rewardnet.image_summary(img, p.towers)


def pool_logits(img, p: PolicyParams) -> np.ndarray:
    return p.blocks["pool_w"] @ build_state(img, p) + p.blocks["pool_b"]


def pool_logprob(img, p: PolicyParams, action: int) -> float:
    """Log-probability of one pool action under the softmax policy."""
    logits = pool_logits(img, p)
    return float(logits[action] - nnops.logsumexp(logits))


def _action_logprob_grad(logits: np.ndarray, action: int) -> np.ndarray:
    """d log softmax(logits)[action] / d logits."""
    grad = -np.exp(logits - nnops.logsumexp(logits))
    grad[action] += 1.0
    return grad


def generate_candidates(
    img, p: PolicyParams, n: int, rng: np.random.Generator
) -> CandidateSet:
    """Sample n distinct pool suggestions by renormalized softmax sampling."""
    if n > len(p.pool_ids):
        raise ValueError(f"cannot draw {n} candidates from a pool of {len(p.pool_ids)}")
    actions = _sample_actions(pool_logits(img, p), n, rng)
    image_id = img.image_id if isinstance(img, QueryImage) else "query"
    return CandidateSet(image_id, tuple(p.pool_ids[a] for a in actions))


def _sample_actions(logits: np.ndarray, n: int, rng: np.random.Generator) -> list[int]:
    remaining = np.ones(len(logits), dtype=bool)
    actions: list[int] = []
    for _ in range(n):
        idx = np.flatnonzero(remaining)
        sub = logits[idx]
        w = np.exp(sub - np.max(sub))
        w /= w.sum()
        a = int(rng.choice(idx, p=w))
        actions.append(a)
        remaining[a] = False
    return actions


# ---------------------------------------------------------------------------
# supervised warm start


def sft_train(world: World, cfg: SftConfig) -> tuple[PolicyParams, dict]:
    """Two steps: towers trained with the multi-task losses, then pool head and
    decoder trained to select/generate each image's clicked suggestions."""
    tower_cfg = RewardConfig(
        dim=world.config.dim,
        vocab=world.config.vocab,
        learning_rate=cfg.learning_rate,
        epochs=cfg.tower_epochs,
        batch_size=cfg.batch_size,
        seed=cfg.seed + 1,
    )
    towers, tower_history = rewardnet.train_reward(world, tower_cfg)

    pool_ids = tuple(s.suggestion_id for s in world.suggestions)
    params = PolicyParams.init(
        towers, pool_ids, seed=cfg.seed + 2, kl_beta=cfg.kl_beta, lang_gamma=cfg.lang_gamma
    )

    positives = [
        pr for pr in world.pairs if pr.split == "train" and pr.final_label == 1
    ]
    if not positives:
        raise ValueError("empty train split: no positive pairs for warm start")
    # towers are frozen from here on; states can be precomputed
    states = {
        img.image_id: build_state(img, params) for img in world.images
    }
    adam = Adam(lr=cfg.learning_rate)
    rng = np.random.default_rng(cfg.seed + 3)
    head_history: list[float] = []
    for _ in range(cfg.head_epochs):
        order = rng.permutation(len(positives))
        epoch_loss = 0.0
        n_batches = 0
        for start in range(0, len(order), cfg.batch_size):
            chunk = order[start : start + cfg.batch_size]
            grads: dict[str, np.ndarray] = {}
            loss = 0.0
            for i in chunk:
                pr = positives[i]
                z = states[pr.image_id]
                target = params.pool_index[pr.suggestion_id]
                logits = params.blocks["pool_w"] @ z + params.blocks["pool_b"]
                lse = nnops.logsumexp(logits)
                loss += (lse - logits[target]) / len(chunk)
                dlogits = np.exp(logits - lse)
                dlogits[target] -= 1.0
                dlogits /= len(chunk)
                nnops.add_grads(
                    grads, {"pool_w": np.outer(dlogits, z), "pool_b": dlogits}
                )
                sugg = world.suggestion_index[pr.suggestion_id]
                nll, cache = nnops.sequence_nll(
                    z,
                    sugg.tokens,
                    params.blocks["dec_w"],
                    params.blocks["dec_b"],
                    params.blocks["dec_token_emb"],
                    params.blocks["dec_bos_emb"],
                )
                loss += nll / len(chunk)
                back = nnops.sequence_nll_backward(
                    cache, params.blocks["dec_w"], scale=1.0 / len(chunk)
                )
                nnops.add_grads(
                    grads,
                    {
                        "dec_w": back["head_w"],
                        "dec_b": back["head_b"],
                        "dec_token_emb": back["token_emb"],
                        "dec_bos_emb": back["bos_emb"],
                    },
                )
            adam.step(params.blocks, grads)
            epoch_loss += loss
            n_batches += 1
        head_history.append(epoch_loss / max(n_batches, 1))
    history = {
        "towers": [r.total for r in tower_history],
        "heads": head_history,
    }
    return params, history


# ---------------------------------------------------------------------------
# PPO objective


def _lang_nll_and_grads(
    p: PolicyParams, z: np.ndarray, suggestions: Sequence[Suggestion], scale: float
) -> tuple[float, dict[str, np.ndarray]]:
    grads: dict[str, np.ndarray] = {}
    total = 0.0
    for sugg in suggestions:
        nll, cache = nnops.sequence_nll(
            z,
            sugg.tokens,
            p.blocks["dec_w"],
            p.blocks["dec_b"],
            p.blocks["dec_token_emb"],
            p.blocks["dec_bos_emb"],
        )
        total += nll
        back = nnops.sequence_nll_backward(cache, p.blocks["dec_w"], scale=scale)
        nnops.add_grads(
            grads,
            {
                "dec_w": back["head_w"],
                "dec_b": back["head_b"],
                "dec_token_emb": back["token_emb"],
                "dec_bos_emb": back["bos_emb"],
            },
        )
    return total, grads


def agent_i_objective(
    episode: BanditEpisode,
    p: PolicyParams,
    sft: PolicyParams | None,
    world: World,
) -> tuple[float, dict[str, np.ndarray]]:
    """Policy loss for one episode: -reward + KL penalty + language term.

    Returns the loss value and gradients for the trainable blocks (pool head
    and decoder; towers are frozen).  The reward and the SFT log-prob are
    constants with respect to the trainable parameters.
    """
    if sft is None:
        raise ValueError("missing SFT snapshot")
    img = world.image_index[episode.image_id]
    z = build_state(img, p)
    logits = p.blocks["pool_w"] @ z + p.blocks["pool_b"]
    logp_rl = float(logits[episode.action] - nnops.logsumexp(logits))
    value = -episode.reward + p.kl_beta * (logp_rl - episode.logp_sft)

    grads: dict[str, np.ndarray] = {}
    if p.kl_beta != 0.0:
        dlogits = p.kl_beta * _action_logprob_grad(logits, episode.action)
        nnops.add_grads(grads, {"pool_w": np.outer(dlogits, z), "pool_b": dlogits})
    if p.lang_gamma != 0.0 and episode.selected_ids:
        outputs = [world.suggestion_index[sid] for sid in episode.selected_ids]
        nll, lang_grads = _lang_nll_and_grads(p, z, outputs, scale=p.lang_gamma)
        value += p.lang_gamma * nll
        nnops.add_grads(grads, lang_grads)
    return float(value), grads


def exact_pool_kl(img, p: PolicyParams, q: PolicyParams) -> float:
    """KL(pi_p || pi_q) of the first-draw pool distributions for one image."""
    lp = pool_logits(img, p)
    lq = pool_logits(img, q)
    lp = lp - nnops.logsumexp(lp)
    lq = lq - nnops.logsumexp(lq)
    return float(np.sum(np.exp(lp) * (lp - lq)))


def ppo_train(
    world: World,
    sft_params: PolicyParams,
    reward_params: RewardParams,
    agentd_params,
    cfg: PpoConfig,
) -> tuple[PolicyParams, list[dict]]:
    """Clipped-surrogate bandit PPO against the frozen reward model.

    Each iteration rolls out a batch of episodes (sample image, draw
    candidates, diversity-select k outputs, score them) and takes one Adam
    step on the PPO loss.  Never mutates the reward or selector parameters.
    """
    from . import agentd as agentd_mod

    if cfg.clip_ratio <= 0:
        raise ValueError("clip_ratio must be > 0")
    if sft_params is None:
        raise ValueError("missing SFT snapshot")
    if cfg.n_candidates > len(sft_params.pool_ids):
        raise ValueError("n_candidates exceeds pool size")

    params = sft_params.copy()
    adam = Adam(lr=cfg.learning_rate)
    rng = np.random.default_rng(cfg.seed)
    train_images = world.split_images("train")
    if not train_images:
        raise ValueError("no train-split images")
    states = {img.image_id: build_state(img, params) for img in world.images}
    sft_logits = {
        img.image_id: sft_params.blocks["pool_w"] @ states[img.image_id]
        + sft_params.blocks["pool_b"]
        for img in world.images
    }

    baseline: float | None = None
    history: list[dict] = []
    for it in range(cfg.iterations):
        # One rollout per image.  The reward surfaces only on the k outputs
        # the selector keeps, so those actions carry the policy gradient,
        # each credited with its own score; their mean is the episode reward.
        groups: list[list[BanditEpisode]] = []
        group_rewards: list[float] = []
        for _ in range(cfg.batch_size):
            img = train_images[int(rng.integers(len(train_images)))]
            z = states[img.image_id]
            logits = params.blocks["pool_w"] @ z + params.blocks["pool_b"]
            logp_all = logits - nnops.logsumexp(logits)
            sft_lp = sft_logits[img.image_id]
            sft_lp = sft_lp - nnops.logsumexp(sft_lp)
            actions = _sample_actions(logits, cfg.n_candidates, rng)
            cand_ids = tuple(params.pool_ids[a] for a in actions)
            embs = np.stack([world.suggestion_index[s].embedding for s in cand_ids])
            trace = agentd_mod.run_episode(
                agentd_params, embs, cand_ids, agentd_params.cfg.window, mode="argmax"
            )
            sel = trace.selected_ids
            scores = {
                s: rewardnet.score(img, world.suggestion_index[s], reward_params)
                for s in sel
            }
            group_rewards.append(float(np.mean(list(scores.values()))))
            groups.append(
                [
                    BanditEpisode(
                        image_id=img.image_id,
                        action=params.pool_index[s],
                        logp_rl=float(logp_all[params.pool_index[s]]),
                        logp_sft=float(sft_lp[params.pool_index[s]]),
                        reward=scores[s],
                        selected_ids=sel,
                        logp_old=float(logp_all[params.pool_index[s]]),
                    )
                    for s in sel
                ]
            )

        episodes = [e for group in groups for e in group]
        batch_mean = float(np.mean(group_rewards))
        # KL penalty folded into the per-action reward before the policy
        # gradient; differentiating beta*log pi(a) directly is a zero-mean
        # direction under on-policy sampling.
        shaped = [e.reward - params.kl_beta * (e.logp_rl - e.logp_sft) for e in episodes]
        shaped_mean = float(np.mean(shaped))
        base = shaped_mean if baseline is None else baseline
        grads: dict[str, np.ndarray] = {}
        loss_total = 0.0
        na = len(episodes)
        for group in groups:
            z = states[group[0].image_id]
            logits = params.blocks["pool_w"] @ z + params.blocks["pool_b"]
            logp_all = logits - nnops.logsumexp(logits)
            probs = np.exp(logp_all)
            dlogits = np.zeros_like(logits)
            for e in group:
                shaped_r = e.reward - params.kl_beta * (e.logp_rl - e.logp_sft)
                ratio = float(np.exp(logp_all[e.action] - e.logp_old))
                adv = shaped_r - base
                clipped = float(np.clip(ratio, 1.0 - cfg.clip_ratio, 1.0 + cfg.clip_ratio))
                loss_total += -min(ratio * adv, clipped * adv) / na
                # the clipped branch has zero gradient
                if ratio * adv <= clipped * adv:
                    coeff = -adv * ratio / na
                    dlogits += coeff * (-probs)
                    dlogits[e.action] += coeff
            nnops.add_grads(grads, {"pool_w": np.outer(dlogits, z), "pool_b": dlogits})
            if params.lang_gamma != 0.0:
                outputs = [world.suggestion_index[s] for s in group[0].selected_ids]
                nll, lang_grads = _lang_nll_and_grads(
                    params, z, outputs, scale=params.lang_gamma / len(groups)
                )
                loss_total += params.lang_gamma * nll / len(groups)
                nnops.add_grads(grads, lang_grads)
        if grads:
            adam.step(params.blocks, {k: grads[k] for k in POLICY_BLOCKS if k in grads})
        baseline = (
            shaped_mean
            if baseline is None
            else cfg.baseline_momentum * baseline + (1 - cfg.baseline_momentum) * shaped_mean
        )
        mean_kl = float(
            np.mean(
                [exact_pool_kl(world.image_index[g[0].image_id], params, sft_params) for g in groups]
            )
        )
        history.append(
            {"iter": it, "mean_reward": batch_mean, "mean_kl": mean_kl, "loss": float(loss_total)}
        )
    return params, history


def mean_policy_reward(
    world: World,
    policy: PolicyParams,
    reward_params: RewardParams,
    agentd_params,
    images: Sequence[QueryImage],
    n_candidates: int,
    k: int,
    seed: int = 0,
    episodes_per_image: int = 2,
) -> float:
    """Mean reward of diversity-selected outputs over rollouts on `images`."""
    from . import agentd as agentd_mod

    rng = np.random.default_rng(seed)
    scores = []
    for img in images:
        for _ in range(episodes_per_image):
            cand = generate_candidates(img, policy, n_candidates, rng)
            embs = np.stack([world.suggestion_index[s].embedding for s in cand.suggestion_ids])
            trace = agentd_mod.run_episode(agentd_params, embs, cand.suggestion_ids, k, mode="argmax")
            scores.extend(
                rewardnet.score(img, world.suggestion_index[s], reward_params)
                for s in trace.selected_ids
            )
    return float(np.mean(scores))
