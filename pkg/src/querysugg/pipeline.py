"""End-to-end orchestration: train everything, build reports, run ablations."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import agentd as agentd_mod
from . import annotation, metrics, policynet, rewardnet, service
from .agentd import AgentDConfig, AgentDParams
from .data import World, WorldConfig, generate_world
from .policynet import PolicyParams, PpoConfig, SftConfig
from .rewardnet import RewardConfig, RewardParams


@dataclass
class PipelineArtifacts:
    world: World
    reward: RewardParams
    sft: PolicyParams
    policy: PolicyParams
    agentd: AgentDParams
    reward_history: list = field(default_factory=list)
    ppo_history: list = field(default_factory=list)


def default_world_config(seed: int = 0) -> WorldConfig:
    return WorldConfig(seed=seed)


def run_pipeline(
    world_cfg: WorldConfig,
    alpha: float = 0.6,
    reward_cfg: RewardConfig | None = None,
    sft_cfg: SftConfig | None = None,
    ppo_cfg: PpoConfig | None = None,
    agentd_cfg: AgentDConfig | None = None,
) -> PipelineArtifacts:
    """Generate, annotate (oracle humans), and train all four models."""
    world = generate_world(world_cfg)
    annotation.oracle_annotate(world, alpha)
    seed = world_cfg.seed

    reward_cfg = reward_cfg or RewardConfig(
        dim=world_cfg.dim, vocab=world_cfg.vocab, seed=seed
    )
    reward, reward_history = rewardnet.train_reward(world, reward_cfg)

    agentd_cfg = agentd_cfg or AgentDConfig(dim=world_cfg.dim, seed=seed)
    agentd_params, _ = agentd_mod.pretrain_agent_d(world, agentd_cfg)

    sft_cfg = sft_cfg or SftConfig(seed=seed)
    sft, _ = policynet.sft_train(world, sft_cfg)

    ppo_cfg = ppo_cfg or PpoConfig(seed=seed, k_outputs=agentd_cfg.window)
    policy, ppo_history = policynet.ppo_train(world, sft, reward, agentd_params, ppo_cfg)

    return PipelineArtifacts(
        world, reward, sft, policy, agentd_params, reward_history, ppo_history
    )


# ---------------------------------------------------------------------------
# reward-model evaluation


def heldout_pnr(world: World, reward: RewardParams) -> tuple[float | None, dict]:
    """Per-query PNR of reward scores against final labels on the test split."""
    values = []
    for img in world.split_images("test"):
        pairs = [p for p in world.pairs_for_image(img.image_id) if p.final_label is not None]
        if len(pairs) < 2:
            continue
        labels = [p.final_label for p in pairs]
        scores = [
            rewardnet.score(img, world.suggestion_index[p.suggestion_id], reward)
            for p in pairs
        ]
        values.append(metrics.pnr(labels, scores))
    return metrics.aggregate_pnr(values)


def score_gap(world: World, reward: RewardParams) -> float:
    """Mean score of held-out positives minus held-out same-topic negatives."""
    pos, neg = [], []
    for img in world.split_images("test"):
        for p in world.pairs_for_image(img.image_id):
            sugg = world.suggestion_index[p.suggestion_id]
            s = rewardnet.score(img, sugg, reward)
            if p.final_label == 1:
                pos.append(s)
            elif p.final_label == 0 and sugg.topic_id == img.topic_id:
                neg.append(s)
    if not pos or not neg:
        raise ValueError("test split lacks positives or hard negatives")
    return float(np.mean(pos) - np.mean(neg))


# ---------------------------------------------------------------------------
# selector evaluation


def sample_candidate_sets(
    world: World, n_sets: int, set_size: int, seed: int, split: str = "test"
) -> list[tuple[np.ndarray, tuple[str, ...]]]:
    rng = np.random.default_rng(seed)
    return [
        agentd_mod.sample_candidate_set(world, set_size, rng, split)
        for _ in range(n_sets)
    ]


def selector_report(
    sets: list[tuple[np.ndarray, tuple[str, ...]]],
    k: int,
    agentd_params: AgentDParams | None = None,
    delta: float = 0.5,
    methods: tuple[str, ...] = ("agent", "greedy", "threshold", "first_k", "oracle"),
) -> dict:
    """Per-method mean/median selected diversity and fraction-of-oracle."""
    divs: dict[str, list[float]] = {m: [] for m in methods}
    for embs, ids in sets:
        for method in methods:
            if method == "agent":
                if agentd_params is None:
                    continue
                trace = agentd_mod.run_episode(agentd_params, embs, ids, k, mode="argmax")
                divs[method].append(trace.best_div)
            elif method == "greedy":
                divs[method].append(agentd_mod.greedy_select(embs, ids, k).div_value)
            elif method == "threshold":
                divs[method].append(agentd_mod.threshold_select(embs, ids, k, delta).div_value)
            elif method == "first_k":
                divs[method].append(agentd_mod.first_k_select(embs, ids, k).div_value)
            elif method == "oracle":
                divs[method].append(agentd_mod.oracle_select(embs, ids, k).div_value)
            else:
                raise ValueError(f"unknown method {method!r}")
    report: dict = {"k": k, "num_sets": len(sets), "methods": {}}
    oracle_mean = float(np.mean(divs["oracle"])) if divs.get("oracle") else None
    for method, vals in divs.items():
        if not vals:
            continue
        entry = {
            "mean_div": float(np.mean(vals)),
            "median_div": float(np.median(vals)),
        }
        if oracle_mean:
            entry["fraction_of_oracle"] = float(np.mean(vals) / oracle_mean)
        report["methods"][method] = entry
    return report


# ---------------------------------------------------------------------------
# full evaluation report


def evaluation_report(
    world: World,
    reward: RewardParams,
    policy: PolicyParams,
    agentd_params: AgentDParams,
    k: int = 3,
    n_candidates: int = 20,
    seed: int = 0,
    gsb_counts: tuple[int, int, int] | None = None,
) -> dict:
    """The eval surface: DCG, DIV, PNR, Recall@1/@3 on the test split."""
    rng = np.random.default_rng(seed)
    store = service.build_index(world.suggestions, policy.towers)
    test_images = world.split_images("test")
    if not test_images:
        raise ValueError("world has no test split")

    dcg_vals, div_vals, r1_vals, r3_vals, pnr_vals = [], [], [], [], []
    for img in test_images:
        pairs = [p for p in world.pairs_for_image(img.image_id) if p.final_label is not None]
        if len(pairs) >= 2:
            labels = [p.final_label for p in pairs]
            scores = [
                rewardnet.score(img, world.suggestion_index[p.suggestion_id], reward)
                for p in pairs
            ]
            pnr_vals.append(metrics.pnr(labels, scores))
            ranked = sorted(zip(scores, labels), key=lambda t: -t[0])
            rels = [rel for _, rel in ranked]
            dcg_vals.append(metrics.dcg(rels, min(k, len(rels))))

        n = min(n_candidates, len(policy.pool_ids))
        cand = policynet.generate_candidates(img, policy, n, rng)
        embs = np.stack([world.suggestion_index[s].embedding for s in cand.suggestion_ids])
        trace = agentd_mod.run_episode(agentd_params, embs, cand.suggestion_ids, k, mode="argmax")
        div_vals.append(trace.best_div)

        truth = {p.suggestion_id for p in pairs if p.final_label == 1}
        if truth:
            state = policynet.build_state(img, policy)
            top3 = [sid for sid, _ in store.knn(state, 3)]
            r1_vals.append(metrics.recall_at_k(top3[:1], truth, 1))
            r3_vals.append(metrics.recall_at_k(top3, truth, 3))

    pnr_mean, pnr_counts = metrics.aggregate_pnr(pnr_vals)
    report = {
        "dcg": float(np.mean(dcg_vals)) if dcg_vals else None,
        "div": float(np.mean(div_vals)) if div_vals else None,
        "pnr": pnr_mean,
        "recall@1": float(np.mean(r1_vals)) if r1_vals else None,
        "recall@3": float(np.mean(r3_vals)) if r3_vals else None,
        "excluded_query_counts": pnr_counts,
    }
    if gsb_counts is not None:
        report["gsb"] = metrics.gsb(*gsb_counts)
    return report


# ---------------------------------------------------------------------------
# seed-averaged ablation


def ablation_study(
    seeds: Sequence[int] = (0, 1, 2, 3, 4),
    world_cfg: WorldConfig | None = None,
    reward_cfg: RewardConfig | None = None,
    sft_cfg: SftConfig | None = None,
    ppo_cfg: PpoConfig | None = None,
    agentd_cfg: AgentDConfig | None = None,
    eval_sets: int = 40,
    eval_images: int = 8,
) -> dict:
    """Seed-averaged comparison: trained selector vs greedy vs first-k on
    diversity, and PPO vs SFT-only on mean reward.

    The per-seed selector pretraining is shortened to fit the study budget;
    the full-scale pretraining run has its own evaluation.
    """
    if agentd_cfg is None:
        agentd_cfg = AgentDConfig(episodes_per_set=60)
    agent_div, greedy_div, first_div = [], [], []
    ppo_reward, sft_reward = [], []
    for seed in seeds:
        cfg = WorldConfig(**{**(world_cfg or WorldConfig()).__dict__, "seed": seed})
        arts = run_pipeline(
            cfg,
            reward_cfg=_with_seed(reward_cfg, seed, RewardConfig, dim=cfg.dim, vocab=cfg.vocab),
            sft_cfg=_with_seed(sft_cfg, seed, SftConfig),
            ppo_cfg=_with_seed(ppo_cfg, seed, PpoConfig),
            agentd_cfg=_with_seed(agentd_cfg, seed, AgentDConfig, dim=cfg.dim),
        )
        k = arts.agentd.cfg.window
        sets = sample_candidate_sets(
            arts.world, eval_sets, arts.agentd.cfg.n_candidates, seed=seed + 1000
        )
        rep = selector_report(sets, k, arts.agentd, methods=("agent", "greedy", "first_k"))
        agent_div.append(rep["methods"]["agent"]["mean_div"])
        greedy_div.append(rep["methods"]["greedy"]["mean_div"])
        first_div.append(rep["methods"]["first_k"]["mean_div"])

        images = arts.world.split_images("test")[:eval_images]
        n_cand = arts.agentd.cfg.n_candidates
        ppo_reward.append(
            policynet.mean_policy_reward(
                arts.world, arts.policy, arts.reward, arts.agentd, images, n_cand, k, seed=seed
            )
        )
        sft_reward.append(
            policynet.mean_policy_reward(
                arts.world, arts.sft, arts.reward, arts.agentd, images, n_cand, k, seed=seed
            )
        )
    return {
        "seeds": list(seeds),
        "agent_mean_div": float(np.mean(agent_div)),
        "greedy_mean_div": float(np.mean(greedy_div)),
        "first_k_mean_div": float(np.mean(first_div)),
        "ppo_mean_reward": float(np.mean(ppo_reward)),
        "sft_mean_reward": float(np.mean(sft_reward)),
    }


def _with_seed(cfg, seed, cls, **overrides):
    base = cfg.__dict__ if cfg is not None else {}
    merged = {**base, **overrides, "seed": seed}
    return cls(**{k: v for k, v in merged.items() if k in cls.__dataclass_fields__})
