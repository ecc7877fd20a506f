"""Command-line entry point tying the pipeline stages together.

Subcommands: gen-data, annotate route, train {reward,sft,ppo,agentd},
select, eval, serve.  A JSON config file supplies defaults per section;
explicit flags win over the config.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import agentd as agentd_mod
from . import annotation, pipeline, policynet, rewardnet, service
from .agentd import AgentDConfig
from .data import WorldConfig, generate_world, load_dataset, save_dataset, save_pairs
from .policynet import PpoConfig, SftConfig
from .rewardnet import RewardConfig


class CliError(Exception):
    pass


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    p = Path(path)
    if not p.exists():
        raise CliError(f"missing config file: {p}")
    return json.loads(p.read_text(encoding="utf-8"))


def _section(config: dict, name: str) -> dict:
    sec = config.get(name, {})
    if not isinstance(sec, dict):
        raise CliError(f"config section {name!r} must be an object")
    return sec


def _merge(cls, section: dict, overrides: dict):
    """Build a dataclass config from file section plus non-None flag overrides."""
    fields = cls.__dataclass_fields__
    merged = {k: v for k, v in section.items() if k in fields}
    merged.update({k: v for k, v in overrides.items() if v is not None and k in fields})
    return cls(**merged)


def _require(path: str | None, what: str) -> Path:
    if not path:
        raise CliError(f"missing required artifact: {what}")
    p = Path(path)
    if not p.exists():
        raise CliError(f"missing required artifact: {what} ({p})")
    return p


def _load_world(path: str | None):
    p = _require(path, "world directory (run gen-data first)")
    return load_dataset(p)


def _write_json(path: str | None, payload: dict) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True)
    if path:
        Path(path).write_text(text + "\n", encoding="utf-8")
    print(text)


# ---------------------------------------------------------------------------
# subcommand implementations


def cmd_gen_data(args, config) -> int:
    cfg = _merge(
        WorldConfig,
        _section(config, "world"),
        {
            "dim": args.dim,
            "vocab": args.vocab,
            "topics": args.topics,
            "images_per_topic": args.images_per_topic,
            "suggestions_per_image": args.suggestions_per_image,
            "noise_scale": args.noise_scale,
            "seed": args.seed,
        },
    )
    world = generate_world(cfg)
    out = Path(args.out)
    save_dataset(world, out)
    print(f"wrote world with {len(world.images)} images / {len(world.pairs)} pairs to {out}")
    return 0


def cmd_annotate_route(args, config) -> int:
    world = _load_world(args.world)
    sec = _section(config, "annotate")
    alpha = args.alpha if args.alpha is not None else sec.get("alpha", 0.6)
    if args.oracle_human:
        n_auto, n_queue = annotation.oracle_annotate(world, alpha)
        queue = []
    else:
        auto, queue = annotation.route(world.pairs, alpha, world.suggestion_index)
        n_auto, n_queue = len(auto), len(queue)
    save_pairs(world.pairs, Path(args.world) / "pairs.jsonl")
    annotation.save_queue(queue, Path(args.world) / "queue.jsonl")
    print(f"alpha={alpha}: {n_auto} auto-labeled, {n_queue} queued for human annotation")
    return 0


def cmd_train_reward(args, config) -> int:
    world = _load_world(args.world)
    cfg = _merge(
        RewardConfig,
        _section(config, "reward"),
        {
            "dim": world.config.dim,
            "vocab": world.config.vocab,
            "learning_rate": args.lr,
            "epochs": args.epochs,
            "batch_size": args.batch,
            "seed": args.seed,
        },
    )
    params, history = rewardnet.train_reward(world, cfg)
    rewardnet.save_params(params, args.out)
    if args.history:
        with Path(args.history).open("w", encoding="utf-8") as fh:
            for epoch, rep in enumerate(history):
                fh.write(
                    json.dumps(
                        {"epoch": epoch, "isa": rep.isa, "isg": rep.isg, "ism": rep.ism, "total": rep.total}
                    )
                    + "\n"
                )
    print(f"trained reward model ({cfg.epochs} epochs) -> {args.out}")
    return 0


def cmd_train_sft(args, config) -> int:
    world = _load_world(args.world)
    cfg = _merge(
        SftConfig,
        _section(config, "sft"),
        {
            "tower_epochs": args.tower_epochs,
            "head_epochs": args.head_epochs,
            "learning_rate": args.lr,
            "batch_size": args.batch,
            "seed": args.seed,
        },
    )
    params, _ = policynet.sft_train(world, cfg)
    policynet.save_policy(params, args.out)
    print(f"trained SFT policy -> {args.out}")
    return 0


def cmd_train_ppo(args, config) -> int:
    world = _load_world(args.world)
    sft = policynet.load_policy(_require(args.sft, "SFT policy (train sft first)"))
    reward = rewardnet.load_params(_require(args.reward, "reward model (train reward first)"))
    if args.agentd:
        agentd_params = agentd_mod.load_agentd(_require(args.agentd, "agent-d params"))
    else:
        agentd_params = agentd_mod.AgentDParams.init(
            AgentDConfig(dim=world.config.dim, seed=args.seed or 0)
        )
    cfg = _merge(
        PpoConfig,
        _section(config, "ppo"),
        {
            "iterations": args.iters,
            "batch_size": args.batch,
            "clip_ratio": args.clip,
            "learning_rate": args.lr,
            "n_candidates": args.n_candidates,
            "k_outputs": args.k,
            "seed": args.seed,
        },
    )
    params, history = policynet.ppo_train(world, sft, reward, agentd_params, cfg)
    policynet.save_policy(params, args.out)
    if args.history:
        with Path(args.history).open("w", encoding="utf-8") as fh:
            for rec in history:
                fh.write(json.dumps(rec) + "\n")
    print(f"trained PPO policy ({cfg.iterations} iterations) -> {args.out}")
    return 0


def cmd_train_agentd(args, config) -> int:
    world = _load_world(args.world)
    cfg = _merge(
        AgentDConfig,
        _section(config, "agentd"),
        {
            "dim": world.config.dim,
            "n_candidates": args.n_candidates,
            "window": args.k,
            "pretrain_sets": args.sets,
            "episodes_per_set": args.episodes,
            "learning_rate": args.lr,
            "seed": args.seed,
        },
    )
    params, history = agentd_mod.pretrain_agent_d(world, cfg)
    agentd_mod.save_agentd(params, args.out)
    print(
        f"pretrained agent-d on {cfg.pretrain_sets} sets "
        f"(mean div {history[-1]:.4f} on the last set) -> {args.out}"
    )
    return 0


def cmd_select(args, config) -> int:
    world = _load_world(args.world)
    sec = _section(config, "select")
    n_sets = args.num_sets if args.num_sets is not None else sec.get("num_sets", 50)
    set_size = args.set_size if args.set_size is not None else sec.get("set_size", 10)
    k = args.k if args.k is not None else sec.get("k", 3)
    delta = args.delta if args.delta is not None else sec.get("delta", 0.5)
    seed = args.seed if args.seed is not None else sec.get("seed", 0)
    agentd_params = None
    if args.method == "agent":
        agentd_params = agentd_mod.load_agentd(
            _require(args.agentd, "agent-d params (train agentd first)")
        )
    sets = pipeline.sample_candidate_sets(world, n_sets, set_size, seed)
    methods = (args.method, "oracle") if args.method != "oracle" else ("oracle",)
    report = pipeline.selector_report(sets, k, agentd_params, delta, methods=methods)
    _write_json(args.out, report)
    return 0


def cmd_eval(args, config) -> int:
    world = _load_world(args.world)
    reward = rewardnet.load_params(_require(args.reward, "reward model"))
    policy = policynet.load_policy(_require(args.policy, "policy params"))
    if args.agentd:
        agentd_params = agentd_mod.load_agentd(_require(args.agentd, "agent-d params"))
    else:
        agentd_params = agentd_mod.AgentDParams.init(
            AgentDConfig(dim=world.config.dim, seed=args.seed or 0)
        )
    gsb_counts = None
    if args.gsb:
        try:
            good, same, bad = (int(x) for x in args.gsb.split(","))
        except ValueError as exc:
            raise CliError("--gsb expects three comma-separated counts") from exc
        gsb_counts = (good, same, bad)
    report = pipeline.evaluation_report(
        world,
        reward,
        policy,
        agentd_params,
        k=args.k or 3,
        n_candidates=args.n_candidates or 20,
        seed=args.seed or 0,
        gsb_counts=gsb_counts,
    )
    _write_json(args.out, report)
    return 0


def cmd_serve(args, config) -> int:
    import uvicorn

    world = _load_world(args.world)
    reward = rewardnet.load_params(_require(args.reward, "reward model"))
    policy = policynet.load_policy(_require(args.policy, "policy params"))
    if args.agentd:
        agentd_params = agentd_mod.load_agentd(_require(args.agentd, "agent-d params"))
    else:
        agentd_params = agentd_mod.AgentDParams.init(AgentDConfig(dim=world.config.dim))
    svc = service.SuggestService(
        world,
        policy,
        reward,
        agentd_params,
        alpha=args.alpha if args.alpha is not None else 0.6,
        click_log_path=args.click_log,
    )
    app = service.create_app(svc)
    uvicorn.run(app, host=args.host, port=args.port)
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="querysugg")
    parser.add_argument("--config", help="JSON config file with per-stage sections")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic world")
    g.add_argument("--out", required=True)
    g.add_argument("--dim", type=int)
    g.add_argument("--vocab", type=int)
    g.add_argument("--topics", type=int)
    g.add_argument("--images-per-topic", dest="images_per_topic", type=int)
    g.add_argument("--suggestions-per-image", dest="suggestions_per_image", type=int)
    g.add_argument("--noise-scale", dest="noise_scale", type=float)
    g.add_argument("--seed", type=int)
    g.set_defaults(func=cmd_gen_data)

    a = sub.add_parser("annotate", help="annotation stages")
    asub = a.add_subparsers(dest="annotate_command", required=True)
    r = asub.add_parser("route", help="threshold-route pairs to auto/human")
    r.add_argument("--world", required=True)
    r.add_argument("--alpha", type=float)
    r.add_argument(
        "--oracle-human",
        action="store_true",
        help="resolve the human queue from ground-truth intent flags",
    )
    r.set_defaults(func=cmd_annotate_route)

    t = sub.add_parser("train", help="train a model")
    tsub = t.add_subparsers(dest="train_command", required=True)

    tr = tsub.add_parser("reward")
    tr.add_argument("--world", required=True)
    tr.add_argument("--out", required=True)
    tr.add_argument("--history")
    tr.add_argument("--epochs", type=int)
    tr.add_argument("--lr", type=float)
    tr.add_argument("--batch", type=int)
    tr.add_argument("--seed", type=int)
    tr.set_defaults(func=cmd_train_reward)

    ts = tsub.add_parser("sft")
    ts.add_argument("--world", required=True)
    ts.add_argument("--out", required=True)
    ts.add_argument("--tower-epochs", dest="tower_epochs", type=int)
    ts.add_argument("--head-epochs", dest="head_epochs", type=int)
    ts.add_argument("--lr", type=float)
    ts.add_argument("--batch", type=int)
    ts.add_argument("--seed", type=int)
    ts.set_defaults(func=cmd_train_sft)

    tp = tsub.add_parser("ppo")
    tp.add_argument("--world", required=True)
    tp.add_argument("--sft", required=True)
    tp.add_argument("--reward", required=True)
    tp.add_argument("--agentd")
    tp.add_argument("--out", required=True)
    tp.add_argument("--history")
    tp.add_argument("--iters", type=int)
    tp.add_argument("--batch", type=int)
    tp.add_argument("--clip", type=float)
    tp.add_argument("--lr", type=float)
    tp.add_argument("--n-candidates", dest="n_candidates", type=int)
    tp.add_argument("--k", type=int)
    tp.add_argument("--seed", type=int)
    tp.set_defaults(func=cmd_train_ppo)

    ta = tsub.add_parser("agentd")
    ta.add_argument("--world", required=True)
    ta.add_argument("--out", required=True)
    ta.add_argument("--n-candidates", dest="n_candidates", type=int)
    ta.add_argument("--k", type=int)
    ta.add_argument("--sets", type=int)
    ta.add_argument("--episodes", type=int)
    ta.add_argument("--lr", type=float)
    ta.add_argument("--seed", type=int)
    ta.set_defaults(func=cmd_train_agentd)

    s = sub.add_parser("select", help="run a selector over seeded candidate sets")
    s.add_argument("--world", required=True)
    s.add_argument("--method", required=True, choices=["agent", "greedy", "threshold", "oracle"])
    s.add_argument("--agentd")
    s.add_argument("--num-sets", dest="num_sets", type=int)
    s.add_argument("--set-size", dest="set_size", type=int)
    s.add_argument("--k", type=int)
    s.add_argument("--delta", type=float)
    s.add_argument("--seed", type=int)
    s.add_argument("--out")
    s.set_defaults(func=cmd_select)

    e = sub.add_parser("eval", help="compute the metrics report")
    e.add_argument("--world", required=True)
    e.add_argument("--reward", required=True)
    e.add_argument("--policy", required=True)
    e.add_argument("--agentd")
    e.add_argument("--k", type=int)
    e.add_argument("--n-candidates", dest="n_candidates", type=int)
    e.add_argument("--seed", type=int)
    e.add_argument("--gsb", help="good,same,bad counts from side-by-side judgments")
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    v = sub.add_parser("serve", help="run the HTTP suggestion service")
    v.add_argument("--world", required=True)
    v.add_argument("--reward", required=True)
    v.add_argument("--policy", required=True)
    v.add_argument("--agentd")
    v.add_argument("--alpha", type=float)
    v.add_argument("--click-log", dest="click_log")
    v.add_argument("--host", default="127.0.0.1")
    v.add_argument("--port", type=int, default=8321)
    v.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = _load_config(args.config)
        return args.func(args, config)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
