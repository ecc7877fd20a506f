"""End-to-end demo: generate a world, annotate, train all four models, and
print the evaluation report.  Artifacts land in --workdir.

Usage: python scripts/run_pipeline.py [--seed 0] [--workdir runs/demo]
"""

import argparse
import json
from pathlib import Path

from querysugg import agentd, pipeline, policynet, rewardnet
from querysugg.data import WorldConfig, save_dataset


def main() -> None:
    parser = argparse.ArgumentParser()
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--workdir", default="runs/demo")
    parser.add_argument("--alpha", type=float, default=0.6)
    args = parser.parse_args()

    workdir = Path(args.workdir)
    workdir.mkdir(parents=True, exist_ok=True)

    arts = pipeline.run_pipeline(WorldConfig(seed=args.seed), alpha=args.alpha)
    save_dataset(arts.world, workdir / "world")
    rewardnet.save_params(arts.reward, workdir / "reward.json")
    policynet.save_policy(arts.sft, workdir / "sft.json")
    policynet.save_policy(arts.policy, workdir / "policy.json")
    agentd.save_agentd(arts.agentd, workdir / "agentd.json")
    with (workdir / "ppo_history.jsonl").open("w") as fh:
        for rec in arts.ppo_history:
            fh.write(json.dumps(rec) + "\n")

    report = pipeline.evaluation_report(
        arts.world, arts.reward, arts.policy, arts.agentd, seed=args.seed
    )
    (workdir / "report.json").write_text(json.dumps(report, indent=2))
    print(json.dumps(report, indent=2))
    print(f"artifacts written to {workdir}")


if __name__ == "__main__":
    main()
