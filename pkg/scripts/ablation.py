"""Seed-averaged ablation: trained selector vs greedy vs first-k diversity,
and tuned policy vs warm-start mean reward.

Usage: python scripts/ablation.py [--seeds 0 1 2 3 4]
"""

import argparse
import json

from querysugg import pipeline


def main() -> None:
    parser = argparse.ArgumentParser()
    parser.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    parser.add_argument("--out", default=None)
    args = parser.parse_args()

    study = pipeline.ablation_study(seeds=args.seeds)

    print(f"{'selector':<12} {'mean DIV':>10}")
    for name in ("agent", "greedy", "first_k"):
        print(f"{name:<12} {study[f'{name}_mean_div']:>10.4f}")
    print()
    print(f"{'policy':<12} {'mean reward':>12}")
    for name in ("ppo", "sft"):
        print(f"{name:<12} {study[f'{name}_mean_reward']:>12.4f}")

    if args.out:
        with open(args.out, "w") as fh:
            json.dump(study, fh, indent=2)
        print(f"\nwritten to {args.out}")


if __name__ == "__main__":
    main()
