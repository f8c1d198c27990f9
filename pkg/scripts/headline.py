"""Three-seed comparison of the generated personalized models against
FedAvg and LD-FedAvg on the rotated-clusters federation (n=200, m=100,
p=0.2, k=64, 300 rounds). Takes a few minutes on one core."""

import argparse
import json
from pathlib import Path

from flowdup import experiment

from _common import BASELINE_ARMS, HEADLINE


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("-o", "--out", default="results/headline")
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--rounds", type=int, default=HEADLINE["rounds"])
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    arms = {"flowdup": {}, **BASELINE_ARMS}
    for name, overrides in arms.items():
        cfg_path = out / f"{name}.json"
        cfg_path.write_text(
            json.dumps({**HEADLINE, **overrides, "rounds": args.rounds}, indent=2) + "\n"
        )
        summary = experiment.run_sweep(cfg_path, {"seed": args.seeds}, out / name)
        pooled = summary["by_setting"][0]
        print(
            f"{name:9s} accuracy {pooled['mean']:.4f} +/- {pooled['std']:.4f} "
            f"over {pooled['n_seeds']} seeds"
        )


if __name__ == "__main__":
    main()
