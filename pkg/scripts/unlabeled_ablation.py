"""Effect of unlabeled cohort members at p=0.1, with the labeled quota
matched at four clients per round: cohort 8 at labeled fraction 0.5
against an all-labeled cohort of 4. At this scale the measured gap is
slightly negative; see the acceptance suite's check 7."""

import argparse
import json
from pathlib import Path

from flowdup import experiment

from _common import HEADLINE

ARMS = {
    "with_unlabeled": {},
    "all_labeled": {"use_unlabeled_clients": False, "cohort_size": 4},
}


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("-o", "--out", default="results/unlabeled_ablation")
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--rounds", type=int, default=HEADLINE["rounds"])
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    means = {}
    for name, overrides in ARMS.items():
        cfg_path = out / f"{name}.json"
        cfg_path.write_text(
            json.dumps(
                {**HEADLINE, "p_labeled": 0.1, "m_per_client": 50, "rounds": args.rounds, **overrides},
                indent=2,
            )
            + "\n"
        )
        summary = experiment.run_sweep(cfg_path, {"seed": args.seeds}, out / name)
        pooled = summary["by_setting"][0]
        means[name] = pooled["mean"]
        print(
            f"{name:14s} accuracy {pooled['mean']:.4f} +/- {pooled['std']:.4f} "
            f"over {pooled['n_seeds']} seeds"
        )
    gap = means["with_unlabeled"] - means["all_labeled"]
    print(f"gap {gap * 100:+.2f} accuracy points")


if __name__ == "__main__":
    main()
