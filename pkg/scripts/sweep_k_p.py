"""Accuracy as a function of subspace dimension and labeled-client
fraction, three seeds per cell on the headline federation."""

import argparse
import json
import logging
from pathlib import Path

from flowdup import experiment

from _common import HEADLINE

GRIDS = {"k": [8, 32, 128], "p_labeled": [0.1, 0.5, 1.0]}


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("-o", "--out", default="results/sweeps")
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--rounds", type=int, default=HEADLINE["rounds"])
    args = ap.parse_args()

    # p=1.0 cells warn every round that no unlabeled pool exists
    logging.getLogger("flowdup").setLevel(logging.ERROR)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg_path = out / "base.json"
    cfg_path.write_text(json.dumps({**HEADLINE, "rounds": args.rounds}, indent=2) + "\n")
    for param, values in GRIDS.items():
        summary = experiment.run_sweep(cfg_path, {param: values, "seed": args.seeds}, out / param)
        for row in summary["by_setting"]:
            print(
                f"{param}={row['overrides'][param]}: "
                f"{row['mean']:.4f} +/- {row['std']:.4f} over {row['n_seeds']} seeds"
            )


if __name__ == "__main__":
    main()
