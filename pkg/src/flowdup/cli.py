"""Command-line front end.

Subcommands: gen-data, train, eval, bound, embed, sweep. Every command reads
the same flat JSON config schema. Exit codes: 0 success, 2 bad config or
schema, 3 numeric failure during a run (non-finite values), 4 unreadable or
unwritable files.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import bound, datagen, evaluation, experiment, fedruntime
from .errors import ConfigError, DataError, NumericError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_IO = 4


def _print_json(obj, out_path=None) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True, default=list)
    print(text)
    if out_path:
        with open(out_path, "w") as fh:
            fh.write(text + "\n")


def _load_grid(path) -> dict:
    try:
        with open(path) as fh:
            grid = json.load(fh)
    except OSError as exc:
        raise DataError(f"cannot read grid {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
    return grid


def _restore(cfg: dict, checkpoint_path):
    """Rebuild (model, basis, federation, ground truth) from config + checkpoint."""
    federation, gt = experiment.build_federation(cfg)
    sections = fedruntime.load_checkpoint(checkpoint_path)
    in_dim = federation.clients[0].X.shape[1]
    model = experiment.model_from_checkpoint(cfg, sections, in_dim)
    basis = fedruntime.build_train_basis(experiment.train_config(cfg), in_dim)
    return model, basis, federation, gt


def cmd_gen_data(args) -> None:
    cfg = experiment.load_config(args.spec)
    if cfg["data_csv"]:
        raise ConfigError("gen-data needs a generative data_kind, not a data_csv source")
    spec = experiment.federation_spec(cfg)
    federation, gt = datagen.gen_federation(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "federation.csv"
    datagen.export_csv(path, federation, gt, spec)
    n_labeled = sum(1 for c in federation.clients if c.labeled)
    print(f"wrote {path}: {len(federation.clients)} train clients ({n_labeled} labeled), {len(federation.eval_clients)} eval")


def cmd_train(args) -> None:
    result = experiment.run_experiment(args.config, args.out)
    ev = result["report"]["eval"]
    print(f"{ev['method']}: accuracy {ev['mean']:.4f} +/- {ev['std']:.4f} over {len(ev['per_client'])} eval clients")
    print(f"artifacts in {args.out}")


def cmd_eval(args) -> None:
    cfg = experiment.load_config(args.config)
    model, basis, federation, gt = _restore(cfg, args.checkpoint)
    report = evaluation.evaluate(
        model, basis, federation, gt,
        method=cfg["method"], p=cfg["p_labeled"], k=cfg["k"], seed=cfg["seed"],
    ).as_dict()
    out = {"eval": report}
    if cfg["eval_fresh_sample"]:
        out["eval_fresh"] = experiment.fresh_eval(model, basis, federation, gt, cfg).as_dict()
    _print_json({**out, "config_hash": experiment.config_hash(cfg), "seed": cfg["seed"]}, args.out)


def cmd_bound(args) -> None:
    cfg = experiment.load_config(args.config)
    if cfg["method"] != "flowdup":
        raise ConfigError("the bound is defined for the hypernetwork method only")
    model, basis, federation, _ = _restore(cfg, args.checkpoint)
    bcfg = experiment.bound_config(cfg, federation)
    report = bound.bound_rhs(model, federation, basis, bcfg)
    _print_json(
        {
            **report.as_dict(),
            "n": bcfg.n,
            "n_L": bcfg.n_L,
            "m": bcfg.m,
            "config_hash": experiment.config_hash(cfg),
            "seed": cfg["seed"],
        },
        args.out,
    )


def cmd_embed(args) -> None:
    cfg = experiment.load_config(args.config)
    if cfg["method"] != "flowdup":
        raise ConfigError("embeddings come from the hypernetwork method only")
    model, _, federation, gt = _restore(cfg, args.checkpoint)
    dump = evaluation.dump_embeddings(model, federation, gt)
    experiment.write_embeddings_csv(args.out, dump)
    print(f"wrote {args.out}: {len(dump.client_ids)} embeddings of width {dump.embeddings.shape[1]}")


def cmd_sweep(args) -> None:
    grid = _load_grid(args.grid)
    summary = experiment.run_sweep(args.config, grid, args.out)
    for cell in summary["cells"]:
        print(f"{cell['cell']}: accuracy {cell['mean']:.4f} +/- {cell['std']:.4f}")
    print(f"summary in {Path(args.out) / 'sweep_summary.json'}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="flowdup",
        description="Federated simulation with hypernetwork-personalized client models.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log at INFO level")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic federation and export it as CSV")
    p.add_argument("spec", help="flat JSON config; only data keys are used")
    p.add_argument("-o", "--out", required=True, help="output directory")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="run one experiment: train, evaluate, write artifacts")
    p.add_argument("-c", "--config", required=True)
    p.add_argument("-o", "--out", required=True, help="artifact directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on the config's eval clients")
    p.add_argument("-c", "--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("-o", "--out", help="also write the report JSON here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bound", help="evaluate the risk certificate for a checkpoint")
    p.add_argument("-c", "--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("-o", "--out", help="also write the report JSON here")
    p.set_defaults(func=cmd_bound)

    p = sub.add_parser("embed", help="dump eval-client embeddings and their 2-D projection")
    p.add_argument("-c", "--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("-o", "--out", required=True, help="output CSV path")
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("sweep", help="run the config once per grid cell")
    p.add_argument("-c", "--config", required=True)
    p.add_argument("--grid", required=True, help="JSON object: config key -> list of values")
    p.add_argument("-o", "--out", default="sweep_out", help="directory for per-cell artifacts")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, OSError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
