"""Command line entry point: ``puforge <verb> [--config FILE] [--seed N] [--out PATH] [--format FMT]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .config import build_spec, load_config
from .datasets import SplitSpec, make_pu, save_dataset, split
from .errors import ConfigError, PUForgeError
from .harness import (PAPER_ALPHA_GRID, PAPER_BETA_GRID, ablation_sweep, component_ablation, emit_report,
                      load_report, render_report, run_experiment)
from .nn import save_model
from .trainers import SelfPUModels, train

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_RUN = 0, 2, 3, 4


def _spec(args):
    values = load_config(args.config) if args.config else {}
    return build_spec(values, seed=args.seed, out=args.out)


def cmd_gen_data(args):
    spec = _spec(args)
    if not args.out:
        raise ConfigError("gen-data needs --out")
    ds = spec.dataset.build(spec.base_seed)
    save_dataset(ds, args.out)
    print(f"wrote {ds.n} samples (d={ds.d}) to {args.out}")


def cmd_train(args):
    spec = _spec(args)
    cfg = spec.trainer
    seed = spec.base_seed
    ds = spec.dataset.build(seed)
    train_set, val, test = split(ds, SplitSpec(), seed)
    pu = make_pu(train_set, cfg.r, seed)
    models, result = train(replace(cfg, seed=seed), pu, val, test)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        data = result.to_dict()
        data["dataset"] = spec.dataset.__dict__
        (out / f"{cfg.method}_{round(cfg.r * 100)}_{seed}.json").write_text(json.dumps(data, indent=1))
        if isinstance(models, SelfPUModels):
            for k, (g, G) in enumerate(zip(models.students, models.teachers), 1):
                save_model(g, out / f"student{k}.model")
                save_model(G, out / f"teacher{k}.model")
        else:
            save_model(models, out / "model.model")
    print(json.dumps({"method": cfg.method, "seed": seed, **result.metrics}))


def _emit(table, args):
    fmt = args.format or "md"
    print(render_report(table, fmt), end="")


def cmd_experiment(args):
    _, table = run_experiment(_spec(args))
    _emit(table, args)


def _sweep(args, param):
    spec = _spec(args)
    if param == "alpha" and spec.alpha_grid is None:
        spec.alpha_grid = list(PAPER_ALPHA_GRID)
    if param == "beta" and spec.beta_grid is None:
        spec.beta_grid = list(PAPER_BETA_GRID)
    _emit(ablation_sweep(spec, param), args)


def cmd_ablate_components(args):
    _emit(component_ablation(_spec(args)), args)


def cmd_report(args):
    if not args.input:
        raise ConfigError("report needs --in <report.json>")
    table = load_report(args.input)
    fmt = args.format or "md"
    if args.out:
        emit_report(table, fmt, args.out)
    else:
        print(render_report(table, fmt), end="")


def build_parser():
    parser = argparse.ArgumentParser(prog="puforge", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="verb", required=True)
    verbs = {
        "gen-data": cmd_gen_data,
        "train": cmd_train,
        "experiment": cmd_experiment,
        "ablate-alpha": lambda a: _sweep(a, "alpha"),
        "ablate-beta": lambda a: _sweep(a, "beta"),
        "ablate-components": cmd_ablate_components,
        "report": cmd_report,
    }
    for name, fn in verbs.items():
        p = sub.add_parser(name)
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--seed", type=int, help="base seed (overrides the config)")
        p.add_argument("--out", help="output file or directory")
        p.add_argument("--format", choices=("csv", "json", "md"))
        if name == "report":
            p.add_argument("--in", dest="input", help="report.json produced by a sweep")
        p.set_defaults(func=fn)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        args.func(args)
    except PUForgeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
