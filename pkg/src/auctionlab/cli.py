"""Command line entry point.

    auctionlab run CONFIG.json [--out DIR] [--seed S] [--jobs J]
    auctionlab learn [CONFIG.json] [--out DIR] [--seed S]
    auctionlab verify [--check NAME ...] [--out DIR]
    auctionlab instance (--pathological P1 | --toy) [...] [--out FILE]
    auctionlab instance --inspect FILE

Exit status: 0 on success, 1 when a check fails, 2 on invalid input.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import replace
from pathlib import Path

from .core import AuctionLabError, InvalidInputError
from .lab import (PATHOLOGICAL, VERIFY_CHECKS, experiment_from_json, learn_config_from_json,
                  run_experiment, run_learning_experiment, run_verify, write_rows)
from .valuations import ToyDomainParams, instance_from_json, make_pathological, sample_toy_instance

EXIT_OK, EXIT_FAIL, EXIT_INVALID = 0, 1, 2


def _load_json(path: str) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise InvalidInputError(f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise InvalidInputError(f"{path} is not valid JSON: {exc}") from None


def _cmd_run(args) -> int:
    cfg = experiment_from_json(_load_json(args.config))
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    out = args.out or cfg.output
    summary = run_experiment(cfg, out, jobs=args.jobs)
    for row in summary:
        print(f"{row['mechanism']}: efficiency loss {row['mean_efficiency_loss']:.4f} "
              f"+/- {row['ci95']:.4f}, relative revenue {row['mean_relative_revenue']:.4f}, "
              f"queries {row['mean_queries']:.1f} ({row['runs']} runs)")
    print(f"wrote {Path(out) / 'summary.csv'}")
    return EXIT_OK


def _cmd_learn(args) -> int:
    lc = learn_config_from_json(_load_json(args.config) if args.config else {})
    if args.seed is not None:
        spec = replace(lc.spec, seeds=tuple(args.seed + k for k in range(len(lc.spec.seeds))))
        lc = replace(lc, spec=spec)
    rows = run_learning_experiment(lc.spec, lc.toy, lc.widths, lc.train)
    out = Path(args.out or "learning")
    out.mkdir(parents=True, exist_ok=True)
    write_rows(rows, out / "learning.csv")
    for r in rows:
        print(f"{r['arm']:>8} {r['test_set']:>6}: R2 {r['r2']:.3f} KT {r['kt']:.3f} "
              f"scaledMAE {r['scaled_mae']:.4f} R2c {r['r2c']:.3f}")
    print(f"wrote {out / 'learning.csv'}")
    return EXIT_OK


def _cmd_verify(args) -> int:
    unknown = [c for c in args.check or () if c not in VERIFY_CHECKS]
    if unknown:
        raise InvalidInputError(f"unknown check(s) {unknown}; choose from {list(VERIFY_CHECKS)}")
    checks = run_verify(args.check)
    for c in checks:
        print(f"{'PASS' if c.passed else 'FAIL'} {c.name}: {c.detail}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "verify.csv", "w", newline="", encoding="utf-8") as fh:
            wr = csv.writer(fh)
            wr.writerow(["check", "passed", "detail"])
            for c in checks:
                wr.writerow([c.name, int(c.passed), c.detail])
    return EXIT_OK if all(c.passed for c in checks) else EXIT_FAIL


def _cmd_instance(args) -> int:
    if args.inspect:
        inst = instance_from_json(_load_json(args.inspect))
        alloc, welfare = inst.optimum
        print(f"label {inst.label!r}: n={inst.n}, m={inst.m}, caps={list(inst.caps)}")
        print(f"optimal welfare {welfare!r} at {[list(b) for b in alloc]}")
        return EXIT_OK
    if args.pathological:
        kw = {}
        if args.m is not None:
            kw["m"] = args.m
        inst = make_pathological(args.pathological, **kw)
    elif args.toy:
        params = ToyDomainParams(**{k: v for k, v in (("n", args.n), ("m", args.m)) if v is not None})
        inst = sample_toy_instance(params, args.seed or 0)
    else:
        raise InvalidInputError("instance needs one of --pathological, --toy or --inspect")
    text = inst.dumps()
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        print(f"wrote {args.out}")
    else:
        print(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="override the configured seed")
    common.add_argument("--out", default=None, help="output directory (file for 'instance')")
    common.add_argument("--jobs", type=int, default=1, help="parallel worker processes")

    ap = argparse.ArgumentParser(prog="auctionlab", description="Simulate iterative combinatorial auctions.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", parents=[common], help="run an experiment config")
    p.add_argument("config")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("learn", parents=[common], help="run the learning experiment")
    p.add_argument("config", nargs="?")
    p.set_defaults(func=_cmd_learn)

    p = sub.add_parser("verify", parents=[common], help="replay the pathological-instance checks")
    p.add_argument("--check", action="append", help=f"run only this check; one of {list(VERIFY_CHECKS)}")
    p.set_defaults(func=_cmd_verify)

    p = sub.add_parser("instance", parents=[common], help="generate or inspect instance files")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--pathological", choices=PATHOLOGICAL, type=str.upper)
    g.add_argument("--toy", action="store_true", help="sample a toy instance (seed from --seed)")
    g.add_argument("--inspect", metavar="FILE")
    p.add_argument("--n", type=int)
    p.add_argument("--m", type=int)
    p.set_defaults(func=_cmd_instance)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.jobs < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_INVALID
    try:
        return args.func(args)
    except InvalidInputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except AuctionLabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
