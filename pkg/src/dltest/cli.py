"""``dltest`` command line: one subcommand per technique plus train/evaluate/smoke/report/run-all.

Exit codes: 0 success, 1 config error, 2 technique failure, 3 ``report --check`` failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from . import combinatorial as ct
from . import report as R
from . import runner
from . import tensornet as tn
from .config import TECHNIQUES, ConfigError, config_from_dict, parse_config

EXIT_OK, EXIT_CONFIG, EXIT_TECHNIQUE, EXIT_CHECK = 0, 1, 2, 3

log = logging.getLogger("dltest")


def _common(p, config_required=True):
    p.add_argument("--config", required=config_required, metavar="PATH", help="experiment config (JSON)")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out", metavar="DIR", help="output directory (default: config output_dir)")
    p.add_argument("--limit", type=int, metavar="N", help="cap the test set at N (stratified)")
    p.add_argument("--format", choices=("csv", "json", "md"), default="csv")
    p.add_argument("--jobs", type=int, default=1, metavar="N", help="techniques run concurrently")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dltest", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("train", help="train (or load cached) base model and save it")
    _common(p, config_required=False)
    p = sub.add_parser("evaluate", help="test-set accuracy of a model")
    _common(p, config_required=False)
    p.add_argument("--model", metavar="PATH", help="model file (default: the config's base model)")
    p = sub.add_parser("smoke", help="boundary-input smoke checks on a model")
    _common(p, config_required=False)
    p.add_argument("--model", metavar="PATH")
    for t in TECHNIQUES:
        p = sub.add_parser(t, help=f"run the {R.TECHNIQUE_NAMES[t]} section of a config")
        _common(p)
    p = sub.add_parser("run-all", help="run every technique section of a config")
    _common(p)
    p = sub.add_parser("report", help="render a finished run directory")
    p.add_argument("run_dir", metavar="DIR")
    p.add_argument("--format", choices=("csv", "json", "md"), default="md")
    p.add_argument("--out", metavar="DIR", help="where to write the report (default: DIR)")
    p.add_argument("--check", action="store_true", help="exit 3 if consistency checks fail")
    return parser


def _load(args, require_technique=True):
    if args.config:
        return parse_config(args.config, require_technique=require_technique)
    return config_from_dict({}, require_technique=False)


def _model(args, cfg):
    if getattr(args, "model", None):
        return tn.load_model(args.model)
    seed = cfg.seed if args.seed is None else args.seed
    train, _, _ = runner.load_data(cfg, args.limit)
    return runner.base_model(cfg, seed, train)


def cmd_train(args) -> int:
    cfg = _load(args, require_technique=False)
    seed = cfg.seed if args.seed is None else args.seed
    train, _, test = runner.load_data(cfg, args.limit)
    model = runner.base_model(cfg, seed, train)
    out = Path(args.out or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"model-seed{seed}.nnpb"
    tn.save_model(model, path)
    ev = tn.evaluate(model, test)
    print(f"saved {path}; test accuracy {ev.accuracy:.2f}%")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = _load(args, require_technique=False)
    model = _model(args, cfg)
    _, _, test = runner.load_data(cfg, args.limit)
    ev = tn.evaluate(model, test)
    print(json.dumps({"accuracy": round(ev.accuracy, 2), "error": round(ev.error, 2), "total": ev.total}))
    return EXIT_OK


def cmd_smoke(args) -> int:
    cfg = _load(args, require_technique=False)
    rep = ct.smoke_test(_model(args, cfg))
    for c in rep.checks:
        print(f"{'PASS' if c.passed else 'FAIL'} {c.name}{': ' + c.detail if c.detail else ''}")
    return EXIT_OK if rep.passed else EXIT_TECHNIQUE


def cmd_run(args, techniques=None) -> int:
    cfg = _load(args)
    if techniques:
        missing = [t for t in techniques if getattr(cfg, t) is None]
        if missing:
            print(f"config error: $: no '{missing[0]}' section in {args.config}", file=sys.stderr)
            return EXIT_CONFIG
    rep = runner.run(cfg, args.seed, args.out, args.limit, args.jobs, techniques)
    out = Path(args.out or cfg.output_dir)
    R.render_report(rep, args.format, out)
    for t in rep.tables:
        print(f"wrote {out / (t.name + '.csv')}")
    for t, msg in sorted(rep.errors.items()):
        print(f"FAILED {t}: {msg}", file=sys.stderr)
    return EXIT_TECHNIQUE if rep.errors else EXIT_OK


def load_report(run_dir) -> R.ExperimentReport:
    run_dir = Path(run_dir)
    if not run_dir.is_dir():
        raise FileNotFoundError(f"no run directory {run_dir}")
    tables = R.load_tables(run_dir)
    env, errors = {}, {}
    for p in sorted(run_dir.glob("environment-seed*.json")):
        env.update(json.loads(p.read_text()))
    for p in sorted(run_dir.glob("errors-seed*.json")):
        errors.update(json.loads(p.read_text()))
    executed = list(dict.fromkeys([t.technique for t in tables] + list(errors)))
    rep = R.ExperimentReport(tables, env, errors, executed)
    rep.check_nonempty()
    return rep


def cmd_report(args) -> int:
    try:
        rep = load_report(args.run_dir)
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    path = R.render_report(rep, args.format, args.out or args.run_dir)
    if path is not None:
        print(f"wrote {path}")
    if args.check:
        failures = R.check_tables(rep.tables)
        failures += [f"{t}: technique failed ({m})" for t, m in sorted(rep.errors.items())]
        for f in failures:
            print(f"CHECK FAILED {f}", file=sys.stderr)
        if failures:
            return EXIT_CHECK
        print("all checks passed")
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "train":
            return cmd_train(args)
        if args.command == "evaluate":
            return cmd_evaluate(args)
        if args.command == "smoke":
            return cmd_smoke(args)
        if args.command == "report":
            return cmd_report(args)
        if args.command == "run-all":
            return cmd_run(args)
        return cmd_run(args, [args.command])
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
