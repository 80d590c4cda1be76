"""Command-line entry point: ``mlaas-compose <command> [options]``."""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .bandit import history_csv_rows
from .catalog import dumps_catalog, service_to_dict
from .errors import ConfigError
from .harness import (
    STRATEGIES,
    ScenarioConfig,
    UsageError,
    _round_floats,
    assess,
    build_catalog,
    build_composition,
    export_metrics,
    load_config,
    render_report,
    run_experiment,
    run_experiment_assessment_timing,
    run_experiment_scalability,
    run_strategy,
    table_to_csv,
)
from .rules import candidate_rows
from .selection import select_candidates

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="scenario JSON file (defaults used when omitted)")
    p.add_argument("--seed", type=int, help="override the catalog and master seeds")
    p.add_argument("--out", help="output path (stdout when omitted)")
    p.add_argument("--format", default="json", help="csv or json (default json)")


def _targets(p):
    p.add_argument("--targets", help="comma-separated member ids to replace (default: flagged underperformers)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mlaas-compose", description="Adaptive MLaaS composition toolkit.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    _common(sub.add_parser("generate", help="generate a synthetic service catalog"))
    _common(sub.add_parser("assess", help="contribution scores of the composition members"))
    for name, text in (("select", "shortlist replacement candidates"), ("compose", "rule breakdown per candidate")):
        p = sub.add_parser(name, help=text)
        _common(p)
        _targets(p)
    p = sub.add_parser("optimize", help="choose replacements with one strategy")
    _common(p)
    _targets(p)
    p.add_argument("--strategy", default="cmab", choices=STRATEGIES)

    bench = sub.add_parser("bench", help="benchmarks")
    bsub = bench.add_subparsers(dest="bench", required=True, parser_class=_Parser)
    _common(bsub.add_parser("scalability", help="evaluation counts and wall-clock per strategy"))
    _common(bsub.add_parser("assessment", help="cost of SAM, LOO, NCS and exact Shapley"))

    p = sub.add_parser("run", help="run the configured experiment end to end")
    _common(p)
    p.add_argument("--persist-arms", action="store_true", help="carry bandit arm state across drift epochs")
    return parser


def _config(args) -> ScenarioConfig:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
        cfg.catalog = replace(cfg.catalog, seed=args.seed)
    if getattr(args, "persist_arms", False):
        cfg.bandit.persist_arms = True
    return cfg.validate()


def _emit(text: str, out: str | None):
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def _json(obj) -> str:
    return json.dumps(_round_floats(obj), indent=2, sort_keys=True) + "\n"


def _setup(cfg: ScenarioConfig, targets: str | None):
    """Catalog, composition, assessment, and the ids to replace."""
    catalog = build_catalog(cfg)
    comp = build_composition(cfg, catalog)
    report = assess(cfg, comp)
    if targets:
        ids = sorted(t.strip() for t in targets.split(",") if t.strip())
        missing = [i for i in ids if i not in comp]
        if missing:
            raise UsageError(f"targets not in composition: {missing}")
    else:
        ids = sorted(report.underperformers)
    return catalog, comp, report, ids


def cmd_generate(args, cfg):
    catalog = build_catalog(cfg)
    if args.format == "json":
        return dumps_catalog(catalog)
    rows = [service_to_dict(s) for s in catalog]
    return table_to_csv(rows, list(rows[0]) if rows else [])


def cmd_assess(args, cfg):
    _, comp, report, _ = _setup(cfg, None)
    if args.format == "csv":
        return report.to_csv()
    return _json({"members": list(comp.ids), **report.to_dict()})


def _candidates(cfg, targets):
    catalog, comp, _, ids = _setup(cfg, targets)
    if not ids:
        return catalog, comp, ids, None
    return catalog, comp, ids, select_candidates(catalog, [comp.member(i) for i in ids], comp)


def cmd_select(args, cfg):
    _, _, ids, cands = _candidates(cfg, args.targets)
    payload = cands.to_dict() if cands else {"candidates": [], "stage1_count": 0, "means": None}
    if args.format == "csv":
        return table_to_csv([{"candidate_id": c} for c in payload["candidates"]], ["candidate_id"])
    return _json(payload)


COMPOSE_COLUMNS = ["candidate_id", "dum", "mum_raw", "mum", "sm", "hqu", "sru", "cs"]


def cmd_compose(args, cfg):
    catalog, comp, ids, cands = _candidates(cfg, args.targets)
    rows = []
    if cands is not None and len(cands):
        performing = comp.without(ids) if len(ids) < len(comp) else comp
        rows = candidate_rows(cands.candidates, catalog, performing, cfg.thresholds, cfg.lam)
    if args.format == "csv":
        return table_to_csv(rows, COMPOSE_COLUMNS)
    return _json(rows)


def cmd_optimize(args, cfg):
    catalog, comp, ids, cands = _candidates(cfg, args.targets)
    payload = {"strategy": args.strategy, "seed": cfg.seed, "config_hash": cfg.config_hash(), "slots": [],
               "chosen": [], "total_cs": 0.0, "evaluations": 0}
    history = []
    if cands is not None and len(cands):
        index = {s.id: s for s in catalog}
        pool = [index[c] for c in cands.candidates]
        slots = ids[: min(len(ids), len(pool))]
        performing = comp.without(ids) if len(ids) < len(comp) else comp
        out = run_strategy(args.strategy, pool, performing, slots, cfg, cfg.seed)
        history = out.history
        payload.update(slots=list(slots), chosen=out.chosen, total_cs=out.total_cs, evaluations=out.evaluations)
    if args.format == "csv":
        if args.strategy in ("cmab", "egreedy"):
            buf = io.StringIO()
            csv.writer(buf, lineterminator="\n").writerows(history_csv_rows(history))
            return buf.getvalue()
        rows = [{"slot": s, "candidate_id": c} for s, c in zip(payload["slots"], payload["chosen"])]
        return table_to_csv(rows, ["slot", "candidate_id"])
    payload["history"] = [
        {"round": r.round, "arm_ids": list(r.chosen_arms), "rewards": list(r.rewards),
         "cumulative_reward": r.cumulative_reward, "evaluations_so_far": r.evaluations_so_far}
        for r in history
    ]
    return _json(payload)


def cmd_bench(args, cfg):
    if args.bench == "scalability":
        report = run_experiment_scalability(cfg.bench.sizes, cfg.bench.K, cfg)
    else:
        report = run_experiment_assessment_timing(cfg.bench.n_values, cfg.bench.timing_rounds, cfg)
    return report


def cmd_run(args, cfg):
    return run_experiment(cfg)


COMMANDS = {
    "generate": cmd_generate,
    "assess": cmd_assess,
    "select": cmd_select,
    "compose": cmd_compose,
    "optimize": cmd_optimize,
    "bench": cmd_bench,
    "run": cmd_run,
}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
        if args.format not in ("csv", "json"):
            raise UsageError(f"unknown format {args.format!r} (expected csv or json)")
        cfg = _config(args)
        result = COMMANDS[args.command](args, cfg)
        if isinstance(result, str):
            _emit(result, args.out)
        elif args.out is None:
            # stdout gets the primary table only; --out also writes the secondary tables
            sys.stdout.write(render_report(result, args.format)[""])
        else:
            export_metrics(result, args.out, args.format)
    except ConfigError as exc:  # UsageError included
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
