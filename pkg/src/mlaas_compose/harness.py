"""Scenario runner: drift rounds -> assessment -> candidate selection -> replacement search.

Also hosts the scalability and assessment-cost benchmarks and report export.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import assessment as sam
from .bandit import (
    BRUTE_FORCE_CAP,
    ConfidenceEvaluator,
    brute_force_best,
    brute_force_evaluations,
    epsilon_greedy,
    genetic_search,
    run_cmab,
)
from .catalog import (
    CatalogConfig,
    Composition,
    DriftSpec,
    apply_drift,
    composition_qos,
    generate_catalog,
    load_catalog,
    make_composition,
)
from .errors import AmbiguityError, ConfigError
from .rules import RuleThresholds, apply_replacement, check_lambda, qos_only_select, rule_based_select
from .selection import select_candidates

log = logging.getLogger(__name__)

STRATEGIES = ("cmab", "brute", "egreedy", "ga", "qos", "rule")
EXPERIMENTS = ("adaptivity", "scalability", "assessment_timing")


class UsageError(ConfigError):
    """Bad command-line or export argument."""


@dataclass
class CompositionConfig:
    size: int = 5
    member_seed: int = 0
    member_ids: list[str] | None = None


@dataclass
class AssessmentConfig:
    alpha: float = 0.5
    beta: float = 0.5
    theta_pct: float = 10.0
    metric: str = "euclidean"
    gamma: float = 0.25


@dataclass
class BanditConfig:
    T: int = 500
    K: int = 2
    alpha_explore: float = 1.0
    epsilon: float = 0.1
    population: int = 20
    generations: int = 30
    mutation_rate: float = 0.1
    sigmoid: bool = False
    persist_arms: bool = False
    brute_force_cap: int = BRUTE_FORCE_CAP


@dataclass
class BenchConfig:
    sizes: list[int] = field(default_factory=lambda: [10, 20, 50])
    K: int = 2
    n_values: list[int] = field(default_factory=lambda: list(range(2, 13)))
    timing_rounds: int = 5


@dataclass
class ScenarioConfig:
    catalog: CatalogConfig = field(default_factory=CatalogConfig)
    composition: CompositionConfig = field(default_factory=CompositionConfig)
    assessment: AssessmentConfig = field(default_factory=AssessmentConfig)
    thresholds: RuleThresholds = field(default_factory=RuleThresholds)
    lam: tuple[float, ...] = (0.2, 0.2, 0.2, 0.2, 0.2)
    bandit: BanditConfig = field(default_factory=BanditConfig)
    bench: BenchConfig = field(default_factory=BenchConfig)
    drift: list[DriftSpec] = field(default_factory=list)
    experiment: str = "adaptivity"
    rounds: int = 10
    strategy: str = "cmab"
    compare: list[str] = field(default_factory=lambda: ["cmab", "qos", "rule"])
    seed: int = 0

    def validate(self) -> ScenarioConfig:
        self.catalog.validate()
        if self.composition.size < 2:
            raise ConfigError("composition.size must be >= 2")
        a = self.assessment
        sam.check_weighting(a.alpha, a.beta, a.theta_pct)
        self.lam = check_lambda(self.lam)
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}")
        for s in [self.strategy, *self.compare]:
            if s not in STRATEGIES:
                raise ConfigError(f"unknown strategy {s!r}")
        if self.rounds < 0:
            raise ConfigError("rounds must be >= 0")
        if self.bandit.T < 0 or self.bandit.K < 1:
            raise ConfigError("bandit T must be >= 0 and K >= 1")
        return self

    def to_dict(self) -> dict:
        d = {
            "catalog": asdict(self.catalog),
            "composition": asdict(self.composition),
            "assessment": asdict(self.assessment),
            "thresholds": asdict(self.thresholds),
            "lambda": list(self.lam),
            "bandit": asdict(self.bandit),
            "bench": asdict(self.bench),
            "drift": [d.to_dict() for d in self.drift],
            "experiment": self.experiment,
            "rounds": self.rounds,
            "strategy": self.strategy,
            "compare": list(self.compare),
            "seed": self.seed,
        }
        d["catalog"]["modality_weights"] = list(self.catalog.modality_weights)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> ScenarioConfig:
        d = dict(d)
        known = {f.name for f in fields(cls)} | {"lambda"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")

        def sub(kind, key):
            raw = d.pop(key, None) or {}
            names = {f.name for f in fields(kind)}
            bad = set(raw) - names
            if bad:
                raise ConfigError(f"unknown {key} keys: {sorted(bad)}")
            for k, v in raw.items():
                if isinstance(v, list) and k in ("modality_weights", "effectiveness_range", "latency_range", "volume_range"):
                    raw[k] = tuple(v)
            try:
                return kind(**raw)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad {key} section: {exc}") from exc

        cfg = cls(
            catalog=sub(CatalogConfig, "catalog"),
            composition=sub(CompositionConfig, "composition"),
            assessment=sub(AssessmentConfig, "assessment"),
            thresholds=sub(RuleThresholds, "thresholds"),
            bandit=sub(BanditConfig, "bandit"),
            bench=sub(BenchConfig, "bench"),
        )
        if "lambda" in d or "lam" in d:
            cfg.lam = tuple(d.pop("lambda", None) or d.pop("lam"))
        try:
            cfg.drift = [DriftSpec(**x) for x in d.pop("drift", [])]
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad drift entry: {exc}") from exc
        for k, v in d.items():
            setattr(cfg, k, v)
        return cfg.validate()

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def load_config(path: str | Path | None) -> ScenarioConfig:
    if path is None:
        return ScenarioConfig().validate()
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return ScenarioConfig.from_dict(raw)


# --- report --------------------------------------------------------------

ROUND_COLUMNS = [
    "round", "n_members", "qos_before", "qos_after", "effectiveness_after", "latency_after",
    "n_underperformers", "underperformers", "n_candidates", "replaced", "replacements", "outcome",
]
STRATEGY_COLUMNS = [
    "round", "strategy", "seed", "config_hash", "chosen", "total_cs", "evaluations", "qos_after",
]
SCALABILITY_COLUMNS = [
    "n", "k", "strategy", "seed", "config_hash", "evaluations", "expected_evaluations",
    "wall_clock_s", "total_cs", "status",
]
ASSESSMENT_COLUMNS = [
    "n", "method", "seed", "config_hash", "evaluations", "expected_evaluations", "wall_clock_s",
]


@dataclass
class ExperimentReport:
    kind: str
    config: dict
    config_hash: str
    tables: dict[str, list[dict]]
    columns: dict[str, list[str]]
    primary: str

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "config_hash": self.config_hash,
            "config": self.config,
            "tables": self.tables,
        }


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.9g}"
    if isinstance(v, (list, tuple)):
        return ";".join(_fmt(x) for x in v)
    return str(v)


def _round_floats(obj):
    if isinstance(obj, bool) or obj is None:
        return obj
    if isinstance(obj, (float, np.floating)):
        return float(f"{float(obj):.9g}")
    if isinstance(obj, dict):
        return {k: _round_floats(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round_floats(x) for x in obj]
    return obj


def table_to_csv(rows: Sequence[dict], columns: Sequence[str]) -> str:
    import io

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r.get(c)) for c in columns])
    return buf.getvalue()


def render_report(report: ExperimentReport, fmt: str) -> dict[str, str]:
    """Serialized report keyed by table name ('' for the primary output)."""
    if fmt == "json":
        return {"": json.dumps(_round_floats(report.to_dict()), indent=2, sort_keys=True) + "\n"}
    if fmt == "csv":
        out = {"": table_to_csv(report.tables[report.primary], report.columns[report.primary])}
        for name, rows in report.tables.items():
            if name != report.primary:
                out[name] = table_to_csv(rows, report.columns[name])
        return out
    raise UsageError(f"unknown format {fmt!r} (expected csv or json)")


def export_metrics(report: ExperimentReport, path: str | Path, fmt: str = "csv") -> list[Path]:
    """Write ``report``; csv puts secondary tables in ``<stem>_<table>.csv`` siblings."""
    path = Path(path)
    written = []
    for name, text in render_report(report, fmt).items():
        target = path if not name else path.with_name(f"{path.stem}_{name}{path.suffix}")
        target.write_text(text)
        written.append(target)
    return written


# --- scenario ------------------------------------------------------------

def derive_seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


def build_catalog(config: ScenarioConfig, seed: int | None = None):
    if config.catalog.path:
        return load_catalog(config.catalog.path)
    return generate_catalog(config.catalog, config.catalog.seed if seed is None else seed)


def build_composition(config: ScenarioConfig, catalog) -> Composition:
    ids = config.composition.member_ids
    if ids:
        index = {s.id: s for s in catalog}
        missing = [i for i in ids if i not in index]
        if missing:
            raise ConfigError(f"composition members not in catalog: {missing}")
        return Composition.of([index[i] for i in ids])
    return make_composition(catalog, config.composition.size, config.composition.member_seed)


def assess(config: ScenarioConfig, composition: Composition) -> sam.ContributionReport:
    a = config.assessment
    return sam.service_contribution_scores(
        composition, a.alpha, a.beta, a.theta_pct, metric=a.metric, gamma=a.gamma
    )


@dataclass
class StrategyOutcome:
    strategy: str
    chosen: list[str | None]  # one entry per slot
    total_cs: float
    evaluations: int
    seed: int
    arm_states: dict = field(default_factory=dict)
    history: list = field(default_factory=list)  # bandit strategies only


def run_strategy(
    name: str,
    pool,
    performing: Composition,
    slots: Sequence[str],
    config: ScenarioConfig,
    seed: int,
    arm_states=None,
) -> StrategyOutcome:
    """Pick one replacement per slot from ``pool`` with the named strategy."""
    K = len(slots)
    b, th, lam = config.bandit, config.thresholds, config.lam
    states, history = {}, []
    if name == "cmab":
        run = run_cmab(pool, performing, pool, b.T, K, b.alpha_explore, th, lam, seed, b.sigmoid, arm_states)
        chosen, evals, states, history = list(run.best_arms), run.evaluations, run.states, run.history
    elif name == "egreedy":
        run = epsilon_greedy(pool, performing, b.T, K, b.epsilon, seed, th, lam)
        chosen, evals, history = list(run.best_arms), run.evaluations, run.history
    elif name == "brute":
        res = brute_force_best(pool, performing, slots, K, th, lam, b.brute_force_cap)
        chosen, evals = list(res.combo), res.evaluations
    elif name == "ga":
        res = genetic_search(pool, performing, K, b.population, b.generations, b.mutation_rate, seed, th, lam)
        chosen, evals = list(res.combo), res.evaluations
    elif name in ("qos", "rule"):
        remaining = [s.id for s in pool]
        index = {s.id: s for s in pool}
        chosen = []
        for _ in slots:
            if name == "qos":
                pick = qos_only_select(remaining, index)
            else:
                pick = rule_based_select(remaining, index, performing, th)
            chosen.append(pick)
            if pick is not None:
                remaining.remove(pick)
        evals = 0
    else:
        raise ConfigError(f"unknown strategy {name!r}")
    chosen = (chosen + [None] * K)[:K]
    scorer = ConfidenceEvaluator(performing, th, lam)
    index = {s.id: s for s in pool}
    total = math.fsum(scorer(index[c]) for c in chosen if c is not None)
    return StrategyOutcome(name, chosen, total, evals, seed, states, history)


def _apply(composition: Composition, slots, chosen, index) -> Composition:
    for out_id, cid in zip(slots, chosen):
        if cid is not None:
            composition = apply_replacement(composition, out_id, index[cid])
    return composition


def run_scenario(config: ScenarioConfig) -> ExperimentReport:
    """Run the adaptive loop for ``config.rounds`` rounds; fully deterministic per config."""
    config.validate()
    chash = config.config_hash()
    catalog = build_catalog(config)
    comp = build_composition(config, catalog)
    gamma = config.assessment.gamma
    rounds, strategy_rows = [], []
    eval_totals = {s: 0 for s in dict.fromkeys([config.strategy, *config.compare])}
    arm_states: dict = {}

    for r in range(1, config.rounds + 1):
        for spec in config.drift:
            catalog = apply_drift(catalog, spec, r, seed=config.seed)
        comp = comp.refreshed(catalog)
        before = sam.qos_score(composition_qos(comp, gamma))
        report = assess(config, comp)
        row = {
            "round": r,
            "n_members": len(comp),
            "qos_before": before,
            "n_underperformers": len(report.underperformers),
            "underperformers": sorted(report.underperformers),
            "n_candidates": 0,
            "replaced": 0,
            "replacements": [],
            "outcome": "stable",
        }
        if report.underperformers:
            row["outcome"] = "no-replacement"
            under = [comp.member(i) for i in sorted(report.underperformers)]
            try:
                cands = select_candidates(catalog, under, comp)
            except AmbiguityError as exc:
                log.info("round %d: %s", r, exc)
                cands = None
            if cands is not None and len(cands):
                row["n_candidates"] = len(cands)
                index = {s.id: s for s in catalog}
                pool = [index[c] for c in cands.candidates]
                k = min(len(under), len(pool))
                # replace the k weakest underperformers; slots run in id order
                weakest = sorted(under, key=lambda m: (report.per_service[m.id].scs_pct, m.id))[:k]
                slots = sorted(m.id for m in weakest)
                performing = comp.without(report.underperformers) if len(under) < len(comp) else comp
                outcomes = {}
                for name in dict.fromkeys([config.strategy, *config.compare]):
                    seed = derive_seed(config.seed, r, STRATEGIES.index(name))
                    prior = arm_states if (name == "cmab" and config.bandit.persist_arms) else None
                    try:
                        out = run_strategy(name, pool, performing, slots, config, seed, prior)
                    except ValueError as exc:
                        log.info("round %d: strategy %s skipped: %s", r, name, exc)
                        continue
                    outcomes[name] = out
                    eval_totals[name] += out.evaluations
                    hypo = _apply(comp, slots, out.chosen, index)
                    strategy_rows.append({
                        "round": r,
                        "strategy": name,
                        "seed": seed,
                        "config_hash": chash,
                        "chosen": [c or "-" for c in out.chosen],
                        "total_cs": out.total_cs,
                        "evaluations": out.evaluations,
                        "qos_after": sam.qos_score(composition_qos(hypo, gamma)),
                    })
                primary = outcomes.get(config.strategy)
                if primary is not None:
                    if config.strategy == "cmab" and config.bandit.persist_arms:
                        arm_states = primary.arm_states
                    pairs = [(o, c) for o, c in zip(slots, primary.chosen) if c is not None]
                    if pairs:
                        comp = _apply(comp, slots, primary.chosen, index)
                        row["replaced"] = len(pairs)
                        row["replacements"] = [f"{o}->{c}" for o, c in pairs]
                        row["outcome"] = "replaced"
        after = composition_qos(comp, gamma)
        row.update(
            qos_after=sam.qos_score(after),
            effectiveness_after=after.effectiveness,
            latency_after=after.latency,
        )
        rounds.append(row)

    eval_rows = [
        {"round": "total", "strategy": s, "seed": config.seed, "config_hash": chash, "evaluations": n}
        for s, n in eval_totals.items()
    ]
    return ExperimentReport(
        kind="adaptivity",
        config=config.to_dict(),
        config_hash=chash,
        tables={"rounds": rounds, "strategies": strategy_rows, "evaluations": eval_rows},
        columns={
            "rounds": ROUND_COLUMNS,
            "strategies": STRATEGY_COLUMNS,
            "evaluations": ["round", "strategy", "seed", "config_hash", "evaluations"],
        },
        primary="rounds",
    )


# --- benchmarks ----------------------------------------------------------

def _timed(fn: Callable):
    t0 = time.perf_counter()
    out = fn()
    return out, time.perf_counter() - t0


def bench_setup(config: ScenarioConfig, n_candidates: int, K: int, seed: int):
    """Composition, its K weakest members as slots, and every non-member as candidate pool."""
    size = max(config.composition.size, K + 1)
    cat_cfg = replace(config.catalog, n_services=n_candidates + size, modality_weights=(1.0, 0.0, 0.0), path=None)
    catalog = generate_catalog(cat_cfg, seed)
    comp = make_composition(catalog, size, seed)
    report = assess(config, comp)
    slots = sorted(sorted(comp.ids, key=lambda i: (report.per_service[i].scs_pct, i))[:K])
    pool = [s for s in catalog if s.id not in comp]
    return comp, comp.without(slots), slots, pool


def run_experiment_scalability(sizes: Sequence[int], K: int, config: ScenarioConfig) -> ExperimentReport:
    """Evaluation counts and wall-clock of brute force, CMAB, e-greedy and GA as the pool grows."""
    config.validate()
    chash = config.config_hash()
    b = config.bandit
    rows = []
    for n in sizes:
        seed = derive_seed(config.seed, n, K)
        _, performing, slots, pool = bench_setup(config, n, K, seed)
        base = {"n": n, "k": K, "seed": seed, "config_hash": chash}

        expected = brute_force_evaluations(n, K)
        if expected > b.brute_force_cap:
            rows.append({**base, "strategy": "brute", "expected_evaluations": expected, "status": "skipped: cap"})
        else:
            res, dt = _timed(lambda: brute_force_best(pool, performing, slots, K, config.thresholds, config.lam, b.brute_force_cap))
            if res.evaluations != expected:
                raise RuntimeError(f"brute force made {res.evaluations} evaluations, expected {expected}")
            rows.append({**base, "strategy": "brute", "evaluations": res.evaluations, "expected_evaluations": expected,
                         "wall_clock_s": dt, "total_cs": res.total_cs, "status": "ok"})

        run, dt = _timed(lambda: run_cmab(pool, performing, pool, b.T, K, b.alpha_explore, config.thresholds, config.lam, seed, b.sigmoid))
        if run.evaluations != b.T * K:
            raise RuntimeError(f"CMAB made {run.evaluations} evaluations, expected {b.T * K}")
        cs = ConfidenceEvaluator(performing, config.thresholds, config.lam)
        index = {s.id: s for s in pool}
        rows.append({**base, "strategy": "cmab", "evaluations": run.evaluations, "expected_evaluations": b.T * K,
                     "wall_clock_s": dt, "total_cs": math.fsum(cs(index[a]) for a in run.best_arms), "status": "ok"})

        run, dt = _timed(lambda: epsilon_greedy(pool, performing, b.T, K, b.epsilon, seed, config.thresholds, config.lam))
        rows.append({**base, "strategy": "egreedy", "evaluations": run.evaluations, "expected_evaluations": b.T * K,
                     "wall_clock_s": dt, "total_cs": math.fsum(cs(index[a]) for a in run.best_arms), "status": "ok"})

        res, dt = _timed(lambda: genetic_search(pool, performing, K, b.population, b.generations, b.mutation_rate,
                                                seed, config.thresholds, config.lam))
        rows.append({**base, "strategy": "ga", "evaluations": res.evaluations, "wall_clock_s": dt,
                     "total_cs": res.total_cs, "status": "ok"})
    return ExperimentReport("scalability", config.to_dict(), chash, {"scalability": rows},
                            {"scalability": SCALABILITY_COLUMNS}, "scalability")


ASSESSMENT_METHODS = ("sam", "loo", "ncs", "shap")


def expected_assessment_evaluations(method: str, n: int) -> int:
    return {"sam": n + 1, "loo": n + 1, "ncs": 0, "shap": 2 ** n}[method]


def time_assessment(method: str, comp: Composition, config: ScenarioConfig, rounds: int):
    """Mean wall-clock per round and oracle evaluations of one assessment method."""
    a = config.assessment
    evaluations = 0
    total = 0.0
    for _ in range(rounds):
        oracle = sam.UtilityOracle(a.gamma)
        t0 = time.perf_counter()
        if method == "sam":
            evaluations = assess(config, comp).utility_evaluations
        elif method == "loo":
            sam.loo_contribution(comp, oracle)
        elif method == "ncs":
            sam.ncs_contribution(comp)
        elif method == "shap":
            sam.shapley_contribution(comp, oracle)
        else:
            raise ConfigError(f"unknown assessment method {method!r}")
        total += time.perf_counter() - t0
        if method != "sam":
            evaluations = oracle.evaluations
    return total / max(rounds, 1), evaluations


def run_experiment_assessment_timing(n_values: Sequence[int], rounds: int, config: ScenarioConfig) -> ExperimentReport:
    """Per-round cost of SAM, LOO, NCS and exact Shapley on compositions of size n."""
    config.validate()
    chash = config.config_hash()
    rows = []
    for n in n_values:
        seed = derive_seed(config.seed, n)
        cat_cfg = replace(config.catalog, n_services=n, modality_weights=(1.0, 0.0, 0.0), path=None)
        comp = make_composition(generate_catalog(cat_cfg, seed), n, seed)
        for method in ASSESSMENT_METHODS:
            if method == "shap" and n > sam.SHAPLEY_MAX_MEMBERS:
                continue
            dt, evals = time_assessment(method, comp, config, rounds)
            expected = expected_assessment_evaluations(method, n)
            if evals != expected:
                raise RuntimeError(f"{method} made {evals} oracle evaluations at n={n}, expected {expected}")
            rows.append({"n": n, "method": method, "seed": seed, "config_hash": chash, "evaluations": evals,
                         "expected_evaluations": expected, "wall_clock_s": dt})
    return ExperimentReport("assessment_timing", config.to_dict(), chash, {"assessment": rows},
                            {"assessment": ASSESSMENT_COLUMNS}, "assessment")


def run_experiment(config: ScenarioConfig) -> ExperimentReport:
    if config.experiment == "scalability":
        return run_experiment_scalability(config.bench.sizes, config.bench.K, config)
    if config.experiment == "assessment_timing":
        return run_experiment_assessment_timing(config.bench.n_values, config.bench.timing_rounds, config)
    return run_scenario(config)
