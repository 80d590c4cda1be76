"""Candidate pools with prescribed rule outcomes, for controlled bandit and search benchmarks."""

from __future__ import annotations

from itertools import product
from typing import Sequence

import numpy as np

from .catalog import Composition, DataSpec, MLaaSService, QosVector
from .rules import CompositionProfile, RuleThresholds, evaluate_rules

ALL_PASS = (1, 1, 1, 1, 1)
PARTIAL_VECTORS = [v for v in product((0, 1), repeat=5) if v != ALL_PASS]


def craft_candidate(
    service_id: str,
    composition: Composition,
    rules: Sequence[int],
    rng: np.random.Generator,
    thresholds: RuleThresholds = RuleThresholds(),
) -> MLaaSService:
    """Build a service whose rule vector against ``composition`` is exactly ``rules``.

    ``rules`` is ordered (dum, mum, sm, hqu, sru). Raises ValueError if the
    composition or thresholds make a requested outcome unreachable.
    """
    dum, mum, sm, hqu, sru = (int(r) for r in rules)
    prof = CompositionProfile(composition)
    template = composition.members[0]
    c = len(template.data.label_histogram)
    volume = int(rng.integers(1000, 5001))

    if dum:
        p = prof.pooled_proportions
    else:
        p = np.zeros(c)
        p[int(np.argmin(prof.pooled_proportions))] = 1.0
    raw = p * volume
    hist = np.floor(raw).astype(int)
    hist[np.argsort(-(raw - hist), kind="stable")[: volume - hist.sum()]] += 1

    agg = prof.aggregated_weights
    signs = rng.choice([-1.0, 1.0], size=agg.size)
    rel = rng.uniform(0.15, 0.3) if mum else rng.uniform(0.0, 0.5) * thresholds.theta_s
    weights = agg * (1.0 + rel * signs)

    # penalized ratio (t/T)^a targets 0.5*theta_t or 1.5*theta_t
    target = thresholds.theta_t * (0.5 if sm else 1.5)
    if thresholds.sm_literal:
        target = 1.0 / target
    latency = prof.latency * target ** (1.0 / thresholds.alpha_penalty)

    n_hist = len(prof.mean_history)
    if hqu:
        history = prof.mean_history * rng.uniform(0.9, 1.0)
    else:
        history = np.zeros(n_hist)
        history[int(np.argmin(prof.mean_history))] = 1.0
    task_rel = np.full(len(template.task_reliability), 0.95 if sru else 0.5 * thresholds.theta_r)

    service = MLaaSService(
        id=service_id,
        weights=weights,
        data=DataSpec(volume, template.data.modality, template.data.feature_count, tuple(hist)),
        qos=QosVector(
            effectiveness=float(rng.uniform(0.65, 0.99)),
            quality=float(rng.uniform(0.6, 0.99)),
            latency=float(latency),
            reliability=float(rng.uniform(0.6, 1.0)),
        ),
        history=tuple(np.clip(history, 0.0, 1.0)),
        task_reliability=tuple(task_rel),
    )
    got = evaluate_rules(service, prof, thresholds)[0].as_tuple()
    if got != (dum, mum, sm, hqu, sru):
        raise ValueError(f"could not realize rules {tuple(rules)} (got {got})")
    return service


def rule_pool(
    composition: Composition,
    n: int,
    seed: int,
    n_dominant: int = 1,
    thresholds: RuleThresholds = RuleThresholds(),
    partial: Sequence[Sequence[int]] | None = None,
) -> list[MLaaSService]:
    """``n`` crafted candidates: ``n_dominant`` pass every rule, the rest fail at least one.

    Non-dominant rule vectors are drawn uniformly from ``partial`` (default:
    all 31 vectors other than all-pass). Dominant ids land at random
    positions in the id order.
    """
    if not 0 <= n_dominant <= n:
        raise ValueError("n_dominant must lie in [0, n]")
    rng = np.random.default_rng(seed)
    partial = list(partial or PARTIAL_VECTORS)
    dominant_slots = set(rng.choice(n, size=n_dominant, replace=False).tolist())
    width = max(3, len(str(n - 1)))
    pool = []
    for i in range(n):
        vec = ALL_PASS if i in dominant_slots else partial[int(rng.integers(len(partial)))]
        pool.append(craft_candidate(f"cand-{i:0{width}d}", composition, vec, rng, thresholds))
    return pool
