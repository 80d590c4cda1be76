"""Contextual bandit (LinUCB) replacement selection and search baselines.

Every strategy scores candidates through a :class:`ConfidenceEvaluator`, so
evaluation counts are comparable across strategies.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations, permutations
from typing import Mapping, Sequence

import numpy as np

from .catalog import Composition, MLaaSService
from .errors import SizeLimitError
from .rules import CompositionProfile, RuleThresholds, check_lambda, evaluate_rules, weighted_rule_sum

CONTEXT_FIELDS = (
    "volume_norm",
    "feature_count_norm",
    "modality_code_norm",
    "effectiveness",
    "quality",
    "latency_benefit",
    "reliability",
)
CONTEXT_DIM = len(CONTEXT_FIELDS)
BRUTE_FORCE_CAP = 1_000_000


def _raw_context(s: MLaaSService) -> np.ndarray:
    return np.array([
        s.data.volume,
        s.data.feature_count,
        s.data.modality.code,
        s.qos.effectiveness,
        s.qos.quality,
        s.qos.latency,
        s.qos.reliability,
    ], dtype=float)


@dataclass(frozen=True, eq=False)
class ContextBounds:
    lo: np.ndarray
    hi: np.ndarray

    @classmethod
    def from_pool(cls, pool: Sequence[MLaaSService]) -> ContextBounds:
        if not pool:
            raise ValueError("empty candidate pool")
        raw = np.stack([_raw_context(s) for s in pool])
        return cls(raw.min(axis=0), raw.max(axis=0))


def context_features(candidate: MLaaSService, bounds: ContextBounds) -> np.ndarray:
    """Min-max scaled 7-d context; fields constant over the pool map to 0.5.

    Modality is scaled by its fixed code range (/2) unless constant.
    Latency enters as a benefit, 1 - latency_norm.
    """
    raw = _raw_context(candidate)
    span = bounds.hi - bounds.lo
    flat = span == 0
    x = np.where(flat, 0.5, (raw - bounds.lo) / np.where(flat, 1.0, span))
    if not flat[2]:
        x[2] = raw[2] / 2.0
    if not flat[5]:
        x[5] = 1.0 - x[5]
    return np.clip(x, 0.0, 1.0)


@dataclass(frozen=True, eq=False)
class ArmState:
    A: np.ndarray
    b: np.ndarray
    A_inv: np.ndarray

    @classmethod
    def fresh(cls, d: int = CONTEXT_DIM) -> ArmState:
        return cls(np.eye(d), np.zeros(d), np.eye(d))

    @property
    def theta(self) -> np.ndarray:
        return self.A_inv @ self.b


def update_arm(state: ArmState, x: np.ndarray, reward: float) -> ArmState:
    """Ridge update: A += x x^T, b += reward * x."""
    x = np.asarray(x, dtype=float)
    A = state.A + np.outer(x, x)
    return ArmState(A, state.b + reward * x, np.linalg.inv(A))


def _sigmoid(z: float) -> float:
    return 1.0 / (1.0 + math.exp(-z))


def ucb_score(state: ArmState, x: np.ndarray, alpha: float = 1.0, sigmoid: bool = False) -> float:
    """x^T theta_hat + alpha * sqrt(x^T A^-1 x)."""
    x = np.asarray(x, dtype=float)
    ainv_x = state.A_inv @ x
    width = float(x @ ainv_x)
    if width < 0:
        raise np.linalg.LinAlgError("A is not positive definite")
    z = float(x @ (state.A_inv @ state.b)) + alpha * math.sqrt(width)
    return _sigmoid(z) if sigmoid else z


def select_arms(
    states: Mapping[str, ArmState],
    contexts: Mapping[str, np.ndarray],
    K: int,
    alpha: float,
    rng: np.random.Generator,
    sigmoid: bool = False,
) -> list[str]:
    """Fill K slots; each slot scores a random floor(N/K) subsample of the remaining pool."""
    remaining = sorted(contexts)
    n = len(remaining)
    if K < 1 or n < K:
        raise SizeLimitError(f"pool of {n} cannot fill {K} slots")
    per_slot = max(1, n // K)
    chosen = []
    for _ in range(K):
        take = min(per_slot, len(remaining))
        idx = sorted(rng.choice(len(remaining), size=take, replace=False))
        best_id, best = None, -math.inf
        for i in idx:  # ascending id, so strict > keeps the lowest id on ties
            aid = remaining[i]
            s = ucb_score(states[aid], contexts[aid], alpha, sigmoid)
            if s > best:
                best_id, best = aid, s
        chosen.append(best_id)
        remaining.remove(best_id)
    return chosen


class ConfidenceEvaluator:
    """Scores candidates against a fixed composition and counts evaluations."""

    def __init__(self, composition: Composition, thresholds: RuleThresholds = RuleThresholds(), lam=None):
        self.profile = CompositionProfile(composition)
        self.thresholds = thresholds
        self.lam = check_lambda(lam)
        self.evaluations = 0

    def _cs(self, s: MLaaSService) -> float:
        rules, _ = evaluate_rules(s, self.profile, self.thresholds)
        return weighted_rule_sum(rules, self.lam)

    def __call__(self, s: MLaaSService) -> float:
        self.evaluations += 1
        return self._cs(s)

    def assignment(self, services: Sequence[MLaaSService]) -> float:
        """Summed confidence of one slot assignment, counted as a single evaluation."""
        self.evaluations += 1
        return math.fsum(self._cs(s) for s in services)


@dataclass(frozen=True)
class RoundRecord:
    round: int
    chosen_arms: tuple[str, ...]
    rewards: tuple[float, ...]
    cumulative_reward: float
    evaluations_so_far: int
    explored: bool = False

    @property
    def average_reward(self) -> float:
        return math.fsum(self.rewards) / len(self.rewards) if self.rewards else 0.0


@dataclass
class BanditRun:
    history: list[RoundRecord]
    best_arms: list[str]
    evaluations: int
    states: dict[str, ArmState] = field(default_factory=dict)

    @property
    def cumulative_reward(self) -> float:
        return self.history[-1].cumulative_reward if self.history else 0.0


@dataclass(frozen=True)
class SearchResult:
    combo: tuple[str, ...]
    total_cs: float
    evaluations: int


def _resolve(candidates, catalog=None) -> list[MLaaSService]:
    items = list(candidates)
    if items and not isinstance(items[0], MLaaSService):
        if catalog is None:
            raise ValueError("candidate ids need a catalog to resolve against")
        index = catalog if isinstance(catalog, Mapping) else {s.id: s for s in catalog}
        items = [index[i] for i in items]
    return sorted(items, key=lambda s: s.id)


def _top_by_mean(sums: dict[str, float], counts: dict[str, int], K: int, prior: float | None = None) -> list[str]:
    def mean(aid):
        if counts[aid]:
            return sums[aid] / counts[aid]
        return prior

    ids = [a for a in sorted(sums) if prior is not None or counts[a]]
    return sorted(ids, key=lambda a: -mean(a))[:K]


def history_csv_rows(history: Sequence[RoundRecord]) -> list[list[str]]:
    rows = [["round", "arm_ids", "rewards", "cumulative_reward", "evaluations_so_far"]]
    for r in history:
        rows.append([
            str(r.round),
            ";".join(r.chosen_arms),
            ";".join(f"{x:.9g}" for x in r.rewards),
            f"{r.cumulative_reward:.9g}",
            str(r.evaluations_so_far),
        ])
    return rows


def run_cmab(
    catalog,
    composition: Composition,
    candidates,
    T: int = 500,
    K: int = 2,
    alpha: float = 1.0,
    thresholds: RuleThresholds = RuleThresholds(),
    lam=None,
    seed: int = 0,
    sigmoid: bool = False,
    states: Mapping[str, ArmState] | None = None,
) -> BanditRun:
    """LinUCB over candidate services; the reward of an arm is its confidence score.

    ``composition`` is the performing composition the candidates are scored
    against. Pass ``states`` to continue from earlier arm statistics.
    """
    pool = _resolve(candidates, catalog)
    if len(pool) < K:
        raise SizeLimitError(f"{len(pool)} candidates cannot fill {K} slots")
    evaluator = ConfidenceEvaluator(composition, thresholds, lam)
    by_id = {s.id: s for s in pool}
    # contexts are static within one run, so one scaling pass serves every round
    bounds = ContextBounds.from_pool(pool)
    contexts = {s.id: context_features(s, bounds) for s in pool}
    arm_states = {s.id: (states or {}).get(s.id) or ArmState.fresh() for s in pool}
    rng = np.random.default_rng(seed)
    sums = {s.id: 0.0 for s in pool}
    counts = {s.id: 0 for s in pool}

    history, cumulative = [], 0.0
    for t in range(1, T + 1):
        arms = select_arms(arm_states, contexts, K, alpha, rng, sigmoid)
        rewards = tuple(evaluator(by_id[a]) for a in arms)
        for a, r in zip(arms, rewards):
            arm_states[a] = update_arm(arm_states[a], contexts[a], r)
            sums[a] += r
            counts[a] += 1
        cumulative += math.fsum(rewards)
        history.append(RoundRecord(t, tuple(arms), rewards, cumulative, evaluator.evaluations))
    return BanditRun(history, _top_by_mean(sums, counts, K), evaluator.evaluations, arm_states)


def epsilon_greedy(
    candidates,
    composition: Composition,
    T: int = 500,
    K: int = 2,
    epsilon: float = 0.1,
    seed: int = 0,
    thresholds: RuleThresholds = RuleThresholds(),
    lam=None,
    catalog=None,
) -> BanditRun:
    """Top-K by empirical mean, or K uniform arms with probability ``epsilon``.

    Unseen arms carry an optimistic mean of 1.0.
    """
    pool = _resolve(candidates, catalog)
    if len(pool) < K:
        raise SizeLimitError(f"{len(pool)} candidates cannot fill {K} slots")
    evaluator = ConfidenceEvaluator(composition, thresholds, lam)
    ids = [s.id for s in pool]
    by_id = {s.id: s for s in pool}
    rng = np.random.default_rng(seed)
    sums = {a: 0.0 for a in ids}
    counts = {a: 0 for a in ids}

    history, cumulative = [], 0.0
    for t in range(1, T + 1):
        explore = bool(rng.random() < epsilon)
        if explore:
            arms = [ids[i] for i in sorted(rng.choice(len(ids), size=K, replace=False))]
        else:
            arms = _top_by_mean(sums, counts, K, prior=1.0)
        rewards = tuple(evaluator(by_id[a]) for a in arms)
        for a, r in zip(arms, rewards):
            sums[a] += r
            counts[a] += 1
        cumulative += math.fsum(rewards)
        history.append(RoundRecord(t, tuple(arms), rewards, cumulative, evaluator.evaluations, explore))
    return BanditRun(history, _top_by_mean(sums, counts, K), evaluator.evaluations)


def brute_force_evaluations(n: int, K: int) -> int:
    return math.factorial(K) * math.comb(n, K)


def brute_force_best(
    candidates,
    composition: Composition,
    underperformers: Sequence[str] | None = None,
    K: int | None = None,
    thresholds: RuleThresholds = RuleThresholds(),
    lam=None,
    cap: int = BRUTE_FORCE_CAP,
    catalog=None,
) -> SearchResult:
    """Score every ordered assignment of K distinct candidates to the K slots.

    Slots follow the underperformer ids in ascending order. The returned
    combo lists the candidate placed in each slot; the first maximal
    assignment in enumeration order wins.
    """
    pool = _resolve(candidates, catalog)
    if K is None:
        if underperformers is None:
            raise ValueError("give K or the underperformer slots")
        K = len(underperformers)
    if K < 1 or len(pool) < K:
        raise SizeLimitError(f"{len(pool)} candidates cannot fill {K} slots")
    expected = brute_force_evaluations(len(pool), K)
    if expected > cap:
        raise SizeLimitError(f"brute force needs {expected} evaluations, cap is {cap}")
    evaluator = ConfidenceEvaluator(composition, thresholds, lam)
    best, best_total = None, -math.inf
    for combo in combinations(pool, K):
        for assignment in permutations(combo):
            total = evaluator.assignment(assignment)
            if total > best_total:
                best, best_total = assignment, total
    return SearchResult(tuple(s.id for s in best), best_total, evaluator.evaluations)


def _repair(child: list[int], n: int, rng: np.random.Generator) -> list[int]:
    seen = set()
    for i, g in enumerate(child):
        if g in seen:
            unused = [x for x in range(n) if x not in seen and x not in child[i + 1:]]
            child[i] = int(rng.choice(unused))
        seen.add(child[i])
    return child


def genetic_search(
    candidates,
    composition: Composition,
    K: int = 2,
    population: int = 20,
    generations: int = 30,
    mutation_rate: float = 0.1,
    seed: int = 0,
    thresholds: RuleThresholds = RuleThresholds(),
    lam=None,
    catalog=None,
    initial_population: Sequence[Sequence[str]] | None = None,
) -> SearchResult:
    """Evolve K-subsets of candidates toward maximal summed confidence.

    Size-2 tournaments, one-point crossover with duplicate repair, per-gene
    swap mutation, and one elite carried over. Returns the best subset seen.
    """
    pool = _resolve(candidates, catalog)
    n = len(pool)
    if K < 1 or n < K:
        raise SizeLimitError(f"{n} candidates cannot fill {K} slots")
    if population < 2:
        raise ValueError("population must be >= 2")
    evaluator = ConfidenceEvaluator(composition, thresholds, lam)
    rng = np.random.default_rng(seed)
    pos = {s.id: i for i, s in enumerate(pool)}
    cache: dict[tuple[int, ...], float] = {}

    def fitness(ind):
        key = tuple(sorted(ind))
        if key not in cache:
            cache[key] = evaluator.assignment([pool[i] for i in key])
        return cache[key]

    if initial_population is not None:
        pop = [[pos[a] for a in ind] for ind in initial_population]
    else:
        pop = [list(rng.choice(n, size=K, replace=False)) for _ in range(population)]
    pop = [[int(g) for g in ind] for ind in pop]

    def better(a, b):
        fa, fb = fitness(a), fitness(b)
        return fa > fb or (fa == fb and sorted(a) < sorted(b))

    best = min(pop, key=lambda ind: (-fitness(ind), sorted(ind)))
    for _ in range(generations):
        elite = min(pop, key=lambda ind: (-fitness(ind), sorted(ind)))
        nxt = [list(elite)]
        while len(nxt) < len(pop):
            parents = []
            for _ in range(2):
                a, b = rng.integers(len(pop), size=2)
                parents.append(pop[a] if better(pop[a], pop[b]) else pop[b])
            if K > 1:
                cut = int(rng.integers(1, K))
                child = parents[0][:cut] + parents[1][cut:]
            else:
                child = list(parents[int(rng.integers(2))])
            child = _repair(child, n, rng)
            for i in range(K):
                if rng.random() < mutation_rate and n > K:
                    unused = [x for x in range(n) if x not in child]
                    child[i] = int(rng.choice(unused))
            nxt.append(child)
        pop = nxt
        gen_best = min(pop, key=lambda ind: (-fitness(ind), sorted(ind)))
        if better(gen_best, best):
            best = gen_best
    key = tuple(sorted(best))
    return SearchResult(tuple(pool[i].id for i in key), fitness(best), evaluator.evaluations)
