"""Compatibility rules between a candidate and a composition, and the confidence score built on them."""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from typing import Mapping, Sequence

import numpy as np

from .assessment import qos_score
from .catalog import Composition, MLaaSService
from .errors import ConfigError, DegenerateInputError, MembershipError

WEIGHT_EPS = 1e-8
# absorbs float error in means that should land exactly on a threshold
TIE_ATOL = 1e-12
RULE_NAMES = ("dum", "mum", "sm", "hqu", "sru")
UNIFORM_LAMBDA = (0.2, 0.2, 0.2, 0.2, 0.2)


@dataclass(frozen=True)
class RuleThresholds:
    theta_d: float = 0.5
    theta_s: float = 0.05
    theta_t: float = 2.0
    alpha_penalty: float = 1.0
    theta_q: float = 0.8
    theta_r: float = 0.8
    sm_literal: bool = False

    def __post_init__(self):
        for f in ("theta_d", "theta_s", "theta_t", "alpha_penalty", "theta_q", "theta_r"):
            if not getattr(self, f) > 0:
                raise ConfigError(f"{f} must be positive")
        if self.theta_q > 1 or self.theta_r > 1:
            raise ConfigError("theta_q and theta_r must lie in (0, 1]")


@dataclass(frozen=True)
class RuleVector:
    dum: int
    mum: int
    sm: int
    hqu: int
    sru: int

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) not in (0, 1):
                raise ValueError(f"rule {f.name} must be 0 or 1")

    def as_tuple(self) -> tuple[int, ...]:
        return (self.dum, self.mum, self.sm, self.hqu, self.sru)


@dataclass(frozen=True)
class ConfidenceScore:
    value: float
    rules: RuleVector
    weights: tuple[float, ...]


class CompositionProfile:
    """Composition-side quantities every rule compares a candidate against."""

    def __init__(self, c: Composition):
        self.composition = c
        pooled = np.sum([m.data.label_histogram for m in c.members], axis=0).astype(float)
        self.pooled_proportions = pooled / pooled.sum()
        self.aggregated_weights = c.aggregated_weights
        self.latency = max(m.qos.latency for m in c.members)
        n = min(len(m.history) for m in c.members)
        self.mean_history = np.mean([m.history[:n] for m in c.members], axis=0)


def _profile(c) -> CompositionProfile:
    return c if isinstance(c, CompositionProfile) else CompositionProfile(c)


def dum_distance(candidate: MLaaSService, c) -> float:
    d = candidate.data.proportions - _profile(c).pooled_proportions
    return math.sqrt(float(d @ d))


def dum(candidate: MLaaSService, c, theta_d: float = 0.5) -> int:
    """1 iff the candidate's label proportions are within ``theta_d`` of the pooled composition."""
    return int(dum_distance(candidate, c) < theta_d)


def mum(candidate: MLaaSService, c) -> float:
    """Mean relative divergence of candidate weights from the aggregate.

    Aggregate elements with magnitude below 1e-8 are skipped.
    """
    agg = _profile(c).aggregated_weights
    w = candidate.weights
    if w.size != agg.size:
        raise ValueError("weight dimension mismatch")
    keep = np.abs(agg) >= WEIGHT_EPS
    if not keep.any():
        raise DegenerateInputError("every aggregate weight is ~0")
    return float(np.mean(np.abs((w[keep] - agg[keep]) / agg[keep])))


def mum_rule(divergence: float, theta_s: float = 0.05) -> int:
    return int(divergence > theta_s)


def sm_ratio(candidate: MLaaSService, c, alpha_penalty: float = 1.0, literal: bool = False) -> float:
    big_t = _profile(c).latency
    t = candidate.qos.latency
    return (big_t / t) ** alpha_penalty if literal else (t / big_t) ** alpha_penalty


def sm(candidate: MLaaSService, c, alpha_penalty: float = 1.0, theta_t: float = 2.0, literal: bool = False) -> int:
    """1 iff the (penalized) candidate/composition latency ratio stays below ``theta_t``."""
    return int(sm_ratio(candidate, c, alpha_penalty, literal) < theta_t)


def cosine_similarity(a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.size != b.size:
        n = min(a.size, b.size)
        a, b = a[:n], b[:n]
    denom = math.sqrt(float(a @ a) * float(b @ b))
    if denom == 0:
        return 0.0
    return float(a @ b) / denom


def hqu_similarity(candidate: MLaaSService, c) -> float:
    return cosine_similarity(candidate.history_array, _profile(c).mean_history)


def hqu(candidate: MLaaSService, c, theta_q: float = 0.8) -> int:
    return int(hqu_similarity(candidate, c) >= theta_q - TIE_ATOL)


def sru(candidate: MLaaSService, theta_r: float = 0.8) -> int:
    """1 iff mean task reliability reaches ``theta_r`` (inclusive)."""
    return int(candidate.mean_task_reliability >= theta_r - TIE_ATOL)


def check_lambda(lam) -> tuple[float, ...]:
    if lam is None:
        return UNIFORM_LAMBDA
    lam = tuple(float(x) for x in lam)
    if len(lam) != 5 or any(x < 0 or not math.isfinite(x) for x in lam):
        raise ConfigError(f"lambda must be five nonnegative weights, got {lam}")
    if abs(math.fsum(lam) - 1.0) > 1e-9:
        raise ConfigError(f"lambda must sum to 1, got {math.fsum(lam)}")
    return lam


def evaluate_rules(candidate: MLaaSService, c, thresholds: RuleThresholds = RuleThresholds()) -> tuple[RuleVector, float]:
    """Rule vector plus the raw MUM divergence."""
    prof = _profile(c)
    th = thresholds
    divergence = mum(candidate, prof)
    rules = RuleVector(
        dum=dum(candidate, prof, th.theta_d),
        mum=mum_rule(divergence, th.theta_s),
        sm=sm(candidate, prof, th.alpha_penalty, th.theta_t, th.sm_literal),
        hqu=hqu(candidate, prof, th.theta_q),
        sru=sru(candidate, th.theta_r),
    )
    return rules, divergence


def weighted_rule_sum(rules: RuleVector, lam: Sequence[float]) -> float:
    return math.fsum(l * r for l, r in zip(lam, rules.as_tuple()))


def confidence_score(
    candidate: MLaaSService,
    c,
    thresholds: RuleThresholds = RuleThresholds(),
    lam: Sequence[float] | None = None,
) -> ConfidenceScore:
    """Lambda-weighted sum of the five rules; 1.0 means full alignment.

    ``c`` may be a Composition or a prebuilt CompositionProfile.
    """
    lam = check_lambda(lam)
    rules, _ = evaluate_rules(candidate, c, thresholds)
    return ConfidenceScore(weighted_rule_sum(rules, lam), rules, lam)


def candidate_rows(
    candidate_ids: Sequence[str],
    catalog: Mapping[str, MLaaSService] | Sequence[MLaaSService],
    c: Composition,
    thresholds: RuleThresholds = RuleThresholds(),
    lam: Sequence[float] | None = None,
) -> list[dict]:
    """Per-candidate rule breakdown: candidate_id, dum, mum_raw, mum, sm, hqu, sru, cs."""
    lam = check_lambda(lam)
    index = _index(catalog)
    prof = CompositionProfile(c)
    rows = []
    for cid in candidate_ids:
        rules, divergence = evaluate_rules(index[cid], prof, thresholds)
        rows.append({
            "candidate_id": cid,
            "dum": rules.dum,
            "mum_raw": divergence,
            "mum": rules.mum,
            "sm": rules.sm,
            "hqu": rules.hqu,
            "sru": rules.sru,
            "cs": weighted_rule_sum(rules, lam),
        })
    return rows


def apply_replacement(c: Composition, out_id: str, candidate: MLaaSService) -> Composition:
    """Swap ``out_id`` for ``candidate`` in place; weights recomputed, round advanced."""
    if out_id not in c:
        raise MembershipError(f"{out_id!r} is not a member")
    if candidate.id in c:
        raise MembershipError(f"{candidate.id!r} is already a member")
    members = [candidate if m.id == out_id else m for m in c.members]
    return Composition.of(members, c.round + 1)


def _index(catalog) -> Mapping[str, MLaaSService]:
    if isinstance(catalog, Mapping):
        return catalog
    return {s.id: s for s in catalog}


def qos_only_select(candidates, catalog) -> str | None:
    """Candidate with the highest QoS score; ties go to the lowest id."""
    index = _index(catalog)
    best = None
    for cid in sorted(candidates):
        score = qos_score(index[cid].qos)
        if best is None or score > best[0]:
            best = (score, cid)
    return None if best is None else best[1]


def rule_based_select(
    candidates, catalog, composition: Composition, thresholds: RuleThresholds = RuleThresholds()
) -> str | None:
    """First candidate in id order passing DUM and MUM, ignoring QoS."""
    index = _index(catalog)
    prof = CompositionProfile(composition)
    for cid in sorted(candidates):
        s = index[cid]
        if dum(s, prof, thresholds.theta_d) and mum_rule(mum(s, prof), thresholds.theta_s):
            return cid
    return None
