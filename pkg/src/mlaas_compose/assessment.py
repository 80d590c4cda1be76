"""Per-member contribution scoring for a composition, plus LOO/Shapley/NCS baselines."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .catalog import DEFAULT_GAMMA, Composition, MLaaSService, QosVector, composition_qos
from .errors import ConfigError, DegenerateInputError, SizeLimitError

T_MAX_MS = 100.0
DIST_EPS = 1e-9
# marginals smaller than this are float noise from re-summing identical members
MARGINAL_ATOL = 1e-12
SHAPLEY_MAX_MEMBERS = 12


def qos_score(q: QosVector, t_max: float = T_MAX_MS) -> float:
    """Mean of effectiveness, quality, reliability and latency benefit."""
    latency_benefit = 1.0 - min(q.latency, t_max) / t_max
    return (q.effectiveness + q.quality + q.reliability + latency_benefit) / 4.0


class UtilityOracle:
    """Counts utility evaluations u(S) = qos_score(composition_qos(S)).

    ``u(empty) = 0`` is still counted as one evaluation.
    """

    def __init__(self, gamma: float = DEFAULT_GAMMA, t_max: float = T_MAX_MS):
        self.gamma = gamma
        self.t_max = t_max
        self.evaluations = 0

    def __call__(self, members: Sequence[MLaaSService]) -> float:
        self.evaluations += 1
        if not members:
            return 0.0
        return qos_score(composition_qos(members, self.gamma), self.t_max)


def _marginals(c: Composition, oracle: UtilityOracle) -> dict[str, float]:
    full = oracle(c.members)
    return {
        m.id: full - oracle([o for o in c.members if o.id != m.id]) for m in c.members
    }


def _require_pair(c: Composition):
    if len(c) < 2:
        raise ValueError("contribution scoring needs at least two members")


def normalize_marginals(marginals: dict[str, float]) -> dict[str, float]:
    """Clamp negatives to zero and rescale to percentages; all-zero gives uniform."""
    clamped = {k: (v if v > MARGINAL_ATOL else 0.0) for k, v in marginals.items()}
    total = math.fsum(clamped.values())
    if total == 0.0:
        return {k: 100.0 / len(clamped) for k in clamped}
    return {k: 100.0 * v / total for k, v in clamped.items()}


def qos_contribution(c: Composition, oracle: UtilityOracle | None = None) -> dict[str, float]:
    """Leave-one-out QoS-score drop per member, clamped and normalized to 100."""
    _require_pair(c)
    return normalize_marginals(_marginals(c, oracle or UtilityOracle()))


def _update_distance(update: np.ndarray, member: np.ndarray, aggregate: np.ndarray, metric: str) -> float:
    if metric == "euclidean":
        return float(np.linalg.norm(update))
    if metric == "angular":
        # angle between the member model and the aggregate, in [0, 1]
        na, nb = np.linalg.norm(member), np.linalg.norm(aggregate)
        if na == 0 or nb == 0:
            return 0.0
        u, v = member / na, aggregate / nb
        # atan2 form stays accurate for nearly parallel vectors, unlike acos
        return 2.0 * math.atan2(np.linalg.norm(u - v), np.linalg.norm(u + v)) / math.pi
    raise ConfigError(f"unknown distance metric {metric!r}")


def relative_update_distances(c: Composition, metric: str = "euclidean") -> dict[str, float]:
    """Each member's share of the total distance between its update and the aggregate's."""
    agg = c.aggregated_weights
    raw = {
        m.id: _update_distance(m.weights - agg, m.weights, agg, metric) for m in c.members
    }
    total = math.fsum(raw.values())
    uniform = {k: 100.0 / len(raw) for k in raw}
    if total == 0.0:
        raise DegenerateInputError("every member coincides with the aggregate", fallback=uniform)
    return {k: v / total for k, v in raw.items()}


def functional_contribution(
    c: Composition, metric: str = "euclidean", literal: bool = False
) -> dict[str, float]:
    """Inverse relative update distance, normalized to 100.

    Members whose weights sit closer to the aggregate get a larger share.
    ``literal=True`` evaluates g(S)*S / sum g(S)*S as written, which is
    uniform for every input.
    """
    _require_pair(c)
    shares = relative_update_distances(c, metric)
    s = {k: max(v, DIST_EPS) for k, v in shares.items()}
    if literal:
        g = {k: (1.0 / v) * v for k, v in s.items()}
    else:
        g = {k: 1.0 / v for k, v in s.items()}
    total = math.fsum(g.values())
    return {k: 100.0 * v / total for k, v in g.items()}


@dataclass(frozen=True)
class ServiceScore:
    qos_contribution_pct: float
    functional_contribution_pct: float
    scs_pct: float


@dataclass
class ContributionReport:
    per_service: dict[str, ServiceScore]
    underperformers: list[str]
    utility_evaluations: int
    functional_fallback: bool = False

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["service_id", "qos_pct", "func_pct", "scs_pct", "underperformer"])
        flagged = set(self.underperformers)
        for sid, sc in self.per_service.items():
            w.writerow([
                sid,
                f"{sc.qos_contribution_pct:.9g}",
                f"{sc.functional_contribution_pct:.9g}",
                f"{sc.scs_pct:.9g}",
                int(sid in flagged),
            ])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "per_service": {
                k: {"qos_pct": v.qos_contribution_pct, "func_pct": v.functional_contribution_pct, "scs_pct": v.scs_pct}
                for k, v in self.per_service.items()
            },
            "underperformers": list(self.underperformers),
            "utility_evaluations": self.utility_evaluations,
            "functional_fallback": self.functional_fallback,
        }


def flag_underperformers(scs: dict[str, float], theta: float) -> list[str]:
    """Ids scoring strictly below ``theta``; a tie counts as performing."""
    return [k for k, v in scs.items() if v < theta]


def check_weighting(alpha: float, beta: float, theta: float):
    if alpha < 0 or beta < 0 or abs(alpha + beta - 1.0) > 1e-9:
        raise ConfigError(f"alpha={alpha}, beta={beta} must be nonnegative and sum to 1")
    if not 0.0 < theta < 100.0:
        raise ConfigError(f"theta={theta} must lie in (0, 100)")


def service_contribution_scores(
    c: Composition,
    alpha: float = 0.5,
    beta: float = 0.5,
    theta: float = 10.0,
    *,
    metric: str = "euclidean",
    literal: bool = False,
    gamma: float = DEFAULT_GAMMA,
    t_max: float = T_MAX_MS,
) -> ContributionReport:
    """Blend QoS and functional contributions and flag members below ``theta``."""
    check_weighting(alpha, beta, theta)
    _require_pair(c)
    oracle = UtilityOracle(gamma, t_max)
    qos = qos_contribution(c, oracle)
    fallback = False
    try:
        func = functional_contribution(c, metric, literal)
    except DegenerateInputError as exc:
        func, fallback = exc.fallback, True
    per = {
        m.id: ServiceScore(qos[m.id], func[m.id], alpha * qos[m.id] + beta * func[m.id])
        for m in c.members
    }
    under = flag_underperformers({k: v.scs_pct for k, v in per.items()}, theta)
    return ContributionReport(per, under, oracle.evaluations, fallback)


# --- baselines -----------------------------------------------------------

def loo_contribution(c: Composition, oracle: UtilityOracle | None = None) -> dict[str, float]:
    """Raw leave-one-out utility drop; negative when removal helps."""
    _require_pair(c)
    return _marginals(c, oracle or UtilityOracle())


def shapley_from_utilities(n: int, utility: Sequence[float]) -> np.ndarray:
    """Exact Shapley values given ``utility[mask]`` for every coalition bitmask."""
    fact = [math.factorial(k) for k in range(n + 1)]
    weight = [fact[s] * fact[n - s - 1] / fact[n] for s in range(n)]
    phi = np.zeros(n)
    for mask in range(1 << n):
        size = bin(mask).count("1")
        for i in range(n):
            bit = 1 << i
            if not mask & bit:
                phi[i] += weight[size] * (utility[mask | bit] - utility[mask])
    return phi


def shapley_contribution(c: Composition, oracle: UtilityOracle | None = None) -> dict[str, float]:
    """Exact Shapley value of each member by enumerating all 2^n coalitions."""
    n = len(c)
    if n > SHAPLEY_MAX_MEMBERS:
        raise SizeLimitError(f"exact Shapley limited to {SHAPLEY_MAX_MEMBERS} members, got {n}")
    oracle = oracle or UtilityOracle()
    members = c.members
    utility = [
        oracle([members[i] for i in range(n) if mask >> i & 1]) for mask in range(1 << n)
    ]
    phi = shapley_from_utilities(n, utility)
    return {m.id: float(phi[i]) for i, m in enumerate(members)}


def ncs_contribution(c: Composition) -> dict[str, float]:
    """Normalized update norm ||W_i - W_t|| / sum_j ||W_j - W_t||."""
    agg = c.aggregated_weights
    norms = {m.id: float(np.linalg.norm(m.weights - agg)) for m in c.members}
    total = math.fsum(norms.values())
    if total == 0.0:
        return {k: 1.0 / len(norms) for k in norms}
    return {k: v / total for k, v in norms.items()}
