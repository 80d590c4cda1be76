"""Synthetic MLaaS catalogs, compositions, drift injection and the composition-QoS oracle."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from functools import cached_property
from enum import Enum
from itertools import combinations
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, MembershipError

SQRT2 = math.sqrt(2.0)
DEFAULT_GAMMA = 0.25


class Modality(str, Enum):
    SENSOR = "sensor"
    VISION = "vision"
    AUDIO = "audio"

    @property
    def code(self) -> int:
        return _MODALITY_CODES[self]


_MODALITY_CODES = {Modality.SENSOR: 0, Modality.VISION: 1, Modality.AUDIO: 2}
# typical input width per modality (flattened HAR window, 28x28 image, MFCC frame)
_BASE_FEATURES = {Modality.SENSOR: 52, Modality.VISION: 784, Modality.AUDIO: 128}


@dataclass(frozen=True)
class QosVector:
    effectiveness: float
    quality: float
    latency: float  # ms
    reliability: float

    def __post_init__(self):
        for name in ("effectiveness", "quality", "reliability"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")
        if not self.latency > 0:
            raise ValueError(f"latency must be positive, got {self.latency}")


@dataclass(frozen=True)
class DataSpec:
    volume: int
    modality: Modality
    feature_count: int
    label_histogram: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "modality", Modality(self.modality))
        object.__setattr__(self, "label_histogram", tuple(int(h) for h in self.label_histogram))
        if self.volume < 1 or self.feature_count < 1:
            raise ValueError("volume and feature_count must be >= 1")
        if any(h < 0 for h in self.label_histogram):
            raise ValueError("label counts must be nonnegative")
        if sum(self.label_histogram) != self.volume:
            raise ValueError(
                f"histogram sums to {sum(self.label_histogram)}, volume is {self.volume}"
            )

    @cached_property
    def proportions(self) -> np.ndarray:
        h = np.asarray(self.label_histogram, dtype=float)
        return h / h.sum()


@dataclass(frozen=True, eq=False)
class MLaaSService:
    id: str
    weights: np.ndarray
    data: DataSpec
    qos: QosVector
    history: tuple[float, ...]
    task_reliability: tuple[float, ...]

    def __post_init__(self):
        w = np.array(self.weights, dtype=float)
        w.flags.writeable = False
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "history", tuple(float(x) for x in self.history))
        object.__setattr__(
            self, "task_reliability", tuple(float(x) for x in self.task_reliability)
        )
        if w.ndim != 1 or w.size == 0:
            raise ValueError("weights must be a nonempty vector")
        if not self.history or not self.task_reliability:
            raise ValueError("history and task_reliability must be nonempty")

    @cached_property
    def history_array(self) -> np.ndarray:
        return np.asarray(self.history, dtype=float)

    @cached_property
    def mean_task_reliability(self) -> float:
        return float(np.mean(self.task_reliability))

    def __repr__(self):
        return f"MLaaSService(id={self.id!r}, modality={self.data.modality.value}, qos={self.qos})"


def aggregate_weights(members: Sequence[MLaaSService]) -> np.ndarray:
    """Volume-weighted mean of member weight vectors (FedAvg)."""
    vols = np.array([m.data.volume for m in members], dtype=float)
    stacked = np.stack([m.weights for m in members])
    return (vols[:, None] * stacked).sum(axis=0) / vols.sum()


@dataclass(frozen=True, eq=False)
class Composition:
    members: tuple[MLaaSService, ...]
    aggregated_weights: np.ndarray
    round: int = 0

    def __post_init__(self):
        if not self.members:
            raise ValueError("composition needs at least one member")
        ids = [m.id for m in self.members]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate member ids in {ids}")
        if len({m.weights.size for m in self.members}) != 1:
            raise ValueError("members disagree on weight dimension")
        if self.round < 0:
            raise ValueError("round must be >= 0")

    @classmethod
    def of(cls, members: Iterable[MLaaSService], round: int = 0) -> Composition:
        members = tuple(members)
        if not members:
            raise ValueError("composition needs at least one member")
        return cls(members, aggregate_weights(members), round)

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(m.id for m in self.members)

    def __len__(self):
        return len(self.members)

    def __contains__(self, service_id) -> bool:
        return service_id in self.ids

    def member(self, service_id: str) -> MLaaSService:
        for m in self.members:
            if m.id == service_id:
                return m
        raise MembershipError(f"{service_id!r} is not a member")

    def without(self, service_ids: Iterable[str]) -> Composition:
        drop = set(service_ids)
        return Composition.of([m for m in self.members if m.id not in drop], self.round)

    def refreshed(self, catalog: Sequence[MLaaSService]) -> Composition:
        """Re-read members from ``catalog`` (after drift), keeping order and round."""
        index = {s.id: s for s in catalog}
        return Composition.of([index[i] for i in self.ids], self.round)


class DriftKind(str, Enum):
    CONCEPT = "concept"
    DATA = "data"


@dataclass(frozen=True)
class DriftSpec:
    kind: DriftKind
    target_ids: frozenset[str]
    at_round: int
    magnitude: float

    def __post_init__(self):
        object.__setattr__(self, "kind", DriftKind(self.kind))
        object.__setattr__(self, "target_ids", frozenset(self.target_ids))
        if self.at_round < 1:
            raise ConfigError("drift at_round must be >= 1")
        if not self.target_ids:
            raise ConfigError("drift needs at least one target id")
        if not 0.0 < self.magnitude <= 1.0:
            raise ConfigError(f"drift magnitude {self.magnitude} outside (0, 1]")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "target_ids": sorted(self.target_ids),
            "at_round": self.at_round,
            "magnitude": self.magnitude,
        }


@dataclass(frozen=True)
class CatalogConfig:
    n_services: int = 20
    n_classes: int = 10
    weight_dim: int = 32
    iid: bool = True
    seed: int = 0
    modality_weights: tuple[float, float, float] = (0.6, 0.2, 0.2)
    history_len: int = 10
    n_tasks: int = 8
    effectiveness_range: tuple[float, float] = (0.65, 0.99)
    latency_range: tuple[float, float] = (5.0, 100.0)
    volume_range: tuple[int, int] = (1000, 5000)
    path: str | None = None  # load from JSONL instead of generating

    def validate(self):
        if self.n_services < 1:
            raise ConfigError("n_services must be >= 1")
        if self.n_classes < 2:
            raise ConfigError("n_classes must be >= 2")
        if self.weight_dim < 1:
            raise ConfigError("weight_dim must be >= 1")
        if self.history_len < 1 or self.n_tasks < 1:
            raise ConfigError("history_len and n_tasks must be >= 1")
        if len(self.modality_weights) != 3 or min(self.modality_weights) < 0 or sum(self.modality_weights) <= 0:
            raise ConfigError("modality_weights must be three nonnegative numbers")


IID_PERTURBATION = 0.04  # relative; largest-remainder rounding adds < 0.01 more


def _counts_from_proportions(p: np.ndarray, volume: int) -> tuple[int, ...]:
    raw = p * volume
    counts = np.floor(raw).astype(int)
    short = volume - counts.sum()
    order = np.argsort(-(raw - counts), kind="stable")
    counts[order[:short]] += 1
    return tuple(int(c) for c in counts)


def _iid_proportions(rng: np.random.Generator, c: int) -> np.ndarray:
    u = rng.uniform(-1.0, 1.0, c)
    u -= u.mean()
    peak = np.abs(u).max()
    if peak > 0:
        u *= IID_PERTURBATION * rng.uniform(0.0, 1.0) / peak
    return (1.0 + u) / c


def _non_iid_proportions(rng: np.random.Generator, c: int) -> np.ndarray:
    pair = rng.choice(c, size=2, replace=False)
    mass = 1.0 if c == 2 else rng.uniform(0.65, 0.9)
    split = rng.uniform(0.3, 0.7)
    p = np.zeros(c)
    if c > 2:
        rest = [k for k in range(c) if k not in pair]
        p[rest] = rng.dirichlet(np.ones(c - 2)) * (1.0 - mass)
    p[pair[0]] = mass * split
    p[pair[1]] = mass * (1.0 - split)
    return p


def _service_id(i: int, n: int) -> str:
    return f"svc-{i:0{max(4, len(str(n - 1)))}d}"


def generate_catalog(config: CatalogConfig, seed: int | None = None) -> list[MLaaSService]:
    """Draw ``config.n_services`` services from a seeded generator.

    The result is a pure function of ``(config, seed)``; ``seed`` defaults to
    ``config.seed``.
    """
    config.validate()
    rng = np.random.default_rng(config.seed if seed is None else seed)
    c, n = config.n_classes, config.n_services
    center = rng.uniform(0.5, 1.5, config.weight_dim)
    mod_p = np.asarray(config.modality_weights, dtype=float)
    mod_p = mod_p / mod_p.sum()
    modalities = list(Modality)

    services = []
    for i in range(n):
        modality = modalities[int(rng.choice(3, p=mod_p))]
        lo, hi = config.volume_range
        volume = max(int(rng.integers(lo, hi + 1)), 100 * c)
        p = _iid_proportions(rng, c) if config.iid else _non_iid_proportions(rng, c)
        features = max(1, int(round(_BASE_FEATURES[modality] * rng.uniform(0.85, 1.15))))

        spread = rng.uniform(0.01, 0.3)
        weights = center * (1.0 + spread * rng.standard_normal(config.weight_dim))

        ef = rng.uniform(*config.effectiveness_range)
        quality = rng.uniform(0.6, 0.99)
        latency = rng.uniform(*config.latency_range)
        reliability = rng.uniform(0.6, 1.0)
        history = np.clip(quality + rng.normal(0.0, 0.05, config.history_len), 0.0, 1.0)
        task_rel = np.clip(reliability + rng.normal(0.0, 0.05, config.n_tasks), 0.0, 1.0)

        services.append(
            MLaaSService(
                id=_service_id(i, n),
                weights=weights,
                data=DataSpec(volume, modality, features, _counts_from_proportions(p, volume)),
                qos=QosVector(float(ef), float(quality), float(latency), float(reliability)),
                history=tuple(history),
                task_reliability=tuple(task_rel),
            )
        )
    return services


def make_composition(
    catalog: Sequence[MLaaSService], size: int, seed: int, modality: Modality | str | None = None
) -> Composition:
    """Pick ``size`` members of one modality (the most common by default)."""
    if size < 1:
        raise ConfigError("composition size must be >= 1")
    if modality is None:
        counts = {m: sum(s.data.modality is m for s in catalog) for m in Modality}
        modality = max(Modality, key=lambda m: (counts[m], -m.code))
    modality = Modality(modality)
    pool = sorted((s for s in catalog if s.data.modality is modality), key=lambda s: s.id)
    if len(pool) < size:
        raise ConfigError(
            f"only {len(pool)} {modality.value} services available for a composition of {size}"
        )
    rng = np.random.default_rng(seed)
    picked = sorted(rng.choice(len(pool), size=size, replace=False))
    return Composition.of([pool[i] for i in picked])


def apply_drift(
    catalog: Sequence[MLaaSService], spec: DriftSpec, round: int, seed: int = 0
) -> list[MLaaSService]:
    """Inject ``spec`` into the targeted services if ``round`` is its drift round."""
    if round < 1:
        raise ValueError("round must be >= 1")
    ids = {s.id for s in catalog}
    missing = sorted(spec.target_ids - ids)
    if missing:
        raise KeyError(f"unknown drift targets: {missing}")
    if round != spec.at_round:
        return list(catalog)

    rng = np.random.default_rng([seed, round])
    out = []
    for s in sorted(catalog, key=lambda s: s.id):
        if s.id not in spec.target_ids:
            out.append(s)
        elif spec.kind is DriftKind.CONCEPT:
            noise = rng.standard_normal(s.weights.size)
            out.append(
                replace(
                    s,
                    weights=s.weights * (1.0 + spec.magnitude * noise),
                    qos=replace(s.qos, effectiveness=s.qos.effectiveness * (1.0 - spec.magnitude)),
                )
            )
        else:
            c = len(s.data.label_histogram)
            # tolerance keeps 0.3*10 -> 3.0000000000000004 from shifting 4
            shift = math.ceil(spec.magnitude * c - 1e-9)
            hist = tuple(np.roll(s.data.label_histogram, shift).tolist())
            out.append(replace(s, data=replace(s.data, label_histogram=hist)))
    order = {s.id: k for k, s in enumerate(catalog)}
    out.sort(key=lambda s: order[s.id])
    return out


def histogram_heterogeneity(members: Sequence[MLaaSService]) -> float:
    """Mean pairwise Euclidean distance of normalized histograms, scaled to [0, 1]."""
    if len(members) < 2:
        return 0.0
    props = [m.data.proportions for m in members]
    dists = [np.linalg.norm(a - b) for a, b in combinations(props, 2)]
    return float(min(1.0, np.mean(dists) / SQRT2))


def composition_qos(
    composition: Composition | Sequence[MLaaSService], gamma: float = DEFAULT_GAMMA
) -> QosVector:
    """Closed-form QoS of a composition.

    Effectiveness is the volume-weighted member effectiveness discounted by
    ``gamma`` times the label heterogeneity; latency is the slowest member;
    quality and reliability are member means.
    """
    members = composition.members if isinstance(composition, Composition) else tuple(composition)
    if not members:
        raise ValueError("empty composition has no QoS")
    vols = np.array([m.data.volume for m in members], dtype=float)
    ef = np.array([m.qos.effectiveness for m in members])
    base = float(vols @ ef / vols.sum())
    penalty = 1.0 - gamma * histogram_heterogeneity(members)
    return QosVector(
        effectiveness=min(1.0, max(0.0, base * penalty)),
        quality=float(np.mean([m.qos.quality for m in members])),
        latency=max(m.qos.latency for m in members),
        reliability=float(np.mean([m.qos.reliability for m in members])),
    )


# --- JSONL serialization -------------------------------------------------

def service_to_dict(s: MLaaSService) -> dict:
    return {
        "id": s.id,
        "weights": [float(w) for w in s.weights],
        "volume": s.data.volume,
        "modality": s.data.modality.value,
        "feature_count": s.data.feature_count,
        "histogram": list(s.data.label_histogram),
        "effectiveness": s.qos.effectiveness,
        "quality": s.qos.quality,
        "latency_ms": s.qos.latency,
        "reliability": s.qos.reliability,
        "history": list(s.history),
        "task_reliability": list(s.task_reliability),
    }


def service_from_dict(d: dict) -> MLaaSService:
    return MLaaSService(
        id=str(d["id"]),
        weights=np.asarray(d["weights"], dtype=float),
        data=DataSpec(
            volume=int(d["volume"]),
            modality=Modality(d["modality"]),
            feature_count=int(d["feature_count"]),
            label_histogram=tuple(d["histogram"]),
        ),
        qos=QosVector(
            float(d["effectiveness"]),
            float(d["quality"]),
            float(d["latency_ms"]),
            float(d["reliability"]),
        ),
        history=tuple(d["history"]),
        task_reliability=tuple(d["task_reliability"]),
    )


def dumps_catalog(catalog: Iterable[MLaaSService]) -> str:
    return "".join(json.dumps(service_to_dict(s)) + "\n" for s in catalog)


def save_catalog(catalog: Iterable[MLaaSService], path: str | Path) -> None:
    Path(path).write_text(dumps_catalog(catalog))


def load_catalog(path: str | Path) -> list[MLaaSService]:
    services = []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                services.append(service_from_dict(json.loads(line)))
    ids = [s.id for s in services]
    if len(set(ids)) != len(ids):
        raise ConfigError(f"duplicate ids in catalog {path}")
    return services
