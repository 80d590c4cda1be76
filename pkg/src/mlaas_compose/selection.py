"""Two-stage candidate filtering against a set of underperforming members."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .catalog import Composition, MLaaSService
from .errors import AmbiguityError

FEATURE_BAND = 0.2


@dataclass(frozen=True)
class CandidateSet:
    candidates: tuple[str, ...]
    stage1_count: int
    means: dict[str, float]  # ef, q, dv of the underperformers

    def __len__(self):
        return len(self.candidates)

    def __iter__(self):
        return iter(self.candidates)

    def to_dict(self) -> dict:
        return {
            "candidates": list(self.candidates),
            "stage1_count": self.stage1_count,
            "means": dict(self.means),
        }


def functional_match(
    s: MLaaSService, modality, mean_features: float, weight_dim: int, band: float = FEATURE_BAND
) -> bool:
    return (
        s.data.modality is modality
        and abs(s.data.feature_count - mean_features) <= band * mean_features
        and s.weights.size == weight_dim
    )


def select_candidates(
    catalog: Sequence[MLaaSService],
    underperformers: Sequence[MLaaSService],
    composition: Composition,
    feature_band: float = FEATURE_BAND,
) -> CandidateSet:
    """Keep catalog services that functionally match the underperformers and beat their mean QoS.

    Stage 1: same modality, feature count within ``feature_band`` of the
    underperformers' mean, same weight dimension. Stage 2: effectiveness,
    quality and volume all strictly above the underperformers' means.
    Composition members are never returned; output is sorted by id.
    """
    if not underperformers:
        raise ValueError("need at least one underperformer")
    for u in underperformers:
        if u.id not in composition:
            raise ValueError(f"underperformer {u.id!r} is not a composition member")
    modalities = {u.data.modality for u in underperformers}
    if len(modalities) != 1:
        raise AmbiguityError(
            f"underperformers span modalities {sorted(m.value for m in modalities)}"
        )
    (modality,) = modalities
    mean_features = float(np.mean([u.data.feature_count for u in underperformers]))
    weight_dim = underperformers[0].weights.size

    excluded = set(composition.ids)
    stage1 = [
        s for s in catalog
        if s.id not in excluded and functional_match(s, modality, mean_features, weight_dim, feature_band)
    ]
    means = {
        "ef": float(np.mean([u.qos.effectiveness for u in underperformers])),
        "q": float(np.mean([u.qos.quality for u in underperformers])),
        "dv": float(np.mean([u.data.volume for u in underperformers])),
    }
    stage2 = [
        s.id for s in stage1
        if s.qos.effectiveness > means["ef"] and s.qos.quality > means["q"] and s.data.volume > means["dv"]
    ]
    return CandidateSet(tuple(sorted(stage2)), len(stage1), means)
