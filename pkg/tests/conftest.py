import numpy as np
import pytest

from mlaas_compose.catalog import Composition, DataSpec, MLaaSService, QosVector


def svc(
    sid,
    *,
    weights=(1.0, 1.0),
    hist=(50, 50),
    modality="sensor",
    features=52,
    ef=0.9,
    q=0.8,
    lat=10.0,
    rel=0.9,
    history=(0.8, 0.8, 0.8),
    task_rel=(0.9, 0.9),
):
    """Handcrafted service; volume is the histogram total."""
    return MLaaSService(
        id=sid,
        weights=np.asarray(weights, dtype=float),
        data=DataSpec(int(sum(hist)), modality, features, tuple(hist)),
        qos=QosVector(ef, q, lat, rel),
        history=tuple(history),
        task_reliability=tuple(task_rel),
    )


def comp(*members, round=0):
    return Composition.of(members, round)


@pytest.fixture
def make_svc():
    return svc
