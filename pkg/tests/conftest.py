import numpy as np
import pytest

from srlab.control import build_safety_metric, design_gains
from srlab.plant import QuadParams, hover_linearization, measurement_noise_std
from srlab.srsm import SimSystem


@pytest.fixture(scope="session")
def default_system():
    """Fully designed default vehicle, shared across the suite (two Riccati
    solves are worth doing only once)."""
    params = QuadParams()
    a, b, c = hover_linearization(params)
    gains = design_gains(a, b, c)
    metric = build_safety_metric(a - b @ gains.k)
    return SimSystem(
        params=params,
        a=a,
        b=b,
        c=c,
        gains=gains,
        metric=metric,
        noise_std=measurement_noise_std(0.005, 0.002),
    )


@pytest.fixture(scope="session")
def quiet_system(default_system):
    """Same design with measurement noise disabled."""
    d = default_system
    return SimSystem(
        params=d.params,
        a=d.a,
        b=d.b,
        c=d.c,
        gains=d.gains,
        metric=d.metric,
        noise_std=np.zeros(6),
    )
