import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from wavesmooth.speed_field import SpeedField, WaveScenario, synthesize_field


@pytest.fixture
def constant_field():
    return SpeedField(
        t0=0.0, dt_grid=1.0, x0=0.0, dx_grid=10.0, values=np.full((40, 80), 20.0)
    )


@pytest.fixture
def wave_field():
    scenario = WaveScenario(
        base_speed=25.0,
        wave_count=2,
        wave_amplitude=18.0,
        wave_width_t=250.0,
        wave_width_x=150.0,
        wave_propagation_speed=-4.5,
        seed=3,
    )
    return synthesize_field(scenario, duration=1800.0, length=4000.0)


def random_monotone_positions(rng, n_samples, start=None, max_step=8.0, zero_frac=0.3):
    """Non-decreasing positions with stop-and-go texture."""
    steps = rng.uniform(0.0, max_step, n_samples - 1)
    steps[rng.random(n_samples - 1) < zero_frac] = 0.0
    x0 = rng.uniform(0.0, 50.0) if start is None else start
    return x0 + np.concatenate([[0.0], np.cumsum(steps)])
