"""Long statistical sweeps; run with ``pytest -m slow``."""

import numpy as np
import pytest

from heraldimg._rng import derive_rng
from heraldimg.camera import CameraConfig
from heraldimg.counting import simulate_calibration
from heraldimg.modes import default_waist
from heraldimg.state import SeparableState
from heraldimg.witness import run_experiment

N_RUNS = 10_000


@pytest.mark.slow
def test_separable_false_positive_rate():
    """False 'entangled' verdicts (W > 1 + 3 sigma) stay below 1% over random
    separable states spread across l = 1, 2, 5."""
    cam = CameraConfig(nx=256, ny=256)
    bg, cal = simulate_calibration(cam, seed=77, n_max=200, n_mc=5000)
    ls = (1, 2, 5)
    false = 0
    for k in range(N_RUNS):
        l = ls[k % 3]
        s = SeparableState.random(derive_rng(78, "sweep", k), l, default_waist(256, l))
        rep = run_experiment(s, cam, 5800, seed=k, calibration=cal, background=bg, n_mc=300)
        false += rep.W > 1 + 3 * rep.sigma_W
    rate = false / N_RUNS
    print(f"separable sweep: {false} of {N_RUNS} runs above 1 + 3 sigma ({rate:.3%})")
    assert rate < 0.01
