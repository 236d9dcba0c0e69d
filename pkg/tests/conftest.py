import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from heraldimg.camera import CameraConfig  # noqa: E402
from heraldimg.counting import simulate_calibration  # noqa: E402
from heraldimg.modes import GridSpec  # noqa: E402


@pytest.fixture(scope="session")
def grid_small():
    """128^2 grid, half-width 4 waists."""
    return GridSpec(128, 128, extent=4.0)


@pytest.fixture(scope="session")
def grid_512():
    return GridSpec(512, 512, extent=5.0)


@pytest.fixture(scope="session")
def cam512():
    return CameraConfig(nx=512, ny=512)


@pytest.fixture(scope="session")
def calib512(cam512):
    """(background, calibration) for the 512^2 default-noise camera."""
    return simulate_calibration(cam512, seed=11, n_max=1000, n_mc=20000)


@pytest.fixture(scope="session")
def calib1024():
    """(background, calibration) for the default 1024^2 camera."""
    return simulate_calibration(CameraConfig(), seed=5, n_max=2000)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
