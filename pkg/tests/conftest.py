import numpy as np
import pytest

from l1chain.calibration import CalibrationSet
from l1chain.geom import OrbitElements, SensorGeometry
from l1chain.sim import (EffectsConfig, generate_scene, lab_coefficients, plan_extent,
                         simulate_acquisition)

NARROW = SensorGeometry(active_cols=256)
_CRITERIA = pytest.StashKey[list]()


def small_run(effects=None, bands=(7, 10), n_frames=30, seed=1, mode="LAC", sensor=NARROW,
              orbit=None, **scene_kw):
    """Simulated acquisition over a small scene: (scene, stack, truth, lab calibration)."""
    orbit = orbit or OrbitElements()
    scene_kw.setdefault("slope", -3.0)
    scene_kw.setdefault("smoothing_m", 240.0)
    scene_kw.setdefault("band_correlation", 1.0)
    extent = plan_extent(orbit, sensor, mode, n_frames)
    scene = generate_scene(seed, extent, bands, **scene_kw)
    stack, truth = simulate_acquisition(scene, orbit, sensor, mode, effects or EffectsConfig(),
                                        n_frames=n_frames, bands=bands, seed=seed)
    cal = CalibrationSet(version="lab", sensor=sensor, coeffs=lab_coefficients(bands, mode))
    return scene, stack, truth, cal


@pytest.fixture(scope="session")
def ideal_run():
    return small_run()


@pytest.fixture(scope="session")
def ideal_product(ideal_run):
    from l1chain.tdi import run_tdi
    scene, stack, truth, cal = ideal_run
    return run_tdi(stack, cal)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def criterion(request):
    """``report(number, title, ok, detail)``: record one acceptance line and return ``ok``."""
    lines = request.config.stash.setdefault(_CRITERIA, [])

    def report(number: int, title: str, ok: bool, detail: str) -> bool:
        line = f"C{number:<2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
        lines.append(line)
        print(line)
        return ok

    return report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_CRITERIA, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s[1:3])):
            terminalreporter.write_line(line)
