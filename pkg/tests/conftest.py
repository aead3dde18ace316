import os

import numpy as np
import pytest
from hypothesis import settings

from penn import defaults, sim

settings.register_profile("default", deadline=None, max_examples=60, derandomize=True)
settings.register_profile("thorough", deadline=None, max_examples=1000)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def wrist():
    return (defaults.wrist_muscles(), defaults.wrist_activation(), defaults.wrist_geometry(),
            defaults.wrist_joint())


@pytest.fixture(scope="session")
def small_dataset():
    """Four 3 s trials at a 100 Hz physics rate, generated with the default model."""
    mp, ap, g, jp = (defaults.wrist_muscles(), defaults.wrist_activation(),
                     defaults.wrist_geometry(), defaults.wrist_joint())
    cfg = sim.SimConfig(dt=0.001, duration=3.0, stride=10, seed=11)
    return [t.decimate(10) for t in sim.generate_synthetic_dataset(cfg, mp, ap, g, jp, 4)]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# -- acceptance reporting -----------------------------------------------------------

_ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance(request):
    """Print and record one PASS/FAIL line per acceptance criterion."""
    capman = request.config.pluginmanager.getplugin("capturemanager")

    def report(tag, ok, detail):
        line = f"[AC{tag}] {'PASS' if ok else 'FAIL'}  {detail}"
        _ACCEPTANCE_LINES.append(line)
        with capman.global_and_fixture_disabled():
            print("\n" + line, flush=True)
        return ok

    return report


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES, key=lambda s: int(s[3:s.index("]")])):
            terminalreporter.write_line(line)
