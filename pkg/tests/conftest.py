import numpy as np
import pytest
from hypothesis import settings

from railmag.synth import SynthSpec, gen_map
from railmag.track import TrackMap

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")


def straight_map(b, dx=1.0, lat0=46.0, lon0=7.0):
    b = np.asarray(b, dtype=float)
    n = b.shape[0]
    s = dx * np.arange(n)
    return TrackMap(s=s, lat=lat0 + 1e-5 * s / dx, lon=np.full(n, lon0), b=b)


@pytest.fixture(scope="session")
def map5k():
    return gen_map(SynthSpec(length=5000.0, dx=0.25, seed=5))


@pytest.fixture(scope="session")
def map66k():
    return gen_map(SynthSpec(length=66000.0, dx=0.25, seed=66))
