import numpy as np
import pytest
from hypothesis import settings

from airtkit.heatsim import DefectSpec, ExcitationSpec, SlabSpec, simulate

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


def small_spec(mode="flash_front", noise=0.0, nonuniformity=0.0, defects=True, seed=1, **kw):
    base = dict(nx=24, ny=24, nz=6, dx=75e-3 / 64, dy=75e-3 / 64, dz=4e-4, duration_s=12.0, frame_rate_hz=5.0)
    base.update(kw)
    ds = [DefectSpec((8, 8, 1, 16, 16, 3), 0.1)] if defects else []
    ex = ExcitationSpec(mode=mode, noise_std=noise, nonuniformity=nonuniformity)
    return SlabSpec(defects=ds, excitation=ex, seed=seed, **base)


@pytest.fixture(scope="session")
def small_case():
    return simulate(small_spec(noise=0.02, nonuniformity=0.1))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance verdicts, printed in the terminal summary: (id, passed, detail)
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for cid, ok, detail in sorted(ACCEPTANCE, key=lambda r: r[0]):
        terminalreporter.write_line(f"criterion {cid:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
