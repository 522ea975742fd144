from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))  # for the oracles module

from neolus.phantom import PhantomSpec, generate_dataset


@pytest.fixture(scope="session")
def mini_phantom(tmp_path_factory):
    """Small rendered phantom shared by the unit tests (12 patients, 1 video/session)."""
    out = tmp_path_factory.mktemp("mini_phantom")
    spec = PhantomSpec(
        n_patients=12,
        sessions_per_patient=(1, 2),
        videos_per_session=1,
        frames_per_video=6,
        seed=5,
    )
    return generate_dataset(spec, out), out


def pytest_runtest_logreport(report):
    # one visible pass/fail line per acceptance criterion
    if report.when != "call" or "test_acceptance.py" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    outcome = "PASS" if report.passed else "FAIL"
    print(f"\n[acceptance] {name}: {outcome}", flush=True)
