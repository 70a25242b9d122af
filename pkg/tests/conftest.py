import numpy as np
import pytest

from mcflab.ambient import RoundSphere
from mcflab.flow import FlowConfig, run_flow
from mcflab.shapes import ellipsoid, geodesic_sphere_in_s3, icosphere


@pytest.fixture(scope="session")
def sphere_traj():
    """Unit icosphere (subdivision 4) flowed to extinction in R^3."""
    return run_flow(icosphere(4))


@pytest.fixture(scope="session")
def ellipsoid_traj():
    return run_flow(ellipsoid(4, (2.0, 1.0, 1.0)))


@pytest.fixture(scope="session")
def s3_big():
    """S^3 of radius 10 and a geodesic sphere of radius 1 flowing inside it."""
    return RoundSphere(4, 10.0)


@pytest.fixture(scope="session")
def s3_traj(s3_big):
    return run_flow(geodesic_sphere_in_s3(1.0, 3, rho=10.0), s3_big, FlowConfig())


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)



_CRITERIA: dict[int, str] = {}


@pytest.fixture
def criterion(request):
    """Record and print one acceptance line; returns the recorder."""

    def record(number: int, title: str, ok: bool, detail: str = "") -> bool:
        line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}" + (f"  [{detail}]" if detail else "")
        _CRITERIA[number] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[n])
