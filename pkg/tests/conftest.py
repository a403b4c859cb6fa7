import numpy as np
import pytest

from crossdiff.grid import Field, Mesh
from crossdiff.model import ModelSpec, PressureLaw, ReactionLaw, SaturatingLaw, PowerLaw, power_model


def skt(reaction=False):
    """Two-species SKT benchmark with unit coefficients."""
    if reaction:
        return power_model([1, 1], [[1, 1], [1, 1]], [1, 1], rho=[1, 1], c=np.eye(2), alpha=0.5)
    return power_model([1, 1], [[1, 1], [1, 1]], [1, 1])


def bumps(mesh):
    x = mesh.coordinates[:, 0]
    return Field(np.stack([0.5 + np.exp(-((x - 0.3) / 0.1) ** 2), 0.5 + np.exp(-((x - 0.7) / 0.1) ** 2)]), mesh)


def corpus():
    """Five models covering linear, mixed-exponent, four-species, scalar and saturating laws."""
    # symmetric couplings divided by weights: detailed balance with pi = (1, 2, 0.5, 1)
    S = np.array([[1.0, 2.0, 0.0, 1.0], [2.0, 1.0, 3.0, 0.0], [0.0, 3.0, 1.0, 0.5], [1.0, 0.0, 0.5, 1.0]])
    M4 = S / np.array([1.0, 2.0, 0.5, 1.0])[:, None]
    sat = ModelSpec(
        PressureLaw([1.0, 0.5], [[1.0, 2.0], [0.5, 1.0]], (SaturatingLaw(), PowerLaw(0.5))),
        ReactionLaw.zero(2),
    )
    return {
        "skt": skt(),
        "mixed": power_model([1, 1], [[0.5, 1], [2, 0.5]], [2, 0.5]),
        "four": power_model([1, 0.5, 2, 1], M4, [1, 0.5, 1, 0.75]),
        "scalar": power_model([1], [[1]], [1]),
        "saturating": sat,
    }


@pytest.fixture
def skt_model():
    return skt()


@pytest.fixture
def mesh128():
    return Mesh.interval(128)


ACCEPTANCE = {}


def record(number, title, passed, detail=""):
    """Store one acceptance verdict; printed in the terminal summary."""
    ACCEPTANCE[number] = (title, bool(passed), detail)
    return bool(passed)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        title, passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] {number:>2}. {title}: {detail}")
