import math

import numpy as np
import pytest

from nsalpha import BoxSpec, SpectralField
from nsalpha.spectral import leray_project


@pytest.fixture(scope="session")
def box16():
    return BoxSpec(n=16)


@pytest.fixture(scope="session")
def box8():
    return BoxSpec(n=8)


def random_modes(box, rng, count, solenoidal=True):
    """Field supported on ``count`` random canonical wavevectors."""
    K = box.cutoff
    modes = {}
    while len(modes) < count:
        k = tuple(int(x) for x in rng.integers(-K, K + 1, size=3))
        if k == (0, 0, 0) or k in modes or tuple(-x for x in k) in modes:
            continue
        modes[k] = rng.standard_normal(3) + 1j * rng.standard_normal(3)
    u = SpectralField.from_modes(box, modes)
    return leray_project(u) if solenoidal else u


def random_solenoidal(box, rng, amplitude=1.0):
    """Dense random divergence-free field over the full retained set."""
    u = rng.standard_normal((3,) + box.grid_shape)
    f = leray_project(SpectralField.from_physical(box, u))
    from nsalpha import norm_H

    return f * (amplitude / norm_H(f))


def pytest_configure(config):
    config._acceptance_lines = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
