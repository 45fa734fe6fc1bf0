from __future__ import annotations

import math

import pytest

from waveplate.mesh import gen_lens, gen_rect_transmission
from waveplate.system import build_generator

MU = 0.3


@pytest.fixture(scope="session")
def rect8():
    return gen_rect_transmission(8)


@pytest.fixture(scope="session")
def rect4():
    return gen_rect_transmission(4)


@pytest.fixture(scope="session")
def lens16():
    return gen_lens(math.pi / 2, math.pi / 3, 16)


@pytest.fixture(scope="session")
def rect8_sys(rect8):
    return build_generator(rect8, MU)


@pytest.fixture(scope="session")
def rect4_sys(rect4):
    return build_generator(rect4, MU)


@pytest.fixture(scope="session")
def lens16_sys(lens16):
    return build_generator(lens16, MU)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
