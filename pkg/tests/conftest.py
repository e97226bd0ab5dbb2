import pytest

from fraqdim import config
from fraqdim.ifs import RecurrentIFS, Similarity

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def similarity_system(ratios, offsets, P, box=((0.0,), (1.0,)), open_sets=None):
    maps = [Similarity.make(r, [o]) for r, o in zip(ratios, offsets)]
    return RecurrentIFS.build(maps, P, box=box, open_sets=open_sets)


HALF = [[0.5, 0.5], [0.5, 0.5]]


@pytest.fixture(scope="session")
def cantor():
    return config.load("cantor.json").build_system()


@pytest.fixture(scope="session")
def uniform():
    return config.load("uniform.json").build_system()


@pytest.fixture(scope="session")
def twostate():
    return config.load("twostate.json").build_system()


@pytest.fixture(scope="session")
def affine2d():
    return config.load("affine2d.json").build_system()


@pytest.fixture(scope="session")
def mixed():
    """s = (1/4, 1/3) with all transitions 1/2."""
    return similarity_system([0.25, 1 / 3], [0.0, 2 / 3], HALF)


@pytest.fixture(scope="session")
def overlapping():
    return similarity_system([0.5, 0.5], [0.0, 0.25], HALF, open_sets=[((0.0,), (1.0,))] * 2)


@pytest.fixture(scope="session")
def bundled():
    return {name: config.load(f"{name}.json").build_system() for name in config.BUNDLED}
