import numpy as np
import pytest

from augface.assets import load_basis, load_shape_set
from augface.synthetic import make_identity, render_face


@pytest.fixture(scope="session")
def shapes():
    return load_shape_set()


@pytest.fixture(scope="session")
def basis():
    return load_basis()


@pytest.fixture(scope="session")
def identity():
    return make_identity(7)


@pytest.fixture(scope="session")
def frontal_face(identity, shapes):
    return render_face(identity, shapes[0], 0.0, size=(256, 256), rng=np.random.default_rng(1))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
