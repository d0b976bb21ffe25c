import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent))

from carnot_torus.group import abelian, heisenberg  # noqa: E402


@pytest.fixture(scope="session")
def h1():
    return heisenberg()


@pytest.fixture(scope="session")
def ab2():
    return abelian(2)


@pytest.fixture(scope="session")
def ab1():
    return abelian(1)
