import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from considerkf import builtin_fixture, random_stable  # noqa: E402


@pytest.fixture
def scalar1():
    return builtin_fixture("SCALAR-1")


@pytest.fixture
def scalar2():
    return builtin_fixture("SCALAR-2")


@pytest.fixture
def kf_reduction():
    return builtin_fixture("KF-REDUCTION")


@pytest.fixture
def rs423():
    return random_stable(42, 4, 2, 3)


def random_spd(rng, n, floor=0.1):
    a = rng.standard_normal((n, n))
    return a @ a.T + floor * np.eye(n)
