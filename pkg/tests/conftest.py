import itertools

import numpy as np
import pytest

from nljdetect.array_model import AngleGrid, ScenarioConfig, build_dictionary, draw_scenario

NOMINAL = ((-10.0, 10.0), (-4.0, 10.0), (8.0, 10.0))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def grid1():
    return AngleGrid.from_range(-22, 22, 1)


@pytest.fixture(scope="session")
def grid2():
    return AngleGrid.from_range(-22, 22, 2)


@pytest.fixture(scope="session")
def scenario2(grid2):
    return ScenarioConfig(grid2, NOMINAL)


@pytest.fixture(scope="session")
def dict2(scenario2):
    return scenario2.dictionary()


@pytest.fixture(scope="session")
def snap2(scenario2):
    return draw_scenario(scenario2, 7)


def random_small_problem(rng, n, l=None, k=None):
    """Small dictionary, random positive d and a sample covariance drawn from it."""
    l = l or 2 * n + 1
    k = k or 2 * n
    grid = AngleGrid(np.linspace(-40, 40, l), 80.0 / (l - 1))
    dictionary = build_dictionary(grid, n)
    d = rng.uniform(0.0, 5.0, l) * (rng.uniform(size=l) < 0.5)
    sigma2 = rng.uniform(1.0, 3.0)
    V = dictionary.matrix
    M = sigma2 * np.eye(n) + (V * d) @ V.conj().T
    C = np.linalg.cholesky(M)
    w = (rng.standard_normal((n, k)) + 1j * rng.standard_normal((n, k))) / np.sqrt(2)
    Z = C @ w
    return dictionary, d, sigma2, Z @ Z.conj().T, k


def hausdorff_oracle(x, y):
    """Exhaustive double loop over both sets."""
    forward = max(min(abs(a - b) for b in y) for a in x)
    backward = max(min(abs(a - b) for a in x) for b in y)
    return max(forward, backward)


def greedy_match_oracle(truth, det, tol):
    """Closest-pair-first matching over all pairs, reference for the missed/ghost counts."""
    pairs = sorted((abs(t - a), i, j) for (i, t), (j, a) in itertools.product(enumerate(truth), enumerate(det))
                   if abs(t - a) <= tol)
    ut, ua, m = set(), set(), 0
    for _, i, j in pairs:
        if i not in ut and j not in ua:
            ut.add(i)
            ua.add(j)
            m += 1
    return len(truth) - m, len(det) - m
