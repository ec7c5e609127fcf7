import re

import numpy as np
import pytest

from recloop.dataset import GroupMapping, RatingDataset
from recloop.factorization import Hyperparams
from recloop.synthetic import make_planted_problem

# fast settings for synthetic loops; the default lr=0.001 / 300 epochs is
# kept for the acceptance experiments and the ranking checks
FAST_HP = Hyperparams(learning_rate=0.01, latent_dim=10, l2_coeff=0.01, epochs=30)


@pytest.fixture(scope="session")
def planted():
    return make_planted_problem(seed=1)


@pytest.fixture(scope="session")
def small_planted():
    return make_planted_problem(n_users=40, n_items=120, n_groups=6, n_cold=2, obs_per_user=8, seed=5)


@pytest.fixture
def toy_mapping():
    # items 0..5 over groups 0..2
    return GroupMapping(3, (frozenset({0}), frozenset({0, 1}), frozenset({1}),
                            frozenset({2}), frozenset({0}), frozenset({1})))


@pytest.fixture
def toy_dataset():
    return RatingDataset(2, 6, np.array([0, 0, 1]), np.array([0, 1, 2]), np.array([5.0, 3.0, 4.0]))


_ACCEPTANCE_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE_KEY] = []


@pytest.fixture
def criterion(request):
    """``criterion(k, ok, detail)`` records one acceptance line and asserts ``ok``."""
    lines = request.config.stash[_ACCEPTANCE_KEY]

    def record(k, ok, detail):
        line = f"criterion {k}: {'PASS' if ok else 'FAIL'} - {detail}"
        lines.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: (int(re.match(r"criterion (\d+)", s).group(1)), s)):
            terminalreporter.write_line(line)
