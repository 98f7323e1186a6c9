import numpy as np
import pytest

from facesketch.dataset import SyntheticStyle, gen_synthetic_pairs


@pytest.fixture(scope="session")
def corpus():
    """31 seeded 60x60 pairs; the last one is held out of training."""
    return gen_synthetic_pairs(31, 60, 60, SyntheticStyle(seed=0))


@pytest.fixture(scope="session")
def training(corpus):
    return corpus[:30]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_CRITERIA = pytest.StashKey[list]()


@pytest.fixture
def criterion(request):
    """Record one acceptance line; all lines are echoed in the terminal summary."""
    lines = request.config.stash.setdefault(_CRITERIA, [])

    def record(number, name, ok, detail):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number} {name}: {detail}"
        lines.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_CRITERIA, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[2])):
            terminalreporter.write_line(line)
