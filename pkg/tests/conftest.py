import warnings

import numpy as np
import pytest
from hypothesis import settings

from ktree.completion import InvariantCompletion
from ktree.kernel import TowerCache
from ktree.systems import FiniteSystem, fixture_E1, fixture_E2, load_system, random_eigen_seed

settings.register_profile("ci", max_examples=60, deadline=None)
settings.load_profile("ci")

ABSORBING = {
    "type": "finite",
    "p": 2,
    "maps": [[0, 1], [1, 1]],
    "kernel": [[1, 0], [0, 0]],
}


@pytest.fixture
def e1():
    return fixture_E1(2)


@pytest.fixture
def e2():
    return fixture_E2()


@pytest.fixture
def absorbing():
    return load_system(ABSORBING)


@pytest.fixture
def seed42():
    """The random p=4, m=2, seed=42 eigen-seed system."""
    return random_eigen_seed(4, 2, 42)


def completion_of(system, **kw):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return InvariantCompletion(system, TowerCache(system), **kw)


@pytest.fixture
def e2_est(e2):
    return completion_of(e2)


@pytest.fixture
def absorbing_est(absorbing):
    return completion_of(absorbing)


def sweep_seeds(count, seed=0):
    """Full-cone eigen-seeds on random maps with p <= 6, m in {2, 3}."""
    rng = np.random.default_rng(seed)
    from ktree.systems import eigen_seed, random_maps

    out = []
    while len(out) < count:
        m = int(rng.choice([2, 3]))
        p = int(rng.integers(2, 7))
        es = eigen_seed(random_maps(p, m, rng))
        if es.converged:
            out.append(es)
    return out


UNEVEN = {
    "type": "finite",
    "p": 3,
    "maps": [[1, 2, 0], [0, 2, 1]],
    "kernel": [[0.5, 0, 0], [0, 1.5, 0], [0, 0, 1.5]],
}


@pytest.fixture
def uneven():
    """Diagonal seed whose level-1 increments are {1, 3}: Lambda_1 = 4/3."""
    return load_system(UNEVEN)


def diagonal_fixtures(count, seed=1, p_max=4):
    """Random subinvariant systems with positive diagonal seeds (finite Lambda)."""
    from ktree.kernel import is_psd

    rng = np.random.default_rng(seed)
    out = []
    while len(out) < count:
        p = int(rng.integers(2, p_max + 1))
        m = int(rng.choice([2, 3]))
        maps = rng.integers(0, p, (m, p))
        K = np.diag(rng.integers(1, 4, p).astype(float))
        fin = FiniteSystem(maps, K)
        if is_psd(fin.pullback(K) - K, 1e-12).ok:
            out.append(fin.system())
    return out


FACE1 = {
    "type": "finite",
    "p": 4,
    "maps": [[1, 1, 1, 3], [0, 1, 0, 1]],
    "kernel": [[0.5, 0, 0.5, 0], [0, 0, 0, 0], [0.5, 0, 0.5, 0], [0, 0, 0, 0]],
}


@pytest.fixture
def face1():
    """Face eigen-seed with rho = 1, so K_n = K for every n."""
    return load_system(FACE1)


def in_xfin_fixtures():
    """(system, estimator, points) for every shipped fixture with a completion."""
    out = []
    for sys, pts in [
        (fixture_E2(), (0.2, 0.5, 1.0)),
        (load_system(ABSORBING), (0, 1)),
        (load_system(FACE1), (0, 2, 3)),
    ]:
        out.append((sys, completion_of(sys), pts))
    return out


# ---------------------------------------------------------------- acceptance summary

ACCEPTANCE: dict = {}


@pytest.fixture
def criterion(request):
    """Record one pass/fail line for an acceptance criterion."""

    def record(number, title, ok, detail=""):
        ACCEPTANCE[number] = (title, bool(ok), detail)
        line = f"criterion {number} [{'PASS' if ok else 'FAIL'}] {title}" + (f" ({detail})" if detail else "")
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        title, ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {title}" + (f"  [{detail}]" if detail else ""))
