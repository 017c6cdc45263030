import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from bfrontier.data import Dataset

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_dataset(seed, n=None, n_cells=None, ties=False) -> Dataset:
    """Small random dataset with overlap in every cell.

    Outcomes are shifted normals; ``ties`` rounds them to create repeated values.
    """
    rng = np.random.default_rng(seed)
    n_cells = int(rng.integers(1, 4)) if n_cells is None else n_cells
    n = int(rng.integers(40, 160)) if n is None else n
    w = np.arange(n) % n_cells
    rng.shuffle(w)
    x = np.zeros(n, dtype=int)
    for cell in range(n_cells):
        idx = np.flatnonzero(w == cell)
        p = rng.uniform(0.3, 0.7)
        draw = (rng.random(idx.size) < p).astype(int)
        draw[0], draw[-1] = 0, 1
        x[idx] = draw
    y = rng.normal(size=n) * rng.uniform(0.5, 2.0) + x * rng.uniform(-0.5, 1.5) + 0.3 * w
    if ties:
        y = np.round(y, 1)
    return Dataset.from_arrays(y, x, w.astype(float))


@pytest.fixture
def mc_sample():
    from bfrontier.montecarlo import McDgp, dgp_sample
    return dgp_sample(McDgp(), 300, 11)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(results):
        terminalreporter.write_line(results[k])
