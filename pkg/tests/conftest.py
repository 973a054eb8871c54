import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from ti64micro.batch import GlobalFields


def random_states(n, seed, t_lo=300.0, t_hi=2000.0, dt_jitter=50.0):
    """Valid random phase states with consistent temperatures, as GlobalFields."""
    rng = np.random.default_rng(seed)
    xs = rng.uniform(0.0, 0.9, n)
    xm = rng.uniform(0.0, 0.9, n)
    cap = np.maximum((xs + xm) / 0.9, 1.0)
    xs /= cap
    xm /= cap
    t_old = rng.uniform(t_lo, t_hi, n)
    t_new = np.clip(t_old + rng.uniform(-dt_jitter, dt_jitter, n), t_lo, t_hi)
    xsol = 1.0 - np.clip((t_old - 1878.0) / 50.0, 0.0, 1.0)
    xb = np.maximum(xsol - xs - xm, 0.0)
    return GlobalFields(xs, xm, xb, t_old, t_new)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(1234)
