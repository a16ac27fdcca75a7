import time

import pytest

from tblab import SwarmConfig, run

#: The ideal validation grid: reject-free swarms across the rate range that
#: spans all three startup groups.
IDEAL_GAMMAS = (1.5, 2.0, 2.5, 3.0, 4.0)


def ideal_config(gamma: float, **overrides) -> SwarmConfig:
    base = dict(
        r=10.0,
        gamma_p=gamma,
        report_interval=1.0,
        slot=0.1,
        duration=300.0,
        reject_prob=0.0,
        seed=1,
        n_stable=2,
    )
    base.update(overrides)
    return SwarmConfig(**base)


@pytest.fixture(scope="session")
def ideal_runs():
    """One reject-free run per grid rate, with wall-clock timings."""
    out = {}
    for gamma in IDEAL_GAMMAS:
        cfg = ideal_config(gamma)
        t0 = time.monotonic()
        result = run(cfg)
        out[gamma] = (result, time.monotonic() - t0)
    return out
