import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from graphdisk.graph import build_graph
from graphdisk.quantizer import encode, train_pq
from graphdisk.synth import clustered

settings.register_profile("default", deadline=None, max_examples=50,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def small():
    """2K clustered 32-dim vectors with 60 queries, a graph and PQ codes."""
    base, queries = clustered(2000, 32, 60, clusters=16, latent=12, spread=0.5, seed=3)
    g = build_graph(base, R_deg=16, L_build=48, seed=3)
    cb = train_pq(base, 8, 256, 10, seed=3)
    return base, queries, g, cb, encode(cb, base)


@pytest.fixture(scope="session")
def desk_root(request):
    """Cross-session cache for the 100K desk corpora (built once, reused)."""
    env = os.environ.get("GRAPHDISK_DESK_CACHE")
    if env:
        os.makedirs(env, exist_ok=True)
        return env
    return str(request.config.cache.mkdir("graphdisk-desk"))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
