import os
import sys

_ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
sys.path.insert(0, _ROOT)

import numpy as np
import pytest

from attackid.modules.network import default_network_path, load_network_config, network_from_dict
from attackid.utils.loader import create_pipeline, load_config


# ── Shared fixtures ───────────────────────────────────────────────────────────

TWO_BUS_PATH = os.path.join(_ROOT, "configs", "two_bus.json")


def single_machine_dict(m=2.0, d=1.0):
    return {
        "name": "single",
        "buses": [{"id": 1, "m": m, "d": d, "V": 1.0, "kind": "generator",
                   "u_min": -1.0, "u_max": 1.0, "theta0": 0.0}],
        "lines": [],
        "partition": [{"name": "A", "members": [1]}],
    }


def chain_dict(n_sub=3, per_sub=2, b=4.0):
    """A path of n_sub * per_sub buses cut into n_sub consecutive subsystems."""
    n = n_sub * per_sub
    buses = [{"id": i + 1, "m": 0.3 + 0.05 * i, "d": 1.0, "V": 1.0, "kind": "generator",
              "u_min": -0.5, "u_max": 0.5, "theta0": 0.0} for i in range(n)]
    lines = [{"i": i + 1, "j": i + 2, "b": b} for i in range(n - 1)]
    partition = [{"name": f"S{s}", "members": list(range(s * per_sub + 1, (s + 1) * per_sub + 1))}
                 for s in range(n_sub)]
    return {"name": "chain", "buses": buses, "lines": lines, "partition": partition}


@pytest.fixture(scope="session")
def ieee30():
    return load_network_config(default_network_path())


@pytest.fixture(scope="session")
def two_bus():
    return load_network_config(TWO_BUS_PATH)


@pytest.fixture
def single_machine():
    return network_from_dict(single_machine_dict())


@pytest.fixture(scope="session")
def chain():
    return network_from_dict(chain_dict())


@pytest.fixture(scope="session")
def ieee30_pipeline():
    """Reset-mode pipeline on the bundled network; caches persist across tests."""
    return create_pipeline(load_config())


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
