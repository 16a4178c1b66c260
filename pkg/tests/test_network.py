"""
Network model test suite.

Groups:
 1. Bundled IEEE-30 network: sizes, derived couplings, degree
 2. Minimal networks: two-bus, chain, star
 3. Validation errors carry file and field
 4. Serialization round trip
"""

import copy
import json

import numpy as np
import pytest

from attackid.modules.network import CONSTANT_LOAD, bus_ids, load_network_config, max_degree, network_from_dict, \
    save_network_config
from attackid.utils.errors import ConfigError

from conftest import TWO_BUS_PATH, chain_dict, single_machine_dict


# ── Group 1: bundled network ─────────────────────────────────────────────────

def test_ieee30_sizes(ieee30):
    assert ieee30.n_bus == 30
    assert ieee30.d_u == 30
    assert ieee30.d_x == 60
    assert len(ieee30.partition) == 6
    assert ieee30.d_z == 18


def test_ieee30_subsystem_v_couples_buses_2_4_5(ieee30):
    sub = ieee30.partition[ieee30.subsystem_of(1)]
    assert sub.members == (1, 2, 3, 4, 5)
    assert sub.coupling == (2, 4, 5)
    np.testing.assert_array_equal(ieee30.coupling_indices(sub.index), [1, 3, 4])


def test_ieee30_partition_covers_buses_once(ieee30):
    members = [b for sub in ieee30.partition for b in sub.members]
    assert sorted(members) == list(range(1, 31))


def test_ieee30_neighborhoods_are_symmetric(ieee30):
    for sub in ieee30.partition:
        for j in sub.neighbors:
            assert sub.index in ieee30.partition[j].neighbors


def test_ieee30_d_z_counts_boundary_buses(ieee30):
    owner = {b: sub.index for sub in ieee30.partition for b in sub.members}
    boundary = {bus for line in ieee30.lines for bus in (line.i, line.j) if owner[line.i] != owner[line.j]}
    assert len(boundary) == ieee30.d_z


def test_ieee30_max_degree(ieee30):
    assert max_degree(ieee30) == 3


def test_ieee30_constant_loads_are_fixed(ieee30):
    constant = [b.id for b in ieee30.buses if b.kind == CONSTANT_LOAD]
    assert constant == [3, 7, 14, 19, 26, 30]
    mask = ieee30.controllable_mask()
    assert mask.sum() == 24
    assert np.all(ieee30.u_min[~mask] == ieee30.u_max[~mask])


def test_coupling_matrix_is_symmetric(ieee30):
    K = ieee30.coupling_matrix()
    np.testing.assert_array_equal(K, K.T)
    assert np.count_nonzero(K) == 2 * len(ieee30.lines)


def test_adjacency_matches_lines(ieee30):
    adjacency = ieee30.adjacency()
    assert len(adjacency) == ieee30.n_bus
    assert adjacency[0] == (2, 3)
    assert adjacency[5] == (2, 4, 7, 8, 9, 10, 28)
    assert sum(len(n) for n in adjacency) == 2 * len(ieee30.lines)
    for line in ieee30.lines:
        assert line.j in adjacency[line.i - 1]
        assert line.i in adjacency[line.j - 1]
    K = ieee30.coupling_matrix()
    for i, neighbors in enumerate(adjacency):
        assert list(neighbors) == sorted(neighbors)
        assert set(neighbors) == {int(j) + 1 for j in np.flatnonzero(K[i])}


def test_neighbor_offsets_tile_aggregate(ieee30):
    for sub in ieee30.partition:
        offsets = ieee30.neighbor_offsets(sub.index)
        assert [j for j, _ in offsets] == list(sub.neighbors)
        total = sum(ieee30.partition[j].d_z for j in sub.neighbors)
        assert ieee30.local(sub.index).d_zn == total
        if offsets:
            assert offsets[0][1].start == 0 and offsets[-1][1].stop == total


# ── Group 2: minimal networks ────────────────────────────────────────────────

def test_two_bus(two_bus):
    assert two_bus.d_z == 2
    assert all(len(sub.neighbors) == 1 for sub in two_bus.partition)
    assert max_degree(two_bus) == 1


def test_chain_degree(chain):
    assert [len(s.neighbors) for s in chain.partition] == [1, 2, 1]
    assert max_degree(chain) == 2


def test_star_degree():
    buses = [{"id": i, "m": 1.0, "d": 1.0, "V": 1.0, "kind": "generator", "u_min": -1, "u_max": 1, "theta0": 0}
             for i in range(1, 6)]
    lines = [{"i": 1, "j": i, "b": 1.0} for i in range(2, 6)]
    partition = [{"name": f"P{i}", "members": [i]} for i in range(1, 6)]
    model = network_from_dict({"buses": buses, "lines": lines, "partition": partition})
    assert max_degree(model) == 4


def test_isolated_machine_has_no_coupling(single_machine):
    assert single_machine.d_z == 0
    assert max_degree(single_machine) == 0


def test_bus_ids_are_one_based():
    assert bus_ids([0, 4, 29]) == (1, 5, 30)


# ── Group 3: validation ──────────────────────────────────────────────────────

def _broken(edit):
    data = chain_dict()
    edit(data)
    return data


@pytest.mark.parametrize("edit, field", [
    (lambda d: d["buses"][3].update(m=0.0), "buses[3].m"),
    (lambda d: d["buses"][1].update(d=-1.0), "buses[1].d"),
    (lambda d: d["buses"][0].update(kind="nuclear"), "buses[0].kind"),
    (lambda d: d["buses"][0].update(u_min=2.0), "buses[0].u_min"),
    (lambda d: d["lines"][0].update(b=0.0), "lines[0].b"),
    (lambda d: d["lines"][0].update(j=99), "lines[0].j"),
    (lambda d: d["lines"].append({"i": 2, "j": 1, "b": 1.0}), "lines[5]"),
    (lambda d: d["partition"][1].update(name="S0"), "partition[1].name"),
    (lambda d: d["partition"][1].update(members=[]), "partition[1].members"),
])
def test_validation_names_field(edit, field):
    with pytest.raises(ConfigError) as exc:
        network_from_dict(_broken(edit), source="net.json")
    assert exc.value.field == field
    assert "net.json" in str(exc.value)


def test_zero_inertia_names_bus():
    data = _broken(lambda d: d["buses"][3].update(m=0))
    with pytest.raises(ConfigError, match="bus 4"):
        network_from_dict(data)


def test_constant_load_needs_fixed_box():
    data = single_machine_dict()
    data["buses"][0]["kind"] = CONSTANT_LOAD
    with pytest.raises(ConfigError, match="constant-load"):
        network_from_dict(data)


def test_uncovered_bus_rejected():
    data = _broken(lambda d: d["partition"].pop())
    with pytest.raises(ConfigError, match="not assigned"):
        network_from_dict(data)


def test_bus_ids_must_be_contiguous():
    data = _broken(lambda d: d["buses"][0].update(id=42))
    with pytest.raises(ConfigError, match="bus ids"):
        network_from_dict(data)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="does not exist"):
        load_network_config(tmp_path / "missing.json")


def test_malformed_json(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{\"buses\": [")
    with pytest.raises(ConfigError, match="malformed"):
        load_network_config(path)


# ── Group 4: round trip ──────────────────────────────────────────────────────

def test_round_trip_ieee30(ieee30, tmp_path):
    path = tmp_path / "copy.json"
    save_network_config(ieee30, path)
    assert load_network_config(path) == ieee30


def test_to_dict_reproduces_file(two_bus):
    with open(TWO_BUS_PATH) as f:
        original = json.load(f)
    assert network_from_dict(copy.deepcopy(two_bus.to_dict())) == network_from_dict(original)
