import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..utils.errors import ConfigError

logger = logging.getLogger(__name__)

GENERATOR = "generator"
CONTROLLABLE_LOAD = "controllable-load"
CONSTANT_LOAD = "constant-load"
BUS_KINDS = (GENERATOR, CONTROLLABLE_LOAD, CONSTANT_LOAD)

_BUS_FIELDS = ("id", "m", "d", "V", "kind", "u_min", "u_max", "theta0")
_LINE_FIELDS = ("i", "j", "b")


@dataclass(frozen=True)
class Bus:
    """A bus carrying one synchronous machine.

    Args:
        id (int): 1-based bus id
        m (float): inertia [p.u. s^2]
        d (float): damping [p.u. s]
        V (float): voltage magnitude [p.u.]
        kind (str): one of generator, controllable-load, constant-load
        u_min (float), u_max (float): input box [p.u.]
        theta0 (float): initial angle [rad]
    """
    id: int
    m: float
    d: float
    V: float
    kind: str
    u_min: float
    u_max: float
    theta0: float

    @property
    def controllable(self) -> bool:
        return self.kind != CONSTANT_LOAD


@dataclass(frozen=True)
class Line:
    i: int
    j: int
    b: float


@dataclass(frozen=True)
class Subsystem:
    """One element of the partition.

    `members` and `coupling` hold bus ids in ascending order, `neighbors` holds
    subsystem indices in ascending order. Coupling buses are the members
    incident to a line leaving the subsystem.
    """
    index: int
    name: str
    members: tuple
    coupling: tuple
    neighbors: tuple

    @property
    def d_z(self) -> int:
        return len(self.coupling)

    @property
    def d_u(self) -> int:
        return len(self.members)


@dataclass(frozen=True)
class Partition:
    subsystems: tuple

    def __len__(self):
        return len(self.subsystems)

    def __iter__(self):
        return iter(self.subsystems)

    def __getitem__(self, index) -> Subsystem:
        return self.subsystems[index]

    @property
    def d_z(self) -> int:
        return sum(s.d_z for s in self.subsystems)

    def z_offsets(self) -> np.ndarray:
        """Start of each subsystem's block in the global coupling vector."""
        return np.concatenate([[0], np.cumsum([s.d_z for s in self.subsystems])]).astype(int)


@dataclass(frozen=True)
class LocalStructure:
    """Index bookkeeping of one subsystem, in member-local positions.

    Internal lines are edges (src, dst) between members. Boundary lines join a
    member `src` to slot `slot` of the aggregated neighbor coupling vector z_N.
    The incidence matrices turn per-line flows into per-bus net flows.
    """
    members: np.ndarray
    coupling_local: np.ndarray
    internal_src: np.ndarray
    internal_dst: np.ndarray
    internal_k: np.ndarray
    internal_incidence: np.ndarray
    boundary_src: np.ndarray
    boundary_slot: np.ndarray
    boundary_k: np.ndarray
    boundary_incidence: np.ndarray
    neighbor_slices: tuple
    d_zn: int


@dataclass(frozen=True)
class NetworkModel:
    buses: tuple
    lines: tuple
    partition: Partition
    name: str = "network"
    description: str = ""
    _local: tuple = field(default=(), init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "_local", tuple(_local_structure(self, s) for s in self.partition))

    # -- sizes -----------------------------------------------------------
    @property
    def n_bus(self) -> int:
        return len(self.buses)

    @property
    def d_u(self) -> int:
        return len(self.buses)

    @property
    def d_x(self) -> int:
        return 2 * len(self.buses)

    @property
    def d_z(self) -> int:
        return self.partition.d_z

    # -- per-bus arrays --------------------------------------------------
    def _column(self, name):
        return np.array([getattr(b, name) for b in self.buses], dtype=float)

    @property
    def m(self) -> np.ndarray:
        return self._column("m")

    @property
    def d(self) -> np.ndarray:
        return self._column("d")

    @property
    def V(self) -> np.ndarray:
        return self._column("V")

    @property
    def u_min(self) -> np.ndarray:
        return self._column("u_min")

    @property
    def u_max(self) -> np.ndarray:
        return self._column("u_max")

    @property
    def theta0(self) -> np.ndarray:
        return self._column("theta0")

    def controllable_mask(self) -> np.ndarray:
        return np.array([b.controllable for b in self.buses], dtype=bool)

    def line_stiffness(self) -> np.ndarray:
        """k_ij = |V_i||V_j| b_ij per line, in line order."""
        V = self.V
        return np.array([V[l.i - 1] * V[l.j - 1] * l.b for l in self.lines], dtype=float)

    def coupling_matrix(self) -> np.ndarray:
        K = np.zeros((self.n_bus, self.n_bus))
        for line, k in zip(self.lines, self.line_stiffness()):
            K[line.i - 1, line.j - 1] = k
            K[line.j - 1, line.i - 1] = k
        return K

    def adjacency(self) -> tuple:
        """Per-bus neighbor ids N_i."""
        adj = [set() for _ in self.buses]
        for line in self.lines:
            adj[line.i - 1].add(line.j)
            adj[line.j - 1].add(line.i)
        return tuple(tuple(sorted(a)) for a in adj)

    # -- partition views -------------------------------------------------
    def local(self, index) -> LocalStructure:
        return self._local[index]

    def subsystem_of(self, bus_id) -> int:
        for sub in self.partition:
            if bus_id in sub.members:
                return sub.index
        raise KeyError(bus_id)

    def member_indices(self, index) -> np.ndarray:
        return np.asarray(self.partition[index].members, dtype=int) - 1

    def coupling_indices(self, index) -> np.ndarray:
        return np.asarray(self.partition[index].coupling, dtype=int) - 1

    def neighbor_offsets(self, index) -> tuple:
        """(neighbor index, slice into z_N) pairs in ascending neighbor order."""
        return self._local[index].neighbor_slices

    # -- serialization ---------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "description": self.description,
            "buses": [{k: getattr(b, k) for k in _BUS_FIELDS} for b in self.buses],
            "lines": [{k: getattr(l, k) for k in _LINE_FIELDS} for l in self.lines],
            "partition": [{"name": s.name, "members": list(s.members)} for s in self.partition],
        }


def _local_structure(model: NetworkModel, sub: Subsystem) -> LocalStructure:
    members = np.asarray(sub.members, dtype=int) - 1
    position = {bus_id: p for p, bus_id in enumerate(sub.members)}

    slot_of = {}
    slices = []
    offset = 0
    for j in sub.neighbors:
        neighbor = model.partition[j]
        for p, bus_id in enumerate(neighbor.coupling):
            slot_of[bus_id] = offset + p
        slices.append((j, slice(offset, offset + neighbor.d_z)))
        offset += neighbor.d_z

    src, dst, k_int = [], [], []
    b_src, b_slot, k_bnd = [], [], []
    for line, k in zip(model.lines, model.line_stiffness()):
        for a, b in ((line.i, line.j), (line.j, line.i)):
            if a not in position:
                continue
            if b in position:
                # each internal line once, oriented low -> high
                if a < b:
                    src.append(position[a])
                    dst.append(position[b])
                    k_int.append(k)
            else:
                b_src.append(position[a])
                b_slot.append(slot_of[b])
                k_bnd.append(k)

    n = len(sub.members)
    incidence = np.zeros((n, len(src)))
    for e, (a, b) in enumerate(zip(src, dst)):
        incidence[a, e] = 1.0
        incidence[b, e] = -1.0
    b_incidence = np.zeros((n, len(b_src)))
    for e, a in enumerate(b_src):
        b_incidence[a, e] = 1.0

    return LocalStructure(
        members=members,
        coupling_local=np.array([position[c] for c in sub.coupling], dtype=int),
        internal_src=np.array(src, dtype=int),
        internal_dst=np.array(dst, dtype=int),
        internal_k=np.array(k_int, dtype=float),
        internal_incidence=incidence,
        boundary_src=np.array(b_src, dtype=int),
        boundary_slot=np.array(b_slot, dtype=int),
        boundary_k=np.array(k_bnd, dtype=float),
        boundary_incidence=b_incidence,
        neighbor_slices=tuple(slices),
        d_zn=offset,
    )


def _require(entry, keys, where, source):
    if not isinstance(entry, dict):
        raise ConfigError("expected an object", path=source, field=where)
    missing = [k for k in keys if k not in entry]
    if missing:
        raise ConfigError(f"missing key(s) {', '.join(missing)}", path=source, field=where)


def _number(entry, key, where, source):
    value = entry[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not np.isfinite(value):
        raise ConfigError(f"expected a finite number, got {value!r}", path=source, field=f"{where}.{key}")
    return float(value)


def _parse_bus(entry, where, source) -> Bus:
    _require(entry, _BUS_FIELDS, where, source)
    if isinstance(entry["id"], bool) or not isinstance(entry["id"], int):
        raise ConfigError(f"bus id must be an integer, got {entry['id']!r}", path=source, field=f"{where}.id")
    bus = Bus(
        id=entry["id"],
        m=_number(entry, "m", where, source),
        d=_number(entry, "d", where, source),
        V=_number(entry, "V", where, source),
        kind=entry["kind"],
        u_min=_number(entry, "u_min", where, source),
        u_max=_number(entry, "u_max", where, source),
        theta0=_number(entry, "theta0", where, source),
    )
    for name in ("m", "d", "V"):
        if getattr(bus, name) <= 0:
            raise ConfigError(f"bus {bus.id}: {name} must be positive, got {getattr(bus, name)}",
                              path=source, field=f"{where}.{name}")
    if bus.kind not in BUS_KINDS:
        raise ConfigError(f"bus {bus.id}: unknown kind {bus.kind!r}", path=source, field=f"{where}.kind")
    if bus.u_min > bus.u_max:
        raise ConfigError(f"bus {bus.id}: u_min {bus.u_min} exceeds u_max {bus.u_max}",
                          path=source, field=f"{where}.u_min")
    if bus.kind == CONSTANT_LOAD and bus.u_min != bus.u_max:
        raise ConfigError(f"bus {bus.id}: constant-load bus needs u_min == u_max",
                          path=source, field=f"{where}.u_max")
    return bus


def network_from_dict(data, source=None) -> NetworkModel:
    """Build and validate a NetworkModel from the parsed JSON structure.

    Coupling buses and neighborhoods are derived from the lines and the
    partition; they are never read from the file.
    """
    if not isinstance(data, dict):
        raise ConfigError("top level must be an object", path=source)
    for key in ("buses", "lines", "partition"):
        if key not in data:
            raise ConfigError(f"missing top-level key {key!r}", path=source, field=key)
        if not isinstance(data[key], list):
            raise ConfigError("expected an array", path=source, field=key)

    buses = [_parse_bus(entry, f"buses[{n}]", source) for n, entry in enumerate(data["buses"])]
    if not buses:
        raise ConfigError("no buses", path=source, field="buses")
    ids = [b.id for b in buses]
    if sorted(ids) != list(range(1, len(buses) + 1)):
        raise ConfigError(f"bus ids must be 1..{len(buses)} without gaps or repeats", path=source, field="buses")
    buses = sorted(buses, key=lambda b: b.id)

    lines = []
    seen = set()
    for n, entry in enumerate(data["lines"]):
        where = f"lines[{n}]"
        _require(entry, _LINE_FIELDS, where, source)
        i, j = entry["i"], entry["j"]
        for key, end in (("i", i), ("j", j)):
            if isinstance(end, bool) or not isinstance(end, int) or not 1 <= end <= len(buses):
                raise ConfigError(f"unknown bus {end!r}", path=source, field=f"{where}.{key}")
        if i == j:
            raise ConfigError(f"line joins bus {i} to itself", path=source, field=where)
        pair = (min(i, j), max(i, j))
        if pair in seen:
            raise ConfigError(f"duplicate line between buses {pair[0]} and {pair[1]}", path=source, field=where)
        seen.add(pair)
        b = _number(entry, "b", where, source)
        if b <= 0:
            raise ConfigError(f"susceptance must be positive, got {b}", path=source, field=f"{where}.b")
        lines.append(Line(i=i, j=j, b=b))

    owner = {}
    names = []
    groups = []
    for n, entry in enumerate(data["partition"]):
        where = f"partition[{n}]"
        _require(entry, ("name", "members"), where, source)
        name = str(entry["name"])
        if name in names:
            raise ConfigError(f"duplicate subsystem name {name!r}", path=source, field=f"{where}.name")
        members = entry["members"]
        if not isinstance(members, list) or not members:
            raise ConfigError("members must be a nonempty array", path=source, field=f"{where}.members")
        for bus_id in members:
            if isinstance(bus_id, bool) or not isinstance(bus_id, int) or not 1 <= bus_id <= len(buses):
                raise ConfigError(f"unknown bus {bus_id!r}", path=source, field=f"{where}.members")
            if bus_id in owner:
                raise ConfigError(f"bus {bus_id} already belongs to subsystem {names[owner[bus_id]]!r}",
                                  path=source, field=f"{where}.members")
            owner[bus_id] = n
        names.append(name)
        groups.append(tuple(sorted(members)))
    uncovered = sorted(set(range(1, len(buses) + 1)) - set(owner))
    if uncovered:
        raise ConfigError(f"buses {uncovered} are not assigned to a subsystem", path=source, field="partition")

    coupling = [set() for _ in groups]
    neighbors = [set() for _ in groups]
    for line in lines:
        a, b = owner[line.i], owner[line.j]
        if a != b:
            coupling[a].add(line.i)
            coupling[b].add(line.j)
            neighbors[a].add(b)
            neighbors[b].add(a)

    partition = Partition(tuple(
        Subsystem(index=n, name=names[n], members=groups[n],
                  coupling=tuple(sorted(coupling[n])), neighbors=tuple(sorted(neighbors[n])))
        for n in range(len(groups))
    ))
    return NetworkModel(
        buses=tuple(buses),
        lines=tuple(lines),
        partition=partition,
        name=str(data.get("name", "network")),
        description=str(data.get("description", "")),
    )


def load_network_config(path) -> NetworkModel:
    path = Path(path)
    if not path.exists():
        raise ConfigError("file does not exist", path=path)
    try:
        with open(path, "r") as f:
            data = json.load(f)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON ({exc.msg} at line {exc.lineno})", path=path) from exc
    model = network_from_dict(data, source=path)
    logger.info(f"loaded {describe(model)} from {path}")
    return model


def save_network_config(model: NetworkModel, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(model.to_dict(), f, indent=2)


def max_degree(model: NetworkModel) -> int:
    """M = max_I |N_I|, the largest neighborhood in the subsystem graph."""
    return max((len(s.neighbors) for s in model.partition), default=0)


def describe(model: NetworkModel) -> str:
    return (f"network '{model.name}': {model.n_bus} buses, {len(model.lines)} lines, "
            f"{len(model.partition)} subsystems, d_z={model.d_z}, M={max_degree(model)}")


def default_network_path() -> Path:
    return Path(__file__).resolve().parents[2] / "configs" / "ieee30.json"


def bus_ids(indices) -> tuple:
    """0-based input indices to 1-based bus ids."""
    return tuple(int(i) + 1 for i in indices)
