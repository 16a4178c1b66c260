import logging
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from constants import DT, TOL_RANK
from .dual import Dual
from .dynamics import NominalPoint, couple, step_subsystem
from .linalg import householder_qr
from .network import NetworkModel, Partition, bus_ids
from ..utils.errors import DimensionError, ZeroColumnError

logger = logging.getLogger(__name__)


def eval_zeta(model: NetworkModel, index, x_I, a_I, z_N, dt=DT):
    """zeta_I = h_I o f_I, the one-step coupling map."""
    return couple(model, index, step_subsystem(model, index, x_I, a_I, z_N, dt))


def jacobian_of(fn: Callable, a0, z0):
    """Forward-mode Jacobians of fn(a, z) with respect to a and z.

    Both arguments are seeded in one pass, a on the first len(a0)
    directions and z on the rest.
    """
    a0 = np.atleast_1d(np.asarray(a0, dtype=float))
    z0 = np.atleast_1d(np.asarray(z0, dtype=float))
    p, q = len(a0), len(z0)
    out = fn(Dual.variable(a0, 0, p + q), Dual.variable(z0, p, p + q))
    if isinstance(out, Dual):
        J = out.grad.reshape(len(out), p + q)
    else:
        J = np.zeros((len(np.atleast_1d(out)), p + q))
    return J[:, :p], J[:, p:]


def jacobians(model: NetworkModel, index, x_I, u_I, zbar_N, dt=DT):
    """(S_I^a, S_I^N) at the nominal point (x_I, u_I, zbar_N)."""
    return jacobian_of(lambda a, z: eval_zeta(model, index, x_I, a, z, dt), u_I, zbar_N)


def finite_difference_jacobians(model: NetworkModel, index, x_I, u_I, zbar_N, dt=DT, h=1e-6):
    """Central-difference counterpart of `jacobians`."""
    u_I = np.asarray(u_I, dtype=float)
    zbar_N = np.asarray(zbar_N, dtype=float)

    def column(a, z):
        return eval_zeta(model, index, x_I, a, z, dt)

    d_z = len(model.partition[index].coupling)
    S_a = np.zeros((d_z, len(u_I)))
    for i in range(len(u_I)):
        e = np.zeros_like(u_I)
        e[i] = h
        S_a[:, i] = (column(u_I + e, zbar_N) - column(u_I - e, zbar_N)) / (2 * h)
    S_n = np.zeros((d_z, len(zbar_N)))
    for i in range(len(zbar_N)):
        e = np.zeros_like(zbar_N)
        e[i] = h
        S_n[:, i] = (column(u_I, zbar_N + e) - column(u_I, zbar_N - e)) / (2 * h)
    return S_a, S_n


def reduce_columns(S_a, tol_rank=TOL_RANK):
    """Drop linearly dependent columns with a pivoted Householder QR.

    Returns the kept columns in ascending original order and their indices.
    """
    S_a = np.asarray(S_a, dtype=float)
    m, n = S_a.shape
    if m == 0 or n == 0:
        return S_a[:, :0], np.zeros(0, dtype=int)
    qr = householder_qr(S_a, pivoting=True)
    diag = np.abs(np.diag(qr.R))
    if diag[0] == 0.0:
        return S_a[:, :0], np.zeros(0, dtype=int)
    rank = int(np.sum(diag > tol_rank * diag[0]))
    kept = np.sort(qr.perm[:rank])
    return S_a[:, kept], kept


def normalize_columns(S):
    """Scale every column to unit Euclidean norm.

    Returns (S_normalized, scales); a solution x_n of the normalized system maps
    back to the raw one as x = x_n / scales.
    """
    S = np.asarray(S, dtype=float)
    scales = np.linalg.norm(S, axis=0)
    if np.any(scales == 0.0):
        raise ZeroColumnError(f"zero column(s) {np.flatnonzero(scales == 0.0).tolist()} cannot be normalized")
    return S / scales, scales


@dataclass
class SubsystemSensitivity:
    """What one subsystem publishes after an alarm.

    Args:
        index (int): subsystem index
        S_a (np.ndarray): full input Jacobian, d_zI x d_uI
        S_n (np.ndarray): neighbor Jacobian, d_zI x d_zN
        reduced (np.ndarray): kept columns of S_a, normalized, d_zI x r_I
        local_columns (np.ndarray): kept columns as positions in the members
        columns (np.ndarray): kept columns as global 0-based input indices
        scales (np.ndarray): norms of the kept raw columns
    """
    index: int
    S_a: np.ndarray
    S_n: np.ndarray
    reduced: np.ndarray
    local_columns: np.ndarray
    columns: np.ndarray
    scales: np.ndarray

    @property
    def r(self) -> int:
        return self.reduced.shape[1]

    def selection(self) -> np.ndarray:
        """d_uI x r_I matrix embedding the kept columns into the local inputs."""
        P = np.zeros((self.S_a.shape[1], self.r))
        P[self.local_columns, np.arange(self.r)] = 1.0
        return P


def publish_sensitivity(model: NetworkModel, point: NominalPoint, dt=DT, tol_rank=TOL_RANK) -> SubsystemSensitivity:
    S_a, S_n = jacobians(model, point.index, point.x, point.u, point.zbar_n, dt)
    kept_S, kept = reduce_columns(S_a, tol_rank)
    reduced, scales = normalize_columns(kept_S)
    members = model.member_indices(point.index)
    return SubsystemSensitivity(
        index=point.index, S_a=S_a, S_n=S_n, reduced=reduced,
        local_columns=kept, columns=members[kept], scales=scales,
    )


@dataclass
class SensitivityBundle:
    """Published sensitivities of all subsystems and the global system S da = b."""
    subsystems: list
    partition: Partition
    d_u: int
    b: Optional[np.ndarray] = None

    @property
    def r(self) -> int:
        return sum(s.r for s in self.subsystems)

    @property
    def d_z(self) -> int:
        return self.partition.d_z

    @property
    def column_map(self) -> np.ndarray:
        return np.concatenate([s.columns for s in self.subsystems]).astype(int)

    @property
    def scales(self) -> np.ndarray:
        return np.concatenate([s.scales for s in self.subsystems])

    @property
    def blocks(self) -> list:
        """(row slice, column slice) of every diagonal block."""
        out = []
        row = col = 0
        for sub, s in zip(self.partition, self.subsystems):
            out.append((slice(row, row + sub.d_z), slice(col, col + s.r)))
            row += sub.d_z
            col += s.r
        return out

    @property
    def S(self) -> np.ndarray:
        S = np.zeros((self.d_z, self.r))
        for (rows, cols), s in zip(self.blocks, self.subsystems):
            S[rows, cols] = s.reduced
        return S

    def assemble(self, delta_z, delta_z_neighbors=None):
        S, self.b = assemble_global(self.subsystems, delta_z, self.partition, delta_z_neighbors)
        return S, self.b

    def unscale(self, x_normalized) -> np.ndarray:
        """Reduced normalized solution -> input deviation in all d_u coordinates."""
        x_normalized = np.asarray(x_normalized, dtype=float)
        if x_normalized.shape != (self.r,):
            raise DimensionError(f"expected {self.r} reduced coordinates, got {x_normalized.shape}")
        delta_a = np.zeros(self.d_u)
        delta_a[self.column_map] = x_normalized / self.scales
        return delta_a

    def scale(self, delta_a):
        """Input deviation -> reduced normalized coordinates.

        Returns (x_normalized, unpublished) where `unpublished` lists the
        0-based inputs with a nonzero deviation but no published column.
        """
        delta_a = np.asarray(delta_a, dtype=float)
        published = np.zeros(self.d_u, dtype=bool)
        published[self.column_map] = True
        unpublished = np.flatnonzero((delta_a != 0.0) & ~published)
        return delta_a[self.column_map] * self.scales, unpublished

    def to_dict(self) -> dict:
        return {
            "S": self.S.tolist(),
            "b": None if self.b is None else np.asarray(self.b).tolist(),
            "column_map": list(bus_ids(self.column_map)),
            "scales": self.scales.tolist(),
            "blocks": [[rows.start, rows.stop, cols.start, cols.stop] for rows, cols in self.blocks],
            "d_u": self.d_u,
        }


def build_bundle(model: NetworkModel, points, dt=DT, tol_rank=TOL_RANK) -> SensitivityBundle:
    subsystems = [publish_sensitivity(model, p, dt, tol_rank) for p in points]
    for s in subsystems:
        logger.debug(f"subsystem {model.partition[s.index].name}: published columns "
                     f"{list(bus_ids(s.columns))} of {s.S_a.shape[1]}")
    return SensitivityBundle(subsystems=subsystems, partition=model.partition, d_u=model.d_u)


def assemble_global(sensitivities, delta_z, partition: Partition, delta_z_neighbors=None):
    """Global block-diagonal S and right-hand side b.

    b_I = dz_I - S_I^N dz_{N_I}, stacked in ascending subsystem order. The
    neighbor deviations default to `delta_z` itself; the closed loop passes the
    deviations at the start of the step, which is when neighbors enter f_I.

    Args:
        sensitivities (list of SubsystemSensitivity): one per subsystem
        delta_z (list of np.ndarray): dz_I per subsystem
        partition (Partition): subsystem layout
        delta_z_neighbors (list of np.ndarray, optional): deviations combined into dz_{N_I}
    """
    if len(sensitivities) != len(partition) or len(delta_z) != len(partition):
        raise DimensionError(f"expected {len(partition)} subsystems, got {len(sensitivities)} "
                             f"sensitivities and {len(delta_z)} deviations")
    if delta_z_neighbors is None:
        delta_z_neighbors = delta_z
    delta_z = [np.atleast_1d(np.asarray(dz, dtype=float)) for dz in delta_z]
    delta_z_neighbors = [np.atleast_1d(np.asarray(dz, dtype=float)) for dz in delta_z_neighbors]

    r = sum(s.reduced.shape[1] for s in sensitivities)
    S = np.zeros((partition.d_z, r))
    b = np.zeros(partition.d_z)
    row = col = 0
    for sub, s, dz in zip(partition, sensitivities, delta_z):
        if dz.shape != (sub.d_z,) or s.reduced.shape[0] != sub.d_z:
            raise DimensionError(f"subsystem {sub.name}: expected {sub.d_z} coupling rows, got "
                                 f"deviation {dz.shape} and sensitivity {s.reduced.shape}")
        parts = [delta_z_neighbors[j] for j in sub.neighbors]
        dz_n = np.concatenate(parts) if parts else np.zeros(0)
        if s.S_n.shape != (sub.d_z, len(dz_n)):
            raise DimensionError(f"subsystem {sub.name}: neighbor sensitivity {s.S_n.shape} does not match "
                                 f"{len(dz_n)} neighbor couplings")
        S[row:row + sub.d_z, col:col + s.r] = s.reduced
        b[row:row + sub.d_z] = dz - s.S_n @ dz_n
        row += sub.d_z
        col += s.r
    return S, b
