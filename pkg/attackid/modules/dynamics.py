import logging
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Union

import numpy as np
import pandas as pd

from constants import CONTROLLER_GAIN, DT
from . import dual
from .network import NetworkModel
from ..utils.errors import DimensionError, NonFiniteStateError

logger = logging.getLogger(__name__)


@dataclass
class SystemState:
    """Phase angles [rad] and frequencies [rad/s] of all buses, in bus order."""
    theta: np.ndarray
    omega: np.ndarray

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float)
        self.omega = np.asarray(self.omega, dtype=float)
        if self.theta.shape != self.omega.shape or self.theta.ndim != 1:
            raise DimensionError(f"theta {self.theta.shape} and omega {self.omega.shape} must be equal 1-d shapes")

    @classmethod
    def steady(cls, model: NetworkModel, theta=None) -> "SystemState":
        theta = model.theta0 if theta is None else np.asarray(theta, dtype=float)
        return cls(theta=theta.copy(), omega=np.zeros(model.n_bus))

    @property
    def x(self) -> np.ndarray:
        return np.concatenate([self.theta, self.omega])

    def subsystem(self, model: NetworkModel, index) -> np.ndarray:
        """x_I = (theta_I, omega_I) over the members of subsystem `index`."""
        members = model.member_indices(index)
        return np.concatenate([self.theta[members], self.omega[members]])

    def with_subsystems(self, model: NetworkModel, parts) -> "SystemState":
        theta = self.theta.copy()
        omega = self.omega.copy()
        for index, x_I in enumerate(parts):
            members = model.member_indices(index)
            n = len(members)
            theta[members] = x_I[:n]
            omega[members] = x_I[n:]
        return SystemState(theta=theta, omega=omega)

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.theta)) and np.all(np.isfinite(self.omega)))

    def copy(self) -> "SystemState":
        return SystemState(theta=self.theta.copy(), omega=self.omega.copy())


def _line_arrays(model: NetworkModel):
    src = np.array([l.i - 1 for l in model.lines], dtype=int)
    dst = np.array([l.j - 1 for l in model.lines], dtype=int)
    incidence = np.zeros((model.n_bus, len(model.lines)))
    incidence[src, np.arange(len(src))] = 1.0
    incidence[dst, np.arange(len(dst))] = -1.0
    return src, dst, incidence


def net_power_flow(model: NetworkModel, theta) -> np.ndarray:
    """sum_{j in N_i} k_ij sin(theta_i - theta_j) per bus."""
    src, dst, incidence = _line_arrays(model)
    theta = np.asarray(theta, dtype=float)
    return incidence @ (model.line_stiffness() * np.sin(theta[src] - theta[dst]))


def swing_rhs(model: NetworkModel, theta, omega, u):
    """Swing equation of every bus.

    theta_dot = omega
    omega_dot = (u - d omega - sum_j k_ij sin(theta_i - theta_j)) / m
    """
    omega = np.asarray(omega, dtype=float)
    u = np.asarray(u, dtype=float)
    if not (len(theta) == len(omega) == len(u) == model.n_bus):
        raise DimensionError(f"expected {model.n_bus} entries for theta, omega and u")
    omega_dot = (u - model.d * omega - net_power_flow(model, theta)) / model.m
    return omega.copy(), omega_dot


def rk4_step(rhs: Callable, y, dt):
    """One classical Runge-Kutta step of y' = rhs(y)."""
    k1 = rhs(y)
    k2 = rhs(y + (dt / 2.0) * k1)
    k3 = rhs(y + (dt / 2.0) * k2)
    k4 = rhs(y + dt * k3)
    return y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def subsystem_rhs(model: NetworkModel, index, x_I, a_I, z_N):
    """Vector field of subsystem `index` with neighbor couplings z_N held fixed.

    Works on plain arrays and on `Dual` vectors alike.
    """
    loc = model.local(index)
    n = len(loc.members)
    theta, omega = x_I[:n], x_I[n:]
    m = model.m[loc.members]
    d = model.d[loc.members]

    flow = loc.internal_incidence @ (loc.internal_k * dual.sin(theta[loc.internal_src] - theta[loc.internal_dst]))
    if len(loc.boundary_k):
        flow = flow + loc.boundary_incidence @ (
            loc.boundary_k * dual.sin(theta[loc.boundary_src] - z_N[loc.boundary_slot]))
    omega_dot = (a_I - d * omega - flow) / m
    return dual.concatenate([omega, omega_dot])


def step_subsystem(model: NetworkModel, index, x_I, a_I, z_N, dt=DT):
    """x_I+ = f_I(x_I, a_I, z_N): one RK4 step with piecewise-constant couplings."""
    return rk4_step(lambda y: subsystem_rhs(model, index, y, a_I, z_N), x_I, dt)


def couple(model: NetworkModel, index, x_I):
    """z_I = h_I(x_I): angles at the coupling buses, ascending bus id."""
    return x_I[model.local(index).coupling_local]


def predict_nominal(model: NetworkModel, index, x_I, u_I, zbar_N, dt=DT) -> np.ndarray:
    """One-step-ahead nominal coupling value under the undisturbed input."""
    return couple(model, index, step_subsystem(model, index, x_I, u_I, zbar_N, dt))


def combine_neighbor_nominals(frames: Union[Mapping, list], neighbors) -> np.ndarray:
    """Aggregate the neighbors' frames in ascending subsystem index.

    Args:
        frames: z_J per subsystem index, as a mapping or a list indexed by J
        neighbors (iterable of int): the neighborhood N_I
    """
    parts = []
    for j in sorted(neighbors):
        try:
            frame = frames[j]
        except (KeyError, IndexError):
            frame = None
        if frame is None:
            raise DimensionError(f"missing nominal frame of neighbor {j}")
        parts.append(np.atleast_1d(np.asarray(frame, dtype=float)))
    if not parts:
        return np.zeros(0)
    return np.concatenate(parts)


def coupling_frame(model: NetworkModel, state: SystemState) -> list:
    return [couple(model, sub.index, state.subsystem(model, sub.index)) for sub in model.partition]


def steady_state_input(model: NetworkModel, theta0=None, atol=1e-9) -> np.ndarray:
    """Input that makes (theta0, 0) an equilibrium of the swing dynamics."""
    theta0 = model.theta0 if theta0 is None else np.asarray(theta0, dtype=float)
    if not np.all(np.isfinite(theta0)):
        raise DimensionError("theta0 must be finite")
    u_ss = net_power_flow(model, theta0)
    outside = np.flatnonzero((u_ss < model.u_min - atol) | (u_ss > model.u_max + atol))
    for i in outside:
        logger.warning(f"steady-state input of bus {i + 1} is {u_ss[i]:.6f}, "
                       f"outside its box [{model.u_min[i]}, {model.u_max[i]}]")
    return u_ss


def controller_step(model: NetworkModel, state: SystemState, u_ss, gain=CONTROLLER_GAIN) -> np.ndarray:
    """Decentralized proportional frequency damping, clipped to the input boxes."""
    if gain < 0:
        raise ValueError(f"controller gain must be nonnegative, got {gain}")
    return np.clip(np.asarray(u_ss, dtype=float) - gain * state.omega, model.u_min, model.u_max)


@dataclass
class NominalPoint:
    """Linearization point (x_I, u_I, zbar_N) of one subsystem at one step."""
    index: int
    x: np.ndarray
    u: np.ndarray
    zbar_n: np.ndarray

    def key(self) -> tuple:
        return (self.index, self.x.tobytes(), self.u.tobytes(), self.zbar_n.tobytes())


@dataclass
class StepOutcome:
    """Everything one sampling instant produced.

    `dz_prev` is the deviation at the start of the step (it enters the
    linearization through the neighbors), `dz` the one at its end.
    """
    t: int
    u: np.ndarray
    a: np.ndarray
    state_before: SystemState
    state: SystemState
    z: list
    zbar: list
    dz: list
    dz_prev: list
    nominal_points: list

    @property
    def delta_a(self) -> np.ndarray:
        return self.a - self.u


class ClosedLoop:
    """Plant, substitute controller and nominal-value exchange of all subsystems.

    Each subsystem integrates its own dynamics with the neighbors' actual
    coupling angles frozen at the start of the step, and predicts its nominal
    value with the undisturbed input and the neighbors' previous nominals.
    """

    def __init__(self, model: NetworkModel, dt=DT, gain=CONTROLLER_GAIN,
                 state: Optional[SystemState] = None, u_ss=None):
        self.model = model
        self.dt = dt
        self.gain = gain
        self.u_ss = steady_state_input(model) if u_ss is None else np.asarray(u_ss, dtype=float)
        self.t = 0
        self.reset(state)

    def reset(self, state: Optional[SystemState] = None):
        """Seat the loop on `state` with nominal frames equal to its coupling values."""
        self.state = SystemState.steady(self.model) if state is None else state.copy()
        self.nominal = coupling_frame(self.model, self.state)

    def control(self) -> np.ndarray:
        return controller_step(self.model, self.state, self.u_ss, self.gain)

    def advance(self, delta_a=None) -> StepOutcome:
        model = self.model
        u = self.control()
        a = u if delta_a is None else u + np.asarray(delta_a, dtype=float)
        z_now = coupling_frame(model, self.state)
        dz_prev = [z - zb for z, zb in zip(z_now, self.nominal)]

        parts, zbar_next, points = [], [], []
        for sub in model.partition:
            members = model.member_indices(sub.index)
            x_I = self.state.subsystem(model, sub.index)
            z_N = combine_neighbor_nominals(z_now, sub.neighbors)
            zbar_N = combine_neighbor_nominals(self.nominal, sub.neighbors)
            parts.append(step_subsystem(model, sub.index, x_I, a[members], z_N, self.dt))
            zbar_next.append(predict_nominal(model, sub.index, x_I, u[members], zbar_N, self.dt))
            points.append(NominalPoint(index=sub.index, x=x_I, u=u[members].copy(), zbar_n=zbar_N))

        state = self.state.with_subsystems(model, parts)
        if not state.is_finite():
            raise NonFiniteStateError("state became non-finite", step=self.t)
        z_next = coupling_frame(model, state)
        outcome = StepOutcome(
            t=self.t + 1, u=u, a=a,
            state_before=self.state, state=state,
            z=z_next, zbar=zbar_next,
            dz=[z - zb for z, zb in zip(z_next, zbar_next)],
            dz_prev=dz_prev, nominal_points=points,
        )
        self.state = state
        self.nominal = zbar_next
        self.t += 1
        return outcome


@dataclass
class Trajectory:
    """Per-step record of a simulation; row k holds the state after step k."""
    model: NetworkModel
    dt: float
    theta: list = field(default_factory=list)
    omega: list = field(default_factory=list)
    u: list = field(default_factory=list)
    a: list = field(default_factory=list)
    z: list = field(default_factory=list)
    zbar: list = field(default_factory=list)
    dz: list = field(default_factory=list)

    def append(self, outcome: StepOutcome):
        self.theta.append(outcome.state.theta)
        self.omega.append(outcome.state.omega)
        self.u.append(outcome.u)
        self.a.append(outcome.a)
        self.z.append(np.concatenate(outcome.z))
        self.zbar.append(np.concatenate(outcome.zbar))
        self.dz.append(np.concatenate(outcome.dz))

    def __len__(self):
        return len(self.theta)

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(1, len(self) + 1)

    def to_frame(self) -> pd.DataFrame:
        """Columns t, bus-wise theta/omega/u/a and subsystem-wise z/zbar/dz."""
        ids = [b.id for b in self.model.buses]
        z_names = [f"{sub.name}_{bus_id}" for sub in self.model.partition for bus_id in sub.coupling]
        columns = {"t": self.times}
        for name, rows, labels in (
            ("theta", self.theta, ids), ("omega", self.omega, ids), ("u", self.u, ids), ("a", self.a, ids),
            ("z", self.z, z_names), ("zbar", self.zbar, z_names), ("dz", self.dz, z_names),
        ):
            block = np.asarray(rows).reshape(len(self), len(labels))
            for col, label in enumerate(labels):
                columns[f"{name}_{label}"] = block[:, col]
        return pd.DataFrame(columns)


def simulate(model: NetworkModel, x0: Optional[SystemState] = None, schedule=None,
             dt=DT, steps=100, gain=CONTROLLER_GAIN) -> Trajectory:
    """Run the closed loop for `steps` sampling instants.

    Args:
        model (NetworkModel): plant
        x0 (SystemState, optional): initial state. Defaults to the steady state at theta0.
        schedule (mapping or callable, optional): time index -> attack vector da.
            The attack at index k acts during the step from k to k+1.
        dt (float, optional): sampling time. Defaults to DT.
        steps (int, optional): number of steps. Defaults to 100.
        gain (float, optional): controller gain. Defaults to CONTROLLER_GAIN.
    """
    loop = ClosedLoop(model, dt=dt, gain=gain, state=x0)
    trajectory = Trajectory(model=model, dt=dt)
    for k in range(steps):
        if schedule is None:
            delta_a = None
        elif callable(schedule):
            delta_a = schedule(k)
        else:
            delta_a = schedule.get(k)
        if delta_a is not None and np.shape(delta_a) != (model.d_u,):
            raise DimensionError(f"attack at step {k} has shape {np.shape(delta_a)}, expected ({model.d_u},)")
        trajectory.append(loop.advance(delta_a))
    return trajectory
