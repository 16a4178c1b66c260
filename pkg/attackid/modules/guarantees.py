import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from constants import DT, EPS_I, EPS_ORACLE_FRACTION, K_BOX_RADIUS, K_FD_STEP, K_INFLATION, K_SAMPLES
from .dual import Dual
from .dynamics import NominalPoint
from .sensitivity import SubsystemSensitivity, eval_zeta
from ..utils.errors import DegenerateCurvatureError

logger = logging.getLogger(__name__)


@dataclass
class CurvatureEstimate:
    """Sampled bound on the second-order partials of a map.

    `raw` is the largest sampled value, `value` the inflated one used as K.
    """
    value: float
    raw: float
    n_points: int
    inflation: float


def _jacobian(fn: Callable, v) -> np.ndarray:
    out = fn(Dual.variable(v))
    if not isinstance(out, Dual):
        return np.zeros((len(np.atleast_1d(out)), len(v)))
    return out.grad.reshape(len(out), len(v))


def second_partials(fn: Callable, v, h=K_FD_STEP) -> np.ndarray:
    """H[:, i, j] ~ d^2 fn / dv_i dv_j by central differences of forward-mode Jacobians."""
    v = np.asarray(v, dtype=float)
    n = len(v)
    J0 = _jacobian(fn, v)
    H = np.zeros((J0.shape[0], n, n))
    for j in range(n):
        e = np.zeros(n)
        e[j] = h
        H[:, :, j] = (_jacobian(fn, v + e) - _jacobian(fn, v - e)) / (2.0 * h)
    return 0.5 * (H + H.transpose(0, 2, 1))


def curvature_at(fn: Callable, v, h=K_FD_STEP) -> float:
    """max over |alpha| = 2 of ||d^alpha fn(v)||_2."""
    if len(v) == 0:
        return 0.0
    H = second_partials(fn, v, h)
    if H.shape[0] == 0:
        return 0.0
    return float(np.max(np.linalg.norm(H, axis=0)))


def estimate_curvature(fn: Callable, center, lower, upper, samples=K_SAMPLES, rng=None,
                       fd_step=K_FD_STEP, inflation=K_INFLATION) -> CurvatureEstimate:
    """Largest curvature over the center, the two extreme corners and random box points.

    Random points are drawn one at a time, so with a fixed seed the first n
    samples of a larger run are the samples of a smaller one.
    """
    if samples < 1:
        raise ValueError(f"need at least one sample, got {samples}")
    rng = np.random.default_rng(0) if rng is None else rng
    center = np.asarray(center, dtype=float)
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    points = [center, lower, upper] + [rng.uniform(lower, upper) for _ in range(samples)]
    raw = max(curvature_at(fn, p, fd_step) for p in points)
    return CurvatureEstimate(value=inflation * raw, raw=raw, n_points=len(points), inflation=inflation)


def subsystem_zeta(model, point: NominalPoint, sensitivity: SubsystemSensitivity, dt=DT) -> Callable:
    """zeta_I as a function of v = (normalized published inputs, neighbor couplings)."""
    P = sensitivity.selection()
    r = sensitivity.r
    scales = sensitivity.scales

    def fn(v):
        a = point.u + P @ (v[:r] / scales)
        return eval_zeta(model, point.index, point.x, a, v[r:], dt)

    return fn


def curvature_box(model, point: NominalPoint, sensitivity: SubsystemSensitivity, radius=K_BOX_RADIUS):
    """(center, lower, upper) in the coordinates of `subsystem_zeta`.

    Published inputs range over their input box widened to radius around the
    nominal input, neighbor couplings over zbar_N +- radius.
    """
    columns = sensitivity.columns
    u = point.u[sensitivity.local_columns]
    lo = np.minimum(u - radius, model.u_min[columns])
    hi = np.maximum(u + radius, model.u_max[columns])
    center = np.concatenate([np.zeros(sensitivity.r), point.zbar_n])
    lower = np.concatenate([sensitivity.scales * (lo - u), point.zbar_n - radius])
    upper = np.concatenate([sensitivity.scales * (hi - u), point.zbar_n + radius])
    return center, lower, upper


def estimate_K(model, point: NominalPoint, sensitivity: SubsystemSensitivity, radius=K_BOX_RADIUS,
               samples=K_SAMPLES, dt=DT, seed=0, fd_step=K_FD_STEP, inflation=K_INFLATION) -> CurvatureEstimate:
    """K_I of one subsystem in the coordinates the solver sees."""
    if radius <= 0:
        raise ValueError(f"box radius must be positive, got {radius}")
    center, lower, upper = curvature_box(model, point, sensitivity, radius)
    estimate = estimate_curvature(subsystem_zeta(model, point, sensitivity, dt), center, lower, upper,
                                  samples=samples, rng=np.random.default_rng([seed, point.index]),
                                  fd_step=fd_step, inflation=inflation)
    logger.debug(f"subsystem {point.index}: K_I = {estimate.value:.4e} (sampled {estimate.raw:.4e})")
    return estimate


class CurvatureCache:
    """K_I per nominal point; in reset mode the point repeats every step."""

    def __init__(self, radius=K_BOX_RADIUS, samples=K_SAMPLES, fd_step=K_FD_STEP, inflation=K_INFLATION, seed=0):
        self.radius = radius
        self.samples = samples
        self.fd_step = fd_step
        self.inflation = inflation
        self.seed = seed
        self._store = {}

    def __len__(self):
        return len(self._store)

    def get(self, model, point: NominalPoint, sensitivity: SubsystemSensitivity, dt=DT) -> CurvatureEstimate:
        key = point.key() + (sensitivity.local_columns.tobytes(), dt)
        if key not in self._store:
            self._store[key] = estimate_K(model, point, sensitivity, self.radius, self.samples, dt,
                                          self.seed, self.fd_step, self.inflation)
        return self._store[key]


def local_remainder(model, point: NominalPoint, sensitivity: SubsystemSensitivity, dx, dz_n, dt=DT) -> float:
    """||R_I||_2 of the first-order expansion of zeta_I around the nominal point.

    Args:
        dx (np.ndarray): deviation of the normalized published inputs
        dz_n (np.ndarray): deviation of the neighbor couplings
    """
    fn = subsystem_zeta(model, point, sensitivity, dt)
    v0 = np.concatenate([np.zeros(sensitivity.r), point.zbar_n])
    dv = np.concatenate([dx, dz_n])
    linear = sensitivity.reduced @ dx + sensitivity.S_n @ dz_n
    return float(np.linalg.norm(fn(v0 + dv) - fn(v0) - linear))


def remainder_bound(K_I, delta_a, delta_z_n) -> float:
    """(K_I / 2) (||da_I||_1 + ||dz_N||_1)^2"""
    if K_I < 0:
        raise ValueError(f"K must be nonnegative, got {K_I}")
    return 0.5 * K_I * (np.sum(np.abs(delta_a)) + np.sum(np.abs(delta_z_n))) ** 2


def global_remainder_bound(K, M, delta_a, delta_z) -> float:
    """(K / 2) (||da||_1 + M ||dz||_1)^2"""
    if K < 0:
        raise ValueError(f"K must be nonnegative, got {K}")
    return 0.5 * K * (np.sum(np.abs(delta_a)) + M * np.sum(np.abs(delta_z))) ** 2


def compute_deltas(epsilon, sigma_min, K):
    """(delta, delta_tilde) = (sqrt(2 eps sigma / K), sqrt(eps sigma / K))."""
    if K == 0:
        raise DegenerateCurvatureError("K = 0: the map is linear and both conditions hold for any attack")
    if epsilon <= 0 or sigma_min <= 0 or K < 0:
        raise ValueError(f"need epsilon, sigma_min, K > 0, got {epsilon}, {sigma_min}, {K}")
    return math.sqrt(2.0 * epsilon * sigma_min / K), math.sqrt(epsilon * sigma_min / K)


def oracle_epsilon(delta_a_n, scales, eps_i=EPS_I, fraction=EPS_ORACLE_FRACTION) -> Optional[float]:
    """Largest safe epsilon for a known attack, scaled by `fraction`.

    An attacked entry must stay above the identification threshold after an
    epsilon perturbation, so the margin is |da_i| - eps_i * scale_i in
    normalized coordinates. None if there is no attack or no margin.
    """
    delta_a_n = np.asarray(delta_a_n, dtype=float)
    attacked = delta_a_n != 0.0
    if not np.any(attacked):
        return None
    margin = np.min(np.abs(delta_a_n[attacked]) - eps_i * np.asarray(scales, dtype=float)[attacked])
    epsilon = fraction * margin
    return float(epsilon) if epsilon > 0 else None


def sufficient_condition_lhs(delta_a_n, delta_z, M) -> float:
    """||da||_1 + M ||dz||_1"""
    return float(np.sum(np.abs(delta_a_n)) + M * np.sum(np.abs(delta_z)))


@dataclass
class ConditionCheck:
    applicable: bool
    met: Optional[bool] = None
    epsilon: Optional[float] = None
    delta: Optional[float] = None
    lhs: Optional[float] = None
    reason: str = ""


def _check(which, K, M, sigma_min, delta_a_n, delta_z, epsilon, scales, eps_i, fraction) -> ConditionCheck:
    delta_a_n = np.asarray(delta_a_n, dtype=float)
    if not np.any(delta_a_n != 0.0):
        return ConditionCheck(applicable=False, reason="no attack")
    if epsilon is None:
        scales = np.ones_like(delta_a_n) if scales is None else scales
        epsilon = oracle_epsilon(delta_a_n, scales, eps_i, fraction)
        if epsilon is None:
            return ConditionCheck(applicable=False, reason="attack below identification threshold")
    lhs = sufficient_condition_lhs(delta_a_n, delta_z, M)
    if sigma_min <= 0:
        return ConditionCheck(applicable=False, epsilon=epsilon, lhs=lhs, reason="sigma_min = 0")
    if K == 0:
        return ConditionCheck(applicable=True, met=True, epsilon=epsilon, delta=math.inf, lhs=lhs,
                              reason="linear map")
    delta, delta_tilde = compute_deltas(epsilon, sigma_min, K)
    bound = delta if which == 1 else delta_tilde
    return ConditionCheck(applicable=True, met=bool(lhs <= bound), epsilon=epsilon, delta=bound, lhs=lhs)


def check_theorem1(K, M, sigma_min, delta_a_n, delta_z, epsilon=None, scales=None, eps_i=EPS_I,
                   fraction=EPS_ORACLE_FRACTION) -> ConditionCheck:
    """Superset condition ||da||_1 + M ||dz||_1 <= delta.

    Without an explicit epsilon the oracle epsilon of the true attack is used.
    """
    return _check(1, K, M, sigma_min, delta_a_n, delta_z, epsilon, scales, eps_i, fraction)


def check_theorem2(K, M, sigma_min, delta_a_n, delta_z, epsilon=None, scales=None, eps_i=EPS_I,
                   fraction=EPS_ORACLE_FRACTION) -> ConditionCheck:
    """Exact-identification condition, the same with delta_tilde."""
    return _check(2, K, M, sigma_min, delta_a_n, delta_z, epsilon, scales, eps_i, fraction)


def check_lemma2(delta_a_n, x_star, epsilon) -> tuple:
    """(||da - x*||_2, whether it is within epsilon)."""
    distance = float(np.linalg.norm(np.asarray(delta_a_n) - np.asarray(x_star)))
    return distance, bool(epsilon is not None and distance <= epsilon)


@dataclass
class GuaranteeReport:
    K_I: list
    K: float
    M: int
    sigma_min: float
    epsilon: Optional[float] = None
    delta: Optional[float] = None
    delta_tilde: Optional[float] = None
    lhs: Optional[float] = None
    condition_thm1: Optional[bool] = None
    condition_thm2: Optional[bool] = None
    applicable: bool = False
    reason: str = ""
    remainder: Optional[float] = None
    remainder_bound: Optional[float] = None
    true_attack_feasible_relaxed: Optional[bool] = None
    distance_equality: Optional[float] = None
    distance_relaxed: Optional[float] = None
    superset_identified: Optional[bool] = None
    exact_identified: Optional[bool] = None
    extras: dict = field(default_factory=dict)

    @property
    def radius(self) -> Optional[float]:
        if self.epsilon is None:
            return None
        return self.epsilon * self.sigma_min / 2.0

    def to_dict(self) -> dict:
        out = asdict(self)
        out["K_I"] = [float(k) for k in self.K_I]
        return out


def evaluate_guarantees(S, b, K_I, M, sigma_min, delta_a_n, delta_z, unpublished=(), scales=None,
                        epsilon=None, eps_i=EPS_I, fraction=EPS_ORACLE_FRACTION, caused=None) -> GuaranteeReport:
    """Assemble the report of one detected step from the true attack.

    Args:
        S, b: the normalized reduced system the solver sees
        K_I (list): curvature per subsystem
        M (int): maximum degree
        sigma_min (float): smallest singular value of S
        delta_a_n (np.ndarray): true attack in the solver's coordinates
        delta_z (np.ndarray): coupling deviations entering the expansion
        unpublished (sequence): attacked inputs without a published column
        scales (np.ndarray, optional): column norms for the oracle epsilon
        epsilon (float, optional): user epsilon; None selects the oracle
        caused (np.ndarray, optional): coupling deviations the step itself produced.
            They join `delta_z` in the sufficient-condition lhs only; the remainder
            bound keeps the deviations that enter the expansion.
    """
    K = float(max(K_I, default=0.0))
    report = GuaranteeReport(K_I=list(K_I), K=K, M=M, sigma_min=float(sigma_min))
    delta_a_n = np.asarray(delta_a_n, dtype=float)
    report.remainder = float(np.linalg.norm(np.asarray(b) - np.asarray(S) @ delta_a_n))
    report.remainder_bound = global_remainder_bound(K, M, delta_a_n, delta_z)
    if len(unpublished):
        report.reason = "attacked input without published column"
        return report

    lhs_z = np.asarray(delta_z, dtype=float).ravel()
    if caused is not None:
        lhs_z = np.concatenate([lhs_z, np.asarray(caused, dtype=float).ravel()])
    first = check_theorem1(K, M, sigma_min, delta_a_n, lhs_z, epsilon, scales, eps_i, fraction)
    report.epsilon = first.epsilon
    report.lhs = first.lhs
    if not first.applicable:
        report.reason = first.reason
        return report
    second = check_theorem2(K, M, sigma_min, delta_a_n, lhs_z, first.epsilon, scales, eps_i, fraction)
    report.applicable = True
    report.reason = first.reason
    report.delta = first.delta
    report.delta_tilde = second.delta
    report.condition_thm1 = first.met
    report.condition_thm2 = second.met
    report.true_attack_feasible_relaxed = bool(report.remainder <= report.radius)
    return report
