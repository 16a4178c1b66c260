import logging
import re
from dataclasses import asdict, dataclass, field, fields
from typing import Optional

import numpy as np

from constants import EPS_ORACLE_FRACTION
from ..modules.dynamics import ClosedLoop, NominalPoint, StepOutcome, SystemState, combine_neighbor_nominals, \
    steady_state_input
from ..modules.guarantees import CurvatureCache, GuaranteeReport, check_lemma2, evaluate_guarantees
from ..modules.identify import IdentificationResult, RelaxationBudget, detect, solve_l0_equality, solve_l0_relaxed
from ..modules.linalg import smallest_singular_value
from ..modules.network import NetworkModel, bus_ids, max_degree
from ..modules.sensitivity import SensitivityBundle, build_bundle
from ..utils.errors import DimensionError, NumericalError

logger = logging.getLogger(__name__)

PUBLISHED = "published"
CONTROLLABLE = "controllable"
ATTACK_POOLS = (PUBLISHED, CONTROLLABLE)


def series_cardinality(series) -> int:
    """Number of attacked inputs per step of an `attack_<k>` series."""
    match = re.fullmatch(r"attack_(\d+)", str(series))
    if match is None or int(match.group(1)) < 1:
        raise ValueError(f"unknown attack series '{series}', expected attack_<k> with k >= 1")
    return int(match.group(1))


def generate_attack(series, seed, model: NetworkModel, t, u, pool=None, magnitude_scale=1.0) -> np.ndarray:
    """Sparse attack da(t) of one step.

    The attacked inputs are drawn without replacement from `pool` (default: the
    controllable inputs) and each magnitude uniformly from
    [u_min - u, u_max - u], so a(u) stays inside the input box. Every (seed, t)
    pair has its own random stream, which keeps steps independent.
    """
    k = series_cardinality(series)
    pool = np.flatnonzero(model.controllable_mask()) if pool is None else np.asarray(pool, dtype=int)
    if k > len(pool):
        raise ValueError(f"{series} needs {k} attackable inputs, only {len(pool)} available")
    u = np.asarray(u, dtype=float)
    rng = np.random.default_rng([int(seed), int(t)])
    idx = np.sort(rng.choice(pool, size=k, replace=False))
    delta_a = np.zeros(model.d_u)
    delta_a[idx] = magnitude_scale * rng.uniform(model.u_min[idx] - u[idx], model.u_max[idx] - u[idx])
    return delta_a


@dataclass
class AttackScenario:
    series: str
    seed: int
    pool: np.ndarray
    magnitude_scale: float = 1.0

    @property
    def cardinality(self) -> int:
        return series_cardinality(self.series)

    def draw(self, model: NetworkModel, u, t) -> np.ndarray:
        return generate_attack(self.series, self.seed, model, t, u, self.pool, self.magnitude_scale)


@dataclass
class StepRecord:
    """One sampling instant of a series.

    Supports are 1-based bus ids. Optional fields stay None on undetected
    steps and where a guarantee does not apply.
    """
    t: int
    time: float
    detected: bool
    max_deviation: float
    true_support: tuple = ()
    support_equality: tuple = ()
    support_relaxed: tuple = ()
    cardinality_equality: Optional[int] = None
    cardinality_relaxed: Optional[int] = None
    residual_equality: Optional[float] = None
    residual_relaxed: Optional[float] = None
    enumerated_equality: Optional[int] = None
    enumerated_relaxed: Optional[int] = None
    superset_correct: Optional[bool] = None
    exact_correct: Optional[bool] = None
    excess_equality: Optional[int] = None
    excess_relaxed: Optional[int] = None
    applicable: bool = False
    reason: str = ""
    condition_thm1: Optional[bool] = None
    condition_thm2: Optional[bool] = None
    lhs: Optional[float] = None
    delta: Optional[float] = None
    delta_tilde: Optional[float] = None
    epsilon: Optional[float] = None
    sigma_min: Optional[float] = None
    K: Optional[float] = None
    remainder: Optional[float] = None
    remainder_bound: Optional[float] = None
    true_attack_feasible_relaxed: Optional[bool] = None
    distance_equality: Optional[float] = None
    lemma2_holds: Optional[bool] = None

    @classmethod
    def field_names(cls) -> list:
        return [f.name for f in fields(cls)]


@dataclass
class StepResult:
    record: StepRecord
    outcome: StepOutcome
    bundle: Optional[SensitivityBundle] = None
    equality: Optional[IdentificationResult] = None
    relaxed: Optional[IdentificationResult] = None
    report: Optional[GuaranteeReport] = None

    def to_dict(self) -> dict:
        return {
            "record": asdict(self.record),
            "equality": None if self.equality is None else self.equality.to_dict(),
            "relaxed": None if self.relaxed is None else self.relaxed.to_dict(),
            "guarantees": None if self.report is None else self.report.to_dict(),
        }


ROWS = ("Cond.", "not Cond.")
COLUMNS = ("Ident.", "not Ident.")


def _largest_remainder(counts, total=10000) -> list:
    """Integer shares of `total` proportional to counts, summing exactly to total."""
    denominator = sum(counts)
    if denominator == 0:
        return [0] * len(counts)
    shares = [divmod(c * total, denominator) for c in counts]
    units = [q for q, _ in shares]
    order = sorted(range(len(counts)), key=lambda i: (-shares[i][1], i))
    for i in order[:total - sum(units)]:
        units[i] += 1
    return units


@dataclass
class FourfoldTable:
    """Sufficient condition crossed with identification over the detected steps.

    Cells are in row order (Cond. Ident., Cond. not Ident., not Cond. Ident.,
    not Cond. not Ident.).
    """
    name: str
    counts: tuple
    denominator: int

    @property
    def percentages(self) -> tuple:
        return tuple(u / 100.0 for u in _largest_remainder(list(self.counts)))

    @property
    def identified_rate(self) -> float:
        p = self.percentages
        return round(p[0] + p[2], 2)

    @property
    def condition_rate(self) -> float:
        p = self.percentages
        return round(p[0] + p[1], 2)

    def to_dict(self) -> dict:
        p = self.percentages
        c = self.counts
        return {
            "name": self.name,
            "denominator": self.denominator,
            "rows": list(ROWS),
            "columns": list(COLUMNS),
            "counts": [[c[0], c[1]], [c[2], c[3]]],
            "percentages": [[p[0], p[1]], [p[2], p[3]]],
            "identified": self.identified_rate,
            "condition": self.condition_rate,
        }

    def __str__(self):
        p = self.percentages
        return (f"{self.name} (n={self.denominator}): "
                f"{ROWS[0]} {p[0]:.2f}% / {p[1]:.2f}%, {ROWS[1]} {p[2]:.2f}% / {p[3]:.2f}%")


SUPERSET = "superset"
EXACT = "exact"


def tabulate_fourfold(records, which=SUPERSET) -> FourfoldTable:
    """Fourfold table of the superset condition against superset identification ("superset")
    or of the exact condition against exact identification ("exact").

    A detected step whose guarantee does not apply counts as condition not met.
    """
    if which == SUPERSET:
        cond_of, ident_of = (lambda r: r.condition_thm1), (lambda r: r.superset_correct)
    elif which == EXACT:
        cond_of, ident_of = (lambda r: r.condition_thm2), (lambda r: r.exact_correct)
    else:
        raise ValueError(f"unknown table '{which}', expected '{SUPERSET}' or '{EXACT}'")
    counts = [0, 0, 0, 0]
    detected = [r for r in records if r.detected]
    for r in detected:
        row = 0 if cond_of(r) else 1
        col = 0 if ident_of(r) else 1
        counts[2 * row + col] += 1
    return FourfoldTable(name=which, counts=tuple(counts), denominator=len(detected))


def mean_excess(records, problem="equality") -> Optional[float]:
    """Mean |supp(a*) minus supp(a_hat)| over detected steps; None without detections."""
    if problem not in ("equality", "relaxed"):
        raise ValueError(f"unknown problem '{problem}'")
    values = [getattr(r, f"excess_{problem}") for r in records if r.detected]
    values = [v for v in values if v is not None]
    if not values:
        return None
    return float(np.mean(values))


def summarize(records) -> dict:
    superset = tabulate_fourfold(records, SUPERSET)
    exact = tabulate_fourfold(records, EXACT)
    return {
        "steps": len(records),
        "detections": superset.denominator,
        "applicable": sum(1 for r in records if r.detected and r.applicable),
        "superset_identified": superset.identified_rate,
        "exact_identified": exact.identified_rate,
        "condition_thm1": superset.condition_rate,
        "condition_thm2": exact.condition_rate,
        "mean_excess_equality": mean_excess(records, "equality"),
        "mean_excess_relaxed": mean_excess(records, "relaxed"),
    }


@dataclass
class ExperimentOutput:
    """
    Output of one attack series.

    Args:
        series (str): series name, e.g. attack_1
        seed (int): random seed of the attack draws
        records (list of StepRecord): one per step
        superset (FourfoldTable): superset condition against the equality problem
        exact (FourfoldTable): exact condition against the relaxed problem
        summary (dict): headline numbers
    """
    series: str
    seed: int
    records: list
    superset: FourfoldTable
    exact: FourfoldTable
    summary: dict = field(default_factory=dict)


def nominal_points(model: NetworkModel, state: SystemState, u, frame) -> list:
    """Linearization points of all subsystems for the step leaving `state`."""
    points = []
    for sub in model.partition:
        members = model.member_indices(sub.index)
        points.append(NominalPoint(
            index=sub.index, x=state.subsystem(model, sub.index), u=np.asarray(u, dtype=float)[members].copy(),
            zbar_n=combine_neighbor_nominals(frame, sub.neighbors),
        ))
    return points


def _subset_excess(found, true) -> int:
    return len(set(found) - set(true))


class IdentificationPipeline:
    """Closed loop, detection, identification and guarantee checks of a network.

    Args:
        model (NetworkModel): plant
        config: run configuration (see `attackid.utils.loader.load_config`)
    """

    def __init__(self, model: NetworkModel, config):
        self.model = model
        self.config = config
        self.M = max_degree(model)
        self.u_ss = steady_state_input(model)
        self.initial_state = SystemState.steady(model)
        curvature = config.curvature
        self.curvature = CurvatureCache(radius=curvature.radius, samples=curvature.samples,
                                        fd_step=curvature.fd_step, inflation=curvature.inflation, seed=config.seed)
        self._bundles = {}
        self._pool = None

    def new_loop(self, state: Optional[SystemState] = None) -> ClosedLoop:
        return ClosedLoop(self.model, dt=self.config.dt, gain=self.config.controller_gain,
                          state=self.initial_state if state is None else state, u_ss=self.u_ss)

    def bundle(self, points) -> SensitivityBundle:
        """Published sensitivities at `points`, cached when the loop resets every step."""
        if not self.config.reset_each_step:
            return build_bundle(self.model, points, self.config.dt, self.config.tol_rank)
        key = tuple(p.key() for p in points)
        if key in self._bundles:
            logger.debug("sensitivity cache hit")
        else:
            self._bundles[key] = build_bundle(self.model, points, self.config.dt, self.config.tol_rank)
        cached = self._bundles[key]
        return SensitivityBundle(subsystems=cached.subsystems, partition=cached.partition, d_u=cached.d_u)

    def attack_pool(self) -> np.ndarray:
        """Inputs the attacker draws from, 0-based."""
        if self._pool is None:
            controllable = self.model.controllable_mask()
            if self.config.attack_pool == CONTROLLABLE:
                self._pool = np.flatnonzero(controllable)
            elif self.config.attack_pool == PUBLISHED:
                loop = self.new_loop()
                points = nominal_points(self.model, loop.state, loop.control(), loop.nominal)
                published = np.zeros(self.model.d_u, dtype=bool)
                published[self.bundle(points).column_map] = True
                self._pool = np.flatnonzero(controllable & published)
            else:
                raise ValueError(f"unknown attack pool '{self.config.attack_pool}', expected one of {ATTACK_POOLS}")
            logger.info(f"attack pool ({self.config.attack_pool}): buses {list(bus_ids(self._pool))}")
        return self._pool

    def evaluate(self, outcome: StepOutcome, delta_a, t) -> StepResult:
        """Detection, identification and guarantees of one simulated step."""
        config = self.config
        verdict = detect(outcome.dz, config.tau_d)
        true_support = bus_ids(np.flatnonzero(delta_a != 0.0))
        record = StepRecord(t=t, time=round(t * config.dt, 12), detected=verdict.alarm,
                            max_deviation=float(np.max(verdict.norms, initial=0.0)), true_support=true_support)
        logger.debug(f"step {t}: deviations {np.array2string(verdict.norms, precision=3)}")
        if not verdict.alarm:
            return StepResult(record=record, outcome=outcome)

        bundle = self.bundle(outcome.nominal_points)
        S, b = bundle.assemble(outcome.dz, outcome.dz_prev)
        blocks = bundle.blocks
        equality = solve_l0_equality(S, b, config.tol_feas, blocks, bundle, config.eps_i)

        x_true, unpublished = bundle.scale(delta_a)
        K_I = [self.curvature.get(self.model, p, s, config.dt).value
               for p, s in zip(outcome.nominal_points, bundle.subsystems)]
        sigma_min = smallest_singular_value(S)
        dz_prev = np.concatenate(outcome.dz_prev)
        report = evaluate_guarantees(S, b, K_I, self.M, sigma_min, x_true, dz_prev, unpublished=unpublished,
                                     scales=bundle.scales, epsilon=config.epsilon, eps_i=config.eps_i,
                                     fraction=EPS_ORACLE_FRACTION, caused=np.concatenate(outcome.dz))
        if len(unpublished):
            logger.warning(f"step {t}: attacked inputs {list(bus_ids(unpublished))} have no published column, "
                           f"guarantees do not apply")
        elif report.applicable and np.any(np.abs(dz_prev) > self.curvature.radius):
            report.applicable = False
            report.condition_thm1 = report.condition_thm2 = None
            report.reason = "coupling deviation outside curvature box"

        epsilon = report.epsilon if config.epsilon is None else config.epsilon
        if epsilon is not None and epsilon > 0 and sigma_min > 0:
            relaxed = solve_l0_relaxed(S, b, RelaxationBudget(epsilon, sigma_min), blocks, bundle,
                                       config.eps_i, config.tol_feas)
        else:
            logger.warning(f"step {t}: relaxation budget degenerate, "
                           f"the relaxed problem falls back to the equality one")
            relaxed = equality

        truth = set(true_support)
        found_eq = bus_ids(equality.support)
        found_rel = bus_ids(relaxed.support)
        report.superset_identified = truth <= set(found_eq)
        report.exact_identified = truth == set(found_rel)
        if report.exact_identified and not report.superset_identified:
            logger.warning(f"step {t}: relaxed problem found the attack set exactly but the equality problem "
                           f"missed part of it")
        if report.applicable:
            report.distance_equality, holds = check_lemma2(x_true, equality.x, report.epsilon)
            report.distance_relaxed, _ = check_lemma2(x_true, relaxed.x, report.epsilon)
            report.extras["lemma2_holds"] = holds

        record.support_equality = found_eq
        record.support_relaxed = found_rel
        record.cardinality_equality = equality.cardinality
        record.cardinality_relaxed = relaxed.cardinality
        record.residual_equality = equality.residual
        record.residual_relaxed = relaxed.residual
        record.enumerated_equality = equality.enumerated_count
        record.enumerated_relaxed = relaxed.enumerated_count
        record.superset_correct = report.superset_identified
        record.exact_correct = report.exact_identified
        record.excess_equality = _subset_excess(found_eq, truth)
        record.excess_relaxed = _subset_excess(found_rel, truth)
        record.applicable = report.applicable
        record.reason = report.reason
        record.condition_thm1 = report.condition_thm1
        record.condition_thm2 = report.condition_thm2
        record.lhs = report.lhs
        record.delta = report.delta
        record.delta_tilde = report.delta_tilde
        record.epsilon = report.epsilon
        record.sigma_min = report.sigma_min
        record.K = report.K
        record.remainder = report.remainder
        record.remainder_bound = report.remainder_bound
        record.true_attack_feasible_relaxed = report.true_attack_feasible_relaxed
        record.distance_equality = report.distance_equality
        record.lemma2_holds = report.extras.get("lemma2_holds")
        return StepResult(record=record, outcome=outcome, bundle=bundle, equality=equality, relaxed=relaxed,
                          report=report)

    def identify_step(self, state: SystemState, delta_a, t=0) -> StepResult:
        """One-shot trial: seat the loop on `state`, inject `delta_a` for one step and evaluate."""
        delta_a = np.asarray(delta_a, dtype=float)
        if delta_a.shape != (self.model.d_u,):
            raise DimensionError(f"attack has shape {delta_a.shape}, expected ({self.model.d_u},)")
        loop = self.new_loop(state)
        return self._guarded(lambda: self.evaluate(loop.advance(delta_a), delta_a, t), t)

    @staticmethod
    def _guarded(fn, t):
        try:
            return fn()
        except NumericalError as exc:
            if exc.step is not None:
                raise
            raise type(exc)(str(exc), step=t) from exc

    def run_series(self, series=None, seed=None, steps=None) -> ExperimentOutput:
        """Apply a fresh random attack at every step and evaluate it.

        With `reset_each_step` the loop returns to the initial state before each
        step, so steps are independent trials; otherwise it keeps running on the
        attacked trajectory.
        """
        config = self.config
        series = config.series if series is None else series
        seed = config.seed if seed is None else seed
        steps = config.steps if steps is None else steps
        if steps < 1:
            raise ValueError(f"steps must be at least 1, got {steps}")
        scenario = AttackScenario(series=series, seed=seed, pool=self.attack_pool(),
                                  magnitude_scale=config.magnitude_scale)
        mode = "reset" if config.reset_each_step else "continuous"
        logger.info(f"--- {series}, seed {seed}, {steps} steps, {mode} mode ---")

        loop = self.new_loop()
        records = []
        for t in range(steps):
            if config.reset_each_step:
                loop.reset(self.initial_state)
            delta_a = scenario.draw(self.model, loop.control(), t)
            result = self._guarded(lambda: self.evaluate(loop.advance(delta_a), delta_a, t), t)
            records.append(result.record)

        output = ExperimentOutput(series=series, seed=seed, records=records,
                                  superset=tabulate_fourfold(records, SUPERSET),
                                  exact=tabulate_fourfold(records, EXACT))
        output.summary = summarize(records)
        logger.info(f"{series}: {output.superset.denominator} of {steps} steps detected")
        logger.info(str(output.superset))
        logger.info(str(output.exact))
        return output
