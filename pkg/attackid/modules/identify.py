import logging
from dataclasses import dataclass, field
from itertools import combinations
from typing import Optional

import numpy as np

from constants import EPS_I, TOL_FEAS
from .linalg import least_squares
from ..utils.errors import DimensionError, NumericalError

logger = logging.getLogger(__name__)

EQUALITY = "equality"
RELAXED = "relaxed"


@dataclass
class DetectionVerdict:
    alarm: bool
    norms: np.ndarray
    tau_d: float

    @property
    def alarmed_subsystems(self) -> tuple:
        return tuple(int(i) for i in np.flatnonzero(self.norms > self.tau_d))


def detect(delta_z, tau_d) -> DetectionVerdict:
    """Alarm iff ||dz_I||_inf > tau_d for some subsystem I."""
    if tau_d <= 0:
        raise ValueError(f"detection threshold must be positive, got {tau_d}")
    norms = np.array([np.max(np.abs(dz)) if np.size(dz) else 0.0 for dz in delta_z])
    return DetectionVerdict(alarm=bool(np.any(norms > tau_d)), norms=norms, tau_d=tau_d)


@dataclass(frozen=True)
class RelaxationBudget:
    """Feasibility radius eps * sigma_min / 2 of the relaxed problem."""
    epsilon: float
    sigma_min: float

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if not self.sigma_min > 0:
            raise ValueError(f"sigma_min must be positive, got {self.sigma_min}")

    @property
    def radius(self) -> float:
        return self.epsilon * self.sigma_min / 2.0


@dataclass
class IdentificationResult:
    """Solution of an identification problem.

    `x` lives in the solver's reduced normalized coordinates and is nonzero
    only on `columns`; `delta_a` is the same solution in input coordinates and
    `support` its thresholded attack set (0-based input indices).
    """
    x: np.ndarray
    delta_a: np.ndarray
    columns: tuple
    support: tuple
    residual: float
    kind: str
    tolerance: float
    enumerated_count: int
    feasible: bool = True
    eps_i: float = EPS_I

    @property
    def cardinality(self) -> int:
        return len(self.columns)

    def to_dict(self) -> dict:
        return {
            "support": [i + 1 for i in self.support],
            "values": self.delta_a.tolist(),
            "residual": self.residual,
            "cardinality": self.cardinality,
            "kind": self.kind,
            "enumerated_count": self.enumerated_count,
            "feasible": self.feasible,
        }


def extract_support(delta_a, eps_i=EPS_I) -> tuple:
    """{i : |da_i| > eps_i}, 0-based."""
    if eps_i <= 0:
        raise ValueError(f"identification threshold must be positive, got {eps_i}")
    return tuple(int(i) for i in np.flatnonzero(np.abs(np.asarray(delta_a, dtype=float)) > eps_i))


@dataclass
class _BlockTable:
    """Best (residual^2, support) per cardinality of one diagonal block."""
    S: np.ndarray
    b: np.ndarray
    offset: int
    best: list = field(default_factory=list)
    solves: int = 0

    @property
    def r(self) -> int:
        return self.S.shape[1]

    def extend(self, k):
        while len(self.best) <= min(k, self.r):
            level = len(self.best)
            if level == 0:
                self.best.append((float(self.b @ self.b), ()))
                continue
            winner = None
            for support in combinations(range(self.r), level):
                x, _ = least_squares(self.S[:, support], self.b)
                self.solves += 1
                res = self.b - self.S[:, support] @ x
                candidate = (float(res @ res), tuple(self.offset + c for c in support))
                if winner is None or candidate < winner:
                    winner = candidate
            self.best.append(winner)


def _merge(tables, k):
    """Best total (residual^2, support) with exactly k columns over all blocks."""
    merged = {0: (0.0, ())}
    for table in tables:
        table.extend(k)
        nxt = {}
        for k1, (res1, sup1) in merged.items():
            for k2, (res2, sup2) in enumerate(table.best):
                total = k1 + k2
                if total > k:
                    break
                candidate = (res1 + res2, sup1 + sup2)
                if total not in nxt or candidate < nxt[total]:
                    nxt[total] = candidate
        merged = nxt
    return merged.get(k)


def solve_l0(S, b, tolerance, kind=EQUALITY, blocks=None, bundle=None, eps_i=EPS_I) -> IdentificationResult:
    """min ||x||_0 s.t. ||b - S x||_2 <= tolerance, by cardinality-ordered enumeration.

    Supports are enumerated per diagonal block and merged by cardinality, which
    gives the same winner as enumerating global supports: first feasible
    cardinality, then smallest residual, then lexicographically smallest
    support. On each candidate support x is the least-squares solution.

    Args:
        S (np.ndarray): d_z x r, full column rank on every block
        b (np.ndarray): right-hand side
        tolerance (float): feasibility radius
        kind (str, optional): EQUALITY or RELAXED, recorded in the result
        blocks (list, optional): (row slice, column slice) per diagonal block.
            Defaults to one block spanning S.
        bundle (SensitivityBundle, optional): maps x back to input coordinates.
            Without it delta_a = x.
        eps_i (float, optional): identification threshold. Defaults to EPS_I.
    """
    S = np.asarray(S, dtype=float)
    b = np.asarray(b, dtype=float)
    m, r = S.shape
    if b.shape != (m,):
        raise DimensionError(f"b has shape {b.shape}, expected ({m},)")
    if blocks is None:
        blocks = [(slice(0, m), slice(0, r))]

    covered = np.zeros(m, dtype=bool)
    tables = []
    for rows, cols in blocks:
        covered[rows] = True
        tables.append(_BlockTable(S=S[rows, cols], b=b[rows], offset=cols.start))
    fixed = float(b[~covered] @ b[~covered])

    chosen = None
    feasible = False
    for k in range(r + 1):
        best = _merge(tables, k)
        if best is None:
            continue
        chosen = best
        if np.sqrt(best[0] + fixed) <= tolerance:
            feasible = True
            break

    columns = chosen[1]
    x = np.zeros(r)
    for (rows, cols), table in zip(blocks, tables):
        local = [c - cols.start for c in columns if cols.start <= c < cols.stop]
        if local:
            x[[cols.start + c for c in local]], _ = least_squares(table.S[:, local], table.b)
    residual = float(np.linalg.norm(b - S @ x))
    solves = sum(t.solves for t in tables)
    if feasible and residual > tolerance * (1.0 + 1e-9) + 1e-15:
        raise NumericalError(f"post-hoc check failed: residual {residual:.3e} exceeds {tolerance:.3e}")
    if not feasible:
        logger.warning(f"{kind} problem infeasible: residual {residual:.3e} > {tolerance:.3e} with all columns")

    delta_a = x if bundle is None else bundle.unscale(x)
    logger.debug(f"{kind} problem: cardinality {len(columns)}, residual {residual:.3e}, {solves} solves")
    return IdentificationResult(
        x=x, delta_a=delta_a, columns=tuple(columns), support=extract_support(delta_a, eps_i),
        residual=residual, kind=kind, tolerance=tolerance, enumerated_count=solves,
        feasible=feasible, eps_i=eps_i,
    )


def solve_l0_equality(S, b, tol_feas=TOL_FEAS, blocks=None, bundle=None, eps_i=EPS_I) -> IdentificationResult:
    """Sparsest x with S x = b, the equality read as residual <= tol_feas."""
    return solve_l0(S, b, tol_feas, EQUALITY, blocks, bundle, eps_i)


def solve_l0_relaxed(S, b, budget: RelaxationBudget, blocks=None, bundle=None, eps_i=EPS_I,
                     tol_feas=TOL_FEAS) -> IdentificationResult:
    """Sparsest x with ||b - S x||_2 <= eps sigma_min / 2.

    The radius never drops below tol_feas, so a vanishing budget falls back to
    the equality problem.
    """
    return solve_l0(S, b, max(budget.radius, tol_feas), RELAXED, blocks, bundle, eps_i)


def identify(bundle, tol_feas=TOL_FEAS, budget: Optional[RelaxationBudget] = None, eps_i=EPS_I):
    """Solve the equality problem, and the relaxed one if a budget is given, on an assembled bundle."""
    S = bundle.S
    if bundle.b is None:
        raise DimensionError("bundle has no right-hand side; call assemble first")
    equality = solve_l0_equality(S, bundle.b, tol_feas, bundle.blocks, bundle, eps_i)
    relaxed = None
    if budget is not None:
        relaxed = solve_l0_relaxed(S, bundle.b, budget, bundle.blocks, bundle, eps_i, tol_feas)
    return equality, relaxed
