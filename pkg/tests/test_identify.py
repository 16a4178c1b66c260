"""
Detection and sparse identification test suite.

Groups:
 1. Detection verdict and support extraction
 2. Block enumeration against a brute-force least-squares oracle
 3. Equality and relaxed problems on planted attacks
"""

from itertools import combinations

import numpy as np
import pytest

from attackid.modules.identify import EQUALITY, RELAXED, RelaxationBudget, detect, extract_support, identify, \
    solve_l0, solve_l0_equality, solve_l0_relaxed
from attackid.modules.sensitivity import SensitivityBundle
from attackid.utils.errors import DimensionError


def _block_instance(rng, max_r=8):
    """Random block-diagonal S with full column rank per block."""
    shapes = []
    r = 0
    for _ in range(rng.integers(1, 4)):
        rows = int(rng.integers(1, 5))
        cols = int(rng.integers(1, rows + 1))
        if r + cols > max_r:
            break
        shapes.append((rows, cols))
        r += cols
    m = sum(rows for rows, _ in shapes)
    S = np.zeros((m, r))
    blocks = []
    row = col = 0
    for rows, cols in shapes:
        S[row:row + rows, col:col + cols] = rng.normal(size=(rows, cols))
        blocks.append((slice(row, row + rows), slice(col, col + cols)))
        row += rows
        col += cols
    return S / np.linalg.norm(S, axis=0), blocks


def _oracle(S, b, tolerance):
    """(cardinality, min residual, feasible) over all global supports."""
    r = S.shape[1]
    best = np.linalg.norm(b)
    for k in range(r + 1):
        if k:
            best = min(np.linalg.norm(b - S[:, list(s)] @ np.linalg.lstsq(S[:, list(s)], b, rcond=None)[0])
                       for s in combinations(range(r), k))
        if best <= tolerance:
            return k, best, True
    return r, best, False


# ── Group 1: detection ───────────────────────────────────────────────────────

def test_detect_is_strict():
    verdict = detect([np.array([1e-5]), np.array([0.0, -1e-5])], 1e-5)
    assert not verdict.alarm
    verdict = detect([np.array([1e-5]), np.array([0.0, -2e-5])], 1e-5)
    assert verdict.alarm
    assert verdict.alarmed_subsystems == (1,)


def test_detect_handles_empty_subsystems():
    verdict = detect([np.zeros(0), np.array([0.3])], 0.1)
    np.testing.assert_array_equal(verdict.norms, [0.0, 0.3])


def test_detect_rejects_nonpositive_threshold():
    with pytest.raises(ValueError):
        detect([np.zeros(1)], 0.0)


def test_extract_support():
    assert extract_support([0.0, 2e-5, -3e-5, 1e-5, -1e-6]) == (1, 2)
    assert extract_support(np.zeros(4)) == ()
    with pytest.raises(ValueError):
        extract_support([1.0], eps_i=0.0)


@pytest.mark.parametrize("epsilon, sigma", [(0.0, 1.0), (-1.0, 1.0), (1.0, 0.0), (float("nan"), 1.0)])
def test_budget_validation(epsilon, sigma):
    with pytest.raises(ValueError):
        RelaxationBudget(epsilon=epsilon, sigma_min=sigma)


def test_budget_radius():
    assert RelaxationBudget(epsilon=0.2, sigma_min=0.5).radius == pytest.approx(0.05)


# ── Group 2: oracle equivalence ──────────────────────────────────────────────

def test_block_enumeration_matches_oracle():
    rng = np.random.default_rng(2024)
    for _ in range(200):
        S, blocks = _block_instance(rng)
        r = S.shape[1]
        x = np.zeros(r)
        planted = rng.choice(r, size=int(rng.integers(0, min(3, r) + 1)), replace=False)
        x[planted] = rng.uniform(0.5, 2.0, size=len(planted)) * rng.choice([-1.0, 1.0], size=len(planted))
        noisy = rng.random() < 0.5
        b = S @ x + (rng.normal(scale=1e-2, size=S.shape[0]) if noisy else 0.0)
        tolerance = float(rng.uniform(0.0, 0.05)) if noisy else 1e-8

        result = solve_l0(S, b, tolerance, blocks=blocks)
        k, residual, feasible = _oracle(S, b, tolerance)
        assert result.feasible == feasible
        assert result.cardinality == k
        assert result.residual == pytest.approx(residual, abs=1e-9)
        if not noisy:
            assert set(result.columns) == set(planted.tolist())


def test_blocks_agree_with_single_block(rng):
    S, blocks = _block_instance(rng)
    b = rng.normal(size=S.shape[0])
    split = solve_l0(S, b, 0.5, blocks=blocks)
    whole = solve_l0(S, b, 0.5)
    assert split.cardinality == whole.cardinality
    assert split.residual == pytest.approx(whole.residual, abs=1e-10)


def test_uncovered_rows_count_in_residual():
    S = np.array([[1.0], [0.0]])
    result = solve_l0(S, np.array([1.0, 0.5]), 0.1, blocks=[(slice(0, 1), slice(0, 1))])
    assert not result.feasible
    assert result.residual == pytest.approx(0.5)


def test_rhs_shape_checked():
    with pytest.raises(DimensionError):
        solve_l0(np.eye(2), np.zeros(3), 1e-8)


def test_tie_breaks_lexicographically():
    # either unit column leaves the same residual
    S = np.array([[1.0, 0.0], [0.0, 1.0]])
    result = solve_l0(S, np.array([1.0, 1.0]), 1.2)
    assert result.columns == (0,)


# ── Group 3: planted attacks ─────────────────────────────────────────────────

def _planted():
    S = np.zeros((6, 5))
    S[0:3, 0:2] = [[1.0, 0.2], [0.0, 1.0], [0.5, -0.3]]
    S[3:6, 2:5] = [[1.0, 0.0, 0.4], [0.3, 1.0, 0.0], [0.0, 0.2, 1.0]]
    blocks = [(slice(0, 3), slice(0, 2)), (slice(3, 6), slice(2, 5))]
    x = np.array([0.0, 0.7, 0.0, 0.0, -0.4])
    return S, blocks, x


def test_equality_recovers_linear_attack():
    S, blocks, x = _planted()
    result = solve_l0_equality(S, S @ x, blocks=blocks)
    assert result.kind == EQUALITY
    assert result.feasible
    assert result.columns == (1, 4)
    assert result.support == (1, 4)
    np.testing.assert_allclose(result.x, x, atol=1e-12)
    assert result.residual <= 1e-8


def test_zero_rhs_gives_empty_support():
    S, blocks, _ = _planted()
    result = solve_l0_equality(S, np.zeros(6), blocks=blocks)
    assert result.columns == () and result.support == ()
    assert result.enumerated_count == 0


def test_infeasible_equality_reports_flag():
    S, blocks, _ = _planted()
    b = np.array([0.0, 0.0, 1.0, 0.0, 0.0, 0.0])
    b[0:3] -= S[0:3, 0:2] @ np.linalg.lstsq(S[0:3, 0:2], b[0:3], rcond=None)[0]
    result = solve_l0_equality(S, b, blocks=blocks)
    assert not result.feasible
    assert result.cardinality == 5


def test_relaxed_drops_small_components():
    S, blocks, x = _planted()
    x[2] = 1e-3
    b = S @ x
    equality = solve_l0_equality(S, b, blocks=blocks)
    relaxed = solve_l0_relaxed(S, b, RelaxationBudget(epsilon=0.01, sigma_min=1.0), blocks=blocks)
    assert equality.cardinality == 3
    assert relaxed.kind == RELAXED
    assert relaxed.cardinality == 2
    assert relaxed.residual <= 0.005


def test_relaxed_cardinality_is_monotone():
    rng = np.random.default_rng(5)
    S, blocks, x = _planted()
    b = S @ np.array([0.3, -0.05, 0.2, 0.01, 0.6]) + rng.normal(scale=1e-3, size=6)
    cards = [solve_l0_relaxed(S, b, RelaxationBudget(epsilon=eps, sigma_min=1.0), blocks=blocks).cardinality
             for eps in (1e-4, 1e-3, 1e-2, 0.1, 0.5, 2.0)]
    assert all(lo >= hi for lo, hi in zip(cards, cards[1:]))


def test_relaxed_radius_never_below_tol_feas():
    S, blocks, x = _planted()
    result = solve_l0_relaxed(S, S @ x, RelaxationBudget(epsilon=1e-20, sigma_min=1e-3), blocks=blocks)
    assert result.tolerance == pytest.approx(1e-8)
    assert result.columns == (1, 4)


def test_to_dict_is_one_based():
    S, blocks, x = _planted()
    data = solve_l0_equality(S, S @ x, blocks=blocks).to_dict()
    assert data["support"] == [2, 5]
    assert data["cardinality"] == 2
    assert data["kind"] == EQUALITY


def test_identify_needs_assembled_bundle(two_bus):
    bundle = SensitivityBundle(subsystems=[], partition=two_bus.partition, d_u=2)
    with pytest.raises(DimensionError, match="assemble"):
        identify(bundle)
