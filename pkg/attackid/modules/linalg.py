"""Dense kernels: Householder QR, least squares, smallest singular value."""
from dataclasses import dataclass

import numpy as np

from constants import LSQ_RTOL
from ..utils.errors import DimensionError, RankDeficiencyError


@dataclass
class QRFactorization:
    """A P = Q R with Q kept as Householder vectors.

    Args:
        vs (list): Householder vectors, None where the column was already zero
        R (np.ndarray): upper triangular factor, min(m, n) x n
        perm (np.ndarray): column order, A[:, perm] = Q R
    """
    vs: list
    R: np.ndarray
    perm: np.ndarray

    def apply_qt(self, y: np.ndarray) -> np.ndarray:
        y = np.array(y, dtype=float)
        for i, v in enumerate(self.vs):
            if v is not None:
                y[i:] -= 2.0 * v * (v @ y[i:])
        return y


def householder_qr(A, pivoting=False) -> QRFactorization:
    """Householder QR, optionally with column pivoting on the largest remaining norm."""
    R = np.array(A, dtype=float)
    m, n = R.shape
    perm = np.arange(n)
    vs = []
    for i in range(min(m, n)):
        if pivoting:
            norms = np.sum(R[i:, i:] ** 2, axis=0)
            j = i + int(np.argmax(norms))
            if j != i:
                R[:, [i, j]] = R[:, [j, i]]
                perm[[i, j]] = perm[[j, i]]
        x = R[i:, i]
        normx = np.linalg.norm(x)
        if normx == 0.0:
            vs.append(None)
            continue
        s = 1.0 if x[0] >= 0 else -1.0
        v = x.copy()
        v[0] += s * normx
        v = v / np.linalg.norm(v)
        vs.append(v)
        R[i:, i:] -= 2.0 * v[:, np.newaxis] * (v @ R[i:, i:])
    R = np.triu(R[:min(m, n), :])
    return QRFactorization(vs=vs, R=R, perm=perm)


def back_substitution(R, y) -> np.ndarray:
    n = R.shape[1]
    x = np.zeros(n)
    for i in range(n - 1, -1, -1):
        x[i] = (y[i] - R[i, i + 1:n] @ x[i + 1:]) / R[i, i]
    return x


def least_squares(A, y, rtol=LSQ_RTOL):
    """Minimize ||y - A x||_2 for a tall matrix of full column rank.

    Args:
        A (np.ndarray): m x n, m >= n
        y (np.ndarray): right-hand side, length m
        rtol (float, optional): a triangular diagonal below rtol times the
            largest one is a rank deficiency. Defaults to LSQ_RTOL.

    Returns:
        (x, residual) with residual = ||y - A x||_2
    """
    A = np.asarray(A, dtype=float)
    y = np.asarray(y, dtype=float)
    m, n = A.shape
    if y.shape != (m,):
        raise DimensionError(f"right-hand side has shape {y.shape}, expected ({m},)")
    if m < n:
        raise DimensionError(f"least squares needs m >= n, got {m}x{n}")
    if n == 0:
        return np.zeros(0), float(np.linalg.norm(y))

    qr = householder_qr(A)
    diag = np.abs(np.diag(qr.R))
    largest = diag.max()
    if largest == 0.0 or diag.min() <= rtol * largest:
        raise RankDeficiencyError(
            f"rank deficient {m}x{n} system: |R_ii| ranges over [{diag.min():.3e}, {largest:.3e}]")
    x = back_substitution(qr.R[:n, :n], qr.apply_qt(y)[:n])
    return x, float(np.linalg.norm(y - A @ x))


def singular_values(A, tol=1e-15, max_sweeps=60) -> np.ndarray:
    """Singular values by cyclic one-sided Jacobi rotations, descending."""
    U = np.array(A, dtype=float)
    m, n = U.shape
    if m < n:
        raise DimensionError(f"one-sided Jacobi needs m >= n, got {m}x{n}")
    for _ in range(max_sweeps):
        rotated = False
        for p in range(n - 1):
            for q in range(p + 1, n):
                alpha = U[:, p] @ U[:, p]
                beta = U[:, q] @ U[:, q]
                gamma = U[:, p] @ U[:, q]
                if gamma == 0.0 or abs(gamma) <= tol * np.sqrt(alpha * beta):
                    continue
                rotated = True
                zeta = (beta - alpha) / (2.0 * gamma)
                t = (1.0 if zeta >= 0 else -1.0) / (abs(zeta) + np.sqrt(1.0 + zeta * zeta))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = c * t
                up = U[:, p].copy()
                U[:, p] = c * up - s * U[:, q]
                U[:, q] = s * up + c * U[:, q]
        if not rotated:
            break
    return np.sort(np.linalg.norm(U, axis=0))[::-1]


def smallest_singular_value(A) -> float:
    A = np.asarray(A, dtype=float)
    if A.shape[1] == 0:
        return 0.0
    return float(singular_values(A)[-1])


def min_eigenvalue_symmetric(B, tol=1e-15, max_iter=1000) -> float:
    """Smallest eigenvalue of a symmetric positive semidefinite matrix.

    Shifted inverse power iteration: the shift sits just below zero so that
    B - shift I stays nonsingular and the eigenvalue nearest the shift is the
    smallest one.
    """
    B = np.asarray(B, dtype=float)
    n = B.shape[0]
    if n == 0:
        return 0.0
    scale = max(np.abs(B).max(), 1.0)
    shift = -1e-6 * scale
    shifted = B - shift * np.eye(n)
    x = np.ones(n) + 0.01 * np.arange(n)
    x /= np.linalg.norm(x)
    lam = x @ B @ x
    for _ in range(max_iter):
        y, _ = least_squares(shifted, x)
        x = y / np.linalg.norm(y)
        lam_next = x @ B @ x
        if abs(lam_next - lam) <= tol * scale:
            lam = lam_next
            break
        lam = lam_next
    return float(max(lam, 0.0))
