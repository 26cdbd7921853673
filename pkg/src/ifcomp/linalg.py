"""Dense linear algebra kernels.

Only two things are needed by the rest of the package: a checked matrix
product and a symmetric eigendecomposition. The eigensolver is a cyclic
Jacobi method using round-robin ordering, so every round rotates ``n // 2``
disjoint index pairs at once with vectorized row/column updates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, NumericalError

JACOBI_TOL = 1e-12
JACOBI_MAX_SWEEPS = 100


@dataclass(frozen=True)
class SymEig:
    """Eigendecomposition ``a = vectors @ diag(values) @ vectors.T``.

    ``values`` are sorted in descending order; column ``j`` of ``vectors``
    is the eigenvector for ``values[j]``.
    """

    values: np.ndarray
    vectors: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.vectors * self.values) @ self.vectors.T


def as_matrix(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise DimensionError(f"expected a 2-d matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NumericalError("matrix has non-finite entries")
    return a


def matmul(a, b) -> np.ndarray:
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise DimensionError(
            f"inner dimensions disagree: {a.shape} @ {b.shape}"
        )
    return a @ b


def _round_robin(n: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Pairings for one cyclic sweep: every (p, q) appears exactly once."""
    m = n + (n % 2)
    players = list(range(m))
    rounds = []
    for _ in range(m - 1):
        ps, qs = [], []
        for k in range(m // 2):
            p, q = players[k], players[m - 1 - k]
            if p < n and q < n:
                ps.append(min(p, q))
                qs.append(max(p, q))
        rounds.append((np.array(ps, dtype=np.intp), np.array(qs, dtype=np.intp)))
        # keep players[0] fixed, rotate the rest
        players = [players[0], players[-1]] + players[1:-1]
    return rounds


def _off_norm(a: np.ndarray) -> float:
    off = a.copy()
    np.fill_diagonal(off, 0.0)
    return float(np.linalg.norm(off))


def sym_eig(a, tol: float = JACOBI_TOL, max_sweeps: int = JACOBI_MAX_SWEEPS) -> SymEig:
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    The input is symmetrized as ``(a + a.T) / 2`` first. Iteration stops once
    the off-diagonal Frobenius norm falls below ``tol * ||a||_F``.
    """
    a = as_matrix(a)
    n, m = a.shape
    if n != m:
        raise DimensionError(f"sym_eig needs a square matrix, got {a.shape}")
    a = 0.5 * (a + a.T)
    v = np.eye(n)
    if n <= 1:
        return SymEig(values=np.diag(a).copy(), vectors=v)

    scale = float(np.linalg.norm(a))
    threshold = tol * scale if scale > 0 else 0.0
    rounds = _round_robin(n)
    off = _off_norm(a)
    sweeps = 0
    while off > threshold:
        if sweeps >= max_sweeps:
            raise NumericalError(
                f"Jacobi did not converge in {max_sweeps} sweeps "
                f"(off-diagonal norm {off:.3e})",
                residual=off,
            )
        for p, q in rounds:
            apq = a[p, q]
            active = apq != 0.0
            if not np.any(active):
                continue
            p, q, apq = p[active], q[active], apq[active]
            diff = a[q, q] - a[p, p]
            # small-angle branch avoids overflow of theta**2
            big = np.abs(diff) > 1e150 * np.abs(apq)
            theta = np.where(big, 1.0, diff / (2.0 * np.where(big, 1.0, apq)))
            t = np.sign(theta) / (np.abs(theta) + np.sqrt(theta * theta + 1.0))
            t[theta == 0.0] = 1.0
            t[big] = apq[big] / diff[big]
            c = 1.0 / np.sqrt(t * t + 1.0)
            s = t * c
            # a <- J^T a J with J[p,p] = J[q,q] = c, J[p,q] = s, J[q,p] = -s
            cp, cq = a[:, p], a[:, q]
            a[:, p] = c * cp - s * cq
            a[:, q] = s * cp + c * cq
            rp, rq = a[p, :], a[q, :]
            a[p, :] = c[:, None] * rp - s[:, None] * rq
            a[q, :] = s[:, None] * rp + c[:, None] * rq
            a[p, q] = 0.0
            a[q, p] = 0.0
            vp, vq = v[:, p], v[:, q]
            v[:, p] = c * vp - s * vq
            v[:, q] = s * vp + c * vq
        sweeps += 1
        off = _off_norm(a)

    values = np.diag(a).copy()
    order = np.argsort(-values, kind="stable")
    return SymEig(values=values[order], vectors=v[:, order].copy())
