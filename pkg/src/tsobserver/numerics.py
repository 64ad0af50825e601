"""Small dense linear-algebra kernel.

Everything here works on plain ``numpy`` arrays of float64. The symmetric
eigensolver is a cyclic Jacobi method, which is accurate and fully
deterministic at the sizes this package deals with (a few tens of rows).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class LinAlgError(ValueError):
    pass


class NonSquare(LinAlgError):
    pass


class NonFinite(LinAlgError):
    pass


class NotPositiveDefinite(LinAlgError):
    pass


class Singular(LinAlgError):
    pass


@dataclass(frozen=True)
class SymEigResult:
    eigenvalues: np.ndarray
    basis: np.ndarray


def _as_square(m) -> np.ndarray:
    a = np.array(m, dtype=float, copy=True)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise NonSquare(f"expected a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NonFinite("matrix has non-finite entries")
    return a


def _symmetrized(m) -> np.ndarray:
    a = _as_square(m)
    scale = 1.0 + (np.abs(a).max() if a.size else 0.0)
    if a.size and np.abs(a - a.T).max() > 1e-9 * scale:
        raise LinAlgError("matrix is not symmetric")
    return 0.5 * (a + a.T)


def sym_eig(m, tol: float = 1e-12, max_sweeps: int = 100) -> SymEigResult:
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns eigenvalues sorted ascending and the matching orthogonal basis
    (eigenvectors as columns).
    """
    a = _symmetrized(m)
    n = a.shape[0]
    v = np.eye(n)
    norm = np.linalg.norm(a)
    if n > 1 and norm > 0.0:
        threshold = tol * norm
        for _ in range(max_sweeps):
            # summed directly; subtracting the diagonal from the full norm cancels badly
            off = math.sqrt(2.0 * float(np.sum(np.triu(a, 1) ** 2)))
            if off <= threshold:
                break
            for p in range(n - 1):
                for q in range(p + 1, n):
                    apq = a[p, q]
                    if apq == 0.0:
                        continue
                    diff = a[q, q] - a[p, p]
                    if abs(apq) < 1e-150 * abs(diff):
                        t = apq / diff
                    else:
                        theta = diff / (2.0 * apq)
                        t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                    c = 1.0 / math.sqrt(t * t + 1.0)
                    s = t * c
                    # A <- J^T A J with J the (p, q) rotation
                    ap = a[:, p].copy()
                    aq = a[:, q].copy()
                    a[:, p] = c * ap - s * aq
                    a[:, q] = s * ap + c * aq
                    ap = a[p, :].copy()
                    aq = a[q, :].copy()
                    a[p, :] = c * ap - s * aq
                    a[q, :] = s * ap + c * aq
                    a[p, q] = a[q, p] = 0.0
                    vp = v[:, p].copy()
                    vq = v[:, q].copy()
                    v[:, p] = c * vp - s * vq
                    v[:, q] = s * vp + c * vq
    w = np.diag(a).copy()
    order = np.argsort(w, kind="stable")
    return SymEigResult(eigenvalues=w[order], basis=v[:, order])


def max_eig(m) -> float:
    """Largest eigenvalue of a symmetric matrix."""
    a = _symmetrized(m)
    if a.shape[0] == 0:
        return -math.inf
    if a.shape[0] == 1:
        return float(a[0, 0])
    return float(sym_eig(a).eigenvalues[-1])


def cholesky(m) -> np.ndarray:
    """Lower-triangular ``L`` with ``L @ L.T == m``.

    Raises NotPositiveDefinite on a non-positive pivot.
    """
    a = _symmetrized(m)
    n = a.shape[0]
    low = np.zeros_like(a)
    for j in range(n):
        d = a[j, j] - low[j, :j] @ low[j, :j]
        if not d > 0.0:
            raise NotPositiveDefinite(f"pivot {j} is {d:.3e}")
        low[j, j] = math.sqrt(d)
        if j + 1 < n:
            low[j + 1:, j] = (a[j + 1:, j] - low[j + 1:, :j] @ low[j, :j]) / low[j, j]
    return low


def _lu(a: np.ndarray):
    n = a.shape[0]
    lu = a.copy()
    perm = np.arange(n)
    scale = np.abs(a).max() if a.size else 0.0
    for k in range(n):
        p = k + int(np.argmax(np.abs(lu[k:, k])))
        if abs(lu[p, k]) < 1e-12 * scale or scale == 0.0:
            raise Singular(f"pivot {k} below threshold")
        if p != k:
            lu[[k, p]] = lu[[p, k]]
            perm[[k, p]] = perm[[p, k]]
        lu[k + 1:, k] /= lu[k, k]
        lu[k + 1:, k + 1:] -= np.outer(lu[k + 1:, k], lu[k, k + 1:])
    return lu, perm


def _lu_solve(lu: np.ndarray, perm: np.ndarray, b: np.ndarray) -> np.ndarray:
    n = lu.shape[0]
    x = b[perm].copy()
    for i in range(n):
        x[i] -= lu[i, :i] @ x[:i]
    for i in range(n - 1, -1, -1):
        x[i] = (x[i] - lu[i, i + 1:] @ x[i + 1:]) / lu[i, i]
    return x


def solve(a, b) -> np.ndarray:
    """Solve ``a @ x = b`` by LU with partial pivoting."""
    a = _as_square(a)
    b = np.array(b, dtype=float)
    vector = b.ndim == 1
    if vector:
        b = b[:, None]
    if b.shape[0] != a.shape[0]:
        raise LinAlgError(f"right-hand side has {b.shape[0]} rows, expected {a.shape[0]}")
    lu, perm = _lu(a)
    x = _lu_solve(lu, perm, b)
    return x[:, 0] if vector else x


def inverse(a) -> np.ndarray:
    a = _as_square(a)
    return solve(a, np.eye(a.shape[0]))


def condition_estimate(a) -> float:
    """Infinity-norm condition number; ``inf`` for singular input."""
    a = _as_square(a)
    try:
        inv = inverse(a)
    except Singular:
        return math.inf
    return float(np.abs(a).sum(axis=1).max() * np.abs(inv).sum(axis=1).max())
