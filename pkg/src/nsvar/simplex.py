"""Dense two-phase tableau simplex with Bland's anti-cycling rule.

Solves ``max c'x  s.t.  A x <= b,  x >= 0`` for the small, dense programs that
arise in the Chebyshev-center feasibility step.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class LPResult:
    x: np.ndarray
    value: float
    status: str          # "optimal", "infeasible" or "unbounded"
    iterations: int


def _pivot(T: np.ndarray, basis: np.ndarray, row: int, col: int) -> None:
    T[row] /= T[row, col]
    factor = T[:, col].copy()
    factor[row] = 0.0
    T -= np.outer(factor, T[row])
    basis[row] = col


def _optimize(T, basis, cost, allowed, tol, max_iter):
    """Maximize ``cost'z`` over the tableau in place. Returns (status, iterations)."""
    for it in range(max_iter):
        reduced = cost[:allowed] - cost[basis] @ T[:, :allowed]
        entering = np.flatnonzero(reduced > tol)
        if entering.size == 0:
            return "optimal", it
        col = int(entering[0])
        colv = T[:, col]
        pos = np.flatnonzero(colv > tol)
        if pos.size == 0:
            return "unbounded", it
        ratios = T[pos, -1] / colv[pos]
        best = ratios.min()
        ties = pos[ratios <= best + tol * max(1.0, abs(best))]
        row = int(ties[np.argmin(basis[ties])])
        _pivot(T, basis, row, col)
    raise RuntimeError(f"simplex did not terminate in {max_iter} iterations")


def simplex_max(c, A, b, tol: float = 1e-10, max_iter: int = 50_000) -> LPResult:
    c = np.asarray(c, dtype=float)
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.asarray(b, dtype=float)
    m, n = A.shape
    neg = b < 0
    art_rows = np.flatnonzero(neg)
    na = art_rows.size
    N = n + m + na
    T = np.zeros((m, N + 1))
    T[:, :n] = A
    T[:, n:n + m] = np.eye(m)
    T[:, -1] = b
    T[neg] *= -1.0
    T[art_rows, n + m + np.arange(na)] = 1.0
    basis = n + np.arange(m)
    basis[art_rows] = n + m + np.arange(na)

    iters = 0
    if na:
        cost1 = np.zeros(N)
        cost1[n + m:] = -1.0
        status, k = _optimize(T, basis, cost1, N, tol, max_iter)
        iters += k
        if cost1[basis] @ T[:, -1] < -1e-9 * max(1.0, np.abs(b).max()):
            return LPResult(np.full(n, np.nan), float("nan"), "infeasible", iters)
        for r in np.flatnonzero(basis >= n + m):
            cand = np.flatnonzero(np.abs(T[r, :n + m]) > tol)
            if cand.size:
                _pivot(T, basis, r, int(cand[0]))

    cost2 = np.zeros(N)
    cost2[:n] = c
    status, k = _optimize(T, basis, cost2, n + m, tol, max_iter)
    iters += k
    z = np.zeros(N)
    z[basis] = T[:, -1]
    x = np.maximum(z[:n], 0.0)
    if status == "unbounded":
        return LPResult(x, float("inf"), status, iters)
    return LPResult(x, float(c @ x), "optimal", iters)
