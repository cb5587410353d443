"""Reduced-form VAR algebra: residuals, VMA coefficients, impulse responses,
structural shocks and historical decompositions.

Conventions
-----------
* ``B`` has shape ``(n, n*p [+1])``. Columns ``l*n:(l+1)*n`` hold the lag-``l+1``
  coefficient matrix; when ``has_constant`` is set the intercept is the LAST
  column. The intercept never enters the companion matrix or the VMA recursion.
* All indices (variables, shocks, periods, horizons) are 0-based.
* Functions accepting ``Q`` also accept a stack of matrices with shape
  ``(..., n, n)``; results broadcast over the leading axes.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .errors import ConfigError

STABILITY_TOL = 1e-9
DEFAULT_MAX_HORIZON = 60


def cholesky_lower(Sigma: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor with strictly positive diagonal, no pivoting.

    Raises ``ConfigError`` when ``Sigma`` is not symmetric or is numerically
    indefinite (smallest eigenvalue below ``1e-12`` times the largest).
    """
    Sigma = np.asarray(Sigma, dtype=float)
    if Sigma.ndim != 2 or Sigma.shape[0] != Sigma.shape[1]:
        raise ConfigError(f"Sigma must be square, got shape {Sigma.shape}")
    if not np.allclose(Sigma, Sigma.T, rtol=1e-10, atol=1e-12 * max(1.0, np.abs(Sigma).max())):
        raise ConfigError("Sigma is not symmetric")
    eig = np.linalg.eigvalsh(Sigma)
    if eig[-1] <= 0 or eig[0] < 1e-12 * eig[-1]:
        raise ConfigError(f"Sigma is numerically indefinite (eigenvalues {eig[0]:.3g}, {eig[-1]:.3g})")
    return np.linalg.cholesky(0.5 * (Sigma + Sigma.T))


@dataclass(frozen=True)
class ReducedFormParams:
    """Reduced-form parameters phi = (B, Sigma) together with the Cholesky factor."""

    n: int
    p: int
    has_constant: bool
    B: np.ndarray
    Sigma: np.ndarray
    Sigma_tr: np.ndarray
    Sigma_tr_inv: np.ndarray = field(repr=False, compare=False)

    @classmethod
    def from_sigma(cls, B, Sigma, p: int, has_constant: bool = False) -> "ReducedFormParams":
        Sigma = np.asarray(Sigma, dtype=float)
        n = Sigma.shape[0]
        B = np.asarray(B, dtype=float).reshape(n, -1) if np.size(B) else np.zeros((n, 0))
        ncols = n * p + int(has_constant)
        if B.shape != (n, ncols):
            raise ConfigError(f"B has shape {B.shape}, expected {(n, ncols)}")
        S_tr = cholesky_lower(Sigma)
        S_inv = linalg.solve_triangular(S_tr, np.eye(n), lower=True)
        return cls(n, p, bool(has_constant), B, Sigma, S_tr, S_inv)

    @classmethod
    def from_cholesky(cls, B, Sigma_tr, p: int, has_constant: bool = False) -> "ReducedFormParams":
        Sigma_tr = np.asarray(Sigma_tr, dtype=float)
        if np.any(np.triu(Sigma_tr, 1) != 0) or np.any(np.diag(Sigma_tr) <= 0):
            raise ConfigError("Sigma_tr must be lower triangular with positive diagonal")
        return cls.from_sigma(B, Sigma_tr @ Sigma_tr.T, p, has_constant)

    @property
    def lag_matrices(self) -> list[np.ndarray]:
        n = self.n
        return [self.B[:, l * n:(l + 1) * n] for l in range(self.p)]

    @property
    def intercept(self) -> np.ndarray:
        if self.has_constant:
            return self.B[:, -1]
        return np.zeros(self.n)


@dataclass(frozen=True)
class VmaCoefficients:
    """``C[h]`` is the horizon-``h`` VMA matrix, ``C[0] = I``."""

    C: np.ndarray

    @property
    def horizons(self) -> int:
        return self.C.shape[0] - 1


@dataclass(frozen=True)
class InnovationSeries:
    """Reduced-form residuals ``U[t] = y_{t+start} - B x_{t+start}``."""

    U: np.ndarray
    start: int


def check_orthonormal(Q, tol: float = 1e-10) -> np.ndarray:
    Q = np.asarray(Q, dtype=float)
    n = Q.shape[-1]
    err = np.linalg.norm(np.swapaxes(Q, -1, -2) @ Q - np.eye(n), axis=(-2, -1))
    if np.any(err > tol):
        raise ConfigError(f"matrix is not orthonormal (max error {np.max(err):.2e})")
    return Q


def lagged_regressors(data, p: int, has_constant: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Stack ``Y = [y_p, ..., y_{T-1}]`` and ``X = [x_p, ..., x_{T-1}]``.

    Row ``t`` of ``X`` is ``(y_{t-1}', ..., y_{t-p}' [, 1])``.
    """
    data = np.asarray(data, dtype=float)
    if data.ndim != 2:
        raise ConfigError("data must be a 2-d array (T x n)")
    T = data.shape[0]
    if T < p + 1:
        raise ConfigError(f"need at least p+1={p + 1} observations, got {T}")
    Y = data[p:]
    cols = [data[p - l:T - l] for l in range(1, p + 1)]
    if has_constant:
        cols.append(np.ones((T - p, 1)))
    X = np.hstack(cols) if cols else np.zeros((T - p, 0))
    return Y, X


def compute_residuals(data, params: ReducedFormParams) -> InnovationSeries:
    data = np.asarray(data, dtype=float)
    if data.ndim != 2 or data.shape[1] != params.n:
        raise ConfigError(f"data has shape {data.shape}, expected (T, {params.n})")
    Y, X = lagged_regressors(data, params.p, params.has_constant)
    return InnovationSeries(Y - X @ params.B.T, params.p)


def companion_matrix(params: ReducedFormParams) -> np.ndarray:
    n, p = params.n, params.p
    if p == 0:
        return np.zeros((0, 0))
    F = np.zeros((n * p, n * p))
    F[:n, :] = params.B[:, :n * p]
    F[n:, :-n] = np.eye(n * (p - 1))
    return F


def spectral_radius(params: ReducedFormParams) -> float:
    F = companion_matrix(params)
    if F.size == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(F))))


def stability_check(params: ReducedFormParams, tol: float = STABILITY_TOL) -> bool:
    """True iff the companion matrix has spectral radius below ``1 - tol``."""
    return spectral_radius(params) < 1.0 - tol


def vma_coefficients(params: ReducedFormParams, H: int = DEFAULT_MAX_HORIZON) -> VmaCoefficients:
    if H < 0:
        raise ConfigError("H must be non-negative")
    n = params.n
    lags = params.lag_matrices
    C = np.zeros((H + 1, n, n))
    C[0] = np.eye(n)
    for h in range(1, H + 1):
        for l in range(1, min(h, params.p) + 1):
            C[h] += lags[l - 1] @ C[h - l]
    return VmaCoefficients(C)


def response_rows(params: ReducedFormParams, vma: VmaCoefficients) -> np.ndarray:
    """``C_h Sigma_tr`` for every horizon; row ``i`` of slice ``h`` is c_{i,h}(phi)'."""
    return vma.C @ params.Sigma_tr


def impulse_responses(params: ReducedFormParams, Q, vma: VmaCoefficients) -> np.ndarray:
    """Array ``eta[..., h, i, j] = e_i' C_h Sigma_tr Q e_j``."""
    Q = np.asarray(Q, dtype=float)
    return response_rows(params, vma) @ Q[..., None, :, :]


def impulse_response(params: ReducedFormParams, Q, i: int, j: int, h: int,
                     vma: VmaCoefficients | None = None) -> float:
    n = params.n
    if not (0 <= i < n and 0 <= j < n):
        raise IndexError(f"variable/shock index out of range for n={n}")
    if vma is None:
        vma = vma_coefficients(params, h)
    if h > vma.horizons:
        raise IndexError(f"horizon {h} exceeds precomputed VMA horizon {vma.horizons}")
    c = vma.C[h][i] @ params.Sigma_tr
    return float(c @ np.asarray(Q, dtype=float)[:, j])


def structural_shocks(params: ReducedFormParams, Q, U) -> np.ndarray:
    """All shocks ``eps_t = Q' Sigma_tr^{-1} u_t``; ``U`` is ``(T, n)``."""
    W = np.asarray(U, dtype=float) @ params.Sigma_tr_inv.T
    return W @ np.asarray(Q, dtype=float)


def structural_shock(params: ReducedFormParams, Q, u, i: int) -> float:
    u = np.asarray(u, dtype=float)
    if u.shape != (params.n,):
        raise ConfigError(f"u must have length {params.n}")
    w = params.Sigma_tr_inv @ u
    return float(w @ np.asarray(Q, dtype=float)[:, i])


def historical_decomposition_all(params: ReducedFormParams, Q, u_window, i: int,
                                 vma: VmaCoefficients | None = None) -> np.ndarray:
    """Contributions of every shock to variable ``i`` over the window.

    ``u_window`` holds ``u_k, ..., u_{k+h}`` as rows. Element ``j`` of the result is
    ``sum_l c_{i,l}' q_j q_j' Sigma_tr^{-1} u_{k+h-l}``.
    """
    u_window = np.atleast_2d(np.asarray(u_window, dtype=float))
    h = u_window.shape[0] - 1
    if vma is None:
        vma = vma_coefficients(params, h)
    if h > vma.horizons:
        raise ConfigError(f"window length {h + 1} exceeds VMA horizon {vma.horizons}")
    Q = np.asarray(Q, dtype=float)
    eps = structural_shocks(params, Q, u_window)          # (h+1, n)
    rows = response_rows(params, vma)[:h + 1, i, :]       # (h+1, n)
    ir = rows @ Q                                         # ir[l, j] = eta_{i,j,l}
    return np.sum(ir * eps[::-1], axis=0)


def historical_decomposition(params: ReducedFormParams, Q, u_window, i: int, j: int,
                             vma: VmaCoefficients | None = None) -> float:
    return float(historical_decomposition_all(params, Q, u_window, i, vma)[j])


def structural_matrices(params: ReducedFormParams, Q) -> tuple[np.ndarray, np.ndarray]:
    """Map ``(phi, Q)`` to ``(A0, A+)`` with ``A0 = Q' Sigma_tr^{-1}``."""
    A0 = np.asarray(Q, dtype=float).T @ params.Sigma_tr_inv
    return A0, A0 @ params.B


def simulate_var(params: ReducedFormParams, T: int, rng: np.random.Generator,
                 Q=None, initial=None, burn: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Simulate ``T`` observations (after ``p`` initial rows) of the SVAR.

    Returns ``(data, shocks)`` where ``data`` has ``T + p`` rows and ``shocks``
    has ``T`` rows aligned with the post-lag sample.
    """
    n, p = params.n, params.p
    Q = np.eye(n) if Q is None else np.asarray(Q, dtype=float)
    impact = params.Sigma_tr @ Q
    total = T + burn
    y = np.zeros((total + p, n))
    if initial is not None:
        y[:p] = np.asarray(initial, dtype=float)
    eps = rng.standard_normal((total, n))
    lags = params.lag_matrices
    for t in range(p, total + p):
        val = params.intercept + impact @ eps[t - p]
        for l in range(1, p + 1):
            val = val + lags[l - 1] @ y[t - l]
        y[t] = val
    return y[burn:], eps[burn:]
