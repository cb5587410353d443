"""Posterior sampling for reduced-form parameters and rotation matrices.

Reduced form: under the Jeffreys prior ``p(B, Sigma) ∝ |Sigma|^{-(n+1)/2}`` the
posterior is normal-inverse-Wishart,

    Sigma | Y      ~ IW(S, T_eff - k),      S = U_hat' U_hat,
    vec(B) | Sigma ~ N(vec(B_hat), (X'X)^{-1} ⊗ Sigma),

with ``k = n*p (+1)`` regressors per equation. Draws are truncated to the
stable region by joint redraws.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import linalg, stats

from .errors import ConfigError, SamplingError
from .restrictions import (RestrictionEvaluator, RestrictionSet, exact_narrative_probability,
                           narrative_holds, referenced_shocks)
from .var_core import (STABILITY_TOL, ReducedFormParams, lagged_regressors, response_rows,
                       stability_check, vma_coefficients)

log = logging.getLogger(__name__)

MAX_UNSTABLE = 10_000
DEFAULT_R_DRAWS = 10_000


def substreams(rng: np.random.Generator, count: int) -> list[np.random.Generator]:
    """Independent child generators, a deterministic function of ``rng``'s state."""
    root = np.random.SeedSequence(int(rng.integers(2**63)))
    return [np.random.default_rng(s) for s in root.spawn(count)]


# --------------------------------------------------------------------------
# reduced-form posterior

@dataclass(frozen=True)
class PhiPosteriorSampler:
    """Normal-inverse-Wishart posterior of ``phi`` under the Jeffreys prior."""

    n: int
    p: int
    has_constant: bool
    Y: np.ndarray
    X: np.ndarray
    B_hat: np.ndarray
    S: np.ndarray
    XtX_inv_chol: np.ndarray
    stability_tol: float = STABILITY_TOL

    @property
    def T_eff(self) -> int:
        return self.Y.shape[0]

    @property
    def n_regressors(self) -> int:
        return self.X.shape[1]

    @property
    def dof(self) -> int:
        return self.T_eff - self.n_regressors

    @classmethod
    def from_data(cls, data, p: int, has_constant: bool = False,
                  stability_tol: float = STABILITY_TOL) -> "PhiPosteriorSampler":
        data = np.asarray(data, dtype=float)
        Y, X = lagged_regressors(data, p, has_constant)
        n = Y.shape[1]
        T_eff, k = X.shape
        if T_eff - k <= n + 1:
            raise ConfigError(
                f"posterior is not proper: effective sample {T_eff} must exceed "
                f"regressors + n + 1 = {k + n + 1}")
        if k:
            XtX = X.T @ X
            B_hat = linalg.solve(XtX, X.T @ Y, assume_a="pos").T
            XtX_inv_chol = np.linalg.cholesky(linalg.inv(XtX))
        else:
            B_hat = np.zeros((n, 0))
            XtX_inv_chol = np.zeros((0, 0))
        resid = Y - X @ B_hat.T
        S = resid.T @ resid
        return cls(n, p, bool(has_constant), Y, X, B_hat, 0.5 * (S + S.T), XtX_inv_chol, stability_tol)

    def ols_params(self) -> ReducedFormParams:
        return ReducedFormParams.from_sigma(self.B_hat, self.S / self.T_eff, self.p, self.has_constant)

    def residuals(self, params: ReducedFormParams) -> np.ndarray:
        return self.Y - self.X @ params.B.T


@dataclass(frozen=True)
class KnownPhi:
    """Degenerate reduced-form "posterior" that always returns ``params``.

    Stands in for :class:`PhiPosteriorSampler` when ``phi`` is treated as known;
    ``U`` are the innovations the restrictions are evaluated on.
    """

    params: ReducedFormParams
    U: np.ndarray

    @property
    def n(self) -> int:
        return self.params.n

    def residuals(self, params: ReducedFormParams) -> np.ndarray:
        return np.asarray(self.U, dtype=float)


def draw_phi(sampler: PhiPosteriorSampler | KnownPhi, rng: np.random.Generator) -> ReducedFormParams:
    """One stable draw from the reduced-form posterior.

    ``Sigma`` and ``B`` are redrawn together until the companion matrix is
    stable; ``SamplingError`` after ``MAX_UNSTABLE`` consecutive failures.
    """
    if isinstance(sampler, KnownPhi):
        return sampler.params
    n, k = sampler.n, sampler.n_regressors
    iw = stats.invwishart(df=sampler.dof, scale=sampler.S)
    for _ in range(MAX_UNSTABLE):
        Sigma = np.atleast_2d(iw.rvs(random_state=rng)).reshape(n, n)
        Sigma = 0.5 * (Sigma + Sigma.T)
        if k:
            L = np.linalg.cholesky(Sigma)
            B = sampler.B_hat + L @ rng.standard_normal((n, k)) @ sampler.XtX_inv_chol.T
        else:
            B = sampler.B_hat
        params = ReducedFormParams.from_sigma(B, Sigma, sampler.p, sampler.has_constant)
        if stability_check(params, sampler.stability_tol):
            return params
    raise SamplingError(
        f"{MAX_UNSTABLE} consecutive reduced-form draws were explosive; the OLS estimate is "
        "probably close to or beyond the unit circle")


# --------------------------------------------------------------------------
# rotations

def draw_uniform_orthonormal(n: int, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Haar-distributed orthonormal matrices from the QR factor of a normal matrix.

    The diagonal of ``R`` is not normalized to be positive. LAPACK's
    Householder QR makes the sign of ``R``'s diagonal a deterministic function
    of the input, so the columns are multiplied by independent random signs;
    the product is still a QR factor of the same matrix and is exactly Haar.
    """
    if n < 1:
        raise ConfigError("n must be at least 1")
    shape = (n, n) if size is None else (size, n, n)
    Q, _ = np.linalg.qr(rng.standard_normal(shape))
    signs = rng.choice((-1.0, 1.0), size=shape[:-2] + (1, n))
    return Q * signs


def sign_fix_columns(Q, params: ReducedFormParams) -> np.ndarray:
    """Flip columns so that ``diag(Q' Sigma_tr^{-1}) >= 0``; exact zeros count as positive."""
    Q = np.asarray(Q, dtype=float)
    d = np.einsum("...ij,ij->...j", Q, params.Sigma_tr_inv)
    flip = np.where(d < 0, -1.0, 1.0)
    flip = np.where(np.abs(d) < 1e-14, 1.0, flip)
    return Q * flip[..., None, :]


# --------------------------------------------------------------------------
# ex-ante probability of the narrative restrictions

def approx_narrative_probability(params: ReducedFormParams, Q, rset: RestrictionSet, M: int,
                                 rng: np.random.Generator, n_periods: int | None = None,
                                 chunk: int = 50_000) -> float:
    """Monte Carlo ``r(phi, Q) = Pr(D_N = 1 | phi, Q)``.

    Standard-normal shocks are drawn only for the ``(period, shock)`` pairs the
    narrative restrictions reference; the innovations they imply are
    ``Sigma_tr Q eps``, whose recovered shocks are ``eps`` itself, so ``D_N`` is
    evaluated on the draws directly.
    """
    if M < 1:
        raise ConfigError("M must be at least 1")
    narrative = rset.narrative
    if not narrative:
        return 1.0
    needs_T = any(getattr(r, "comparison", ()) is None for r in narrative)
    if needs_T and n_periods is None:
        raise ConfigError("n_periods is required for shock-rank restrictions over the full sample")
    T = n_periods if n_periods is not None else 0
    n = params.n
    Q = np.asarray(Q, dtype=float)
    pairs = referenced_shocks(narrative, n, T)
    col = {pt: c for c, pt in enumerate(pairs)}
    max_span = rset.max_horizon
    rows = response_rows(params, vma_coefficients(params, max_span)) @ Q   # rows[l, i, j] = eta_{i,j,l}

    hits = 0
    done = 0
    step = max(1, min(M, chunk * 8 // max(1, len(pairs))))
    while done < M:
        m = min(step, M - done)
        eps = rng.standard_normal((m, len(pairs)))

        def shock_fn(periods, j, eps=eps):
            return eps[:, [col[(int(t), j)] for t in periods]]

        def window_fn(periods, eps=eps):
            idx = [[col[(int(t), j)] for j in range(n)] for t in periods]
            return eps[:, idx]

        def ir_fn(l, i):
            return rows[l, i]

        ok = narrative_holds(narrative, T, shock_fn, window_fn, ir_fn)
        hits += int(np.count_nonzero(np.broadcast_to(ok, (m,))))
        done += m
    return hits / M


# --------------------------------------------------------------------------
# likelihoods

def gaussian_log_likelihood(params: ReducedFormParams, U) -> float:
    """``sum_t log N(u_t; 0, Sigma)``; depends on ``phi`` only, never on ``Q``."""
    U = np.asarray(U, dtype=float)
    T, n = U.shape
    W = U @ params.Sigma_tr_inv.T
    logdet = 2.0 * np.sum(np.log(np.diag(params.Sigma_tr)))
    return float(-0.5 * (T * n * math.log(2 * math.pi) + T * logdet + np.sum(W * W)))


def unconditional_log_likelihood(params: ReducedFormParams, Q, U, rset: RestrictionSet) -> float:
    """Joint density of the data and ``D_N = 1``: Gaussian part times the indicator."""
    ok = bool(RestrictionEvaluator(params, U, rset.narrative_only()).narrative(Q))
    return gaussian_log_likelihood(params, U) if ok else -math.inf


def conditional_log_likelihood(params: ReducedFormParams, Q, U, rset: RestrictionSet,
                               r: float) -> float:
    """Density of the data given ``D_N = 1``; ``r`` is ``Pr(D_N = 1 | phi, Q)``."""
    if r <= 0:
        raise ConfigError("the ex-ante probability r must be positive")
    return unconditional_log_likelihood(params, Q, U, rset) - math.log(r)


# --------------------------------------------------------------------------
# standard Bayesian posteriors

@dataclass(frozen=True)
class StructuralDraw:
    params: ReducedFormParams
    Q: np.ndarray
    U: np.ndarray
    weight: float = 1.0


@dataclass
class SamplerDiagnostics:
    phi_draws: int = 0
    q_attempts: int = 0
    accepted: int = 0
    empty_phi: int = 0

    @property
    def acceptance_rate(self) -> float:
        return self.accepted / self.q_attempts if self.q_attempts else 0.0


def sample_unconditional(sampler: PhiPosteriorSampler | KnownPhi, rset: RestrictionSet, n_draws: int,
                         rng: np.random.Generator, variant: str = "conditional",
                         max_q_attempts: int = 100_000, batch: int = 256,
                         window: int = 1_000_000, min_rate: float = 1e-6,
                         diagnostics: SamplerDiagnostics | None = None) -> list[StructuralDraw]:
    """Accept/reject draws from the posterior under the unconditional likelihood.

    ``variant="joint"`` draws a fresh ``phi`` for every candidate ``Q``, giving a
    prior for ``Q`` that is uniform over O(n) unconditionally.
    ``variant="conditional"`` redraws ``Q`` for each ``phi`` until acceptance
    (up to ``max_q_attempts``), giving a prior for ``Q`` that is uniform
    conditional on ``phi`` and on the restrictions being satisfiable.

    Raises ``SamplingError`` when, after ``window`` candidate rotations, the
    acceptance rate is below ``min_rate``.
    """
    if variant not in ("joint", "conditional"):
        raise ConfigError(f"unknown variant {variant!r}")
    diag = diagnostics if diagnostics is not None else SamplerDiagnostics()
    out: list[StructuralDraw] = []
    n = sampler.n
    while len(out) < n_draws:
        params = draw_phi(sampler, rng)
        diag.phi_draws += 1
        U = sampler.residuals(params)
        ev = RestrictionEvaluator(params, U, rset)
        budget = 1 if variant == "joint" else max_q_attempts
        tried = 0
        while tried < budget:
            m = min(batch if variant == "conditional" else 1, budget - tried)
            Qs = sign_fix_columns(draw_uniform_orthonormal(n, rng, m), params)
            ok = np.flatnonzero(ev.accepts(Qs, check_normalization=False))
            if ok.size:
                tried += int(ok[0]) + 1
                out.append(StructuralDraw(params, Qs[ok[0]], U))
                diag.accepted += 1
                break
            tried += m
        else:
            diag.empty_phi += 1
        diag.q_attempts += tried
        if diag.q_attempts >= window and diag.acceptance_rate < min_rate:
            raise SamplingError(
                f"acceptance rate {diag.acceptance_rate:.2e} after {diag.q_attempts} rotations "
                f"({diag.empty_phi} of {diag.phi_draws} reduced-form draws had no admissible Q); "
                "the restrictions look implausible")
    return out


def narrative_probabilities(draws: Sequence[StructuralDraw], rset: RestrictionSet, M: int,
                            rng: np.random.Generator, use_exact: bool = True) -> np.ndarray:
    exact = exact_narrative_probability(rset) if use_exact else None
    if exact is not None:
        return np.full(len(draws), exact)
    gens = substreams(rng, len(draws))
    return np.array([approx_narrative_probability(d.params, d.Q, rset, M, g, n_periods=d.U.shape[0])
                     for d, g in zip(draws, gens)])


def reweight_conditional(draws: Sequence[StructuralDraw], rset: RestrictionSet, M: int,
                         rng: np.random.Generator, size: int | None = None,
                         use_exact: bool = True) -> list[StructuralDraw]:
    """Importance-resample accepted draws with weights ``1 / r_hat``.

    Turns draws from the unconditional-likelihood posterior into draws from the
    conditional-likelihood posterior. A draw with ``r_hat = 0`` (possible only
    through Monte Carlo error, since it satisfied the restrictions) has its
    probability floored at ``1/M``, which caps its weight at ``M``.
    """
    if not draws:
        raise ConfigError("no draws to reweight")
    r = narrative_probabilities(draws, rset, M, rng, use_exact)
    zero = r <= 0
    if np.any(zero):
        log.warning("%d accepted draws had r_hat = 0; flooring at 1/M = %g", int(zero.sum()), 1.0 / M)
        r = np.where(zero, 1.0 / M, r)
    w = 1.0 / r
    idx = rng.choice(len(draws), size=size or len(draws), replace=True, p=w / w.sum())
    return [StructuralDraw(draws[i].params, draws[i].Q, draws[i].U, float(w[i])) for i in idx]


def hpd_interval(draws, alpha: float) -> tuple[float, float]:
    """Shortest interval containing ``ceil(alpha * N)`` of the sorted draws."""
    x = np.sort(np.asarray(draws, dtype=float).ravel())
    N = x.size
    if N < 100:
        raise ConfigError(f"need at least 100 draws for an HPD interval, got {N}")
    if not 0 < alpha < 1:
        raise ConfigError("alpha must lie in (0, 1)")
    m = math.ceil(alpha * N)
    widths = x[m - 1:] - x[:N - m + 1]
    i = int(np.argmin(widths))
    return float(x[i]), float(x[i + m - 1])
