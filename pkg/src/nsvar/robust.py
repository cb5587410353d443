"""Bounds of the conditional identified set and the robust Bayesian summaries.

Two ways to compute per-draw bounds ``[l(phi), u(phi)]`` of an impulse response:

* ``bounds_mc``: rejection sampling of Haar rotations; an inner approximation.
* ``bounds_chebyshev``: when every restriction is linear in one column ``q``
  of Q, decide emptiness with a Chebyshev-center LP and optimize ``c'q`` on the
  unit sphere directly.
"""
from __future__ import annotations

import heapq
import itertools
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import optimize

from .errors import ConfigError, ZeroPlausibilityError
from .restrictions import RestrictionEvaluator, RestrictionSet, linear_coefficient_matrix
from .sampling import draw_uniform_orthonormal, sign_fix_columns, substreams
from .simplex import simplex_max
from .var_core import ReducedFormParams, response_rows, vma_coefficients

log = logging.getLogger(__name__)

FEAS_TOL = 1e-8
RADIUS_TOL = 1e-10


@dataclass(frozen=True)
class Target:
    """Impulse response of ``variable`` to ``shock`` at ``horizon`` (0-based)."""

    variable: int
    shock: int
    horizon: int


@dataclass(frozen=True)
class BoundsRecord:
    """Per-draw bounds for every target; ``lower``/``upper`` are NaN when empty."""

    index: int
    empty: bool
    lower: np.ndarray
    upper: np.ndarray
    accepted: int = 0
    attempts: int = 0
    flagged: bool = False
    radius: float | None = None

    @classmethod
    def empty_record(cls, index, n_targets, **kw) -> "BoundsRecord":
        nan = np.full(n_targets, np.nan)
        return cls(index, True, nan, nan.copy(), **kw)


def _target_rows(params: ReducedFormParams, targets: Sequence[Target], min_horizon: int = 0):
    H = max([t.horizon for t in targets] + [min_horizon])
    vma = vma_coefficients(params, H)
    return vma, response_rows(params, vma)


# --------------------------------------------------------------------------
# Monte Carlo bounds

def bounds_mc(params: ReducedFormParams, U, rset: RestrictionSet, targets: Sequence[Target],
              K: int, L: int, rng: np.random.Generator, index: int = 0,
              batch: int = 4096, max_total: int | None = None) -> BoundsRecord:
    """Bounds from ``K`` accepted Haar rotations; empty if none in ``L`` attempts.

    One pool of accepted rotations serves every target. Sampling stops after
    ``max_total`` attempts (default ``50 * L``); a record that stopped with fewer
    than ``K`` acceptances is flagged.
    """
    if K < 1 or L < K:
        raise ConfigError("need K >= 1 and L >= K")
    max_total = max_total or 50 * L
    vma, rows = _target_rows(params, targets, rset.max_horizon)
    ev = RestrictionEvaluator(params, U, rset, vma)
    n = params.n
    lo = np.full(len(targets), np.inf)
    hi = np.full(len(targets), -np.inf)
    accepted = attempts = 0
    while accepted < K and attempts < max_total:
        if accepted == 0 and attempts >= L:
            break
        limit = L - attempts if accepted == 0 else max_total - attempts
        m = min(batch, limit)
        Qs = sign_fix_columns(draw_uniform_orthonormal(n, rng, m), params)
        ok = np.flatnonzero(ev.accepts(Qs, check_normalization=False))
        if ok.size > K - accepted:
            ok = ok[:K - accepted]
            attempts += int(ok[-1]) + 1
        else:
            attempts += m
        if ok.size:
            good = Qs[ok]
            for t, tg in enumerate(targets):
                vals = good[:, :, tg.shock] @ rows[tg.horizon, tg.variable]
                lo[t] = min(lo[t], vals.min())
                hi[t] = max(hi[t], vals.max())
            accepted += ok.size
    if accepted == 0:
        return BoundsRecord.empty_record(index, len(targets), attempts=attempts)
    return BoundsRecord(index, False, lo, hi, accepted, attempts, flagged=accepted < K)


# --------------------------------------------------------------------------
# Chebyshev center

def chebyshev_center(rows) -> tuple[float, np.ndarray]:
    """Largest ball inside ``{x in [-1, 1]^n : rows @ x >= 0}``.

    Solves ``max R`` subject to ``Z_k'x - R ||Z_k|| >= 0``, ``x_i + R <= 1`` and
    ``x_i - R >= -1``. Returns ``(R, center)``.
    """
    Z = np.atleast_2d(np.asarray(rows, dtype=float))
    n = Z.shape[1]
    norms = np.linalg.norm(Z, axis=1)
    Z, norms = Z[norms > 0], norms[norms > 0]
    # shifted variables w = x + 1 >= 0 and R >= 0
    A = [np.hstack([-Z, norms[:, None]])]
    b = [-Z.sum(axis=1)]
    eye = np.eye(n)
    A.append(np.hstack([eye, np.ones((n, 1))]))
    b.append(np.full(n, 2.0))
    A.append(np.hstack([-eye, np.ones((n, 1))]))
    b.append(np.zeros(n))
    c = np.zeros(n + 1)
    c[-1] = 1.0
    res = simplex_max(c, np.vstack(A), np.concatenate(b))
    if res.status != "optimal":  # pragma: no cover - x = 0, R = 0 is always feasible
        raise RuntimeError(f"Chebyshev LP returned {res.status}")
    return float(res.x[-1]), res.x[:n] - 1.0


# --------------------------------------------------------------------------
# optimization on the sphere

def _unit_rows(Z):
    Z = np.atleast_2d(np.asarray(Z, dtype=float)).reshape(-1, np.shape(Z)[-1])
    norms = np.linalg.norm(Z, axis=1)
    keep = norms > 0
    return Z[keep] / norms[keep, None]


def _feasible(Zn, q, tol=FEAS_TOL):
    return Zn.shape[0] == 0 or bool(np.min(Zn @ q) >= -tol)


def _penalty_value(Zn, cn, q, mu):
    viol = np.minimum(Zn @ q, 0.0)
    s = q @ q - 1.0
    return -cn @ q + mu * (s * s + viol @ viol)


def _newton_stage(Zn, cn, q, mu, max_iter=50):
    """Modified Newton on ``-c'q + mu((q'q-1)^2 + sum min(Z_k q, 0)^2)``.

    Hessian eigenvalues are floored at 1 (the curvature scale of the
    normalized objective), which keeps tangential steps bounded where the
    penalty Hessian is rank deficient.
    """
    f = _penalty_value(Zn, cn, q, mu)
    for _ in range(max_iter):
        act = Zn[(Zn @ q) < 0]
        s = q @ q - 1.0
        g = -cn + mu * (4.0 * s * q + 2.0 * act.T @ (act @ q))
        if np.linalg.norm(g) <= 1e-12 * (1.0 + mu):
            break
        H = mu * (8.0 * np.outer(q, q) + 2.0 * act.T @ act) + 4.0 * mu * s * np.eye(q.size)
        w, V = np.linalg.eigh(H)
        d = -V @ ((V.T @ g) / np.maximum(np.abs(w), 1.0))
        slope = g @ d
        t = 1.0
        while t > 1e-10:
            qn = q + t * d
            fn = _penalty_value(Zn, cn, qn, mu)
            if fn <= f + 1e-4 * t * slope:
                break
            t *= 0.5
        else:
            break
        done = f - fn <= 1e-15 * (1.0 + abs(f)) or t * np.linalg.norm(d) <= 1e-15
        q, f = qn, fn
        if done:
            break
    return q


def _penalty_search(Zn, c, q0, stages=6, mu0=10.0):
    """Maximize ``c'q`` by quadratic-penalty continuation started at ``q0``."""
    cn = c / np.linalg.norm(c)
    q = q0.copy()
    mu = mu0
    for _ in range(stages):
        q = _newton_stage(Zn, cn, q, mu)
        mu *= 10.0
    nrm = np.linalg.norm(q)
    return q / nrm if nrm > 0 else q0.copy()


def _repair(Zn, q, q0, iters=60):
    """Move ``q`` toward the feasible ``q0`` along the sphere until feasible."""
    if _feasible(Zn, q):
        return q
    lo, hi = 0.0, 1.0
    for _ in range(iters):
        t = 0.5 * (lo + hi)
        p = (1 - t) * q + t * q0
        p /= np.linalg.norm(p)
        if _feasible(Zn, p):
            hi = t
        else:
            lo = t
    p = (1 - hi) * q + hi * q0
    return p / np.linalg.norm(p)


def _cone_projection(Zn, c):
    """Euclidean projection of ``c`` onto ``{q : Zn q >= 0}``.

    By Moreau's decomposition ``c = P_K c + P_{K°} c`` with the polar cone
    ``K° = {-Zn' lam : lam >= 0}``, so ``P_K c = c + Zn' lam*`` where ``lam*``
    solves the NNLS problem ``min ||Zn' lam + c||``.
    """
    if Zn.shape[0] == 0:
        return c.copy()
    lam, _ = optimize.nnls(Zn.T, -c)
    return c + Zn.T @ lam


def _active_set_candidates(Zn, c, q, max_combos=5000):
    """Stationary points of ``c'q`` on faces of the cone near ``q``.

    For an active set ``A`` the candidate is the normalized projection of ``c``
    onto the null space of ``Zn[A]``; with ``n-1`` independent active rows that
    null space is a line and both of its directions are candidates.
    """
    n = c.size
    out = [c / np.linalg.norm(c)]
    if Zn.shape[0] == 0:
        return out
    slack = Zn @ q
    active = list(np.flatnonzero(slack < 1e-6))
    sets = [active] + [active[:i] + active[i + 1:] for i in range(len(active))]
    m = Zn.shape[0]
    if math.comb(m, n - 1) <= max_combos:
        sets += [list(s) for s in itertools.combinations(range(m), n - 1)]
    for A in sets:
        if not A:
            continue
        M = Zn[A]
        _, sv, Vt = np.linalg.svd(M)
        rank = int(np.sum(sv > 1e-10))
        N = Vt[rank:].T
        if N.shape[1] == 0:
            continue
        if N.shape[1] == 1:
            # an extreme ray; when max c'q <= 0 the optimum sits on one of these,
            # possibly on the side pointing away from c
            out.extend([N[:, 0], -N[:, 0]])
            continue
        pc = N @ (N.T @ c)
        nrm = np.linalg.norm(pc)
        if nrm > 1e-12:
            out.append(pc / nrm)
    return out


def _fallback_points(Zn, q0, rng, count=1000):
    n = q0.size
    pts = rng.standard_normal((count, n))
    half = count // 2
    pts[:half] = q0 + rng.uniform(0.01, 1.0, (half, 1)) * pts[:half]
    pts /= np.linalg.norm(pts, axis=1, keepdims=True)
    if Zn.shape[0]:
        pts = pts[np.min(pts @ Zn.T, axis=1) >= -FEAS_TOL]
    return np.vstack([q0[None, :], pts])


@dataclass(frozen=True)
class OptBounds:
    lower: float
    upper: float
    argmin: np.ndarray
    argmax: np.ndarray
    flagged: bool = False


def _maximize(Zn, c, q0, rng):
    # A nonzero cone projection is the exact maximizer: for unit q in the cone,
    # c'q <= (P_K c)'q <= ||P_K c||. Otherwise the optimum is <= 0 and the
    # problem is nonconvex, so search.
    proj = _cone_projection(Zn, c)
    pn = np.linalg.norm(proj)
    cands = []
    if pn > 1e-10 * np.linalg.norm(c):
        cands.append(proj / pn)
    cands = [p for p in cands if _feasible(Zn, p)]
    if not cands:
        q = _repair(Zn, _penalty_search(Zn, c, q0), q0)
        cands = [q] + _active_set_candidates(Zn, c, q)
        cands = [p for p in cands if _feasible(Zn, p)]
    best = max(cands, key=lambda p: c @ p)
    pts = _fallback_points(Zn, q0, rng)
    fb = pts[np.argmax(pts @ c)]
    flagged = False
    if c @ fb > c @ best + 1e-12:
        flagged = True
        best = fb
    return best, flagged


def bounds_opt(rows, c, q0=None, rng: np.random.Generator | None = None) -> OptBounds:
    """Min and max of ``c'q`` over ``{q : rows @ q >= 0, ||q|| = 1}``.

    ``q0`` must be a feasible unit vector (the normalized Chebyshev center when
    omitted). Returned optimizers are feasible to ``1e-8`` and never worse than
    the best of 1,000 sampled feasible points; a record is flagged when the
    sampled fallback wins.
    """
    c = np.asarray(c, dtype=float)
    Zn = _unit_rows(rows) if np.size(rows) else np.zeros((0, c.size))
    rng = rng if rng is not None else np.random.default_rng(0)
    if np.linalg.norm(c) == 0:
        z = np.zeros(c.size)
        return OptBounds(0.0, 0.0, z, z)
    if q0 is None:
        R, ctr = chebyshev_center(Zn) if Zn.shape[0] else (1.0, np.ones(c.size))
        if R <= RADIUS_TOL:
            raise ConfigError("restriction cone has empty interior; no feasible starting point")
        q0 = ctr
    q0 = np.asarray(q0, dtype=float)
    q0 = q0 / np.linalg.norm(q0)
    if not _feasible(Zn, q0):
        raise ConfigError("starting point q0 violates the restrictions")
    qmax, f1 = _maximize(Zn, c, q0, rng)
    qmin, f2 = _maximize(Zn, -c, q0, rng)
    return OptBounds(float(c @ qmin), float(c @ qmax), qmin, qmax, f1 or f2)


def bounds_chebyshev(params: ReducedFormParams, U, rset: RestrictionSet, targets: Sequence[Target],
                     rng: np.random.Generator, index: int = 0) -> BoundsRecord:
    """Chebyshev-center emptiness check followed by sphere optimization per target."""
    column = rset.linear_column()
    shocks = {t.shock for t in targets}
    if column is None:
        if len(rset) or len(shocks) != 1:
            raise ConfigError("optimization bounds need restrictions linear in a single column of Q "
                              "and all targets on that column")
        column = shocks.pop()
    elif shocks != {column}:
        raise ConfigError(f"every target must be a response to shock {column}")
    Z = linear_coefficient_matrix(params, U, rset, column)
    R, center = chebyshev_center(Z)
    if R <= RADIUS_TOL:
        return BoundsRecord.empty_record(index, len(targets), radius=R)
    q0 = center / np.linalg.norm(center)
    _, rows = _target_rows(params, targets)
    lo, hi, flag = [], [], False
    for tg in targets:
        ob = bounds_opt(Z, rows[tg.horizon, tg.variable], q0, rng)
        lo.append(ob.lower)
        hi.append(ob.upper)
        flag |= ob.flagged
    return BoundsRecord(index, False, np.array(lo), np.array(hi), flagged=flag, radius=R)


def compute_records(draws: Sequence[tuple[ReducedFormParams, np.ndarray]], rset: RestrictionSet,
                    targets: Sequence[Target], algorithm: str, rng: np.random.Generator,
                    K: int = 10_000, L: int = 100_000, workers: int = 1) -> list[BoundsRecord]:
    """Bounds records for a list of ``(params, U)`` pairs.

    Each record owns a substream derived from ``rng``, so the output does not
    depend on ``workers``.
    """
    gens = substreams(rng, len(draws))

    def task(i):
        params, U = draws[i]
        if algorithm == "mc":
            return bounds_mc(params, U, rset, targets, K, L, gens[i], index=i)
        if algorithm == "chebyshev":
            return bounds_chebyshev(params, U, rset, targets, gens[i], index=i)
        raise ConfigError(f"unknown algorithm {algorithm!r}")

    if workers <= 1:
        return [task(i) for i in range(len(draws))]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(task, range(len(draws))))


# --------------------------------------------------------------------------
# summaries over records

def _arrays(records: Sequence[BoundsRecord], target: int):
    full = [r for r in records if not r.empty]
    lo = np.array([r.lower[target] for r in full], dtype=float)
    hi = np.array([r.upper[target] for r in full], dtype=float)
    return lo, hi


def plausibility(records: Sequence[BoundsRecord]) -> float:
    if not records:
        raise ConfigError("no records")
    return sum(not r.empty for r in records) / len(records)


def set_of_posterior_means(records: Sequence[BoundsRecord], target: int = 0) -> tuple[float, float]:
    lo, hi = _arrays(records, target)
    if lo.size == 0:
        raise ZeroPlausibilityError("every reduced-form draw produced an empty identified set")
    return float(lo.mean()), float(hi.mean())


@dataclass(frozen=True)
class CredibleRegion:
    lower: float
    upper: float
    center: float
    radius: float
    flat_range: tuple[float, float] = field(default=(math.nan, math.nan))


def _zhat(lo, hi, alpha):
    k = math.ceil(alpha * lo.size) - 1

    def z(eta):
        d = np.maximum(np.abs(eta - lo), np.abs(eta - hi))
        return float(np.partition(d, k)[k])
    return z


def _narrowest_cover(lo, hi, k):
    """Narrowest interval ``[a, a + w]`` that contains ``k`` of the ``[lo_m, hi_m]``.

    The left end can be taken at some ``lo_m``. Sweeping ``a`` down through the
    sorted lower bounds while a heap keeps the ``k`` smallest upper bounds of
    the records with ``lo_m >= a`` gives every candidate width in
    ``O(M log M)``. Returns ``(w, centers)`` with every center attaining ``w``.
    """
    order = np.argsort(-lo, kind="stable")
    heap: list[float] = []          # negated, so heap[0] is minus the k-th smallest upper bound
    best = math.inf
    widths, centers = [], []
    for m in order:
        heapq.heappush(heap, -hi[m])
        if len(heap) > k:
            heapq.heappop(heap)
        if len(heap) == k:
            a, top = lo[m], -heap[0]
            w = top - a
            widths.append(w)
            centers.append(0.5 * (a + top))
            best = min(best, w)
    widths, centers = np.array(widths), np.array(centers)
    tie = widths <= best + 1e-12 * max(1.0, abs(best))
    return best, np.sort(centers[tie])


def robust_credible_region(records: Sequence[BoundsRecord], alpha: float,
                           target: int = 0, min_records: int = 100) -> CredibleRegion:
    """Smallest interval that contains ``[l, u]`` with posterior probability ``alpha``.

    ``z(eta)``, the ``ceil(alpha M)``-th order statistic of
    ``max(|eta - l_m|, |eta - u_m|)``, is at most ``r`` exactly when
    ``[eta - r, eta + r]`` contains ``ceil(alpha M)`` of the record intervals, so
    its global minimum is the narrowest such cover, found exactly by a sweep.
    ``z`` is piecewise linear and need not be unimodal; ties go to the smallest
    minimizer and the extreme minimizers are reported in ``flat_range``.
    """
    if not 0 < alpha < 1:
        raise ConfigError("alpha must lie in (0, 1)")
    lo, hi = _arrays(records, target)
    if lo.size < min_records:
        raise ConfigError(f"need at least {min_records} nonempty records, got {lo.size}")
    k = math.ceil(alpha * lo.size)
    width, centers = _narrowest_cover(lo, hi, k)
    eta = float(centers[0])
    r = _zhat(lo, hi, alpha)(eta)
    return CredibleRegion(eta - r, eta + r, eta, r, (eta, float(centers[-1])))


def posterior_bounds_probability(records: Sequence[BoundsRecord], hypothesis: tuple[float, float],
                                 target: int = 0) -> tuple[float, float]:
    """Posterior lower and upper probability of ``eta in [a, b]`` (bounds may be infinite)."""
    a, b = hypothesis
    lo, hi = _arrays(records, target)
    if lo.size == 0:
        return 0.0, 0.0
    inside = (lo >= a) & (hi <= b)
    touch = (hi >= a) & (lo <= b)
    return float(inside.mean()), float(touch.mean())


@dataclass(frozen=True)
class RobustSummary:
    mean_bounds: tuple[float, float]
    robust_region: dict
    probabilities: dict
    plausibility: float


def summarize(records: Sequence[BoundsRecord], alphas: Sequence[float] = (0.68,),
              hypotheses: Sequence[tuple[float, float]] = (), target: int = 0,
              min_records: int = 100) -> RobustSummary:
    regions = {}
    for a in alphas:
        cr = robust_credible_region(records, a, target, min_records)
        regions[a] = (cr.lower, cr.upper)
    probs = {h: posterior_bounds_probability(records, h, target) for h in hypotheses}
    return RobustSummary(set_of_posterior_means(records, target), regions, probs, plausibility(records))
