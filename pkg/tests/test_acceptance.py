"""End-to-end acceptance criteria.

Each test carries an ``acceptance`` marker; the conftest prints one PASS/FAIL
line per criterion at the end of the session. Details of what was measured are
attached through ``user_properties`` so the summary shows the numbers.
"""
import math
import time

import numpy as np
import pytest
from scipy import stats

from nsvar import bivariate_lab as lab
from nsvar.cli import robust_estimate
from nsvar.restrictions import HistDecomp, RestrictionSet, ShockSign, SignRestriction
from nsvar.robust import Target, bounds_chebyshev, bounds_mc, robust_credible_region
from nsvar.sampling import (KnownPhi, PhiPosteriorSampler, approx_narrative_probability,
                            draw_uniform_orthonormal, reweight_conditional, sample_unconditional)
from nsvar.var_core import (historical_decomposition_all, impulse_responses,
                            structural_matrices, structural_shocks, vma_coefficients)

import oracles
from conftest import random_orthonormal, random_params


def detail(request, text):
    request.node.user_properties.append(("detail", text))


def draw_bivariate_case(rng, s21_sign, d_sign):
    while True:
        phi = lab.BivariatePhi(rng.uniform(0.3, 2.0), s21_sign * rng.uniform(0.05, 2.0), rng.uniform(0.3, 2.0))
        y = rng.standard_normal(2)
        if np.sign(phi.s21 * y[0] - phi.s11 * y[1]) == d_sign:
            return phi, y


SIGN_CASES = [(-1, -1), (1, 1), (-1, 1), (1, -1)]


# --------------------------------------------------------------------------

@pytest.mark.acceptance(1, "analytic identified sets match brute force")
def test_analytic_oracle_equivalence(request):
    start = time.perf_counter()
    rng = np.random.default_rng(101)
    worst_mismatch, worst_eta = 0, 0.0
    for k in range(200):
        phi, y = draw_bivariate_case(rng, *SIGN_CASES[k % 4])
        grid, inside = oracles.grid_theta_set(phi.Sigma_tr, y)
        analytic = lab.analytic_theta_set_shock_sign(phi, y).contains(grid)
        worst_mismatch = max(worst_mismatch, int(np.count_nonzero(analytic != inside)))
        eta = np.array(lab.analytic_eta_set(phi, y))
        worst_eta = max(worst_eta, float(np.max(np.abs(eta - oracles.eta_range(phi.Sigma_tr, y)))))
    elapsed = time.perf_counter() - start
    detail(request, f"max grid mismatch {worst_mismatch} steps, max eta error {worst_eta:.1e}, {elapsed:.0f}s")
    assert worst_mismatch < 2
    assert worst_eta <= 1e-10
    assert elapsed < 60


@pytest.mark.acceptance(2, "Monte Carlo bounds vs closed form (bivariate shock sign)")
def test_mc_bounds_vs_closed_form(request):
    start = time.perf_counter()
    rng = np.random.default_rng(202)
    rset = RestrictionSet(narrative=(ShockSign(0, 0, 1),))
    target = [Target(0, 0, 0)]
    good = inside_all = 0
    for k in range(100):
        phi, y = draw_bivariate_case(rng, *SIGN_CASES[k % 4])
        lo, hi = lab.analytic_eta_set(phi, y)
        rec = bounds_mc(phi.params(), y[None, :], rset, target, 10_000, 100_000, rng)
        inside = rec.lower[0] >= lo - 1e-12 and rec.upper[0] <= hi + 1e-12
        close = rec.lower[0] - lo <= 0.02 * phi.s11 and hi - rec.upper[0] <= 0.02 * phi.s11
        inside_all += inside
        good += inside and close
    elapsed = time.perf_counter() - start
    detail(request, f"{good}/100 inside and within 0.02*s11, {inside_all}/100 inside, {elapsed:.0f}s")
    assert good >= 95
    assert elapsed < 120


def linear_case(rng, n):
    """Random VAR(1) with shock-sign and sign restrictions on the first shock."""
    params = random_params(rng, n=n, p=1)
    T = 8
    U = rng.standard_normal((T, n)) @ params.Sigma_tr.T
    periods = rng.choice(T, size=rng.integers(1, 4), replace=False)
    narrative = tuple(ShockSign(0, int(t), int(rng.choice([-1, 1]))) for t in periods)
    traditional = (SignRestriction(int(rng.integers(n)), 0, int(rng.integers(0, 3)), int(rng.choice([-1, 1]))),)
    return params, U, RestrictionSet(traditional, narrative)


@pytest.mark.acceptance(3, "optimization bounds vs Monte Carlo bounds, n in {2, 3}")
def test_chebyshev_vs_mc(request):
    rng = np.random.default_rng(303)
    targets = [Target(0, 0, 0), Target(1, 0, 2)]
    good = agree = exempt = contain_fail = 0
    gaps, misses, refined = [], [], []
    for k in range(100):
        n = 2 if k < 50 else 3
        params, U, rset = linear_case(rng, n)
        cheb = bounds_chebyshev(params, U, rset, targets, rng)
        mc = bounds_mc(params, U, rset, targets, 10_000, 100_000, rng)
        if cheb.empty != mc.empty:
            misses.append(cheb.radius)
            if cheb.radius is not None and cheb.radius < 1e-3:
                exempt += 1
                good += 1
            continue
        agree += 1
        if cheb.empty:
            good += 1
            continue
        contained = np.all(cheb.lower <= mc.lower + 1e-9) and np.all(mc.upper <= cheb.upper + 1e-9)
        gap = float(max(np.max(mc.lower - cheb.lower), np.max(cheb.upper - mc.upper)))
        gaps.append(gap)
        contain_fail += not contained
        good += bool(contained and gap < 0.01)
        if gap >= 0.01:
            # diagnostic only: does the Monte Carlo side close the gap with more draws?
            big = bounds_mc(params, U, rset, targets, 400_000, 10_000_000, np.random.default_rng(k))
            refined.append(float(max(np.max(big.lower - cheb.lower), np.max(cheb.upper - big.upper))))
    detail(request, f"{good}/100 pass, emptiness agrees on {agree} (+{exempt} exempt with R < 1e-3; "
                    f"radii where verdicts differ: {[f'{r:.1e}' for r in misses]}), "
                    f"containment failures {contain_fail}, median gap {np.median(gaps):.1e}, "
                    f"max gap {np.max(gaps):.1e}; gaps >= 0.01 fall to "
                    f"{[f'{g:.1e}' for g in refined]} at K=400,000")
    assert good >= 95


@pytest.mark.acceptance(4, "ex-ante probability of s shock-sign restrictions is (1/2)^s")
def test_r_hat_sanity(request):
    rng = np.random.default_rng(404)
    params = random_params(rng, n=3, p=1)
    Q = random_orthonormal(rng, 3)
    M = 100_000
    zs = []
    for s in (1, 2, 3):
        rset = RestrictionSet(narrative=tuple(ShockSign(j % 3, j, 1 - 2 * (j % 2)) for j in range(s)))
        r = approx_narrative_probability(params, Q, rset, M, rng)
        p = 0.5 ** s
        zs.append((r - p) / math.sqrt(p * (1 - p) / M))
    detail(request, "z-scores " + ", ".join(f"{z:+.2f}" for z in zs))
    assert all(abs(z) < 3 for z in zs)


@pytest.mark.acceptance(5, "likelihood shapes with known phi (T = 3)")
def test_likelihood_shapes(request):
    rng = np.random.default_rng(505)
    phi = lab.BivariatePhi.from_A0(lab.TRUE_A0)
    theta0 = lab.true_theta()
    while True:
        Y, _ = lab.simulate_bivariate(lab.TRUE_A0, 3, True, rng)
        if lab.restriction_holds(theta0, phi, Y[0], "hist_decomp"):
            break
    grid = lab.theta_grid(phi, 1001)
    f = lab.gaussian_density(phi, Y)
    distinct = {}
    for mode in ("conditional", "unconditional"):
        prof = lab.likelihood_profile(grid, phi, Y, "shock_sign", mode)
        distinct[f"shock_sign/{mode}"] = len(np.unique(prof.value))
    prof = lab.likelihood_profile(grid, phi, Y, "hist_decomp", "unconditional")
    distinct["hist_decomp/unconditional"] = len(np.unique(prof.value))
    prof = lab.likelihood_profile(grid, phi, Y, "hist_decomp", "conditional", M=1_000_000, rng=rng)
    on = prof.indicator
    # value * r(theta) is f * r / r_hat; compare against 3 standard errors of r_hat
    z = np.abs(prof.value[on] * lab.hist_decomp_probability(grid[on]) / f - 1) * prof.probability[on] \
        / prof.probability_se[on]
    detail(request, f"distinct values {distinct}; max |z| of conditional x r = {z.max():.2f} "
                    f"over {on.sum()} points")
    assert all(v == 2 for v in distinct.values())
    assert z.max() < 3


@pytest.mark.acceptance(6, "Hellinger distance identifies the truth")
def test_hellinger_identification(request):
    phi = lab.BivariatePhi.from_A0(lab.TRUE_A0)
    theta0 = lab.true_theta()
    grid = lab.theta_grid(phi, 1001)
    step = grid[1] - grid[0]
    notes, ok = [], True
    curves = {}
    for kind in ("shock_sign", "hist_decomp"):
        for mode in ("unconditional", "conditional"):
            hd = lab.hellinger_profile(grid, phi, theta0, kind, mode, 200_000, np.random.default_rng(606))
            at0 = lab.hellinger_profile([theta0], phi, theta0, kind, mode, 1000)[0]
            argmin = grid[np.nanargmin(hd)]
            ok &= abs(argmin - theta0) <= step and at0 == 0.0
            notes.append(f"{kind}/{mode} argmin offset {abs(argmin - theta0) / step:.2f} steps")
            curves[kind, mode] = lab.hellinger_profile([theta0 - 0.2, theta0 + 0.2], phi, theta0, kind, mode,
                                                       200_000, np.random.default_rng(607))
    unc, con = curves["hist_decomp", "unconditional"], curves["hist_decomp", "conditional"]
    slopes = np.concatenate([unc, con]) / 0.2
    notes.append("hist_decomp slopes at -0.2/+0.2: unconditional {:.3f}/{:.3f}, conditional {:.3f}/{:.3f}"
                 .format(*slopes))
    detail(request, "; ".join(notes))
    assert ok
    assert np.all(unc >= con)


@pytest.mark.acceptance(7, "feasible arc shrinks as restricted periods accumulate")
def test_posterior_consistency(request):
    rows = lab.consistency_experiment([10, 100, 1000], np.random.default_rng(707), replications=100)
    med = [float(np.median(rows[rows[:, 0] == T, 1])) for T in (10, 100, 1000)]
    contained = bool(np.all(rows[:, 3] == 1.0))
    detail(request, f"median widths {med[0]:.4f} > {med[1]:.4f} > {med[2]:.5f}, truth always inside: {contained}")
    assert med[0] > med[1] > med[2]
    assert contained


@pytest.mark.acceptance(8, "frequentist coverage of the robust credible region")
def test_coverage(request):
    start = time.perf_counter()
    rng = np.random.default_rng(808)
    phi0 = lab.BivariatePhi.from_A0(lab.TRUE_A0)
    eta0 = phi0.s11 * math.cos(lab.true_theta())
    rset = RestrictionSet(narrative=(ShockSign(0, 0, 1),))
    target = [Target(0, 0, 0)]
    covered = 0
    reps = 200
    for _ in range(reps):
        Y, _ = lab.simulate_bivariate(lab.TRUE_A0, 50, True, rng)
        sampler = PhiPosteriorSampler.from_data(Y, p=0, has_constant=False)
        records, algorithm = robust_estimate(sampler, rset, target, 500, rng, algorithm="chebyshev")
        region = robust_credible_region(records, 0.68)
        covered += region.lower <= eta0 <= region.upper
    elapsed = time.perf_counter() - start
    detail(request, f"coverage {covered}/{reps} = {covered / reps:.3f} (threshold 0.63), {elapsed:.0f}s")
    assert covered / reps >= 0.63
    assert elapsed < 1800


def theta_of(Q):
    return math.atan2(Q[1, 0], Q[0, 0])


@pytest.mark.acceptance(9, "reweighted draws follow the conditional posterior with known phi")
def test_conditional_posterior_shape(request):
    rng = np.random.default_rng(909)
    phi = lab.BivariatePhi.from_A0(lab.TRUE_A0)
    theta0 = lab.true_theta()
    while True:
        Y, _ = lab.simulate_bivariate(lab.TRUE_A0, 3, True, rng)
        if lab.restriction_holds(theta0, phi, Y[0], "hist_decomp"):
            break
    rset = RestrictionSet(narrative=(ShockSign(0, 0, 1), HistDecomp(0, 0, 0)))
    known = KnownPhi(phi.params(), Y)
    pool = sample_unconditional(known, rset, 30_000, rng)
    draws = reweight_conditional(pool, rset, 2_000, rng, size=3_000)
    th = np.array([theta_of(d.Q) for d in draws])

    fine = np.linspace(-math.pi, math.pi, 2_000_001)
    feasible = lab.restriction_holds(fine, phi, Y[0], "hist_decomp")
    lo, hi = fine[feasible].min(), fine[feasible].max()
    edges = np.linspace(lo, hi, 21)
    dens = np.where(feasible, 1.0 / np.maximum(lab.hist_decomp_probability(fine), 1e-300), 0.0)
    mass = np.array([dens[(fine >= a) & (fine < b)].sum() for a, b in zip(edges[:-1], edges[1:])])
    expected = mass / mass.sum() * th.size
    observed, _ = np.histogram(th, bins=edges)
    keep = expected > 0
    chi2 = float(np.sum((observed[keep] - expected[keep]) ** 2 / expected[keep]))
    p = float(stats.chi2.sf(chi2, keep.sum() - 1))
    detail(request, f"chi2 {chi2:.1f} on {keep.sum() - 1} dof, p = {p:.3f}")
    assert p > 0.01


@pytest.mark.acceptance(10, "structural identities and determinism")
def test_structural_identities(request):
    rng = np.random.default_rng(1010)
    worst_hd = worst_rt = 0.0
    for _ in range(50):
        n = int(rng.integers(2, 5))
        params = random_params(rng, n=n, p=2)
        Q = random_orthonormal(rng, n)
        U = rng.standard_normal((6, n)) @ params.Sigma_tr.T
        vma = vma_coefficients(params, 6)
        for i in range(n):
            total = historical_decomposition_all(params, Q, U, i, vma).sum()
            ir = impulse_responses(params, np.eye(n), vma)
            direct = sum(ir[l, i] @ (params.Sigma_tr_inv @ U[-1 - l]) for l in range(6))
            worst_hd = max(worst_hd, abs(total - direct))
        eps = structural_shocks(params, Q, U)
        A0, _ = structural_matrices(params, Q)
        worst_rt = max(worst_rt, float(np.max(np.abs(eps @ np.linalg.inv(A0).T - U))),
                       float(np.max(np.abs(A0.T @ A0 - np.linalg.inv(params.Sigma)))))
    angles = np.array([theta_of(Q) for Q in draw_uniform_orthonormal(2, rng, 20_000)])
    ks = stats.kstest(angles, stats.uniform(-math.pi, 2 * math.pi).cdf).pvalue
    dets = np.linalg.det(draw_uniform_orthonormal(3, rng, 20_000))
    sign_p = stats.binomtest(int(np.sum(dets > 0)), dets.size).pvalue

    Y, _ = lab.simulate_bivariate(lab.TRUE_A0, 40, True, np.random.default_rng(5))
    sampler = PhiPosteriorSampler.from_data(Y, p=0)
    rset = RestrictionSet(narrative=(ShockSign(0, 0, 1),))
    runs = []
    for workers in (1, 1, 3):
        recs, _ = robust_estimate(sampler, rset, [Target(0, 0, 0), Target(1, 0, 0)], 50,
                                  np.random.default_rng(77), workers=workers)
        runs.append(np.concatenate([np.r_[r.lower, r.upper] for r in recs]).tobytes())
    identical = runs[0] == runs[1] == runs[2]
    detail(request, f"HD adding-up {worst_hd:.1e}, round trip {worst_rt:.1e}, Haar KS p = {ks:.3f}, "
                    f"det-sign p = {sign_p:.3f}, deterministic: {identical}")
    assert worst_hd <= 1e-10 and worst_rt <= 1e-10
    assert ks > 0.01 and sign_p > 0.01
    assert identical
