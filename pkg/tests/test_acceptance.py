"""End-to-end acceptance criteria.

Each test prints one PASS/FAIL line. The reconstruction criteria run
full inversions and dominate the suite's runtime (~1.5-2 h on one
CPU); run `pytest --ignore tests/test_acceptance.py` for the fast
unit tests only.
"""

import time

import numpy as np
import pytest
from scipy.stats import spearmanr

from elastinv.elasticity import (DisplacementField, ElasticityBVP,
                                 MaterialField, homogeneous_material,
                                 solve_displacement)
from elastinv.harness import (MU_ONLY, ExperimentConfig, _initial_point,
                              run_noise_sweep, summary_csv, synthesize,
                              trace_csv)
from elastinv.iim import IIMContext, objective, relative_error_params, residual
from elastinv.imaging import (COMPOSITION, PUSH_FORWARD, NoiseSpec,
                              PhantomSpec, add_relative_noise,
                              generate_phantom, warp_image)
from elastinv.mesh import build_uniform_mesh
from elastinv.optimize import NMOptions, nelder_mead

NOISE_LEVELS = tuple(round(0.01 * k, 2) for k in range(1, 11))


def report(criterion: int, passed: bool, detail: str) -> None:
    print(f"\nCRITERION {criterion:2d}: {'PASS' if passed else 'FAIL'} - "
          f"{detail}")


@pytest.fixture(scope="module")
def single_problem():
    """Noise-free single-inclusion data at the default grid."""
    return synthesize(ExperimentConfig())


@pytest.fixture(scope="module")
def single_problem_plain():
    """Same-grid (oversample=1) synthesis for the floor criterion."""
    return synthesize(ExperimentConfig(oversample=1))


def test_criterion_1_fem_exactness():
    t0 = time.perf_counter()
    mesh = build_uniform_mesh(254, 108, 6.8, 2.9)
    c_d = 0.267

    # lam = 0 uniaxial compression has the exact P1 solution
    # u = (0, -c_D * y / ly).
    mat = homogeneous_material(mesh, 0.0, 34.48275862068966)
    u = solve_displacement(mesh, mat, ElasticityBVP(c_D=c_d))
    exact = np.column_stack([np.zeros(mesh.n_nodes),
                             -c_d * mesh.nodes[:, 1] / 2.9])
    err_uniaxial = np.abs(u.values - exact).max()

    # Affine full-Dirichlet manufactured solution is in the P1 space.
    A = np.array([[0.002, -0.001], [0.0005, -0.003]])
    b = np.array([0.01, -0.02])
    exact2 = mesh.nodes @ A.T + b
    mat2 = homogeneous_material(mesh, 310.3448275862069, 34.48275862068966)
    dofs = np.arange(2 * mesh.n_nodes)
    u2 = solve_displacement(mesh, mat2, ElasticityBVP(c_D=c_d),
                            dirichlet=(dofs, exact2.ravel()))
    err_affine = np.abs(u2.values - exact2).max()
    elapsed = time.perf_counter() - t0

    ok = err_uniaxial < 1e-9 * c_d and err_affine < 1e-9 and elapsed < 10
    report(1, ok, f"uniaxial {err_uniaxial:.2e} (tol {1e-9 * c_d:.1e}), "
                  f"affine {err_affine:.2e} (tol 1e-9), {elapsed:.1f}s")
    assert ok


def test_criterion_2_scaling_invariance(single_problem):
    prob = single_problem
    mesh = prob.mesh
    mat0 = MaterialField(labels=prob.labels, lam=prob.truth_lam,
                         mu=prob.truth_mu)
    u0 = solve_displacement(mesh, mat0, prob.bvp)
    ctx = IIMContext(mesh, prob.labels, prob.I1, prob.I2, prob.bvp,
                     alpha=0.0, bounds=(1.0, 10000.0))
    r0 = residual(ctx, prob.truth)

    worst_u = worst_r = 0.0
    for s in (0.5, 2.0, 10.0):
        mat = MaterialField(labels=prob.labels, lam=s * prob.truth_lam,
                            mu=s * prob.truth_mu)
        us = solve_displacement(mesh, mat, prob.bvp)
        worst_u = max(worst_u, np.abs(us.values - u0.values).max()
                      / np.abs(u0.values).max())
        worst_r = max(worst_r, abs(residual(ctx, s * prob.truth) - r0) / r0)

    ok = worst_u < 1e-9 and worst_r < 1e-9
    report(2, ok, f"displacement dev {worst_u:.2e}, "
                  f"residual dev {worst_r:.2e} (tol 1e-9)")
    assert ok


def test_criterion_3_single_mu_only(single_problem):
    t0 = time.perf_counter()
    prob = single_problem
    ctx = IIMContext(prob.mesh, prob.labels, prob.I1, prob.I2, prob.bvp,
                     alpha=0.0, fixed_lambda=prob.truth_lam)
    x0 = _initial_point(ExperimentConfig(mode=MU_ONLY), ctx.n_regions)
    res = nelder_mead(lambda p: objective(ctx, p), x0,
                      NMOptions(max_iterations=200,
                                lower=np.full(2, 10.0),
                                upper=np.full(2, 1000.0)))
    _, err_mu, _ = relative_error_params(ctx, res.x, prob.truth_mu)
    elapsed = time.perf_counter() - t0
    ok = err_mu <= 0.005 and elapsed <= 300
    report(3, ok, f"delta_mu {err_mu:.4%} (tol 0.5%), "
                  f"{elapsed:.0f}s (limit 300s)")
    assert ok


def test_criterion_4_four_mu_only():
    prob = synthesize(ExperimentConfig(preset="four"))
    ctx = IIMContext(prob.mesh, prob.labels, prob.I1, prob.I2, prob.bvp,
                     alpha=0.0, fixed_lambda=prob.truth_lam)
    x0 = _initial_point(ExperimentConfig(preset="four", mode=MU_ONLY),
                        ctx.n_regions)
    res = nelder_mead(lambda p: objective(ctx, p), x0,
                      NMOptions(max_iterations=400,
                                lower=np.full(5, 10.0),
                                upper=np.full(5, 1000.0)))
    _, err_mu, _ = relative_error_params(ctx, res.x, prob.truth_mu)
    ok = err_mu <= 0.03
    report(4, ok, f"delta_mu {err_mu:.4%} (tol 3%)")
    assert ok


def test_criterion_5_single_full_paper_grid():
    # Contrast-ratio recovery in full mode needs the finer working
    # grid; the joint error is only softly checked (the data term is
    # exactly flat under global scaling).
    prob = synthesize(ExperimentConfig(nx=508, ny=216, oversample=1))
    ctx = IIMContext(prob.mesh, prob.labels, prob.I1, prob.I2, prob.bvp,
                     alpha=0.0)
    x0 = _initial_point(ExperimentConfig(), ctx.n_regions)
    res = nelder_mead(lambda p: objective(ctx, p), x0,
                      NMOptions(max_iterations=250,
                                lower=np.full(4, 10.0),
                                upper=np.full(4, 1000.0)))
    lam, mu = ctx.split_params(res.x)
    ratio_lam = lam[1] / lam[0]
    ratio_mu = mu[1] / mu[0]
    _, _, joint = relative_error_params(ctx, res.x, prob.truth)
    ok = abs(ratio_lam / 2.0 - 1) <= 0.01 and abs(ratio_mu / 2.0 - 1) <= 0.01
    soft = joint <= 0.05
    report(5, ok, f"lam ratio {ratio_lam:.4f}, mu ratio {ratio_mu:.4f} "
                  f"(tol 1% of 2.0); joint {joint:.4%} "
                  f"(soft target 5%: {'met' if soft else 'missed'})")
    assert ok


def test_criterion_6_four_full():
    prob = synthesize(ExperimentConfig(preset="four"))
    ctx = IIMContext(prob.mesh, prob.labels, prob.I1, prob.I2, prob.bvp,
                     alpha=0.0)
    x0 = _initial_point(ExperimentConfig(preset="four"), ctx.n_regions)
    res = nelder_mead(lambda p: objective(ctx, p), x0,
                      NMOptions(max_iterations=600,
                                lower=np.full(10, 10.0),
                                upper=np.full(10, 1000.0)))
    _, mu = ctx.split_params(res.x)
    true_ratio = prob.truth_mu[1:] / prob.truth_mu[0]
    rec_ratio = mu[1:] / mu[0]
    ratio_err = np.abs(rec_ratio / true_ratio - 1)
    _, _, joint = relative_error_params(ctx, res.x, prob.truth)
    ok = bool(np.all(ratio_err <= 0.10))
    soft = joint <= 0.15
    report(6, ok, "mu ratio errors "
                  + "/".join(f"{e:.2%}" for e in ratio_err)
                  + f" (tol 10% each); joint {joint:.4%} "
                  f"(soft target 15%: {'met' if soft else 'missed'})")
    assert ok


def test_criterion_7_noise_sweep():
    t0 = time.perf_counter()
    deltas, finals, bests = [], [], []
    low_noise_finals = []
    for master in (1, 2, 3):
        cfg = ExperimentConfig(mode=MU_ONLY, noise_levels=NOISE_LEVELS,
                               master_seed=master)
        rep = run_noise_sweep(cfg)
        for run in rep.runs:
            deltas.append(run.delta)
            finals.append(run.err_joint)
            bests.append(run.best_err_joint)
            if run.delta == 0.01:
                low_noise_finals.append(run.err_joint)
    elapsed = time.perf_counter() - t0

    rho = float(spearmanr(deltas, bests)[0])
    slope = float(np.polyfit(np.log(deltas), np.log(bests), 1)[0])
    slope_final = float(np.polyfit(np.log(deltas), np.log(finals), 1)[0])
    ok_low = all(e <= 0.01 for e in low_noise_finals)
    ok_rho = rho >= 0.6
    ok_slope = 0.3 <= slope <= 1.5
    ok_time = elapsed <= 45 * 60
    ok = ok_low and ok_rho and ok_slope and ok_time
    report(7, ok,
           f"joint@1% noise {'/'.join(f'{e:.3%}' for e in low_noise_finals)} "
           f"(tol 1%), spearman {rho:.3f} (>=0.6), "
           f"slope {slope:.4f} (in [0.3,1.5]; final-iterate slope "
           f"{slope_final:.4f}), {elapsed / 60:.1f} min (limit 45)")
    assert ok


def test_criterion_8_noise_injector(single_problem):
    img = single_problem.I1
    worst = 0.0
    for delta in (0.01, 0.02, 0.031, 0.05, 0.1):
        noisy = add_relative_noise(img, NoiseSpec(delta=delta, seed=13))
        realized = (np.linalg.norm(noisy.values - img.values)
                    / np.linalg.norm(img.values))
        worst = max(worst, abs(realized - delta))
    a = add_relative_noise(img, NoiseSpec(delta=0.05, seed=99))
    b = add_relative_noise(img, NoiseSpec(delta=0.05, seed=99))
    identical = np.array_equal(a.values, b.values)
    ok = worst < 1e-12 and identical
    report(8, ok, f"worst |realized - requested| {worst:.2e} (tol 1e-12), "
                  f"seed-identical {identical}")
    assert ok


def test_criterion_9_warp_oracle():
    spec = PhantomSpec(inclusions=ExperimentConfig().inclusions, seed=42)
    checks = []
    for nx, ny, shrink in ((254, 108, 10), (508, 216, 20)):
        mesh = build_uniform_mesh(nx, ny, 6.8, 2.9)
        prob_img, _ = generate_phantom(spec, mesh)

        zero = DisplacementField(values=np.zeros((mesh.n_nodes, 2)))
        id_dev = max(
            np.abs(warp_image(prob_img, zero, mesh, m, fill=0.0).values
                   - prob_img.values).max()
            for m in (COMPOSITION, PUSH_FORWARD))

        hx, hy = prob_img.pixel_size
        kx, ky = 4, 3
        u = DisplacementField(values=np.tile([kx * hx, ky * hy],
                                             (mesh.n_nodes, 1)))
        shifted = warp_image(prob_img, u, mesh, COMPOSITION, fill=0.0)
        trans_dev = np.abs(shifted.values[:-ky, :-kx]
                           - prob_img.values[ky:, kx:]).max()

        y = mesh.nodes[:, 1]
        comp = DisplacementField(values=np.column_stack(
            [np.zeros(mesh.n_nodes), -0.267 * y / 2.9]))
        out = warp_image(prob_img, comp, mesh, PUSH_FORWARD, fill=-1.0)
        filled = np.all(out.values == -1.0, axis=1)
        rows = int(filled.sum())
        top = bool(np.all(filled[-shrink:]))
        checks.append((id_dev, trans_dev, rows, shrink, top))

    ok = all(i < 1e-12 and t < 1e-9 and r == s and tp
             for i, t, r, s, tp in checks)
    report(9, ok, "; ".join(
        f"{('default', 'paper')[k]}: identity {c[0]:.1e}, translation "
        f"{c[1]:.1e}, shrink {c[2]}/{c[3]}" for k, c in enumerate(checks)))
    assert ok


def test_criterion_10_identifiability_floor(single_problem_plain):
    prob = single_problem_plain
    mesh = prob.mesh
    mat = MaterialField(labels=prob.labels, lam=prob.truth_lam,
                        mu=prob.truth_mu)
    u = solve_displacement(mesh, mat, prob.bvp)
    # Round-trip floor: pushforward then composition with the same
    # displacement, measured through the imaging module.
    push = warp_image(prob.I1, u, mesh, PUSH_FORWARD, fill=0.0)
    back = warp_image(push, u, mesh, COMPOSITION, fill=0.0)
    pixel_area = np.prod(prob.I1.pixel_size)
    eps = float(pixel_area * np.sum((back.values - prob.I1.values) ** 2))

    ctx = IIMContext(mesh, prob.labels, prob.I1, prob.I2, prob.bvp,
                     alpha=0.0, fixed_lambda=prob.truth_lam)
    r_truth = residual(ctx, prob.truth_mu)
    doubled = prob.truth_mu.copy()
    doubled[1] *= 2.0
    r_doubled = residual(ctx, doubled)
    ok = r_truth <= eps * (1.0 + 1e-6) and r_doubled >= 5.0 * eps
    report(10, ok, f"residual(truth) {r_truth:.3e} <= floor {eps:.3e}; "
                   f"residual(2x mu_inc) {r_doubled:.3e} "
                   f"= {r_doubled / eps:.1f}x floor (need >= 5x)")
    assert ok


def test_criterion_11_optimizer_suite():
    quad = lambda x: float(np.sum((x - np.array([1.0, -2.0, 3.0])) ** 2))
    rosen = lambda x: float(100.0 * (x[1] - x[0] ** 2) ** 2
                            + (1.0 - x[0]) ** 2)
    r1 = nelder_mead(quad, np.zeros(3), NMOptions(max_iterations=500))
    q_ok = np.abs(r1.x - [1.0, -2.0, 3.0]).max() < 1e-6
    r2 = nelder_mead(rosen, np.array([-1.2, 1.0]),
                     NMOptions(max_iterations=2000))
    ro_ok = np.abs(r2.x - 1.0).max() < 1e-4
    r3 = nelder_mead(lambda x: float(np.sum((x + 1.0) ** 2)),
                     np.array([2.0, 2.0]),
                     NMOptions(max_iterations=500, lower=np.zeros(2),
                               upper=np.full(2, 4.0)))
    b_ok = np.abs(r3.x).max() < 1e-6
    mono = bool(np.all(np.diff(r2.trace_values) <= 0.0))
    r2b = nelder_mead(rosen, np.array([-1.2, 1.0]),
                      NMOptions(max_iterations=2000))
    det = (np.array_equal(r2.trace_points, r2b.trace_points)
           and r2.fun == r2b.fun)
    ok = q_ok and ro_ok and b_ok and mono and det
    report(11, ok, f"quadratic {q_ok}, rosenbrock {ro_ok}, boundary {b_ok}, "
                   f"monotone {mono}, deterministic {det}")
    assert ok


def test_criterion_12_end_to_end_determinism():
    cfg = ExperimentConfig(nx=64, ny=28, oversample=1, mode=MU_ONLY,
                           noise_levels=(0.01, 0.05), master_seed=7,
                           optimizer=NMOptions(max_iterations=8))
    rep1 = run_noise_sweep(cfg)
    rep2 = run_noise_sweep(cfg)
    same_summary = summary_csv(rep1) == summary_csv(rep2)
    same_traces = all(trace_csv(a) == trace_csv(b)
                      for a, b in zip(rep1.runs, rep2.runs))
    ok = same_summary and same_traces
    report(12, ok, f"summary identical {same_summary}, "
                   f"traces identical {same_traces}")
    assert ok
