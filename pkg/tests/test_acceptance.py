"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the lines inline.
"""

import math
import time

import numpy as np
import pytest

from bsesolve.config import ExperimentConfig
from bsesolve.experiments import (
    continuum_gap_rows,
    run_gauss,
    run_inequalities,
    run_oracle_compare,
    run_solve,
)
from bsesolve.filtered_space import (
    RandomVector,
    conditional_process,
    lp_norm,
    sp_norm,
)
from bsesolve.generators import IntegralDriver, quadratic_meanfield
from bsesolve.noise import build_brownian_tree, build_jump_diffusion_tree
from bsesolve.oracles import linear_grid_y0, oracle_backward_recursion
from bsesolve.solver import (
    SolverConfig,
    anticipating_window_bound,
    block_solve,
    contraction_constant,
    g_lipschitz_bound,
    mann_solve,
    picard_solve,
    verify_uniqueness,
)

TOL = 1e-10


def _report(num, label, ok, detail=""):
    verdict = "PASS" if ok else "FAIL"
    suffix = f" ({detail})" if detail else ""
    print(f"ACCEPTANCE {num:02d} {label}: {verdict}{suffix}")
    assert ok, f"criterion {num} {label}{suffix}"


def zero_gen():
    return IntegralDriver(fn=lambda ctx: np.zeros_like(ctx.y), depends_on_y=False, name="zero")


def random_terminal(model, seed, d=1):
    rng = np.random.default_rng(seed)
    top = model.space.levels - 1
    return RandomVector(model.space, top, rng.standard_normal((model.space.leaf_count, d)))


def test_criterion_01_zero_driver_exactness():
    models = [
        build_brownian_tree(1, 14, 1.0),
        build_brownian_tree(2, 7, 1.0),
        build_jump_diffusion_tree(1, [[1.0]], [0.5], 7, 1.0),
        build_jump_diffusion_tree(0, [[1.0], [2.0], [-1.0]], [0.3, 0.2, 0.1], 7, 1.0),
        build_jump_diffusion_tree(1, [[1.0]], [0.5], 4, 1.0, extra_noise=True),
    ]
    worst_defect, worst_iters, worst_time = 0.0, 0, 0.0
    for i, model in enumerate(models):
        assert model.space.leaf_count <= 2**14
        xi = random_terminal(model, seed=100 + i)
        start = time.perf_counter()
        rep = picard_solve(zero_gen(), xi, SolverConfig())
        worst_time = max(worst_time, time.perf_counter() - start)
        assert rep.converged
        worst_iters = max(worst_iters, rep.n_iter)
        cond = conditional_process(xi)
        for k in range(model.space.levels):
            worst_defect = max(
                worst_defect,
                float(np.max(np.abs(rep.y.at(k) - cond.at(k)))),
                float(np.max(np.abs(rep.m.at(k) - (cond.at(0)[0] - cond.at(k))))),
            )
        worst_defect = max(worst_defect, rep.residual)
    ok = worst_defect <= 1e-12 and worst_iters <= 2 and worst_time < 1.0
    _report(
        1,
        "zero-driver exactness",
        ok,
        f"max defect {worst_defect:.2e}, iters {worst_iters}, slowest {worst_time:.2f}s",
    )


def test_criterion_02_oracle_equivalence():
    rng = np.random.default_rng(20240)
    worst = 0.0
    c2 = contraction_constant(2.0)
    for trial in range(20):
        n = 1 if trial % 3 else 2
        steps = int(rng.integers(2, 11)) if n == 1 else int(rng.integers(2, 6))
        model = build_brownian_tree(n, steps, 1.0)
        d = 1 if trial % 2 else 2
        a = float(rng.uniform(-0.8, 0.8))
        c = float(rng.uniform(-0.8, 0.8))
        scale = (abs(a) + abs(c) * math.sqrt(n)) / (0.9 * c2)
        if scale > 1.0:
            a, c = a / scale, c / scale
        assert (abs(a) + abs(c) * math.sqrt(n)) * 1.0 < c2
        xi = random_terminal(model, seed=300 + trial, d=d)

        gen = IntegralDriver(
            fn=lambda ctx, a=a, c=c: a * ctx.y + c * ctx.z.sum(axis=2),
            needs_zu=True,
            name="markov",
        )
        rep = picard_solve(gen, xi, SolverConfig(tol=TOL), model)
        assert rep.converged
        sol = oracle_backward_recursion(
            xi, model, lambda t, y, z, a=a, c=c: a * y + c * z.sum(axis=2), tol=TOL
        )
        worst = max(worst, sp_norm(rep.y - sol.y, 2.0))
    _report(2, "oracle equivalence", worst <= 10.0 * TOL, f"max S2 gap {worst:.2e}")


def test_criterion_03_continuous_limit():
    start = time.perf_counter()
    a, b, horizon = 0.5, 1.0, 1.0
    # anchor: where the tree is feasible the solver reproduces the grid recursion
    for steps in (4, 8):
        model = build_brownian_tree(1, steps, horizon)
        top = model.space.levels - 1
        xi = RandomVector(model.space, top, model.w_path[top][:, :1] ** 2)
        gen = IntegralDriver(fn=lambda ctx: a * ctx.y + b, name="linear")
        rep = picard_solve(gen, xi, SolverConfig())
        assert rep.converged
        grid_y0 = linear_grid_y0(1.0, a, b, steps, horizon)
        assert abs(float(rep.y.at(0)[0, 0]) - grid_y0) <= 1e-9
    rows = continuum_gap_rows(a, b, horizon, [32, 64, 128], mean_xi=horizon)
    errs = [r[2] for r in rows]
    ratios = [r[3] for r in rows[1:]]
    elapsed = time.perf_counter() - start
    ok = errs[0] > errs[1] > errs[2] and all(1.7 <= r <= 2.3 for r in ratios) and elapsed < 30.0
    _report(
        3,
        "continuous-limit check",
        ok,
        f"errors {[f'{e:.2e}' for e in errs]}, ratios {[f'{r:.3f}' for r in ratios]}, {elapsed:.1f}s",
    )


def test_criterion_04_contraction_certification():
    from bsesolve.generators import FunctionalF

    model = build_brownian_tree(1, 5, 1.0)
    instances = []
    for c in (0.05, 0.1, 0.15, 0.19):
        instances.append((FunctionalF(fn=lambda y, m, c=c: m * c, depends_on_y=False), c))
    for a in (0.1, 0.19):
        instances.append((IntegralDriver(fn=lambda ctx, a=a: a * ctx.y), a * 1.0))
    for c in (0.1, 0.19):
        instances.append(
            (
                IntegralDriver(
                    fn=lambda ctx, c=c: c * ctx.z.sum(axis=2), depends_on_y=False, needs_zu=True
                ),
                c * math.sqrt(1.0),
            )
        )
    worst_excess = -math.inf
    for gen, declared in instances:
        for seed in (0, 1):
            xi = random_terminal(model, seed=400 + seed)
            rep = picard_solve(gen, xi, SolverConfig(declared_lipschitz=declared), model)
            assert rep.converged
            bound = g_lipschitz_bound(declared, 2.0)
            assert rep.theoretical_bound == pytest.approx(bound, rel=1e-12)
            if rep.observed_ratio is not None:
                worst_excess = max(worst_excess, rep.observed_ratio - bound)
    _report(4, "contraction certification", worst_excess <= 1e-9, f"max ratio excess {worst_excess:.2e}")


def test_criterion_05_inequality_suite():
    cfg = ExperimentConfig.model_validate(
        {
            "seed": 20245,
            "noise": {"brownian_dim": 1, "steps": 2, "horizon": 1.0},
            "terminal": {"kind": "w_terminal"},
            "inequalities": {"n_instances": 1000},
        }
    )
    out = run_inequalities(cfg)
    failing = [r["name"] for r in out.report["rows"] if not r["pass"]]
    _report(
        5,
        "inequality suite (1000 seeded instances)",
        out.exit_code == 0 and not failing,
        f"failing rows {failing}" if failing else "all rows pass",
    )


def test_criterion_06_block_solver_regime():
    horizon, steps = 1.0, 8
    delta = horizon / 4.0
    window_cap = contraction_constant(2.0) / math.sqrt(3.0 * delta * (delta + 1.0))
    c = 0.97 * window_cap
    assert anticipating_window_bound(c, delta) < contraction_constant(2.0)
    model = build_brownian_tree(1, steps, horizon)
    top = model.space.levels - 1
    xi = RandomVector(model.space, top, model.w_path[top][:, :1] ** 2)
    gen = IntegralDriver(
        fn=lambda ctx: -c * ctx.y - c * ctx.z.sum(axis=2), needs_zu=True, name="window_instance"
    )
    one_window = picard_solve(gen, xi, SolverConfig(), model)
    blocked = block_solve(gen, xi, SolverConfig(block_delta=delta), model)
    block_ok = blocked.converged and blocked.residual <= TOL * (1.0 + lp_norm(xi, 2.0))

    worst_gap = 0.0
    lin = IntegralDriver(fn=lambda ctx: 0.3 * ctx.y + 0.2, name="lin")
    small = build_brownian_tree(1, 4, 1.0)
    small_top = small.space.levels - 1
    for seed in range(10):
        xi_s = random_terminal(small, seed=500 + seed)
        rp = picard_solve(lin, xi_s, SolverConfig())
        rb = block_solve(lin, xi_s, SolverConfig(block_delta=1.0))
        assert rp.converged and rb.converged
        worst_gap = max(worst_gap, lp_norm(rb.fixed_point - rp.fixed_point, 2.0))
    equality_ok = worst_gap <= 1e-12

    ok = one_window.diverged and block_ok and equality_ok
    _report(
        6,
        "block solver regime",
        ok,
        f"one-window diverged: {one_window.diverged}, block residual "
        f"{blocked.residual:.2e}, delta=T gap {worst_gap:.2e}",
    )


def test_criterion_07_meanfield_uniqueness():
    from bsesolve.laws import DiscreteLaw, wasserstein2

    def mkv(ctx):
        dist = wasserstein2(ctx.law_y, DiscreteLaw.dirac(np.zeros(ctx.law_y.dim)))
        return 0.08 * ctx.y + 0.05 * np.tile(ctx.law_y.mean(), (ctx.y.shape[0], 1)) + 0.03 * dist

    gen = IntegralDriver(fn=mkv, needs_laws=frozenset({"y"}), name="mkv")
    model = build_brownian_tree(1, 4, 1.0)
    worst = 0.0
    for seed in range(10):
        xi = random_terminal(model, seed=600 + seed)
        out = verify_uniqueness(gen, xi, SolverConfig(), n_starts=3, seed=seed)
        assert out.diverged_starts == ()
        worst = max(worst, out.max_pairwise_distance)
    _report(7, "mean-field uniqueness", worst <= 10.0 * TOL, f"max pairwise distance {worst:.2e}")


def test_criterion_08_quadratic_meanfield_existence():
    model = build_brownian_tree(1, 6, 1.0)
    top = model.space.levels - 1
    w = model.w_path[top]
    xi = RandomVector(model.space, top, np.hstack([w, np.abs(w)]))
    gen = quadratic_meanfield([0.05, -0.1], [0.09], f1=lambda z: 0.1 * z.sum(axis=2))
    rep_xi = mann_solve(gen, xi, SolverConfig(mann_theta=0.5), model)
    rep_zero = mann_solve(gen, xi, SolverConfig(mann_theta=0.5, initial="zero"), model)
    gap = (
        lp_norm(rep_xi.fixed_point - rep_zero.fixed_point, 2.0)
        if rep_xi.converged and rep_zero.converged
        else math.inf
    )
    ok = (
        rep_xi.converged
        and rep_zero.converged
        and rep_xi.residual <= 1e-8
        and rep_zero.residual <= 1e-8
        and gap <= 1e-7
    )
    _report(
        8,
        "quadratic mean-field existence",
        ok,
        f"residuals {rep_xi.residual:.2e}/{rep_zero.residual:.2e}, start gap {gap:.2e}",
    )


def test_criterion_09_gaussian_diagnostics():
    cfg = ExperimentConfig.model_validate(
        {
            "seed": 20249,
            "noise": {"brownian_dim": 1, "steps": 2, "horizon": 1.0},
            "terminal": {"kind": "w_terminal"},
            "gauss": {"truncation": 8, "quad_order": 5, "chain_trials": 100},
        }
    )
    start = time.perf_counter()
    out = run_gauss(cfg)
    elapsed = time.perf_counter() - start
    rows = {r["name"]: r for r in out.report["rows"]}
    ok = (
        out.exit_code == 0
        and rows["white_noise_isometry"]["observed"] <= 1e-12
        and rows["poincare_equality_case"]["pass"]
        and rows["lipschitz_chain_excess"]["observed"] <= 1e-9
        and all(r["pass"] for r in out.report["rows"])
        and elapsed < 60.0
    )
    _report(
        9,
        "Gaussian diagnostics",
        ok,
        f"isometry {rows['white_noise_isometry']['observed']:.1e}, {elapsed:.1f}s at J=8 q=5",
    )


def test_criterion_10_determinism():
    solve_cfg = ExperimentConfig.model_validate(
        {
            "seed": 20250,
            "noise": {"brownian_dim": 1, "steps": 6, "horizon": 1.0},
            "driver": {"kind": "linear_y", "a": 0.5, "b": 1.0},
            "terminal": {"kind": "w1_squared"},
            "oracle": {"kind": "linear_scalar", "a": 0.5, "b": 1.0},
            "inequalities": {"n_instances": 1000},
            "gauss": {"truncation": 8, "quad_order": 5, "chain_trials": 100},
        }
    )
    mismatches = []
    for name, runner in (
        ("solve", run_solve),
        ("oracle", run_oracle_compare),
        ("inequalities", run_inequalities),
        ("gauss", run_gauss),
    ):
        first, second = runner(solve_cfg), runner(solve_cfg)
        if first.files != second.files:
            mismatches.append(name)
    _report(10, "determinism", not mismatches, f"mismatches {mismatches}" if mismatches else "byte-identical")
