"""Fixed-point solvers for backward stochastic equations on event trees.

A candidate solution is a terminal random vector V. One application of the
solution map splits V into its mean and martingale parts, solves the forward
equation Y = y - F(Y, M) - M by the iterated-map scheme, and returns
xi + F_T(Y, M). Fixed points of that map are in bijection with solution
pairs (Y, M) of the backward equation, so the solvers iterate on terminal
vectors and certify the backward identity node by node at the end.

Three iteration strategies are provided: plain Picard iteration with
contraction diagnostics, backward window-by-window solving for drivers whose
time integral must be kept short, and averaged (Krasnoselskii-Mann) iteration
for split generators whose compact part forfeits the contraction property.
Divergence is reported as a structured result, never an exception: the
regime where iterates run away is a legitimate diagnostic outcome.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .filtered_space import (
    AdaptedProcess,
    Martingale,
    RandomVector,
    cond_expect,
    conditional_process,
    lift,
    lp_norm,
    martingale_from_terminal,
)
from .generators import (
    DelayedConvolution,
    Generator,
    IntegralDriver,
    SplitF,
    WindowOverlay,
    evaluate_F,
)
from .noise import NoiseModel
from .representation import represent


class ConditionSError(RuntimeError):
    """The forward equation Y = y - F(Y, M) - M did not reach the tolerance."""

    def __init__(self, message: str, defect: float):
        super().__init__(message)
        self.defect = defect


def contraction_constant(p: float) -> float:
    """Smallness threshold for the generator's Lipschitz constant, per norm index."""
    if p <= 1.0:
        raise ValueError("p must lie in (1, inf]")
    if p == 2.0:
        return 1.0 / 5.0
    if math.isinf(p):
        return 1.0 / 4.0
    return (p - 1.0) / (4.0 * p - 1.0)


def g_lipschitz_bound(c: float, p: float) -> float:
    """Lipschitz bound of the solution map when the generator constant c < c_p.

    4c/(1-c) in the Hilbert case p = 2, otherwise 3 * (p/(p-1)) * c/(1-c)
    (the maximal-inequality constant degenerates to 1 at p = inf).
    """
    if c < 0.0:
        raise ValueError("c must be nonnegative")
    if c >= contraction_constant(p):
        raise ValueError(f"c = {c!r} is not below the threshold {contraction_constant(p)!r}")
    if p == 2.0:
        return 4.0 * c / (1.0 - c)
    doob = 1.0 if math.isinf(p) else p / (p - 1.0)
    return 3.0 * doob * c / (1.0 - c)


def prop_genbsde_bound(c1: float, horizon: float, p: float) -> float:
    """Admissible size of the slow Lipschitz role given the fast one: c_p*C1/(e^{C1 T}-1)."""
    if c1 <= 0.0:
        raise ValueError("C1 must be positive")
    if horizon <= 0.0:
        raise ValueError("horizon must be positive")
    cp = contraction_constant(p)
    if c1 <= 1e-12:
        return cp / horizon
    return cp * c1 / math.expm1(c1 * horizon)


def anticipating_window_bound(c: float, delta: float) -> float:
    """Window certificate C*sqrt(3*delta*(delta+1)); below 1/5 the window solve contracts."""
    if c < 0.0 or delta <= 0.0:
        raise ValueError("need c >= 0 and delta > 0")
    return c * math.sqrt(3.0 * delta * (delta + 1.0))


@dataclass(frozen=True)
class RadiusCheck:
    """Invariance check ||xi||_2 + ||F1_T(0,0)||_2 + C*R1 + R2 <= R1 for the averaged scheme."""

    lhs: float
    r1: float

    @property
    def satisfied(self) -> bool:
        return self.lhs <= self.r1


@dataclass(frozen=True)
class SolverConfig:
    """Knobs shared by all solve strategies.

    ``p`` is the norm index used for stopping (iteration always runs on the
    L^2-style tree operations; other p values are diagnostics on the same
    iterates). ``block_delta`` is the window length of the backward
    window solver and must divide the horizon on the grid. ``mann_theta`` is
    the averaging weight of the Krasnoselskii-Mann scheme.
    """

    p: float = 2.0
    tol: float = 1e-10
    max_iter: int = 500
    block_delta: float | None = None
    mann_theta: float = 0.5
    initial: str | RandomVector = "xi"
    declared_lipschitz: float | None = None
    radius_declaration: tuple[float, float, float] | None = None
    divergence_patience: int = 10

    def __post_init__(self):
        if self.tol <= 0.0:
            raise ValueError("tol must be positive")
        if self.p <= 1.0:
            raise ValueError("p must lie in (1, inf]")
        if not 0.0 < self.mann_theta <= 1.0:
            raise ValueError("mann_theta must lie in (0, 1]")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.block_delta is not None and self.block_delta <= 0.0:
            raise ValueError("block_delta must be positive")
        if isinstance(self.initial, str) and self.initial not in ("xi", "zero"):
            raise ValueError("initial must be 'xi', 'zero', or a terminal random vector")


@dataclass
class SolverReport:
    """Outcome of a solve: fixed point, solution pair, residual certificate, diagnostics."""

    converged: bool
    diverged: bool
    n_iter: int
    p: float
    iterates: list[float]
    observed_ratio: float | None
    theoretical_bound: float | None
    residual: float | None
    fixed_point: RandomVector | None
    y: AdaptedProcess | None
    m: Martingale | None
    message: str = ""
    blocks: list["SolverReport"] = field(default_factory=list)
    radius_check: RadiusCheck | None = None


def report_to_dict(report: SolverReport, include_values: bool = True) -> dict:
    """JSON-ready summary; terminal values included only for desk-sized trees."""
    doc = {
        "converged": report.converged,
        "diverged": report.diverged,
        "n_iter": report.n_iter,
        "p": report.p,
        "iterates": [float(d) for d in report.iterates],
        "observed_ratio": report.observed_ratio,
        "theoretical_bound": report.theoretical_bound,
        "residual": report.residual,
        "message": report.message,
    }
    if report.radius_check is not None:
        doc["radius_check"] = {
            "lhs": report.radius_check.lhs,
            "r1": report.radius_check.r1,
            "satisfied": report.radius_check.satisfied,
        }
    if report.y is not None:
        doc["y0"] = [float(v) for v in report.y.at(0)[0]]
    if (
        include_values
        and report.fixed_point is not None
        and report.fixed_point.values.shape[0] <= 4096
    ):
        doc["fixed_point_values"] = [[float(c) for c in row] for row in report.fixed_point.values]
    if report.blocks:
        doc["blocks"] = [report_to_dict(b, include_values=False) for b in report.blocks]
    return doc


def iterates_to_csv(report: SolverReport) -> str:
    """Iterate table: k, successive-difference norm, ratio to the previous difference."""
    buf = io.StringIO()
    buf.write("k,diff_norm,ratio\n")
    prev = None
    for k, d in enumerate(report.iterates, start=1):
        ratio = "" if prev in (None, 0.0) else repr(d / prev)
        buf.write(f"{k},{d!r},{ratio}\n")
        prev = d
    return buf.getvalue()


# -- forward solve and the solution map --------------------------------------


def _max_node_gap(a: AdaptedProcess, b: AdaptedProcess) -> float:
    worst = 0.0
    for va, vb in zip(a.values, b.values):
        worst = max(worst, float(np.max(np.linalg.norm(va - vb, axis=1), initial=0.0)))
    return worst


def _solve_condition_s(gen, y0, mart, *, model, dec, tol, max_iter, overlay=None, mask=None):
    """Iterate Y <- y - F(Y, M) - M; returns (Y, F(Y, M)) with node defect <= tol.

    With the left-endpoint rule and drivers reading only current or past
    values, the iteration is exact after one sweep per level; anticipating
    drivers converge under their contraction hypotheses.
    """
    space = mart.space
    y0_row = y0.values[0]
    cur = AdaptedProcess(
        space, tuple(y0_row - mart.at(k) for k in range(space.levels))
    )
    last_defect = math.inf
    for _ in range(max_iter):
        f = evaluate_F(gen, cur, mart, model, dec=dec, overlay=overlay, mask=mask)
        nxt = AdaptedProcess(
            space, tuple(y0_row - f.at(k) - mart.at(k) for k in range(space.levels))
        )
        last_defect = _max_node_gap(nxt, cur)
        if last_defect <= tol:
            return cur, f
        cur = nxt
    raise ConditionSError(
        f"forward equation not solved after {max_iter} sweeps, defect {last_defect:.3e} "
        "(the generator may violate its contraction hypothesis)",
        last_defect,
    )


def solve_condition_s(
    gen: Generator,
    y0: RandomVector,
    mart: Martingale,
    model: NoiseModel | None = None,
    *,
    tol: float = 1e-10,
    max_iter: int | None = None,
) -> AdaptedProcess:
    """Unique solution of the forward equation Y_t = y - F_t(Y, M) - M_t."""
    if y0.level != 0:
        raise ValueError("y0 must be measurable at level 0")
    if mart.space is not y0.space:
        raise ValueError("y0 and M live on different spaces")
    dec = represent(mart, model) if (gen.needs_zu and model is not None) else None
    sweeps = max_iter if max_iter is not None else mart.space.levels + 50
    y, _ = _solve_condition_s(gen, y0, mart, model=model, dec=dec, tol=tol, max_iter=sweeps)
    return y


def _apply_g(gen, xi, v, *, model, tol, max_iter, overlay=None, mask=None):
    """One application of the solution map: V -> xi + F_T(Y^V, M^V)."""
    y0, mart = martingale_from_terminal(v)
    dec = represent(mart, model) if (gen.needs_zu and model is not None) else None
    y, f = _solve_condition_s(
        gen, y0, mart, model=model, dec=dec, tol=tol, max_iter=max_iter, overlay=overlay, mask=mask
    )
    g_val = xi + RandomVector(xi.space, xi.level, f.at(-1))
    return g_val, y, mart, f


def g_map(
    gen: Generator,
    xi: RandomVector,
    v: RandomVector,
    model: NoiseModel | None = None,
    *,
    tol: float = 1e-10,
    max_iter: int | None = None,
) -> RandomVector:
    """G(V) = xi + F_T(Y^V, M^V) where Y^V solves the forward equation for y^V = E_0 V."""
    _check_terminal(xi, v)
    sweeps = max_iter if max_iter is not None else xi.space.levels + 50
    g_val, _, _, _ = _apply_g(gen, xi, v, model=model, tol=tol, max_iter=sweeps)
    return g_val


def g0_map(
    gen: Generator,
    xi: RandomVector,
    v: RandomVector,
    model: NoiseModel | None = None,
    *,
    tol: float = 1e-10,
) -> RandomVector:
    """Centred map G_0(V) = G(V) - E_0 G(V) on mean-zero terminal vectors (Y-free generators)."""
    if gen.depends_on_y:
        raise ValueError("the centred map is only defined for Y-free generators")
    _check_terminal(xi, v)
    mean = cond_expect(v, 0)
    if float(np.max(np.abs(mean.values))) > 1e-9 * (1.0 + lp_norm(v, 2.0)):
        raise ValueError("V must have E_0 V = 0")
    g_val = g_map(gen, xi, v, model, tol=tol)
    return g_val - lift(cond_expect(g_val, 0), xi.level)


def reconstruct_from_g0(
    gen: Generator,
    xi: RandomVector,
    v: RandomVector,
    model: NoiseModel | None = None,
) -> tuple[AdaptedProcess, Martingale]:
    """Solution pair induced by a fixed point of the centred map:
    M_t = -E_t V and Y_t = E_0 xi + E_0 F_T(M) - F_t(M) - M_t."""
    if gen.depends_on_y:
        raise ValueError("reconstruction applies to Y-free generators")
    space = xi.space
    cond = conditional_process(v)
    m_vals = [np.zeros((1, v.dimension))] + [-cond.at(k) for k in range(1, space.levels)]
    mart = Martingale(space, tuple(m_vals))
    zero_y = AdaptedProcess.zero(space, xi.dimension)
    f = evaluate_F(gen, zero_y, mart, model)
    e0_xi = cond_expect(xi, 0).values[0]
    e0_ft = cond_expect(RandomVector(space, space.levels - 1, f.at(-1)), 0).values[0]
    y = AdaptedProcess(
        space,
        tuple(e0_xi + e0_ft - f.at(k) - mart.at(k) for k in range(space.levels)),
    )
    return y, mart


def pi_map(y: AdaptedProcess, m: Martingale) -> RandomVector:
    """Terminal projection Y_0 - M_T of a solution pair."""
    space = y.space
    top = space.levels - 1
    return lift(RandomVector(space, 0, y.at(0)), top) - RandomVector(space, top, m.at(top))


def bse_residual(
    gen: Generator,
    xi: RandomVector,
    y: AdaptedProcess,
    m: Martingale,
    model: NoiseModel | None = None,
) -> float:
    """Max over leaves and grid times of |Y_t + F_t + M_t - (xi + F_T + M_T)| (Euclidean)."""
    space = xi.space
    f = evaluate_F(gen, y, m, model)
    top = space.levels - 1
    rhs = xi.values + f.at(top) + m.at(top)
    worst = 0.0
    for k in range(space.levels):
        lhs = lift(RandomVector(space, k, y.at(k) + f.at(k) + m.at(k)), top).values
        worst = max(worst, float(np.max(np.linalg.norm(lhs - rhs, axis=1), initial=0.0)))
    return worst


def _check_terminal(xi: RandomVector, v: RandomVector) -> None:
    if v.space is not xi.space:
        raise ValueError("xi and V live on different spaces")
    top = xi.space.levels - 1
    if xi.level != top or v.level != top:
        raise ValueError("xi and V must be terminal-measurable")
    if v.dimension != xi.dimension:
        raise ValueError("dimension mismatch between xi and V")


def _initial_vector(config: SolverConfig, xi: RandomVector) -> RandomVector:
    if isinstance(config.initial, RandomVector):
        _check_terminal(xi, config.initial)
        return config.initial
    if config.initial == "zero":
        return RandomVector(xi.space, xi.level, np.zeros_like(xi.values))
    return xi


def _theoretical_bound(config: SolverConfig) -> float | None:
    c = config.declared_lipschitz
    if c is None:
        return None
    if c >= contraction_constant(config.p):
        return None
    return g_lipschitz_bound(c, config.p)


def _iterate(step, v0, config, xi_norm):
    """Shared fixed-point loop; ``step`` maps V to the next iterate."""
    v = v0
    diffs: list[float] = []
    ratios: list[float] = []
    bad = 0
    floor = 1e3 * np.finfo(float).eps * (1.0 + xi_norm)
    converged = diverged = False
    n_iter = 0
    message = ""
    for n_iter in range(1, config.max_iter + 1):
        v_next = step(v)
        diff = lp_norm(v_next - v, config.p)
        if diffs and diffs[-1] > floor:
            ratio = diff / diffs[-1]
            ratios.append(ratio)
            bad = bad + 1 if ratio >= 1.0 else 0
        diffs.append(diff)
        v = v_next
        if diff <= config.tol:
            converged = True
            break
        if bad >= config.divergence_patience:
            diverged = True
            message = (
                f"successive-difference ratio >= 1 sustained over {bad} iterations; "
                "the map does not contract on this instance"
            )
            break
    else:
        message = f"no convergence within {config.max_iter} iterations"
    observed = max(ratios) if ratios else None
    return v, diffs, observed, converged, diverged, n_iter, message


def picard_solve(
    gen: Generator,
    xi: RandomVector,
    config: SolverConfig = SolverConfig(),
    model: NoiseModel | None = None,
) -> SolverReport:
    """Iterate V <- G(V) until the successive difference drops below tol.

    On success the solution pair is rebuilt from the fixed point and the
    backward identity is certified at every node against
    tol * (1 + ||xi||_p); the certificate, not the stopping rule, decides
    ``converged``. Sustained non-contraction yields a diverged report.
    """
    xi_norm = lp_norm(xi, config.p)
    inner = xi.space.levels + 50

    def step(v):
        g_val, _, _, _ = _apply_g(gen, xi, v, model=model, tol=config.tol, max_iter=inner)
        return g_val

    v0 = _initial_vector(config, xi)
    v, diffs, observed, converged, diverged, n_iter, message = _iterate(
        step, v0, config, xi_norm
    )
    report = SolverReport(
        converged=converged,
        diverged=diverged,
        n_iter=n_iter,
        p=config.p,
        iterates=diffs,
        observed_ratio=observed,
        theoretical_bound=_theoretical_bound(config),
        residual=None,
        fixed_point=v,
        y=None,
        m=None,
        message=message,
    )
    if converged:
        _certify(report, gen, xi, v, config, model)
    return report


def _certify(report, gen, xi, v, config, model, overlay=None):
    _, y, mart, _ = _apply_g(
        gen, xi, v, model=model, tol=config.tol, max_iter=xi.space.levels + 50, overlay=overlay
    )
    report.y, report.m = y, mart
    report.residual = bse_residual(gen, xi, y, mart, model)
    bound = config.tol * (1.0 + lp_norm(xi, config.p))
    if report.residual > bound:
        report.converged = False
        report.message = (
            f"stopping rule met but residual {report.residual:.3e} exceeds the certificate {bound:.3e}"
        )


def _is_integral_form(gen: Generator) -> bool:
    if isinstance(gen, (IntegralDriver, DelayedConvolution)):
        return True
    if isinstance(gen, SplitF):
        return _is_integral_form(gen.f1) and _is_integral_form(gen.f2)
    return False


class _WindowedGenerator(Generator):
    """Restricts an integral-form generator to a window of steps and serves
    reads beyond the window from the frozen, already-solved tail."""

    def __init__(self, base: Generator, lo: int, hi: int, overlay: WindowOverlay | None):
        self.base = base
        self.lo, self.hi = lo, hi
        self.overlay = overlay
        self.depends_on_y = base.depends_on_y
        self.needs_zu = base.needs_zu
        self.needs_laws = base.needs_laws
        self.name = f"{base.name}[window {lo}:{hi}]"

    def evaluate(self, y, m, *, model=None, dec=None, overlay=None, mask=None):
        return self.base.evaluate(
            y, m, model=model, dec=dec, overlay=self.overlay, mask=(self.lo, self.hi)
        )


def block_solve(
    gen: Generator,
    xi: RandomVector,
    config: SolverConfig,
    model: NoiseModel | None = None,
) -> SolverReport:
    """Backward window-by-window solve for integral-form generators.

    The horizon is split into windows of length ``block_delta``. Walking
    backward, each window solves the equation with the driver masked to the
    window, terminal value equal to the previously solved boundary, and any
    look-ahead served from the frozen tail. Window solutions are pasted
    (values for Y, increments for M) and the global identity is certified
    with the original, unmasked generator.

    The pasting argument assumes the driver reads only current or future
    information; delays that reach below a window boundary are outside its
    guarantee.
    """
    if config.block_delta is None:
        raise ValueError("block_solve requires config.block_delta")
    if not _is_integral_form(gen):
        raise ValueError("windowed solving needs an integral-form generator")
    space = xi.space
    grid = space.grid
    horizon = grid.horizon
    n_windows = round(horizon / config.block_delta)
    if n_windows < 1 or abs(n_windows * config.block_delta - horizon) > 1e-12:
        raise ValueError(
            f"block_delta {config.block_delta!r} does not divide the horizon {horizon!r}"
        )
    if space.steps % n_windows != 0:
        raise ValueError(
            f"{n_windows} windows do not align with {space.steps} grid steps"
        )
    w = space.steps // n_windows
    d = xi.dimension
    pasted_y: list[np.ndarray | None] = [None] * space.levels
    pasted_dm: list[np.ndarray | None] = [None] * space.steps
    frozen_z: dict[int, np.ndarray] = {}
    frozen_u: dict[int, np.ndarray] = {}
    blocks: list[SolverReport] = []
    boundary: np.ndarray | None = None  # previous window's Y at the shared level
    inner_cfg = replace(config, block_delta=None, initial="xi")
    for win in range(n_windows, 0, -1):
        lo, hi = (win - 1) * w, win * w
        if win == n_windows:
            xi_win = xi
            overlay = None
        else:
            pasted_y[hi] = boundary
            xi_win = lift(RandomVector(space, hi, boundary), space.levels - 1)
            overlay = WindowOverlay(
                cut=hi,
                y=_padded_process(space, pasted_y, d),
                m=None,
                z=frozen_z,
                u=frozen_u,
            )
        win_gen = _WindowedGenerator(gen, lo, hi, overlay)
        rep = picard_solve(win_gen, xi_win, inner_cfg, model)
        rep.message = f"window {win} (steps {lo}..{hi})" + (
            f": {rep.message}" if rep.message else ""
        )
        blocks.append(rep)
        if not rep.converged:
            return SolverReport(
                converged=False,
                diverged=rep.diverged,
                n_iter=sum(b.n_iter for b in blocks),
                p=config.p,
                iterates=[],
                observed_ratio=None,
                theoretical_bound=_theoretical_bound(config),
                residual=None,
                fixed_point=None,
                y=None,
                m=None,
                message=f"window {win} (steps {lo}..{hi}) failed: {rep.message}",
                blocks=blocks,
            )
        start = lo if win == 1 else lo + 1
        for k in range(start, hi + 1):
            pasted_y[k] = rep.y.at(k)
        boundary = rep.y.at(lo)
        for k in range(lo, hi):
            pasted_dm[k] = rep.m.at(k + 1) - np.repeat(
                rep.m.at(k), space.child_counts(k), axis=0
            )
        if gen.needs_zu and model is not None:
            dec = represent(rep.m, model)
            for k in range(lo, hi):
                frozen_z[k] = dec.z[k]
                frozen_u[k] = dec.u[k]
    m_vals = [np.zeros((1, d))]
    for k in range(space.steps):
        m_vals.append(np.repeat(m_vals[k], space.child_counts(k), axis=0) + pasted_dm[k])
    mart = Martingale(space, tuple(m_vals))
    y = AdaptedProcess(space, tuple(pasted_y))
    residual = bse_residual(gen, xi, y, mart, model)
    bound = config.tol * (1.0 + lp_norm(xi, config.p))
    ok = residual <= bound
    return SolverReport(
        converged=ok,
        diverged=False,
        n_iter=sum(b.n_iter for b in blocks),
        p=config.p,
        iterates=[],
        observed_ratio=None,
        theoretical_bound=_theoretical_bound(config),
        residual=residual,
        fixed_point=pi_map(y, mart),
        y=y,
        m=mart,
        message="" if ok else f"pasted solution misses the certificate: residual {residual:.3e}",
        blocks=blocks,
    )


def _padded_process(space, levels, d) -> AdaptedProcess:
    vals = tuple(
        lv if lv is not None else np.zeros((space.n_nodes(k), d))
        for k, lv in enumerate(levels)
    )
    return AdaptedProcess(space, vals)


def mann_solve(
    gen: SplitF,
    xi: RandomVector,
    config: SolverConfig,
    model: NoiseModel | None = None,
) -> SolverReport:
    """Averaged iteration V <- (1 - theta) V + theta G(V) for split generators.

    Convergence is not guaranteed; a successful run is certified exactly like
    Picard (fixed points of the averaged map coincide with those of G). When
    (C, R1, R2) are declared, the invariance inequality of the underlying
    existence argument is evaluated and reported.
    """
    if not isinstance(gen, SplitF):
        raise ValueError("the averaged scheme expects a split generator")
    xi_norm = lp_norm(xi, config.p)
    theta = config.mann_theta
    inner = xi.space.levels + 50

    def step(v):
        g_val, _, _, _ = _apply_g(gen, xi, v, model=model, tol=config.tol, max_iter=inner)
        return (1.0 - theta) * v + theta * g_val

    v0 = _initial_vector(config, xi)
    v, diffs, observed, converged, diverged, n_iter, message = _iterate(
        step, v0, config, xi_norm
    )
    radius = None
    if config.radius_declaration is not None:
        c_decl, r1, r2 = config.radius_declaration
        zero_y = AdaptedProcess.zero(xi.space, xi.dimension)
        zero_m = Martingale(
            xi.space,
            tuple(np.zeros((xi.space.n_nodes(k), xi.dimension)) for k in range(xi.space.levels)),
        )
        f1_t = evaluate_F(gen.f1, zero_y, zero_m, model).at(-1)
        f1_norm = lp_norm(RandomVector(xi.space, xi.level, f1_t), 2.0)
        radius = RadiusCheck(lhs=lp_norm(xi, 2.0) + f1_norm + c_decl * r1 + r2, r1=r1)
    report = SolverReport(
        converged=converged,
        diverged=diverged,
        n_iter=n_iter,
        p=config.p,
        iterates=diffs,
        observed_ratio=observed,
        theoretical_bound=None,
        residual=None,
        fixed_point=v,
        y=None,
        m=None,
        message=message,
        radius_check=radius,
    )
    if converged:
        _certify(report, gen, xi, v, config, model)
    return report


@dataclass(frozen=True)
class UniquenessReport:
    max_pairwise_distance: float
    reports: tuple[SolverReport, ...]
    diverged_starts: tuple[int, ...]


def verify_uniqueness(
    gen: Generator,
    xi: RandomVector,
    config: SolverConfig,
    n_starts: int,
    seed: int = 0,
    model: NoiseModel | None = None,
) -> UniquenessReport:
    """Multi-start Picard runs; returns the max pairwise distance of the fixed points.

    Starts are xi, zero and seeded random terminal vectors. Any start that
    fails to converge is flagged rather than raising: distinct limits or
    divergence are diagnostic output in the non-contractive regime.
    """
    if n_starts < 2:
        raise ValueError("n_starts must be >= 2")
    rng = np.random.default_rng(seed)
    scale = 1.0 + lp_norm(xi, 2.0)
    starts: list[RandomVector | str] = ["xi", "zero"]
    while len(starts) < n_starts:
        starts.append(
            RandomVector(
                xi.space,
                xi.level,
                scale * rng.standard_normal((xi.space.n_nodes(xi.level), xi.dimension)),
            )
        )
    reports = []
    for s in starts[:n_starts]:
        reports.append(picard_solve(gen, xi, replace(config, initial=s), model))
    flagged = tuple(i for i, r in enumerate(reports) if not r.converged)
    fixed = [r.fixed_point for r in reports if r.converged]
    worst = 0.0
    for i in range(len(fixed)):
        for j in range(i + 1, len(fixed)):
            worst = max(worst, lp_norm(fixed[i] - fixed[j], config.p))
    return UniquenessReport(worst, tuple(reports), flagged)
