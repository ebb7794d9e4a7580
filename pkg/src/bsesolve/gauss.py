"""Desk-scale Gaussian analysis: truncated coordinate model, white noise,
finite-difference derivatives, Sobolev norms and compactness evidence.

The infinite-dimensional Gaussian measure is truncated to J coordinates with
independent N(0, lambda_j) components. Expectations run over a sampling
plan: a tensor Gauss-Hermite grid when affordable (exact for polynomials up
to degree 2q-1 per coordinate) and seeded Monte Carlo otherwise. Directional
derivatives are central differences, exact on quadratics; the error budgets
reported alongside the variance inequality account for both the Taylor
remainder and floating-point cancellation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

DEFAULT_PLAN_BUDGET = 2**22
FD_EPS_SCALE = 1e-5


@dataclass(frozen=True, eq=False)
class GaussianCoordinateModel:
    """Truncated Gaussian coordinate model with a fixed sampling plan.

    ``points`` has one row per plan point (shape (N, J)), ``weights`` sum to
    one. ``plan`` records whether expectations are quadrature-exact.
    """

    eigenvalues: np.ndarray  # (J,)
    points: np.ndarray  # (N, J)
    weights: np.ndarray  # (N,)
    plan: str
    quad_order: int | None
    seed: int | None

    @property
    def truncation(self) -> int:
        return self.eigenvalues.size

    @property
    def max_eigenvalue(self) -> float:
        return float(self.eigenvalues.max())

    def expect(self, values: np.ndarray) -> np.ndarray:
        """Plan expectation of per-point values (first axis indexes points)."""
        return np.tensordot(self.weights, np.asarray(values, dtype=np.float64), axes=(0, 0))

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return rng.standard_normal((n, self.truncation)) * np.sqrt(self.eigenvalues)


def build_gaussian_model(
    truncation: int = 8,
    eigenvalues: Sequence[float] | None = None,
    plan: str = "auto",
    quad_order: int = 5,
    mc_samples: int = 4096,
    seed: int = 0,
    plan_budget: int = DEFAULT_PLAN_BUDGET,
) -> GaussianCoordinateModel:
    """Build the coordinate model; eigenvalues default to 2^-j (summable, positive).

    ``plan`` is "quadrature", "montecarlo" or "auto" (quadrature when the
    tensor grid fits the budget). Per-coordinate quadrature weights are
    normalised to sum to one exactly and reproduce E[phi_j^2] = lambda_j.
    """
    if truncation < 1:
        raise ValueError("truncation must be >= 1")
    if eigenvalues is None:
        lam = 2.0 ** -np.arange(1, truncation + 1)
    else:
        lam = np.asarray(eigenvalues, dtype=np.float64).ravel()
        if lam.size != truncation:
            raise ValueError(f"expected {truncation} eigenvalues, got {lam.size}")
        if np.any(lam <= 0.0):
            raise ValueError("eigenvalues must be positive")
    if plan not in ("auto", "quadrature", "montecarlo"):
        raise ValueError("plan must be 'auto', 'quadrature' or 'montecarlo'")
    grid_size = quad_order**truncation
    use_quad = plan == "quadrature" or (plan == "auto" and grid_size <= plan_budget)
    if plan == "quadrature" and grid_size > plan_budget:
        raise ValueError(
            f"quadrature grid of {grid_size} points exceeds the plan budget {plan_budget}"
        )
    if use_quad:
        if quad_order < 2:
            raise ValueError("quad_order must be >= 2")
        nodes, weights = np.polynomial.hermite_e.hermegauss(quad_order)
        weights = weights / weights.sum()
        axes_pts = [nodes * np.sqrt(l) for l in lam]
        mesh = np.meshgrid(*axes_pts, indexing="ij")
        points = np.stack([m.ravel() for m in mesh], axis=1)
        wmesh = np.meshgrid(*([weights] * truncation), indexing="ij")
        w = np.ones(grid_size)
        for m in wmesh:
            w = w * m.ravel()
        return GaussianCoordinateModel(
            eigenvalues=_ro(lam),
            points=_ro(points),
            weights=_ro(w),
            plan="quadrature",
            quad_order=quad_order,
            seed=None,
        )
    rng = np.random.default_rng(seed)
    points = rng.standard_normal((mc_samples, truncation)) * np.sqrt(lam)
    return GaussianCoordinateModel(
        eigenvalues=_ro(lam),
        points=_ro(points),
        weights=_ro(np.full(mc_samples, 1.0 / mc_samples)),
        plan="montecarlo",
        quad_order=None,
        seed=seed,
    )


def _ro(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class CylindricalFunction:
    """Pure function of finitely many coordinates, evaluated pointwise on (N, J) arrays."""

    fn: Callable[[np.ndarray], np.ndarray]
    out_dim: int = 1
    label: str = ""

    def __call__(self, points: np.ndarray) -> np.ndarray:
        vals = np.asarray(self.fn(points), dtype=np.float64)
        if vals.ndim == 1:
            vals = vals[:, None]
        if vals.shape != (points.shape[0], self.out_dim):
            raise ValueError(
                f"cylindrical function returned shape {vals.shape}, expected {(points.shape[0], self.out_dim)}"
            )
        return vals


def white_noise(model: GaussianCoordinateModel, h: Sequence[float]) -> CylindricalFunction:
    """W(h)(omega) = sum_j h_j omega_j / sqrt(lambda_j); isometric on the plan for q >= 2."""
    coeff = np.asarray(h, dtype=np.float64).ravel()
    if coeff.size != model.truncation:
        raise ValueError(f"expected {model.truncation} coefficients, got {coeff.size}")
    scaled = coeff / np.sqrt(model.eigenvalues)
    return CylindricalFunction(lambda pts: pts @ scaled, out_dim=1, label="white_noise")


def directional_derivative(
    model: GaussianCoordinateModel,
    phi: CylindricalFunction,
    j: int,
    eps: float | None = None,
) -> CylindricalFunction:
    """Central difference (phi(omega + eps e_j) - phi(omega - eps e_j)) / (2 eps)."""
    if not 0 <= j < model.truncation:
        raise IndexError(f"coordinate {j} out of range")
    step = eps if eps is not None else FD_EPS_SCALE * float(np.sqrt(model.eigenvalues[j]))
    if step <= 0.0:
        raise ValueError("eps must be positive")

    def diff(points: np.ndarray) -> np.ndarray:
        bump = np.zeros(model.truncation)
        bump[j] = step
        return (phi(points + bump) - phi(points - bump)) / (2.0 * step)

    return CylindricalFunction(diff, out_dim=phi.out_dim, label=f"D_{j}[{phi.label}]")


def sobolev_norm(
    model: GaussianCoordinateModel,
    phi: CylindricalFunction,
    eps: float | None = None,
) -> tuple[float, float, float]:
    """(||phi||_2, ||D phi||_2, ||phi||_{W^{1,2}}) over the sampling plan."""
    vals = phi(model.points)
    l2_sq = float(model.expect(np.sum(vals * vals, axis=1)))
    d_sq = 0.0
    for j in range(model.truncation):
        dv = directional_derivative(model, phi, j, eps)(model.points)
        d_sq += float(model.expect(np.sum(dv * dv, axis=1)))
    return float(np.sqrt(l2_sq)), float(np.sqrt(d_sq)), float(np.sqrt(l2_sq + d_sq))


@dataclass(frozen=True)
class PoincareResult:
    lhs: float
    rhs: float
    budget: float
    holds: bool


def poincare_check(
    model: GaussianCoordinateModel,
    phi: CylindricalFunction,
    third_derivative_bound: float = 1.0,
    eps: float | None = None,
) -> PoincareResult:
    """Variance bound E|phi - E phi|^2 <= lambda ||D phi||_2^2 with an explicit error budget.

    The budget covers the central-difference Taylor remainder
    (eps^2 * B / 6 per derivative, B the declared third-derivative bound),
    floating-point cancellation in the differences, and a relative epsilon
    for the plan sums, so ``holds`` is a sound verdict for the budgeted claim.
    """
    vals = phi(model.points)
    mean = model.expect(vals)
    centered = vals - mean
    lhs = float(model.expect(np.sum(centered * centered, axis=1)))
    lam = model.max_eigenvalue
    d_sq = 0.0
    budget_d = 0.0
    scale = float(np.max(np.abs(vals), initial=0.0))
    for j in range(model.truncation):
        step = eps if eps is not None else FD_EPS_SCALE * float(np.sqrt(model.eigenvalues[j]))
        dv = directional_derivative(model, phi, j, step)(model.points)
        d_sq += float(model.expect(np.sum(dv * dv, axis=1)))
        err_j = float(step * step * third_derivative_bound / 6.0 + 2.0 * np.finfo(float).eps * scale / step)
        mean_abs = float(model.expect(np.sum(np.abs(dv), axis=1)))
        budget_d += 2.0 * mean_abs * err_j + phi.out_dim * err_j * err_j
    rhs = lam * d_sq
    budget = float(lam * budget_d + 1e-12 * (1.0 + lhs + rhs))
    return PoincareResult(lhs=lhs, rhs=rhs, budget=budget, holds=bool(lhs <= rhs + budget))


def omega_lipschitz_estimate(
    model: GaussianCoordinateModel,
    phi: CylindricalFunction,
    n_pairs: int,
    seed: int = 0,
) -> float:
    """Max sampled ratio |phi(w) - phi(w')| / ||w - w'|| (coordinate l2 norm).

    A lower bound on the true constant; coincident pairs are skipped.
    """
    if n_pairs < 1:
        raise ValueError("n_pairs must be >= 1")
    rng = np.random.default_rng(seed)
    a = model.sample(n_pairs, rng)
    b = model.sample(n_pairs, rng)
    gaps = np.linalg.norm(a - b, axis=1)
    keep = gaps > 0.0
    if not np.any(keep):
        return 0.0
    va, vb = phi(a[keep]), phi(b[keep])
    num = np.linalg.norm(va - vb, axis=1)
    return float(np.max(num / gaps[keep]))


def lemma_lip_construct(
    model: GaussianCoordinateModel,
    h: Callable[[np.ndarray], np.ndarray],
    x: Sequence[float],
    out_dim: int = 1,
) -> CylindricalFunction:
    """Compose an l1-Lipschitz map with scaled coordinates: omega -> h(x_1 w_1, ..., x_J w_J).

    If h has l1-Lipschitz constant Kc, the result is omega-Lipschitz with
    constant at most Kc * ||x||_2.
    """
    coeff = np.asarray(x, dtype=np.float64).ravel()
    if coeff.size != model.truncation:
        raise ValueError(f"expected {model.truncation} coefficients, got {coeff.size}")
    return CylindricalFunction(
        lambda pts: h(pts * coeff), out_dim=out_dim, label="lipschitz_composition"
    )


@dataclass(frozen=True)
class CompactnessReport:
    derivative_norms: tuple[float, ...]
    flagged: tuple[int, ...]
    net_size: int
    eps_net: float


def compactness_diagnostic(
    model: GaussianCoordinateModel,
    family: Sequence[CylindricalFunction],
    derivative_bound: float,
    eps_net: float,
) -> CompactnessReport:
    """Evidence for precompactness of a family: derivative norms plus a greedy L^2 net.

    Members whose ||D phi||_2 exceeds the bound are flagged, not fatal. The
    net size is an L^2 covering-number estimate over the sampling plan;
    evidence, never a verdict.
    """
    if eps_net <= 0.0:
        raise ValueError("eps_net must be positive")
    d_norms = []
    tables = []
    for phi in family:
        _, dn, _ = sobolev_norm(model, phi)
        d_norms.append(dn)
        tables.append(phi(model.points))
    flagged = tuple(i for i, dn in enumerate(d_norms) if dn > derivative_bound)
    centers: list[int] = []
    for i, tab in enumerate(tables):
        covered = False
        for c in centers:
            gap = tab - tables[c]
            dist = float(np.sqrt(model.expect(np.sum(gap * gap, axis=1))))
            if dist <= eps_net:
                covered = True
                break
        if not covered:
            centers.append(i)
    return CompactnessReport(
        derivative_norms=tuple(d_norms),
        flagged=flagged,
        net_size=len(centers),
        eps_net=eps_net,
    )


def coordinate_function(model: GaussianCoordinateModel, j: int) -> CylindricalFunction:
    if not 0 <= j < model.truncation:
        raise IndexError(f"coordinate {j} out of range")
    return CylindricalFunction(lambda pts: pts[:, j], out_dim=1, label=f"coordinate_{j}")


def diagnostic_function_library(
    model: GaussianCoordinateModel, seed: int = 0
) -> list[tuple[str, CylindricalFunction, float]]:
    """Named diagnostic functions with declared third-derivative bounds."""
    rng = np.random.default_rng(seed)
    h = rng.standard_normal(model.truncation)
    h = h / np.linalg.norm(h)
    jmax = int(np.argmax(model.eigenvalues))
    lib: list[tuple[str, CylindricalFunction, float]] = [
        ("constant", CylindricalFunction(lambda pts: np.full(pts.shape[0], 1.5), label="constant"), 0.0),
        ("coordinate_max_eig", coordinate_function(model, jmax), 0.0),
        ("white_noise_unit", white_noise(model, h), 0.0),
        (
            "quadratic_first",
            CylindricalFunction(lambda pts: pts[:, 0] ** 2, label="quadratic_first"),
            0.0,
        ),
        (
            "sin_first",
            CylindricalFunction(lambda pts: np.sin(pts[:, 0]), label="sin_first"),
            1.0,
        ),
        (
            "tanh_white_noise",
            CylindricalFunction(lambda pts: np.tanh(pts @ (h / np.sqrt(model.eigenvalues))), label="tanh_wn"),
            _tanh_third_bound(h, model),
        ),
        (
            "cos_pair",
            CylindricalFunction(lambda pts: np.cos(pts[:, 0] + pts[:, 1 % model.truncation]), label="cos_pair"),
            1.0,
        ),
    ]
    return lib


def _tanh_third_bound(h: np.ndarray, model: GaussianCoordinateModel) -> float:
    # |d^3/dx^3 tanh(a x)| <= 2 |a|^3; per-coordinate slope is h_j / sqrt(lambda_j).
    slopes = np.abs(h) / np.sqrt(model.eigenvalues)
    return float(2.0 * np.max(slopes) ** 3)
