"""Noise-generated event trees: Brownian binary trees, Poisson mark models, products.

Each time step branches over the product of independent one-step outcomes:
2^n sign patterns for an n-dimensional Brownian increment (+-sqrt(dt) per
coordinate), m+1 Poisson outcomes (at most one event per step, mark i with
probability mu_i*dt), and optionally a fair coin that enlarges the filtration
without entering the increments. All one-step compensated increments have
conditional mean zero exactly, and the conditional Gram matrix of the
regressors (dW_1..dW_n, dN~_1..dN~_m) is computed in closed form from the
step template, so the least-squares projections downstream are exact.

Trees are non-recombining: path-dependent and anticipating generators need
the full path sigma-algebra. A leaf budget guards memory.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .filtered_space import FiniteFilteredSpace, TimeGrid, _readonly

DEFAULT_LEAF_BUDGET = 2**20


class LeafBudgetError(ValueError):
    """Requested tree exceeds the configured leaf budget."""


class IntensityError(ValueError):
    """Poisson intensities produce invalid one-step probabilities."""


@dataclass(frozen=True, eq=False)
class StepTemplate:
    """One-step branch table shared by every node of a level.

    ``probs[b]`` is the transition probability of branch b, ``dw[b]`` the
    Brownian increment, ``dn[b]`` the compensated Poisson increment per mark
    and ``coin[b]`` the extra-noise coin value (or None).
    """

    probs: np.ndarray  # (B,)
    dw: np.ndarray  # (B, n)
    dn: np.ndarray  # (B, m)
    coin: np.ndarray | None  # (B,)

    @property
    def branching(self) -> int:
        return self.probs.size

    def regressors(self) -> np.ndarray:
        """Branch values of (dW_1..dW_n, dN~_1..dN~_m), shape (B, n+m)."""
        return np.hstack([self.dw, self.dn])

    def gram(self) -> np.ndarray:
        """Exact conditional Gram matrix E[r r^T | node] of the regressors."""
        r = self.regressors()
        return (r * self.probs[:, None]).T @ r


@dataclass(frozen=True, eq=False)
class BrownianTreeModel:
    """View on the Brownian component: per-level arrival increments and positions."""

    dimension: int
    increments: tuple[np.ndarray, ...]  # dw_to[k]: increment that led to each level-k node
    positions: tuple[np.ndarray, ...]  # w_path[k]: cumulative W at each level-k node


@dataclass(frozen=True, eq=False)
class PoissonMarkModel:
    """View on the Poisson component: marks, intensities, compensated increments, counts."""

    marks: np.ndarray  # (m, mark_dim)
    intensities: np.ndarray  # (m,)
    compensated_increments: tuple[np.ndarray, ...]  # dn_to[k]
    event_counts: tuple[np.ndarray, ...]


class NoiseModel:
    """A filtered space plus the increment tables that generated it."""

    def __init__(
        self,
        space: FiniteFilteredSpace,
        brownian_dim: int,
        marks: np.ndarray,
        intensities: np.ndarray,
        extra_noise: bool,
        steps: tuple[StepTemplate, ...],
    ):
        self.space = space
        self.brownian_dim = brownian_dim
        self.marks = _readonly(np.atleast_2d(marks)) if marks.size else marks
        self.intensities = _readonly(intensities)
        self.extra_noise = extra_noise
        self.steps = steps
        self._build_tables()

    @property
    def grid(self) -> TimeGrid:
        return self.space.grid

    @property
    def mark_count(self) -> int:
        return self.intensities.size

    @property
    def regressor_count(self) -> int:
        return self.brownian_dim + self.mark_count

    def _build_tables(self):
        space, n, m = self.space, self.brownian_dim, self.mark_count
        dw_to = [np.zeros((1, n))]
        dn_to = [np.zeros((1, m))]
        coin_to = [np.zeros(1)]
        w_path = [np.zeros((1, n))]
        counts = [np.zeros((1, m))]
        for k, tpl in enumerate(self.steps):
            reps = space.n_nodes(k)
            dw_to.append(np.tile(tpl.dw, (reps, 1)))
            dn_to.append(np.tile(tpl.dn, (reps, 1)))
            coin_to.append(
                np.tile(tpl.coin, reps) if tpl.coin is not None else np.zeros(reps * tpl.branching)
            )
            w_path.append(np.repeat(w_path[k], tpl.branching, axis=0) + dw_to[k + 1])
            events = (tpl.dn + self.intensities * space.grid.dt(k) > 0.5).astype(float)
            counts.append(np.repeat(counts[k], tpl.branching, axis=0) + np.tile(events, (reps, 1)))
        self.dw_to = tuple(_readonly(a) for a in dw_to)
        self.dn_to = tuple(_readonly(a) for a in dn_to)
        self.coin_to = tuple(_readonly(a) for a in coin_to)
        self.w_path = tuple(_readonly(a) for a in w_path)
        self.event_counts = tuple(_readonly(a) for a in counts)

    def regressor_gram(self, level: int) -> np.ndarray:
        """Gram matrix of the one-step regressors for the step starting at ``level``."""
        return self.steps[level].gram()

    @property
    def brownian(self) -> BrownianTreeModel | None:
        if self.brownian_dim == 0:
            return None
        return BrownianTreeModel(
            dimension=self.brownian_dim, increments=self.dw_to, positions=self.w_path
        )

    @property
    def poisson(self) -> PoissonMarkModel | None:
        if self.mark_count == 0:
            return None
        return PoissonMarkModel(
            marks=self.marks,
            intensities=self.intensities,
            compensated_increments=self.dn_to,
            event_counts=self.event_counts,
        )


def one_step_regressors(model: NoiseModel, level: int, node: int) -> tuple[np.ndarray, np.ndarray]:
    """Conditional-mean-zero increments on a node's children plus their Gram matrix.

    Returns ``(values, gram)`` where ``values[b]`` holds
    (dW_1..dW_n, dN~_1..dN~_m) on child b.
    """
    if not 0 <= level < model.space.levels - 1:
        raise IndexError(f"level {level} has no outgoing step")
    if not 0 <= node < model.space.n_nodes(level):
        raise IndexError(f"node {node} unknown at level {level}")
    tpl = model.steps[level]
    return tpl.regressors(), tpl.gram()


def _step_template(
    n: int,
    marks: np.ndarray,
    intensities: np.ndarray,
    dt: float,
    extra_noise: bool,
    step_index: int,
) -> StepTemplate:
    m = intensities.size
    jump_probs = intensities * dt
    p_none = 1.0 - float(jump_probs.sum())
    if p_none <= 0.0:
        raise IntensityError(
            f"step {step_index}: total jump probability sum(mu_i)*dt = {float(jump_probs.sum())!r} >= 1"
        )
    sqdt = np.sqrt(dt)
    signs = np.array(list(itertools.product((1.0, -1.0), repeat=n))) if n else np.zeros((1, 0))
    pois_dn = np.vstack([np.zeros(m), np.eye(m)]) - jump_probs if m else np.zeros((1, 0))
    pois_p = np.concatenate([[p_none], jump_probs]) if m else np.ones(1)
    coins = np.array([1.0, -1.0]) if extra_noise else np.array([0.0])
    coin_p = np.array([0.5, 0.5]) if extra_noise else np.ones(1)

    rows_dw, rows_dn, rows_coin, rows_p = [], [], [], []
    for bi in range(signs.shape[0]):
        for pj in range(pois_p.size):
            for ci in range(coins.size):
                rows_dw.append(signs[bi] * sqdt)
                rows_dn.append(pois_dn[pj])
                rows_coin.append(coins[ci])
                rows_p.append((0.5**n) * pois_p[pj] * coin_p[ci])
    return StepTemplate(
        probs=_readonly(np.array(rows_p)),
        dw=_readonly(np.array(rows_dw)),
        dn=_readonly(np.array(rows_dn)),
        coin=_readonly(np.array(rows_coin)) if extra_noise else None,
    )


def build_jump_diffusion_tree(
    brownian_dim: int,
    marks,
    intensities,
    steps: int,
    horizon: float,
    extra_noise: bool = False,
    leaf_budget: int = DEFAULT_LEAF_BUDGET,
) -> NoiseModel:
    """Product tree for an n-dimensional Brownian motion and a finite-mark Poisson measure.

    Branching per step is 2^n * (m+1) * (2 if extra_noise). Raises
    :class:`LeafBudgetError` before allocating anything if the resulting leaf
    count exceeds ``leaf_budget`` and :class:`IntensityError` if any step has
    sum(mu_i)*dt >= 1.
    """
    if brownian_dim < 0:
        raise ValueError("brownian_dim must be >= 0")
    marks = np.asarray(marks, dtype=np.float64)
    if marks.size:
        marks = np.atleast_2d(marks)
        if np.any(np.all(marks == 0.0, axis=1)):
            raise ValueError("marks must be nonzero points")
    intensities = np.asarray(intensities, dtype=np.float64).ravel()
    if marks.size == 0:
        marks = np.zeros((0, 1))
    if marks.shape[0] != intensities.size:
        raise ValueError("marks and intensities must have equal length")
    if np.any(intensities <= 0.0):
        raise ValueError("intensities must be positive")
    grid = TimeGrid.uniform(steps, horizon)
    branching = (2**brownian_dim) * (intensities.size + 1) * (2 if extra_noise else 1)
    leaves = branching**steps
    if leaves > leaf_budget:
        raise LeafBudgetError(
            f"tree would have {leaves} leaves (branching {branching}, {steps} steps), "
            f"budget is {leaf_budget}"
        )
    templates = tuple(
        _step_template(brownian_dim, marks, intensities, grid.dt(k), extra_noise, k)
        for k in range(steps)
    )
    children = [
        [tpl.probs for _ in range(branching**k)] for k, tpl in enumerate(templates)
    ]
    space = FiniteFilteredSpace(grid, children)
    return NoiseModel(space, brownian_dim, marks, intensities, extra_noise, templates)


def build_brownian_tree(
    brownian_dim: int,
    steps: int,
    horizon: float,
    leaf_budget: int = DEFAULT_LEAF_BUDGET,
) -> NoiseModel:
    """Binary-per-coordinate Brownian tree: increments +-sqrt(dt), exact first three moments."""
    if brownian_dim < 1:
        raise ValueError("brownian_dim must be >= 1")
    return build_jump_diffusion_tree(
        brownian_dim, np.zeros((0, 1)), np.zeros(0), steps, horizon, False, leaf_budget
    )
