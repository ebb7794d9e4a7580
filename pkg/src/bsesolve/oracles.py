"""Independent backward-recursion oracles for cross-checking solver output.

These deliberately avoid the fixed-point machinery: they walk the tree
backward once, using only exact conditional averaging and per-node algebra,
so agreement with the iterative solvers is meaningful evidence.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .filtered_space import AdaptedProcess, Martingale, RandomVector
from .noise import NoiseModel


@dataclass(frozen=True, eq=False)
class OracleSolution:
    y: AdaptedProcess
    m: Martingale


def _backward_assemble(space, y_levels) -> OracleSolution:
    """Build the martingale from the backward recursion residuals:
    dM_k = -(Y_{k+1} - E_k[Y_{k+1}])."""
    m_vals = [np.zeros((1, y_levels[0].shape[1]))]
    for k in range(space.steps):
        reps = space.child_counts(k)
        w = space._trans[k + 1]
        cond = np.add.reduceat(
            y_levels[k + 1] * w[:, None], space._child_offsets[k][:-1], axis=0
        )
        d_m = -(y_levels[k + 1] - np.repeat(cond, reps, axis=0))
        m_vals.append(np.repeat(m_vals[k], reps, axis=0) + d_m)
    return OracleSolution(
        y=AdaptedProcess(space, tuple(y_levels)), m=Martingale(space, tuple(m_vals))
    )


def oracle_zero_driver(xi: RandomVector) -> OracleSolution:
    """Zero driver: Y_t = E_t[xi], M_t = E_0[xi] - E_t[xi]."""
    from .filtered_space import conditional_process

    cond = conditional_process(xi)
    space = xi.space
    m_vals = [np.zeros((1, xi.dimension))]
    for k in range(1, space.levels):
        m_vals.append(cond.at(0)[0] - cond.at(k))
    return OracleSolution(y=cond, m=Martingale(space, tuple(m_vals)))


def oracle_linear_scalar(xi: RandomVector, a: float, b: float) -> OracleSolution:
    """Scalar driver f = a*Y + b solved in closed form at grid level:
    Y_k = (E_k[Y_{k+1}] + b*dt) / (1 - a*dt) per node."""
    space = xi.space
    if xi.dimension != 1:
        raise ValueError("linear_scalar oracle is one-dimensional")
    y_levels: list[np.ndarray] = [None] * space.levels  # type: ignore[list-item]
    y_levels[-1] = np.asarray(xi.values)
    for k in range(space.steps - 1, -1, -1):
        dt = space.grid.dt(k)
        if abs(1.0 - a * dt) < 1e-12:
            raise ValueError("grid too coarse: 1 - a*dt vanishes")
        w = space._trans[k + 1]
        cond = np.add.reduceat(
            y_levels[k + 1] * w[:, None], space._child_offsets[k][:-1], axis=0
        )
        y_levels[k] = (cond + b * dt) / (1.0 - a * dt)
    return _backward_assemble(space, y_levels)


def linear_grid_y0(mean_xi: float, a: float, b: float, steps: int, horizon: float) -> float:
    """Initial value induced by the grid recursion, computable without a tree.

    Taking means through Y_k = (E_k[Y_{k+1}] + b*dt)/(1 - a*dt) decouples the
    recursion: Y_0 = gamma^K E[xi] + b*dt*(gamma + ... + gamma^K) for
    gamma = 1/(1 - a*dt).
    """
    dt = horizon / steps
    gamma = 1.0 / (1.0 - a * dt)
    acc = mean_xi
    for _ in range(steps):
        acc = gamma * (acc + b * dt)
    return float(acc)


def linear_continuous_y0(mean_xi: float, a: float, b: float, horizon: float) -> float:
    """Continuous-time closed form e^{aT} E[xi] + (b/a)(e^{aT} - 1) (limit b*T at a = 0)."""
    if a == 0.0:
        return float(mean_xi + b * horizon)
    return float(math.exp(a * horizon) * mean_xi + (b / a) * (math.exp(a * horizon) - 1.0))


def oracle_backward_recursion(
    xi: RandomVector,
    model: NoiseModel,
    driver: Callable[[float, np.ndarray, np.ndarray], np.ndarray],
    tol: float = 1e-10,
    max_iter: int = 200,
) -> OracleSolution:
    """Implicit backward recursion for Markov drivers f(t, Y_t, Z_t).

    Z_k is read off the conditional cross-moment with the next Brownian
    increment, Z = -E_k[Y_{k+1} dW^T] G^{-1}; the per-node implicit equation
    Y_k = E_k[Y_{k+1}] + f(t_k, Y_k, Z_k) dt is solved by damped fixed-point
    iteration to tolerance tol/10. Brownian-only models.
    """
    space = xi.space
    if model.mark_count or model.extra_noise:
        raise ValueError("backward-recursion oracle supports Brownian-only models")
    d = xi.dimension
    n = model.brownian_dim
    y_levels: list[np.ndarray] = [None] * space.levels  # type: ignore[list-item]
    y_levels[-1] = np.asarray(xi.values)
    inner_tol = tol / 10.0
    for k in range(space.steps - 1, -1, -1):
        tpl = model.steps[k]
        dt = space.grid.dt(k)
        n_k = space.n_nodes(k)
        y_next = y_levels[k + 1].reshape(n_k, tpl.branching, d)
        cond = np.einsum("b,nbd->nd", tpl.probs, y_next)
        cross = np.einsum("b,nbd,bq->ndq", tpl.probs, y_next, tpl.dw)
        z = -np.linalg.solve(tpl.gram()[:n, :n], cross.reshape(n_k * d, n).T).T.reshape(n_k, d, n)
        t_k = float(space.grid.times[k])
        y_cur = cond.copy()
        for _ in range(max_iter):
            target = cond + np.asarray(driver(t_k, y_cur, z), dtype=np.float64) * dt
            step_gap = float(np.max(np.abs(target - y_cur), initial=0.0))
            y_cur = y_cur + 0.5 * (target - y_cur)
            if step_gap <= inner_tol:
                y_cur = target
                break
        else:
            raise RuntimeError(
                f"implicit node equations at level {k} did not settle within {max_iter} damped sweeps"
            )
        y_levels[k] = y_cur
    return _backward_assemble(space, y_levels)
