"""Orthogonal decomposition of martingales on noise-generated trees.

Per node, the one-step increment of a martingale is projected onto the span
of the step's regressors (Brownian increments and compensated Poisson
increments) by solving the normal equations with the exact conditional Gram
matrix; the residual accumulates into the orthogonal part K. The projection
uses one Cholesky factorisation per level with deterministic ordering, so
two runs on equal inputs produce identical coefficients bit for bit.

Indexing is predictable: the coefficient stored at a level-k node applies to
the increment over (t_k, t_{k+1}].
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .filtered_space import AdaptedProcess, Martingale
from .noise import NoiseModel


class StructureError(ValueError):
    """The space does not support a unique projection (singular Gram matrix)."""


@dataclass(frozen=True, eq=False)
class MartingaleDecomposition:
    """Triple (Z, U, K): dM = Z.dW + sum_i U_i dN~_i + dK at every node.

    ``z[k]`` has shape (n_k, d, n) and ``u[k]`` shape (n_k, d, m); both are
    indexed predictably (value at level k acts on the following step).
    ``orthogonal`` is the residual martingale K with K_0 = 0.
    """

    model: NoiseModel
    source: Martingale
    z: tuple[np.ndarray, ...]
    u: tuple[np.ndarray, ...]
    orthogonal: Martingale

    @property
    def dimension(self) -> int:
        return self.source.dimension


def represent(mart: Martingale, model: NoiseModel) -> MartingaleDecomposition:
    """Per-node least-squares projection of increments onto the one-step regressors."""
    space = model.space
    if mart.space is not space:
        raise ValueError("martingale lives on a different space than the model")
    d = mart.dimension
    n, m = model.brownian_dim, model.mark_count
    q = n + m
    z_levels, u_levels = [], []
    k_vals = [np.zeros((1, d))]
    for k in range(space.steps):
        tpl = model.steps[k]
        B = tpl.branching
        n_k = space.n_nodes(k)
        d_m = mart.at(k + 1) - np.repeat(mart.at(k), B, axis=0)  # (n_k * B, d)
        d_m = d_m.reshape(n_k, B, d)
        if q:
            regs = tpl.regressors()  # (B, q)
            gram = tpl.gram()
            try:
                factor = cho_factor(gram, lower=True)
            except np.linalg.LinAlgError as exc:  # pragma: no cover - guarded by builders
                raise StructureError(f"singular regressor Gram matrix at level {k}") from exc
            except ValueError as exc:
                raise StructureError(f"singular regressor Gram matrix at level {k}") from exc
            rhs = np.einsum("b,bq,nbd->qnd", tpl.probs, regs, d_m)
            coeffs = cho_solve(factor, rhs.reshape(q, n_k * d)).reshape(q, n_k, d)
            proj = np.einsum("bq,qnd->nbd", regs, coeffs)
        else:
            coeffs = np.zeros((0, n_k, d))
            proj = np.zeros_like(d_m)
        z_levels.append(np.ascontiguousarray(coeffs[:n].transpose(1, 2, 0)))
        u_levels.append(np.ascontiguousarray(coeffs[n:].transpose(1, 2, 0)))
        d_k = (d_m - proj).reshape(n_k * B, d)
        k_vals.append(np.repeat(k_vals[k], B, axis=0) + d_k)
    return MartingaleDecomposition(
        model=model,
        source=mart,
        z=tuple(z_levels),
        u=tuple(u_levels),
        orthogonal=Martingale(space, tuple(k_vals)),
    )


def reconstruction_defect(dec: MartingaleDecomposition) -> float:
    """Max node defect of dM = Z.dW + sum U_i dN~_i + dK."""
    space = dec.model.space
    worst = 0.0
    for k in range(space.steps):
        tpl = dec.model.steps[k]
        B = tpl.branching
        d_m = dec.source.at(k + 1) - np.repeat(dec.source.at(k), B, axis=0)
        d_k = dec.orthogonal.at(k + 1) - np.repeat(dec.orthogonal.at(k), B, axis=0)
        regs = np.hstack([tpl.dw, tpl.dn])  # (B, q)
        coeffs = np.concatenate([dec.z[k], dec.u[k]], axis=2)  # (n_k, d, q)
        proj = np.einsum("ndq,bq->nbd", coeffs, regs).reshape(d_m.shape)
        worst = max(worst, float(np.max(np.abs(d_m - proj - d_k), initial=0.0)))
    return worst


def orthogonality_defect(dec: MartingaleDecomposition) -> float:
    """Max over nodes and regressors of |E[dK * r | node]|."""
    space = dec.model.space
    worst = 0.0
    for k in range(space.steps):
        tpl = dec.model.steps[k]
        B = tpl.branching
        if tpl.regressors().shape[1] == 0:
            continue
        n_k = space.n_nodes(k)
        d_k = dec.orthogonal.at(k + 1) - np.repeat(dec.orthogonal.at(k), B, axis=0)
        d_k = d_k.reshape(n_k, B, -1)
        cross = np.einsum("b,bq,nbd->nqd", tpl.probs, tpl.regressors(), d_k)
        worst = max(worst, float(np.max(np.abs(cross), initial=0.0)))
    return worst


def _second_moment(model: NoiseModel, proc_vals: np.ndarray, level: int) -> float:
    probs = model.space.node_probabilities(level)
    return float(np.dot(probs, np.sum(proc_vals * proc_vals, axis=1)))


def isometry_check(dec: MartingaleDecomposition, t_level: int) -> tuple[float, float]:
    """Exact Pythagoras on the tree: E|M_t|^2 against the three-part energy sum.

    The right-hand side accumulates, over steps before ``t_level``, the
    conditional second moments of the Brownian part and of the compensated
    Poisson part (each a quadratic form against its block of the exact Gram
    matrix) plus E|K_t|^2.
    """
    model, space = dec.model, dec.model.space
    if not 0 <= t_level < space.levels:
        raise IndexError("t_level out of range")
    n, m = model.brownian_dim, model.mark_count
    lhs = _second_moment(model, dec.source.at(t_level), t_level)
    rhs = _second_moment(model, dec.orthogonal.at(t_level), t_level)
    for k in range(t_level):
        gram = model.steps[k].gram()
        gw = gram[:n, :n]
        gn = gram[n:, n:]
        probs = space.node_probabilities(k)
        if n:
            quad_z = np.einsum("ndi,ij,ndj->n", dec.z[k], gw, dec.z[k])
            rhs += float(np.dot(probs, quad_z))
        if m:
            quad_u = np.einsum("ndi,ij,ndj->n", dec.u[k], gn, dec.u[k])
            rhs += float(np.dot(probs, quad_u))
    return lhs, rhs


def h2_norm(dec: MartingaleDecomposition) -> float:
    """Discrete ||Z||_{H^2}: sqrt of sum_k E[dt_k |Z_k|_F^2] (Gram of the Brownian block)."""
    total = 0.0
    n = dec.model.brownian_dim
    for k in range(dec.model.space.steps):
        gw = dec.model.steps[k].gram()[:n, :n]
        probs = dec.model.space.node_probabilities(k)
        if n:
            total += float(np.dot(probs, np.einsum("ndi,ij,ndj->n", dec.z[k], gw, dec.z[k])))
    return float(np.sqrt(total))


def l2_compensated_norm(dec: MartingaleDecomposition) -> float:
    """Discrete ||U||_{L^2(N~)}: quadratic form against the compensated-Poisson Gram block."""
    total = 0.0
    n, m = dec.model.brownian_dim, dec.model.mark_count
    for k in range(dec.model.space.steps):
        gn = dec.model.steps[k].gram()[n:, n:]
        probs = dec.model.space.node_probabilities(k)
        if m:
            total += float(np.dot(probs, np.einsum("ndi,ij,ndj->n", dec.u[k], gn, dec.u[k])))
    return float(np.sqrt(total))


def zu_processes(dec: MartingaleDecomposition) -> tuple[AdaptedProcess, AdaptedProcess]:
    """(Z, U) as adapted processes with flattened dimensions d*n and d*m.

    The row stored at a level-k node multiplies the increment over
    (t_k, t_{k+1}]; the terminal level is zero-padded since no increment
    follows the horizon.
    """
    space = dec.model.space
    d = dec.dimension
    n, m = dec.model.brownian_dim, dec.model.mark_count
    z_vals = [dec.z[k].reshape(space.n_nodes(k), d * n) for k in range(space.steps)]
    z_vals.append(np.zeros((space.leaf_count, d * n)))
    u_vals = [dec.u[k].reshape(space.n_nodes(k), d * m) for k in range(space.steps)]
    u_vals.append(np.zeros((space.leaf_count, d * m)))
    if d * n == 0:
        z_vals = [np.zeros((space.n_nodes(k), 1)) for k in range(space.levels)]
    if d * m == 0:
        u_vals = [np.zeros((space.n_nodes(k), 1)) for k in range(space.levels)]
    return AdaptedProcess(space, tuple(z_vals)), AdaptedProcess(space, tuple(u_vals))


def decomposition_to_csv(dec: MartingaleDecomposition) -> str:
    """One row per non-leaf node: node id, Z entries, U entries, conditional dK norm."""
    model, space = dec.model, dec.model.space
    d, n, m = dec.dimension, model.brownian_dim, model.mark_count
    buf = io.StringIO()
    header = (
        ["node"]
        + [f"z_{i}_{j}" for i in range(d) for j in range(n)]
        + [f"u_{i}_{j}" for i in range(d) for j in range(m)]
        + ["dk_norm"]
    )
    buf.write(",".join(header) + "\n")
    for k in range(space.steps):
        tpl = model.steps[k]
        B = tpl.branching
        d_k = dec.orthogonal.at(k + 1) - np.repeat(dec.orthogonal.at(k), B, axis=0)
        d_k = d_k.reshape(space.n_nodes(k), B, d)
        cond = np.sqrt(np.einsum("b,nbd->n", tpl.probs, d_k * d_k))
        for i in range(space.n_nodes(k)):
            cells = [f"{k}:{i}"]
            cells += [repr(float(v)) for v in dec.z[k][i].ravel()]
            cells += [repr(float(v)) for v in dec.u[k][i].ravel()]
            cells.append(repr(float(cond[i])))
            buf.write(",".join(cells) + "\n")
    return buf.getvalue()
