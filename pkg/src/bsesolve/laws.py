"""Discrete probability laws and exact 2-Wasserstein distances.

Laws are extracted from tree-valued random elements by exact value grouping
(no epsilon-clustering): atoms are the distinct value rows, weights the
summed node probabilities. The scalar Wasserstein distance uses the quantile
coupling; the multi-dimensional one solves the transport linear program with
a deterministic simplex solver and refuses instances above the atom limit
rather than approximating.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from .filtered_space import RandomVector

WEIGHT_TOL = 1e-12
DEFAULT_ATOM_LIMIT = 64


@dataclass(frozen=True, eq=False)
class DiscreteLaw:
    """Finitely supported law on a normed space; atoms are rows of a float matrix."""

    atoms: np.ndarray  # (A, dim)
    weights: np.ndarray  # (A,)

    def __post_init__(self):
        atoms = np.atleast_2d(np.asarray(self.atoms, dtype=np.float64))
        weights = np.asarray(self.weights, dtype=np.float64).ravel()
        if atoms.shape[0] != weights.size:
            raise ValueError("atoms and weights must have equal length")
        if np.any(weights <= 0.0):
            raise ValueError("weights must be strictly positive")
        if abs(float(weights.sum()) - 1.0) > WEIGHT_TOL:
            raise ValueError(f"weights sum to {float(weights.sum())!r}")
        for a in (atoms, weights):
            a.flags.writeable = False
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "weights", weights)

    @property
    def size(self) -> int:
        return self.weights.size

    @property
    def dim(self) -> int:
        return self.atoms.shape[1]

    def mean(self) -> np.ndarray:
        return self.weights @ self.atoms

    @classmethod
    def dirac(cls, point) -> "DiscreteLaw":
        return cls(np.atleast_2d(np.asarray(point, dtype=np.float64)), np.ones(1))


def law_from_values(values: np.ndarray, probs: np.ndarray) -> DiscreteLaw:
    """Group exactly equal rows (trailing axes flattened) and sum their probabilities."""
    vals = np.asarray(values, dtype=np.float64)
    flat = vals.reshape(vals.shape[0], -1)
    atoms, inverse = np.unique(flat, axis=0, return_inverse=True)
    weights = np.zeros(atoms.shape[0])
    np.add.at(weights, inverse.ravel(), np.asarray(probs, dtype=np.float64))
    return DiscreteLaw(atoms, weights)


def empirical_law(x: RandomVector) -> DiscreteLaw:
    """Law of a random vector: distinct values with summed atom probabilities."""
    return law_from_values(x.values, x.space.node_probabilities(x.level))


def _w2_quantile_1d(a: DiscreteLaw, b: DiscreteLaw) -> float:
    # Integrate |F_a^{-1} - F_b^{-1}|^2 over (0,1): split the unit interval at
    # every cumulative breakpoint of either law, then read both quantile
    # functions at segment midpoints (constant there).
    ia = np.argsort(a.atoms[:, 0], kind="stable")
    ib = np.argsort(b.atoms[:, 0], kind="stable")
    xa, ca = a.atoms[ia, 0], np.cumsum(a.weights[ia])
    xb, cb = b.atoms[ib, 0], np.cumsum(b.weights[ib])
    breaks = np.concatenate([[0.0], np.union1d(ca[:-1], cb[:-1]), [1.0]])
    seg = np.diff(breaks)
    mid = 0.5 * (breaks[:-1] + breaks[1:])
    qa = xa[np.minimum(np.searchsorted(ca, mid, side="left"), xa.size - 1)]
    qb = xb[np.minimum(np.searchsorted(cb, mid, side="left"), xb.size - 1)]
    return float(np.sqrt(max(float(np.dot(seg, (qa - qb) ** 2)), 0.0)))


def _w2_transport_lp(a: DiscreteLaw, b: DiscreteLaw) -> float:
    na, nb = a.size, b.size
    diff = a.atoms[:, None, :] - b.atoms[None, :, :]
    cost = np.sum(diff * diff, axis=2).ravel()
    # Row-sum and column-sum constraints; the last column constraint is
    # redundant given the row sums and is dropped to keep the system full rank.
    rows = np.zeros((na, na * nb))
    for i in range(na):
        rows[i, i * nb : (i + 1) * nb] = 1.0
    cols = np.zeros((nb - 1, na * nb))
    for j in range(nb - 1):
        cols[j, j::nb] = 1.0
    a_eq = np.vstack([rows, cols])
    b_eq = np.concatenate([a.weights, b.weights[:-1]])
    res = linprog(cost, A_eq=a_eq, b_eq=b_eq, bounds=(0.0, None), method="highs")
    if not res.success:  # pragma: no cover - LP is always feasible
        raise RuntimeError(f"transport LP failed: {res.message}")
    return float(np.sqrt(max(res.fun, 0.0)))


def wasserstein2(a: DiscreteLaw, b: DiscreteLaw, atom_limit: int = DEFAULT_ATOM_LIMIT) -> float:
    """Exact 2-Wasserstein distance between two finitely supported laws.

    Scalar laws use the quantile coupling; multi-dimensional laws solve the
    transport linear program exactly, provided both sides have at most
    ``atom_limit`` atoms (raises otherwise, no silent approximation).
    """
    if a.dim != b.dim:
        raise ValueError(f"dimension mismatch: {a.dim} vs {b.dim}")
    if a.dim == 1:
        return _w2_quantile_1d(a, b)
    if max(a.size, b.size) > atom_limit:
        raise ValueError(
            f"law has {max(a.size, b.size)} atoms, above the exact-transport limit {atom_limit}"
        )
    return _w2_transport_lp(a, b)
