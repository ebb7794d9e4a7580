"""Finite filtered probability spaces (event trees) with exact conditional expectation.

A space is a rooted tree of atoms: level k holds the atoms of the k-th
sigma-algebra, children refine their parent atom, and each node carries the
product of transition probabilities along its path. Conditional expectations,
L^p norms and running-supremum (S^p) norms are plain weighted sums, so every
quantity computed here can be checked against brute-force enumeration over
leaves.

Children of a node are stored contiguously in the next level, which keeps
conditional expectation (``np.add.reduceat``) and lifting (``np.repeat``)
vectorised.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

CHILD_PROB_TOL = 1e-14
LEAF_PROB_TOL = 1e-12
MARTINGALE_TOL = 1e-12


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class TimeGrid:
    """Strictly increasing time grid 0 = t_0 < t_1 < ... < t_K = T."""

    times: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=np.float64)
        if t.ndim != 1 or t.size < 2:
            raise ValueError("grid needs at least two time points")
        if t[0] != 0.0:
            raise ValueError("grid must start at t_0 = 0")
        if np.any(np.diff(t) <= 0.0):
            raise ValueError("grid times must be strictly increasing")
        object.__setattr__(self, "times", _readonly(t))

    @classmethod
    def uniform(cls, steps: int, horizon: float) -> "TimeGrid":
        if steps < 1:
            raise ValueError("steps must be >= 1")
        if horizon <= 0.0:
            raise ValueError("horizon must be positive")
        times = np.linspace(0.0, horizon, steps + 1)
        times[-1] = horizon
        return cls(times)

    @property
    def steps(self) -> int:
        return self.times.size - 1

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    def dt(self, k: int) -> float:
        return float(self.times[k + 1] - self.times[k])

    @property
    def deltas(self) -> np.ndarray:
        return np.diff(self.times)


class FiniteFilteredSpace:
    """Event tree carrying a discrete filtration with strictly positive atoms.

    Parameters
    ----------
    grid:
        Time grid; level k of the tree lives at ``grid.times[k]``.
    children_probs:
        ``children_probs[k][i]`` is the vector of transition probabilities
        from node i at level k to its children at level k+1. Each vector must
        be strictly positive and sum to 1 within ``CHILD_PROB_TOL``; it is
        renormalised exactly once at construction.
    """

    def __init__(self, grid: TimeGrid, children_probs: Sequence[Sequence[Sequence[float]]]):
        if len(children_probs) != grid.steps:
            raise ValueError(
                f"children_probs has {len(children_probs)} levels, grid has {grid.steps} steps"
            )
        self.grid = grid
        counts = [1]
        offsets: list[np.ndarray] = []
        trans: list[np.ndarray] = [np.ones(1)]  # level 0: root carries mass 1
        for k, level in enumerate(children_probs):
            if len(level) != counts[k]:
                raise ValueError(
                    f"level {k}: expected {counts[k]} child-probability vectors, got {len(level)}"
                )
            flat = []
            offs = np.zeros(len(level) + 1, dtype=np.int64)
            for i, probs in enumerate(level):
                p = np.asarray(probs, dtype=np.float64)
                if p.ndim != 1 or p.size < 1:
                    raise ValueError(f"node {k}:{i} must have at least one child")
                if np.any(p <= 0.0):
                    raise ValueError(f"node {k}:{i} has a non-positive child probability")
                s = float(p.sum())
                if abs(s - 1.0) > CHILD_PROB_TOL:
                    raise ValueError(
                        f"node {k}:{i} child probabilities sum to {s!r}, off by more than {CHILD_PROB_TOL}"
                    )
                if s != 1.0:
                    p = p / s
                flat.append(p)
                offs[i + 1] = offs[i] + p.size
            offsets.append(offs)
            trans.append(np.concatenate(flat))
            counts.append(int(offs[-1]))
        self._counts = counts
        self._child_offsets = [_readonly_int(o) for o in offsets]
        self._trans = [_readonly(t) for t in trans]
        node_prob = [np.ones(1)]
        for k in range(grid.steps):
            parent_mass = np.repeat(node_prob[k], np.diff(self._child_offsets[k]))
            node_prob.append(parent_mass * self._trans[k + 1])
        self._node_prob = [_readonly(p) for p in node_prob]
        leaf_sum = float(self._node_prob[-1].sum())
        if abs(leaf_sum - 1.0) > LEAF_PROB_TOL:
            raise ValueError(f"leaf probabilities sum to {leaf_sum!r}")

    # -- structure ---------------------------------------------------------

    @property
    def levels(self) -> int:
        """Number of levels, i.e. grid.steps + 1."""
        return len(self._counts)

    @property
    def steps(self) -> int:
        return self.grid.steps

    @property
    def leaf_count(self) -> int:
        return self._counts[-1]

    def n_nodes(self, level: int) -> int:
        return self._counts[level]

    def child_span(self, level: int, node: int) -> tuple[int, int]:
        offs = self._child_offsets[level]
        return int(offs[node]), int(offs[node + 1])

    def child_probs(self, level: int, node: int) -> np.ndarray:
        lo, hi = self.child_span(level, node)
        return self._trans[level + 1][lo:hi]

    def child_counts(self, level: int) -> np.ndarray:
        return np.diff(self._child_offsets[level])

    def node_probabilities(self, level: int) -> np.ndarray:
        return self._node_prob[level]

    @property
    def leaf_probabilities(self) -> np.ndarray:
        return self._node_prob[-1]

    def _check_level(self, level: int) -> None:
        if not 0 <= level < self.levels:
            raise IndexError(f"level {level} out of range [0, {self.levels - 1}]")


def _readonly_int(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.int64)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class RandomVector:
    """d-dimensional random vector measurable at a given level.

    Values are stored one row per level-``level`` node; measurability is by
    construction, lifting to finer levels is explicit via :func:`lift`.
    """

    space: FiniteFilteredSpace
    level: int
    values: np.ndarray  # (n_nodes, d)

    def __post_init__(self):
        self.space._check_level(self.level)
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim == 1:
            v = v[:, None]
        if v.shape[0] != self.space.n_nodes(self.level):
            raise ValueError(
                f"expected {self.space.n_nodes(self.level)} rows at level {self.level}, got {v.shape[0]}"
            )
        object.__setattr__(self, "values", _readonly(v))

    @property
    def dimension(self) -> int:
        return self.values.shape[1]

    def _binary(self, other: "RandomVector") -> None:
        if other.space is not self.space:
            raise ValueError("random vectors live on different spaces")
        if other.level != self.level or other.dimension != self.dimension:
            raise ValueError("level or dimension mismatch")

    def __add__(self, other: "RandomVector") -> "RandomVector":
        self._binary(other)
        return RandomVector(self.space, self.level, self.values + other.values)

    def __sub__(self, other: "RandomVector") -> "RandomVector":
        self._binary(other)
        return RandomVector(self.space, self.level, self.values - other.values)

    def __mul__(self, c: float) -> "RandomVector":
        return RandomVector(self.space, self.level, self.values * float(c))

    __rmul__ = __mul__

    def __neg__(self) -> "RandomVector":
        return self * -1.0


@dataclass(frozen=True, eq=False)
class AdaptedProcess:
    """d-dimensional adapted process: one value row per node at every level."""

    space: FiniteFilteredSpace
    values: tuple[np.ndarray, ...]

    def __post_init__(self):
        if len(self.values) != self.space.levels:
            raise ValueError(
                f"process needs {self.space.levels} levels, got {len(self.values)}"
            )
        dims = set()
        vals = []
        for k, v in enumerate(self.values):
            v = np.asarray(v, dtype=np.float64)
            if v.ndim == 1:
                v = v[:, None]
            if v.shape[0] != self.space.n_nodes(k):
                raise ValueError(
                    f"level {k}: expected {self.space.n_nodes(k)} rows, got {v.shape[0]}"
                )
            dims.add(v.shape[1])
            vals.append(_readonly(v))
        if len(dims) != 1:
            raise ValueError(f"inconsistent dimensions across levels: {sorted(dims)}")
        object.__setattr__(self, "values", tuple(vals))

    @property
    def dimension(self) -> int:
        return self.values[0].shape[1]

    def at(self, level: int) -> np.ndarray:
        return self.values[level]

    def terminal(self) -> RandomVector:
        return RandomVector(self.space, self.space.levels - 1, self.values[-1])

    def initial(self) -> RandomVector:
        return RandomVector(self.space, 0, self.values[0])

    def map_levels(self, fn) -> "AdaptedProcess":
        return AdaptedProcess(self.space, tuple(fn(v) for v in self.values))

    def __add__(self, other: "AdaptedProcess") -> "AdaptedProcess":
        if other.space is not self.space:
            raise ValueError("processes live on different spaces")
        return AdaptedProcess(
            self.space, tuple(a + b for a, b in zip(self.values, other.values))
        )

    def __sub__(self, other: "AdaptedProcess") -> "AdaptedProcess":
        return self + (other * -1.0)

    def __mul__(self, c: float) -> "AdaptedProcess":
        c = float(c)
        return AdaptedProcess(self.space, tuple(v * c for v in self.values))

    __rmul__ = __mul__

    @classmethod
    def zero(cls, space: FiniteFilteredSpace, dimension: int) -> "AdaptedProcess":
        return cls(
            space,
            tuple(np.zeros((space.n_nodes(k), dimension)) for k in range(space.levels)),
        )


class Martingale(AdaptedProcess):
    """Adapted process whose node value is the probability-weighted mean of its children."""

    def check_martingale(self, atol: float = MARTINGALE_TOL) -> float:
        """Return the largest node defect; raise if it exceeds ``atol``."""
        defect = martingale_defect(self)
        if defect > atol:
            raise ValueError(f"martingale property violated, max node defect {defect:.3e}")
        return defect

    def is_centered(self, atol: float = MARTINGALE_TOL) -> bool:
        return bool(np.max(np.abs(self.values[0])) <= atol)


def martingale_defect(proc: AdaptedProcess) -> float:
    """Max over non-leaf nodes of |value - weighted child average| (Euclidean)."""
    space = proc.space
    worst = 0.0
    for k in range(space.levels - 1):
        w = space._trans[k + 1]
        avg = np.add.reduceat(
            proc.at(k + 1) * w[:, None], space._child_offsets[k][:-1], axis=0
        )
        worst = max(worst, float(np.max(np.linalg.norm(avg - proc.at(k), axis=1), initial=0.0)))
    return worst


# -- operations -------------------------------------------------------------


def lift(x: RandomVector, level: int) -> RandomVector:
    """Exact lift of a level-k random vector to a finer level (repeat over subtrees)."""
    space = x.space
    space._check_level(level)
    if level < x.level:
        raise ValueError("lift target must not be coarser than the vector's level")
    vals = x.values
    for lvl in range(x.level, level):
        vals = np.repeat(vals, space.child_counts(lvl), axis=0)
    return RandomVector(space, level, vals)


def cond_expect(x: RandomVector, t_level: int) -> RandomVector:
    """E[X | F_{t_level}], computed by exact probability-weighted averaging."""
    space = x.space
    if not 0 <= t_level <= x.level:
        raise IndexError(f"t_level {t_level} outside [0, {x.level}]")
    vals = x.values
    for lvl in range(x.level, t_level, -1):
        w = space._trans[lvl]
        vals = np.add.reduceat(vals * w[:, None], space._child_offsets[lvl - 1][:-1], axis=0)
    return RandomVector(space, t_level, vals)


def conditional_process(v: RandomVector) -> AdaptedProcess:
    """The process t -> E_t[V], one exact averaging pass from V's level down to 0."""
    space = v.space
    out: list[np.ndarray] = [None] * space.levels  # type: ignore[list-item]
    vals = v.values
    out[v.level] = vals
    for lvl in range(v.level, 0, -1):
        w = space._trans[lvl]
        vals = np.add.reduceat(vals * w[:, None], space._child_offsets[lvl - 1][:-1], axis=0)
        out[lvl - 1] = vals
    for lvl in range(v.level + 1, space.levels):
        out[lvl] = np.repeat(out[lvl - 1], space.child_counts(lvl - 1), axis=0)
    return AdaptedProcess(space, tuple(out))


def lp_norm(x: RandomVector, p: float) -> float:
    """(E |X|^p)^{1/p} with |.| Euclidean across dimensions; p = inf is the max over atoms."""
    if p <= 1.0:
        raise ValueError("p must lie in (1, inf]")
    mags = np.linalg.norm(x.values, axis=1)
    if math.isinf(p):
        return float(mags.max(initial=0.0))
    probs = x.space.node_probabilities(x.level)
    return float(np.dot(probs, mags**p) ** (1.0 / p))


def sp_norm(y: AdaptedProcess, p: float, up_to_level: int | None = None) -> float:
    """L^p norm of the pathwise running max of |Y_t| up to a cut level (default: horizon)."""
    if p <= 1.0:
        raise ValueError("p must lie in (1, inf]")
    space = y.space
    cut = space.levels - 1 if up_to_level is None else up_to_level
    space._check_level(cut)
    run = np.linalg.norm(y.at(0), axis=1)
    for k in range(1, cut + 1):
        run = np.maximum(np.repeat(run, space.child_counts(k - 1)), np.linalg.norm(y.at(k), axis=1))
    if math.isinf(p):
        return float(run.max(initial=0.0))
    probs = space.node_probabilities(cut)
    return float(np.dot(probs, run**p) ** (1.0 / p))


def martingale_from_terminal(v: RandomVector) -> tuple[RandomVector, Martingale]:
    """Split a terminal vector V into (E_0 V, the martingale t -> E_0 V - E_t V).

    The returned martingale starts at exactly zero and ends at E_0 V - V.
    """
    space = v.space
    if v.level != space.levels - 1:
        raise ValueError("V must be measurable at the terminal level")
    cond = conditional_process(v)
    y0 = RandomVector(space, 0, cond.at(0))
    vals = [np.zeros_like(cond.at(0))]
    for k in range(1, space.levels):
        vals.append(cond.at(0)[0] - cond.at(k))
    return y0, Martingale(space, tuple(vals))


def doob_ratio(v: RandomVector, p: float) -> float:
    """||sup_t |E_t V|||_p / ||V||_p; zero when ||V||_p vanishes."""
    if not (1.0 < p < math.inf):
        raise ValueError("p must lie in (1, inf)")
    denom = lp_norm(v, p)
    if denom == 0.0:
        return 0.0
    return sp_norm(conditional_process(v), p) / denom


# -- serialization ----------------------------------------------------------


def space_to_json(space: FiniteFilteredSpace) -> str:
    """JSON document with grid times and per-node child probability lists.

    Floats are emitted with shortest round-trip repr, so probabilities that
    are exactly representable in binary survive a round trip bit for bit.
    """
    children = []
    for k in range(space.steps):
        level = []
        for i in range(space.n_nodes(k)):
            level.append([float(p) for p in space.child_probs(k, i)])
        children.append(level)
    doc = {"times": [float(t) for t in space.grid.times], "children": children}
    return json.dumps(doc)


def space_from_json(text: str) -> FiniteFilteredSpace:
    doc = json.loads(text)
    grid = TimeGrid(np.asarray(doc["times"], dtype=np.float64))
    return FiniteFilteredSpace(grid, doc["children"])
