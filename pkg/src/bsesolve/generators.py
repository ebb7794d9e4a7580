"""Generator forms mapping candidate solution pairs (Y, M) to adapted processes.

Every form returns an adapted process F(Y, M) with F_0 = 0. Integral drivers
use the left-endpoint rule, F_{t_{k+1}} = F_{t_k} + f(t_k, .) * dt_k, which
makes the integrand at t_k measurable at level k and keeps F adapted by
construction. Drivers that want to look ahead must route future dependence
through the conditional-expectation helpers on :class:`DriverContext`;
direct reads of descendant-distinguishing data are structurally impossible
because a context only ever hands out level-k arrays.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .filtered_space import (
    AdaptedProcess,
    FiniteFilteredSpace,
    Martingale,
    RandomVector,
    cond_expect,
    lift,
    martingale_from_terminal,
    sp_norm,
)
from .laws import DiscreteLaw, law_from_values
from .noise import NoiseModel
from .representation import MartingaleDecomposition, represent


class GeneratorContractError(ValueError):
    """A generator form violated its structural contract (shape, F_0 = 0, missing model)."""


class NuSnapWarning(UserWarning):
    """A delay-measure atom was snapped to the nearest grid point."""


def _flat_rv(space: FiniteFilteredSpace, level: int, values: np.ndarray) -> RandomVector:
    return RandomVector(space, level, values.reshape(values.shape[0], -1))


@dataclass
class WindowOverlay:
    """Frozen solution segment used by windowed solves: reads at levels >= cut
    are served from the already-solved tail instead of the current candidate."""

    cut: int
    y: AdaptedProcess
    m: Martingale
    z: dict[int, np.ndarray] = field(default_factory=dict)
    u: dict[int, np.ndarray] = field(default_factory=dict)


@dataclass
class DriverContext:
    """Per-time-step view handed to driver callables.

    Arrays are indexed by the nodes of the evaluation level; ``z`` and ``u``
    follow the predictable convention (the value at t_k multiplies the next
    increment). ``y_at``/``m_at``/``z_at``/``u_at`` read other grid times:
    past values are lifted, future values are conditionally expected, so the
    result is always measurable at the evaluation level.
    """

    space: FiniteFilteredSpace
    model: NoiseModel | None
    level: int
    t: float
    dt: float
    y: np.ndarray
    z: np.ndarray | None = None
    u: np.ndarray | None = None
    law_y: DiscreteLaw | None = None
    law_z: DiscreteLaw | None = None
    law_u: DiscreteLaw | None = None
    _y_proc: AdaptedProcess | None = None
    _mart: Martingale | None = None
    _dec: MartingaleDecomposition | None = None
    _overlay: WindowOverlay | None = None

    def _align(self, values: np.ndarray, level: int) -> np.ndarray:
        rv = _flat_rv(self.space, level, values)
        if level >= self.level:
            rv = cond_expect(rv, self.level)
        else:
            rv = lift(rv, self.level)
        return rv.values.reshape((self.space.n_nodes(self.level),) + values.shape[1:])

    def _pick(self, candidate, frozen, level: int):
        if self._overlay is not None and level >= self._overlay.cut:
            return frozen
        return candidate

    def y_at(self, level: int) -> np.ndarray:
        src = self._pick(self._y_proc, self._overlay.y if self._overlay else None, level)
        if src is None:
            raise GeneratorContractError("driver requested Y but no Y process is available")
        return self._align(src.at(level), level)

    def m_at(self, level: int) -> np.ndarray:
        src = self._pick(self._mart, self._overlay.m if self._overlay else None, level)
        if src is None:
            raise GeneratorContractError("driver requested M but no martingale is available")
        return self._align(src.at(level), level)

    def z_at(self, level: int) -> np.ndarray:
        return self._zu_at(level, "z")

    def u_at(self, level: int) -> np.ndarray:
        return self._zu_at(level, "u")

    def _zu_at(self, level: int, which: str) -> np.ndarray:
        if level >= self.space.levels - 1:
            raise GeneratorContractError("no predictable coefficient beyond the horizon")
        if self._overlay is not None and level >= self._overlay.cut:
            table = self._overlay.z if which == "z" else self._overlay.u
            vals = table.get(level)
            if vals is None:
                raise GeneratorContractError(f"frozen {which} values missing at level {level}")
        else:
            if self._dec is None:
                raise GeneratorContractError(
                    "driver requested martingale coefficients but the generator was not "
                    "declared ZU-dependent or the space is not noise-generated"
                )
            vals = getattr(self._dec, which)[level]
        return self._align(vals, level)


class Generator:
    """Base class; concrete forms define how (Y, M) maps to an adapted process."""

    depends_on_y: bool = True
    needs_zu: bool = False
    needs_laws: frozenset = frozenset()
    name: str = "generator"

    def evaluate(
        self,
        y: AdaptedProcess,
        m: Martingale,
        *,
        model: NoiseModel | None = None,
        dec: MartingaleDecomposition | None = None,
        overlay: WindowOverlay | None = None,
        mask: tuple[int, int] | None = None,
    ) -> AdaptedProcess:
        raise NotImplementedError


@dataclass
class IntegralDriver(Generator):
    """Driver f integrated in time with the left-endpoint rule.

    ``fn`` receives a :class:`DriverContext` and returns the per-node driver
    values at the current level, shape (n_nodes, d).
    """

    fn: Callable[[DriverContext], np.ndarray]
    depends_on_y: bool = True
    needs_zu: bool = False
    needs_laws: frozenset = frozenset()
    name: str = "integral_driver"

    def __post_init__(self):
        self.needs_laws = frozenset(self.needs_laws)
        if self.needs_laws - {"y", "z", "u"}:
            raise ValueError(f"unknown law keys {sorted(self.needs_laws - {'y', 'z', 'u'})}")
        if self.needs_laws & {"z", "u"} and not self.needs_zu:
            raise ValueError("laws of Z or U require a ZU-dependent driver")

    def evaluate(self, y, m, *, model=None, dec=None, overlay=None, mask=None):
        return _integrate(self, None, y, m, model=model, dec=dec, overlay=overlay, mask=mask)


@dataclass
class DelayedConvolution(Generator):
    """Kernel g on (Z, U) integrated against a finite delay measure on [0, T].

    Uses the change-of-variable reduction: the cell [t_k, t_{k+1}) carries the
    effective weight nu[0, T - t_{k+1}], which makes the reduced evaluation
    equal the direct double sum exactly whenever the measure is supported on
    grid points (the closed-interval weight nu[0, T - s] is recovered in the
    grid limit). Atoms off the grid are snapped to the nearest grid point
    with a :class:`NuSnapWarning`.
    """

    kernel: Callable[[DriverContext], np.ndarray]
    nu_atoms: tuple[tuple[float, float], ...]
    depends_on_y: bool = False
    needs_zu: bool = True
    needs_laws: frozenset = frozenset()
    name: str = "delayed_convolution"

    def __post_init__(self):
        atoms = tuple((float(r), float(w)) for r, w in self.nu_atoms)
        if any(w < 0.0 for _, w in atoms):
            raise ValueError("delay measure weights must be nonnegative")
        self.nu_atoms = atoms
        self.needs_laws = frozenset(self.needs_laws)

    def snapped_atoms(self, space: FiniteFilteredSpace) -> list[tuple[int, float]]:
        times = space.grid.times
        out = []
        for r, w in self.nu_atoms:
            if not 0.0 <= r <= times[-1]:
                raise ValueError(f"delay atom {r!r} outside [0, {times[-1]!r}]")
            idx = int(np.argmin(np.abs(times - r)))
            if abs(float(times[idx]) - r) > 1e-12:
                warnings.warn(
                    f"delay atom {r!r} snapped to grid time {float(times[idx])!r}",
                    NuSnapWarning,
                    stacklevel=3,
                )
            out.append((idx, w))
        return out

    def effective_weights(self, space: FiniteFilteredSpace) -> np.ndarray:
        k_steps = space.steps
        weights = np.zeros(k_steps)
        for idx, w in self.snapped_atoms(space):
            for k in range(k_steps):
                if idx + k + 1 <= k_steps:
                    weights[k] += w
        return weights

    def evaluate(self, y, m, *, model=None, dec=None, overlay=None, mask=None):
        weights = self.effective_weights(y.space)
        return _integrate(
            self, weights, y, m, model=model, dec=dec, overlay=overlay, mask=mask
        )


@dataclass
class FunctionalF(Generator):
    """Arbitrary user mapping (Y, M) -> adapted process with F_0 = 0.

    The callable must be pure and produce values that only use information
    available at each node; the structural checks cover shapes and F_0 = 0.
    """

    fn: Callable[[AdaptedProcess, Martingale], AdaptedProcess]
    depends_on_y: bool = True
    name: str = "functional"

    def evaluate(self, y, m, *, model=None, dec=None, overlay=None, mask=None):
        if mask is not None or overlay is not None:
            raise GeneratorContractError(
                "windowed solving needs an integral-form generator"
            )
        out = self.fn(y, m)
        if not isinstance(out, AdaptedProcess) or out.space is not y.space:
            raise GeneratorContractError("functional generator must return an adapted process on the same space")
        return out


@dataclass
class SplitF(Generator):
    """Sum F = F1 + F2 of a contraction part and a compact part."""

    f1: Generator
    f2: Generator
    name: str = "split"

    def __post_init__(self):
        self.depends_on_y = self.f1.depends_on_y or self.f2.depends_on_y
        self.needs_zu = self.f1.needs_zu or self.f2.needs_zu
        self.needs_laws = frozenset(self.f1.needs_laws | self.f2.needs_laws)

    def evaluate(self, y, m, *, model=None, dec=None, overlay=None, mask=None):
        a = self.f1.evaluate(y, m, model=model, dec=dec, overlay=overlay, mask=mask)
        b = self.f2.evaluate(y, m, model=model, dec=dec, overlay=overlay, mask=mask)
        return a + b


def _integrate(
    gen: Generator,
    extra_weights: np.ndarray | None,
    y: AdaptedProcess,
    m: Martingale,
    *,
    model: NoiseModel | None,
    dec: MartingaleDecomposition | None,
    overlay: WindowOverlay | None,
    mask: tuple[int, int] | None,
) -> AdaptedProcess:
    space = y.space
    d = y.dimension
    fn = gen.kernel if isinstance(gen, DelayedConvolution) else gen.fn
    levels = [np.zeros((1, d))]
    for k in range(space.steps):
        cur = levels[k]
        active = mask is None or (mask[0] <= k < mask[1])
        if active:
            ctx = _build_context(gen, space, model, dec, overlay, y, m, k)
            vals = np.asarray(fn(ctx), dtype=np.float64)
            if vals.ndim == 1:
                vals = vals[:, None]
            if vals.shape != (space.n_nodes(k), d):
                raise GeneratorContractError(
                    f"driver returned shape {vals.shape} at level {k}, expected {(space.n_nodes(k), d)}"
                )
            w = 1.0 if extra_weights is None else float(extra_weights[k])
            cur = cur + vals * (w * space.grid.dt(k))
        levels.append(np.repeat(cur, space.child_counts(k), axis=0))
    return AdaptedProcess(space, tuple(levels))


def _build_context(gen, space, model, dec, overlay, y, m, k) -> DriverContext:
    probs = space.node_probabilities(k)
    z = dec.z[k] if (dec is not None and k < space.steps) else None
    u = dec.u[k] if (dec is not None and k < space.steps) else None
    law_y = law_from_values(y.at(k), probs) if "y" in gen.needs_laws else None
    law_z = law_from_values(z, probs) if ("z" in gen.needs_laws and z is not None) else None
    law_u = law_from_values(u, probs) if ("u" in gen.needs_laws and u is not None) else None
    return DriverContext(
        space=space,
        model=model,
        level=k,
        t=float(space.grid.times[k]),
        dt=space.grid.dt(k),
        y=y.at(k),
        z=z if gen.needs_zu else None,
        u=u if gen.needs_zu else None,
        law_y=law_y,
        law_z=law_z,
        law_u=law_u,
        _y_proc=y,
        _mart=m,
        _dec=dec if gen.needs_zu else None,
        _overlay=overlay,
    )


def evaluate_F(
    gen: Generator,
    y: AdaptedProcess,
    m: Martingale,
    model: NoiseModel | None = None,
    *,
    dec: MartingaleDecomposition | None = None,
    overlay: WindowOverlay | None = None,
    mask: tuple[int, int] | None = None,
) -> AdaptedProcess:
    """Evaluate a generator on a candidate pair; returns an adapted process with F_0 = 0."""
    if m.space is not y.space:
        raise ValueError("Y and M live on different spaces")
    if gen.needs_zu and dec is None:
        if model is None:
            raise GeneratorContractError(
                f"generator {gen.name!r} reads (Z, U); a noise model is required"
            )
        dec = represent(m, model)
    out = gen.evaluate(y, m, model=model, dec=dec, overlay=overlay, mask=mask)
    scale = max(float(np.max(np.abs(out.at(-1)), initial=0.0)), 1.0)
    if float(np.max(np.abs(out.at(0)), initial=0.0)) > 1e-14 * scale:
        raise GeneratorContractError(f"generator {gen.name!r} returned F_0 != 0")
    if out.dimension != y.dimension:
        raise GeneratorContractError(
            f"generator {gen.name!r} returned dimension {out.dimension}, expected {y.dimension}"
        )
    return out


def delayed_convolution_F(
    kernel: Callable[[DriverContext], np.ndarray],
    nu_atoms: Sequence[tuple[float, float]],
    m: Martingale,
    model: NoiseModel,
    dimension: int | None = None,
) -> AdaptedProcess:
    """Reduced-form evaluation of the delayed convolution generator on a martingale."""
    gen = DelayedConvolution(kernel=kernel, nu_atoms=tuple(nu_atoms))
    d = dimension if dimension is not None else m.dimension
    zero_y = AdaptedProcess.zero(m.space, d)
    return evaluate_F(gen, zero_y, m, model)


def delayed_double_sum_F(
    kernel: Callable[[DriverContext], np.ndarray],
    nu_atoms: Sequence[tuple[float, float]],
    m: Martingale,
    model: NoiseModel,
    dimension: int | None = None,
) -> AdaptedProcess:
    """Direct double-sum evaluation of the delayed convolution, for cross-checking.

    F_{t_k} = sum_{j<k} dt_j * sum_i w_i 1{r_i <= t_j} g(t_j - r_i, Z_{t_j - r_i}, U_{t_j - r_i}),
    with the kernel value at the delayed level lifted to level j.
    """
    gen = DelayedConvolution(kernel=kernel, nu_atoms=tuple(nu_atoms))
    space = m.space
    d = dimension if dimension is not None else m.dimension
    zero_y = AdaptedProcess.zero(space, d)
    dec = represent(m, model)
    snapped = gen.snapped_atoms(space)
    cached: dict[int, np.ndarray] = {}

    def kernel_at(level: int) -> np.ndarray:
        if level not in cached:
            ctx = _build_context(gen, space, model, dec, None, zero_y, m, level)
            vals = np.asarray(kernel(ctx), dtype=np.float64)
            cached[level] = vals[:, None] if vals.ndim == 1 else vals
        return cached[level]

    levels = [np.zeros((1, d))]
    for j in range(space.steps):
        cur = levels[j]
        total = np.zeros((space.n_nodes(j), d))
        for idx, w in snapped:
            if idx <= j:
                src = kernel_at(j - idx)
                lifted = lift(_flat_rv(space, j - idx, src), j).values
                total = total + w * lifted
        cur = cur + total * space.grid.dt(j)
        levels.append(np.repeat(cur, space.child_counts(j), axis=0))
    return AdaptedProcess(space, tuple(levels))


def meanfield_driver(
    fn: Callable[[DriverContext], np.ndarray],
    y: AdaptedProcess,
    m: Martingale,
    model: NoiseModel | None = None,
    *,
    laws: Sequence[str] = ("y",),
    needs_zu: bool = False,
) -> AdaptedProcess:
    """Evaluate a law-dependent driver: empirical laws per grid time, then left-endpoint sums."""
    gen = IntegralDriver(fn=fn, needs_zu=needs_zu, needs_laws=frozenset(laws), name="meanfield")
    return evaluate_F(gen, y, m, model)


def quadratic_meanfield(
    alpha: Sequence[float],
    beta: Sequence[float],
    f1: Callable[[np.ndarray], np.ndarray] | None = None,
) -> SplitF:
    """Split driver f(Z_t) = f1(Z_t) + alpha + E[Z_t |Z_t|] beta.

    ``f1`` consumes the per-node coefficient block of shape (n_nodes, d, n)
    and returns (n_nodes, d); the expectation in the quadratic part runs over
    the law of Z_t at the current time (|.| is the Euclidean matrix norm).
    """
    alpha_v = np.asarray(alpha, dtype=np.float64).ravel()
    beta_v = np.asarray(beta, dtype=np.float64).ravel()

    def lipschitz_part(ctx: DriverContext) -> np.ndarray:
        if ctx.z.shape[2] != beta_v.size:
            raise ValueError(
                f"beta has length {beta_v.size}, Z has {ctx.z.shape[2]} columns"
            )
        if ctx.z.shape[1] != alpha_v.size:
            raise ValueError(f"alpha has length {alpha_v.size}, Z has {ctx.z.shape[1]} rows")
        if f1 is None:
            return np.zeros((ctx.z.shape[0], alpha_v.size))
        return np.asarray(f1(ctx.z), dtype=np.float64)

    def quadratic_part(ctx: DriverContext) -> np.ndarray:
        atoms = ctx.law_z.atoms.reshape(ctx.law_z.size, alpha_v.size, beta_v.size)
        mags = np.linalg.norm(atoms.reshape(ctx.law_z.size, -1), axis=1)
        mean_zabs = np.einsum("a,adn->dn", ctx.law_z.weights * mags, atoms)
        out = alpha_v + mean_zabs @ beta_v
        return np.tile(out, (ctx.z.shape[0], 1))

    part1 = IntegralDriver(
        fn=lipschitz_part, depends_on_y=False, needs_zu=True, name="quad_mf_lipschitz"
    )
    part2 = IntegralDriver(
        fn=quadratic_part,
        depends_on_y=False,
        needs_zu=True,
        needs_laws=frozenset({"z"}),
        name="quad_mf_quadratic",
    )
    return SplitF(part1, part2, name="quadratic_meanfield")


@dataclass(frozen=True)
class DriverLipschitzProfile:
    """Lipschitz data for a generator: a global constant plus the two-role split.

    ``constant`` bounds ||F(Y,M) - F(Y',M')||_{S^p} against
    ||Y - Y'||_{S^p} + ||M - M'||_{S^p}; it is a lower bound when estimated
    from samples (``empirical`` set).
    """

    constant: float
    c1: float | None = None
    c2: float | None = None
    empirical: bool = False
    trials: int = 0

    def __post_init__(self):
        for v in (self.constant, self.c1, self.c2):
            if v is not None and v < 0.0:
                raise ValueError("Lipschitz constants must be nonnegative")


def iterated_F(
    gen: Generator,
    y: AdaptedProcess,
    m: Martingale,
    depth: int,
    model: NoiseModel | None = None,
) -> AdaptedProcess:
    """F applied to the depth-fold forward iterate of Y (depth = 1 is F itself)."""
    if depth < 1:
        raise ValueError("depth must be >= 1")
    cur = y
    y0 = y.at(0)[0]
    for _ in range(depth - 1):
        f_cur = evaluate_F(gen, cur, m, model)
        cur = AdaptedProcess(
            cur.space,
            tuple(y0 - f_cur.at(k) - m.at(k) for k in range(cur.space.levels)),
        )
    return evaluate_F(gen, cur, m, model)


def estimate_lipschitz(
    gen: Generator,
    space: FiniteFilteredSpace,
    trials: int,
    *,
    p: float = 2.0,
    seed: int = 0,
    iterate_depth: int = 1,
    model: NoiseModel | None = None,
) -> DriverLipschitzProfile:
    """Empirical lower bound on the generator's Lipschitz constant.

    Samples random pairs (Y, M), (Y', M') (varying Y only, M only, or both in
    rotation) and maximises
    ||F(Y,M) - F(Y',M')||_{S^p} / (||Y-Y'||_{S^p} + ||M-M'||_{S^p}).
    Degenerate pairs are skipped. ``iterate_depth`` estimates the constant of
    the depth-fold forward-iterated generator instead.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    d = 1
    best = 0.0
    done = 0
    for trial in range(trials):
        y_a, m_a = _random_pair(space, d, rng)
        mode = trial % 3
        if mode == 0:
            y_b, m_b = _perturb_y(space, y_a, rng), m_a
        elif mode == 1:
            y_b, m_b = y_a, _random_martingale(space, d, rng)
        else:
            y_b, m_b = _random_pair(space, d, rng)
            y_b = _match_initial(y_b, y_a)
        denom = sp_norm(y_a - y_b, p) + sp_norm(m_a - m_b, p)
        if denom <= 1e-14:
            continue
        fa = iterated_F(gen, y_a, m_a, iterate_depth, model)
        fb = iterated_F(gen, y_b, m_b, iterate_depth, model)
        best = max(best, sp_norm(fa - fb, p) / denom)
        done += 1
    return DriverLipschitzProfile(constant=best, empirical=True, trials=done)


def _random_martingale(space: FiniteFilteredSpace, d: int, rng) -> Martingale:
    v = RandomVector(space, space.levels - 1, rng.standard_normal((space.leaf_count, d)))
    _, mart = martingale_from_terminal(v)
    return mart


def _random_pair(space, d, rng):
    y = AdaptedProcess(
        space,
        tuple(rng.standard_normal((space.n_nodes(k), d)) for k in range(space.levels)),
    )
    return y, _random_martingale(space, d, rng)


def _perturb_y(space, y, rng):
    bump = AdaptedProcess(
        space,
        tuple(rng.standard_normal((space.n_nodes(k), y.dimension)) for k in range(space.levels)),
    )
    return y + 0.5 * bump


def _match_initial(y_b: AdaptedProcess, y_a: AdaptedProcess) -> AdaptedProcess:
    levels = list(y_b.values)
    levels[0] = y_a.at(0)
    return AdaptedProcess(y_b.space, tuple(levels))
