"""Experiment configuration: pydantic models plus builders to solver objects.

The same models validate JSON configs for the CLI and request bodies for the
service, so schema errors carry precise field paths in both surfaces. Seeds
are mandatory: randomized suites have no entropy defaults.
"""

from __future__ import annotations

from typing import Literal, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from . import generators as gens
from .filtered_space import RandomVector
from .noise import DEFAULT_LEAF_BUDGET, NoiseModel, build_jump_diffusion_tree
from .solver import SolverConfig


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


class NoiseConfig(StrictModel):
    brownian_dim: int = Field(default=0, ge=0)
    marks: list[list[float]] = Field(default_factory=list)
    intensities: list[float] = Field(default_factory=list)
    steps: int = Field(ge=1)
    horizon: float = Field(gt=0.0)
    extra_noise: bool = False
    leaf_budget: int = Field(default=DEFAULT_LEAF_BUDGET, ge=2)

    @model_validator(mode="after")
    def _marks_match(self):
        if len(self.marks) != len(self.intensities):
            raise ValueError("marks and intensities must have equal length")
        if self.brownian_dim == 0 and not self.marks and not self.extra_noise:
            raise ValueError("noise model needs at least one source of randomness")
        return self


class ZeroDriver(StrictModel):
    kind: Literal["zero"]


class ConstantDriver(StrictModel):
    kind: Literal["constant"]
    value: list[float]


class LinearYDriver(StrictModel):
    """f(t, Y_t) = a * Y_t + b (componentwise)."""

    kind: Literal["linear_y"]
    a: float
    b: float = 0.0


class LinearZDriver(StrictModel):
    """f(t, Z_t)_i = c * sum_j Z_ij."""

    kind: Literal["linear_z"]
    c: float


class ScaledMartingaleDriver(StrictModel):
    """Y-free non-integral generator F_t(Y, M) = c * M_t."""

    kind: Literal["scaled_m"]
    c: float


class MeanFieldMeanDriver(StrictModel):
    """f(t, L(Y_t)) = c * mean of the law of Y_t."""

    kind: Literal["meanfield_mean"]
    c: float


class MeanFieldW2Driver(StrictModel):
    """f(t, L(Y_t)) = c * W_2(L(Y_t), dirac at 0), broadcast across dimensions."""

    kind: Literal["meanfield_w2"]
    c: float


class QuadraticMeanFieldDriver(StrictModel):
    """Split driver f(Z_t) = f1_scale * (Z row sums) + alpha + E[Z_t |Z_t|] beta."""

    kind: Literal["quadratic_meanfield"]
    alpha: list[float]
    beta: list[float]
    f1_scale: float = 0.0


class DelayedResonantDriver(StrictModel):
    """Delayed coefficient read modulated by the arrival increment sign.

    f(t_k) = c * Z_{t_{k-delay}} * dW_arrival / dt for k >= delay, scalar
    model only. Deliberately outside every smallness regime for large c:
    used to demonstrate divergence and non-uniqueness diagnostics.
    """

    kind: Literal["delayed_z_resonant"]
    c: float
    delay_steps: int = Field(default=1, ge=1)


class DelayedConvolutionDriver(StrictModel):
    """Kernel on (Z, U) integrated against a finite delay measure: atoms [r, w]."""

    kind: Literal["delayed_convolution"]
    kernel: Literal["linear_z"]
    c: float = 1.0
    nu_atoms: list[tuple[float, float]]


class AnticipatingMeanDriver(StrictModel):
    """f(t, Y) = c * E_t[Y at a later grid time], look-ahead of a fixed number of steps."""

    kind: Literal["anticipating_y"]
    c: float
    lookahead_steps: int = Field(default=1, ge=1)


DriverConfig = Union[
    ZeroDriver,
    ConstantDriver,
    LinearYDriver,
    LinearZDriver,
    ScaledMartingaleDriver,
    MeanFieldMeanDriver,
    MeanFieldW2Driver,
    QuadraticMeanFieldDriver,
    DelayedResonantDriver,
    DelayedConvolutionDriver,
    AnticipatingMeanDriver,
]


class TerminalConfig(StrictModel):
    """Terminal condition as a named functional of the noise path.

    Kinds: ``w_terminal`` (the Brownian endpoint, d = n), ``w1_squared``
    (scalar square of the first coordinate), ``abs_w`` (scalar Euclidean
    norm), ``indicator`` (scalar 1{W_T[0] > threshold}), ``poisson_count``
    (scalar total event count), ``custom_table`` (raw per-leaf rows).
    """

    kind: Literal[
        "w_terminal", "w1_squared", "abs_w", "indicator", "poisson_count", "custom_table"
    ]
    scale: float = 1.0
    threshold: float = 0.0
    values: list[list[float]] | None = None

    @model_validator(mode="after")
    def _table_present(self):
        if self.kind == "custom_table" and self.values is None:
            raise ValueError("custom_table needs explicit values")
        return self


class SolverConfigModel(StrictModel):
    method: Literal["picard", "block", "mann"] = "picard"
    p: float = Field(default=2.0, gt=1.0)
    tol: float = Field(default=1e-10, gt=0.0)
    max_iter: int = Field(default=500, ge=1)
    block_delta: float | None = Field(default=None, gt=0.0)
    mann_theta: float = Field(default=0.5, gt=0.0, le=1.0)
    initial: Literal["xi", "zero"] = "xi"
    declared_lipschitz: float | None = Field(default=None, ge=0.0)

    @model_validator(mode="after")
    def _block_needs_delta(self):
        if self.method == "block" and self.block_delta is None:
            raise ValueError("block method needs block_delta")
        return self

    def to_solver_config(self) -> SolverConfig:
        return SolverConfig(
            p=self.p,
            tol=self.tol,
            max_iter=self.max_iter,
            block_delta=self.block_delta,
            mann_theta=self.mann_theta,
            initial=self.initial,
            declared_lipschitz=self.declared_lipschitz,
        )


class OracleSpecModel(StrictModel):
    kind: Literal["zero_driver", "linear_scalar", "backward_recursion"]
    a: float = 0.0
    b: float = 0.0


class InequalitySuiteModel(StrictModel):
    n_instances: int = Field(default=1000, ge=1)
    rows: list[str] | None = None


class GaussDiagnosticsModel(StrictModel):
    truncation: int = Field(default=8, ge=1)
    quad_order: int = Field(default=5, ge=2)
    eigenvalues: list[float] | None = None
    plan: Literal["auto", "quadrature", "montecarlo"] = "auto"
    mc_samples: int = Field(default=4096, ge=2)
    isometry_trials: int = Field(default=50, ge=1)
    chain_trials: int = Field(default=100, ge=1)
    lipschitz_pairs: int = Field(default=200, ge=1)
    functions: list[str] | None = None
    net_eps: float = Field(default=0.25, gt=0.0)
    derivative_bound: float = Field(default=4.0, gt=0.0)


class ExperimentConfig(StrictModel):
    """One experiment: noise model, driver, terminal condition, solver, add-ons."""

    seed: int = Field(ge=0)
    noise: NoiseConfig
    driver: DriverConfig = Field(discriminator="kind", default_factory=lambda: ZeroDriver(kind="zero"))
    terminal: TerminalConfig
    solver: SolverConfigModel = Field(default_factory=SolverConfigModel)
    oracle: OracleSpecModel | None = None
    inequalities: InequalitySuiteModel | None = None
    gauss: GaussDiagnosticsModel | None = None


class SweepConfig(StrictModel):
    seed: int = Field(ge=0)
    configs: list[ExperimentConfig]
    workers: int = Field(default=4, ge=1)


# -- builders ----------------------------------------------------------------


def build_noise_model(cfg: NoiseConfig) -> NoiseModel:
    return build_jump_diffusion_tree(
        brownian_dim=cfg.brownian_dim,
        marks=np.asarray(cfg.marks, dtype=np.float64) if cfg.marks else np.zeros((0, 1)),
        intensities=np.asarray(cfg.intensities, dtype=np.float64),
        steps=cfg.steps,
        horizon=cfg.horizon,
        extra_noise=cfg.extra_noise,
        leaf_budget=cfg.leaf_budget,
    )


def build_terminal(cfg: TerminalConfig, model: NoiseModel) -> RandomVector:
    space = model.space
    top = space.levels - 1
    w = model.w_path[top]
    if cfg.kind == "w_terminal":
        if model.brownian_dim < 1:
            raise ValueError("w_terminal needs a Brownian component")
        vals = w
    elif cfg.kind == "w1_squared":
        if model.brownian_dim < 1:
            raise ValueError("w1_squared needs a Brownian component")
        vals = (w[:, :1]) ** 2
    elif cfg.kind == "abs_w":
        if model.brownian_dim < 1:
            raise ValueError("abs_w needs a Brownian component")
        vals = np.linalg.norm(w, axis=1, keepdims=True)
    elif cfg.kind == "indicator":
        if model.brownian_dim < 1:
            raise ValueError("indicator needs a Brownian component")
        vals = (w[:, :1] > cfg.threshold).astype(np.float64)
    elif cfg.kind == "poisson_count":
        if model.mark_count < 1:
            raise ValueError("poisson_count needs Poisson marks")
        vals = model.event_counts[top].sum(axis=1, keepdims=True)
    else:  # custom_table
        vals = np.asarray(cfg.values, dtype=np.float64)
        if vals.shape[0] != space.leaf_count:
            raise ValueError(
                f"custom_table has {vals.shape[0]} rows, the tree has {space.leaf_count} leaves"
            )
    return RandomVector(space, top, cfg.scale * vals)


def build_generator(cfg: DriverConfig, model: NoiseModel) -> gens.Generator:
    if isinstance(cfg, ZeroDriver):
        return gens.IntegralDriver(
            fn=lambda ctx: np.zeros_like(ctx.y), depends_on_y=False, name="zero"
        )
    if isinstance(cfg, ConstantDriver):
        value = np.asarray(cfg.value, dtype=np.float64)
        return gens.IntegralDriver(
            fn=lambda ctx: np.tile(value, (ctx.y.shape[0], 1)),
            depends_on_y=False,
            name="constant",
        )
    if isinstance(cfg, LinearYDriver):
        return gens.IntegralDriver(
            fn=lambda ctx: cfg.a * ctx.y + cfg.b, depends_on_y=True, name="linear_y"
        )
    if isinstance(cfg, LinearZDriver):
        return gens.IntegralDriver(
            fn=lambda ctx: cfg.c * ctx.z.sum(axis=2),
            depends_on_y=False,
            needs_zu=True,
            name="linear_z",
        )
    if isinstance(cfg, ScaledMartingaleDriver):
        return gens.FunctionalF(
            fn=lambda y, m: m * cfg.c, depends_on_y=False, name="scaled_m"
        )
    if isinstance(cfg, MeanFieldMeanDriver):
        def mf_mean(ctx):
            return cfg.c * np.tile(ctx.law_y.mean(), (ctx.y.shape[0], 1))

        return gens.IntegralDriver(
            fn=mf_mean, depends_on_y=True, needs_laws=frozenset({"y"}), name="meanfield_mean"
        )
    if isinstance(cfg, MeanFieldW2Driver):
        from .laws import DiscreteLaw, wasserstein2

        def mf_w2(ctx):
            dist = wasserstein2(ctx.law_y, DiscreteLaw.dirac(np.zeros(ctx.law_y.dim)))
            return np.full_like(ctx.y, cfg.c * dist)

        return gens.IntegralDriver(
            fn=mf_w2, depends_on_y=True, needs_laws=frozenset({"y"}), name="meanfield_w2"
        )
    if isinstance(cfg, QuadraticMeanFieldDriver):
        f1 = None
        if cfg.f1_scale != 0.0:
            f1 = lambda z: cfg.f1_scale * z.sum(axis=2)  # noqa: E731
        return gens.quadratic_meanfield(cfg.alpha, cfg.beta, f1)
    if isinstance(cfg, DelayedResonantDriver):
        lag = cfg.delay_steps

        def resonant(ctx):
            if ctx.level < lag:
                return np.zeros_like(ctx.y)
            z_past = ctx.z_at(ctx.level - lag)[:, :, 0]
            arrival = ctx.model.dw_to[ctx.level][:, :1]
            return cfg.c * z_past * arrival / ctx.dt

        return gens.IntegralDriver(
            fn=resonant, depends_on_y=False, needs_zu=True, name="delayed_z_resonant"
        )
    if isinstance(cfg, DelayedConvolutionDriver):
        def kernel(ctx):
            return cfg.c * ctx.z.sum(axis=2)

        return gens.DelayedConvolution(
            kernel=kernel, nu_atoms=tuple((r, w) for r, w in cfg.nu_atoms)
        )
    if isinstance(cfg, AnticipatingMeanDriver):
        steps = cfg.lookahead_steps

        def anticipating(ctx):
            target = min(ctx.level + steps, ctx.space.levels - 1)
            return cfg.c * ctx.y_at(target)

        return gens.IntegralDriver(fn=anticipating, depends_on_y=True, name="anticipating_y")
    raise ValueError(f"unhandled driver config {type(cfg).__name__}")
