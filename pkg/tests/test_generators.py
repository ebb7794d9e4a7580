import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bsesolve.filtered_space import (
    AdaptedProcess,
    RandomVector,
    cond_expect,
    lp_norm,
    martingale_from_terminal,
)
from bsesolve.generators import (
    DelayedConvolution,
    FunctionalF,
    GeneratorContractError,
    IntegralDriver,
    NuSnapWarning,
    delayed_convolution_F,
    delayed_double_sum_F,
    estimate_lipschitz,
    evaluate_F,
    meanfield_driver,
    quadratic_meanfield,
)
from bsesolve.laws import DiscreteLaw, empirical_law, wasserstein2
from bsesolve.noise import build_brownian_tree

from conftest import make_space


@pytest.fixture
def model():
    return build_brownian_tree(1, 3, 1.0)


def random_pair(model, seed, d=1):
    rng = np.random.default_rng(seed)
    space = model.space
    y = AdaptedProcess(
        space, tuple(rng.standard_normal((space.n_nodes(k), d)) for k in range(space.levels))
    )
    v = RandomVector(space, space.levels - 1, rng.standard_normal((space.leaf_count, d)))
    _, mart = martingale_from_terminal(v)
    return y, mart


class TestLaws:
    def test_constant_vector_single_atom(self, model):
        x = RandomVector(model.space, 2, np.full((4, 2), 3.0))
        law = empirical_law(x)
        assert law.size == 1
        np.testing.assert_array_equal(law.atoms, [[3.0, 3.0]])
        assert law.weights[0] == pytest.approx(1.0, abs=1e-15)

    def test_symmetric_two_point(self):
        space = make_space([[[0.5, 0.5]]])
        law = empirical_law(RandomVector(space, 1, np.array([[1.0], [-1.0]])))
        assert law.size == 2
        np.testing.assert_allclose(law.weights, [0.5, 0.5])

    def test_duplicates_grouped_by_enumeration(self, model):
        vals = np.array([[1.0], [2.0], [1.0], [2.0], [1.0], [1.0], [3.0], [2.0]])
        x = RandomVector(model.space, 3, vals)
        law = empirical_law(x)
        probs = model.space.leaf_probabilities
        expected = {v: probs[vals[:, 0] == v].sum() for v in (1.0, 2.0, 3.0)}
        got = {a[0]: w for a, w in zip(law.atoms, law.weights)}
        for v, p in expected.items():
            assert got[v] == pytest.approx(p, abs=1e-15)

    def test_weight_validation(self):
        with pytest.raises(ValueError, match="positive"):
            DiscreteLaw(np.array([[0.0], [1.0]]), np.array([1.0, 0.0]))
        with pytest.raises(ValueError, match="sum"):
            DiscreteLaw(np.array([[0.0], [1.0]]), np.array([0.5, 0.6]))


class TestWasserstein:
    def test_identical_laws(self):
        law = DiscreteLaw(np.array([[0.0, 1.0], [2.0, -1.0]]), np.array([0.25, 0.75]))
        assert wasserstein2(law, law) == pytest.approx(0.0, abs=1e-12)

    def test_diracs(self):
        a = DiscreteLaw.dirac([1.0, 2.0])
        b = DiscreteLaw.dirac([4.0, 6.0])
        assert wasserstein2(a, b) == pytest.approx(5.0, rel=1e-12)

    def test_scalar_quantile_against_sorted_pairing(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            n = int(rng.integers(2, 7))
            a = rng.standard_normal((n, 1))
            b = rng.standard_normal((n, 1))
            u = np.full(n, 1.0 / n)
            got = wasserstein2(DiscreteLaw(a, u), DiscreteLaw(b, u))
            direct = math.sqrt(np.mean((np.sort(a[:, 0]) - np.sort(b[:, 0])) ** 2))
            assert got == pytest.approx(direct, abs=1e-12)

    def test_multidimensional_against_permutation_brute_force(self):
        rng = np.random.default_rng(1)
        for _ in range(25):
            n = int(rng.integers(2, 5))
            a = rng.standard_normal((n, 2))
            b = rng.standard_normal((n, 2))
            u = np.full(n, 1.0 / n)
            got = wasserstein2(DiscreteLaw(a, u), DiscreteLaw(b, u))
            cost = np.sum((a[:, None, :] - b[None, :, :]) ** 2, axis=2)
            best = min(
                cost[range(n), perm].sum() / n for perm in itertools.permutations(range(n))
            )
            assert got == pytest.approx(math.sqrt(best), abs=1e-10)

    def test_metric_properties(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            laws = []
            for _ in range(3):
                n = int(rng.integers(1, 5))
                w = rng.uniform(0.2, 1.0, n)
                laws.append(DiscreteLaw(rng.standard_normal((n, 2)), w / w.sum()))
            a, b, c = laws
            dab, dba = wasserstein2(a, b), wasserstein2(b, a)
            assert dab == pytest.approx(dba, abs=1e-10)
            assert dab <= wasserstein2(a, c) + wasserstein2(c, b) + 1e-10

    def test_zero_iff_same_multiset(self):
        a = DiscreteLaw(np.array([[0.0, 0.0], [1.0, 1.0]]), np.array([0.5, 0.5]))
        b = DiscreteLaw(np.array([[1.0, 1.0], [0.0, 0.0]]), np.array([0.5, 0.5]))
        c = DiscreteLaw(np.array([[0.0, 0.0], [1.0, 1.0]]), np.array([0.4, 0.6]))
        assert wasserstein2(a, b) == pytest.approx(0.0, abs=1e-12)
        assert wasserstein2(a, c) > 1e-3

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="dimension"):
            wasserstein2(DiscreteLaw.dirac([0.0]), DiscreteLaw.dirac([0.0, 1.0]))

    def test_atom_limit(self):
        rng = np.random.default_rng(3)
        big = DiscreteLaw(rng.standard_normal((70, 2)), np.full(70, 1.0 / 70))
        with pytest.raises(ValueError, match="limit"):
            wasserstein2(big, DiscreteLaw.dirac([0.0, 0.0]))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**16))
    def test_coupling_bound(self, seed):
        model = build_brownian_tree(1, 2, 1.0)
        rng = np.random.default_rng(seed)
        d = int(rng.integers(1, 3))
        x = RandomVector(model.space, 2, rng.standard_normal((4, d)))
        x2 = RandomVector(model.space, 2, rng.standard_normal((4, d)))
        w2 = wasserstein2(empirical_law(x), empirical_law(x2))
        assert w2 <= lp_norm(x - x2, 2.0) + 1e-10


class TestEvaluateF:
    def test_zero_driver(self, model):
        y, mart = random_pair(model, 0)
        gen = IntegralDriver(fn=lambda ctx: np.zeros_like(ctx.y), depends_on_y=False)
        f = evaluate_F(gen, y, mart)
        assert all(float(np.max(np.abs(v))) == 0.0 for v in f.values)

    def test_constant_driver_accumulates_time(self, model):
        y, mart = random_pair(model, 1)
        gen = IntegralDriver(fn=lambda ctx: np.full_like(ctx.y, 2.0), depends_on_y=False)
        f = evaluate_F(gen, y, mart)
        for k in range(model.space.levels):
            t_k = model.space.grid.times[k]
            np.testing.assert_allclose(f.at(k), 2.0 * t_k, atol=1e-15)

    def test_identity_driver_matches_hand_sums(self):
        model = build_brownian_tree(1, 2, 1.0)
        space = model.space
        y_vals = (np.array([[3.0]]), np.array([[1.0], [5.0]]), np.array([[0.0], [2.0], [4.0], [6.0]]))
        y = AdaptedProcess(space, y_vals)
        _, mart = martingale_from_terminal(RandomVector(space, 2, np.zeros((4, 1))))
        gen = IntegralDriver(fn=lambda ctx: ctx.y)
        f = evaluate_F(gen, y, mart)
        dt = 0.5
        np.testing.assert_allclose(f.at(0), [[0.0]])
        np.testing.assert_allclose(f.at(1), 3.0 * dt * np.ones((2, 1)))
        expected_2 = np.repeat(3.0 * dt + y_vals[1] * dt, 2, axis=0)
        np.testing.assert_allclose(f.at(2), expected_2, atol=1e-15)

    def test_riemann_refinement_for_constant_driver(self):
        gen = IntegralDriver(fn=lambda ctx: np.full_like(ctx.y, 1.5), depends_on_y=False)
        totals = []
        for steps in (2, 4):
            model = build_brownian_tree(1, steps, 1.0)
            y, mart = random_pair(model, 2)
            totals.append(float(evaluate_F(gen, y, mart).at(-1)[0, 0]))
        assert totals[0] == pytest.approx(totals[1], abs=1e-15)
        assert totals[0] == pytest.approx(1.5, abs=1e-15)

    def test_functional_form_f0_enforced(self, model):
        y, mart = random_pair(model, 3)
        bad = FunctionalF(fn=lambda yy, mm: AdaptedProcess(
            yy.space, tuple(np.ones((yy.space.n_nodes(k), 1)) for k in range(yy.space.levels))
        ))
        with pytest.raises(GeneratorContractError, match="F_0"):
            evaluate_F(bad, y, mart)

    def test_driver_shape_enforced(self, model):
        y, mart = random_pair(model, 4)
        bad = IntegralDriver(fn=lambda ctx: np.zeros((1, 1)))
        with pytest.raises(GeneratorContractError, match="shape"):
            evaluate_F(bad, y, mart)

    def test_zu_driver_requires_model(self, model):
        y, mart = random_pair(model, 5)
        gen = IntegralDriver(fn=lambda ctx: ctx.z.sum(axis=2), depends_on_y=False, needs_zu=True)
        with pytest.raises(GeneratorContractError, match="noise model"):
            evaluate_F(gen, y, mart)
        evaluate_F(gen, y, mart, model)

    def test_anticipating_read_is_conditional(self, model):
        y, mart = random_pair(model, 6)
        top = model.space.levels - 1
        gen = IntegralDriver(fn=lambda ctx: ctx.y_at(top))
        f = evaluate_F(gen, y, mart)
        # manual: increments are E_k[Y_top] * dt, lifted forward
        expected = np.zeros((1, 1))
        for k in range(model.space.levels - 1):
            cond = cond_expect(RandomVector(model.space, top, y.at(top)), k).values
            expected = np.repeat(expected + cond * model.space.grid.dt(k), 2, axis=0)
        np.testing.assert_allclose(f.at(top), expected, atol=1e-14)

    def test_past_read_is_lift(self, model):
        y, mart = random_pair(model, 7)
        seen = {}

        def probe(ctx):
            if ctx.level == 2:
                seen["y0_lifted"] = ctx.y_at(0)
            return np.zeros_like(ctx.y)

        evaluate_F(IntegralDriver(fn=probe), y, mart)
        np.testing.assert_allclose(seen["y0_lifted"], np.repeat(y.at(0), 4, axis=0))


class TestDelayedConvolution:
    @staticmethod
    def kernel(ctx):
        return ctx.z.sum(axis=2)

    def test_point_mass_at_zero_is_plain_driver(self, model):
        _, mart = random_pair(model, 8)
        f_conv = delayed_convolution_F(self.kernel, [(0.0, 1.0)], mart, model)
        plain = IntegralDriver(fn=self.kernel, depends_on_y=False, needs_zu=True)
        f_plain = evaluate_F(plain, AdaptedProcess.zero(model.space, 1), mart, model)
        for a, b in zip(f_conv.values, f_plain.values):
            np.testing.assert_allclose(a, b, atol=1e-15)

    def test_zero_measure(self, model):
        _, mart = random_pair(model, 9)
        f = delayed_convolution_F(self.kernel, [], mart, model)
        assert all(float(np.max(np.abs(v), initial=0.0)) == 0.0 for v in f.values)

    def test_reduced_form_equals_double_sum_at_horizon(self):
        # the change-of-variable identity equates the full time integrals;
        # intermediate accumulation paths are allowed to differ
        model = build_brownian_tree(1, 3, 1.0)
        _, mart = random_pair(model, 10)
        dt = model.space.grid.dt(0)
        for atoms in ([(dt, 0.7), (0.0, 0.2)], [(2 * dt, 1.0)], [(dt, 0.5)]):
            f_reduced = delayed_convolution_F(self.kernel, atoms, mart, model)
            f_direct = delayed_double_sum_F(self.kernel, atoms, mart, model)
            np.testing.assert_allclose(f_reduced.at(-1), f_direct.at(-1), atol=1e-15)
            assert float(np.max(np.abs(f_reduced.at(0)))) == 0.0
            assert float(np.max(np.abs(f_direct.at(0)))) == 0.0

    def test_off_grid_atom_snaps_with_warning(self, model):
        _, mart = random_pair(model, 11)
        with pytest.warns(NuSnapWarning):
            delayed_convolution_F(self.kernel, [(0.3, 1.0)], mart, model)

    def test_atom_outside_horizon_rejected(self, model):
        with pytest.raises(ValueError, match="outside"):
            DelayedConvolution(kernel=self.kernel, nu_atoms=((2.0, 1.0),)).snapped_atoms(
                model.space
            )


class TestMeanField:
    def test_mean_driver_equals_conditional_expectation_route(self, model):
        y, mart = random_pair(model, 12)

        def f_mean(ctx):
            return np.tile(ctx.law_y.mean(), (ctx.y.shape[0], 1))

        f = meanfield_driver(f_mean, y, mart)
        # oracle: E[Y_tk] from exact conditioning, accumulated by hand
        acc = np.zeros((1, 1))
        for k in range(model.space.levels - 1):
            mean_k = cond_expect(RandomVector(model.space, k, y.at(k)), 0).values
            acc = acc + mean_k * model.space.grid.dt(k)
            np.testing.assert_allclose(f.at(k + 1)[:1], acc, atol=1e-14)

    def test_w2_to_dirac_matches_l2_norm_for_centered_two_point(self):
        model = build_brownian_tree(1, 2, 1.0)
        space = model.space
        # Y_t = W_t: symmetric two-point marginals at every level
        y = AdaptedProcess(space, tuple(model.w_path[k][:, :1] for k in range(space.levels)))
        _, mart = random_pair(model, 13)

        def f_w2(ctx):
            dist = wasserstein2(ctx.law_y, DiscreteLaw.dirac(np.zeros(1)))
            expected = lp_norm(RandomVector(ctx.space, ctx.level, ctx.y), 2.0)
            assert dist == pytest.approx(expected, abs=1e-12)
            return np.full_like(ctx.y, dist)

        meanfield_driver(f_w2, y, mart)

    def test_no_law_dependence_degenerates_to_plain(self, model):
        y, mart = random_pair(model, 14)
        f_plain = evaluate_F(IntegralDriver(fn=lambda ctx: ctx.y), y, mart)
        f_mf = meanfield_driver(lambda ctx: ctx.y, y, mart)
        for a, b in zip(f_plain.values, f_mf.values):
            np.testing.assert_array_equal(a, b)


class TestQuadraticMeanField:
    def test_beta_zero_reduces_to_lipschitz_part(self, model):
        y, mart = random_pair(model, 15, d=1)
        gen = quadratic_meanfield([0.3], [0.0], f1=lambda z: 0.5 * z.sum(axis=2))
        f = evaluate_F(gen, y, mart, model)
        base = IntegralDriver(
            fn=lambda ctx: 0.5 * ctx.z.sum(axis=2) + 0.3, depends_on_y=False, needs_zu=True
        )
        f_base = evaluate_F(base, y, mart, model)
        for a, b in zip(f.values, f_base.values):
            np.testing.assert_allclose(a, b, atol=1e-14)

    def test_deterministic_coefficient_value(self):
        # M = 2 W gives Z identically 2 at every node: law is a point mass
        model = build_brownian_tree(1, 2, 1.0)
        top = model.space.levels - 1
        v = RandomVector(model.space, top, -2.0 * model.w_path[top][:, :1])
        _, mart = martingale_from_terminal(v)
        alpha, beta = np.array([0.1]), np.array([0.25])
        gen = quadratic_meanfield(alpha, beta)
        f = evaluate_F(gen, AdaptedProcess.zero(model.space, 1), mart, model)
        z = 2.0
        rate = alpha[0] + z * abs(z) * beta[0]
        np.testing.assert_allclose(f.at(top), rate * 1.0, atol=1e-12)

    def test_two_point_law_weighted_by_hand(self):
        model = build_brownian_tree(1, 1, 1.0)
        # terminal v = -|W_1| has Z = +-? compute law by hand instead through dec
        v_vals = np.array([[1.0], [-3.0]])
        _, mart = martingale_from_terminal(RandomVector(model.space, 1, v_vals))
        from bsesolve.representation import represent

        dec = represent(mart, model)
        z_atoms = dec.z[0][0, 0, 0]
        gen = quadratic_meanfield([0.0], [1.0])
        f = evaluate_F(gen, AdaptedProcess.zero(model.space, 1), mart, model)
        # single node at level 0: law of Z is a point mass at z_atoms
        np.testing.assert_allclose(f.at(1), z_atoms * abs(z_atoms), atol=1e-12)

    def test_dimension_mismatch_rejected(self, model):
        y, mart = random_pair(model, 16, d=2)
        gen = quadratic_meanfield([0.1], [0.2])  # alpha length 1 but d = 2
        with pytest.raises(ValueError, match="alpha"):
            evaluate_F(gen, y, mart, model)


class TestEstimateLipschitz:
    def test_zero_generator(self, model):
        gen = IntegralDriver(fn=lambda ctx: np.zeros_like(ctx.y), depends_on_y=False)
        prof = estimate_lipschitz(gen, model.space, trials=10, seed=0)
        assert prof.constant == 0.0
        assert prof.empirical

    def test_scaled_y_functional(self, model):
        c = 0.7

        def scaled(y, m):
            vals = [np.zeros((y.space.n_nodes(0), y.dimension))]
            vals += [c * y.at(k) for k in range(1, y.space.levels)]
            return AdaptedProcess(y.space, tuple(vals))

        gen = FunctionalF(fn=scaled)
        prof = estimate_lipschitz(gen, model.space, trials=60, seed=1)
        assert prof.constant <= c + 1e-9
        assert prof.constant >= 0.5 * c

    def test_integral_driver_bounded_by_horizon(self, model):
        a = 0.8
        gen = IntegralDriver(fn=lambda ctx: a * ctx.y)
        prof = estimate_lipschitz(gen, model.space, trials=60, seed=2)
        assert prof.constant <= a * model.space.grid.horizon + 1e-9

    def test_iterate_depth_runs(self, model):
        gen = IntegralDriver(fn=lambda ctx: 0.2 * ctx.y)
        prof = estimate_lipschitz(gen, model.space, trials=12, seed=3, iterate_depth=2)
        assert prof.constant >= 0.0
