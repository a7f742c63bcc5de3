from fractions import Fraction

import numpy as np
import pytest

from relukit import deep
from relukit._base import PreconditionError
from relukit.dynamics import GDConfig
from relukit.shallow import ShallowArch, ShallowParams, grad_exact, risk_exact


UNIT = (Fraction(0), Fraction(1))


@pytest.fixture
def random_deep(rng):
    """Factory for deep parameters with small random rational entries"""

    def make(layers, exact=True, denominator=8, spread=12):
        arch = deep.DeepArch(layers, UNIT)
        numerators = rng.integers(-spread, spread + 1, size=arch.param_count)
        theta = [Fraction(int(n), denominator) for n in numerators]
        if not exact:
            theta = [float(t) + rng.uniform(-1e-3, 1e-3) for t in theta]
        return deep.DeepParams(arch, theta)

    return make


def finite_differences(risk, theta, step=1e-6):
    theta = np.asarray(theta, dtype=float)
    result = np.zeros_like(theta)
    for k in range(len(theta)):
        up, down = theta.copy(), theta.copy()
        up[k] += step
        down[k] -= step
        result[k] = (risk(up) - risk(down)) / (2 * step)
    return result


class TestDeepArch:
    @pytest.mark.parametrize(
        "layers,count",
        [
            ((5, 8, 6, 7, 3), 175),
            ((1, 1, 1), 4),
            ((1, 5, 1), 16),
            ((2, 3, 1), 13),
        ],
    )
    def test_param_count(self, layers, count):
        assert deep.DeepArch(layers).param_count == count

    @pytest.mark.parametrize("width", [1, 2, 7])
    def test_shallow_count(self, width):
        arch = deep.DeepArch((1, width, 1))
        assert arch.is_shallow
        assert arch.param_count == arch.to_shallow().param_count == 3 * width + 1

    def test_offset(self):
        arch = deep.DeepArch((5, 8, 6, 7, 3))
        assert arch.offset(1) == 0
        assert arch.offset(3) == 102
        assert arch.depth == 4
        assert arch.min_width == 6

    @pytest.mark.parametrize("layers", [(1,), (1, 0, 1), (2, -1)])
    def test_invalid_layers(self, layers):
        with pytest.raises(PreconditionError):
            deep.DeepArch(layers)

    def test_not_shallow(self):
        with pytest.raises(PreconditionError):
            deep.DeepArch((1, 2, 2, 1)).to_shallow()


class TestPacking:
    def test_pack_layout(self):
        arch = deep.DeepArch((2, 3, 1))
        theta = deep.deep_pack(
            arch,
            [[[1, 2], [3, 4], [5, 6]], [[7, 8, 9]]],
            [[10, 11, 12], [13]],
        )
        assert theta.theta == tuple(range(1, 14))
        weights, bias = deep.deep_unpack(theta, 1)
        assert weights == [[1, 2], [3, 4], [5, 6]]
        assert bias == [10, 11, 12]

    def test_round_trip(self, random_deep):
        theta = random_deep((3, 4, 2, 2))
        weights, biases = zip(*(deep.deep_unpack(theta, k) for k in (1, 2, 3)))
        assert deep.deep_pack(theta.arch, weights, biases).theta == theta.theta

    def test_shallow_layout(self):
        arch = deep.DeepArch((1, 2, 1))
        theta = deep.DeepParams(arch, [1, 2, 3, 4, 5, 6, 7])
        shallow = theta.as_shallow()
        assert shallow.w == (1, 2)
        assert shallow.b == (3, 4)
        assert shallow.v == (5, 6)
        assert shallow.c == 7

    def test_layer_out_of_range(self, random_deep):
        theta = random_deep((1, 2, 1))
        for k in (0, 3):
            with pytest.raises(PreconditionError):
                deep.deep_unpack(theta, k)

    def test_wrong_length(self):
        with pytest.raises(PreconditionError):
            deep.DeepParams(deep.DeepArch((1, 2, 1)), [0] * 6)

    def test_pack_wrong_shape(self):
        with pytest.raises(PreconditionError):
            deep.deep_pack(deep.DeepArch((1, 2, 1)), [[[1]], [[1, 1]]], [[0, 0], [0]])


class TestForward:
    def test_zero(self):
        arch = deep.DeepArch((3, 4, 2))
        theta = deep.DeepParams(arch, [0] * arch.param_count)
        np.testing.assert_array_equal(forward_grid(theta, 3), 0)

    def test_relu(self):
        theta = deep.DeepParams(deep.DeepArch((1, 1, 1)), [1, 0, 1, 0])
        output = deep.forward(theta, [[-1.0], [0.5], [2.0]])
        np.testing.assert_allclose(output[:, 0], [0.0, 0.5, 2.0])

    def test_nested_relu(self):
        theta = deep.DeepParams(
            deep.DeepArch((1, 1, 1, 1)), [1, 0, 1, -0.5, 1, 0]
        )
        xs = np.linspace(-1, 2, 13)
        output = deep.forward(theta, xs[:, None])[:, 0]
        np.testing.assert_allclose(output, np.maximum(np.maximum(xs, 0) - 0.5, 0))

    def test_single_input(self):
        theta = deep.DeepParams(deep.DeepArch((1, 1, 1)), [1, 0, 1, 0])
        assert deep.forward(theta, [0.25]).shape == (1,)

    def test_dimension_mismatch(self, random_deep):
        with pytest.raises(PreconditionError):
            deep.forward(random_deep((2, 3, 1)), [[0.0, 1.0, 2.0]])

    def test_smoothed_converges(self, random_deep):
        theta = random_deep((1, 3, 2, 1), exact=False)
        xs = np.linspace(0, 1, 41)[:, None]
        exact = deep.forward(theta, xs)
        smoothed = deep.forward_smoothed(theta, xs, 1e8)
        np.testing.assert_allclose(smoothed, exact, atol=1e-2)

    def test_smoothed_rejects_small_r(self, random_deep):
        with pytest.raises(PreconditionError):
            deep.forward_smoothed(random_deep((1, 2, 1)), [0.5], 0.5)


def forward_grid(theta, dim):
    grid = np.random.default_rng(0).uniform(-2, 2, size=(20, dim))
    return deep.forward(theta, grid)


class TestBackprop:
    def test_matches_shallow_formula(self, random_deep):
        theta = random_deep((1, 3, 1), exact=False)
        w, b, v, c = (np.array(part, dtype=float) for part in theta.as_shallow().unpack())
        for x, y in [(0.1, 0.3), (0.6, -1.0), (0.95, 2.0)]:
            active = (w * x + b > 0).astype(float)
            value = c + v @ np.maximum(w * x + b, 0)
            expected = 2 * (value - y) * np.concatenate(
                [v * active * x, v * active, np.maximum(w * x + b, 0), [1.0]]
            )
            np.testing.assert_allclose(
                deep.grad_backprop_left(theta, [x], [y]), expected, atol=1e-12
            )

    def test_formula_matches_backprop(self, random_deep, abs_problem):
        theta = random_deep((1, 3, 2, 1), exact=False)
        problem = deep.CallableProblem.from_problem(abs_problem)
        rule = deep.QuadratureRule.gauss_legendre(problem.domain, 1, 40)
        np.testing.assert_allclose(
            deep.grad_formula(theta, problem, rule),
            deep.grad_backprop_average(theta, problem, rule),
            atol=1e-10,
        )

    def test_formula_two_dimensional(self, rng):
        arch = deep.DeepArch((2, 3, 2))
        theta = deep.DeepParams(arch, rng.uniform(-1, 1, size=arch.param_count))
        problem = deep.CallableProblem(
            lambda x: np.stack([x[:, 0] * x[:, 1], x[:, 0] - x[:, 1]], axis=1),
            lambda x: np.ones(len(x)),
            (0.0, 1.0),
            input_dim=2,
            output_dim=2,
        )
        rule = deep.QuadratureRule.gauss_legendre(problem.domain, 2, 8)
        np.testing.assert_allclose(
            deep.grad_formula(theta, problem, rule),
            deep.grad_backprop_average(theta, problem, rule),
            atol=1e-10,
        )


class TestQuadratureRule:
    @pytest.mark.parametrize("dim,volume", [(1, 1.0), (2, 1.0), (3, 1.0)])
    def test_weights(self, dim, volume):
        rule = deep.QuadratureRule.gauss_legendre((0.0, 1.0), dim, 4)
        assert len(rule) == 4 ** dim
        assert rule.nodes.shape == (4 ** dim, dim)
        assert rule.weights.sum() == pytest.approx(volume)

    @pytest.mark.raises(exception=PreconditionError)
    def test_too_many_dimensions(self):
        deep.QuadratureRule.gauss_legendre((0.0, 1.0), 4, 2)

    def test_risk_of_zero_network(self, abs_problem):
        arch = deep.DeepArch((1, 2, 1))
        theta = deep.DeepParams(arch, [0.0] * arch.param_count)
        problem = deep.CallableProblem.from_problem(abs_problem)
        rule = deep.QuadratureRule.cells([0.0, 0.5, 1.0], 4)
        assert deep.risk_quadrature(theta, problem, rule) == pytest.approx(1 / 12)


class TestExact1D:
    def test_propagate_matches_forward(self, random_deep):
        for layers in [(1, 3, 1), (1, 3, 2, 1), (1, 2, 2, 2)]:
            theta = random_deep(layers)
            outputs, decomposition = deep.propagate_pl(theta)
            xs = [Fraction(k, 16) for k in range(17)]
            values = deep.forward(theta, [[float(x)] for x in xs])
            for v, h in enumerate(outputs):
                np.testing.assert_allclose(
                    [float(h(x)) for x in xs], values[:, v], atol=1e-12
                )
            assert decomposition.breakpoints[0] == 0
            assert decomposition.breakpoints[-1] == 1
            assert len(decomposition.patterns) == len(decomposition)

    def test_patterns_match_midpoints(self, random_deep):
        theta = random_deep((1, 3, 2, 1))
        _, decomposition = deep.propagate_pl(theta)
        first, bias = theta.layer(1)
        for c, (left, right) in enumerate(decomposition.cells()):
            middle = (left + right) / 2
            assert decomposition.locate(middle) == c
            active = tuple(row[0] * middle + bi > 0 for row, bi in zip(first, bias))
            assert decomposition.patterns[c][0] == active

    def test_propagate_needs_scalar_input(self, random_deep):
        with pytest.raises(PreconditionError):
            deep.propagate_pl(random_deep((2, 2, 1)))

    def test_matches_shallow(self, random_deep, abs_problem):
        for _ in range(10):
            theta = random_deep((1, 3, 1))
            shallow = ShallowParams(ShallowArch(3, UNIT), theta.theta)
            assert deep.risk_deep_exact_1d(theta, abs_problem) == risk_exact(
                shallow, abs_problem
            )
            assert list(deep.grad_deep_exact_1d(theta, abs_problem)) == list(
                grad_exact(shallow, abs_problem)
            )

    def test_exact_gradient_is_rational(self, random_deep, abs_problem):
        gradient = deep.grad_deep_exact_1d(random_deep((1, 2, 2, 1)), abs_problem)
        assert gradient.dtype == object
        assert all(isinstance(g, (Fraction, int)) for g in gradient)

    def test_gradient_finite_differences(self, random_deep, abs_problem):
        theta = random_deep((1, 2, 2, 1), exact=False)
        arch = theta.arch
        problem = abs_problem.as_float()

        def risk(th):
            return deep.risk_deep_exact_1d(deep.DeepParams(arch, th), problem)

        np.testing.assert_allclose(
            deep.grad_deep_exact_1d(theta, problem),
            finite_differences(risk, theta.as_array()),
            atol=1e-5,
        )

    def test_cells_quadrature_agrees(self, random_deep, abs_problem):
        theta = random_deep((1, 3, 2, 1), exact=False)
        _, decomposition = deep.propagate_pl(theta)
        edges = {float(x) for x in decomposition.breakpoints} | {0.5}
        rule = deep.QuadratureRule.cells(edges, 6)
        problem = deep.CallableProblem.from_problem(abs_problem)
        np.testing.assert_allclose(
            deep.grad_backprop_average(theta, problem, rule),
            deep.grad_deep_exact_1d(theta, abs_problem.as_float()),
            atol=1e-9,
        )

    def test_multiple_outputs(self, abs_problem, identity_problem):
        arch = deep.DeepArch((1, 2, 2), UNIT)
        theta = deep.DeepParams(arch, [0] * arch.param_count)
        risk = deep.risk_deep_exact_1d(theta, [abs_problem, identity_problem])
        assert risk == Fraction(5, 12)
        with pytest.raises(PreconditionError):
            deep.risk_deep_exact_1d(theta, abs_problem)


class TestSmoothedDeep:
    def test_converges_to_risk(self, random_deep, abs_problem):
        theta = random_deep((1, 2, 2, 1), exact=False)
        reference = deep.risk_deep_exact_1d(theta, abs_problem.as_float())
        smoothed = deep.risk_smoothed_deep(theta, abs_problem, 1e8)
        assert smoothed == pytest.approx(reference, abs=1e-3)

    def test_gradient_finite_differences(self, random_deep, abs_problem):
        theta = random_deep((1, 2, 1, 1), exact=False)
        arch = theta.arch
        r = 10.0

        def risk(th):
            return deep.risk_smoothed_deep(deep.DeepParams(arch, th), abs_problem, r)

        np.testing.assert_allclose(
            deep.grad_smoothed_deep(theta, abs_problem, r),
            finite_differences(risk, theta.as_array(), step=1e-5),
            atol=1e-4,
        )

    def test_rejects_small_r(self, random_deep, abs_problem):
        with pytest.raises(PreconditionError):
            deep.risk_smoothed_deep(random_deep((1, 2, 1)), abs_problem, 0.0)


class TestObjective:
    def test_exact_objective(self, random_deep, abs_problem):
        theta = random_deep((1, 2, 2, 1))
        objective = deep.deep_objective(theta.arch, abs_problem)
        assert objective.dim == theta.arch.param_count
        assert objective.risk(np.array(theta.theta, dtype=object)) == (
            deep.risk_deep_exact_1d(theta, abs_problem)
        )
        assert objective.signature(theta.theta) == deep.propagate_pl(theta)[1].patterns

    def test_callable_needs_rule(self, abs_problem):
        problem = deep.CallableProblem.from_problem(abs_problem)
        with pytest.raises(PreconditionError):
            deep.deep_objective(deep.DeepArch((1, 2, 1)), problem)


class TestWidthScan:
    def test_abs_target(self, abs_problem):
        archs = [deep.DeepArch((1, width, 1), UNIT) for width in (1, 2, 4)]
        config = GDConfig(learning_rate=1e-2, steps=5, seed=3)
        rows = deep.width_scan(archs, abs_problem, 2, config)
        assert [row.min_width for row in rows] == [1, 2, 4]
        assert [row.seeds_used for row in rows] == [2, 2, 2]
        assert not rows[0].warm_start
        assert rows[0].best_risk > 0
        assert rows[1].best_risk == 0
        assert rows[2].best_risk == 0

    def test_warm_start_seeds_first_run(self, abs_problem):
        archs = [deep.DeepArch((1, width, 1), UNIT) for width in (1, 2)]
        rows = deep.width_scan(archs, abs_problem, 1, GDConfig(steps=0, seed=3))
        assert [row.warm_start for row in rows] == [False, True]
        assert rows[0].best_risk > 0
        assert rows[1].best_risk == 0

    def test_deep_architecture(self, abs_problem):
        rows = deep.width_scan(
            [deep.DeepArch((1, 2, 2, 1), UNIT)], abs_problem, 1, GDConfig(steps=3)
        )
        assert rows[0].layers == (1, 2, 2, 1)
        assert np.isfinite(rows[0].best_risk)

    def test_budget(self, abs_problem):
        with pytest.raises(PreconditionError):
            deep.width_scan([deep.DeepArch((1, 2, 1), UNIT)], abs_problem, 0, GDConfig())
