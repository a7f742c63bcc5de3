from fractions import Fraction

import numpy as np
import pytest
from scipy import integrate

from relukit import shallow
from relukit._base import InvalidInputError, PreconditionError
from relukit.pwfun import PiecewiseLinear, PiecewisePoly
from relukit.representability import synthesize
from relukit.shallow import Problem, ShallowArch, ShallowParams


HALF = Fraction(1, 2)


def params(*theta, domain=(0, 1)):
    width = (len(theta) - 1) // 3
    return ShallowParams(ShallowArch(width, domain), theta)


def random_polynomial_problem(rng, degree=4):
    target = PiecewisePoly.from_poly(
        [Fraction(int(c), 3) for c in rng.integers(-6, 7, size=degree + 1)], (0, 1)
    )
    density = PiecewisePoly.from_poly(
        [Fraction(int(k), 4) for k in rng.integers(0, 9, size=3)], (0, 1)
    )
    if density.integrate() == 0:
        density = PiecewisePoly.constant(Fraction(1), (0, 1))
    return Problem(target, density)


def simpson_risk(theta, problem, panels):
    x = np.linspace(0, 1, panels + 1)
    residual = shallow.evaluate(theta, x) - problem.target.evaluate_array(x)
    return integrate.simpson(residual ** 2 * problem.density.evaluate_array(x), x=x)


def assert_risk_matches_simpson(rng, random_rational_theta, instances, panels, atol):
    for _ in range(instances):
        theta = random_rational_theta(int(rng.integers(1, 9)))
        problem = random_polynomial_problem(rng)
        assert float(shallow.risk_exact(theta, problem)) == pytest.approx(
            simpson_risk(theta, problem, panels), rel=1e-8, abs=atol
        )


class TestShallowParams:
    @pytest.mark.parametrize("width,count", [(0, 1), (1, 4), (5, 16)])
    def test_param_count(self, width, count):
        assert ShallowArch(width).param_count == count

    def test_unpack(self):
        w, b, v, c = shallow.param_unpack(params(1, 0, 1, 0))
        assert (w, b, v, c) == ((1,), (0,), (1,), 0)

    def test_pack_unpack(self, rng):
        arch = ShallowArch(4)
        for _ in range(10):
            w, b, v = (tuple(rng.normal(size=4)) for _ in range(3))
            c = float(rng.normal())
            theta = shallow.param_pack(arch, w, b, v, c)
            assert shallow.param_unpack(theta) == (w, b, v, c)
            assert ShallowParams(arch, theta.theta) == theta

    def test_length_mismatch(self):
        with pytest.raises(PreconditionError):
            ShallowParams(ShallowArch(2), [0] * 6)
        with pytest.raises(PreconditionError):
            shallow.param_pack(ShallowArch(2), [1], [0, 0], [0, 0], 0)

    def test_kinks(self):
        theta = params(2, 0, -1, 1, 0, 0, 0)
        assert theta.kinks() == (HALF, float("inf"))


class TestRealize:
    def test_identity(self):
        h = shallow.realize(params(1, 0, 1, 0))
        assert h.Q == 0
        assert h == PiecewiseLinear.affine(1, 0, (0, 1))

    def test_hinge(self):
        h = shallow.realize(params(1, 1, 0, -HALF, 0, 2, 0))
        assert h.Q == 1
        assert h == PiecewiseLinear.from_knots([0, HALF, 1], [0, 0, 1])

    def test_constant(self):
        h = shallow.realize(params(1, -1, 2, 1, 0, 0, 3))
        assert h.Q == 0
        assert h == PiecewiseLinear.constant(3, (0, 1))

    def test_dead_neuron(self):
        h = shallow.realize(params(0, 0, 5, 1))
        assert h == PiecewiseLinear.constant(1, (0, 1))

    def test_breakpoint_bound(self, random_rational_theta):
        for width in (1, 2, 3, 5):
            for _ in range(200):
                theta = random_rational_theta(width)
                assert shallow.realize(theta).Q <= width

    def test_pointwise(self, random_rational_theta, rng):
        theta = random_rational_theta(4)
        h = shallow.realize(theta)
        for x in rng.uniform(0, 1, 1000):
            x = Fraction(x)
            assert h(x) == shallow.network_value(theta, x)

    def test_pointwise_float(self, rng):
        theta = params(*rng.normal(size=3 * 6 + 1))
        h = shallow.realize(theta)
        xs = rng.uniform(0, 1, 1000)
        np.testing.assert_allclose(
            h.evaluate_array(xs), shallow.evaluate(theta, xs), rtol=1e-12, atol=1e-12
        )

    def test_scaling_invariance(self, random_rational_theta):
        theta = random_rational_theta(3)
        for scale in (Fraction(1, 3), Fraction(7, 2)):
            w, b, v, c = theta.unpack()
            scaled = shallow.param_pack(
                theta.arch,
                [scale * x for x in w],
                [scale * x for x in b],
                [x / scale for x in v],
                c,
            )
            assert shallow.realize(scaled) == shallow.realize(theta)


class TestProblem:
    def test_default_density(self, abs_problem):
        assert abs_problem.mass() == 1
        assert abs_problem.target_lipschitz() == 1
        assert abs_problem.breakpoints == (0, HALF, 1)

    def test_negative_density(self):
        target = PiecewisePoly.constant(Fraction(0), (0, 1))
        density = PiecewisePoly.from_poly([HALF, -1], (0, 1))
        with pytest.raises(InvalidInputError):
            Problem(target, density)

    def test_discontinuous_target(self):
        with pytest.raises(InvalidInputError):
            Problem(PiecewisePoly([0, HALF, 1], [[0], [1]]))

    def test_domain_mismatch(self):
        with pytest.raises(InvalidInputError):
            Problem(
                PiecewisePoly.constant(Fraction(0), (0, 1)),
                PiecewisePoly.constant(Fraction(1), (0, 2)),
            )

    def test_dict(self, abs_problem):
        restored = Problem.from_dict(abs_problem.to_dict())
        assert restored.target == abs_problem.target
        assert restored.density == abs_problem.density

    def test_unit_interval_preserves_risk(self, random_rational_theta):
        target = PiecewisePoly(
            [1, 2, 3], [[-2, 1], [2, -1]], continuous=True
        )
        density = PiecewisePoly.from_poly([0, Fraction(1, 3)], (1, 3))
        problem = Problem(target, density)
        theta = random_rational_theta(2, domain=(1, 3))
        unit = shallow.to_unit_interval(theta)
        assert shallow.risk_exact(unit, problem.to_unit_interval()) == shallow.risk_exact(
            theta, problem
        )


class TestRisk:
    def test_zero_network(self, square_problem):
        assert shallow.risk_exact(params(0, 0, 0, 0), square_problem) == Fraction(1, 5)

    def test_identity_against_zero(self, zero_problem):
        assert shallow.risk_exact(params(1, 0, 1, 0), zero_problem) == Fraction(1, 3)

    def test_exact_fit(self, identity_problem):
        assert shallow.risk_exact(params(1, 0, 1, 0), identity_problem) == 0

    def test_nonnegative(self, abs_problem, random_rational_theta):
        for _ in range(50):
            assert shallow.risk_exact(random_rational_theta(3), abs_problem) >= 0

    def test_float_path(self, abs_problem, random_rational_theta):
        float_problem = abs_problem.as_float()
        for _ in range(20):
            theta = random_rational_theta(3)
            as_float = params(*[float(t) for t in theta])
            expected = float(shallow.risk_exact(theta, abs_problem))
            assert shallow.risk_exact(as_float, float_problem) == pytest.approx(
                expected, rel=1e-12, abs=1e-14
            )

    def test_against_simpson(self, rng, random_rational_theta):
        assert_risk_matches_simpson(rng, random_rational_theta, 10, 200000, atol=1e-8)

    @pytest.mark.slow
    def test_against_simpson_fine(self, rng, random_rational_theta):
        assert_risk_matches_simpson(rng, random_rational_theta, 100, 10 ** 6, atol=1e-10)


class TestGradient:
    def test_identity_against_zero(self, zero_problem):
        gradient = shallow.grad_exact(params(1, 0, 1, 0), zero_problem)
        assert list(gradient) == [Fraction(2, 3), 1, Fraction(2, 3), 1]

    def test_global_minimum(self, abs_problem):
        theta = synthesize(shallow.realize(params(1, 1, 0, -HALF, -1, 2, HALF)), 2)
        assert all(abs(w) + abs(b) > 0 for w, b in zip(theta.w, theta.b))
        assert shallow.risk_exact(theta, abs_problem) == 0
        assert all(g == 0 for g in shallow.grad_exact(theta, abs_problem))

    def test_float_matches_exact(self, abs_problem, random_rational_theta):
        theta = random_rational_theta(3)
        exact = np.array([float(g) for g in shallow.grad_exact(theta, abs_problem)])
        as_float = params(*[float(t) for t in theta])
        approx = shallow.grad_exact(as_float, abs_problem.as_float())
        np.testing.assert_allclose(approx, exact, rtol=1e-10, atol=1e-12)

    def test_finite_differences(self, abs_problem, rng):
        problem = abs_problem.as_float()
        step = 1e-6
        for _ in range(10):
            theta = rng.uniform(-2, 2, size=3 * 3 + 1)
            gradient = shallow.grad_exact(params(*theta), problem)
            estimate = np.empty_like(theta)
            for i in range(len(theta)):
                forward, backward = theta.copy(), theta.copy()
                forward[i] += step
                backward[i] -= step
                estimate[i] = (
                    shallow.risk_exact(params(*forward), problem)
                    - shallow.risk_exact(params(*backward), problem)
                ) / (2 * step)
            scale = max(1.0, np.abs(gradient).max())
            np.testing.assert_allclose(gradient, estimate, rtol=1e-4, atol=1e-5 * scale)


class TestSmoothing:
    def test_outside_blend_zone(self):
        relu = shallow.DEFAULT_SMOOTHING
        assert relu.value(0.04, 10) == 0
        assert relu.value(0.2, 10) == pytest.approx(0.2, abs=0)

    @pytest.mark.parametrize("r", [1, 3.5, 10, 1000])
    def test_bounds(self, r):
        relu = shallow.DEFAULT_SMOOTHING
        y = np.linspace(-1, 2, 30001) / r
        value = relu.value(y, r)
        assert np.all(value >= 0)
        assert np.all(value <= np.maximum(y, 0) + 1e-15)
        assert np.all(np.abs(relu.derivative(y, r)) <= 25 / 9 + 1e-12)

    def test_seams_are_c1(self):
        relu = shallow.DEFAULT_SMOOTHING
        lo, hi = relu.seams(4)
        assert relu.derivative(lo, 4) == pytest.approx(0, abs=1e-12)
        assert relu.derivative(hi, 4) == pytest.approx(1, abs=1e-12)
        assert relu.value(hi, 4) == pytest.approx(hi)

    def test_invalid_parameter(self, zero_problem):
        with pytest.raises(PreconditionError):
            shallow.DEFAULT_SMOOTHING.seams(0.5)
        with pytest.raises(PreconditionError):
            shallow.risk_smoothed(params(1, 0, 1, 0), zero_problem, 0.5)

    def test_agrees_with_relu_outside_blend(self, zero_problem):
        theta = params(1, 1, 1, 0)
        assert shallow.risk_smoothed(theta, zero_problem, 10) == pytest.approx(
            float(shallow.risk_exact(theta, zero_problem)), rel=1e-10
        )

    def test_gradient_converges(self, zero_problem):
        theta = params(1.0, 0.0, 1.0, 0.0)
        limit = shallow.grad_exact(params(1, 0, 1, 0), zero_problem).astype(float)
        distances = [
            np.linalg.norm(shallow.grad_smoothed(theta, zero_problem, r) - limit)
            for r in (10, 100, 1000, 10000)
        ]
        for before, after in zip(distances, distances[1:]):
            assert after <= before + 1e-10
        assert distances[-1] <= 1e-3

    def test_gradient_is_derivative_of_risk(self, abs_problem):
        theta = np.array([1.3, -0.7, -0.4, 0.5, 0.8, -1.1, 0.2])
        r, step = 20.0, 1e-6
        gradient = shallow.grad_smoothed(params(*theta), abs_problem, r)
        for i in range(len(theta)):
            forward, backward = theta.copy(), theta.copy()
            forward[i] += step
            backward[i] -= step
            estimate = (
                shallow.risk_smoothed(params(*forward), abs_problem, r)
                - shallow.risk_smoothed(params(*backward), abs_problem, r)
            ) / (2 * step)
            assert gradient[i] == pytest.approx(estimate, rel=1e-4, abs=1e-5)


class TestTransforms:
    def test_unit_interval_round_trip(self, random_rational_theta):
        theta = random_rational_theta(3, domain=(Fraction(1), Fraction(3)))
        unit = shallow.to_unit_interval(theta)
        h, g = shallow.realize(theta), shallow.realize(unit)
        for t in [Fraction(k, 10) for k in range(11)]:
            assert g(t) == h(1 + 2 * t)
        assert shallow.from_unit_interval(unit, theta.arch.domain) == theta

    def test_regularize(self):
        theta = shallow.regularize(params(0, 1, 0, 0, 5, 1, 0))
        assert theta.b == (-1, 0)
        assert shallow.realize(theta) == shallow.realize(params(0, 1, 0, 0, 5, 1, 0))

    def test_cell_signature(self, abs_problem):
        left = shallow.cell_signature(params(1, Fraction(-1, 4), 1, 0), abs_problem)
        right = shallow.cell_signature(params(1, Fraction(-3, 4), 1, 0), abs_problem)
        assert left != right
        assert left == shallow.cell_signature(params(2, Fraction(-1, 3), 1, 0), abs_problem)
