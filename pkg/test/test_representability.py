from fractions import Fraction

import pytest

from relukit import representability
from relukit._base import CapacityError, PreconditionError
from relukit.pwfun import PiecewiseLinear
from relukit.shallow import ShallowArch, ShallowParams, realize


HALF = Fraction(1, 2)


def from_slopes(slopes, domain=(Fraction(0), Fraction(1)), start=Fraction(0)):
    """Canonical function with the given slopes on equally spaced pieces"""

    lo, hi = domain
    count = len(slopes)
    q = [lo + (hi - lo) * Fraction(k, count) for k in range(count + 1)]
    y = [start]
    for k, slope in enumerate(slopes):
        y.append(y[-1] + slope * (q[k + 1] - q[k]))
    return PiecewiseLinear.from_knots(q, y)


class TestSlopeRelation:
    def test_relation_holds(self):
        certificate = representability.slope_relation_holds(from_slopes([0, 1]), 1)
        assert certificate.holds
        assert certificate.witness_indices == (1,)
        assert not certificate.advisory

    def test_relation_fails(self):
        f = from_slopes([1, 2])
        certificate = representability.slope_relation_holds(f, 1)
        assert not certificate.holds
        assert certificate.witness_indices is None
        assert list(representability.enumerate_witnesses(f, 1)) == []

    @pytest.mark.parametrize("slopes", [[1], [1, 2], [3, -1, 5]])
    def test_few_breakpoints_always_hold(self, slopes):
        f = from_slopes(slopes)
        certificate = representability.slope_relation_holds(f, f.Q + 1)
        assert certificate.holds
        assert certificate.witness_indices is None

    def test_too_many_breakpoints(self):
        certificate = representability.slope_relation_holds(from_slopes([0, 1, 0]), 1)
        assert not certificate.holds

    def test_negative_width(self):
        with pytest.raises(PreconditionError):
            representability.slope_relation_holds(from_slopes([1]), -1)

    def test_capacity(self):
        f = from_slopes([k % 3 for k in range(32)])
        assert f.Q == 31
        with pytest.raises(CapacityError):
            representability.slope_relation_holds(f, 31)

    def test_float_is_advisory(self):
        f = PiecewiseLinear.from_knots([0.0, 0.5, 1.0], [0.0, 0.0, 0.5])
        certificate = representability.slope_relation_holds(f, 1)
        assert certificate.holds
        assert certificate.advisory

    @pytest.mark.parametrize(
        "slopes,indices",
        [
            ([1, 2, 1], (1, 2, 3)),
            ([2, 5, 3, 7], (1, 2, 3)),
            ([0, 4], (1,)),
        ],
    )
    def test_witness_is_valid(self, slopes, indices):
        f = from_slopes(slopes)
        assert representability.alternating_sum(f, indices) == 0
        certificate = representability.slope_relation_holds(f, f.Q)
        assert certificate.holds
        witness = certificate.witness_indices
        assert len(witness) % 2 == 1
        assert list(witness) == sorted(set(witness))
        assert witness[-1] <= f.Q + 1
        assert representability.alternating_sum(f, witness) == 0
        assert indices in set(representability.enumerate_witnesses(f, f.Q))

    def test_subset_round_trip(self):
        for subset in [(), (1,), (2, 3), (1, 3, 4)]:
            indices = representability.indices_from_subset(subset, 4)
            assert len(indices) % 2 == 1
            assert representability.subset_from_indices(indices, 4) == subset

    def test_necessary_direction(self, random_rational_theta):
        for width in (1, 2, 3, 4):
            for _ in range(100):
                h = realize(random_rational_theta(width))
                assert representability.slope_relation_holds(h, width).holds

    def test_perturbation_breaks_relation(self, rng):
        for _ in range(50):
            slopes = [Fraction(int(s), 3) for s in rng.integers(-9, 10, size=3)]
            slopes[2] = slopes[1] - slopes[0]
            if len(set(slopes)) < 3 or slopes[0] == slopes[1] or slopes[1] == slopes[2]:
                continue
            f = from_slopes(slopes)
            assert representability.slope_relation_holds(f, 2).holds

            offset = Fraction(int(rng.integers(1, 50)), 97)
            perturbed = from_slopes(slopes[:2] + [slopes[2] + offset])
            if perturbed.Q < 2 or any(
                representability.alternating_sum(perturbed, indices) == 0
                for indices in [(1,), (2,), (3,), (1, 2, 3)]
            ):
                continue
            assert not representability.slope_relation_holds(perturbed, 2).holds


class TestSynthesize:
    def test_direct_construction(self):
        f = PiecewiseLinear.from_knots([0, HALF, 1], [0, 0, 1])
        theta = representability.synthesize(f, 2)
        assert theta.w == (1, 1)
        assert theta.b == (0, -HALF)
        assert theta.v == (0, 2)
        assert theta.c == 0
        assert realize(theta) == f

    def test_width_zero(self):
        f = PiecewiseLinear.constant(Fraction(3), (Fraction(0), Fraction(1)))
        theta = representability.synthesize(f, 0)
        assert theta.theta == (3,)

    def test_not_representable(self):
        assert representability.synthesize(from_slopes([1, 2]), 1) is None

    def test_general_domain(self):
        f = from_slopes([1, -2, 4], domain=(Fraction(-1), Fraction(2)), start=Fraction(5))
        theta = representability.synthesize(f, 3)
        assert theta.arch.domain == f.domain
        assert realize(theta) == f

    @pytest.mark.parametrize(
        "slopes",
        [[1, 2, 1], [2, 5, 3, 7], [0, 4], [-3, -1, 2, 4, 1], [1, 3, 2, 0]],
    )
    def test_peel_off(self, slopes):
        f = from_slopes(slopes)
        assert representability.slope_relation_holds(f, f.Q).holds
        theta = representability.synthesize(f, f.Q)
        assert theta is not None
        assert realize(theta) == f

    def test_sufficient_direction(self, random_rational_theta):
        for width in (1, 2, 3, 4):
            for _ in range(50):
                f = realize(random_rational_theta(width))
                theta = representability.synthesize(f, width)
                assert theta is not None
                assert realize(theta) == f

    def test_monotone_in_width(self, random_rational_theta):
        for _ in range(20):
            f = realize(random_rational_theta(2))
            for width in (2, 3, 4):
                theta = representability.synthesize(f, width)
                assert theta.arch == ShallowArch(width, f.domain)
                assert realize(theta) == f

    def test_unused_neurons_are_zero(self):
        f = PiecewiseLinear.affine(2, 1, (Fraction(0), Fraction(1)))
        theta = representability.synthesize(f, 3)
        assert isinstance(theta, ShallowParams)
        assert theta.w[1:] == (0, 0)
        assert theta.v[1:] == (0, 0)
