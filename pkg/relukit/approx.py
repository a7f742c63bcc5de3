"""Structure-preserving approximation of shallow network realizations

Every operator maps a piecewise linear g to an h with |h - f| <= |g - f|
pointwise, no more breakpoints than g and a controlled Lipschitz constant.

The slope adjustment normalizes to 0 < Lip(f) <= a < A_i(g) by a sign flip
(f, g, a -> -f, -g, -a) and, where a case needs an orientation, by the
reflection x -> a + b - x with f, g -> -f(a + b - .), -g(a + b - .), which
keeps all slopes and maps piece i to piece Q + 2 - i.
"""

import logging
from dataclasses import dataclass
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np

from ._base import PreconditionError, Scalar, div, float_tolerance, sign
from .pwfun import PiecewiseLinear, PiecewisePoly, Poly
from .representability import alternating_sum, slope_relation_holds, synthesize
from .shallow import Problem, ShallowParams, function_risk, realize


logger = logging.getLogger(__name__)

FLOAT_CROSSING_RTOL = 1e-12
FLOAT_SLOPE_RTOL = 1e-9
SIGN_GRID_POINTS = 2 ** 8
_BISECTION_STEPS = 200


@dataclass(frozen=True)
class AdjustOutcome:
    """Result of one slope adjustment

    `case` names the construction that produced `h` (e.g. "case3.V").
    """

    h: PiecewiseLinear
    q_dropped: bool
    risk_before: Scalar
    risk_after: Scalar
    case: str = "unchanged"


Line = Tuple[Scalar, Scalar]


def _line(x0: Scalar, y0: Scalar, slope: Scalar) -> Line:
    return slope, y0 - slope * x0


def _at(line: Line, x: Scalar) -> Scalar:
    return line[0] * x + line[1]


def _meet(first: Line, second: Line) -> Scalar:
    if first[0] == second[0]:
        raise RuntimeError(f"parallel lines {first!r} and {second!r} do not meet")
    return div(second[1] - first[1], first[0] - second[0])


def _splice(g: PiecewiseLinear, left: Scalar, right: Scalar, inner) -> PiecewiseLinear:
    """g outside [left, right], the polyline through `inner` on it"""

    before = [(x, y) for x, y in zip(g.q, g.knot_values) if x < left]
    after = [(x, y) for x, y in zip(g.q, g.knot_values) if x > right]
    knots = before + list(inner) + after
    return PiecewiseLinear.from_knots([k[0] for k in knots], [k[1] for k in knots])


def _mirror(g: PiecewiseLinear) -> PiecewiseLinear:
    return -g.reflect()


def _knot(g: PiecewiseLinear, k: int) -> Tuple[Scalar, Scalar]:
    return g.q[k], g.knot_values[k]


def _first_root_float(poly: Poly, lo: float, hi: float) -> Optional[float]:
    """First sign change of poly on [lo, hi] from a sign grid plus bisection"""

    grid = np.linspace(float(lo), float(hi), SIGN_GRID_POINTS + 1)
    values = np.polynomial.polynomial.polyval(grid, [float(c) for c in poly.coeffs])
    for k in range(SIGN_GRID_POINTS):
        if values[k] == 0 and k > 0:
            return float(grid[k])
        if values[k] < 0 < values[k + 1] or values[k] > 0 > values[k + 1]:
            left, right = float(grid[k]), float(grid[k + 1])
            s_left = np.sign(values[k])
            for _ in range(_BISECTION_STEPS):
                middle = (left + right) / 2
                if middle in (left, right):
                    break
                if np.sign(poly(middle)) == s_left:
                    left = middle
                else:
                    right = middle
            return (left + right) / 2
    return None


def _intersection(
    g: PiecewiseLinear, f: PiecewisePoly, i: int, exact: bool
) -> Optional[Scalar]:
    """Point z in (q_{i-1}, q_i) with g(z) = f(z), given g - f crosses there"""

    left, right = g.q[i - 1], g.q[i]
    line = Poly((g.B[i - 1], g.A[i - 1]))
    for lo, hi, piece in f.intervals():
        lo, hi = max(lo, left), min(hi, right)
        if not lo < hi:
            continue
        difference = line - piece
        if lo > left and difference(lo) == 0:
            return lo
        if exact:
            roots = difference.roots_in(lo, hi)
            if roots:
                return roots[0]
        else:
            root = _first_root_float(difference, lo, hi)
            if root is not None and lo < root < hi:
                return root
    return None


def _case1(g: PiecewiseLinear, i: int, a: Scalar) -> Tuple[PiecewiseLinear, str]:
    """f <= g on piece i without crossing: lower the slope from q_{i-1}"""

    Q = g.Q
    x0, y0 = _knot(g, i - 1)
    lowered = _line(x0, y0, a)

    if i == Q + 1:
        hi = g.q[-1]
        return _splice(g, x0, hi, [(x0, y0), (hi, _at(lowered, hi))]), "case1.I"

    x2, y2 = _knot(g, i + 1)
    chord = div(y2 - y0, x2 - x0)
    following = _line(x2, y2, g.slope(i + 1))

    if chord < a:
        z = _meet(lowered, following)
        return _splice(g, x0, x2, [(x0, y0), (z, _at(lowered, z)), (x2, y2)]), "case1.IV"
    if g.slope(i + 1) > g.slope(i):
        u = _meet(lowered, following)
        return _splice(g, x0, x2, [(x0, y0), (u, _at(lowered, u)), (x2, y2)]), "case1.II"
    return _splice(g, x0, x2, [(x0, y0), (x2, y2)]), "case1.III"


def _case2(
    g: PiecewiseLinear, a: Scalar, z: Scalar
) -> Tuple[PiecewiseLinear, str]:
    """Crossing at z on the first piece"""

    lo, hi = g.domain
    zv = g(z)
    through = _line(z, zv, a)

    if g.Q == 0:
        return _splice(g, lo, hi, [(lo, _at(through, lo)), (hi, _at(through, hi))]), "case2.I"

    x2, y2 = _knot(g, 2)
    chord = div(y2 - zv, x2 - z)
    second = _line(*_knot(g, 1), g.slope(2))

    if chord < a or g.slope(2) > g.slope(1):
        u = _meet(through, second)
        label = "case2.IV" if chord < a else "case2.III"
        return (
            _splice(g, lo, x2, [(lo, _at(through, lo)), (u, _at(through, u)), (x2, y2)]),
            label,
        )

    secant = _line(z, zv, chord)
    return _splice(g, lo, x2, [(lo, _at(secant, lo)), (x2, y2)]), "case2.II"


def _case3(
    g: PiecewiseLinear, i: int, a: Scalar, z: Scalar
) -> Tuple[PiecewiseLinear, str]:
    """Crossing at z on an interior piece"""

    lo, hi = g.domain
    zv = g(z)
    A_left, A_mid, A_right = g.slope(i - 1), g.slope(i), g.slope(i + 1)
    xl2, yl2 = _knot(g, i - 2)
    xl1, yl1 = _knot(g, i - 1)
    xr1, yr1 = _knot(g, i)
    xr2, yr2 = _knot(g, i + 1)
    c_right = div(yr2 - zv, xr2 - z)
    c_left = div(zv - yl2, z - xl2)
    through = _line(z, zv, a)
    previous = _line(xl1, yl1, A_left)
    following = _line(xr1, yr1, A_right)

    def mirrored():
        h, label = _case3(_mirror(g), g.Q + 2 - i, a, lo + hi - z)
        return _mirror(h), label

    if A_mid < A_left and A_mid < A_right:
        u = _meet(previous, through)
        v = _meet(through, following)
        inner = [(xl1, yl1), (u, _at(through, u)), (v, _at(through, v)), (xr1, yr1)]
        return _splice(g, xl1, xr1, inner), "case3.I"

    if A_mid > A_left and A_mid > A_right:
        if max(c_right, c_left) < a:
            u = _meet(through, previous)
            v = _meet(through, following)
            inner = [(xl2, yl2), (u, _at(through, u)), (v, _at(through, v)), (xr2, yr2)]
            return _splice(g, xl2, xr2, inner), "case3.II"

        if c_right < c_left:
            return mirrored()
        secant = _line(z, zv, c_right)
        u = xl2 if c_right == A_left else _meet(secant, previous)
        inner = [(xl2, yl2), (u, _at(secant, u)), (xr2, yr2)]
        return _splice(g, xl2, xr2, inner), "case3.III"

    if not A_left < A_mid < A_right:
        return mirrored()

    if min(c_right, c_left) >= a:
        secant = _line(xl2, yl2, c_left)
        u = _meet(secant, following)
        inner = [(xl2, yl2), (u, _at(secant, u)), (xr1, yr1)]
        return _splice(g, xl2, xr1, inner), "case3.IV"

    u = _meet(through, previous)
    v = _meet(through, following)
    inner = [(xl2, yl2), (u, _at(through, u)), (v, _at(through, v)), (xr1, yr1)]
    return _splice(g, xl2, xr1, inner), "case3.V"


def _adjust_increasing(
    g: PiecewiseLinear, f: PiecewisePoly, i: int, a: Scalar
) -> Tuple[PiecewiseLinear, str]:
    """Adjust slope i of g to a with 0 <= Lip(f) <= a < A_i(g)"""

    Q = g.Q
    lo, hi = g.domain
    exact = g.is_exact and f.is_exact
    left, right = g.q[i - 1], g.q[i]
    d_left = g(left) - f(left)
    d_right = g(right) - f(right)

    crossing = d_left < 0 < d_right
    z = None
    if crossing and not exact:
        tolerance = float_tolerance(FLOAT_CROSSING_RTOL, g(left), g(right))
        if min(-d_left, d_right) <= tolerance:
            logger.warning(
                "indeterminate crossing on piece %d (%r, %r), assuming none",
                i, d_left, d_right,
            )
            crossing = False
    if crossing:
        z = _intersection(g, f, i, exact)
        if z is None:
            logger.warning(
                "no intersection found on piece %d despite sign change, assuming none", i
            )
            crossing = False

    if not crossing:
        below = d_left >= 0 if exact else d_left >= -abs(d_right)
        if below:
            return _case1(g, i, a)
        h, label = _case1(_mirror(g), Q + 2 - i, a)
        return _mirror(h), label

    if i == 1:
        return _case2(g, a, z)
    if i == Q + 1:
        h, label = _case2(_mirror(g), a, lo + hi - z)
        return _mirror(h), label
    return _case3(g, i, a, z)


def adjust_slope(
    g: PiecewiseLinear, problem: Problem, i: int, a: Scalar
) -> AdjustOutcome:
    """Replace slope A_i(g) by a without increasing the risk

    Args:
        g: Canonical piecewise linear function on the problem domain.
        problem: Lipschitz-L target f and density p.
        i: 1-based piece index.
        a: New slope with L <= |a| <= |A_i(g)| and a * A_i(g) > 0
            (a = 0 is accepted when L = 0).

    Returns:
        The adjusted function; unless `q_dropped`, only slope i changed.

    Raises:
        PreconditionError: If i or a violate the bounds above.
    """

    if not 1 <= i <= g.Q + 1:
        raise PreconditionError(f"piece index {i} outside 1..{g.Q + 1}")

    lipschitz = problem.target_lipschitz()
    slope = g.slope(i)
    tolerance = 0 if g.is_exact and problem.is_exact else float_tolerance(
        FLOAT_SLOPE_RTOL, slope, lipschitz
    )
    same_sign = a * slope > 0 or (a == 0 and lipschitz == 0)
    if not (lipschitz - tolerance <= abs(a) <= abs(slope) + tolerance and same_sign):
        raise PreconditionError(
            f"slope {a!r} must satisfy Lip(f) = {lipschitz!r} <= |a| <= "
            f"|A_{i}| = {abs(slope)!r} with the sign of A_{i}"
        )

    risk_before = function_risk(g, problem)
    if a == slope:
        return AdjustOutcome(g, False, risk_before, risk_before)

    if slope < 0:
        h, label = _adjust_increasing(-g, -problem.target, i, -a)
        h = -h
    else:
        h, label = _adjust_increasing(g, problem.target, i, a)

    logger.debug("adjusted slope %d of %r to %r via %s", i, g, a, label)
    return AdjustOutcome(h, h.Q < g.Q, risk_before, function_risk(h, problem), label)


def potential(h: PiecewiseLinear, bound: Scalar, tolerance: Scalar = 0) -> int:
    """(Q + 1)^2 plus the number of slopes exceeding `bound` in magnitude"""

    return (h.Q + 1) ** 2 + sum(1 for a in h.A if abs(a) > bound + tolerance)


def weighted_mean(problem: Problem) -> Scalar:
    """Constant minimizing the risk: int f p / int p, or f(a) for zero mass"""

    mass = problem.mass()
    if mass == 0:
        return problem.target(problem.domain[0])
    return div((problem.target * problem.density).integrate(), mass)


def _slope_tolerance(h: PiecewiseLinear, problem: Problem, bound: Scalar) -> Scalar:
    if h.is_exact and problem.is_exact:
        return 0
    return float_tolerance(FLOAT_SLOPE_RTOL, bound, *h.A)


def lipschitz_steps(g: PiecewiseLinear, problem: Problem) -> Iterator[PiecewiseLinear]:
    """Yield g and every intermediate function of :func:`lipschitz_reduce`"""

    lipschitz = problem.target_lipschitz()
    h = g
    yield h

    if lipschitz == 0:
        if h.lipschitz() > 0:
            yield PiecewiseLinear.constant(weighted_mean(problem), h.domain)
        return

    while True:
        tolerance = _slope_tolerance(h, problem, lipschitz)
        offenders = [i for i in range(1, h.Q + 2) if abs(h.slope(i)) > lipschitz + tolerance]
        if not offenders:
            return
        i = offenders[0]
        before = potential(h, lipschitz, tolerance)
        h = adjust_slope(h, problem, i, sign(h.slope(i)) * lipschitz).h
        if potential(h, lipschitz, tolerance) >= before:
            raise RuntimeError(f"potential did not decrease at {h!r}")
        yield h


def lipschitz_reduce(g: PiecewiseLinear, problem: Problem) -> PiecewiseLinear:
    """h with Q(h) <= Q(g), Lip(h) <= Lip(f) and no larger risk

    For a constant target the weighted mean is returned.
    """

    h = g
    for h in lipschitz_steps(g, problem):
        pass
    return h


def _reduction_plan(
    h: PiecewiseLinear, indices: Sequence[int], lipschitz: Scalar, bound: Scalar
) -> List[Tuple[int, Scalar]]:
    """Slope targets lowering the steepest slope to `bound`

    When the steepest slope belongs to the witness, the same amount is taken
    from witness slopes of opposite alternating sign, steepest first, each
    kept at magnitude >= Lip(f).
    """

    magnitudes = [abs(a) for a in h.A]
    steepest = magnitudes.index(max(magnitudes)) + 1
    top = h.slope(steepest)
    plan = [(steepest, sign(top) * bound)]
    if steepest not in indices:
        return plan

    position = indices.index(steepest) + 1
    side = sign((-1) ** position * top)
    candidates = [
        i for j, i in enumerate(indices, 1) if sign((-1) ** j * h.slope(i)) == -side
    ]
    candidates.sort(key=lambda i: -abs(h.slope(i)))

    remaining = abs(top) - bound
    for i in candidates:
        if remaining <= 0:
            break
        amount = min(abs(h.slope(i)) - lipschitz, remaining)
        if amount > 0:
            plan.append((i, h.slope(i) - sign(h.slope(i)) * amount))
            remaining -= amount
    if remaining > 0 and h.is_exact:
        raise RuntimeError(f"infeasible slope allocation, {remaining!r} left")
    return plan


def relation_steps(
    g: PiecewiseLinear, problem: Problem, indices: Sequence[int]
) -> Iterator[PiecewiseLinear]:
    """Yield g and every intermediate function of :func:`relation_preserving_reduce`"""

    indices = tuple(indices)
    exact = g.is_exact and problem.is_exact
    if len(indices) % 2 == 0 or not indices:
        raise PreconditionError(f"need an odd number of indices, got {indices!r}")
    if any(i >= j for i, j in zip(indices, indices[1:])) or indices[0] < 1:
        raise PreconditionError(f"indices must increase from 1, got {indices!r}")
    if indices[-1] > g.Q + 1:
        raise PreconditionError(f"index {indices[-1]} exceeds Q(g) + 1 = {g.Q + 1}")
    total = alternating_sum(g, indices)
    if (total != 0) if exact else abs(total) > float_tolerance(FLOAT_SLOPE_RTOL, *g.A):
        raise PreconditionError(f"alternating slope sum is {total!r}, not 0")

    lipschitz = problem.target_lipschitz()
    breakpoints = g.Q
    bound = breakpoints * lipschitz
    h = g
    yield h

    while h.Q == breakpoints:
        tolerance = _slope_tolerance(h, problem, bound)
        if h.lipschitz() <= bound + tolerance:
            return
        before = potential(h, bound, tolerance)
        for i, target in _reduction_plan(h, indices, lipschitz, bound):
            outcome = adjust_slope(h, problem, i, target)
            h = outcome.h
            if outcome.q_dropped:
                yield h
                return
        if potential(h, bound, tolerance) >= before:
            raise RuntimeError(f"potential did not decrease at {h!r}")
        yield h


def relation_preserving_reduce(
    g: PiecewiseLinear, problem: Problem, indices: Sequence[int]
) -> PiecewiseLinear:
    """h with no larger risk and Q(h) <= Q(g); unless Q drops, the alternating
    slope sum over `indices` stays 0 and Lip(h) <= Q(g) Lip(f)
    """

    h = g
    for h in relation_steps(g, problem, indices):
        pass
    return h


def touch_target(h: PiecewiseLinear, problem: Problem) -> PiecewiseLinear:
    """Shift h by a constant until it meets f (if it does not already)"""

    lowest, highest = (h.to_piecewise_poly() - problem.target).extrema()
    if lowest > 0:
        return h.shift(-lowest)
    if highest < 0:
        return h.shift(-highest)
    return h


def better_approx(theta: ShallowParams, problem: Problem) -> ShallowParams:
    """Parameters with no larger risk, no more breakpoints and bounded
    Lipschitz constant and supremum norm

    Raises:
        RuntimeError: If an internal contract is violated.
    """

    width = theta.arch.width
    g = realize(theta)
    h = g

    if g.Q == width:
        certificate = slope_relation_holds(g, width)
        if not certificate.holds:
            raise RuntimeError(f"realization {g!r} failed its own certificate")
        h = relation_preserving_reduce(g, problem, certificate.witness_indices)

    if h.Q < width:
        h = lipschitz_reduce(h, problem)

    h = touch_target(h, problem)

    result = synthesize(h, width)
    if result is None:
        raise RuntimeError(f"could not synthesize width {width} parameters for {h!r}")

    check_better_approx_bounds(theta, result, problem)
    return result


def check_better_approx_bounds(
    theta: ShallowParams, result: ShallowParams, problem: Problem
) -> None:
    """Raise RuntimeError unless risk, breakpoint, Lipschitz and sup bounds hold"""

    before, after = realize(theta), realize(result)
    width = theta.arch.width
    lo, hi = problem.domain
    lipschitz_bound = width * problem.target_lipschitz()
    low, high = problem.target.extrema()
    sup_bound = lipschitz_bound * (hi - lo) + max(abs(low), abs(high))
    exact = result.is_exact and problem.is_exact

    risk_before = function_risk(before, problem)
    risk_after = function_risk(after, problem)
    slack = 0 if exact else float_tolerance(FLOAT_SLOPE_RTOL, risk_before, sup_bound)

    violations = []
    if risk_after > risk_before + slack:
        violations.append(f"risk {risk_after!r} > {risk_before!r}")
    if after.Q > before.Q:
        violations.append(f"Q {after.Q} > {before.Q}")
    if after.lipschitz() > lipschitz_bound + slack:
        violations.append(f"Lip {after.lipschitz()!r} > {lipschitz_bound!r}")
    if after.sup_norm() > sup_bound + slack:
        violations.append(f"sup {after.sup_norm()!r} > {sup_bound!r}")
    if violations:
        raise RuntimeError("better approximation violated: " + "; ".join(violations))
