"""Univariate polynomials, piecewise polynomials and piecewise linear functions

All types are immutable. Every operation is generic over the scalar type:
exact rationals (:class:`fractions.Fraction`) or 64-bit floats.
"""

import bisect
import logging
from fractions import Fraction
from typing import Any, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from ._base import (
    DomainError,
    InvalidInputError,
    Scalar,
    div,
    float_tolerance,
    format_scalar,
    is_exact,
    sign,
    to_scalar,
)


logger = logging.getLogger(__name__)

FLOAT_CONTINUITY_RTOL = 1e-12
FLOAT_SLOPE_RTOL = 1e-9
FLOAT_KNOT_RTOL = 1e-12
ROOT_WIDTH = 1e-14
_MAX_NUDGES = 200


def _strip(coeffs: Iterable[Scalar]) -> Tuple[Scalar, ...]:
    coeffs = list(coeffs)
    while len(coeffs) > 1 and coeffs[-1] == 0:
        coeffs.pop()
    if not coeffs:
        coeffs = [0]
    return tuple(coeffs)


def _chop(coeffs: Sequence[Scalar]) -> Tuple[Scalar, ...]:
    """Zero float coefficients that are rounding noise relative to the rest"""

    if is_exact(coeffs):
        return _strip(coeffs)
    scale = max((abs(c) for c in coeffs), default=0.0)
    return _strip(0.0 if abs(c) <= 1e-13 * scale else c for c in coeffs)


class Poly:
    """Polynomial with coefficients in ascending powers

    Trailing zero coefficients are stripped; the zero polynomial has degree 0.
    """

    __slots__ = ["_coeffs"]

    def __init__(self, coeffs: Iterable[Scalar] = (0,)):
        self._coeffs = _strip(coeffs)

    @property
    def coeffs(self) -> Tuple[Scalar, ...]:
        return self._coeffs

    @property
    def degree(self) -> int:
        return len(self._coeffs) - 1

    @property
    def is_zero(self) -> bool:
        return self.degree == 0 and self._coeffs[0] == 0

    def __repr__(self):
        return f"{type(self).__name__}(coeffs={list(self._coeffs)!r})"

    def __eq__(self, other):
        if not isinstance(other, Poly):
            return NotImplemented
        return self._coeffs == other._coeffs

    def __hash__(self):
        return hash(self._coeffs)

    def __call__(self, x):
        result = self._coeffs[-1]
        for c in reversed(self._coeffs[:-1]):
            result = result * x + c
        return result

    def __neg__(self):
        return Poly(-c for c in self._coeffs)

    def __add__(self, other):
        if not isinstance(other, Poly):
            other = Poly((other,))
        n = max(len(self._coeffs), len(other._coeffs))
        a = self._coeffs + (0,) * (n - len(self._coeffs))
        b = other._coeffs + (0,) * (n - len(other._coeffs))
        return Poly(x + y for x, y in zip(a, b))

    __radd__ = __add__

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if not isinstance(other, Poly):
            return Poly(c * other for c in self._coeffs)
        product = [0] * (len(self._coeffs) + len(other._coeffs) - 1)
        for i, a in enumerate(self._coeffs):
            if a == 0:
                continue
            for j, b in enumerate(other._coeffs):
                product[i + j] = product[i + j] + a * b
        return Poly(product)

    __rmul__ = __mul__

    def derivative(self) -> "Poly":
        if self.degree == 0:
            return Poly((0 * self._coeffs[0],))
        return Poly(k * c for k, c in enumerate(self._coeffs) if k > 0)

    def antiderivative(self) -> "Poly":
        return Poly(
            [0 * self._coeffs[0]]
            + [div(c, k + 1) for k, c in enumerate(self._coeffs)]
        )

    def integrate(self, lo: Scalar, hi: Scalar) -> Scalar:
        anti = self.antiderivative()
        return anti(hi) - anti(lo)

    def compose_affine(self, alpha: Scalar, beta: Scalar) -> "Poly":
        """Return x -> p(alpha * x + beta)"""

        inner = Poly((beta, alpha))
        result = Poly((self._coeffs[-1],))
        for c in reversed(self._coeffs[:-1]):
            result = result * inner + c
        return result

    def as_float(self) -> "Poly":
        return Poly(float(c) for c in self._coeffs)

    def divmod(self, other: "Poly") -> Tuple["Poly", "Poly"]:
        """Polynomial long division"""

        if other.is_zero:
            raise ZeroDivisionError("polynomial division by zero")

        degree = other.degree
        remainder = list(self._coeffs)
        if len(remainder) - 1 < degree:
            return Poly((0 * remainder[0],)), self

        lead = other._coeffs[-1]
        quotient = [0] * (len(remainder) - degree)
        for shift in range(len(remainder) - 1 - degree, -1, -1):
            factor = div(remainder[shift + degree], lead)
            quotient[shift] = factor
            for k, c in enumerate(other._coeffs):
                remainder[shift + k] = remainder[shift + k] - factor * c
        remainder = remainder[:degree] or [0 * lead]
        return Poly(quotient), Poly(_chop(remainder))

    def sturm_chain(self) -> List["Poly"]:
        chain = [self, self.derivative()]
        while not chain[-1].is_zero and chain[-1].degree > 0:
            _, remainder = chain[-2].divmod(chain[-1])
            if remainder.is_zero:
                break
            chain.append(-remainder)
        return [p for p in chain if not p.is_zero]

    @staticmethod
    def _variations(chain: Sequence["Poly"], x: Scalar) -> int:
        signs = [sign(p(x)) for p in chain]
        signs = [s for s in signs if s != 0]
        return sum(1 for s, t in zip(signs, signs[1:]) if s != t)

    def count_roots(self, lo: Scalar, hi: Scalar, chain=None) -> int:
        """Number of distinct real roots in the open interval (lo, hi)"""

        if self.is_zero:
            raise InvalidInputError("zero polynomial has infinitely many roots")
        if chain is None:
            chain = self.sturm_chain()
        count = self._variations(chain, lo) - self._variations(chain, hi)
        if self(hi) == 0:
            count -= 1
        return max(count, 0)

    def roots_in(self, lo: Scalar, hi: Scalar) -> List[Scalar]:
        """Sorted roots in the open interval (lo, hi) at which p changes sign

        Degree <= 1 roots are exact. Higher degree roots are isolated by
        Sturm counting and bisected to width `ROOT_WIDTH`; in rational mode a
        root with a small denominator is recovered exactly, in float mode one
        Newton step polishes the bisection result.
        """

        if self.is_zero or self.degree == 0 or not lo < hi:
            return []

        if self.degree == 1:
            root = div(-self._coeffs[0], self._coeffs[1])
            if lo < root < hi:
                return [root]
            return []

        chain = self.sturm_chain()
        lo = self._nudge_off_root(lo, hi, chain, forward=True)
        hi = self._nudge_off_root(lo, hi, chain, forward=False)
        if lo is None or hi is None:
            return []

        roots = []
        stack = [(lo, hi)]
        while stack:
            left, right = stack.pop()
            count = self.count_roots(left, right, chain)
            if count == 0:
                continue
            if count == 1:
                if sign(self(left)) != sign(self(right)):
                    roots.append(self._bisect(left, right))
                continue
            middle = self._split_point(left, right)
            stack.append((middle, right))
            stack.append((left, middle))

        return sorted(roots)

    def _nudge_off_root(self, lo, hi, chain, forward: bool):
        """Move an interval end that is a root inwards, past no other root"""

        end = lo if forward else hi
        if self(end) != 0:
            return end
        width = hi - lo
        for k in range(1, _MAX_NUDGES):
            offset = width / (2 ** k)
            candidate = end + offset if forward else end - offset
            inner = (end, candidate) if forward else (candidate, end)
            if self(candidate) != 0 and self.count_roots(*inner, chain) == 0:
                return candidate
        return None

    def _split_point(self, left, right):
        middle = (left + right) / 2
        step = (right - left) / 1024
        while self(middle) == 0:
            middle = middle + step
            step = step / 2
        return middle

    def _bisect(self, left, right):
        s_left = sign(self(left))
        exact = is_exact((left, right))
        while right - left > ROOT_WIDTH * (1 + abs(left)):
            middle = (left + right) / 2
            value = self(middle)
            if value == 0:
                return middle
            if sign(value) == s_left:
                left = middle
            else:
                right = middle

        middle = (left + right) / 2
        if exact:
            candidate = Fraction(middle).limit_denominator(10 ** 6)
            if left <= candidate <= right and self(candidate) == 0:
                return candidate
            return middle

        slope = self.derivative()(middle)
        if slope != 0:
            polished = middle - self(middle) / slope
            if left <= polished <= right:
                return polished
        return middle


def _as_poly(piece: Union[Poly, Sequence[Scalar], Scalar]) -> Poly:
    if isinstance(piece, Poly):
        return piece
    if isinstance(piece, (list, tuple)):
        return Poly(piece)
    return Poly((piece,))


class PiecewisePoly:
    """Function on [a, b] given by polynomials between breakpoints

    Piece i owns the half-open interval [x_{i-1}, x_i), the last piece also
    owns b. When `continuous` is set, adjacent pieces must agree at shared
    breakpoints (exactly for rationals, within 1e-12 * scale for floats).

    Args:
        breakpoints: Strictly increasing a = x_0 < ... < x_N = b.
        pieces: N polynomials (or coefficient sequences).

    Keyword args:
        continuous: Validate and flag continuity.
    """

    __slots__ = ["_breakpoints", "_pieces", "_continuous"]

    def __init__(
        self,
        breakpoints: Sequence[Scalar],
        pieces: Sequence[Union[Poly, Sequence[Scalar]]],
        *,
        continuous: bool = False,
    ):
        breakpoints = tuple(breakpoints)
        pieces = tuple(_as_poly(p) for p in pieces)

        if len(breakpoints) < 2:
            raise InvalidInputError("need at least two breakpoints")
        if len(pieces) != len(breakpoints) - 1:
            raise InvalidInputError(
                f"piece count {len(pieces)} does not match "
                f"breakpoint count {len(breakpoints)} - 1"
            )
        for left, right in zip(breakpoints, breakpoints[1:]):
            if not left < right:
                raise InvalidInputError(
                    f"breakpoints not strictly increasing at {left!r}, {right!r}"
                )

        self._breakpoints = breakpoints
        self._pieces = pieces
        self._continuous = False

        if continuous:
            offender = self._discontinuity()
            if offender is not None:
                raise InvalidInputError(f"pieces disagree at breakpoint {offender!r}")
            self._continuous = True

    @classmethod
    def constant(cls, value: Scalar, domain: Tuple[Scalar, Scalar]) -> "PiecewisePoly":
        return cls(domain, [Poly((value,))], continuous=True)

    @classmethod
    def from_poly(
        cls, poly: Union[Poly, Sequence[Scalar]], domain: Tuple[Scalar, Scalar]
    ) -> "PiecewisePoly":
        return cls(domain, [_as_poly(poly)], continuous=True)

    @property
    def breakpoints(self) -> Tuple[Scalar, ...]:
        return self._breakpoints

    @property
    def pieces(self) -> Tuple[Poly, ...]:
        return self._pieces

    @property
    def domain(self) -> Tuple[Scalar, Scalar]:
        return self._breakpoints[0], self._breakpoints[-1]

    @property
    def continuous(self) -> bool:
        return self._continuous

    @property
    def degree(self) -> int:
        return max(p.degree for p in self._pieces)

    @property
    def is_exact(self) -> bool:
        return is_exact(self._breakpoints) and all(
            is_exact(p.coeffs) for p in self._pieces
        )

    def intervals(self) -> Iterable[Tuple[Scalar, Scalar, Poly]]:
        for left, right, piece in zip(
            self._breakpoints, self._breakpoints[1:], self._pieces
        ):
            yield left, right, piece

    def __repr__(self):
        return (
            f"{type(self).__name__}(breakpoints={list(self._breakpoints)!r}, "
            f"pieces={[list(p.coeffs) for p in self._pieces]!r})"
        )

    def __eq__(self, other):
        if not isinstance(other, PiecewisePoly):
            return NotImplemented
        return (
            self._breakpoints == other._breakpoints and self._pieces == other._pieces
        )

    def _discontinuity(self) -> Optional[Scalar]:
        exact = self.is_exact
        for index, x in enumerate(self._breakpoints[1:-1]):
            left = self._pieces[index](x)
            right = self._pieces[index + 1](x)
            if exact:
                if left != right:
                    return x
            elif abs(left - right) > float_tolerance(
                FLOAT_CONTINUITY_RTOL, left, right
            ):
                return x
        return None

    def is_continuous(self) -> bool:
        return self._continuous or self._discontinuity() is None

    def locate(self, x: Scalar) -> int:
        """Index of the piece owning x"""

        lo, hi = self.domain
        if not lo <= x <= hi:
            raise DomainError(f"{x!r} outside of domain [{lo!r}, {hi!r}]")
        index = bisect.bisect_right(self._breakpoints, x) - 1
        return min(index, len(self._pieces) - 1)

    def __call__(self, x: Scalar) -> Scalar:
        return self._pieces[self.locate(x)](x)

    def evaluate_array(self, xs) -> np.ndarray:
        """Vectorized float evaluation (no domain check)"""

        xs = np.asarray(xs, dtype=float)
        edges = np.array([float(x) for x in self._breakpoints])
        index = np.clip(
            np.searchsorted(edges, xs, side="right") - 1, 0, len(self._pieces) - 1
        )
        result = np.zeros_like(xs)
        for k, piece in enumerate(self._pieces):
            mask = index == k
            if np.any(mask):
                coeffs = [float(c) for c in piece.coeffs]
                result[mask] = np.polynomial.polynomial.polyval(xs[mask], coeffs)
        return result

    def refine(self, points: Iterable[Scalar]) -> "PiecewisePoly":
        """Same function with additional breakpoints inserted"""

        lo, hi = self.domain
        merged = sorted(set(self._breakpoints) | {p for p in points if lo < p < hi})
        pieces = [self._pieces[self.locate((l + r) / 2)] for l, r in zip(merged, merged[1:])]
        return type(self)(merged, pieces, continuous=self._continuous)

    def __neg__(self):
        return type(self)(
            self._breakpoints, [-p for p in self._pieces], continuous=self._continuous
        )

    def __add__(self, other):
        return pp_add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return pp_add(self, -other)

    def __rsub__(self, other):
        return pp_add(-self, other)

    def __mul__(self, other):
        return pp_mul(self, other)

    __rmul__ = __mul__

    def relu(self) -> "PiecewisePoly":
        return pp_relu(self)

    def integrate(
        self, lo: Optional[Scalar] = None, hi: Optional[Scalar] = None
    ) -> Scalar:
        return pp_integrate(self, lo, hi)

    def reflect(self) -> "PiecewisePoly":
        """Return x -> f(a + b - x) on the same domain"""

        lo, hi = self.domain
        shift = lo + hi
        breakpoints = [shift - x for x in reversed(self._breakpoints)]
        pieces = [p.compose_affine(-1, shift) for p in reversed(self._pieces)]
        return type(self)(breakpoints, pieces, continuous=self._continuous)

    def affine_pullback(self, lo: Scalar, hi: Scalar) -> "PiecewisePoly":
        """Return t -> f(a + (b - a) (t - lo) / (hi - lo)) on [lo, hi]"""

        a, b = self.domain
        alpha = div(b - a, hi - lo)
        beta = a - alpha * lo
        breakpoints = [lo + div((x - a) * (hi - lo), b - a) for x in self._breakpoints]
        breakpoints[0], breakpoints[-1] = lo, hi
        pieces = [p.compose_affine(alpha, beta) for p in self._pieces]
        return type(self)(breakpoints, pieces, continuous=self._continuous)

    def extrema(self) -> Tuple[Scalar, Scalar]:
        """Minimum and maximum over the domain"""

        values = []
        for left, right, piece in self.intervals():
            candidates = [left, right] + piece.derivative().roots_in(left, right)
            values.extend(piece(x) for x in candidates)
        return min(values), max(values)

    def lipschitz(self) -> Scalar:
        """Supremum of |f'| over the pieces"""

        best = 0 * self._pieces[0].coeffs[0]
        for left, right, piece in self.intervals():
            slope = piece.derivative()
            candidates = [left, right] + slope.derivative().roots_in(left, right)
            best = max([best] + [abs(slope(x)) for x in candidates])
        return best

    def is_nonnegative(self) -> bool:
        """Check f >= 0 at piece endpoints and interior extrema"""

        minimum, _ = self.extrema()
        if self.is_exact:
            return minimum >= 0
        return minimum >= -float_tolerance(FLOAT_CONTINUITY_RTOL, minimum)

    def as_float(self) -> "PiecewisePoly":
        return type(self)(
            [float(x) for x in self._breakpoints],
            [p.as_float() for p in self._pieces],
            continuous=False,
        )

    def to_dict(self) -> dict:
        return {
            "domain": [format_scalar(x) for x in self.domain],
            "breakpoints": [format_scalar(x) for x in self._breakpoints],
            "pieces": [[format_scalar(c) for c in p.coeffs] for p in self._pieces],
        }

    @classmethod
    def from_dict(
        cls, data: Mapping[str, Any], mode: str = "rational", *, continuous: bool = False
    ) -> "PiecewisePoly":
        """Build from {domain: [a, b], breakpoints: [...], pieces: [[c0, ...], ...]}

        Raises:
            InvalidInputError: On missing keys or malformed numbers.
        """

        try:
            domain = [to_scalar(x, mode) for x in data["domain"]]
            breakpoints = [to_scalar(x, mode) for x in data.get("breakpoints", domain)]
            pieces = [[to_scalar(c, mode) for c in p] for p in data["pieces"]]
        except (KeyError, TypeError) as error:
            raise InvalidInputError(f"malformed piecewise polynomial: {error}") from error

        if len(domain) != 2 or (breakpoints[0], breakpoints[-1]) != tuple(domain):
            raise InvalidInputError(
                f"breakpoints {breakpoints!r} do not span domain {domain!r}"
            )
        return cls(breakpoints, pieces, continuous=continuous)


def _check_same_domain(f, g):
    if tuple(f.domain) != tuple(g.domain):
        raise DomainError(f"domain mismatch: {f.domain!r} vs {g.domain!r}")


def _combine(f: PiecewisePoly, g: PiecewisePoly, operation) -> PiecewisePoly:
    _check_same_domain(f, g)
    merged = sorted(set(f.breakpoints) | set(g.breakpoints))
    pieces = []
    for left, right in zip(merged, merged[1:]):
        middle = (left + right) / 2
        pieces.append(operation(f.pieces[f.locate(middle)], g.pieces[g.locate(middle)]))
    return PiecewisePoly(merged, pieces, continuous=f.continuous and g.continuous)


def _lift(f, other):
    if isinstance(other, PiecewisePoly):
        return other
    if isinstance(other, PiecewiseLinear):
        return other.to_piecewise_poly()
    if isinstance(other, Poly):
        return PiecewisePoly.from_poly(other, f.domain)
    return PiecewisePoly.constant(other, f.domain)


def evaluate(f: Union[PiecewisePoly, "PiecewiseLinear"], x: Scalar) -> Scalar:
    """Value of f at x

    Raises:
        DomainError: If x lies outside the domain of f.
    """

    return f(x)


def pp_add(f: PiecewisePoly, g) -> PiecewisePoly:
    """Pointwise sum on the union of breakpoints"""

    return _combine(f, _lift(f, g), lambda p, q: p + q)


def pp_mul(f: PiecewisePoly, g) -> PiecewisePoly:
    """Pointwise product on the union of breakpoints"""

    if not isinstance(g, (PiecewisePoly, PiecewiseLinear, Poly)):
        return PiecewisePoly(
            f.breakpoints, [p * g for p in f.pieces], continuous=f.continuous
        )
    return _combine(f, _lift(f, g), lambda p, q: p * q)


def pp_relu(f: PiecewisePoly) -> PiecewisePoly:
    """Pointwise max{f, 0} with breakpoints inserted at sign changes

    In rational mode an irrational root is only known to `ROOT_WIDTH`. The
    cut there is widened to a short linear bridge between max{f, 0} at the
    two ends, so the result stays exactly continuous.

    Raises:
        InvalidInputError: If f is not continuous.
    """

    if not f.is_continuous():
        raise InvalidInputError("pp_relu requires a continuous function")

    exact = f.is_exact
    breakpoints = [f.breakpoints[0]]
    pieces = []
    for left, right, piece in f.intervals():
        zero = Poly((0 * piece.coeffs[0],))
        cuts = [left] + piece.roots_in(left, right) + [right]
        clipped = [
            piece if piece((l + r) / 2) > 0 else zero for l, r in zip(cuts, cuts[1:])
        ]
        for index, r in enumerate(cuts[1:]):
            pieces.append(clipped[index])
            if index + 1 == len(clipped) or not exact or piece(r) == 0:
                breakpoints.append(r)
                continue
            half = min(
                Fraction(ROOT_WIDTH) * (1 + abs(r)),
                (r - cuts[index]) / 4,
                (cuts[index + 2] - r) / 4,
            )
            lo, hi = r - half, r + half
            y_lo, y_hi = clipped[index](lo), clipped[index + 1](hi)
            slope = (y_hi - y_lo) / (hi - lo)
            breakpoints.extend([lo, hi])
            pieces.append(Poly((y_lo - slope * lo, slope)))

    return PiecewisePoly(breakpoints, pieces, continuous=True)


def pp_integrate(
    f: PiecewisePoly, lo: Optional[Scalar] = None, hi: Optional[Scalar] = None
) -> Scalar:
    """Exact integral of f over [lo, hi] (default: the whole domain)"""

    a, b = f.domain
    lo = a if lo is None else max(lo, a)
    hi = b if hi is None else min(hi, b)
    total = 0 * f.pieces[0].coeffs[0]
    if not lo < hi:
        return total
    for left, right, piece in f.intervals():
        left, right = max(left, lo), min(right, hi)
        if left < right:
            total = total + piece.integrate(left, right)
    return total


class PiecewiseLinear:
    """Canonical continuous piecewise linear function

    Breakpoints q_0 = a < q_1 < ... < q_{Q+1} = b, slopes A_1..A_{Q+1} and
    intercepts B_1..B_{Q+1} (stored 0-based) with A_{i+1} != A_i and
    B_{i+1} = B_i - (A_{i+1} - A_i) q_i. Use :meth:`from_knots` or
    :func:`canonicalize` to construct.
    """

    __slots__ = ["_q", "_y", "_slopes", "_intercepts"]

    def __init__(self, q: Sequence[Scalar], y: Sequence[Scalar]):
        self._q = tuple(q)
        self._y = tuple(y)
        slopes = [
            div(y1 - y0, q1 - q0)
            for q0, q1, y0, y1 in zip(self._q, self._q[1:], self._y, self._y[1:])
        ]
        intercepts = [self._y[0] - slopes[0] * self._q[0]]
        for i in range(1, len(slopes)):
            intercepts.append(
                intercepts[-1] - (slopes[i] - slopes[i - 1]) * self._q[i]
            )
        self._slopes = tuple(slopes)
        self._intercepts = tuple(intercepts)

    @classmethod
    def from_knots(
        cls, q: Sequence[Scalar], y: Sequence[Scalar]
    ) -> "PiecewiseLinear":
        """Canonical polyline through the points (q_k, y_k)

        Coincident knots are merged; collinear interior knots are dropped.

        Raises:
            InvalidInputError: If knots decrease or coincident knots disagree.
        """

        q, y = list(q), list(y)
        if len(q) != len(y) or len(q) < 2:
            raise InvalidInputError("need at least two knots with one value each")
        exact = is_exact(q) and is_exact(y)

        knot_tol = 0 if exact else float_tolerance(FLOAT_KNOT_RTOL, q[0], q[-1])
        value_tol = 0 if exact else float_tolerance(FLOAT_CONTINUITY_RTOL, *y)
        kq, ky = [q[0]], [y[0]]
        for x, value in zip(q[1:], y[1:]):
            if x < kq[-1] - knot_tol:
                raise InvalidInputError(f"knots not increasing at {x!r}")
            if x - kq[-1] <= knot_tol:
                if abs(value - ky[-1]) > value_tol:
                    raise InvalidInputError(f"conflicting values at knot {x!r}")
                if len(kq) > 1 and x == q[-1]:
                    # keep the exact domain end
                    kq[-1] = x
                continue
            kq.append(x)
            ky.append(value)

        if len(kq) < 2:
            raise InvalidInputError("degenerate domain")

        slopes = [div(y1 - y0, q1 - q0) for q0, q1, y0, y1 in zip(kq, kq[1:], ky, ky[1:])]
        slope_tol = 0 if exact else float_tolerance(FLOAT_SLOPE_RTOL, *slopes)

        cq, cy = [kq[0]], [ky[0]]
        for k in range(1, len(kq) - 1):
            left = div(ky[k] - cy[-1], kq[k] - cq[-1])
            right = div(ky[k + 1] - ky[k], kq[k + 1] - kq[k])
            if abs(right - left) > slope_tol:
                cq.append(kq[k])
                cy.append(ky[k])
        cq.append(kq[-1])
        cy.append(ky[-1])
        return cls(cq, cy)

    @classmethod
    def constant(cls, value: Scalar, domain: Tuple[Scalar, Scalar]) -> "PiecewiseLinear":
        return cls(tuple(domain), (value, value))

    @classmethod
    def affine(
        cls, slope: Scalar, intercept: Scalar, domain: Tuple[Scalar, Scalar]
    ) -> "PiecewiseLinear":
        lo, hi = domain
        return cls((lo, hi), (slope * lo + intercept, slope * hi + intercept))

    @property
    def Q(self) -> int:
        return len(self._q) - 2

    @property
    def q(self) -> Tuple[Scalar, ...]:
        return self._q

    @property
    def A(self) -> Tuple[Scalar, ...]:
        return self._slopes

    @property
    def B(self) -> Tuple[Scalar, ...]:
        return self._intercepts

    @property
    def knot_values(self) -> Tuple[Scalar, ...]:
        return self._y

    @property
    def domain(self) -> Tuple[Scalar, Scalar]:
        return self._q[0], self._q[-1]

    @property
    def is_exact(self) -> bool:
        return is_exact(self._q) and is_exact(self._y)

    def slope(self, i: int) -> Scalar:
        """Slope A_i of piece i (1-based)"""

        return self._slopes[i - 1]

    def __repr__(self):
        return (
            f"{type(self).__name__}(q={list(self._q)!r}, "
            f"A={list(self._slopes)!r}, B={list(self._intercepts)!r})"
        )

    def __eq__(self, other):
        if not isinstance(other, PiecewiseLinear):
            return NotImplemented
        return self._q == other._q and self._y == other._y

    def __hash__(self):
        return hash((self._q, self._y))

    def locate(self, x: Scalar) -> int:
        """1-based index of the piece owning x"""

        lo, hi = self.domain
        if not lo <= x <= hi:
            raise DomainError(f"{x!r} outside of domain [{lo!r}, {hi!r}]")
        index = bisect.bisect_right(self._q, x)
        return min(index, len(self._slopes))

    def __call__(self, x: Scalar) -> Scalar:
        i = self.locate(x)
        return self._slopes[i - 1] * x + self._intercepts[i - 1]

    def evaluate_array(self, xs) -> np.ndarray:
        return np.interp(
            np.asarray(xs, dtype=float),
            [float(x) for x in self._q],
            [float(v) for v in self._y],
        )

    def __neg__(self):
        return type(self)(self._q, [-v for v in self._y])

    def __add__(self, other):
        return pl_add(self, other)

    def __sub__(self, other):
        return pl_add(self, -other)

    def scale(self, factor: Scalar) -> "PiecewiseLinear":
        if factor == 0:
            return type(self).constant(0 * self._y[0], self.domain)
        return type(self)(self._q, [factor * v for v in self._y])

    def shift(self, offset: Scalar) -> "PiecewiseLinear":
        return type(self)(self._q, [v + offset for v in self._y])

    def reflect(self) -> "PiecewiseLinear":
        """Return x -> g(a + b - x) on the same domain"""

        lo, hi = self.domain
        return type(self)(
            [lo + hi - x for x in reversed(self._q)], list(reversed(self._y))
        )

    def relu(self) -> "PiecewiseLinear":
        """Pointwise max{g, 0} with exact kinks at the zero crossings"""

        q, y = [self._q[0]], [self._y[0]]
        for i in range(len(self._slopes)):
            left, right = self._q[i], self._q[i + 1]
            y_left, y_right = self._y[i], self._y[i + 1]
            if sign(y_left) * sign(y_right) < 0:
                root = div(-self._intercepts[i], self._slopes[i])
                if left < root < right:
                    q.append(root)
                    y.append(0 * y_left)
            q.append(right)
            y.append(y_right)
        return type(self).from_knots(q, [max(v, 0 * v) for v in y])

    def to_piecewise_poly(self) -> PiecewisePoly:
        return PiecewisePoly(
            self._q,
            [Poly((b, a)) for a, b in zip(self._slopes, self._intercepts)],
            continuous=True,
        )

    def lipschitz(self) -> Scalar:
        return max(abs(a) for a in self._slopes)

    def sup_norm(self) -> Scalar:
        return max(abs(v) for v in self._y)

    def to_dict(self) -> dict:
        return {
            "domain": [format_scalar(x) for x in self.domain],
            "breakpoints": [format_scalar(x) for x in self._q],
            "slopes": [format_scalar(a) for a in self._slopes],
            "intercepts": [format_scalar(b) for b in self._intercepts],
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any], mode: str = "rational") -> "PiecewiseLinear":
        """Build from slope/intercept data or a degree <= 1 piecewise polynomial

        Raises:
            InvalidInputError: On malformed or discontinuous data.
        """

        if "slopes" not in data:
            return canonicalize(PiecewisePoly.from_dict(data, mode))
        try:
            breakpoints = [to_scalar(x, mode) for x in data["breakpoints"]]
            slopes = [to_scalar(a, mode) for a in data["slopes"]]
            intercepts = [to_scalar(b, mode) for b in data["intercepts"]]
        except (KeyError, TypeError) as error:
            raise InvalidInputError(f"malformed piecewise linear data: {error}") from error
        return canonicalize(breakpoints, slopes, intercepts)


def canonicalize(
    f: Union[PiecewisePoly, Sequence[Scalar]],
    slopes: Optional[Sequence[Scalar]] = None,
    intercepts: Optional[Sequence[Scalar]] = None,
) -> PiecewiseLinear:
    """Canonical form of raw continuous piecewise linear data

    Accepts either a :class:`PiecewisePoly` of degree <= 1 or breakpoints
    together with one slope and one intercept per piece.

    Raises:
        InvalidInputError: For discontinuous or higher degree input.
    """

    if isinstance(f, PiecewisePoly):
        if f.degree > 1:
            raise InvalidInputError(f"degree {f.degree} pieces are not linear")
        breakpoints = list(f.breakpoints)
        slopes = [p.coeffs[1] if p.degree == 1 else 0 * p.coeffs[0] for p in f.pieces]
        intercepts = [p.coeffs[0] for p in f.pieces]
    else:
        breakpoints = list(f)

    if slopes is None or intercepts is None:
        raise InvalidInputError("slopes and intercepts are required")
    if not len(slopes) == len(intercepts) == len(breakpoints) - 1:
        raise InvalidInputError(
            f"{len(breakpoints)} breakpoints need {len(breakpoints) - 1} pieces, "
            f"got {len(slopes)} slopes and {len(intercepts)} intercepts"
        )

    exact = is_exact(breakpoints) and is_exact(slopes) and is_exact(intercepts)
    values = [slopes[0] * breakpoints[0] + intercepts[0]]
    for i in range(len(slopes)):
        x = breakpoints[i + 1]
        left = slopes[i] * x + intercepts[i]
        if i + 1 < len(slopes):
            right = slopes[i + 1] * x + intercepts[i + 1]
            mismatch = left != right if exact else abs(left - right) > float_tolerance(
                FLOAT_CONTINUITY_RTOL, left, right
            )
            if mismatch:
                raise InvalidInputError(f"discontinuous at breakpoint {x!r}")
        values.append(left)

    for left, right in zip(breakpoints, breakpoints[1:]):
        if not left < right:
            raise InvalidInputError(
                f"breakpoints not strictly increasing at {left!r}, {right!r}"
            )
    return PiecewiseLinear.from_knots(breakpoints, values)


def pl_add(f: PiecewiseLinear, g: PiecewiseLinear) -> PiecewiseLinear:
    """Canonical pointwise sum

    Raises:
        DomainError: If the domains differ.
    """

    _check_same_domain(f, g)
    knots = sorted(set(f.q) | set(g.q))
    return PiecewiseLinear.from_knots(knots, [f(x) + g(x) for x in knots])


def breakpoint_count(f: PiecewiseLinear) -> int:
    return f.Q


def lipschitz(f: Union[PiecewiseLinear, PiecewisePoly]) -> Scalar:
    return f.lipschitz()
