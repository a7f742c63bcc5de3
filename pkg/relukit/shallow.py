"""Shallow ReLU networks on an interval

Parameter layout for width H (d = 3H + 1):

    theta = (w_1..w_H, b_1..b_H, v_1..v_H, c)

with realization c + sum_j v_j max{w_j x + b_j, 0}.
"""

import bisect
import logging
from dataclasses import dataclass
from typing import Any, Iterator, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy import integrate

from ._base import (
    InvalidInputError,
    PreconditionError,
    Scalar,
    div,
    format_scalar,
    is_exact,
    sign,
    to_scalar,
)
from .pwfun import PiecewiseLinear, PiecewisePoly, Poly


logger = logging.getLogger(__name__)

SMOOTHED_EPSABS = 1e-12
SMOOTHED_EPSREL = 1e-10
SMOOTHED_LIMIT = 200


@dataclass(frozen=True)
class ShallowArch:
    """Width and input interval of a shallow network"""

    width: int
    domain: Tuple[Scalar, Scalar] = (0, 1)

    def __post_init__(self):
        if self.width < 0:
            raise PreconditionError(f"width must be non-negative, got {self.width}")
        lo, hi = self.domain
        if not lo < hi:
            raise PreconditionError(f"empty domain [{lo!r}, {hi!r}]")
        object.__setattr__(self, "domain", (lo, hi))

    @property
    def param_count(self) -> int:
        return 3 * self.width + 1


class ShallowParams:
    """Flat parameter vector of a shallow network with named views

    Raises:
        PreconditionError: If the length is not 3H + 1.
    """

    __slots__ = ["_arch", "_theta"]

    def __init__(self, arch: ShallowArch, theta: Sequence[Scalar]):
        theta = tuple(theta)
        if len(theta) != arch.param_count:
            raise PreconditionError(
                f"width {arch.width} needs {arch.param_count} parameters, "
                f"got {len(theta)}"
            )
        self._arch = arch
        self._theta = theta

    @classmethod
    def pack(
        cls,
        arch: ShallowArch,
        w: Sequence[Scalar],
        b: Sequence[Scalar],
        v: Sequence[Scalar],
        c: Scalar,
    ) -> "ShallowParams":
        for name, values in (("w", w), ("b", b), ("v", v)):
            if len(values) != arch.width:
                raise PreconditionError(
                    f"{name} needs {arch.width} entries, got {len(values)}"
                )
        return cls(arch, tuple(w) + tuple(b) + tuple(v) + (c,))

    @property
    def arch(self) -> ShallowArch:
        return self._arch

    @property
    def theta(self) -> Tuple[Scalar, ...]:
        return self._theta

    @property
    def w(self) -> Tuple[Scalar, ...]:
        return self._theta[: self._arch.width]

    @property
    def b(self) -> Tuple[Scalar, ...]:
        h = self._arch.width
        return self._theta[h : 2 * h]

    @property
    def v(self) -> Tuple[Scalar, ...]:
        h = self._arch.width
        return self._theta[2 * h : 3 * h]

    @property
    def c(self) -> Scalar:
        return self._theta[-1]

    @property
    def is_exact(self) -> bool:
        return is_exact(self._theta)

    def unpack(self):
        return self.w, self.b, self.v, self.c

    def kinks(self) -> Tuple[Scalar, ...]:
        """q_j = -b_j / w_j, +inf for w_j = 0"""

        return tuple(
            div(-bj, wj) if wj != 0 else float("inf") for wj, bj in zip(self.w, self.b)
        )

    def as_array(self) -> np.ndarray:
        return np.array([float(t) for t in self._theta])

    def __len__(self):
        return len(self._theta)

    def __iter__(self) -> Iterator[Scalar]:
        return iter(self._theta)

    def __eq__(self, other):
        if not isinstance(other, ShallowParams):
            return NotImplemented
        return self._arch == other._arch and self._theta == other._theta

    def __repr__(self):
        return f"{type(self).__name__}(arch={self._arch!r}, theta={list(self._theta)!r})"


def param_pack(arch: ShallowArch, w, b, v, c) -> ShallowParams:
    return ShallowParams.pack(arch, w, b, v, c)


def param_unpack(theta: ShallowParams):
    return theta.unpack()


class Problem:
    """Continuous target f and nonnegative density p on a common interval

    Args:
        target: Continuous piecewise polynomial f.

    Keyword args:
        density: Piecewise polynomial p >= 0 (default: constant 1).

    Raises:
        InvalidInputError: If f is discontinuous, p is negative somewhere or
            the domains differ.
    """

    def __init__(self, target: PiecewisePoly, density: Optional[PiecewisePoly] = None):
        if density is None:
            one = 0 * target.pieces[0].coeffs[0] + 1
            density = PiecewisePoly.constant(one, target.domain)
        if tuple(target.domain) != tuple(density.domain):
            raise InvalidInputError(
                f"target domain {target.domain!r} differs from "
                f"density domain {density.domain!r}"
            )
        if not target.is_continuous():
            raise InvalidInputError("target must be continuous")
        if not density.is_nonnegative():
            raise InvalidInputError("density must be nonnegative")

        self.target = target
        self.density = density
        self._lipschitz = None

    def __repr__(self):
        return f"{type(self).__name__}(target={self.target!r}, density={self.density!r})"

    @property
    def domain(self) -> Tuple[Scalar, Scalar]:
        return self.target.domain

    @property
    def is_exact(self) -> bool:
        return self.target.is_exact and self.density.is_exact

    @property
    def breakpoints(self) -> Tuple[Scalar, ...]:
        return tuple(sorted(set(self.target.breakpoints) | set(self.density.breakpoints)))

    def target_lipschitz(self) -> Scalar:
        if self._lipschitz is None:
            self._lipschitz = self.target.lipschitz()
        return self._lipschitz

    def mass(self) -> Scalar:
        return self.density.integrate()

    def as_float(self) -> "Problem":
        return type(self)(self.target.as_float(), self.density.as_float())

    def negated(self) -> "Problem":
        return type(self)(-self.target, self.density)

    def reflected(self) -> "Problem":
        """Problem for x -> -f(a + b - x) with density p(a + b - x)"""

        return type(self)(-self.target.reflect(), self.density.reflect())

    def to_unit_interval(self) -> "Problem":
        """Same problem pulled back to [0, 1], risk preserving"""

        lo, hi = self.domain
        zero, one = 0 * lo, 0 * lo + 1
        return type(self)(
            self.target.affine_pullback(zero, one),
            self.density.affine_pullback(zero, one) * (hi - lo),
        )

    def to_dict(self) -> dict:
        return {
            "domain": [format_scalar(x) for x in self.domain],
            "target": self.target.to_dict(),
            "density": self.density.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any], mode: str = "rational") -> "Problem":
        try:
            target = PiecewisePoly.from_dict(data["target"], mode)
            density_data = data.get("density")
            density = None
            if density_data is not None:
                density = PiecewisePoly.from_dict(density_data, mode)
        except (KeyError, TypeError) as error:
            raise InvalidInputError(f"malformed problem: {error}") from error

        if "domain" in data:
            domain = tuple(to_scalar(x, mode) for x in data["domain"])
            if domain != tuple(target.domain):
                raise InvalidInputError(
                    f"problem domain {domain!r} differs from target domain"
                )
        return cls(target, density)


@dataclass(frozen=True)
class SmoothingFamily:
    """C^1 approximations R_r of the ReLU

    R_r is 0 below lower/r, the identity above upper/r and a cubic Hermite
    blend in between (value and slope 0 on the left, value upper/r and
    slope 1 on the right).
    """

    lower: float = 0.5
    upper: float = 1.0

    def seams(self, r: float) -> Tuple[float, float]:
        if r < 1:
            raise PreconditionError(f"smoothing parameter must be >= 1, got {r}")
        return self.lower / r, self.upper / r

    def _blend_coordinate(self, x, r):
        lo, hi = self.seams(r)
        x = np.asarray(x, dtype=float)
        t = np.clip((x - lo) / (hi - lo), 0.0, 1.0)
        return x, lo, hi, t

    def value(self, x, r: float):
        x, lo, hi, t = self._blend_coordinate(x, r)
        blend = hi * (3 * t ** 2 - 2 * t ** 3) + (hi - lo) * (t ** 3 - t ** 2)
        return np.where(x <= lo, 0.0, np.where(x >= hi, x, blend))[()]

    def derivative(self, x, r: float):
        x, lo, hi, t = self._blend_coordinate(x, r)
        blend = hi * (6 * t - 6 * t ** 2) / (hi - lo) + (3 * t ** 2 - 2 * t)
        return np.where(x <= lo, 0.0, np.where(x >= hi, 1.0, blend))[()]


DEFAULT_SMOOTHING = SmoothingFamily()


def _relu(value):
    return value if value > 0 else 0 * value


def network_value(theta: ShallowParams, x: Scalar) -> Scalar:
    """Exact pointwise evaluation of the defining sum"""

    total = theta.c
    for wj, bj, vj in zip(theta.w, theta.b, theta.v):
        total = total + vj * _relu(wj * x + bj)
    return total


def evaluate(theta: ShallowParams, xs) -> np.ndarray:
    """Vectorized float evaluation of the realization"""

    xs = np.asarray(xs, dtype=float)
    w, b, v, c = _float_views(theta)
    pre = np.multiply.outer(xs, w) + b
    return c + np.maximum(pre, 0.0) @ v


def _float_views(theta: ShallowParams):
    w = np.array([float(t) for t in theta.w])
    b = np.array([float(t) for t in theta.b])
    v = np.array([float(t) for t in theta.v])
    return w, b, v, float(theta.c)


def realize(theta: ShallowParams) -> PiecewiseLinear:
    """Canonical piecewise linear realization on the architecture domain"""

    lo, hi = theta.arch.domain
    knots = {lo, hi}
    for q in theta.kinks():
        if lo < q < hi:
            knots.add(q)
    knots = sorted(knots)
    return PiecewiseLinear.from_knots(knots, [network_value(theta, x) for x in knots])


def function_risk(h: PiecewiseLinear, problem: Problem) -> Scalar:
    """Exact integral of (f - h)^2 p for a piecewise linear h"""

    residual = h.to_piecewise_poly() - problem.target
    return (residual * residual * problem.density).integrate()


def _use_exact(theta: ShallowParams, problem: Problem) -> bool:
    return theta.is_exact and problem.is_exact


def _quadrature_order(problem: Problem) -> int:
    return max(problem.target.degree, 1) + problem.density.degree // 2 + 2


def cell_rule(edges: Sequence[float], order: int) -> Tuple[np.ndarray, np.ndarray]:
    """Composite Gauss-Legendre nodes and weights over consecutive cells"""

    nodes, weights = np.polynomial.legendre.leggauss(order)
    edges = np.asarray(edges, dtype=float)
    left, right = edges[:-1, None], edges[1:, None]
    half = (right - left) / 2
    x = (half * nodes + (right + left) / 2).ravel()
    wq = (half * weights).ravel()
    return x, wq


def _float_cells(theta: ShallowParams, problem: Problem) -> np.ndarray:
    lo, hi = (float(x) for x in problem.domain)
    points = {float(x) for x in problem.breakpoints}
    for q in theta.kinks():
        q = float(q)
        if lo < q < hi:
            points.add(q)
    return np.array(sorted(points))


def _float_terms(theta: ShallowParams, problem: Problem):
    x, wq = cell_rule(_float_cells(theta, problem), _quadrature_order(problem))
    w, b, v, c = _float_views(theta)
    pre = np.multiply.outer(w, x) + b[:, None]
    active = pre > 0
    activation = np.where(active, pre, 0.0)
    output = c + v @ activation
    residual = output - problem.target.evaluate_array(x)
    density = problem.density.evaluate_array(x)
    return x, wq, active, activation, residual, density


def risk_exact(theta: ShallowParams, problem: Problem) -> Scalar:
    """Risk integral of (f(x) - N(x))^2 p(x) over [a, b]

    Rational input is integrated exactly by piecewise polynomial algebra;
    float input uses cell-wise Gauss-Legendre rules that are exact for the
    polynomial integrand up to rounding.
    """

    if _use_exact(theta, problem):
        return function_risk(realize(theta), problem)

    _, wq, _, _, residual, density = _float_terms(theta, problem)
    return float(np.sum(wq * residual ** 2 * density))


def _active_interval(wj, bj, lo, hi):
    if wj == 0:
        return (lo, hi) if bj > 0 else (hi, hi)
    q = div(-bj, wj)
    if wj > 0:
        return max(lo, q), hi
    return lo, min(hi, q)


def grad_exact(theta: ShallowParams, problem: Problem) -> np.ndarray:
    """Generalized gradient with the ReLU derivative taken as 1_{(0, inf)}

    Components are ordered like theta: (dw_1.., db_1.., dv_1.., dc). Exact
    input gives an object array of rationals, float input a float array.
    """

    if not _use_exact(theta, problem):
        x, wq, active, activation, residual, density = _float_terms(theta, problem)
        _, _, v, _ = _float_views(theta)
        e = 2 * residual * density * wq
        gw = v * ((active * x) @ e)
        gb = v * (active @ e)
        gv = activation @ e
        return np.concatenate([gw, gb, gv, [e.sum()]])

    lo, hi = problem.domain
    error = (realize(theta).to_piecewise_poly() - problem.target) * problem.density * 2
    moment = error * PiecewisePoly.from_poly(Poly((0, 1)), problem.domain)

    gw, gb, gv = [], [], []
    for wj, bj, vj in zip(theta.w, theta.b, theta.v):
        left, right = _active_interval(wj, bj, lo, hi)
        mass = error.integrate(left, right)
        first = moment.integrate(left, right)
        gw.append(vj * first)
        gb.append(vj * mass)
        gv.append(wj * first + bj * mass)
    return np.array(gw + gb + gv + [error.integrate()], dtype=object)


def _smoothed_edges(theta: ShallowParams, problem: Problem, r: float, smoothing):
    lo, hi = (float(x) for x in problem.domain)
    points = {lo, hi} | {float(x) for x in problem.breakpoints}
    w, b, _, _ = _float_views(theta)
    for seam in smoothing.seams(r):
        for wj, bj in zip(w, b):
            if wj != 0:
                x = (seam - bj) / wj
                if lo < x < hi:
                    points.add(x)
    return sorted(points)


def _smoothed_integrand(theta, problem, r, smoothing, gradient: bool):
    w, b, v, c = _float_views(theta)
    target = problem.target.as_float()
    density = problem.density.as_float()

    def integrand(x):
        pre = w * x + b
        activation = smoothing.value(pre, r)
        residual = c + v @ np.atleast_1d(activation) - target(x)
        p = density(x)
        if not gradient:
            return residual ** 2 * p
        slope = np.atleast_1d(smoothing.derivative(pre, r))
        e = 2 * residual * p
        return np.concatenate(
            [e * v * slope * x, e * v * slope, e * np.atleast_1d(activation), [e]]
        )

    return integrand


def risk_smoothed(
    theta: ShallowParams,
    problem: Problem,
    r: float,
    smoothing: SmoothingFamily = DEFAULT_SMOOTHING,
) -> float:
    """Risk with R_r in place of the ReLU, by adaptive Gauss-Kronrod quadrature

    The integration range is split at the seams of R_r composed with every
    pre-activation and at the data breakpoints.

    Raises:
        PreconditionError: If r < 1.
    """

    edges = _smoothed_edges(theta, problem, r, smoothing)
    integrand = _smoothed_integrand(theta, problem, r, smoothing, gradient=False)
    total = 0.0
    for left, right in zip(edges, edges[1:]):
        value, _ = integrate.quad(
            integrand,
            left,
            right,
            epsabs=SMOOTHED_EPSABS,
            epsrel=SMOOTHED_EPSREL,
            limit=SMOOTHED_LIMIT,
        )
        total += value
    return total


def grad_smoothed(
    theta: ShallowParams,
    problem: Problem,
    r: float,
    smoothing: SmoothingFamily = DEFAULT_SMOOTHING,
) -> np.ndarray:
    """Gradient of :func:`risk_smoothed` by smooth backpropagation"""

    edges = _smoothed_edges(theta, problem, r, smoothing)
    integrand = _smoothed_integrand(theta, problem, r, smoothing, gradient=True)
    total = np.zeros(theta.arch.param_count)
    for left, right in zip(edges, edges[1:]):
        value, _ = integrate.quad_vec(
            integrand,
            left,
            right,
            epsabs=SMOOTHED_EPSABS,
            epsrel=SMOOTHED_EPSREL,
            limit=SMOOTHED_LIMIT,
        )
        total += value
    return total


def to_unit_interval(theta: ShallowParams) -> ShallowParams:
    """Parameters realizing t -> N(a + (b - a) t) on [0, 1]"""

    lo, hi = theta.arch.domain
    width = hi - lo
    arch = ShallowArch(theta.arch.width, (0 * lo, 0 * lo + 1))
    w = [wj * width for wj in theta.w]
    b = [bj + wj * lo for wj, bj in zip(theta.w, theta.b)]
    return ShallowParams.pack(arch, w, b, theta.v, theta.c)


def from_unit_interval(
    theta: ShallowParams, domain: Tuple[Scalar, Scalar]
) -> ShallowParams:
    """Inverse of :func:`to_unit_interval` for the target domain [a, b]"""

    lo, hi = domain
    arch = ShallowArch(theta.arch.width, (lo, hi))
    w = [div(wj, hi - lo) for wj in theta.w]
    b = [bj - wj * lo for wj, bj in zip(w, theta.b)]
    return ShallowParams.pack(arch, w, b, theta.v, theta.c)


def regularize(theta: ShallowParams) -> ShallowParams:
    """Move dead neurons (w_j = b_j = 0) to w_j = 0, b_j = -1

    The realization is unchanged and the result lies in the open set where
    |w_j| + |b_j| > 0 for every neuron.
    """

    w, b, v, c = theta.unpack()
    b = [bj - 1 if (wj == 0 and bj == 0) else bj for wj, bj in zip(w, b)]
    return ShallowParams.pack(theta.arch, w, b, v, c)


def cell_signature(theta: ShallowParams, problem: Problem) -> Tuple:
    """Label of the smooth region of the risk containing theta

    Records the sign of every w_j and the data cell containing its kink
    (or the sign of b_j for w_j = 0).
    """

    edges = [float(x) for x in problem.breakpoints]
    signature = []
    for wj, bj in zip(theta.w, theta.b):
        if wj == 0:
            signature.append((0, sign(bj)))
            continue
        q = float(div(-bj, wj))
        signature.append((sign(wj), bisect.bisect_left(edges, q), q in edges))
    return tuple(signature)
