"""Deep fully connected ReLU networks

Parameter layout for widths l_0, ..., l_L: layer after layer, the weight
matrix W_k (l_k x l_{k-1}, row-major) followed by the bias b_k, so that
W_k[i, j] is entry (i - 1) l_{k-1} + j + sum_{h<k} l_h (l_{h-1} + 1)
(1-based). For l = (1, H, 1) the layout is the one of
:class:`relukit.shallow.ShallowParams`.
"""

import itertools
import logging
from dataclasses import dataclass, replace
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import integrate

from ._base import (
    InvalidInputError,
    PreconditionError,
    Scalar,
    float_tolerance,
    is_exact,
)
from .dynamics import GDConfig, Objective, multistart, sample_inits, shallow_objective
from .pwfun import PiecewiseLinear, PiecewisePoly, Poly, canonicalize, pl_add
from .representability import synthesize
from .shallow import (
    DEFAULT_SMOOTHING,
    Problem,
    ShallowArch,
    ShallowParams,
    SmoothingFamily,
    cell_rule,
    function_risk,
)


logger = logging.getLogger(__name__)

MAX_TENSOR_DIM = 3
FLOAT_CELL_RTOL = 1e-12
SMOOTHED_EPSABS = 1e-12
SMOOTHED_EPSREL = 1e-10
SMOOTHED_LIMIT = 200


@dataclass(frozen=True)
class DeepArch:
    """Layer widths l_0, ..., l_L and the input interval [a, b]"""

    layers: Tuple[int, ...]
    domain: Tuple[Scalar, Scalar] = (0, 1)

    def __post_init__(self):
        layers = tuple(int(l) for l in self.layers)
        if len(layers) < 2:
            raise PreconditionError(f"need input and output widths, got {layers!r}")
        if any(l < 1 for l in layers):
            raise PreconditionError(f"all widths must be >= 1, got {layers!r}")
        lo, hi = self.domain
        if not lo < hi:
            raise PreconditionError(f"empty domain [{lo!r}, {hi!r}]")
        object.__setattr__(self, "layers", layers)
        object.__setattr__(self, "domain", (lo, hi))

    @property
    def depth(self) -> int:
        return len(self.layers) - 1

    @property
    def input_dim(self) -> int:
        return self.layers[0]

    @property
    def output_dim(self) -> int:
        return self.layers[-1]

    @property
    def param_count(self) -> int:
        return sum(
            self.layers[k] * (self.layers[k - 1] + 1) for k in range(1, len(self.layers))
        )

    @property
    def is_shallow(self) -> bool:
        return len(self.layers) == 3 and self.layers[0] == 1 and self.layers[2] == 1

    @property
    def min_width(self) -> int:
        hidden = self.layers[1:-1]
        return min(hidden) if hidden else self.layers[-1]

    def offset(self, k: int) -> int:
        """0-based position of W_k[1, 1] in theta"""

        self.check_layer(k)
        return sum(
            self.layers[h] * (self.layers[h - 1] + 1) for h in range(1, k)
        )

    def check_layer(self, k: int) -> None:
        if not 1 <= k <= self.depth:
            raise PreconditionError(f"layer {k} outside 1..{self.depth}")

    def to_shallow(self) -> ShallowArch:
        if not self.is_shallow:
            raise PreconditionError(f"{self.layers!r} is not a (1, H, 1) architecture")
        return ShallowArch(self.layers[1], self.domain)


class DeepParams:
    """Flat parameter vector of a deep network with per-layer views

    Raises:
        PreconditionError: If the length does not match the architecture.
    """

    __slots__ = ["_arch", "_theta", "_float_layers"]

    def __init__(self, arch: DeepArch, theta: Sequence[Scalar]):
        theta = tuple(theta)
        if len(theta) != arch.param_count:
            raise PreconditionError(
                f"layers {arch.layers!r} need {arch.param_count} parameters, "
                f"got {len(theta)}"
            )
        self._arch = arch
        self._theta = theta
        self._float_layers = None

    @property
    def arch(self) -> DeepArch:
        return self._arch

    @property
    def theta(self) -> Tuple[Scalar, ...]:
        return self._theta

    @property
    def is_exact(self) -> bool:
        return is_exact(self._theta)

    def __len__(self):
        return len(self._theta)

    def __repr__(self):
        return f"{type(self).__name__}(layers={self._arch.layers!r}, theta={list(self._theta)!r})"

    def layer(self, k: int) -> Tuple[List[List[Scalar]], List[Scalar]]:
        """(W_k as rows, b_k) of layer k (1-based)"""

        start = self._arch.offset(k)
        rows, cols = self._arch.layers[k], self._arch.layers[k - 1]
        flat = self._theta[start : start + rows * cols]
        weights = [list(flat[i * cols : (i + 1) * cols]) for i in range(rows)]
        bias = list(self._theta[start + rows * cols : start + rows * (cols + 1)])
        return weights, bias

    def float_layers(self) -> List[Tuple[np.ndarray, np.ndarray]]:
        if self._float_layers is None:
            self._float_layers = [
                (
                    np.array(weights, dtype=float).reshape(
                        self._arch.layers[k], self._arch.layers[k - 1]
                    ),
                    np.array(bias, dtype=float),
                )
                for k in range(1, self._arch.depth + 1)
                for weights, bias in [self.layer(k)]
            ]
        return self._float_layers

    def as_array(self) -> np.ndarray:
        return np.array([float(t) for t in self._theta])

    def as_shallow(self) -> ShallowParams:
        return ShallowParams(self._arch.to_shallow(), self._theta)


def deep_unpack(theta: DeepParams, k: int) -> Tuple[List[List[Scalar]], List[Scalar]]:
    """Weight rows and bias of layer k

    Raises:
        PreconditionError: If k is not in 1..L.
    """

    return theta.layer(k)


def deep_pack(
    arch: DeepArch,
    weights: Sequence[Sequence[Sequence[Scalar]]],
    biases: Sequence[Sequence[Scalar]],
) -> DeepParams:
    """Inverse of :func:`deep_unpack` over all layers"""

    if len(weights) != arch.depth or len(biases) != arch.depth:
        raise PreconditionError(
            f"need {arch.depth} weight matrices and bias vectors, "
            f"got {len(weights)} and {len(biases)}"
        )
    theta = []
    for k, (matrix, bias) in enumerate(zip(weights, biases), 1):
        rows, cols = arch.layers[k], arch.layers[k - 1]
        matrix = [list(row) for row in matrix]
        if len(matrix) != rows or any(len(row) != cols for row in matrix):
            raise PreconditionError(f"layer {k} weights must be {rows} x {cols}")
        if len(bias) != rows:
            raise PreconditionError(f"layer {k} bias needs {rows} entries")
        for row in matrix:
            theta.extend(row)
        theta.extend(bias)
    return DeepParams(arch, theta)


def _as_batch(x, dim: int) -> Tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    single = x.ndim <= 1
    if x.ndim == 0:
        x = x.reshape(1)
    x = np.atleast_2d(x)
    if x.shape[-1] != dim:
        raise PreconditionError(f"input dimension {x.shape[-1]} differs from {dim}")
    return x, single


def _relu(z):
    return np.maximum(z, 0.0)


def _left_derivative(z):
    return (z > 0).astype(float)


def _forward_pass(theta: DeepParams, x: np.ndarray, activation):
    """Pre-activations z_1..z_L and activations a_0..a_{L-1}"""

    a, pre, post = x, [], [x]
    layers = theta.float_layers()
    for k, (weights, bias) in enumerate(layers, 1):
        z = a @ weights.T + bias
        pre.append(z)
        if k < len(layers):
            a = activation(k, z)
            post.append(a)
    return pre, post


def forward(theta: DeepParams, x) -> np.ndarray:
    """Realization N^L(x) for one input (l_0,) or a batch (n, l_0)

    Raises:
        PreconditionError: On a dimension mismatch.
    """

    batch, single = _as_batch(x, theta.arch.input_dim)
    pre, _ = _forward_pass(theta, batch, lambda k, z: _relu(z))
    return pre[-1][0] if single else pre[-1]


def _smoothed_parameter(r: float, k: int) -> float:
    return r ** (1.0 / k)


def forward_smoothed(
    theta: DeepParams, x, r: float, smoothing: SmoothingFamily = DEFAULT_SMOOTHING
) -> np.ndarray:
    """Realization with R_{r^(1/k)} after layer k

    Raises:
        PreconditionError: If r < 1.
    """

    if r < 1:
        raise PreconditionError(f"smoothing parameter must be >= 1, got {r}")
    batch, single = _as_batch(x, theta.arch.input_dim)
    pre, _ = _forward_pass(
        theta,
        batch,
        lambda k, z: np.asarray(smoothing.value(z, _smoothed_parameter(r, k))),
    )
    return pre[-1][0] if single else pre[-1]


def _backward(theta, x, y, activation, derivative, scale=None) -> np.ndarray:
    """Per-sample gradients of ||N(x) - y||^2 (times `scale` per output)"""

    pre, post = _forward_pass(theta, x, activation)
    delta = 2 * (pre[-1] - y)
    if scale is not None:
        delta = delta * scale
    layers = theta.float_layers()
    blocks = []
    for k in range(len(layers), 0, -1):
        weights, _ = layers[k - 1]
        grad_w = delta[:, :, None] * post[k - 1][:, None, :]
        blocks.append(np.concatenate([grad_w.reshape(len(x), -1), delta], axis=1))
        if k > 1:
            delta = (delta @ weights) * derivative(k - 1, pre[k - 2])
    return np.concatenate(blocks[::-1], axis=1)


def grad_backprop_left(theta: DeepParams, x, y) -> np.ndarray:
    """Gradient of ||N(x) - y||^2 with the ReLU derivative 1_{(0, inf)}

    Vectorized over a batch of inputs; returns (n, d) for batched input.
    """

    batch, single = _as_batch(x, theta.arch.input_dim)
    targets = np.asarray(y, dtype=float).reshape(len(batch), theta.arch.output_dim)
    grads = _backward(
        theta,
        batch,
        targets,
        lambda k, z: _relu(z),
        lambda k, z: _left_derivative(z),
    )
    return grads[0] if single else grads


@dataclass(frozen=True)
class CallableProblem:
    """Vectorized target f: (n, d) -> (n, m) and density p: (n, d) -> (n,)"""

    target: Callable[[np.ndarray], np.ndarray]
    density: Callable[[np.ndarray], np.ndarray]
    domain: Tuple[float, float]
    input_dim: int = 1
    output_dim: int = 1
    breakpoints: Tuple[float, ...] = ()

    @classmethod
    def from_problem(
        cls, problem: Union[Problem, Sequence[Problem]]
    ) -> "CallableProblem":
        """1-D wrapper; per-component targets share the first density"""

        problems = [problem] if isinstance(problem, Problem) else list(problem)
        first = problems[0]
        targets = [p.target.as_float() for p in problems]
        density = first.density.as_float()
        breakpoints = sorted({float(x) for p in problems for x in p.breakpoints})

        def target(x):
            return np.stack([t.evaluate_array(x[:, 0]) for t in targets], axis=1)

        return cls(
            target,
            lambda x: density.evaluate_array(x[:, 0]),
            tuple(float(v) for v in first.domain),
            1,
            len(problems),
            tuple(breakpoints),
        )


@dataclass(frozen=True)
class QuadratureRule:
    """Nodes (n, d) and weights (n,) of a quadrature rule on [a, b]^d"""

    nodes: np.ndarray
    weights: np.ndarray

    def __len__(self):
        return len(self.weights)

    @classmethod
    def gauss_legendre(
        cls, domain: Tuple[float, float], dim: int, order: int
    ) -> "QuadratureRule":
        """Tensor Gauss-Legendre rule with `order` nodes per axis

        Raises:
            PreconditionError: For d > 3 or order < 1.
        """

        if not 1 <= dim <= MAX_TENSOR_DIM:
            raise PreconditionError(
                f"tensor rules support 1 <= d <= {MAX_TENSOR_DIM}, got {dim}"
            )
        if order < 1:
            raise PreconditionError(f"order must be >= 1, got {order}")
        x, w = cell_rule([float(domain[0]), float(domain[1])], order)
        grids = np.meshgrid(*([x] * dim), indexing="ij")
        weights = np.meshgrid(*([w] * dim), indexing="ij")
        nodes = np.stack([g.ravel() for g in grids], axis=1)
        return cls(nodes, np.prod([g.ravel() for g in weights], axis=0))

    @classmethod
    def cells(cls, edges: Sequence[float], order: int) -> "QuadratureRule":
        """Composite 1-D Gauss-Legendre rule over consecutive cells"""

        x, w = cell_rule(sorted(edges), order)
        return cls(x[:, None], w)


def _weighted_residual(theta: DeepParams, problem: CallableProblem, rule: QuadratureRule):
    output = forward(theta, rule.nodes)
    scale = (problem.density(rule.nodes) * rule.weights)[:, None]
    return output, problem.target(rule.nodes), scale


def risk_quadrature(
    theta: DeepParams, problem: CallableProblem, rule: QuadratureRule
) -> float:
    """Quadrature approximation of the integral of ||N - f||^2 p"""

    output, target, scale = _weighted_residual(theta, problem, rule)
    return float(np.sum(scale * (output - target) ** 2))


def grad_backprop_average(
    theta: DeepParams, problem: CallableProblem, rule: QuadratureRule
) -> np.ndarray:
    """Quadrature average of :func:`grad_backprop_left` weighted by p"""

    target = problem.target(rule.nodes)
    scale = problem.density(rule.nodes) * rule.weights
    grads = grad_backprop_left(theta, rule.nodes, target)
    return scale @ grads


def grad_formula(
    theta: DeepParams, problem: CallableProblem, rule: QuadratureRule
) -> np.ndarray:
    """Generalized gradient from the explicit sums over neuron paths

    For layer k the weight entry (i, j) collects, for every path
    v_k = i, v_{k+1}, ..., v_L, the product of the weights
    W_n[v_n, v_{n-1}] and of the indicators 1{N^n_{v_n} > 0} (n < L),
    times 2 (N_{v_L} - f_{v_L}) p and the input x_j (k = 1) or the
    activation max{N^{k-1}_j, 0} (k > 1), integrated with `rule`.
    """

    arch = theta.arch
    layers = theta.float_layers()
    pre, post = _forward_pass(theta, rule.nodes, lambda k, z: _relu(z))
    output, target, scale = _weighted_residual(theta, problem, rule)
    error = 2 * (output - target) * scale

    blocks = []
    for k in range(1, arch.depth + 1):
        grad_w = np.zeros((arch.layers[k], arch.layers[k - 1]))
        grad_b = np.zeros(arch.layers[k])
        upstream = [range(arch.layers[n]) for n in range(k + 1, arch.depth + 1)]
        for i in range(arch.layers[k]):
            total = np.zeros(len(rule))
            for path in itertools.product(*upstream):
                v = (i,) + path
                term = error[:, v[-1]].copy()
                for n in range(k + 1, arch.depth + 1):
                    weights, _ = layers[n - 1]
                    current, previous = v[n - k], v[n - k - 1]
                    term *= weights[current, previous] * (pre[n - 2][:, previous] > 0)
                total += term
            grad_w[i] = total @ post[k - 1]
            grad_b[i] = total.sum()
        blocks.append(np.concatenate([grad_w.ravel(), grad_b]))
    return np.concatenate(blocks)


@dataclass(frozen=True)
class CellDecomposition:
    """Cells of [a, b] with constant activation patterns

    `patterns[c][k - 1][i]` is True iff neuron i of hidden layer k is active
    on cell c; `affine[c][v]` is (slope, intercept) of output v there.
    """

    breakpoints: Tuple[Scalar, ...]
    patterns: Tuple[Tuple[Tuple[bool, ...], ...], ...]
    affine: Tuple[Tuple[Tuple[Scalar, Scalar], ...], ...]

    def __len__(self):
        return len(self.breakpoints) - 1

    def cells(self):
        return zip(self.breakpoints, self.breakpoints[1:])

    def locate(self, x: Scalar) -> int:
        """0-based cell containing x (the left cell at interior breakpoints)"""

        for c, (_, right) in enumerate(self.cells()):
            if x <= right:
                return c
        return len(self) - 1


def _merge_points(points, exact: bool):
    points = sorted(points)
    if exact:
        return tuple(points)
    tolerance = float_tolerance(FLOAT_CELL_RTOL, points[0], points[-1])
    merged = [points[0]]
    for x in points[1:]:
        if x - merged[-1] > tolerance:
            merged.append(x)
    merged[-1] = points[-1]
    return tuple(merged)


def propagate_pl(
    theta: DeepParams,
) -> Tuple[List[PiecewiseLinear], CellDecomposition]:
    """Exact piecewise linear realization of every output of a 1-D network

    Raises:
        PreconditionError: If l_0 != 1.
    """

    arch = theta.arch
    if arch.input_dim != 1:
        raise PreconditionError(f"scalar input required, got l_0 = {arch.input_dim}")

    domain = arch.domain
    weights, bias = theta.layer(1)
    neurons = [PiecewiseLinear.affine(row[0], bi, domain) for row, bi in zip(weights, bias)]
    hidden = []
    points = set(domain)

    for k in range(2, arch.depth + 1):
        activations = [z.relu() for z in neurons]
        hidden.append(neurons)
        for a in activations:
            points.update(a.q)
        weights, bias = theta.layer(k)
        layer = []
        for row, bi in zip(weights, bias):
            total = PiecewiseLinear.constant(bi, domain)
            for wij, a in zip(row, activations):
                if wij != 0:
                    total = pl_add(total, a.scale(wij))
            layer.append(total)
        neurons = layer

    for z in neurons:
        points.update(z.q)
    exact = theta.is_exact and is_exact(domain)
    breakpoints = _merge_points(points, exact)

    patterns, affine = [], []
    for left, right in zip(breakpoints, breakpoints[1:]):
        middle = (left + right) / 2
        patterns.append(
            tuple(tuple(z(middle) > 0 for z in layer) for layer in hidden)
        )
        pieces = []
        for z in neurons:
            i = z.locate(middle)
            pieces.append((z.slope(i), z.B[i - 1]))
        affine.append(tuple(pieces))

    logger.debug("propagated %r into %d cells", arch.layers, len(patterns))
    return neurons, CellDecomposition(breakpoints, tuple(patterns), tuple(affine))


def _component_problems(problem, output_dim: int) -> List[Problem]:
    problems = [problem] if isinstance(problem, Problem) else list(problem)
    if len(problems) != output_dim:
        raise PreconditionError(
            f"{output_dim} outputs need as many targets, got {len(problems)}"
        )
    return problems


def _check_1d(theta: DeepParams, problems: Sequence[Problem]) -> None:
    if theta.arch.input_dim != 1:
        raise PreconditionError(f"scalar input required, got l_0 = {theta.arch.input_dim}")
    for problem in problems:
        if tuple(problem.domain) != tuple(theta.arch.domain):
            raise InvalidInputError(
                f"problem domain {problem.domain!r} differs from {theta.arch.domain!r}"
            )


def risk_deep_exact_1d(
    theta: DeepParams, problem: Union[Problem, Sequence[Problem]]
) -> Scalar:
    """Sum over outputs v of the integral of (N_v - f_v)^2 p_v"""

    problems = _component_problems(problem, theta.arch.output_dim)
    _check_1d(theta, problems)
    outputs, _ = propagate_pl(theta)
    risks = [function_risk(h, p) for h, p in zip(outputs, problems)]
    total = risks[0]
    for r in risks[1:]:
        total = total + r
    return total


def grad_deep_exact_1d(
    theta: DeepParams, problem: Union[Problem, Sequence[Problem]]
) -> np.ndarray:
    """Generalized gradient integrated exactly cell by cell

    On a cell with fixed activation pattern the activations are affine,
    a^k = alpha_k x + beta_k, and the backpropagated error of layer k is
    M_k e(x) with e_v = 2 (N_v - f_v) p_v. Only the moments of e over the
    cell are needed. Exact parameters and problems give an object array of
    rationals.
    """

    arch = theta.arch
    problems = _component_problems(problem, arch.output_dim)
    _check_1d(theta, problems)
    outputs, decomposition = propagate_pl(theta)

    lo, _ = arch.domain
    zero = 0 * theta.theta[0] * lo
    one = zero + 1
    identity = PiecewisePoly.from_poly(Poly((0, 1)), arch.domain)
    errors = [
        (h.to_piecewise_poly() - p.target) * p.density * 2
        for h, p in zip(outputs, problems)
    ]
    moments = [e * identity for e in errors]
    layers = [theta.layer(k) for k in range(1, arch.depth + 1)]

    grad_w = [
        [[zero] * arch.layers[k - 1] for _ in range(arch.layers[k])]
        for k in range(1, arch.depth + 1)
    ]
    grad_b = [[zero] * arch.layers[k] for k in range(1, arch.depth + 1)]

    for c, (left, right) in enumerate(decomposition.cells()):
        m0 = [e.integrate(left, right) for e in errors]
        m1 = [m.integrate(left, right) for m in moments]
        pattern = decomposition.patterns[c]

        alpha, beta = [[one]], [[zero]]
        for k in range(1, arch.depth):
            weights, bias = layers[k - 1]
            active = pattern[k - 1]
            alpha.append([
                sum((w * a for w, a in zip(row, alpha[-1])), zero) if on else zero
                for row, on in zip(weights, active)
            ])
            beta.append([
                sum((w * b for w, b in zip(row, beta[-1])), zero) + bi if on else zero
                for row, bi, on in zip(weights, bias, active)
            ])

        back = [
            [one if u == v else zero for v in range(arch.output_dim)]
            for u in range(arch.output_dim)
        ]
        for k in range(arch.depth, 0, -1):
            rows = arch.layers[k]
            for i in range(rows):
                mass = sum((back[i][v] * m0[v] for v in range(arch.output_dim)), zero)
                first = sum((back[i][v] * m1[v] for v in range(arch.output_dim)), zero)
                grad_b[k - 1][i] += mass
                for j in range(arch.layers[k - 1]):
                    grad_w[k - 1][i][j] += alpha[k - 1][j] * first + beta[k - 1][j] * mass
            if k > 1:
                weights, _ = layers[k - 1]
                active = pattern[k - 2]
                back = [
                    [
                        sum((weights[u][j] * back[u][v] for u in range(rows)), zero)
                        if active[j] else zero
                        for v in range(arch.output_dim)
                    ]
                    for j in range(arch.layers[k - 1])
                ]

    flat = []
    for matrix, bias in zip(grad_w, grad_b):
        for row in matrix:
            flat.extend(row)
        flat.extend(bias)
    if is_exact(flat):
        return np.array(flat, dtype=object)
    return np.array([float(g) for g in flat])


def _smoothed_setup(theta: DeepParams, problem, r: float):
    if r < 1:
        raise PreconditionError(f"smoothing parameter must be >= 1, got {r}")
    problems = _component_problems(problem, theta.arch.output_dim)
    _check_1d(theta, problems)
    _, decomposition = propagate_pl(theta)
    edges = sorted(
        {float(x) for x in decomposition.breakpoints}
        | {float(x) for p in problems for x in p.breakpoints}
    )
    targets = [p.target.as_float() for p in problems]
    densities = [p.density.as_float() for p in problems]
    return edges, targets, densities


def risk_smoothed_deep(
    theta: DeepParams,
    problem: Union[Problem, Sequence[Problem]],
    r: float,
    smoothing: SmoothingFamily = DEFAULT_SMOOTHING,
) -> float:
    """Risk of the per-layer smoothed realization by adaptive quadrature"""

    edges, targets, densities = _smoothed_setup(theta, problem, r)

    def integrand(x):
        output = forward_smoothed(theta, [x], r, smoothing)
        return sum(
            (output[v] - t(x)) ** 2 * p(x) for v, (t, p) in enumerate(zip(targets, densities))
        )

    total = 0.0
    for left, right in zip(edges, edges[1:]):
        value, _ = integrate.quad(
            integrand, left, right,
            epsabs=SMOOTHED_EPSABS, epsrel=SMOOTHED_EPSREL, limit=SMOOTHED_LIMIT,
        )
        total += value
    return total


def grad_smoothed_deep(
    theta: DeepParams,
    problem: Union[Problem, Sequence[Problem]],
    r: float,
    smoothing: SmoothingFamily = DEFAULT_SMOOTHING,
) -> np.ndarray:
    """Gradient of :func:`risk_smoothed_deep` by smooth backpropagation

    Raises:
        PreconditionError: If r < 1.
    """

    edges, targets, densities = _smoothed_setup(theta, problem, r)

    def integrand(x):
        point = np.array([[x]])
        y = np.array([[t(x) for t in targets]])
        scale = np.array([[p(x) for p in densities]])
        return _backward(
            theta,
            point,
            y,
            lambda k, z: np.asarray(smoothing.value(z, _smoothed_parameter(r, k))),
            lambda k, z: np.asarray(smoothing.derivative(z, _smoothed_parameter(r, k))),
            scale,
        )[0]

    total = np.zeros(theta.arch.param_count)
    for left, right in zip(edges, edges[1:]):
        value, _ = integrate.quad_vec(
            integrand, left, right,
            epsabs=SMOOTHED_EPSABS, epsrel=SMOOTHED_EPSREL, limit=SMOOTHED_LIMIT,
        )
        total += value
    return total


def deep_objective(
    arch: DeepArch,
    problem: Union[Problem, Sequence[Problem], CallableProblem],
    rule: Optional[QuadratureRule] = None,
) -> Objective:
    """Risk and generalized gradient of a deep network as an :class:`Objective`

    Scalar-input problems use the exact cell-wise integration; callable
    problems need a quadrature rule.
    """

    if isinstance(problem, CallableProblem):
        if rule is None:
            raise PreconditionError("callable problems need a quadrature rule")
        return Objective(
            lambda th: risk_quadrature(DeepParams(arch, th), problem, rule),
            lambda th: grad_backprop_average(DeepParams(arch, th), problem, rule),
            arch.param_count,
            name=f"deep{arch.layers!r}",
        )

    def signature(th):
        _, decomposition = propagate_pl(DeepParams(arch, th))
        return decomposition.patterns

    return Objective(
        lambda th: risk_deep_exact_1d(DeepParams(arch, th), problem),
        lambda th: grad_deep_exact_1d(DeepParams(arch, th), problem),
        arch.param_count,
        signature,
        name=f"deep{arch.layers!r}",
    )


@dataclass(frozen=True)
class WidthScanRow:
    layers: Tuple[int, ...]
    min_width: int
    best_risk: float
    seeds_used: int
    warm_start: bool = False


def _warm_start(arch: DeepArch, problem: Problem) -> Optional[List[float]]:
    """Exact synthesis of a piecewise linear target as a parameter vector, if any"""

    if not arch.is_shallow or problem.target.degree > 1:
        return None
    theta = synthesize(canonicalize(problem.target), arch.layers[1])
    if theta is None:
        return None
    return [float(t) for t in theta.theta]


def width_scan(
    archs: Sequence[DeepArch],
    problem: Problem,
    budget: int,
    config: GDConfig,
    jobs: int = 1,
) -> List[WidthScanRow]:
    """Best risk found per architecture with `budget` seeded GD runs each

    For (1, H, 1) architectures and a piecewise linear target that is
    representable at width H, run kappa = 0 starts from the synthesized
    parameters instead of its random draw.

    Raises:
        PreconditionError: If budget < 1.
    """

    if budget < 1:
        raise PreconditionError(f"search budget must be >= 1, got {budget}")

    float_problem = problem.as_float()
    search = replace(config, init_count=budget)
    rows = []
    for arch in archs:
        if arch.is_shallow:
            objective = shallow_objective(arch.to_shallow(), float_problem)
        else:
            objective = deep_objective(arch, float_problem)

        inits = None
        warm = _warm_start(arch, problem)
        if warm is not None:
            inits = sample_inits(search, objective.dim)
            inits[0] = warm
        result = multistart(objective, search, jobs=jobs, inits=inits)
        best = result.final_risk
        rows.append(
            WidthScanRow(arch.layers, arch.min_width, float(best), budget, warm is not None)
        )
        logger.info("width scan %r: best risk %.6g", arch.layers, best)

    risks = [row.best_risk for row in rows]
    if any(b > a for a, b in zip(risks, risks[1:])):
        logger.info("best risks do not decrease monotonically: %r", risks)
    return rows
