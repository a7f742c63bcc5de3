"""Gradient flow and gradient descent on network risks

Everything here works on flat parameter arrays through an :class:`Objective`.
Float arrays are the normal case; object arrays of rationals pass through
:func:`gd_run` unchanged, so exact objectives give exact iterates.
"""

import logging
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Hashable, List, Optional, Sequence, Tuple

import numpy as np

from ._base import (
    ConfigError,
    PreconditionError,
    Registered,
    collect_registered,
    is_exact,
    make_formatter,
)
from .shallow import (
    Problem,
    ShallowArch,
    ShallowParams,
    cell_signature,
    grad_exact,
    risk_exact,
)


logger = logging.getLogger(__name__)

DIVERGENCE_NORM = 1e12
DEFAULT_GF_STEP = 1e-3
CSV_FORMAT = ".17g"


@dataclass(frozen=True)
class Objective:
    """Risk and generalized gradient on parameter vectors of length `dim`

    `signature` optionally labels the smooth region of the risk containing
    a parameter vector.
    """

    risk: Callable[[np.ndarray], Any]
    gradient: Callable[[np.ndarray], np.ndarray]
    dim: int
    signature: Optional[Callable[[np.ndarray], Hashable]] = None
    name: str = "objective"


def shallow_objective(arch: ShallowArch, problem: Problem) -> Objective:
    def params(th):
        return ShallowParams(arch, tuple(th))

    return Objective(
        lambda th: risk_exact(params(th), problem),
        lambda th: grad_exact(params(th), problem),
        arch.param_count,
        lambda th: cell_signature(params(th), problem),
        name=f"shallow(H={arch.width})",
    )


def quadratic_objective(dim: int) -> Objective:
    """The surrogate risk ||theta||^2 with gradient 2 theta"""

    return Objective(
        lambda th: float(np.dot(th, th)),
        lambda th: 2 * np.asarray(th, dtype=float),
        dim,
        name="quadratic",
    )


def _validate_positive(section: str, **values) -> None:
    for name, value in values.items():
        if value is not None and not value > 0:
            raise ConfigError(f"{section}.{name} must be positive, got {value!r}")


@dataclass
class GFConfig:
    """Gradient flow integration settings

    The default step is 1e-3 / (1 + ||G(theta_0)||). The energy residual
    |L(T) - L(0) + int_0^T ||G||^2| is checked every `energy_check_interval`
    steps against `tolerance` * (1 + L(0)); on failure the step is halved
    and the run restarted, at most `max_halvings` times.
    """

    step: Optional[float] = None
    horizon: float = 1.0
    integrator: str = "rk4"
    energy_check_interval: int = 100
    tolerance: float = 1e-6
    max_halvings: int = 8
    stride: int = 1

    def validate(self) -> None:
        _validate_positive(
            "gf",
            step=self.step,
            tolerance=self.tolerance,
            energy_check_interval=self.energy_check_interval,
            stride=self.stride,
        )
        if self.horizon < 0:
            raise ConfigError(f"gf.horizon must be >= 0, got {self.horizon!r}")
        if self.max_halvings < 0:
            raise ConfigError(f"gf.max_halvings must be >= 0, got {self.max_halvings!r}")
        if self.integrator not in INTEGRATORS:
            raise ConfigError(
                f"unknown integrator {self.integrator!r}, "
                f"expected one of {sorted(INTEGRATORS)!r}"
            )


@dataclass
class GDConfig:
    """Gradient descent and random initialization settings"""

    learning_rate: float = 1e-2
    steps: int = 1000
    init_count: int = 1
    radius: float = 2.0
    sampler: str = "uniform"
    seed: int = 0
    stride: int = 1

    def validate(self) -> None:
        _validate_positive(
            "gd",
            learning_rate=self.learning_rate,
            init_count=self.init_count,
            radius=self.radius,
            stride=self.stride,
        )
        if self.steps < 0:
            raise ConfigError(f"gd.steps must be >= 0, got {self.steps!r}")
        if self.seed < 0:
            raise ConfigError(f"gd.seed must be >= 0, got {self.seed!r}")
        if self.sampler not in SAMPLERS:
            raise ConfigError(
                f"unknown sampler {self.sampler!r}, expected one of {sorted(SAMPLERS)!r}"
            )


@dataclass
class Trajectory:
    """Recorded run of GD (`kind` "gd", times are step numbers) or GF

    `risks`, `grad_norms` and `times` hold every step; parameters and
    gradients are kept at `snapshot_steps` only (every `stride` steps plus
    the last one).
    """

    kind: str
    times: np.ndarray
    risks: np.ndarray
    grad_norms: np.ndarray
    snapshot_steps: np.ndarray
    thetas: np.ndarray
    gradients: np.ndarray
    step_size: Any
    energy: Optional[np.ndarray] = None
    residual: Optional[float] = None
    diverged: bool = False

    def __len__(self):
        return len(self.risks)

    @property
    def final_risk(self) -> float:
        return float(self.risks[-1])

    @property
    def final_theta(self) -> np.ndarray:
        return self.thetas[-1]

    def write_csv(self, path, formatter: Optional[Callable] = None) -> None:
        if formatter is None:
            formatter = make_formatter(CSV_FORMAT)
        dim = self.thetas.shape[1] if self.thetas.ndim == 2 else 0
        header = ["step_or_time", "risk", "grad_norm"] + [f"theta_{i}" for i in range(dim)]
        with open(path, "w") as fp:
            fp.write(",".join(header) + "\n")
            for row, step in enumerate(self.snapshot_steps):
                values = [self.times[step], self.risks[step], self.grad_norms[step]]
                values += list(self.thetas[row])
                fp.write(",".join(formatter(v) for v in values) + "\n")


def write_plotdata(
    trajectories: Sequence[Trajectory], path, formatter: Optional[Callable] = None
) -> None:
    """gnuplot data file, one index block per trajectory"""

    if formatter is None:
        formatter = make_formatter(CSV_FORMAT)
    with open(path, "w") as fp:
        for kappa, trajectory in enumerate(trajectories):
            if kappa:
                fp.write("\n\n")
            fp.write(f"# trajectory {kappa} ({trajectory.kind})\n")
            fp.write("# step_or_time risk grad_norm\n")
            for t, risk, norm in zip(
                trajectory.times, trajectory.risks, trajectory.grad_norms
            ):
                fp.write(f"{formatter(t)} {formatter(risk)} {formatter(norm)}\n")


def _as_vector(theta) -> np.ndarray:
    values = list(theta)
    if is_exact(values):
        return np.array(values, dtype=object)
    return np.array(values, dtype=float)


def _norm(vector) -> float:
    return float(np.linalg.norm(np.asarray(vector, dtype=float)))


def _diverged(theta, risk) -> bool:
    risk = float(risk)
    return not math.isfinite(risk) or not _norm(theta) <= DIVERGENCE_NORM


class _Recorder:
    def __init__(self, stride: int):
        self.stride = stride
        self.times, self.risks, self.norms = [], [], []
        self.steps, self.thetas, self.gradients = [], [], []
        self.energy = []

    def record(self, t, theta, risk, gradient, energy=None):
        n = len(self.risks)
        self.times.append(t)
        self.risks.append(float(risk))
        self.norms.append(_norm(gradient))
        if energy is not None:
            self.energy.append(energy)
        if n % self.stride == 0:
            self.steps.append(n)
            self.thetas.append(theta)
            self.gradients.append(gradient)

    def close_snapshot(self, theta, gradient):
        last = len(self.risks) - 1
        if not self.steps or self.steps[-1] != last:
            self.steps.append(last)
            self.thetas.append(theta)
            self.gradients.append(gradient)

    def build(self, kind, step_size, residual=None, diverged=False) -> Trajectory:
        return Trajectory(
            kind=kind,
            times=np.array(self.times, dtype=float),
            risks=np.array(self.risks, dtype=float),
            grad_norms=np.array(self.norms, dtype=float),
            snapshot_steps=np.array(self.steps, dtype=int),
            thetas=np.array(self.thetas),
            gradients=np.array(self.gradients),
            step_size=step_size,
            energy=np.array(self.energy, dtype=float) if self.energy else None,
            residual=residual,
            diverged=diverged,
        )


def gd_run(
    theta0: Sequence,
    objective: Objective,
    learning_rate,
    steps: int,
    stride: int = 1,
) -> Trajectory:
    """theta_{k+1} = theta_k - learning_rate * G(theta_k) for `steps` steps

    A NaN risk or ||theta|| > 1e12 stops the run and marks it diverged.

    Raises:
        PreconditionError: For a negative learning rate or step count.
    """

    if learning_rate < 0:
        raise PreconditionError(f"learning rate must be >= 0, got {learning_rate!r}")
    if steps < 0:
        raise PreconditionError(f"step count must be >= 0, got {steps!r}")

    theta = _as_vector(theta0)
    recorder = _Recorder(stride)
    diverged = False
    for n in range(steps + 1):
        risk = objective.risk(theta)
        gradient = np.asarray(objective.gradient(theta))
        recorder.record(n, theta, risk, gradient)
        if _diverged(theta, risk):
            diverged = True
            logger.warning("gradient descent diverged at step %d", n)
            break
        if n == steps:
            break
        theta = theta - learning_rate * gradient
    recorder.close_snapshot(theta, gradient)
    return recorder.build("gd", learning_rate, diverged=diverged)


class Integrator(Registered):
    """One fixed step of an explicit Runge-Kutta method for y' = field(y)"""

    order = 0


class EulerIntegrator(Integrator):
    _registry_name = "euler"
    order = 1

    def __call__(self, field, y, h):
        return y + h * field(y)


class RK4Integrator(Integrator):
    _registry_name = "rk4"
    order = 4

    def __call__(self, field, y, h):
        k1 = field(y)
        k2 = field(y + h / 2 * k1)
        k3 = field(y + h / 2 * k2)
        k4 = field(y + h * k3)
        return y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def _energy_field(objective: Objective):
    """Field of the flow augmented by the running integral of ||G||^2"""

    def field(y):
        gradient = np.asarray(objective.gradient(y[:-1]), dtype=float)
        return np.append(-gradient, gradient @ gradient)

    return field


def _gf_attempt(theta0, objective, config, step, risk0, tolerance):
    integrator = INTEGRATORS[config.integrator]()
    flow = _energy_field(objective)
    count = int(math.ceil(config.horizon / step - 1e-9)) if config.horizon > 0 else 0
    h = config.horizon / count if count else step

    y = np.append(theta0, 0.0)
    recorder = _Recorder(config.stride)
    gradient = np.asarray(objective.gradient(theta0), dtype=float)
    recorder.record(0.0, theta0, risk0, gradient, energy=0.0)
    residual = 0.0

    for n in range(1, count + 1):
        y = integrator(flow, y, h)
        theta = y[:-1]
        risk = objective.risk(theta)
        gradient = np.asarray(objective.gradient(theta), dtype=float)
        recorder.record(n * h, theta, risk, gradient, energy=y[-1])
        if _diverged(theta, risk):
            logger.warning("gradient flow diverged at t = %g", n * h)
            recorder.close_snapshot(theta, gradient)
            return recorder.build("gf", h, residual, diverged=True), True

        if n % config.energy_check_interval == 0 or n == count:
            residual = abs(float(risk) - risk0 + y[-1])
            if residual > tolerance:
                recorder.close_snapshot(theta, gradient)
                return recorder.build("gf", h, residual), False

    recorder.close_snapshot(y[:-1], gradient)
    return recorder.build("gf", h, residual), True


def gf_integrate(theta0: Sequence, objective: Objective, config: GFConfig) -> Trajectory:
    """Fixed-step integration of theta' = -G(theta) with energy monitoring

    The energy integral is carried as an extra component of the state, so
    its error is of the order of the integrator.
    """

    config.validate()
    theta0 = np.array([float(t) for t in theta0])
    risk0 = float(objective.risk(theta0))
    step = config.step
    if step is None:
        step = DEFAULT_GF_STEP / (1 + _norm(objective.gradient(theta0)))
    tolerance = config.tolerance * (1 + abs(risk0))

    for halving in range(config.max_halvings + 1):
        trajectory, accepted = _gf_attempt(theta0, objective, config, step, risk0, tolerance)
        if accepted:
            return trajectory
        logger.debug(
            "energy residual %.3g above %.3g, halving step to %.3g",
            trajectory.residual, tolerance, step / 2,
        )
        step /= 2

    logger.warning(
        "energy residual %.3g still above %.3g after %d halvings",
        trajectory.residual, tolerance, config.max_halvings,
    )
    return _gf_attempt(theta0, objective, config, step, risk0, float("inf"))[0]


class Sampler(Registered):
    """Distribution of random initial parameter vectors"""


class UniformSampler(Sampler):
    _registry_name = "uniform"

    def __call__(self, rng, dim, radius):
        return rng.uniform(-radius, radius, dim)


class CauchySampler(Sampler):
    """Componentwise standard Cauchy; every ball has positive probability"""

    _registry_name = "cauchy"

    def __call__(self, rng, dim, radius):
        return rng.standard_cauchy(dim)


def stream(seed: int, kappa: int) -> np.random.Generator:
    """Counter-based generator of trajectory kappa, independent of the run count"""

    return np.random.Generator(
        np.random.Philox(np.random.SeedSequence(seed, spawn_key=(kappa,)))
    )


def sample_inits(config: GDConfig, dim: int, count: Optional[int] = None) -> np.ndarray:
    count = config.init_count if count is None else count
    sampler = SAMPLERS[config.sampler]()
    return np.array(
        [sampler(stream(config.seed, kappa), dim, config.radius) for kappa in range(count)]
    ).reshape(count, dim)


@dataclass
class MultistartResult:
    """Runs of a multi-start sweep and the per-step risk argmin

    `best_index[n]` is the smallest kappa minimizing the risk at step n
    over runs with a finite risk there (-1 if there is none).
    """

    trajectories: List[Trajectory]
    best_index: np.ndarray
    best_risks: np.ndarray
    inits: np.ndarray = field(repr=False, default=None)

    @property
    def best_kappa(self) -> int:
        return int(self.best_index[-1])

    @property
    def final_risk(self) -> float:
        return float(self.best_risks[-1])

    @property
    def diverged_count(self) -> int:
        return sum(t.diverged for t in self.trajectories)

    @property
    def all_diverged(self) -> bool:
        return self.diverged_count == len(self.trajectories)

    @property
    def best(self) -> Optional[Trajectory]:
        if self.best_kappa < 0:
            return None
        return self.trajectories[self.best_kappa]


def select_best(trajectories: Sequence[Trajectory], steps: int):
    """Per-step argmin over runs

    Steps a run did not reach count as NaN. Only NaN risks are excluded, so a
    diverged run still competes with the finite risks it recorded.
    """

    risks = np.full((len(trajectories), steps + 1), np.nan)
    for kappa, trajectory in enumerate(trajectories):
        values = np.asarray(trajectory.risks[: steps + 1], dtype=float)
        risks[kappa, : len(values)] = np.where(np.isfinite(values), values, np.nan)

    finite = np.where(np.isnan(risks), np.inf, risks)
    best_index = np.argmin(finite, axis=0)
    empty = np.all(np.isnan(risks), axis=0)
    best_index[empty] = -1
    best_risks = np.where(empty, np.nan, finite[np.maximum(best_index, 0), np.arange(steps + 1)])
    return best_index, best_risks


def multistart(
    objective: Objective,
    config: GDConfig,
    jobs: int = 1,
    inits: Optional[np.ndarray] = None,
) -> MultistartResult:
    """K gradient descent runs from seeded random initializations

    Results do not depend on `jobs`: each run draws from its own stream.
    """

    config.validate()
    if inits is None:
        inits = sample_inits(config, objective.dim)

    def run(kappa):
        return gd_run(inits[kappa], objective, config.learning_rate, config.steps, config.stride)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            trajectories = list(pool.map(run, range(len(inits))))
    else:
        trajectories = [run(kappa) for kappa in range(len(inits))]

    best_index, best_risks = select_best(trajectories, config.steps)
    result = MultistartResult(trajectories, best_index, best_risks, inits)
    logger.info(
        "multistart %s: K = %d, final min risk %.6g (kappa = %d, %d diverged)",
        objective.name, len(inits), result.final_risk, result.best_kappa,
        result.diverged_count,
    )
    return result


@dataclass
class DescentReport:
    """Steps satisfying L_{k+1} <= L_k - (gamma / 2) ||G_k||^2 + tolerance

    `fraction` is taken over steps that stay inside one smooth region; it is
    1 when no step was checked.
    """

    lipschitz_estimate: float
    step_ok: bool
    checked: int
    satisfied: int
    crossing: int

    @property
    def fraction(self) -> float:
        return self.satisfied / self.checked if self.checked else 1.0


def descent_check(
    trajectory: Trajectory,
    objective: Optional[Objective] = None,
    tolerance: float = 1e-12,
) -> DescentReport:
    """Check the one-step descent inequality along a GD trajectory

    Only consecutive snapshots one step apart are compared. With an
    objective that labels smooth regions, steps changing the label are
    counted as crossings and not checked.
    """

    gamma = float(trajectory.step_size)
    steps = trajectory.snapshot_steps
    thetas = np.asarray(trajectory.thetas, dtype=float)
    gradients = np.asarray(trajectory.gradients, dtype=float)

    pairs = [k for k in range(len(steps) - 1) if steps[k + 1] == steps[k] + 1]
    estimate = 0.0
    for k in pairs:
        move = np.linalg.norm(thetas[k + 1] - thetas[k])
        if move > 0:
            estimate = max(estimate, np.linalg.norm(gradients[k + 1] - gradients[k]) / move)

    step_ok = estimate == 0 or gamma * estimate <= 1 + 1e-12
    if not step_ok:
        logger.warning("learning rate %g exceeds 1 / L = %g", gamma, 1 / estimate)

    checked = satisfied = crossing = 0
    for k in pairs:
        if objective is not None and objective.signature is not None:
            if objective.signature(trajectory.thetas[k]) != objective.signature(
                trajectory.thetas[k + 1]
            ):
                crossing += 1
                continue
        checked += 1
        before = trajectory.risks[steps[k]]
        after = trajectory.risks[steps[k + 1]]
        if after <= before - gamma / 2 * float(gradients[k] @ gradients[k]) + tolerance:
            satisfied += 1

    return DescentReport(float(estimate), step_ok, checked, satisfied, crossing)


def _loglog_fit(x, y) -> Optional[Tuple[float, float, float]]:
    """Slope, intercept and R^2 of log y against log x"""

    if len(x) < 2:
        return None
    lx, ly = np.log(x), np.log(y)
    if np.ptp(lx) == 0:
        return None
    slope, intercept = np.polyfit(lx, ly, 1)
    residual = ly - (slope * lx + intercept)
    total = np.sum((ly - ly.mean()) ** 2)
    r2 = 1.0 - np.sum(residual ** 2) / total if total > 0 else 1.0
    return float(slope), float(intercept), float(r2)


def _tail_start(length: int, tail: float) -> int:
    if not 0 < tail <= 1:
        raise PreconditionError(f"tail fraction must be in (0, 1], got {tail!r}")
    return int(length * (1 - tail))


@dataclass
class RateFit:
    """Power-law fits ||theta_t - ref|| ~ c (1 + t)^-beta and
    L(theta_t) - L(ref) ~ c' (1 + t)^-rate on the trajectory tail"""

    beta: Optional[float]
    beta_constant: Optional[float]
    beta_r2: Optional[float]
    risk_rate: Optional[float]
    risk_constant: Optional[float]
    risk_r2: Optional[float]
    reference_risk: float
    inconclusive: bool = False
    reason: str = ""

    def to_dict(self) -> dict:
        return {
            "beta": self.beta,
            "beta_constant": self.beta_constant,
            "beta_r2": self.beta_r2,
            "risk_rate": self.risk_rate,
            "risk_constant": self.risk_constant,
            "risk_r2": self.risk_r2,
            "reference_risk": self.reference_risk,
            "inconclusive": self.inconclusive,
            "reason": self.reason,
        }


def fit_rate(
    trajectory: Trajectory,
    reference: Optional[np.ndarray] = None,
    reference_risk: Optional[float] = None,
    tail: float = 0.5,
    grad_tolerance: float = 1e-3,
    floor: float = 1e-12,
) -> RateFit:
    """Fit convergence rates on the last `tail` fraction of a trajectory

    The reference point defaults to the final snapshot and the reference
    risk to the final risk. Runs that diverged or did not bring the
    gradient norm below `grad_tolerance` are flagged inconclusive.
    """

    reasons = []
    if trajectory.diverged:
        reasons.append("diverged")
    elif trajectory.grad_norms[-1] > grad_tolerance:
        reasons.append(
            f"final gradient norm {trajectory.grad_norms[-1]:.3g} above {grad_tolerance:g}"
        )

    if reference is None:
        reference = trajectory.final_theta
    reference = np.asarray(reference, dtype=float)
    if reference_risk is None:
        reference_risk = trajectory.final_risk

    start = _tail_start(len(trajectory), tail)
    thetas = np.asarray(trajectory.thetas, dtype=float)
    chosen = [k for k, step in enumerate(trajectory.snapshot_steps) if step >= start]
    t = trajectory.times[trajectory.snapshot_steps[chosen]] if chosen else np.array([])
    distances = np.linalg.norm(thetas[chosen] - reference, axis=1) if chosen else np.array([])
    keep = distances > floor
    distance_fit = _loglog_fit(1 + t[keep], distances[keep])

    gaps = trajectory.risks[start:] - reference_risk
    times = trajectory.times[start:]
    keep = gaps > floor
    risk_fit = _loglog_fit(1 + times[keep], gaps[keep])

    if distance_fit is None and risk_fit is None:
        reasons.append("too few tail points")

    beta = beta_constant = beta_r2 = None
    if distance_fit is not None:
        slope, intercept, beta_r2 = distance_fit
        beta, beta_constant = -slope, math.exp(intercept)
    risk_rate = risk_constant = risk_r2 = None
    if risk_fit is not None:
        slope, intercept, risk_r2 = risk_fit
        risk_rate, risk_constant = -slope, math.exp(intercept)

    return RateFit(
        beta, beta_constant, beta_r2,
        risk_rate, risk_constant, risk_r2,
        float(reference_risk),
        bool(reasons), "; ".join(reasons),
    )


@dataclass
class KLProbe:
    """Empirical exponent alpha and constant c with |dL|^alpha <= c ||G||"""

    alpha: Optional[float]
    constant: Optional[float]
    slope: Optional[float]
    window: Tuple[int, int]
    points: int
    holds: bool
    inconclusive: bool = False
    reason: str = ""

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "constant": self.constant,
            "slope": self.slope,
            "window": list(self.window),
            "points": self.points,
            "holds": self.holds,
            "inconclusive": self.inconclusive,
            "reason": self.reason,
        }


def kl_probe(
    trajectory: Trajectory,
    reference_risk: Optional[float] = None,
    tail: float = 0.5,
    floor: float = 1e-12,
) -> KLProbe:
    """Estimate the Kurdyka-Lojasiewicz exponent on the trajectory tail

    alpha is the slope of log ||G|| against log (L - L_ref), clipped to
    (0, 1] (a non-positive slope gives 1); c is the largest observed
    |dL|^alpha / ||G||.
    """

    if reference_risk is None:
        reference_risk = trajectory.final_risk
    start = _tail_start(len(trajectory), tail)
    window = (start, len(trajectory))
    gaps = trajectory.risks[start:] - reference_risk
    norms = trajectory.grad_norms[start:]
    keep = (gaps > floor) & (norms > 0)
    gaps, norms = gaps[keep], norms[keep]

    if len(gaps) == 0:
        return KLProbe(None, None, None, window, 0, False, True, "empty tail")

    fit = _loglog_fit(gaps, norms)
    if fit is None:
        return KLProbe(None, None, None, window, len(gaps), False, True, "degenerate tail")

    slope = fit[0]
    alpha = 1.0 if slope <= 0 else min(slope, 1.0)
    ratios = gaps ** alpha / norms
    constant = float(ratios.max())
    holds = bool(np.all(gaps ** alpha <= constant * norms * (1 + 1e-12)))
    return KLProbe(alpha, constant, slope, window, len(gaps), holds)


INTEGRATORS = collect_registered(sys.modules[__name__], Integrator)
SAMPLERS = collect_registered(sys.modules[__name__], Sampler)
