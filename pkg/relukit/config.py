"""Experiment configuration loaded from one JSON file per experiment

Example::

    {
        "problem": {"target": {"domain": ["0", "1"],
                               "breakpoints": ["0", "1/2", "1"],
                               "pieces": [["1/2", "-1"], ["-1/2", "1"]]}},
        "architecture": {"layers": [1, 2, 1]},
        "mode": "float",
        "seed": 7,
        "gd": {"learning_rate": 0.01, "steps": 10000, "init_count": 64},
        "gf": {"horizon": 50.0}
    }

All randomness is derived from the top-level `seed`.
"""

import copy
import json
import logging
from dataclasses import dataclass, field, fields, replace
from typing import Any, List, Mapping, Optional

from ._base import ConfigError, InvalidInputError, PreconditionError, check_mode, to_scalar
from .deep import DeepArch
from .dynamics import GDConfig, GFConfig
from .shallow import Problem, ShallowArch


logger = logging.getLogger(__name__)

METHODS = ("gd", "gf")

DEFAULT_PROBLEM = {
    "target": {
        "domain": ["0", "1"],
        "breakpoints": ["0", "1/2", "1"],
        "pieces": [["1/2", "-1"], ["-1/2", "1"]],
    }
}


@dataclass
class GradcheckConfig:
    samples: int = 100
    tolerance: float = 1e-4
    step: float = 1e-6

    def validate(self) -> None:
        if self.samples < 0:
            raise ConfigError(f"gradcheck.samples must be >= 0, got {self.samples!r}")
        if not self.tolerance > 0 or not self.step > 0:
            raise ConfigError("gradcheck.tolerance and gradcheck.step must be positive")


@dataclass
class WidthScanConfig:
    widths: List[int] = field(default_factory=lambda: [1, 2, 4])
    budget: int = 4
    hidden_layers: int = 1

    def validate(self) -> None:
        if not self.widths or any(int(w) < 1 for w in self.widths):
            raise ConfigError(f"widthscan.widths must be positive, got {self.widths!r}")
        if self.budget < 1:
            raise ConfigError(f"widthscan.budget must be >= 1, got {self.budget!r}")
        if self.hidden_layers < 1:
            raise ConfigError(
                f"widthscan.hidden_layers must be >= 1, got {self.hidden_layers!r}"
            )


def _section(cls, data: Optional[Mapping[str, Any]], name: str):
    if data is None:
        return cls()
    if not isinstance(data, Mapping):
        raise ConfigError(f"section {name!r} must be an object")
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown keys in {name!r}: {sorted(unknown)!r}")
    try:
        return cls(**data)
    except TypeError as error:
        raise ConfigError(f"invalid section {name!r}: {error}") from error


_TOP_LEVEL = {
    "problem", "architecture", "mode", "seed", "out", "jobs", "method",
    "theta", "gd", "gf", "gradcheck", "widthscan",
}


@dataclass
class ExperimentConfig:
    """Everything a command needs: problem, network, dynamics and output

    Call :meth:`validate` before running anything; it parses the problem and
    checks every section.
    """

    problem: dict = field(default_factory=lambda: copy.deepcopy(DEFAULT_PROBLEM))
    layers: List[int] = field(default_factory=lambda: [1, 2, 1])
    mode: str = "float"
    seed: int = 0
    out: str = "."
    jobs: int = 1
    method: str = "gd"
    theta: Optional[list] = None
    gd: GDConfig = field(default_factory=GDConfig)
    gf: GFConfig = field(default_factory=GFConfig)
    gradcheck: GradcheckConfig = field(default_factory=GradcheckConfig)
    widthscan: WidthScanConfig = field(default_factory=WidthScanConfig)

    _problem: Optional[Problem] = field(default=None, init=False, repr=False, compare=False)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ExperimentConfig":
        if not isinstance(data, Mapping):
            raise ConfigError("configuration must be a JSON object")
        unknown = set(data) - _TOP_LEVEL
        if unknown:
            raise ConfigError(f"unknown configuration keys: {sorted(unknown)!r}")

        architecture = data.get("architecture", {})
        if not isinstance(architecture, Mapping):
            raise ConfigError("architecture must be an object")

        config = cls(
            gd=_section(GDConfig, data.get("gd"), "gd"),
            gf=_section(GFConfig, data.get("gf"), "gf"),
            gradcheck=_section(GradcheckConfig, data.get("gradcheck"), "gradcheck"),
            widthscan=_section(WidthScanConfig, data.get("widthscan"), "widthscan"),
        )
        if "problem" in data:
            config.problem = data["problem"]
        if "layers" in architecture:
            config.layers = list(architecture["layers"])
        for key in ("mode", "seed", "out", "jobs", "method", "theta"):
            if key in data:
                setattr(config, key, data[key])
        config.gd.seed = config.seed
        return config

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            with open(path) as fp:
                data = json.load(fp)
        except OSError as error:
            raise ConfigError(f"cannot read configuration {path!s}: {error}") from error
        except json.JSONDecodeError as error:
            raise ConfigError(f"malformed configuration {path!s}: {error}") from error
        return cls.from_dict(data)

    def with_overrides(self, **overrides) -> "ExperimentConfig":
        """Copy with command-line values (None means keep)"""

        changes = {k: v for k, v in overrides.items() if v is not None}
        config = replace(self, **changes)
        config.gd = replace(config.gd, seed=config.seed)
        return config

    def validate(self) -> "ExperimentConfig":
        """Check every section and parse the problem

        Raises:
            ConfigError: On the first invalid value.
        """

        check_mode(self.mode)
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}, expected one of {METHODS!r}")
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError(f"seed must be a non-negative integer, got {self.seed!r}")
        if not isinstance(self.jobs, int) or self.jobs < 1:
            raise ConfigError(f"jobs must be a positive integer, got {self.jobs!r}")

        for section in (self.gd, self.gf, self.gradcheck, self.widthscan):
            section.validate()

        try:
            problem = Problem.from_dict(self.problem, self.mode)
        except (InvalidInputError, AttributeError, TypeError) as error:
            raise ConfigError(f"invalid problem: {error}") from error

        try:
            arch = DeepArch(tuple(self.layers), problem.domain)
        except (PreconditionError, TypeError, ValueError) as error:
            raise ConfigError(f"invalid architecture: {error}") from error
        if arch.input_dim != 1 or arch.output_dim != 1:
            raise ConfigError(f"layers must start and end with width 1, got {self.layers!r}")

        if self.theta is not None:
            if len(self.theta) != arch.param_count:
                raise ConfigError(
                    f"theta needs {arch.param_count} entries, got {len(self.theta)}"
                )
            try:
                self.theta = [to_scalar(t, self.mode) for t in self.theta]
            except InvalidInputError as error:
                raise ConfigError(f"invalid theta: {error}") from error

        self._problem = problem
        return self

    @property
    def parsed_problem(self) -> Problem:
        if self._problem is None:
            self.validate()
        return self._problem

    @property
    def arch(self) -> DeepArch:
        return DeepArch(tuple(self.layers), self.parsed_problem.domain)

    @property
    def shallow_arch(self) -> Optional[ShallowArch]:
        arch = self.arch
        return arch.to_shallow() if arch.is_shallow else None
