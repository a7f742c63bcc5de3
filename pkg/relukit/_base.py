from abc import ABC, abstractmethod
from fractions import Fraction
from typing import Any, Callable, Iterable, Optional, Union

import numpy as np


Scalar = Union[Fraction, float]

MODES = ("rational", "float")


class DomainError(ValueError):
    """Raised for evaluation outside a domain or for mismatching domains"""


class InvalidInputError(ValueError):
    """Raised for malformed, discontinuous or non-canonical input"""


class PreconditionError(ValueError):
    """Raised when an operation is called outside of its preconditions"""


class CapacityError(ValueError):
    """Raised when an exhaustive search would exceed its size cap"""


class ConfigError(ValueError):
    """Raised for invalid experiment configurations"""


def check_mode(mode: str) -> str:
    if mode not in MODES:
        raise ConfigError(
            f"unknown scalar mode {mode!r}, expected one of {MODES!r}"
        )
    return mode


def to_scalar(value: Any, mode: str = "rational") -> Scalar:
    """Convert a number or a "p/q" string to the scalar type of `mode`

    Floats are converted to rationals exactly (binary expansion).

    Raises:
        InvalidInputError: If `value` can not be interpreted as a number.
    """

    check_mode(mode)
    try:
        if mode == "rational":
            if isinstance(value, Fraction):
                return value
            if isinstance(value, str):
                return Fraction(value.strip())
            if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
                return Fraction(int(value))
            return Fraction(float(value))

        if isinstance(value, str):
            return float(Fraction(value.strip()))
        return float(value)
    except (TypeError, ValueError, ZeroDivisionError) as error:
        raise InvalidInputError(f"not a number: {value!r}") from error


def format_scalar(value: Scalar) -> Union[str, float]:
    """Serialize a scalar: rationals as "p/q" strings, floats unchanged"""

    if is_exact((value,)):
        value = Fraction(value)
        return f"{value.numerator}/{value.denominator}"
    return float(value)


def is_exact(values: Iterable[Any]) -> bool:
    """True if all values are exact (rational or integer) scalars"""

    for value in values:
        if isinstance(value, bool):
            return False
        if not isinstance(value, (Fraction, int, np.integer)):
            return False
    return True


def div(a: Scalar, b: Scalar) -> Scalar:
    """Division that stays exact for exact operands"""

    if is_exact((a, b)):
        return Fraction(a) / Fraction(b)
    return a / b


def sign(value: Scalar) -> int:
    if value > 0:
        return 1
    if value < 0:
        return -1
    return 0


def float_tolerance(rtol: float, *values: Scalar) -> float:
    """Absolute tolerance `rtol` * (1 + max |value|)"""

    scale = max((abs(float(v)) for v in values), default=0.0)
    return rtol * (1.0 + scale)


def make_formatter(f: Optional[str] = None) -> Callable[[Any], str]:
    def formatter(value):
        if f is None:
            return f"{value}"
        if isinstance(value, Fraction):
            return f"{value.numerator}/{value.denominator}"
        return f"{value:{f}}"

    return formatter


class Registered(ABC):
    """Abstract base class for named, registrable strategy types

    Concrete subclasses set `_registry_name`; modules collect them into
    name -> type mappings with :func:`collect_registered`.
    """

    _registry_name = "abstract"

    @abstractmethod
    def __call__(self, *args, **kwargs):
        """Apply the strategy"""

    def __repr__(self):
        return f"{type(self).__name__}()"


def collect_registered(module, base: type = Registered) -> dict:
    """Map `_registry_name` to concrete subclasses of `base` found in `module`"""

    registry = {}
    for name in dir(module):
        obj = getattr(module, name)
        if not isinstance(obj, type):
            continue
        if issubclass(obj, base) and obj is not base:
            if obj._registry_name == "abstract":
                continue
            registry[obj._registry_name] = obj
    return registry
