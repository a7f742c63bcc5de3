"""Exact representability of piecewise linear functions by shallow networks

A canonical f with Q(f) breakpoints is realized by a width-H network iff
Q(f) <= H - 1, or Q(f) = H and there are odd k and indices
i_1 < ... < i_k <= H + 1 with sum_j (-1)^j A_{i_j}(f) = 0.

With D_i = A_{i+1} - A_i the relation is equivalent to a subset S of the
jumps with A_1 + sum_{i in S} D_i = 0, which is searched meet-in-the-middle.
"""

import bisect
import itertools
import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

from ._base import CapacityError, PreconditionError, Scalar, float_tolerance
from .pwfun import PiecewiseLinear
from .shallow import ShallowArch, ShallowParams


logger = logging.getLogger(__name__)

MAX_SEARCH_WIDTH = 30
FLOAT_ZERO_RTOL = 1e-9


@dataclass(frozen=True)
class SlopeRelationCertificate:
    """Outcome of the representability test

    `witness_indices` (1-based) is present iff the relation holds and
    Q(f) = H. `advisory` marks results obtained in float arithmetic.
    """

    holds: bool
    witness_indices: Optional[Tuple[int, ...]] = None
    advisory: bool = False


def alternating_sum(f: PiecewiseLinear, indices: Sequence[int]) -> Scalar:
    """sum_j (-1)^j A_{i_j}(f) for 1-based indices"""

    total = 0 * f.A[0]
    for j, i in enumerate(indices, 1):
        total = total + (-1) ** j * f.slope(i)
    return total


def _is_zero(value: Scalar, exact: bool, *scale: Scalar) -> bool:
    if exact:
        return value == 0
    return abs(value) <= float_tolerance(FLOAT_ZERO_RTOL, *scale)


def _subset_sums(values: Sequence[Scalar]) -> List[Tuple[Scalar, int]]:
    sums = []
    for mask in range(1 << len(values)):
        total = 0 * values[0] if values else 0
        for k, value in enumerate(values):
            if mask >> k & 1:
                total = total + value
        sums.append((total, mask))
    return sums


def _find_jump_subset(
    first_slope: Scalar, jumps: Sequence[Scalar], exact: bool
) -> Optional[Tuple[int, ...]]:
    """Subset S (0-based jump positions) with first_slope + sum_S jumps = 0"""

    half = len(jumps) // 2
    left, right = jumps[:half], jumps[half:]
    left_sums = sorted(_subset_sums(left), key=lambda item: (item[0], item[1]))
    keys = [s for s, _ in left_sums]
    scale = [first_slope] + list(jumps)
    tolerance = 0 if exact else float_tolerance(FLOAT_ZERO_RTOL, *scale)

    for right_sum, right_mask in _subset_sums(right):
        wanted = -first_slope - right_sum
        position = bisect.bisect_left(keys, wanted - tolerance)
        if position < len(keys) and abs(keys[position] - wanted) <= tolerance:
            left_mask = left_sums[position][1]
            subset = [k for k in range(len(left)) if left_mask >> k & 1]
            subset += [half + k for k in range(len(right)) if right_mask >> k & 1]
            return tuple(subset)
    return None


def indices_from_subset(subset: Sequence[int], breakpoint_count: int) -> Tuple[int, ...]:
    """Witness indices for a jump subset (1-based jump numbers)

    With s_0 = 1, s_m = [m in S] (1 <= m <= Q) and s_{Q+1} = 0 the witness
    consists of the m where s_{m-1} != s_m.
    """

    chosen = set(subset)
    states = [1] + [1 if m in chosen else 0 for m in range(1, breakpoint_count + 1)] + [0]
    return tuple(
        m for m in range(1, breakpoint_count + 2) if states[m - 1] != states[m]
    )


def subset_from_indices(indices: Sequence[int], breakpoint_count: int) -> Tuple[int, ...]:
    """Inverse of :func:`indices_from_subset`"""

    changes = set(indices)
    state, subset = 1, []
    for m in range(1, breakpoint_count + 1):
        if m in changes:
            state = 1 - state
        if state:
            subset.append(m)
    return tuple(subset)


def slope_relation_holds(f: PiecewiseLinear, width: int) -> SlopeRelationCertificate:
    """Decide width-H representability of a canonical f

    Raises:
        PreconditionError: If width < 0.
        CapacityError: If the index search would exceed width 30.
    """

    if width < 0:
        raise PreconditionError(f"width must be non-negative, got {width}")

    exact = f.is_exact
    if f.Q > width:
        return SlopeRelationCertificate(False, advisory=not exact)
    if f.Q <= width - 1:
        return SlopeRelationCertificate(True, advisory=not exact)
    if width > MAX_SEARCH_WIDTH:
        raise CapacityError(
            f"index search capped at width {MAX_SEARCH_WIDTH}, got {width}"
        )

    jumps = [f.A[i + 1] - f.A[i] for i in range(f.Q)]
    subset = _find_jump_subset(f.A[0], jumps, exact)
    if subset is None:
        logger.debug("no alternating slope relation for %r at width %d", f, width)
        return SlopeRelationCertificate(False, advisory=not exact)

    indices = indices_from_subset([k + 1 for k in subset], f.Q)
    return SlopeRelationCertificate(True, indices, advisory=not exact)


def _certifies(f: PiecewiseLinear, indices: Sequence[int]) -> bool:
    if not indices or len(indices) % 2 == 0 or indices[-1] > f.Q + 1:
        return False
    if any(i >= j for i, j in zip(indices, indices[1:])):
        return False
    return _is_zero(alternating_sum(f, indices), f.is_exact, *f.A)


def _peel(f: PiecewiseLinear, indices: Tuple[int, ...], neurons: list) -> Scalar:
    """Peel the last breakpoint off f until a constant remains

    Appends one (w, b, v) per removed breakpoint to `neurons` and returns the
    constant. Each level keeps a certificate for the remaining function.
    """

    while f.Q > 0:
        if not _certifies(f, indices):
            certificate = slope_relation_holds(f, f.Q)
            if not certificate.holds:
                raise RuntimeError(f"lost the slope relation while peeling {f!r}")
            indices = certificate.witness_indices

        m = f.Q
        kink = f.q[m]
        jump = f.A[m] - f.A[m - 1]
        one = 0 * kink + 1
        lo, hi = f.domain

        if indices[-1] != m + 1:
            neurons.append((one, -kink, jump))
            hinge = PiecewiseLinear.from_knots(
                [lo, kink, hi], [0 * kink, 0 * kink, jump * (hi - kink)]
            )
        else:
            neurons.append((-one, kink, jump))
            hinge = PiecewiseLinear.from_knots(
                [lo, kink, hi], [jump * (kink - lo), 0 * kink, 0 * kink]
            )
            if len(indices) >= 3 and indices[-2] == m:
                indices = indices[:-2]
            else:
                indices = indices[:-1] + (m,)
        f = f - hinge

    if not _certifies(f, indices) and not _is_zero(f.A[0], f.is_exact, *f.A):
        raise RuntimeError(f"peeling ended with a non-constant remainder {f!r}")
    return f.knot_values[0]


def synthesize(f: PiecewiseLinear, width: int) -> Optional[ShallowParams]:
    """Width-H parameters realizing f exactly, or None if not representable

    For Q(f) <= H - 1 the neurons are w_j = 1, b_j = -q_{j-1},
    v_1 = A_1, v_j = A_j - A_{j-1} with c = f(a); for Q(f) = H the last
    breakpoint is peeled off recursively as long as the certificate holds.
    Unused neurons are zero.

    Raises:
        PreconditionError: If width < 0.
    """

    certificate = slope_relation_holds(f, width)
    if not certificate.holds:
        return None

    lo, _ = f.domain
    arch = ShallowArch(width, f.domain)
    zero = 0 * lo

    if f.Q <= width - 1:
        one = zero + 1
        w = [one] * (f.Q + 1)
        b = [-f.q[j] for j in range(f.Q + 1)]
        v = [f.A[0]] + [f.A[j] - f.A[j - 1] for j in range(1, f.Q + 1)]
        c = f(lo)
    else:
        neurons = []
        c = _peel(f, certificate.witness_indices, neurons)
        neurons.reverse()
        w = [n[0] for n in neurons]
        b = [n[1] for n in neurons]
        v = [n[2] for n in neurons]

    padding = width - len(w)
    w = w + [zero] * padding
    b = b + [zero] * padding
    v = v + [zero] * padding
    return ShallowParams.pack(arch, w, b, v, c)


def enumerate_witnesses(f: PiecewiseLinear, width: int):
    """Yield every odd, increasing index set certifying f (small widths only)"""

    top = min(width, f.Q) + 1
    for k in range(1, top + 1, 2):
        for indices in itertools.combinations(range(1, top + 1), k):
            if _certifies(f, indices):
                yield indices
