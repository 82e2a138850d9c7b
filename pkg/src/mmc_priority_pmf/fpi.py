"""Fixed-point iteration on the truncated stationary balance equations.

The iterate lives on a ghost-padded lattice covering [-1, N_max+1]^K so that
reads of n - e_k at the lower boundary and n + e_k at the upper boundary see
zero probability without any special casing. Ghost cells are never written.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from mmc_priority_pmf.config import DEFAULT_MEMORY_LIMIT, check_memory
from mmc_priority_pmf.exceptions import (
    DimensionMismatchError,
    InvalidParameterError,
    NoConvergenceError,
    NonPositiveProbabilityError,
    OnBoundaryError,
)

LOGGER = logging.getLogger(__name__)

DEFAULT_TOLERANCE = 1e-9
DEFAULT_MAX_ITERATIONS = 1_000_000
TRANSIENT_ITERATIONS = 10
SLOW_CONVERGENCE_LOAD = 0.95
FLOAT_BYTES = 8


class PmfKind(Enum):
    WAIT_CONDITIONAL = "wait-conditional"
    FULL = "full"


@dataclass
class JointPmf:
    """Dense joint queue-length PMF, axis 0 = highest priority."""

    values: np.ndarray
    kind: PmfKind
    model: object
    generator: str
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.values.ndim != self.model.levels:
            raise DimensionMismatchError(
                f"PMF array has {self.values.ndim} axes but the model has "
                f"{self.model.levels} levels."
            )

    @property
    def levels(self):
        return self.values.ndim

    @property
    def n_max(self):
        return self.values.shape[0] - 1

    @property
    def shape(self):
        return self.values.shape

    def header(self):
        """Metadata describing the array, shared by every export format."""
        return {
            "K": self.levels,
            "shape": list(self.shape),
            "kind": self.kind.value,
            "generator": self.generator,
            "axis_order": "highest-priority-first",
            **self.model.to_metadata(),
            **self.metadata,
        }


@dataclass(frozen=True)
class FpiResult:
    pmf: JointPmf
    iterations: int
    final_delta: float
    delta_history: tuple = field(repr=False, default=())
    monotonicity_violations: int = 0


def padded_shape(levels, n_max):
    return (n_max + 3,) * levels


def balance_map(padded, model):
    """Apply the balance mapping once; returns a new padded array with zero ghosts."""
    levels = model.levels
    if padded.ndim != levels:
        raise DimensionMismatchError(
            f"Padded array has {padded.ndim} axes but the model has {levels} levels."
        )
    if min(padded.shape) < 3:
        raise DimensionMismatchError(f"Padded array shape {padded.shape} has no interior.")

    core = (slice(1, -1),) * levels
    result = np.zeros_like(padded)
    updated = result[core]

    for axis, rate in enumerate(model.rates):
        if rate:
            updated += rate * padded[_shifted(levels, axis, -1)]
        # arrivals above n + e_axis only reach n when every higher level is empty
        upper = padded[_shifted(levels, axis, 1)]
        leading = (0,) * axis
        updated[leading] += upper[leading]

    updated[(0,) * levels] += padded[(1,) * levels]
    updated /= 1.0 + model.r
    return result


def run_fpi(
    model,
    n_max,
    tol=DEFAULT_TOLERANCE,
    max_iters=DEFAULT_MAX_ITERATIONS,
    memory_limit=DEFAULT_MEMORY_LIMIT,
    output=None,
    progress_every=10_000,
):
    """Iterate the balance mapping with uniform leakage amortization until converged."""
    output = output or _noop
    levels = model.levels
    if n_max < 1:
        raise InvalidParameterError(f"N_max must be at least 1, got {n_max}.")
    if not tol > 0:
        raise InvalidParameterError(f"Tolerance must be positive, got {tol}.")
    if max_iters < 1:
        raise InvalidParameterError(f"max_iters must be at least 1, got {max_iters}.")

    shape = padded_shape(levels, n_max)
    check_memory(3 * FLOAT_BYTES * int(np.prod(shape, dtype=object)), memory_limit, "FPI lattice")
    if model.r >= SLOW_CONVERGENCE_LOAD:
        LOGGER.warning(
            "Total traffic intensity r=%.4g is close to 1; the fixed-point iteration "
            "converges very slowly.",
            model.r,
        )

    core = (slice(1, -1),) * levels
    origin = (0,) * levels
    cells = (n_max + 1) ** levels

    current = np.zeros(shape)
    current[(1,) * levels] = 1.0
    mass = 1.0
    history = []
    violations = 0
    delta = np.inf

    for iteration in range(1, max_iters + 1):
        candidate = balance_map(current, model)
        interior = candidate[core]
        leak = mass - interior.sum()
        interior += leak / cells
        interior /= interior[origin]

        delta = float(np.max(np.abs(interior - current[core])))
        if history and iteration > TRANSIENT_ITERATIONS and delta > history[-1]:
            if not violations:
                LOGGER.warning(
                    "FPI update norm increased at iteration %d (%.3e > %.3e).",
                    iteration,
                    delta,
                    history[-1],
                )
            violations += 1
        history.append(delta)

        current = candidate
        mass = interior.sum()
        if iteration % progress_every == 0:
            output(f"FPI iteration {iteration}: delta={delta:.3e}")
        if delta <= tol:
            break
    else:
        raise NoConvergenceError(
            f"Fixed-point iteration did not reach tolerance {tol:g} within {max_iters} "
            "iterations.",
            iterations=max_iters,
            last_delta=delta,
        )

    if violations:
        LOGGER.warning("FPI update norm increased %d time(s) after the transient.", violations)

    values = (1.0 - model.r) * current[core]
    output(f"FPI converged after {iteration} iterations (delta={delta:.3e}).")
    pmf = JointPmf(
        values=np.ascontiguousarray(values),
        kind=PmfKind.WAIT_CONDITIONAL,
        model=model,
        generator="fpi",
        metadata={"iterations": iteration, "final_delta": delta, "tol": tol},
    )
    return FpiResult(
        pmf=pmf,
        iterations=iteration,
        final_delta=delta,
        delta_history=tuple(history),
        monotonicity_violations=violations,
    )


def interior_balance_residual(pmf, n):
    """|ln P(n) - ln P_nn(n)| at one interior lattice point."""
    values = pmf.values
    n = tuple(int(index) for index in n)
    if len(n) != values.ndim:
        raise DimensionMismatchError(f"Index {n} does not match a {values.ndim}-level PMF.")
    if any(index < 1 for index in n):
        raise OnBoundaryError(f"Index {n} lies on the boundary; every n_k must be >= 1.")
    if n[0] + 1 > pmf.n_max or any(index > pmf.n_max for index in n):
        raise OnBoundaryError(f"Index {n} needs n + e_1 inside the lattice [0, {pmf.n_max}].")

    rates = pmf.model.rates
    point = values[n]
    above = values[(n[0] + 1,) + n[1:]]
    below = [values[n[:axis] + (n[axis] - 1,) + n[axis + 1 :]] for axis in range(len(n))]
    if point <= 0 or above <= 0 or any(value <= 0 for value in below):
        raise NonPositiveProbabilityError(f"Non-positive probability in the stencil around {n}.")

    neighbours = (above + sum(rate * value for rate, value in zip(rates, below))) / (
        1.0 + pmf.model.r
    )
    return abs(np.log(point) - np.log(neighbours))


def iter_interior_residuals(values, rates, n_lim=None):
    """Yield (n_1, P, residual) over the interior [1, n_lim]^K one top-level slice at a time.

    Residual entries are NaN where P(n) or its neighbour average is not positive.
    """
    n_max = values.shape[0] - 1
    n_lim = n_max if n_lim is None else min(n_lim, n_max)
    levels = values.ndim
    total = float(np.sum(rates))
    inner = (slice(1, n_lim + 1),) * (levels - 1)

    for top in range(1, min(n_lim, n_max - 1) + 1):
        point = values[top][inner]
        neighbours = values[top + 1][inner] + rates[0] * values[top - 1][inner]
        for axis in range(1, levels):
            shifted = list(inner)
            shifted[axis - 1] = slice(0, n_lim)
            neighbours = neighbours + rates[axis] * values[top][tuple(shifted)]
        neighbours = neighbours / (1.0 + total)

        with np.errstate(divide="ignore", invalid="ignore"):
            residual = np.abs(np.log(point) - np.log(neighbours))
        residual = np.where((point > 0) & (neighbours > 0), residual, np.nan)
        yield top, np.asarray(point), np.asarray(residual)


def _shifted(levels, axis, offset):
    index = [slice(1, -1)] * levels
    index[axis] = slice(0, -2) if offset < 0 else slice(2, None)
    return tuple(index)


def _noop(_message):
    return None
