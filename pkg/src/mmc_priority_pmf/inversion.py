"""Trapezoidal Cauchy inversion of PGFs with the mixture-of-radii scheme.

A single contour of radius eta aliases the coefficient at n with those at
n + N, n + 2N, ...; mixing M contours with suitable weights cancels the first
M aliasing terms. The same radii and weights serve the univariate marginals
and every dimension of the joint transform.
"""

import logging
import math
import time
from dataclasses import dataclass

import numpy as np

from mmc_priority_pmf.config import DEFAULT_MEMORY_LIMIT, check_memory
from mmc_priority_pmf.exceptions import (
    DegenerateSpreadError,
    DuplicateRadiiError,
    ImaginaryResidueError,
    InvalidParameterError,
    LevelOutOfRangeError,
    NonFiniteGridSampleError,
    RadiusExceedsConvergenceError,
    WrongKindError,
)
from mmc_priority_pmf.fpi import JointPmf, PmfKind
from mmc_priority_pmf.model import erlang_quantities, high_priority_marginal_pmf
from mmc_priority_pmf.pgf import PgfEvaluator

LOGGER = logging.getLogger(__name__)

# Round-off floor assumed for one inverse FFT output.
FFT_ROUND_OFF = 1e-15
IMAGINARY_TOLERANCE = 1e-10
COMPLEX_BYTES = 16
FLOAT_BYTES = 8
# Candidate common scalings of the contour radii, from the full contour down.
SCALING_CANDIDATES = 64
SCALING_LADDER_END = 1e-3
# Round-off growth tolerated over the best candidate for any total order.
SCALING_AMPLIFICATION = 1e2
SCALING_FLOOR = 1e-24


@dataclass(frozen=True)
class MixtureScheme:
    """Contour radii, mixture weights and transform size of one inversion."""

    radii_count: int
    spread: float
    alpha: float
    n_fft: int
    varsigma: tuple
    xi: tuple
    eta: tuple
    coefficients: tuple

    @property
    def g(self):
        return float(np.prod(self.varsigma) ** (1.0 / self.radii_count))

    def to_metadata(self):
        return {
            "M": self.radii_count,
            "s": self.spread,
            "alpha": self.alpha,
            "N_fft": self.n_fft,
            "radii": list(self.eta),
            "xi": list(self.xi),
            "coefficients": list(self.coefficients),
        }


@dataclass(frozen=True)
class ErrorBudget:
    """Relative error curves of the mixture inversion of a geometric PMF."""

    n: np.ndarray
    overall: np.ndarray
    fft: np.ndarray
    discretization: float
    fft_bound: np.ndarray


@dataclass(frozen=True)
class TimingResult:
    mixture_seconds: float
    single_seconds: float
    predicted_ratio: float

    @property
    def measured_ratio(self):
        return self.single_seconds / self.mixture_seconds


def mixture_coefficients(radii, n):
    """Weights f_m with 1/f_m = prod_{l != m} (1 - (eta_m/eta_l)**N)."""
    radii = np.asarray(radii, dtype=float)
    if radii.ndim != 1 or radii.size < 1:
        raise InvalidParameterError("At least one contour radius is required.")
    if np.any(radii <= 0) or not np.all(np.isfinite(radii)):
        raise InvalidParameterError(f"Contour radii must be positive and finite, got {radii}.")
    if n < 1:
        raise InvalidParameterError(f"Transform size must be at least 1, got {n}.")
    if np.unique(radii).size != radii.size:
        raise DuplicateRadiiError(f"Contour radii must be pairwise distinct, got {radii}.")

    logs = np.log(radii)
    exponents = n * (logs[:, None] - logs[None, :])
    np.fill_diagonal(exponents, -np.inf)
    with np.errstate(over="ignore"):
        factors = 1.0 - np.exp(exponents)
    if np.any(factors == 0.0):
        raise DuplicateRadiiError(
            f"Contour radii {radii} are numerically indistinguishable at N={n}."
        )
    with np.errstate(over="ignore", divide="ignore"):
        return 1.0 / np.prod(factors, axis=1)


def vandermonde_residuals(radii, n, coefficients):
    """Row residuals of the mixture system, each power row scaled by its largest term."""
    logs = np.log(np.asarray(radii, dtype=float))
    coefficients = np.asarray(coefficients, dtype=float)
    residuals = []
    for power in range(len(logs)):
        weights = np.exp(power * n * (logs - logs.max()))
        target = 1.0 if power == 0 else 0.0
        residuals.append(abs(float(np.dot(coefficients, weights)) - target))
    return residuals


def plan_scheme(
    model,
    n_max,
    radii_count=4,
    spread=0.05,
    alpha=12.0,
    n_fft=None,
    allow_any_size=False,
):
    """Choose contour radii, mixture weights and transform size for N_max."""
    if n_max < 1:
        raise InvalidParameterError(f"N_max must be at least 1, got {n_max}.")
    if radii_count < 1:
        raise InvalidParameterError(f"Number of radii must be at least 1, got {radii_count}.")
    if radii_count > 1 and spread == 0:
        raise DegenerateSpreadError("Spread s=0 makes every contour radius coincide.")
    if not 0 <= spread < 1:
        raise InvalidParameterError(f"Spread must lie in [0, 1), got {spread}.")
    if not alpha > 0:
        raise InvalidParameterError(f"Accuracy exponent alpha must be positive, got {alpha}.")

    n_fft = resolve_fft_size(n_max, n_fft, allow_any_size)
    varsigma = _varsigma(radii_count, spread)
    g = float(np.prod(varsigma) ** (1.0 / radii_count))
    base = 10.0 ** (-alpha / (radii_count * n_fft)) / g
    xi = varsigma * base
    if np.any(xi >= 1.0):
        raise RadiusExceedsConvergenceError(
            f"Largest scaled radius {xi.max():.6f} is not below 1; lower the spread or raise "
            "alpha."
        )

    r = model.r
    eta = xi / r if r > 0 else xi
    return MixtureScheme(
        radii_count=radii_count,
        spread=spread,
        alpha=alpha,
        n_fft=n_fft,
        varsigma=tuple(float(value) for value in varsigma),
        xi=tuple(float(value) for value in xi),
        eta=tuple(float(value) for value in eta),
        coefficients=tuple(float(value) for value in mixture_coefficients(eta, n_fft)),
    )


def resolve_fft_size(n_max, n_fft=None, allow_any_size=False):
    if n_fft is None:
        return 1 << n_max.bit_length()
    if n_fft <= n_max:
        raise InvalidParameterError(f"Transform size {n_fft} must exceed N_max={n_max}.")
    if not allow_any_size and n_fft & (n_fft - 1):
        raise InvalidParameterError(
            f"Transform size {n_fft} is not a power of two; pass --allow-any-size to force it."
        )
    return n_fft


def invert_marginal(pgf, scheme, n_max):
    """Coefficients 0..N_max of a univariate PGF analytic inside the largest radius."""
    if n_max >= scheme.n_fft:
        raise InvalidParameterError(
            f"N_max={n_max} must be below the transform size {scheme.n_fft}."
        )
    orders = np.arange(n_max + 1)
    unit = np.exp(-2j * np.pi * np.arange(scheme.n_fft) / scheme.n_fft)
    result = np.zeros(n_max + 1, dtype=complex)

    for eta, weight in zip(scheme.eta, scheme.coefficients):
        samples = np.broadcast_to(np.asarray(pgf(eta * unit), dtype=complex), unit.shape)
        _require_finite(samples, eta)
        coefficients = np.fft.ifft(samples)[: n_max + 1]
        result += weight * coefficients * np.exp(-orders * math.log(eta))

    _require_real(result)
    return result.real.copy()


@dataclass(frozen=True)
class SliceScaling:
    """Contour scalings used for one highest-priority slice.

    ``scalings`` indexes the candidate ladder; ``assignment[s]`` is the ladder
    index whose estimate serves every cell of total order ``s``.
    """

    scalings: tuple
    assignment: np.ndarray


def plan_slice_scalings(
    evaluator,
    scheme,
    n_max,
    amplification=SCALING_AMPLIFICATION,
    floor=SCALING_FLOOR,
):
    """Choose common contour scalings for each slice G_ell of the joint transform.

    A slice has nonnegative coefficients, so its largest modulus on the torus
    of radius rho is G_ell(rho, ..., rho) and the round-off carried by a cell of
    total order s is about eps * G_ell(rho) / rho**s. The full-size contour
    serves the bulk of a slice; as ell grows the low orders need smaller
    contours, since zeta_minus(rho)**ell outgrows zeta_minus(0)**ell. Scalings
    are added greedily until every total order whose largest possible
    probability exceeds ``floor`` lies within ``amplification`` of its best
    candidate. Mixture weights only depend on radius ratios, so they carry over.

    Returns the candidate ladder and one SliceScaling per ell.
    """
    dims = evaluator.levels - 1
    ladder = np.geomspace(1.0, SCALING_LADDER_END, SCALING_CANDIDATES)
    radii = min(scheme.eta) * ladder
    base, ratio = evaluator.joint_kernel([radii.astype(complex)] * dims)
    with np.errstate(divide="ignore"):
        log_base = np.log(np.abs(base))
        log_ratio = np.log(np.abs(ratio))
    orders = np.arange(dims * n_max + 1)
    log_powers = np.outer(np.log(radii), orders)
    tolerance = math.log(amplification)
    threshold = math.log(floor)

    plans = []
    for ell in range(n_max + 1):
        # rows are candidate scalings, columns total orders
        log_peak = log_base + ell * log_ratio if ell else log_base
        estimate = log_peak[:, None] - log_powers
        best = estimate.min(axis=0)
        acceptable = estimate <= best + tolerance
        chosen = [0]
        uncovered = (best >= threshold) & ~acceptable[0]
        while np.any(uncovered):
            pick = int(np.argmax(np.count_nonzero(acceptable & uncovered, axis=1)))
            chosen.append(pick)
            uncovered &= ~acceptable[pick]
        chosen.sort()
        assignment = np.asarray(chosen)[np.argmin(estimate[chosen], axis=0)]
        plans.append(SliceScaling(scalings=tuple(chosen), assignment=assignment))
    return ladder, plans


def invert_joint(
    evaluator,
    scheme,
    n_max,
    memory_limit=DEFAULT_MEMORY_LIMIT,
    output=None,
):
    """Wait-conditional joint PMF on [0, N_max]^K, axes ordered highest priority first."""
    output = output or _noop
    model = evaluator.model
    levels = model.levels
    if levels < 2:
        raise InvalidParameterError(
            "Joint inversion needs K >= 2; for K=1 the PMF is the geometric (1-r) r^n."
        )
    if n_max >= scheme.n_fft:
        raise InvalidParameterError(
            f"N_max={n_max} must be below the transform size {scheme.n_fft}."
        )

    dims = levels - 1
    grid_points = scheme.n_fft**dims
    output_points = (n_max + 1) ** levels
    check_memory(
        4 * COMPLEX_BYTES * grid_points
        + FLOAT_BYTES * output_points
        + 2 * FLOAT_BYTES * (n_max + 1) ** dims,
        memory_limit,
        f"Joint inversion (grid {scheme.n_fft}^{dims}, PMF {n_max + 1}^{levels})",
    )

    ladder, plans = plan_slice_scalings(evaluator, scheme, n_max)
    used = sorted({index for plan in plans for index in plan.scalings})
    LOGGER.debug(
        "Joint inversion uses %d contour scaling(s), at most %d per slice.",
        len(used),
        max(len(plan.scalings) for plan in plans),
    )

    unit = np.exp(-2j * np.pi * np.arange(scheme.n_fft) / scheme.n_fft)
    truncate = (slice(0, n_max + 1),) * dims
    total_order = sum(np.ogrid[truncate]) if dims > 1 else np.arange(n_max + 1)
    order_grid = np.broadcast_to(total_order, (n_max + 1,) * dims)
    values = np.zeros((n_max + 1,) * levels)
    residue = 0.0

    for count, index in enumerate(used, start=1):
        slices = [ell for ell, plan in enumerate(plans) if index in plan.scalings]
        last = slices[-1]
        for eta, weight in zip(scheme.eta, scheme.coefficients):
            radius = ladder[index] * eta
            variables = [
                (radius * unit).reshape((1,) * axis + (-1,) + (1,) * (dims - axis - 1))
                for axis in range(dims)
            ]
            base, ratio = evaluator.joint_kernel(variables)
            base = np.broadcast_to(base, (scheme.n_fft,) * dims).copy()
            _require_finite(base, radius)
            _require_finite(ratio, radius)
            # high orders overflow on shrunken contours; only masked orders are kept
            with np.errstate(over="ignore"):
                scale = weight * np.exp(-total_order * math.log(radius))

            current = base
            for ell in range(last + 1):
                if index in plans[ell].scalings:
                    # masks depend on total order only, so either axis order reads the same
                    mask = plans[ell].assignment[order_grid] == index
                    if np.any(mask):
                        # transform axes run lowest priority first; the PMF runs highest first
                        with np.errstate(over="ignore", invalid="ignore"):
                            coefficients = (np.fft.ifftn(current)[truncate] * scale).T
                        residue += float(np.max(np.abs(coefficients.imag[mask])))
                        values[ell][mask] += coefficients.real[mask]
                if ell < last:
                    current *= ratio
        output(
            f"Inverted contour scaling {count}/{len(used)} "
            f"(factor {ladder[index]:.4f}, {len(slices)} slice(s))."
        )

    if residue >= IMAGINARY_TOLERANCE:
        raise ImaginaryResidueError(
            f"Inverted joint PMF keeps an imaginary residue of {residue:.3e}."
        )
    return JointPmf(
        values=values,
        kind=PmfKind.WAIT_CONDITIONAL,
        model=model,
        generator="fft",
        metadata={
            **scheme.to_metadata(),
            "contour_scalings": [float(ladder[index]) for index in used],
        },
    )


def full_pmf(pmf, erlang=None):
    """P_full(n) = P_NW delta(n) + (1 - P_NW) P(n)."""
    if pmf.kind is not PmfKind.WAIT_CONDITIONAL:
        raise WrongKindError("full_pmf needs a wait-conditional PMF.")
    erlang = erlang or erlang_quantities(pmf.model)
    values = (1.0 - erlang.p_no_wait) * pmf.values
    values[(0,) * pmf.levels] += erlang.p_no_wait
    return JointPmf(
        values=values,
        kind=PmfKind.FULL,
        model=pmf.model,
        generator=pmf.generator,
        metadata={**pmf.metadata, "p_no_wait": erlang.p_no_wait},
    )


def geometric_joint(model, n_max):
    """Closed-form wait-conditional PMF (1-r) r^n of a single-level model."""
    if model.levels != 1:
        raise InvalidParameterError("The geometric closed form only covers K=1.")
    r = model.r
    values = (1.0 - r) * r ** np.arange(n_max + 1, dtype=float)
    return JointPmf(
        values=values, kind=PmfKind.WAIT_CONDITIONAL, model=model, generator="closed-form"
    )


def wait_conditional_marginal(model, level, n_max, scheme=None):
    """Wait-conditional marginal of one level (0 = highest priority)."""
    levels = model.levels
    if not 0 <= level < levels:
        raise LevelOutOfRangeError(f"Level must lie in 0..{levels - 1}, got {level}.")
    if level == 0:
        r1 = model.rates[0]
        return (1.0 - r1) * r1 ** np.arange(n_max + 1, dtype=float)

    scheme = scheme or plan_scheme(model, n_max)
    evaluator = PgfEvaluator(model)
    lowest_rank = levels - level
    return invert_marginal(lambda z: evaluator.marginal_pgf(lowest_rank, z), scheme, n_max)


def full_marginal(model, level, n_max, scheme=None, erlang=None):
    """Unconditional marginal PMF of one level (0 = highest priority)."""
    if level == 0:
        return high_priority_marginal_pmf(model, n_max, erlang)
    erlang = erlang or erlang_quantities(model)
    values = (1.0 - erlang.p_no_wait) * wait_conditional_marginal(model, level, n_max, scheme)
    values[0] += erlang.p_no_wait
    return values


def ratio_probe(r, xi, n):
    """Measured R_N(xi, k) for k = 0..N-1 and its exact value 1 / (1 - xi**N).

    The probe inverts the unit-disc geometric PGF 1/(1 - xi w) on the unit
    circle; r only fixes the matching z-plane radius xi/r and does not enter
    the ratio itself.
    """
    if not 0 < r < 1:
        raise InvalidParameterError(f"Traffic intensity must lie in (0, 1), got {r}.")
    if not 0 <= xi < 1:
        raise InvalidParameterError(f"Scaled radius must lie in [0, 1), got {xi}.")
    if n < 1:
        raise InvalidParameterError(f"Transform size must be at least 1, got {n}.")

    exact = 1.0 / (1.0 - xi**n)
    if xi == 0:
        return np.ones(n), exact
    orders = np.arange(n)
    samples = 1.0 / (1.0 - xi * np.exp(-2j * np.pi * orders / n))
    measured = (np.fft.ifft(samples) * np.exp(-orders * math.log(xi))).real
    return measured, exact


def error_budget(scheme, n_max, r):
    """Overall, FFT and discretization errors of inverting (1-r)/(1-rz)."""
    if n_max < 1:
        raise InvalidParameterError(f"Probe length must be at least 1, got {n_max}.")
    orders = np.arange(n_max + 1)
    measured = invert_marginal(lambda z: (1.0 - r) / (1.0 - r * z), scheme, n_max)
    ratio = measured / ((1.0 - r) * r**orders.astype(float))
    mixed = sum(
        weight / (1.0 - xi**scheme.n_fft) for xi, weight in zip(scheme.xi, scheme.coefficients)
    )
    return ErrorBudget(
        n=orders,
        overall=np.abs(ratio - 1.0),
        fft=np.abs(ratio - mixed),
        discretization=abs(mixed - 1.0),
        fft_bound=fft_error_bound(scheme, orders),
    )


def fft_error_bound(scheme, n, round_off=FFT_ROUND_OFF):
    """Predicted round-off amplification eps * sum_m |f_m| / xi_m**n."""
    n = np.asarray(n, dtype=float)
    return sum(
        abs(weight) * round_off * np.exp(-n * math.log(xi))
        for xi, weight in zip(scheme.xi, scheme.coefficients)
    )


def balanced_alpha(n_max, n_fft):
    """Accuracy exponent that balances discretization and round-off for one radius."""
    return 15.0 / (1.0 + n_max / n_fft)


def chi(radii_count=4, spread=0.05, alpha=12.0):
    """Rate constant of the transform-size rule N = N_max / (1 - N_max chi)."""
    varsigma = _varsigma(radii_count, spread)
    g = float(np.prod(varsigma) ** (1.0 / radii_count))
    return math.log10(g / (1.0 - spread)) / (15.0 - alpha)


def mixture_timing(levels, n_fft, radii_count, repeats=3, seed=0):
    """Wall-clock of M transforms of size N^(K-1) against one of size (MN)^(K-1)."""
    if levels < 2:
        raise InvalidParameterError("Timing needs K >= 2.")
    dims = levels - 1
    rng = np.random.default_rng(seed)
    small = rng.standard_normal((n_fft,) * dims) + 1j * rng.standard_normal((n_fft,) * dims)
    large_shape = (radii_count * n_fft,) * dims
    large = rng.standard_normal(large_shape) + 1j * rng.standard_normal(large_shape)

    def best_of(action):
        timings = []
        for _ in range(repeats):
            start = time.perf_counter()
            action()
            timings.append(time.perf_counter() - start)
        return min(timings)

    mixture_seconds = best_of(lambda: [np.fft.ifftn(small) for _ in range(radii_count)])
    single_seconds = best_of(lambda: np.fft.ifftn(large))
    predicted = radii_count ** (levels - 2) * (
        1.0 + math.log2(radii_count) / math.log2(n_fft)
    )
    return TimingResult(
        mixture_seconds=mixture_seconds,
        single_seconds=single_seconds,
        predicted_ratio=predicted,
    )


def _varsigma(radii_count, spread):
    if radii_count == 1:
        return np.ones(1)
    return 1.0 - spread * np.arange(radii_count) / (radii_count - 1)


def _require_finite(samples, eta):
    if not np.all(np.isfinite(samples)):
        raise NonFiniteGridSampleError(
            f"PGF returned NaN or Inf on the contour of radius {eta:.6f}."
        )


def _require_real(values):
    residue = float(np.max(np.abs(values.imag))) if values.size else 0.0
    if residue >= IMAGINARY_TOLERANCE:
        raise ImaginaryResidueError(f"Inverted PMF keeps an imaginary residue of {residue:.3e}.")


def _noop(_message):
    return None
