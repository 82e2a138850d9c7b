"""Closed-form multivariate probability generating functions.

Every function here takes PGF arguments in the z-ordering: ``z[0]`` belongs to
the LOWEST priority level and ``z[K-2]`` to the next-to-highest level. The
highest-priority queue length is carried by the power ``ell`` of zeta_minus
instead of a PGF variable.

Arguments may be scalars or numpy arrays; a sequence of arrays is broadcast
against each other, so open grids (``np.ogrid``-style shapes) evaluate a full
lattice without materializing every coordinate.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from mmc_priority_pmf.exceptions import (
    LevelOutOfRangeError,
    MissingMarginalError,
    PoleProximityError,
    PrefixOutOfRangeError,
)

LOGGER = logging.getLogger(__name__)

DEGENERATE_DISCRIMINANT = 1e-14
POLE_TOLERANCE = 1e-13


class ProductForm(Enum):
    """The two equivalent product forms of G_0."""

    PLUS = "plus"
    MINUS = "minus"


def quadratic_roots(b, c):
    """Roots of zeta**2 + b*zeta + c = 0 as (larger modulus, smaller modulus).

    The larger root comes from the cancellation-free branch of the quadratic
    formula and the smaller one from the product c / larger.
    """
    b = np.asarray(b, dtype=complex)
    c = np.asarray(c, dtype=complex)
    discriminant = b * b - 4.0 * c
    root = np.sqrt(discriminant)
    sign = np.where((np.conj(b) * root).real >= 0.0, 1.0, -1.0)
    larger = -0.5 * (b + sign * root)

    with np.errstate(divide="ignore", invalid="ignore"):
        smaller = np.where(larger != 0.0, c / larger, 0.0)
    smaller = np.where(c == 0.0, 0.0, smaller)

    degenerate = np.abs(discriminant) < DEGENERATE_DISCRIMINANT
    if np.any(degenerate):
        LOGGER.debug("Degenerate zeta roots at %d point(s).", int(np.count_nonzero(degenerate)))

    return larger, smaller


@dataclass(frozen=True)
class PgfEvaluator:
    """Evaluates beta, zeta_plus/minus and the joint, marginal and aggregate PGFs."""

    model: object
    sigma: np.ndarray = field(init=False, repr=False, compare=False)
    reversed_rates: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(
            self, "sigma", np.concatenate(([0.0], np.asarray(self.model.cumulative)))
        )
        object.__setattr__(self, "reversed_rates", self.model.rates_array[::-1].copy())

    @property
    def levels(self):
        return self.model.levels

    @property
    def r(self):
        return self.model.r

    def beta(self, z, kappa):
        """beta(z_1..z_kappa) = sum_k z_k r_{K+1-k}; beta() = 0."""
        variables = self._prefix(z, kappa)
        total = np.zeros((), dtype=complex)
        for index, variable in enumerate(variables):
            total = total + variable * self.reversed_rates[index]
        return total

    def zeta_pm(self, z, kappa):
        """Return (zeta_plus, zeta_minus) of the prefix z_1..z_kappa."""
        constant = self.sigma[self.levels - kappa]
        return quadratic_roots(self.beta(z, kappa) - (1.0 + self.r), constant)

    def prefix_roots(self, z):
        """Return [(zeta_plus, zeta_minus)] for every prefix length 0..K-1."""
        variables = _variables(z)
        self._check_length(variables, self.levels - 1)
        roots = []
        beta = np.zeros((), dtype=complex)
        for kappa in range(self.levels):
            if kappa:
                beta = beta + variables[kappa - 1] * self.reversed_rates[kappa - 1]
            constant = self.sigma[self.levels - kappa]
            roots.append(quadratic_roots(beta - (1.0 + self.r), constant))
        return roots

    def g0(self, z, form=ProductForm.MINUS):
        """The wait-conditional PGF G_0 in the requested product form."""
        return self._g0_from_roots(_variables(z), self.prefix_roots(z), form)

    def g_ell(self, ell, z, form=ProductForm.MINUS):
        """G_ell(z) = G_0(z) * zeta_minus(z_1..z_{K-1})**ell."""
        if ell < 0:
            raise LevelOutOfRangeError(f"Highest-priority queue length must be >= 0, got {ell}.")
        roots = self.prefix_roots(z)
        return self._g0_from_roots(_variables(z), roots, form) * roots[-1][1] ** ell

    def joint_kernel(self, z):
        """Return (G_0 in minus form, zeta_minus of the full prefix) on one grid."""
        roots = self.prefix_roots(z)
        return self._g0_from_roots(_variables(z), roots, ProductForm.MINUS), roots[-1][1]

    def marginal_pgf(self, p, z):
        """Wait-conditional PGF of the p-th LOWEST level via the two-level reduction."""
        if not 1 <= p <= self.levels - 1:
            raise LevelOutOfRangeError(
                f"Marginal PGF needs 1 <= p <= {self.levels - 1}; "
                "use the closed-form highest-priority marginal instead."
            )
        r_lo = self.reversed_rates[p - 1]
        r_hi = self.sigma[self.levels - p]
        r_sum = self.sigma[self.levels + 1 - p]
        z = np.asarray(z, dtype=complex)
        zeta_plus, _ = quadratic_roots(r_lo * z - (1.0 + r_sum), r_hi)
        return (1.0 - r_sum) / (zeta_plus - r_sum)

    def agg_pgf(self, p, u):
        """Geometric PGF of the aggregated top p levels."""
        if not 1 <= p <= self.levels:
            raise LevelOutOfRangeError(f"Aggregate PGF needs 1 <= p <= {self.levels}, got {p}.")
        sigma_p = self.sigma[p]
        return (1.0 - sigma_p) / (1.0 - sigma_p * np.asarray(u, dtype=complex))

    def xhi_ratio(self):
        """zeta_minus(0) = [1 + r - sqrt((1+r)**2 - 4 r_1)] / 2, computed without cancellation."""
        r1 = self.model.rates[0]
        return 2.0 * r1 / ((1.0 + self.r) + np.sqrt((1.0 + self.r) ** 2 - 4.0 * r1))

    def xhi_pmf(self, ell):
        """Exclusively-high PMF (1 - r) * zeta_minus(0)**ell."""
        if ell < 0:
            return 0.0
        return (1.0 - self.r) * self.xhi_ratio() ** ell

    def xlo_pmf(self, n, marginal_lo):
        """Exclusively-low PMF from the wait-conditional lowest-level marginal."""
        if n < 0:
            return 0.0
        if n == 0:
            return 1.0 - self.r
        if marginal_lo is None or len(marginal_lo) < n:
            raise MissingMarginalError(
                f"Exclusively-low probability at n={n} needs the lowest-level marginal "
                f"up to n={n - 1}."
            )
        return self.model.rates[-1] * float(marginal_lo[n - 1])

    def _g0_from_roots(self, variables, roots, form):
        value = np.full((), 1.0 - self.r, dtype=complex)
        pick = 0 if form is ProductForm.PLUS else 1
        for kappa in range(1, self.levels):
            variable = variables[kappa - 1]
            previous = 1.0 - variable * roots[kappa - 1][pick]
            current = 1.0 - variable * roots[kappa][pick]
            if form is ProductForm.PLUS:
                numerator, denominator = previous, current
            else:
                numerator, denominator = current, previous
            if np.any(np.abs(denominator) < POLE_TOLERANCE):
                raise PoleProximityError(
                    f"G_0 ({form.value} form) denominator vanishes for prefix {kappa}; "
                    "evaluate contours with the minus form."
                )
            value = value * numerator / denominator
        return value

    def _prefix(self, z, kappa):
        if not 0 <= kappa <= self.levels - 1:
            raise PrefixOutOfRangeError(
                f"Prefix length must satisfy 0 <= kappa <= {self.levels - 1}, got {kappa}."
            )
        variables = _variables(z)
        if len(variables) < kappa:
            raise PrefixOutOfRangeError(
                f"Prefix length {kappa} needs at least {kappa} arguments, got {len(variables)}."
            )
        return variables[:kappa]

    def _check_length(self, variables, expected):
        if len(variables) != expected:
            raise PrefixOutOfRangeError(
                f"Expected {expected} PGF argument(s) for K={self.levels}, got {len(variables)}."
            )


def _variables(z):
    return [np.asarray(value, dtype=complex) for value in z]
