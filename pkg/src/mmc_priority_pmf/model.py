"""Model parameters and closed-form scalar quantities of the aggregate system.

Priority levels are ordered highest first throughout the package: index 0 of
``ModelParams.rates`` (and axis 0 of every joint PMF array) is the highest
priority level.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from mmc_priority_pmf.exceptions import (
    InvalidFractionsError,
    InvalidParameterError,
    LevelOutOfRangeError,
    NonErgodicError,
    ZeroRatesError,
)


@dataclass(frozen=True)
class ModelParams:
    """Servers, common service rate and per-level traffic intensities r_k."""

    servers: int
    mu: float
    rates: tuple[float, ...]
    cumulative: tuple[float, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        _validate_servers(self.servers)
        if not (isinstance(self.mu, (int, float)) and math.isfinite(self.mu) and self.mu > 0):
            raise InvalidParameterError(f"Service rate mu must be positive, got {self.mu!r}.")

        rates = tuple(float(rate) for rate in self.rates)
        if not rates:
            raise InvalidParameterError("At least one priority level is required.")
        if any(not math.isfinite(rate) or rate < 0 for rate in rates):
            raise InvalidParameterError(
                f"Level traffic intensities must be finite and non-negative, got {rates}."
            )

        running = 0.0
        cumulative = []
        for rate in rates:
            running += rate
            cumulative.append(running)

        if cumulative[-1] >= 1.0:
            raise NonErgodicError(
                f"Total traffic intensity r = {cumulative[-1]!r} must be below 1 for a "
                "stationary distribution to exist."
            )

        object.__setattr__(self, "rates", rates)
        object.__setattr__(self, "cumulative", tuple(cumulative))

    @classmethod
    def from_rates(cls, lambdas, mu, servers):
        """Build from per-level arrival rates, service rate and server count.

        Only the ratios lambda_k / mu matter: rescaling every rate and mu by a common
        factor changes each level intensity by at most a few ulps of rounding.
        """
        _validate_servers(servers)
        if not (math.isfinite(mu) and mu > 0):
            raise InvalidParameterError(f"Service rate mu must be positive, got {mu!r}.")
        capacity = servers * mu
        return cls(servers=servers, mu=mu, rates=tuple(lam / capacity for lam in lambdas))

    @property
    def levels(self):
        return len(self.rates)

    @property
    def r(self):
        """Total traffic intensity, identical to sigma_K."""
        return self.cumulative[-1]

    @property
    def rho(self):
        """Offered load lambda/mu = c*r."""
        return self.servers * self.r

    @property
    def lambdas(self):
        return tuple(rate * self.servers * self.mu for rate in self.rates)

    @property
    def arrival_rate(self):
        return self.r * self.servers * self.mu

    @property
    def rates_array(self):
        return np.asarray(self.rates, dtype=float)

    def sigma(self, p):
        """Aggregate intensity of the top p levels (sigma_0 = 0, sigma_K = r)."""
        if not 0 <= p <= self.levels:
            raise LevelOutOfRangeError(f"sigma_p needs 0 <= p <= {self.levels}, got {p}.")
        return 0.0 if p == 0 else self.cumulative[p - 1]

    def aggregate_top(self, p):
        """Return the model with the top p levels merged into one level."""
        if not 1 <= p <= self.levels:
            raise LevelOutOfRangeError(f"Cannot aggregate {p} of {self.levels} levels.")
        rates = (self.sigma(p),) + self.rates[p:]
        return ModelParams(servers=self.servers, mu=self.mu, rates=rates)

    def to_metadata(self):
        return {
            "servers": self.servers,
            "mu": self.mu,
            "rates": list(self.rates),
            "r": self.r,
        }


@dataclass(frozen=True)
class ErlangQuantities:
    """Empty-system, no-wait and all-busy-empty-queue probabilities of M/M/c."""

    p0: float
    p_no_wait: float
    p_all_busy_empty_queue: float
    server_distribution: tuple[float, ...]

    @property
    def p_wait(self):
        return 1.0 - self.p_no_wait


def from_fractions(r, nu, servers, mu=1.0):
    """Build a model with total intensity r split in proportion to nu."""
    if not math.isfinite(r) or r >= 1.0:
        raise NonErgodicError(f"Total traffic intensity r = {r!r} must be below 1.")
    if r <= 0.0:
        raise InvalidParameterError(f"Total traffic intensity r must be positive, got {r!r}.")

    weights = [float(value) for value in nu]
    if not weights or any(not math.isfinite(value) or value < 0 for value in weights):
        raise InvalidFractionsError(f"Level fractions must be non-negative, got {weights}.")
    norm = math.fsum(weights)
    if norm == 0.0:
        raise InvalidFractionsError("Level fractions must not all be zero.")

    return ModelParams(servers=servers, mu=mu, rates=tuple(r * value / norm for value in weights))


def erlang_quantities(model):
    """Return p_0, P_NW and p_c of the aggregate M/M/c system."""
    c = model.servers
    rho = model.rho
    r = model.r

    if rho == 0.0:
        distribution = (1.0,) + (0.0,) * c
        return ErlangQuantities(
            p0=1.0,
            p_no_wait=1.0,
            p_all_busy_empty_queue=0.0,
            server_distribution=distribution,
        )

    # term_k = rho^k / k!, accumulated in log space and rescaled by the largest term
    log_terms = np.concatenate(([0.0], np.cumsum(np.log(rho / np.arange(1, c + 1)))))
    terms = np.exp(log_terms - log_terms.max())
    inverse_p0 = math.fsum(terms) + terms[c] * rho / (c - rho)

    distribution = terms / inverse_p0
    p_no_wait = math.fsum(distribution[:c])
    return ErlangQuantities(
        p0=float(distribution[0]),
        p_no_wait=p_no_wait,
        p_all_busy_empty_queue=(1.0 - r) * (1.0 - p_no_wait),
        server_distribution=tuple(float(value) for value in distribution),
    )


def high_priority_marginal(model, ell, erlang=None):
    """Full (unconditional) PMF of the highest-priority queue length at ell."""
    if ell < 0:
        return 0.0
    erlang = erlang or erlang_quantities(model)
    r1 = model.rates[0]
    tail = (1.0 - erlang.p_no_wait) * (1.0 - r1) * r1**ell
    return erlang.p_no_wait + tail if ell == 0 else tail


def high_priority_marginal_pmf(model, n_max, erlang=None):
    """Vector of high_priority_marginal for ell = 0..n_max."""
    erlang = erlang or erlang_quantities(model)
    return np.array([high_priority_marginal(model, ell, erlang) for ell in range(n_max + 1)])


def _validate_servers(servers):
    if isinstance(servers, bool) or not isinstance(servers, (int, np.integer)) or servers < 1:
        raise InvalidParameterError(f"Server count must be a positive integer, got {servers!r}.")


def require_positive_arrivals(model):
    """Raise ZeroRatesError when no level receives traffic."""
    if model.r == 0.0:
        raise ZeroRatesError("All arrival rates are zero; there is nothing to simulate.")
