"""Accuracy tests for joint PMFs and their decimal-agreement scores.

Each test compares the PMF against an exactly known relation, converts the
error at every admitted point to decimal places of agreement (capped at 16)
and reports the worst value. Points where a needed probability is not
positive are recorded as exclusions rather than failures.
"""

import logging
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from mmc_priority_pmf.config import DEFAULT_MEMORY_LIMIT, DEFAULT_P_MIN
from mmc_priority_pmf.exceptions import (
    EmptyAdmissibleSetError,
    MissingMarginalError,
    WrongKindError,
)
from mmc_priority_pmf.fpi import PmfKind, iter_interior_residuals, run_fpi
from mmc_priority_pmf.inversion import (
    geometric_joint,
    invert_joint,
    plan_scheme,
    wait_conditional_marginal,
)
from mmc_priority_pmf.pgf import PgfEvaluator

LOGGER = logging.getLogger(__name__)

XI_CAP = 16.0
# The exclusively-low relation is only checked on short queues unless asked otherwise.
XLO_N_LIM = 60


@dataclass
class DiagnosticsReport:
    """Outcome of one test: worst decimal agreement plus the per-point trace."""

    test: str
    xi: float
    trace: list
    exclusions: int = 0
    config: dict = field(default_factory=dict)

    def recompute_xi(self):
        return min(point_xi for _, point_xi in self.trace)

    def to_metadata(self):
        return {
            "test": self.test,
            "xi": self.xi,
            "exclusions": self.exclusions,
            "config": self.config,
            "trace": [[index, point_xi] for index, point_xi in self.trace],
        }


def decimal_agreement(errors):
    """-log10(error) capped at 16; an exact match scores the cap."""
    errors = np.abs(np.asarray(errors, dtype=float))
    with np.errstate(divide="ignore"):
        return np.minimum(-np.log10(errors), XI_CAP)


def sample_simplex(levels, count, seed):
    """Uniform draws from the probability simplex via normalized exponentials."""
    rng = np.random.default_rng(seed)
    draws = rng.standard_exponential((count, levels))
    return draws / draws.sum(axis=1, keepdims=True)


def shell_sums(values, k_max):
    """P_agg(k) = sum of P(n) over |n| = k for k = 0..k_max."""
    totals = np.zeros(k_max + 1)
    if values.ndim == 1:
        count = min(k_max + 1, values.shape[0])
        totals[:count] = values[:count]
        return totals

    inner_shape = values.shape[1:]
    order = sum(np.ogrid[tuple(slice(0, extent) for extent in inner_shape)])
    order = np.broadcast_to(order, inner_shape).ravel()
    for top in range(min(values.shape[0], k_max + 1)):
        sums = np.bincount(order, weights=values[top].ravel())
        stop = min(k_max + 1, top + sums.size)
        totals[top:stop] += sums[: stop - top]
    return totals


def agg_test(pmf, p_min=DEFAULT_P_MIN["agg"], n_lim=None):
    """Aggregate shells must fall geometrically with ratio r."""
    _require_wait_conditional(pmf)
    n_lim = _limit(pmf, n_lim)
    r = pmf.model.r
    totals = shell_sums(pmf.values, n_lim)

    trace = []
    exclusions = 0
    for k in range(1, n_lim + 1):
        if not (1.0 - r) * r**k > p_min:
            continue
        if totals[k] <= 0 or totals[k - 1] <= 0:
            exclusions += 1
            continue
        error = np.log(totals[k]) - np.log(totals[k - 1]) - np.log(r)
        trace.append((k, float(decimal_agreement(error))))
    return _report("agg", trace, exclusions, pmf, p_min, n_lim)


def nn_test(pmf, p_min=DEFAULT_P_MIN["nn"], n_lim=None):
    """Interior balance: P(n) against the weighted average of its neighbours."""
    n_lim = _limit(pmf, n_lim)
    worst = defaultdict(lambda: XI_CAP)
    exclusions = 0
    rates = pmf.model.rates_array

    for top, point, residual in iter_interior_residuals(pmf.values, rates, n_lim):
        admitted = point > p_min
        excluded = admitted & np.isnan(residual)
        exclusions += int(np.count_nonzero(excluded))
        scores = np.where(admitted & ~excluded, decimal_agreement(np.nan_to_num(residual)), np.inf)
        _fold_lowest(worst, top, scores, pmf.levels)

    trace = sorted(worst.items())
    return _report("nn", trace, exclusions, pmf, p_min, n_lim)


def xhi_test(pmf, p_min=DEFAULT_P_MIN["xhi"], n_lim=None):
    """Slice P(l, 0, ..., 0) must fall geometrically with ratio zeta_minus(0)."""
    n_lim = _limit(pmf, n_lim)
    evaluator = PgfEvaluator(pmf.model)
    slope = np.log(evaluator.xhi_ratio())
    column = pmf.values[(slice(None),) + (0,) * (pmf.levels - 1)]

    trace = []
    exclusions = 0
    for ell in range(1, n_lim + 1):
        if not evaluator.xhi_pmf(ell) > p_min:
            continue
        if column[ell] <= 0 or column[ell - 1] <= 0:
            exclusions += 1
            continue
        error = np.log(column[ell]) - np.log(column[ell - 1]) - slope
        trace.append((ell, float(decimal_agreement(error))))
    return _report("xhi", trace, exclusions, pmf, p_min, n_lim)


def xlo_test(pmf, marginal_lo, p_min=DEFAULT_P_MIN["xlo"], n_lim=XLO_N_LIM):
    """Slice P(0, ..., 0, n) against r_K times the lowest-level marginal at n-1.

    Points are admitted on the expected probability, so a nearly idle lowest
    level is not scored where its exclusive slice sits far below P_min.
    """
    n_lim = _limit(pmf, n_lim)
    if marginal_lo is None or len(marginal_lo) < n_lim + 1:
        raise MissingMarginalError(
            f"The exclusively-low test needs the lowest-level marginal up to n={n_lim}."
        )
    evaluator = PgfEvaluator(pmf.model)
    row = pmf.values[(0,) * (pmf.levels - 1) + (slice(None),)]

    trace = []
    exclusions = 0
    for n in range(1, n_lim + 1):
        expected = evaluator.xlo_pmf(n, marginal_lo)
        if not expected > p_min:
            continue
        if row[n] <= 0:
            exclusions += 1
            continue
        error = np.log(row[n]) - np.log(expected)
        trace.append((n, float(decimal_agreement(error))))
    return _report("xlo", trace, exclusions, pmf, p_min, n_lim)


def fpi_test(
    model,
    n_max,
    p_min=DEFAULT_P_MIN["fpi"],
    n_lim=None,
    fft_pmf=None,
    fpi_pmf=None,
    tol=1e-9,
    max_iters=1_000_000,
    scheme=None,
    memory_limit=DEFAULT_MEMORY_LIMIT,
    output=None,
):
    """Log-agreement of the transform PMF with the fixed-point PMF."""
    if fft_pmf is None:
        fft_pmf = reference_joint(model, n_max, scheme, memory_limit, output)
    if fpi_pmf is None:
        fpi_pmf = run_fpi(
            model, n_max, tol=tol, max_iters=max_iters, memory_limit=memory_limit, output=output
        ).pmf
    n_lim = _limit(fft_pmf, n_lim)
    interior = (slice(1, n_lim + 1),) * (model.levels - 1)

    worst = defaultdict(lambda: XI_CAP)
    exclusions = 0
    for top in range(1, n_lim + 1):
        reference = np.asarray(fft_pmf.values[top][interior])
        candidate = np.asarray(fpi_pmf.values[top][interior])
        admitted = reference > p_min
        excluded = admitted & (candidate <= 0)
        exclusions += int(np.count_nonzero(excluded))
        with np.errstate(divide="ignore", invalid="ignore"):
            errors = np.log(reference) - np.log(candidate)
        scores = np.where(admitted & ~excluded, decimal_agreement(np.nan_to_num(errors)), np.inf)
        _fold_lowest(worst, top, scores, model.levels)

    trace = sorted(worst.items())
    return _report("fpi", trace, exclusions, fft_pmf, p_min, n_lim)


def reference_joint(model, n_max, scheme=None, memory_limit=DEFAULT_MEMORY_LIMIT, output=None):
    """Transform-based joint PMF, or the closed form when K=1."""
    if model.levels == 1:
        return geometric_joint(model, n_max)
    scheme = scheme or plan_scheme(model, n_max)
    return invert_joint(PgfEvaluator(model), scheme, n_max, memory_limit, output)


def lowest_marginal(model, n_max, scheme=None):
    """Wait-conditional marginal of the lowest priority level."""
    return wait_conditional_marginal(model, model.levels - 1, n_max, scheme)


def run_trial(
    model,
    tests,
    n_max,
    scheme=None,
    p_min=None,
    n_lim=None,
    tol=1e-9,
    max_iters=1_000_000,
    memory_limit=DEFAULT_MEMORY_LIMIT,
    output=None,
):
    """Run the selected tests against one model, sharing the joint PMF between them."""
    p_min = {**DEFAULT_P_MIN, **(p_min or {})}
    if model.levels > 1:
        scheme = scheme or plan_scheme(model, n_max)
    pmf = reference_joint(model, n_max, scheme, memory_limit, output)

    reports = []
    for test in tests:
        if test == "agg":
            reports.append(agg_test(pmf, p_min["agg"], n_lim))
        elif test == "nn":
            reports.append(nn_test(pmf, p_min["nn"], n_lim))
        elif test == "xhi":
            reports.append(xhi_test(pmf, p_min["xhi"], n_lim))
        elif test == "xlo":
            marginal = lowest_marginal(model, n_max, scheme)
            xlo_lim = XLO_N_LIM if n_lim is None else n_lim
            reports.append(xlo_test(pmf, marginal, p_min["xlo"], xlo_lim))
        elif test == "fpi":
            reports.append(
                fpi_test(
                    model,
                    n_max,
                    p_min["fpi"],
                    n_lim,
                    fft_pmf=pmf,
                    tol=tol,
                    max_iters=max_iters,
                    memory_limit=memory_limit,
                    output=output,
                )
            )
    return reports


def envelope(reports):
    """Worst decimal agreement per trace index across several reports."""
    worst = {}
    for report in reports:
        for index, point_xi in report.trace:
            worst[index] = min(point_xi, worst.get(index, XI_CAP))
    return sorted(worst.items())


def _fold_lowest(worst, top, scores, levels):
    # trace index is the lowest-priority queue length, which is the last axis
    if levels == 1:
        if np.isfinite(scores):
            worst[top] = min(worst[top], float(scores))
        return
    per_length = np.min(scores.reshape(-1, scores.shape[-1]), axis=0)
    for offset, score in enumerate(per_length):
        if np.isfinite(score):
            index = offset + 1
            worst[index] = min(worst[index], float(score))


def _report(test, trace, exclusions, pmf, p_min, n_lim):
    if not trace:
        raise EmptyAdmissibleSetError(
            f"The {test} test admitted no points (P_min={p_min:g}, n_lim={n_lim}); "
            "lower P_min or raise N_max."
        )
    xi = min(point_xi for _, point_xi in trace)
    if exclusions:
        LOGGER.debug(
            "%s test excluded %d point(s) with non-positive probability.", test, exclusions
        )
    return DiagnosticsReport(
        test=test,
        xi=xi,
        trace=trace,
        exclusions=exclusions,
        config={
            "rates": list(pmf.model.rates),
            "servers": pmf.model.servers,
            "r": pmf.model.r,
            "N_max": pmf.n_max,
            "P_min": p_min,
            "n_lim": n_lim,
        },
    )


def _limit(pmf, n_lim):
    return pmf.n_max if n_lim is None else min(n_lim, pmf.n_max)


def _require_wait_conditional(pmf):
    if pmf.kind is not PmfKind.WAIT_CONDITIONAL:
        raise WrongKindError("The aggregation test needs a wait-conditional PMF.")
