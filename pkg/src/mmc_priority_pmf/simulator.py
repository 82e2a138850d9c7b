"""Discrete-event simulation of the multi-level priority M/M/c queue.

The state is the vector of waiting clients and of clients in service per
level. Arrivals form one Poisson stream of rate lambda thinned into levels
with probabilities lambda_k / lambda; every busy server completes at rate mu.
Occupancy of each state is accumulated per batch for batch-means error bars.
"""

import bisect
import logging
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy import stats

from mmc_priority_pmf.exceptions import InvalidParameterError, ShapeMismatchError
from mmc_priority_pmf.model import require_positive_arrivals

LOGGER = logging.getLogger(__name__)

RANDOM_BLOCK = 1 << 16


class SamplingMode(Enum):
    TIME_AVERAGED = "time"
    EVENT_AVERAGED = "event"


@dataclass(frozen=True)
class SimConfig:
    model: object
    warmup_events: int = 10**5
    sample_events: int = 10**6
    seed: int = 0
    sampling_mode: SamplingMode = SamplingMode.TIME_AVERAGED
    batches: int = 32
    confidence: float = 0.95
    preemptive: bool = False


@dataclass
class SimResult:
    """Per-level queue-length histograms with batch-means half widths."""

    histograms: list
    half_widths: list
    busy_histogram: np.ndarray
    total_time: float
    empty_fraction: float
    empty_half_width: float
    mean_queue_lengths: list
    mean_half_widths: list
    events: int
    standard_errors: list = field(repr=False, default_factory=list)
    empty_standard_error: float = 0.0
    batch_histograms: list = field(repr=False, default_factory=list)

    @property
    def levels(self):
        return len(self.histograms)

    @property
    def total_mean_queue_length(self):
        return float(sum(self.mean_queue_lengths))


@dataclass(frozen=True)
class MarginalComparison:
    level: int
    tv_distance: float
    max_z: float


def simulate(config, output=None):
    """Run one replication and return time- or event-averaged histograms."""
    output = output or _noop
    model = config.model
    require_positive_arrivals(model)
    if config.batches < 2:
        raise InvalidParameterError("Batch means need at least two batches.")
    if config.sample_events < config.batches:
        raise InvalidParameterError("Need at least one sampled event per batch.")
    if config.sample_events < 10 * config.warmup_events:
        LOGGER.warning(
            "Sampled events (%d) are fewer than ten times the warm-up events (%d).",
            config.sample_events,
            config.warmup_events,
        )

    levels = model.levels
    servers = model.servers
    mu = model.mu
    arrival_rate = model.arrival_rate
    thresholds = list(np.cumsum(model.lambdas) / arrival_rate)
    thresholds[-1] = 1.0
    time_weighted = config.sampling_mode is SamplingMode.TIME_AVERAGED

    rng = np.random.default_rng(config.seed)
    waiting = [0] * levels
    in_service = [0] * levels
    busy = 0

    batch_size = config.sample_events // config.batches
    start = config.warmup_events
    boundaries = [start + batch_size * (index + 1) for index in range(config.batches)]
    boundaries[-1] = config.warmup_events + config.sample_events
    total_events = boundaries[-1]

    batch_histograms = []
    batch_busy = []
    batch_weights = []
    histograms = [[0.0] for _ in range(levels)]
    busy_counts = [0.0] * (servers + 1)
    weight_total = 0.0
    batch_index = 0
    total_time = 0.0

    exponentials = uniforms = None
    cursor = RANDOM_BLOCK
    for event in range(total_events):
        if cursor == RANDOM_BLOCK:
            exponentials = rng.standard_exponential(RANDOM_BLOCK).tolist()
            uniforms = rng.random((RANDOM_BLOCK, 2)).tolist()
            cursor = 0
        draw = uniforms[cursor]
        served = None if config.preemptive else list(in_service)
        released = None
        rate = arrival_rate + busy * mu
        holding = exponentials[cursor] / rate
        cursor += 1

        if event >= config.warmup_events:
            weight = holding if time_weighted else 1.0
            for level in range(levels):
                histogram = histograms[level]
                length = waiting[level]
                if length >= len(histogram):
                    histogram.extend([0.0] * (length + 1 - len(histogram)))
                histogram[length] += weight
            busy_counts[busy] += weight
            weight_total += weight
            total_time += holding
            if event + 1 == boundaries[batch_index]:
                batch_histograms.append([np.array(values) for values in histograms])
                batch_busy.append(np.array(busy_counts))
                batch_weights.append(weight_total)
                histograms = [[0.0] for _ in range(levels)]
                busy_counts = [0.0] * (servers + 1)
                weight_total = 0.0
                batch_index += 1

        if draw[0] * rate < arrival_rate:
            level = bisect.bisect_right(thresholds, draw[1])
            level = min(level, levels - 1)
            if busy < servers:
                in_service[level] += 1
                busy += 1
            elif config.preemptive and _lowest_in_service(in_service) > level:
                displaced = _lowest_in_service(in_service)
                in_service[displaced] -= 1
                waiting[displaced] += 1
                in_service[level] += 1
            else:
                waiting[level] += 1
        else:
            finished = _pick_server(in_service, draw[1] * busy)
            released = finished
            in_service[finished] -= 1
            busy -= 1
            for level in range(levels):
                if waiting[level]:
                    waiting[level] -= 1
                    in_service[level] += 1
                    busy += 1
                    break

        assert busy == servers or not any(waiting), "idle server while clients wait"
        assert served is None or not displaced_levels(served, in_service, released), (
            "client displaced from service"
        )

        if (event + 1) % 1_000_000 == 0:
            output(f"Simulated {event + 1} of {total_events} events.")

    return _summarize(
        config, batch_histograms, batch_busy, batch_weights, total_time, total_events
    )


def compare_marginals(result, analytic):
    """Total-variation distance and worst bin z-score per level."""
    if len(analytic) != result.levels:
        raise ShapeMismatchError(
            f"Expected {result.levels} analytic marginals, got {len(analytic)}."
        )
    comparisons = []
    for level, (simulated, errors, reference) in enumerate(
        zip(result.histograms, result.standard_errors, analytic)
    ):
        reference = np.asarray(reference, dtype=float)
        size = max(simulated.size, reference.size)
        simulated = _pad(simulated, size)
        reference = _pad(reference, size)
        errors = _pad(errors, size)
        difference = np.abs(simulated - reference)
        informative = errors > 0
        max_z = 0.0
        if informative.any():
            max_z = float(np.max(difference[informative] / errors[informative]))
        comparisons.append(
            MarginalComparison(
                level=level, tv_distance=0.5 * float(difference.sum()), max_z=max_z
            )
        )
    return comparisons


def replication_seeds(seed, count):
    """Independent per-replication seeds spawned from one root seed."""
    return [
        int(child.generate_state(1)[0]) for child in np.random.SeedSequence(seed).spawn(count)
    ]


def _summarize(config, batch_histograms, batch_busy, batch_weights, total_time, events):
    levels = config.model.levels
    batches = len(batch_weights)
    weights = np.asarray(batch_weights)
    quantile = stats.t.ppf(0.5 + config.confidence / 2.0, batches - 1)

    histograms = []
    half_widths = []
    standard_errors = []
    means = []
    mean_half_widths = []
    per_batch = []
    for level in range(levels):
        size = max(values.size for values in (batch[level] for batch in batch_histograms))
        stacked = np.vstack([_pad(batch[level], size) for batch in batch_histograms])
        pooled = stacked.sum(axis=0) / weights.sum()
        normalized = stacked / weights[:, None]
        error = normalized.std(axis=0, ddof=1) / math.sqrt(batches)
        batch_means = normalized @ np.arange(size)

        histograms.append(pooled)
        standard_errors.append(error)
        half_widths.append(quantile * error)
        means.append(float(pooled @ np.arange(size)))
        mean_half_widths.append(quantile * float(batch_means.std(ddof=1)) / math.sqrt(batches))
        per_batch.append(normalized)

    busy = np.vstack(batch_busy)
    busy_histogram = busy.sum(axis=0) / weights.sum()
    empty_batches = busy[:, 0] / weights
    empty_error = float(empty_batches.std(ddof=1)) / math.sqrt(batches)

    return SimResult(
        histograms=histograms,
        half_widths=half_widths,
        busy_histogram=busy_histogram,
        total_time=total_time,
        empty_fraction=float(busy_histogram[0]),
        empty_half_width=quantile * empty_error,
        mean_queue_lengths=means,
        mean_half_widths=mean_half_widths,
        events=events,
        batch_histograms=per_batch,
        standard_errors=standard_errors,
        empty_standard_error=empty_error,
    )


def displaced_levels(before, after, released=None):
    """Levels that lost a client in service other than the one completion ``released``."""
    return [
        level
        for level, (old, new) in enumerate(zip(before, after))
        if new < old - (1 if level == released else 0)
    ]


def _lowest_in_service(in_service):
    for level in range(len(in_service) - 1, -1, -1):
        if in_service[level]:
            return level
    return -1


def _pick_server(in_service, position):
    # each busy server completes at rate mu, so pick a level in proportion to its servers
    running = 0
    for level, count in enumerate(in_service):
        running += count
        if position < running:
            return level
    return _lowest_in_service(in_service)


def _pad(values, size):
    values = np.asarray(values, dtype=float)
    if values.size >= size:
        return values
    return np.concatenate((values, np.zeros(size - values.size)))


def _noop(_message):
    return None
