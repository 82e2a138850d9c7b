"""CLI entry point."""

import argparse
import math
import os

from mmc_priority_pmf.config import (
    ALL_TESTS,
    MEMORY_LIMIT_ENV,
    build_config,
    build_model,
    read_key_value_file,
    resolve_memory_limit,
)
from mmc_priority_pmf.diagnostics import envelope, run_trial, sample_simplex
from mmc_priority_pmf.exceptions import (
    InvalidParameterError,
    MemoryLimitError,
    NoConvergenceError,
    PriorityQueueError,
)
from mmc_priority_pmf.filesystem import (
    ArtifactResult,
    build_run_summary,
    create_run_paths,
    read_json_file,
    write_histograms,
    write_joint_pmf,
    write_json_file,
    write_manifest,
    write_report,
    write_rows,
    write_text_file,
)
from mmc_priority_pmf.fpi import run_fpi
from mmc_priority_pmf.inversion import (
    balanced_alpha,
    chi,
    error_budget,
    full_marginal,
    full_pmf,
    invert_joint,
    plan_scheme,
    ratio_probe,
)
from mmc_priority_pmf.logging_config import setup_logging
from mmc_priority_pmf.model import ModelParams, erlang_quantities, from_fractions
from mmc_priority_pmf.pgf import PgfEvaluator
from mmc_priority_pmf.simulator import (
    SamplingMode,
    SimConfig,
    compare_marginals,
    replication_seeds,
    simulate,
)


def parse_args(argv=None):
    """Parse CLI arguments."""
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="Read defaults from a 'key = value' file.")
    common.add_argument("--manifest", help="Re-run the configuration recorded in a manifest.")
    common.add_argument("--output-dir", help="Directory for run outputs (default: runs).")
    common.add_argument(
        "--format",
        dest="array_format",
        choices=("raw", "csv"),
        help="Array export format (default: raw little-endian float64).",
    )
    common.add_argument(
        "--memory-limit",
        help=f"Largest allocation allowed, e.g. 2G (default: ${MEMORY_LIMIT_ENV} or 2G).",
    )
    common.add_argument("--verbose", action="store_const", const=True, help="Verbose logging.")

    model = common.add_argument_group("model")
    model.add_argument("--lambdas", help="Comma-separated arrival rates, highest priority first.")
    model.add_argument("--mu", type=float, help="Service rate per server.")
    model.add_argument("-c", "--servers", type=int, help="Number of servers (default: 1).")
    model.add_argument("--r", type=float, help="Total traffic intensity lambda/(c mu).")
    model.add_argument("--nu", help="Comma-separated level fractions of r, highest first.")
    model.add_argument("--K", "--levels", dest="levels", type=int, help="Number of levels.")
    model.add_argument("--nmax", type=int, help="Largest queue length per level (default: 100).")

    scheme = common.add_argument_group("inversion")
    scheme.add_argument("-M", "--mixture-radii", type=int, help="Contour radii (default: 4).")
    scheme.add_argument("--spread", type=float, help="Radius spread s (default: 0.05).")
    scheme.add_argument("--alpha", type=float, help="Target accuracy exponent (default: 12).")
    scheme.add_argument("--nfft", type=int, help="Transform size (default: power of two).")
    scheme.add_argument(
        "--allow-any-size",
        action="store_const",
        const=True,
        help="Accept transform sizes that are not powers of two.",
    )

    iteration = common.add_argument_group("fixed-point iteration")
    iteration.add_argument("--tol", type=float, help="Convergence tolerance (default: 1e-9).")
    iteration.add_argument("--max-iters", type=int, help="Iteration cap (default: 1e6).")

    parser = argparse.ArgumentParser(
        description="Exact joint queue-length distributions of multi-server priority queues."
    )
    subparsers = parser.add_subparsers(dest="command", required=True)
    subparsers.add_parser(
        "solve-fft", parents=[common], help="Joint PMF by mixture FFT inversion."
    )
    subparsers.add_parser(
        "solve-fpi", parents=[common], help="Joint PMF by fixed-point iteration."
    )

    diagnose = subparsers.add_parser(
        "diagnose", parents=[common], help="Accuracy tests over sampled level fractions."
    )
    diagnose.add_argument(
        "--tests", help=f"Comma-separated tests or 'all' ({', '.join(ALL_TESTS)})."
    )
    diagnose.add_argument("--trials", type=int, help="Sampled fraction vectors (default: 1).")
    diagnose.add_argument("--seed", type=int, help="Root random seed (default: 0).")
    diagnose.add_argument("--n-lim", type=int, help="Largest tested queue length.")
    for test in ALL_TESTS:
        diagnose.add_argument(f"--p-min-{test}", type=float, help=f"P_min of the {test} test.")

    probe = subparsers.add_parser(
        "probe", parents=[common], help="Error budget of the mixture inversion."
    )
    probe.add_argument("--p-tail", type=float, help="Smallest probed probability (default 1e-12).")

    simulate_parser = subparsers.add_parser(
        "simulate", parents=[common], help="Discrete-event simulation cross-check."
    )
    simulate_parser.add_argument("--events", type=int, help="Sampled events (default: 1e6).")
    simulate_parser.add_argument("--warmup", type=int, help="Warm-up events (default: 1e5).")
    simulate_parser.add_argument("--seed", type=int, help="Root random seed (default: 0).")
    simulate_parser.add_argument("--trials", type=int, help="Independent replications.")
    simulate_parser.add_argument("--batches", type=int, help="Batch-means batches (default: 32).")
    simulate_parser.add_argument("--sampling", choices=("time", "event"), help="Averaging mode.")
    simulate_parser.add_argument(
        "--preemptive",
        action="store_const",
        const=True,
        help="Let arrivals displace lower-priority clients in service.",
    )
    return parser.parse_args(argv)


def format_operator_error(exc):
    """Return a clear operator-facing error message."""
    if isinstance(exc, NoConvergenceError):
        return f"{exc} Iterations: {exc.iterations}. Last delta: {exc.last_delta:.3e}."
    if isinstance(exc, MemoryLimitError):
        return f"{exc} Required bytes: {exc.required_bytes}. Limit bytes: {exc.limit_bytes}."
    return str(exc)


def main(args=None, logger=None, environ=None):
    """Run the CLI workflow."""
    args = args or parse_args()
    logger = logger or setup_logging(verbose=bool(getattr(args, "verbose", False)))

    try:
        return run(args, logger, environ=environ)
    except PriorityQueueError as exc:
        logger.error(format_operator_error(exc))
        return getattr(exc, "exit_code", 1)


def run(args, logger, environ=None):
    """Resolve the effective configuration and dispatch the subcommand."""
    config = config_from_args(args, environ)
    handlers = {
        "solve-fft": solve_fft,
        "solve-fpi": solve_fpi,
        "diagnose": diagnose,
        "probe": probe_fft,
        "simulate": simulate_cmd,
    }
    return handlers[config.subcommand](config, logger)


def config_from_args(args, environ=None):
    """Layer defaults, manifest, config file, environment and flags, later winning."""
    environ = os.environ if environ is None else environ
    base = None
    manifest = getattr(args, "manifest", None)
    if manifest:
        recorded = dict(read_json_file(manifest).get("config", {}))
        base = build_config(recorded)

    overrides = {}
    config_file = getattr(args, "config", None)
    if config_file:
        overrides.update(read_key_value_file(config_file))
    overrides.update(_flag_overrides(args))
    flag_limit = getattr(args, "memory_limit", None)
    if flag_limit is not None or environ.get(MEMORY_LIMIT_ENV):
        overrides["memory_limit"] = resolve_memory_limit(flag_limit, environ)
    return build_config(overrides, base=base)


def solve_fft(config, logger):
    model = build_model(config)
    if model.levels < 2:
        raise InvalidParameterError(
            "solve-fft needs K >= 2. A single level has the closed form "
            "P(n) = (1-r) r^n; use solve-fpi or diagnose for K=1."
        )
    scheme = _plan(config, model)
    logger.info(
        "Inverting K=%d, r=%.6g on [0, %d]^%d with N_fft=%d and M=%d radii.",
        model.levels,
        model.r,
        config.nmax,
        model.levels,
        scheme.n_fft,
        scheme.radii_count,
    )
    pmf = invert_joint(
        PgfEvaluator(model), scheme, config.nmax, config.memory_limit, output=logger.info
    )
    return _write_pmf_run(config, pmf, logger)


def solve_fpi(config, logger):
    model = build_model(config)
    logger.info(
        "Iterating K=%d, r=%.6g on [0, %d]^%d.", model.levels, model.r, config.nmax, model.levels
    )
    result = run_fpi(
        model,
        config.nmax,
        tol=config.tol,
        max_iters=config.max_iters,
        memory_limit=config.memory_limit,
        output=logger.info,
    )
    logger.info("Iterations: %d, final delta: %.3e.", result.iterations, result.final_delta)
    return _write_pmf_run(config, result.pmf, logger)


def diagnose(config, logger):
    models = _diagnostic_models(config)
    paths = create_run_paths(config.output_dir, config.subcommand)
    artifacts = []
    reports_by_test = {test: [] for test in config.tests}
    trials = []

    for index, model in enumerate(models, start=1):
        logger.info("Trial %d/%d: rates=%s", index, len(models), _format_vector(model.rates))
        scheme = _plan(config, model) if model.levels > 1 else None
        reports = run_trial(
            model,
            config.tests,
            config.nmax,
            scheme=scheme,
            p_min={test: config.p_min_for(test) for test in config.tests},
            n_lim=config.n_lim,
            tol=config.tol,
            max_iters=config.max_iters,
            memory_limit=config.memory_limit,
            output=logger.debug,
        )
        trial_dir = paths.run_dir / f"trial_{index:03d}"
        trial_dir.mkdir()
        for report in reports:
            report.config["trial"] = index
            report.config["seed"] = config.seed
            reports_by_test[report.test].append(report)
            logger.info("  %s: Xi = %.3f", report.test, report.xi)
            for path in write_report(report, trial_dir):
                artifacts.append(_written(f"trial {index} {report.test}", path))
        trials.append(
            {
                "trial": index,
                "rates": list(model.rates),
                "xi": {report.test: report.xi for report in reports},
            }
        )

    summary = {"tests": {}, "trials": trials}
    for test, reports in reports_by_test.items():
        worst = envelope(reports)
        path = write_rows(paths.run_dir / f"envelope_{test}.csv", ["index", "xi"], worst)
        artifacts.append(_written(f"envelope {test}", path))
        summary["tests"][test] = min(report.xi for report in reports)
        logger.info(
            "Worst Xi over %d trial(s) for %s: %.3f", len(reports), test, summary["tests"][test]
        )

    summary_path = paths.run_dir / "diagnostics_summary.json"
    write_json_file(summary_path, summary)
    artifacts.append(_written("diagnostics summary", summary_path))
    return _finish(paths, config, artifacts, logger)


def probe_fft(config, logger):
    if config.r is None:
        raise InvalidParameterError("probe needs --r.")
    r = config.r
    if not 0 < r < 1:
        raise InvalidParameterError(f"probe needs 0 < r < 1, got {r}.")
    model = ModelParams(servers=1, mu=1.0, rates=(r,))
    n_max = int(math.floor(math.log(config.p_tail / (1.0 - r)) / math.log(r)))
    if n_max < 1:
        raise InvalidParameterError(
            f"Tail probability {config.p_tail:g} leaves no probe points at r={r}."
        )
    scheme = _plan(config, model, n_max)
    budget = error_budget(scheme, n_max, r)
    measured, exact = ratio_probe(r, scheme.xi[0], scheme.n_fft)

    paths = create_run_paths(config.output_dir, config.subcommand)
    discretization = [budget.discretization] * budget.n.size
    rows = zip(budget.n.tolist(), budget.overall, budget.fft, discretization, budget.fft_bound)
    budget_path = write_rows(
        paths.run_dir / "error_budget.csv",
        ["n", "overall", "fft", "discretization", "fft_bound"],
        rows,
    )
    ratio_path = write_rows(
        paths.run_dir / "ratio_probe.csv",
        ["n", "measured", "exact"],
        ((n, value, exact) for n, value in enumerate(measured)),
    )
    worst = float(budget.overall.max())
    summary = {
        "r": r,
        "N_max": n_max,
        "scheme": scheme.to_metadata(),
        "worst_overall_error": worst,
        "discretization_error": budget.discretization,
        "chi": chi(scheme.radii_count, scheme.spread, scheme.alpha) if scheme.alpha != 15 else None,
        "balanced_alpha": balanced_alpha(n_max, scheme.n_fft),
    }
    summary_path = paths.run_dir / "probe_summary.json"
    write_json_file(summary_path, summary)
    logger.info(
        "Probe r=%.6g, N_max=%d, N_fft=%d: worst relative error %.3e, discretization %.3e.",
        r,
        n_max,
        scheme.n_fft,
        worst,
        budget.discretization,
    )
    artifacts = [
        _written("error budget", budget_path),
        _written("ratio probe", ratio_path),
        _written("probe summary", summary_path),
    ]
    return _finish(paths, config, artifacts, logger)


def simulate_cmd(config, logger):
    model = build_model(config)
    seeds = replication_seeds(config.seed, config.trials) if config.trials > 1 else [config.seed]
    paths = create_run_paths(config.output_dir, config.subcommand)
    erlang = erlang_quantities(model)

    results = []
    for index, seed in enumerate(seeds, start=1):
        logger.info("Replication %d/%d (seed %d).", index, len(seeds), seed)
        results.append(
            simulate(
                SimConfig(
                    model=model,
                    warmup_events=config.warmup,
                    sample_events=config.events,
                    seed=seed,
                    sampling_mode=SamplingMode(config.sampling),
                    batches=config.batches,
                    preemptive=config.preemptive,
                ),
                output=logger.info,
            )
        )

    n_max = max(1, max(histogram.size for result in results for histogram in result.histograms) - 1)
    scheme = _plan(config, model, n_max) if model.levels > 1 else None
    analytic = [full_marginal(model, level, n_max, scheme, erlang) for level in range(model.levels)]

    artifacts = []
    replications = []
    for index, result in enumerate(results, start=1):
        comparisons = compare_marginals(result, analytic)
        empty_z = _z_score(result.empty_fraction, erlang.p0, result.empty_standard_error)
        for comparison in comparisons:
            logger.info(
                "Replication %d level %d: TV=%.3e, max z=%.2f",
                index,
                comparison.level,
                comparison.tv_distance,
                comparison.max_z,
            )
        logger.info(
            "Replication %d empty fraction %.5f vs p0 %.5f (z=%.2f).",
            index,
            result.empty_fraction,
            erlang.p0,
            empty_z,
        )
        path = write_histograms(result, paths.run_dir / f"histograms_{index:03d}.csv")
        artifacts.append(_written(f"replication {index} histograms", path))
        replications.append(
            {
                "replication": index,
                "seed": seeds[index - 1],
                "events": result.events,
                "total_time": result.total_time,
                "empty_fraction": result.empty_fraction,
                "empty_half_width": result.empty_half_width,
                "empty_z": empty_z,
                "mean_queue_lengths": result.mean_queue_lengths,
                "mean_half_widths": result.mean_half_widths,
                "busy_histogram": result.busy_histogram.tolist(),
                "comparisons": [
                    {"level": item.level, "tv_distance": item.tv_distance, "max_z": item.max_z}
                    for item in comparisons
                ],
            }
        )

    summary_path = paths.run_dir / "comparison.json"
    write_json_file(
        summary_path,
        {
            "p0": erlang.p0,
            "server_distribution": list(erlang.server_distribution),
            "replications": replications,
        },
    )
    artifacts.append(_written("comparison", summary_path))
    return _finish(paths, config, artifacts, logger)


def _write_pmf_run(config, pmf, logger):
    full = full_pmf(pmf)
    paths = create_run_paths(config.output_dir, config.subcommand)
    artifacts = []
    for stem, item in (("pmf_wait_conditional", pmf), ("pmf_full", full)):
        for path in write_joint_pmf(item, paths.run_dir, stem, config.array_format):
            artifacts.append(_written(f"{item.kind.value} PMF", path))
    return _finish(paths, config, artifacts, logger)


def _written(name, path):
    return ArtifactResult(name=name, status="written", path=path)


def _finish(paths, config, artifacts, logger):
    write_manifest(paths, config.subcommand, config.to_metadata(), artifacts)
    write_text_file(paths.run_dir / "run_summary.txt", build_run_summary(artifacts))
    logger.info("Run written to %s", paths.run_dir)
    return 0


def _plan(config, model, n_max=None):
    return plan_scheme(
        model,
        config.nmax if n_max is None else n_max,
        radii_count=config.mixture_radii,
        spread=config.spread,
        alpha=config.alpha,
        n_fft=config.nfft,
        allow_any_size=config.allow_any_size,
    )


def _diagnostic_models(config):
    if config.lambdas is not None or config.nu is not None:
        return [build_model(config)]
    if config.r is None or config.levels is None:
        raise InvalidParameterError("diagnose needs --r with --K (or a full model).")
    mu = 1.0 if config.mu is None else config.mu
    return [
        from_fractions(config.r, nu, config.servers, mu=mu)
        for nu in sample_simplex(config.levels, config.trials, config.seed)
    ]


def _flag_overrides(args):
    overrides = {"subcommand": getattr(args, "command", None)}
    for key in (
        "mu",
        "servers",
        "r",
        "levels",
        "nmax",
        "mixture_radii",
        "spread",
        "alpha",
        "nfft",
        "allow_any_size",
        "tol",
        "max_iters",
        "trials",
        "seed",
        "n_lim",
        "p_tail",
        "events",
        "warmup",
        "batches",
        "sampling",
        "preemptive",
        "output_dir",
        "array_format",
    ):
        overrides[key] = getattr(args, key, None)

    for key in ("lambdas", "nu"):
        value = getattr(args, key, None)
        overrides[key] = _parse_vector(value, key) if value is not None else None

    tests = getattr(args, "tests", None)
    if tests is not None:
        overrides["tests"] = ALL_TESTS if tests == "all" else tuple(_split(tests))

    p_min = {test: getattr(args, f"p_min_{test}", None) for test in ALL_TESTS}
    overrides["p_min"] = {test: value for test, value in p_min.items() if value is not None}

    return overrides


def _parse_vector(value, name):
    if isinstance(value, (list, tuple)):
        return tuple(float(item) for item in value)
    try:
        return tuple(float(item) for item in _split(value))
    except ValueError as exc:
        raise InvalidParameterError(
            f"--{name} expects comma-separated numbers, got '{value}'."
        ) from exc


def _split(value):
    return [item.strip() for item in str(value).split(",") if item.strip()]


def _format_vector(values):
    return "(" + ", ".join(f"{value:.4g}" for value in values) + ")"


def _z_score(estimate, expected, standard_error):
    if standard_error <= 0:
        return 0.0 if estimate == expected else math.inf
    return abs(estimate - expected) / standard_error
