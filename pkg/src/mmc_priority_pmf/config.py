"""Run configuration, key-value config files and the memory guard."""

import math
import os
import re
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from mmc_priority_pmf.exceptions import (
    ConfigFileError,
    InvalidParameterError,
    MemoryLimitError,
    ValidationError,
)
from mmc_priority_pmf.model import ModelParams, from_fractions

MEMORY_LIMIT_ENV = "MMC_PRIORITY_PMF_MEMORY_LIMIT"
DEFAULT_MEMORY_LIMIT = 2 * 1024**3
ALL_TESTS = ("agg", "nn", "xhi", "xlo", "fpi")
DEFAULT_TESTS = ("agg", "nn", "xhi", "xlo")
DEFAULT_P_MIN = {"agg": 2.4e-6, "nn": 1e-10, "xhi": 1e-20, "xlo": 1e-6, "fpi": 1e-10}
ARRAY_FORMATS = ("raw", "csv")
SUBCOMMANDS = ("solve-fft", "solve-fpi", "diagnose", "probe", "simulate")

SIZE_PATTERN = re.compile(r"^\s*(\d+(?:\.\d+)?)\s*([KMGT]?)i?B?\s*$", re.IGNORECASE)
SIZE_UNITS = {"": 1, "K": 1024, "M": 1024**2, "G": 1024**3, "T": 1024**4}

VECTOR_KEYS = {"lambdas", "nu", "tests"}
INT_KEYS = {
    "servers",
    "nmax",
    "mixture_radii",
    "nfft",
    "max_iters",
    "n_lim",
    "trials",
    "seed",
    "events",
    "warmup",
    "batches",
    "levels",
}
FLOAT_KEYS = {"mu", "r", "spread", "alpha", "tol", "p_tail"}
BOOL_KEYS = {"allow_any_size", "preemptive"}


@dataclass
class RunConfig:
    """Effective configuration of one CLI run."""

    subcommand: str = "solve-fft"
    lambdas: tuple | None = None
    mu: float | None = None
    servers: int = 1
    r: float | None = None
    nu: tuple | None = None
    levels: int | None = None
    nmax: int = 100
    mixture_radii: int = 4
    spread: float = 0.05
    alpha: float = 12.0
    nfft: int | None = None
    allow_any_size: bool = False
    tol: float = 1e-9
    max_iters: int = 1_000_000
    tests: tuple = DEFAULT_TESTS
    p_min: dict = field(default_factory=dict)
    n_lim: int | None = None
    trials: int = 1
    seed: int = 0
    events: int = 10**6
    warmup: int = 10**5
    batches: int = 32
    sampling: str = "time"
    preemptive: bool = False
    p_tail: float = 1e-12
    memory_limit: int = DEFAULT_MEMORY_LIMIT
    output_dir: str = "runs"
    array_format: str = "raw"

    def p_min_for(self, test):
        return self.p_min.get(test, DEFAULT_P_MIN[test])

    def to_metadata(self):
        metadata = asdict(self)
        for key in ("lambdas", "nu", "tests"):
            if metadata[key] is not None:
                metadata[key] = list(metadata[key])
        return metadata


def build_config(overrides, base=None):
    """Merge non-None overrides into base (or the defaults) and validate."""
    values = asdict(base) if base is not None else {}
    known = {item.name for item in fields(RunConfig)}
    for key, value in overrides.items():
        if key not in known:
            raise ConfigFileError(f"Unknown configuration key '{key}'.")
        if value is None:
            continue
        if key == "p_min":
            merged = dict(values.get("p_min", {}))
            merged.update(value)
            values["p_min"] = merged
        else:
            values[key] = value

    for key in ("lambdas", "nu", "tests"):
        if values.get(key) is not None:
            values[key] = tuple(values[key])
    config = RunConfig(**values)
    validate_config(config)
    return config


def validate_config(config):
    if config.nmax < 1:
        raise InvalidParameterError(f"nmax must be at least 1, got {config.nmax}.")
    if config.array_format not in ARRAY_FORMATS:
        raise InvalidParameterError(
            f"Array format must be one of {', '.join(ARRAY_FORMATS)}, got '{config.array_format}'."
        )
    unknown = [test for test in config.tests if test not in ALL_TESTS]
    if unknown:
        raise InvalidParameterError(
            f"Unknown diagnostic test(s): {', '.join(unknown)}. Choose from {', '.join(ALL_TESTS)}."
        )
    for test, value in config.p_min.items():
        if test not in ALL_TESTS or not value > 0:
            raise InvalidParameterError(f"Invalid P_min override {test}={value!r}.")
    if config.trials < 1:
        raise InvalidParameterError(f"trials must be at least 1, got {config.trials}.")
    if config.sampling not in ("time", "event"):
        raise InvalidParameterError(
            f"Sampling mode must be 'time' or 'event', got '{config.sampling}'."
        )
    if config.subcommand not in SUBCOMMANDS:
        raise InvalidParameterError(f"Unknown subcommand '{config.subcommand}'.")
    if config.memory_limit <= 0:
        raise InvalidParameterError("Memory limit must be positive.")


def build_model(config):
    """Return the ModelParams described by exactly one model form."""
    rates_form = config.lambdas is not None
    fractions_form = config.r is not None
    if rates_form == fractions_form:
        raise ValidationError(
            "Provide exactly one model: either --lambdas/--mu/--servers or --r/--nu/--servers."
        )
    if rates_form:
        if config.mu is None:
            raise ValidationError("--lambdas needs --mu.")
        return ModelParams.from_rates(config.lambdas, config.mu, config.servers)

    nu = config.nu
    if nu is None:
        if config.levels is None:
            raise ValidationError("--r needs --nu (or --levels for equal fractions).")
        nu = (1.0,) * config.levels
    mu = 1.0 if config.mu is None else config.mu
    return from_fractions(config.r, nu, config.servers, mu=mu)


def parse_size(text):
    """Parse '2G', '512M', '1.5GiB' or a plain byte count."""
    if isinstance(text, int):
        return text
    match = SIZE_PATTERN.match(str(text))
    if not match:
        raise InvalidParameterError(f"Cannot parse memory size '{text}'.")
    number, unit = match.groups()
    return int(float(number) * SIZE_UNITS[unit.upper()])


def resolve_memory_limit(flag_value=None, environ=None):
    """Flag beats environment variable beats the 2 GiB default."""
    if flag_value is not None:
        return parse_size(flag_value)
    environ = os.environ if environ is None else environ
    if environ.get(MEMORY_LIMIT_ENV):
        return parse_size(environ[MEMORY_LIMIT_ENV])
    return DEFAULT_MEMORY_LIMIT


def check_memory(required_bytes, limit_bytes, what):
    """Raise MemoryLimitError before allocating more than limit_bytes."""
    if limit_bytes is not None and required_bytes > limit_bytes:
        raise MemoryLimitError(
            f"{what} needs {_format_bytes(required_bytes)}, above the memory limit of "
            f"{_format_bytes(limit_bytes)}. Lower --nmax or raise --memory-limit.",
            required_bytes=required_bytes,
            limit_bytes=limit_bytes,
        )


def read_key_value_file(path):
    """Parse 'key = value' lines into typed RunConfig overrides."""
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise ConfigFileError(f"Cannot read config file '{path}': {exc}") from exc

    values = {}
    p_min = {}
    for number, raw_line in enumerate(lines, start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigFileError(f"{path}:{number}: expected 'key = value', got '{raw_line}'.")
        key, value = (part.strip() for part in line.split("=", 1))
        key = key.replace("-", "_")
        try:
            if key.startswith("p_min_"):
                p_min[key[len("p_min_") :]] = float(value)
            else:
                values[key] = parse_value(key, value)
        except ValueError as exc:
            raise ConfigFileError(f"{path}:{number}: invalid value for '{key}': {exc}") from exc

    if p_min:
        values["p_min"] = p_min
    return values


def parse_value(key, value):
    if key in VECTOR_KEYS:
        items = [item.strip() for item in value.split(",") if item.strip()]
        return tuple(items) if key == "tests" else tuple(float(item) for item in items)
    if key in INT_KEYS:
        return int(float(value)) if "e" in value.lower() else int(value)
    if key in FLOAT_KEYS:
        return float(value)
    if key in BOOL_KEYS:
        lowered = value.lower()
        if lowered not in ("true", "false", "1", "0", "yes", "no"):
            raise ValueError(f"expected a boolean, got '{value}'")
        return lowered in ("true", "1", "yes")
    if key == "memory_limit":
        return parse_size(value)
    return value


def _format_bytes(count):
    if count < 1024:
        return f"{count} B"
    exponent = min(int(math.log(count, 1024)), 4)
    return f"{count / 1024**exponent:.2f} {'KMGT'[exponent - 1]}iB"
