"""Filesystem helpers for run directories and exported artifacts."""

import csv
import hashlib
import json
import re
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path

import numpy as np

from mmc_priority_pmf import __version__
from mmc_priority_pmf.exceptions import (
    ConfigFileError,
    DimensionMismatchError,
    InvalidParameterError,
    NegativeProbabilityError,
)
from mmc_priority_pmf.fpi import JointPmf, PmfKind
from mmc_priority_pmf.model import ModelParams

INVALID_FILENAME_CHARS = re.compile(r"[^A-Za-z0-9._-]+")
NEGATIVE_TOLERANCE = 1e-12
RAW_DTYPE = "<f8"
TIMESTAMP_FORMAT = "%Y%m%d_%H%M%S"


@dataclass(frozen=True)
class RunPaths:
    """Output directory of a single run."""

    output_root: Path
    run_dir: Path
    timestamp: str


@dataclass(frozen=True)
class ArtifactResult:
    """Outcome of writing one artifact."""

    name: str
    status: str
    path: Path | None = None
    detail: str = ""

    def to_metadata(self):
        return {
            "name": self.name,
            "status": self.status,
            "path": str(self.path) if self.path else None,
            "detail": self.detail,
        }


def create_run_paths(output_root="runs", subcommand="run"):
    """Create a fresh timestamped directory for one run."""
    root = validate_output_root(output_root)
    root.mkdir(parents=True, exist_ok=True)

    timestamp = datetime.now().strftime(TIMESTAMP_FORMAT)
    stem = f"{sanitize_filename_component(subcommand, 'run')}_{timestamp}"
    run_dir = root / stem
    suffix = 1
    while run_dir.exists():
        run_dir = root / f"{stem}_{suffix}"
        suffix += 1
    run_dir.mkdir(parents=True)
    return RunPaths(output_root=root, run_dir=run_dir, timestamp=timestamp)


def write_text_file(path, content):
    """Write text content to disk."""
    path.write_text(content, encoding="utf-8")


def write_json_file(path, content):
    """Write JSON content to disk."""
    path.write_text(json.dumps(content, indent=2, sort_keys=True), encoding="utf-8")


def read_json_file(path):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise ConfigFileError(f"Cannot read JSON file '{path}': {exc}") from exc


def write_joint_pmf(pmf, directory, stem, array_format="raw"):
    """Export a PMF as a JSON header plus a CSV or raw float64 array file."""
    if array_format not in ("raw", "csv"):
        raise InvalidParameterError(f"Unsupported array format '{array_format}'.")
    minimum = float(pmf.values.min())
    if minimum < -NEGATIVE_TOLERANCE:
        raise NegativeProbabilityError(
            f"PMF holds a probability of {minimum:.3e}, below the round-off tolerance."
        )

    stem = sanitize_filename_component(stem, "pmf")
    array_path = Path(directory) / f"{stem}.{'bin' if array_format == 'raw' else 'csv'}"
    header_path = Path(directory) / f"{stem}.json"

    if array_format == "raw":
        with array_path.open("wb") as handle:
            for block in _clamped_blocks(pmf.values):
                handle.write(block.astype(RAW_DTYPE).tobytes(order="C"))
    else:
        with array_path.open("w", encoding="utf-8", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow([f"n{axis + 1}" for axis in range(pmf.levels)] + ["value"])
            for index, value in np.ndenumerate(pmf.values):
                writer.writerow([*index, repr(max(float(value), 0.0))])

    header = pmf.header()
    header.update({"dtype": RAW_DTYPE, "order": "C", "array_file": array_path.name})
    write_json_file(header_path, header)
    return [header_path, array_path]


def read_joint_pmf(header_path):
    """Import a PMF written by write_joint_pmf."""
    header_path = Path(header_path)
    header = read_json_file(header_path)
    shape = tuple(header["shape"])
    model = ModelParams(servers=header["servers"], mu=header["mu"], rates=tuple(header["rates"]))
    array_path = header_path.parent / header["array_file"]

    if array_path.suffix == ".bin":
        values = np.fromfile(array_path, dtype=header.get("dtype", RAW_DTYPE))
        if values.size != int(np.prod(shape)):
            raise DimensionMismatchError(
                f"{array_path} holds {values.size} values, expected shape {shape}."
            )
        values = values.astype(float).reshape(shape)
    else:
        values = np.zeros(shape)
        with array_path.open(encoding="utf-8", newline="") as handle:
            reader = csv.reader(handle)
            next(reader)
            for row in reader:
                values[tuple(int(item) for item in row[:-1])] = float(row[-1])

    reserved = {"K", "shape", "kind", "generator", "axis_order", "dtype", "order", "array_file"}
    reserved |= set(model.to_metadata())
    return JointPmf(
        values=values,
        kind=PmfKind(header["kind"]),
        model=model,
        generator=header["generator"],
        metadata={key: value for key, value in header.items() if key not in reserved},
    )


def write_report(report, directory, stem=None):
    """Write a diagnostics report as JSON plus its per-point trace CSV."""
    stem = sanitize_filename_component(stem or report.test, "report")
    json_path = Path(directory) / f"{stem}.json"
    trace_path = Path(directory) / f"{stem}_trace.csv"
    write_json_file(json_path, report.to_metadata())
    write_rows(trace_path, ["index", "xi"], report.trace)
    return [json_path, trace_path]


def write_rows(path, header, rows):
    """Write a CSV file with repr-exact floats."""
    with Path(path).open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(float(item)) if _is_float(item) else item for item in row])
    return Path(path)


def write_histograms(result, path):
    """Write simulated marginals as level,n,mass,half_width rows."""
    rows = []
    for level, (masses, widths) in enumerate(zip(result.histograms, result.half_widths)):
        for n, (mass, width) in enumerate(zip(masses, widths)):
            rows.append((level, n, float(mass), float(width)))
    return write_rows(path, ["level", "n", "mass", "half_width"], rows)


def file_checksum(path):
    digest = hashlib.sha256()
    with Path(path).open("rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_manifest(paths, subcommand, config, artifacts):
    """Record the effective configuration and artifact checksums of a run."""
    written = [artifact for artifact in artifacts if artifact.status == "written"]
    manifest = {
        "subcommand": subcommand,
        "version": __version__,
        "timestamp": paths.timestamp,
        "config": config,
        "artifacts": {
            str(artifact.path.relative_to(paths.run_dir)): file_checksum(artifact.path)
            for artifact in written
        },
    }
    manifest_path = paths.run_dir / "manifest.json"
    write_json_file(manifest_path, manifest)
    return manifest_path


def build_run_summary(artifacts):
    """Return a human-readable summary of written and skipped artifacts."""
    lines = ["Run Summary", ""]
    for artifact in artifacts:
        line = f"- [{artifact.status}] {artifact.name}"
        if artifact.path:
            line += f" -> {artifact.path.name}"
        if artifact.detail:
            line += f": {artifact.detail}"
        lines.append(line)
    return "\n".join(lines) + "\n"


def sanitize_filename_component(name, fallback="artifact"):
    """Return a filesystem-safe filename component."""
    sanitized = INVALID_FILENAME_CHARS.sub("_", Path(name).name).strip("._-")
    return sanitized or fallback


def validate_output_root(output_root):
    """Validate the requested output root path."""
    path = Path(output_root).expanduser()
    if path.exists() and not path.is_dir():
        raise InvalidParameterError(f"Output path '{path}' exists and is not a directory.")
    return path


def _clamped_blocks(values):
    if values.ndim == 1:
        yield np.maximum(values, 0.0)
        return
    for block in values:
        yield np.maximum(block, 0.0)


def _is_float(item):
    return isinstance(item, (float, np.floating))
