"""Unit tests for filesystem helpers."""

import json

import numpy as np
import pytest

from mmc_priority_pmf.diagnostics import DiagnosticsReport
from mmc_priority_pmf.exceptions import (
    ConfigFileError,
    InvalidParameterError,
    NegativeProbabilityError,
)
from mmc_priority_pmf.filesystem import (
    ArtifactResult,
    build_run_summary,
    create_run_paths,
    file_checksum,
    read_joint_pmf,
    read_json_file,
    sanitize_filename_component,
    validate_output_root,
    write_joint_pmf,
    write_manifest,
    write_report,
    write_text_file,
)
from mmc_priority_pmf.fpi import JointPmf, PmfKind
from mmc_priority_pmf.model import ModelParams
from tests import _bootstrap  # noqa: F401


def sample_pmf():
    model = ModelParams(servers=2, mu=1.5, rates=(0.2, 0.3))
    values = np.outer(0.8 ** np.arange(4), 0.7 ** np.arange(4)) / 10.0
    return JointPmf(
        values=values,
        kind=PmfKind.WAIT_CONDITIONAL,
        model=model,
        generator="fft",
        metadata={"N_fft": 8},
    )


def test_create_run_paths_creates_distinct_directories(tmp_path):
    first = create_run_paths(tmp_path / "runs", "solve-fft")
    second = create_run_paths(tmp_path / "runs", "solve-fft")

    assert first.run_dir.is_dir()
    assert second.run_dir.is_dir()
    assert first.run_dir != second.run_dir
    assert first.run_dir.name.startswith("solve-fft_")


def test_raw_pmf_export_round_trips_bit_exactly(tmp_path):
    pmf = sample_pmf()

    header_path, array_path = write_joint_pmf(pmf, tmp_path, "pmf_wait_conditional")
    restored = read_joint_pmf(header_path)

    assert array_path.suffix == ".bin"
    assert array_path.stat().st_size == 16 * 8
    assert np.array_equal(restored.values, pmf.values)
    assert restored.kind is PmfKind.WAIT_CONDITIONAL
    assert restored.model == pmf.model
    assert restored.metadata == {"N_fft": 8}

    header = json.loads(header_path.read_text(encoding="utf-8"))
    assert header["K"] == 2
    assert header["shape"] == [4, 4]
    assert header["axis_order"] == "highest-priority-first"


def test_csv_pmf_export_round_trips_bit_exactly(tmp_path):
    pmf = sample_pmf()

    header_path, array_path = write_joint_pmf(pmf, tmp_path, "pmf", array_format="csv")
    restored = read_joint_pmf(header_path)

    assert array_path.read_text(encoding="utf-8").splitlines()[0] == "n1,n2,value"
    assert np.array_equal(restored.values, pmf.values)


def test_pmf_export_clamps_round_off_and_rejects_negative_mass(tmp_path):
    pmf = sample_pmf()
    pmf.values[3, 3] = -1e-15

    header_path, _ = write_joint_pmf(pmf, tmp_path, "clamped")
    assert read_joint_pmf(header_path).values[3, 3] == 0.0

    pmf.values[3, 3] = -1e-6
    with pytest.raises(NegativeProbabilityError):
        write_joint_pmf(pmf, tmp_path, "negative")


def test_write_report_writes_json_and_trace(tmp_path):
    report = DiagnosticsReport(test="agg", xi=10.5, trace=[(1, 12.0), (2, 10.5)])

    json_path, trace_path = write_report(report, tmp_path, "agg")

    assert read_json_file(json_path)["xi"] == 10.5
    assert trace_path.read_text(encoding="utf-8").splitlines() == [
        "index,xi",
        "1,12.0",
        "2,10.5",
    ]


def test_manifest_records_artifact_checksums(tmp_path):
    paths = create_run_paths(tmp_path, "probe")
    artifact_path = paths.run_dir / "probe_summary.json"
    write_text_file(artifact_path, "{}")
    artifacts = [
        ArtifactResult(name="probe summary", status="written", path=artifact_path),
        ArtifactResult(name="timing", status="skipped", detail="not requested"),
    ]

    manifest_path = write_manifest(paths, "probe", {"r": 0.9}, artifacts)
    manifest = read_json_file(manifest_path)

    assert manifest["subcommand"] == "probe"
    assert manifest["config"] == {"r": 0.9}
    assert manifest["artifacts"] == {"probe_summary.json": file_checksum(artifact_path)}


def test_build_run_summary_lists_written_and_skipped_artifacts(tmp_path):
    summary = build_run_summary(
        [
            ArtifactResult(name="joint PMF", status="written", path=tmp_path / "pmf.bin"),
            ArtifactResult(name="timing", status="skipped", detail="not requested"),
        ]
    )

    assert "- [written] joint PMF -> pmf.bin" in summary
    assert "- [skipped] timing: not requested" in summary


def test_read_json_file_wraps_errors(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{", encoding="utf-8")

    with pytest.raises(ConfigFileError):
        read_json_file(path)


def test_sanitize_filename_component_removes_path_traversal_and_symbols():
    assert sanitize_filename_component("../bad:name?.txt") == "bad_name_.txt"
    assert sanitize_filename_component("...", "fallback") == "fallback"


def test_validate_output_root_rejects_existing_file(tmp_path):
    target = tmp_path / "file.txt"
    target.write_text("x", encoding="utf-8")

    with pytest.raises(InvalidParameterError) as context:
        validate_output_root(target)

    assert "is not a directory" in str(context.value)
