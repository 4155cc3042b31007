"""Dataset bundles, bank persistence, and result export.

A *bundle* is the ingestion format: a JSON manifest plus one delimited
text file per experiment (rows ``x1,...,xd,y``; an empty field marks a
missing value and drops the row at load). A *bank directory* is the
persistence format: a JSON manifest plus per-experiment numeric files
(raw data, posterior samples, weights), each guarded by a CRC-32
checksum. Numeric files are 64-bit little-endian binary by default;
portable text mode stores 17-significant-digit decimals instead.
"""

from __future__ import annotations

import io
import json
import re
import struct
import warnings
import zlib
from pathlib import Path

import numpy as np
from filelock import FileLock

from .core import (
    DataError,
    Experiment,
    ModelBank,
    PosteriorSampleSet,
    SamplerConfig,
    WeightVector,
    validate_experiment,
)

BANK_MANIFEST = "bank.json"
BUNDLE_MANIFEST = "manifest.json"
FORMAT_VERSION = 1

_MAGIC_BINARY = b"EXPRMAT1"
_MAGIC_TEXT = "EXPRTXT1"
_SAFE_ID = re.compile(r"^[A-Za-z0-9._-]+$")


def _matrix_to_bytes(arr: np.ndarray, mode: str) -> bytes:
    mat = np.ascontiguousarray(np.atleast_2d(arr), dtype="<f8")
    if arr.ndim == 1:
        mat = mat.reshape(-1, 1)
    rows, cols = mat.shape
    if mode == "binary":
        return _MAGIC_BINARY + struct.pack("<II", rows, cols) + mat.tobytes()
    if mode == "text":
        buf = io.StringIO()
        buf.write(f"{_MAGIC_TEXT} {rows} {cols}\n")
        for row in mat:
            buf.write(" ".join(f"{v:.17g}" for v in row))
            buf.write("\n")
        return buf.getvalue().encode("utf-8")
    raise ValueError(f"unknown mode {mode!r}")


def _matrix_from_bytes(raw: bytes, path) -> np.ndarray:
    if raw[: len(_MAGIC_BINARY)] == _MAGIC_BINARY:
        header_len = len(_MAGIC_BINARY) + 8
        if len(raw) < header_len:
            raise DataError(f"{path}: truncated header ({len(raw)} bytes)")
        rows, cols = struct.unpack("<II", raw[len(_MAGIC_BINARY) : header_len])
        want = rows * cols * 8
        got = len(raw) - header_len
        if got != want:
            raise DataError(
                f"{path}: truncated payload at byte {header_len + got}: "
                f"expected {want} bytes ({rows}x{cols} float64), found {got}"
            )
        return np.frombuffer(raw[header_len:], dtype="<f8").reshape(rows, cols).copy()
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise DataError(f"{path}: unrecognized numeric file ({exc})") from None
    lines = text.splitlines()
    if not lines or not lines[0].startswith(_MAGIC_TEXT):
        raise DataError(f"{path}: bad magic, neither {_MAGIC_BINARY!r} nor {_MAGIC_TEXT!r}")
    head = lines[0].split()
    if len(head) != 3:
        raise DataError(f"{path}: line 1: malformed header {lines[0]!r}")
    rows, cols = int(head[1]), int(head[2])
    if len(lines) - 1 != rows:
        raise DataError(f"{path}: expected {rows} data lines, found {len(lines) - 1}")
    out = np.empty((rows, cols))
    for i, line in enumerate(lines[1:], start=2):
        fields = line.split()
        if len(fields) != cols:
            raise DataError(f"{path}: line {i}: expected {cols} fields, got {len(fields)}")
        try:
            out[i - 2] = [float(f) for f in fields]
        except ValueError as exc:
            raise DataError(f"{path}: line {i}: {exc}") from None
    return out


def _write_checked(directory: Path, filename: str, arr: np.ndarray, mode: str) -> dict:
    raw = _matrix_to_bytes(arr, mode)
    (directory / filename).write_bytes(raw)
    return {"file": filename, "crc32": zlib.crc32(raw) & 0xFFFFFFFF}


def _read_checked(directory: Path, entry: dict) -> np.ndarray:
    path = directory / entry["file"]
    if not path.exists():
        raise DataError(f"{path}: file missing")
    raw = path.read_bytes()
    crc = zlib.crc32(raw) & 0xFFFFFFFF
    if crc != entry["crc32"]:
        raise DataError(
            f"{path}: checksum mismatch (manifest {entry['crc32']}, file {crc})"
        )
    return _matrix_from_bytes(raw, path)


def _file_stem(eid: str, index: int) -> str:
    return eid if _SAFE_ID.match(eid) else f"exp{index:05d}"


def save_bank(bank: ModelBank, path, mode: str = "binary") -> Path:
    """Persist a bank (data, posteriors, weights) to a directory.

    Writing takes an exclusive lock on the directory; a second save of
    an untouched bank produces byte-identical files.
    """
    if mode not in ("binary", "text"):
        raise ValueError(f"unknown mode {mode!r}")
    directory = Path(path)
    directory.mkdir(parents=True, exist_ok=True)
    with FileLock(str(directory / ".bank.lock")):
        entries = []
        for i, exp in enumerate(bank.experiments):
            stem = _file_stem(exp.id, i)
            data = np.hstack([exp.covariates, exp.outcomes.reshape(-1, 1)])
            entry = {
                "id": exp.id,
                "label": exp.label,
                "outcome_kind": exp.outcome_kind,
                "n": int(exp.n),
                "d": int(exp.d),
                "data": _write_checked(directory, f"{stem}.data", data, mode),
                "samples": None,
                "weights": None,
            }
            post = bank.posteriors.get(exp.id)
            if post is not None:
                entry["samples"] = _write_checked(
                    directory, f"{stem}.samples", post.samples, mode
                )
                entry["samples"].update(
                    {
                        "model_kind": post.model_kind,
                        "seed": int(post.seed),
                        "sampler_config": {
                            "n_samples": post.sampler_config.n_samples,
                            "burn_in": post.sampler_config.burn_in,
                            "thin": post.sampler_config.thin,
                            "gamma_shape": post.sampler_config.gamma_shape,
                            "gamma_rate": post.sampler_config.gamma_rate,
                            "probit_prior_precision": post.sampler_config.probit_prior_precision,
                        },
                    }
                )
            wv = bank.weights.get(exp.id)
            if wv is not None:
                entry["weights"] = _write_checked(
                    directory, f"{stem}.weights", wv.weights, mode
                )
                entry["weights"]["source"] = wv.source
                entry["weights"]["stride"] = wv.stride
            entries.append(entry)
        manifest = {
            "kind": "bank",
            "format_version": FORMAT_VERSION,
            "mode": mode,
            "experiments": entries,
        }
        text = json.dumps(manifest, sort_keys=True, indent=2, ensure_ascii=False) + "\n"
        (directory / BANK_MANIFEST).write_text(text, encoding="utf-8")
    return directory


def load_bank(path) -> ModelBank:
    """Load a bank directory written by save_bank, verifying checksums."""
    directory = Path(path)
    manifest_path = directory / BANK_MANIFEST
    if not manifest_path.exists():
        raise DataError(f"{manifest_path}: file missing")
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"{manifest_path}: malformed JSON ({exc})") from None
    if manifest.get("format_version") != FORMAT_VERSION:
        raise DataError(
            f"{manifest_path}: unsupported format_version "
            f"{manifest.get('format_version')!r}"
        )
    experiments = []
    posteriors = {}
    weights = {}
    for entry in manifest["experiments"]:
        eid = entry["id"]
        data = _read_checked(directory, entry["data"])
        n, d = int(entry["n"]), int(entry["d"])
        if data.shape != (n, d + 1):
            raise DataError(
                f"{directory / entry['data']['file']}: shape {data.shape} does not "
                f"match manifest n={n}, d={d}"
            )
        experiments.append(
            Experiment(
                id=eid,
                covariates=data[:, :d],
                outcomes=data[:, d],
                outcome_kind=entry["outcome_kind"],
                label=entry["label"],
            )
        )
        if entry.get("samples") is not None:
            sentry = entry["samples"]
            posteriors[eid] = PosteriorSampleSet(
                experiment_id=eid,
                model_kind=sentry["model_kind"],
                samples=_read_checked(directory, sentry),
                seed=int(sentry["seed"]),
                sampler_config=SamplerConfig(**sentry["sampler_config"]),
            )
        if entry.get("weights") is not None:
            wentry = entry["weights"]
            weights[eid] = WeightVector(
                experiment_id=eid,
                weights=_read_checked(directory, wentry)[:, 0],
                source=wentry["source"],
                stride=wentry["stride"],
            )
    return ModelBank(
        experiments=tuple(experiments), posteriors=posteriors, weights=weights
    )


def save_bundle(bank: ModelBank, path, name: str = "bank") -> Path:
    """Write a bank's raw experiments as a dataset bundle directory."""
    directory = Path(path)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    outcome_kind = bank.experiments[0].outcome_kind if bank.experiments else "continuous"
    for i, exp in enumerate(bank.experiments):
        filename = f"{_file_stem(exp.id, i)}.csv"
        with open(directory / filename, "w", encoding="utf-8") as fh:
            for row, y in zip(exp.covariates, exp.outcomes):
                fh.write(",".join(f"{v:.17g}" for v in row) + f",{y:.17g}\n")
        entry = {"id": exp.id, "file": filename, "n": int(exp.n)}
        if exp.label is not None:
            entry["label"] = exp.label
        entries.append(entry)
    manifest = {
        "name": name,
        "format_version": FORMAT_VERSION,
        "outcome_kind": outcome_kind,
        "d": int(bank.d) if bank.experiments else 0,
        "experiments": entries,
    }
    text = json.dumps(manifest, sort_keys=True, indent=2, ensure_ascii=False) + "\n"
    (directory / BUNDLE_MANIFEST).write_text(text, encoding="utf-8")
    return directory


def load_bundle(path) -> ModelBank:
    """Load a dataset bundle into a bank (no posteriors yet).

    Rows with any empty field are treated as missing data: dropped with
    a warning, decrementing that experiment's observation count.
    """
    directory = Path(path)
    if directory.is_file():
        manifest_path = directory
        directory = directory.parent
    else:
        manifest_path = directory / BUNDLE_MANIFEST
    if not manifest_path.exists():
        raise DataError(f"{manifest_path}: file missing")
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"{manifest_path}: malformed JSON ({exc})") from None
    if manifest.get("format_version") != FORMAT_VERSION:
        raise DataError(
            f"{manifest_path}: unsupported format_version "
            f"{manifest.get('format_version')!r}"
        )
    outcome_kind = manifest.get("outcome_kind")
    if outcome_kind not in ("continuous", "binary"):
        raise DataError(f"{manifest_path}: unknown outcome_kind {outcome_kind!r}")
    d = int(manifest["d"])

    experiments = []
    for entry in manifest["experiments"]:
        file_path = directory / entry["file"]
        if not file_path.exists():
            raise DataError(f"{file_path}: file missing")
        rows = []
        dropped = 0
        with open(file_path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                fields = line.split(",")
                if len(fields) != d + 1:
                    raise DataError(
                        f"{file_path}: line {lineno}: expected {d + 1} fields, "
                        f"got {len(fields)}"
                    )
                if any(f.strip() == "" for f in fields):
                    dropped += 1
                    continue
                try:
                    rows.append([float(f) for f in fields])
                except ValueError as exc:
                    raise DataError(f"{file_path}: line {lineno}: {exc}") from None
        if len(rows) + dropped != int(entry["n"]):
            raise DataError(
                f"{file_path}: manifest declares n={entry['n']}, file has "
                f"{len(rows) + dropped} rows"
            )
        if dropped:
            warnings.warn(f"{file_path}: dropped {dropped} row(s) with missing fields")
        if not rows:
            raise DataError(f"{file_path}: no usable rows after dropping missing data")
        data = np.asarray(rows)
        exp = Experiment(
            id=entry["id"],
            covariates=data[:, :d],
            outcomes=data[:, d],
            outcome_kind=outcome_kind,
            label=entry.get("label"),
        )
        violations = validate_experiment(exp)
        if violations:
            raise DataError(f"{file_path}: invalid experiment: {'; '.join(violations)}")
        experiments.append(exp)
    return ModelBank(experiments=tuple(experiments))


def export_report(report, rankings, path) -> Path:
    """Write an evaluation report as a flat CSV table, rankings beside it.

    The table has one row per (query, metric) with the method's settings
    repeated per row; aggregate rows use query id ``ALL``. Rankings go
    to ``<path>.rankings`` with one row per (query, rank, candidate).
    """
    import csv

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    k_val = report.params.get("K", "")
    lam_val = report.params.get("lambda", "")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["query", "method", "K", "lambda", "storage_fraction", "metric", "value"]
        )
        frac = f"{report.storage_fraction:.17g}"

        def row(query, metric, value):
            writer.writerow(
                [query, report.method, k_val, lam_val, frac, metric, f"{value:.17g}"]
            )

        for qid in sorted(report.per_query_ap):
            row(qid, "ap", report.per_query_ap[qid])
        if report.map_score is not None:
            row("ALL", "map", report.map_score)
        if report.spearman is not None:
            row("ALL", "spearman", report.spearman)
        row("ALL", "combined", report.combined)

    rankings_path = Path(str(path) + ".rankings")
    with open(rankings_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["query", "rank", "candidate", "score"])
        for qid in sorted(rankings):
            for rank, (cid, score) in enumerate(rankings[qid].ranked, start=1):
                writer.writerow([qid, rank, cid, f"{score:.17g}"])
    return path
