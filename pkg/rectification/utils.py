"""
On-disk artifacts of the command-line tools: CSV logs, spectra and
matrices, key=value config files and the run manifest.

Floats are written with repr() so every file parses back bit-exactly.
"""
from dataclasses import dataclass, field, fields
from pathlib import Path
import csv
import logging
import subprocess

from django.utils import timezone
import numpy as np

from . import __version__
from .evaluation import EvalReport
from .exceptions import FormatError, InvalidConfigError
from .training import EpochLog

logger = logging.getLogger("rectification")

EPOCH_LOG_HEADER = [f.name for f in fields(EpochLog)]


def _number(value):
    return repr(float(value))


def write_epoch_log(entries, path):
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(EPOCH_LOG_HEADER)
        for entry in entries:
            writer.writerow([entry.epoch] + [_number(getattr(entry, name)) for name in EPOCH_LOG_HEADER[1:]])


def read_epoch_log(path):
    with open(path, newline="") as handle:
        rows = list(csv.reader(handle))
    if not rows or rows[0] != EPOCH_LOG_HEADER:
        raise FormatError(f"{path}: not an epoch log")
    try:
        return [EpochLog(int(row[0]), *(float(value) for value in row[1:])) for row in rows[1:]]
    except (TypeError, ValueError) as exc:
        raise FormatError(f"{path}: malformed epoch log row") from exc


def write_matrix(matrix, path):
    """Row-major CSV preceded by a `# dim=C` line"""
    matrix = np.atleast_2d(np.asarray(matrix, dtype=np.float64))
    with open(path, "w", newline="") as handle:
        handle.write(f"# dim={matrix.shape[1]}\n")
        writer = csv.writer(handle, lineterminator="\n")
        for row in matrix:
            writer.writerow([_number(value) for value in row])


def write_vector(vector, path):
    vector = np.asarray(vector, dtype=np.float64).ravel()
    with open(path, "w", newline="") as handle:
        handle.write(f"# dim={vector.shape[0]}\n")
        handle.writelines(f"{_number(value)}\n" for value in vector)


def _read_dim_csv(path):
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith("# dim="):
        raise FormatError(f"{path}: missing '# dim=' line")
    try:
        dim = int(lines[0][len("# dim=") :])
        rows = [[float(value) for value in row] for row in csv.reader(lines[1:])]
    except ValueError as exc:
        raise FormatError(f"{path}: malformed numeric CSV") from exc
    return dim, rows


def read_matrix(path):
    dim, rows = _read_dim_csv(path)
    matrix = np.asarray(rows, dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[1] != dim:
        raise FormatError(f"{path}: rows do not have {dim} columns")
    return matrix


def read_vector(path):
    dim, rows = _read_dim_csv(path)
    vector = np.asarray([value for row in rows for value in row], dtype=np.float64)
    if vector.shape[0] != dim:
        raise FormatError(f"{path}: expected {dim} values, found {vector.shape[0]}")
    return vector


def write_metrics(metrics, path):
    """Two-column `metric,value` CSV in insertion order"""
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["metric", "value"])
        for name, value in metrics.items():
            writer.writerow([name, _number(value)])


def read_metrics(path):
    with open(path, newline="") as handle:
        rows = list(csv.reader(handle))
    if not rows or rows[0] != ["metric", "value"]:
        raise FormatError(f"{path}: not a metric,value CSV")
    try:
        return {name: float(value) for name, value in rows[1:]}
    except ValueError as exc:
        raise FormatError(f"{path}: malformed metric row") from exc


def write_eval_report(report, path):
    metrics = {f"recall@{n}": report.recall_at[n] for n in sorted(report.recall_at)}
    metrics["condition_number"] = report.condition_number
    write_metrics(metrics, path)


def read_eval_report(path):
    report = EvalReport(recall_at={})
    for name, value in read_metrics(path).items():
        if name.startswith("recall@"):
            report.recall_at[int(name[len("recall@") :])] = value
        elif name == "condition_number":
            report.condition_number = value
    return report


def write_spectrum_snapshot(prefix, spectrum, directory):
    """`<prefix>_spectrum.csv` and `<prefix>_basis.csv` for one SpectrumReport"""
    directory = Path(directory)
    write_vector(spectrum.eigenvalues, directory / f"{prefix}_spectrum.csv")
    write_matrix(spectrum.basis, directory / f"{prefix}_basis.csv")


def snapshot_prefix(epoch, kind):
    return f"epoch_{epoch:03d}_{kind}"


def write_epoch_snapshots(snapshots, directory):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for snapshot in snapshots:
        write_spectrum_snapshot(snapshot_prefix(snapshot.epoch, "desc"), snapshot.descriptor_spectrum, directory)
        write_spectrum_snapshot(snapshot_prefix(snapshot.epoch, "grad"), snapshot.gradient_spectrum, directory)


def read_epoch_snapshot(directory, epoch, kind):
    """(eigenvalues, basis) written by write_epoch_snapshots"""
    prefix = Path(directory) / snapshot_prefix(epoch, kind)
    spectrum_path = prefix.with_name(prefix.name + "_spectrum.csv")
    basis_path = prefix.with_name(prefix.name + "_basis.csv")
    if not spectrum_path.exists() or not basis_path.exists():
        raise FileNotFoundError(f"no {kind} snapshot for epoch {epoch} in {directory}")
    return read_vector(spectrum_path), read_matrix(basis_path)


def write_projection(projection, directory):
    directory = Path(directory)
    write_matrix(projection.matrix, directory / "projection.csv")
    write_vector(projection.eigenvalues, directory / "projection_eigenvalues.csv")


def read_config_file(path):
    """
    Flat `key=value` file. Blank lines and `#` comments are skipped; keys
    are normalized to flag spelling (dashes become underscores).
    """
    values = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise InvalidConfigError(f"cannot read config file {path}: {exc}") from exc
    for number, line in enumerate(lines, start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise InvalidConfigError(f"{path}:{number}: expected key=value, got {line!r}")
        values[key.strip().replace("-", "_")] = value.strip()
    return values


def describe_version():
    """git describe of the working tree, falling back to the package version"""
    try:
        result = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            capture_output=True,
            text=True,
            check=True,
            cwd=Path(__file__).resolve().parent,
        )
        return result.stdout.strip() or __version__
    except (OSError, subprocess.CalledProcessError):
        return __version__


@dataclass
class RunManifest:
    """
    Flat key=value record of a training run, written before and after
    training. `config` holds the resolved flag values (seed included), so
    the manifest itself is a valid --config file for a rerun.
    """

    config: dict
    version: str = field(default_factory=describe_version)
    started_at: str = field(default_factory=lambda: timezone.now().isoformat())
    finished_at: str = ""
    outputs: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    def lines(self):
        yield f"version={self.version}"
        yield f"started_at={self.started_at}"
        yield f"finished_at={self.finished_at}"
        for key, value in self.config.items():
            yield f"{key}={value}"
        for key, value in self.extra.items():
            yield f"{key}={value}"
        for name, path in self.outputs.items():
            yield f"output.{name}={path}"

    def write(self, path):
        Path(path).write_text("\n".join(self.lines()) + "\n")

    def finalize(self, path, outputs=None, **extra):
        self.finished_at = timezone.now().isoformat()
        self.outputs.update(outputs or {})
        self.extra.update(extra)
        self.write(path)
        logger.info(f"Run manifest finalized at {path}")
