"""Ensemble, diagnostics and metadata files.

Tables are comma-separated text with a header row. Floats are written with
``repr`` (shortest round-trip form), so loading a saved ensemble reproduces
every numeric column bit for bit. All writes go to a temporary file in the
target directory that is then renamed over the destination.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .core import Ensemble
from .sampler import IterationRecord

ENSEMBLE_FILE = "ensemble.csv"
DIAGNOSTICS_FILE = "diagnostics.csv"
METADATA_FILE = "metadata.json"
QUANTILE_RULE = "linear interpolation between order statistics (type 7)"
DIAGNOSTIC_COLUMNS = ("iteration", "gamma", "epsilon", "ess", "r_t", "acceptance_rate", "rho_max", "mcmc_steps")


def format_value(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def atomic_write_text(path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def write_table(path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([format_value(v) for v in row])
    return atomic_write_text(path, buf.getvalue())


def read_table(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path} is empty") from None
        rows = [r for r in reader if r]
    for i, r in enumerate(rows):
        if len(r) != len(header):
            raise ValueError(f"{path}: row {i + 2} has {len(r)} fields, header has {len(header)}")
    return header, rows


@dataclass
class EnsembleTable:
    """Final particle population as stored on disk (equal weights)."""

    param_names: tuple[str, ...]
    theta: np.ndarray
    log_likelihood: np.ndarray
    discrepancy: np.ndarray
    derived: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.param_names = tuple(self.param_names)
        self.theta = np.atleast_2d(np.asarray(self.theta, dtype=float))
        self.log_likelihood = np.asarray(self.log_likelihood, dtype=float).reshape(-1)
        self.discrepancy = np.asarray(self.discrepancy, dtype=float).reshape(-1)
        self.derived = {k: np.asarray(v, dtype=float).reshape(-1) for k, v in self.derived.items()}
        n = self.theta.shape[0]
        if self.theta.shape[1] != len(self.param_names):
            raise ValueError("theta columns do not match parameter names")
        for name, col in [("log_likelihood", self.log_likelihood), ("discrepancy", self.discrepancy),
                          *self.derived.items()]:
            if col.size != n:
                raise ValueError(f"column {name!r} has {col.size} rows, expected {n}")

    @property
    def n(self) -> int:
        return self.theta.shape[0]

    @property
    def header(self) -> list[str]:
        return [*self.param_names, "log_likelihood", "discrepancy", *self.derived]

    def column(self, name: str) -> np.ndarray:
        if name in self.param_names:
            return self.theta[:, self.param_names.index(name)]
        if name == "log_likelihood":
            return self.log_likelihood
        if name == "discrepancy":
            return self.discrepancy
        return self.derived[name]

    @classmethod
    def from_ensemble(cls, ens: Ensemble, derived: Mapping[str, Sequence[float]] | None = None) -> "EnsembleTable":
        return cls(ens.names, ens.theta, ens.log_likelihood, ens.discrepancy, dict(derived or {}))


def save_ensemble(path, table: EnsembleTable) -> Path:
    cols = [table.column(h) for h in table.header]
    rows = zip(*cols) if cols else []
    return write_table(path, table.header, rows)


def load_ensemble(path, param_names: Sequence[str]) -> EnsembleTable:
    """Read an ensemble written by :func:`save_ensemble`.

    ``param_names`` must appear, in order, as the leading columns followed
    by ``log_likelihood`` and ``discrepancy``.
    """
    header, rows = read_table(path)
    d = len(param_names)
    expected = [*param_names, "log_likelihood", "discrepancy"]
    if header[: d + 2] != expected:
        raise ValueError(f"{path}: columns {header[: d + 2]} do not match expected {expected}")
    data = np.array([[float(x) for x in r] for r in rows], dtype=float).reshape(len(rows), len(header))
    derived = {name: data[:, d + 2 + i] for i, name in enumerate(header[d + 2:])}
    return EnsembleTable(tuple(param_names), data[:, :d], data[:, d], data[:, d + 1], derived)


def save_diagnostics(path, records: Sequence[IterationRecord]) -> Path:
    return write_table(path, DIAGNOSTIC_COLUMNS, ([getattr(r, c) for c in DIAGNOSTIC_COLUMNS] for r in records))


def load_diagnostics(path) -> dict[str, np.ndarray]:
    header, rows = read_table(path)
    return {h: np.array([float(r[i]) for r in rows]) for i, h in enumerate(header)}


def _jsonable(v):
    if isinstance(v, float) and not math.isfinite(v):
        return repr(v)
    if isinstance(v, Mapping):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.generic):
        return _jsonable(v.item())
    return v


def config_hash(config: Mapping[str, Any]) -> str:
    """SHA-256 of the canonical JSON form of ``config``."""
    blob = json.dumps(_jsonable(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def save_metadata(path, metadata: Mapping[str, Any]) -> Path:
    return atomic_write_text(path, json.dumps(_jsonable(metadata), indent=2, sort_keys=True) + "\n")


def load_metadata(path) -> dict[str, Any]:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)
