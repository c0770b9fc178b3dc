"""Spectral records of update matrices and the CSV/metadata writers."""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import linalg

SCALARS_HEADER = ["step", "param_id", "loss", "grad_norm", "update_rms", "ln_cond"]
SPECTRA_HEADER = ["step", "param_id", "idx", "log10_sigma"]
SUMMARY_HEADER = ["optimizer", "best_lr", "steps_to_threshold", "final_loss", "median_ln_cond"]
LOG10_FLOOR = -300.0


@dataclass(frozen=True)
class SpectralRecord:
    step: int
    param_id: str
    ln_cond: float
    log10_sigmas: tuple


def record_spectrum(step: int, param_id: str, update, rank_tol: float = 1e-12) -> SpectralRecord:
    sigma = linalg.singular_spectrum(update)
    top = sigma[0]
    if top == 0.0:
        ln_cond = math.inf
    else:
        kept = sigma[sigma > rank_tol * top]
        ln_cond = math.log(top / kept[-1])
    with np.errstate(divide="ignore"):
        logs = np.maximum(np.log10(sigma), LOG10_FLOOR)
    return SpectralRecord(int(step), str(param_id), float(ln_cond), tuple(float(v) for v in logs))


def histogram(values, bin_width: float, lo: float, hi: float) -> np.ndarray:
    """Counts over fixed bins ``[lo + i*w, lo + (i+1)*w)``; out-of-range values go to the end bins."""
    if bin_width <= 0 or hi <= lo:
        raise ValueError("need bin_width > 0 and hi > lo")
    nbins = max(1, int(math.ceil((hi - lo) / bin_width - 1e-12)))
    counts = np.zeros(nbins, dtype=np.int64)
    vals = np.asarray(values, dtype=np.float64).reshape(-1)
    if vals.size == 0:
        return counts
    idx = np.floor((vals - lo) / bin_width).astype(np.int64)
    np.add.at(counts, np.clip(idx, 0, nbins - 1), 1)
    return counts


def fmt(x) -> str:
    """Shortest round-trip decimal for floats; ``inf``/``nan`` spelled out; ``None`` empty."""
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return repr(x)


@dataclass
class ScalarRow:
    step: int
    param_id: str
    loss: float
    grad_norm: float
    update_rms: float
    ln_cond: float | None = None


@dataclass
class RunLog:
    config: dict = field(default_factory=dict)
    scalars: list = field(default_factory=list)
    spectra: list = field(default_factory=list)
    losses: list = field(default_factory=list)  # loss after k updates, k = 0..steps

    def add_scalar(self, row: ScalarRow):
        if self.scalars and row.step < self.scalars[-1].step:
            raise ValueError("steps must be non-decreasing")
        self.scalars.append(row)

    def ln_conds(self, param_ids=None) -> list[float]:
        return [r.ln_cond for r in self.spectra if param_ids is None or r.param_id in param_ids]


def _write_rows(path: Path, header, rows):
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            writer.writerows(rows)
    except OSError as exc:
        raise OSError(f"{path}: {exc.strerror or exc}") from exc


def write_metadata(meta: dict, path) -> None:
    lines = [f"{k} = {meta[k]}" for k in sorted(meta)]
    try:
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    except OSError as exc:
        raise OSError(f"{path}: {exc.strerror or exc}") from exc


def write_csv(log: RunLog, out_dir) -> None:
    """Write ``scalars.csv``, ``spectra.csv`` and ``run_meta.txt`` into ``out_dir``."""
    out = Path(out_dir)
    try:
        os.makedirs(out, exist_ok=True)
    except OSError as exc:
        raise OSError(f"{out}: {exc.strerror or exc}") from exc
    _write_rows(
        out / "scalars.csv",
        SCALARS_HEADER,
        (
            [fmt(r.step), r.param_id, fmt(r.loss), fmt(r.grad_norm), fmt(r.update_rms), fmt(r.ln_cond)]
            for r in log.scalars
        ),
    )
    _write_rows(
        out / "spectra.csv",
        SPECTRA_HEADER,
        (
            [fmt(rec.step), rec.param_id, str(i), fmt(v)]
            for rec in log.spectra
            for i, v in enumerate(rec.log10_sigmas)
        ),
    )
    write_metadata(log.config, out / "run_meta.txt")


def read_scalars(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))
