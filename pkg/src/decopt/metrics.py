"""Run records, convergence metrics, and the on-disk results format.

A run produces a row-per-recorded-iteration table with a fixed column order:

    t,rel_gap,rel_err,g_edge,g_max,cum_bits,S_t,lambda_norm

written as CSV with 17 significant digits (full float64 round-trip), plus a
JSON sidecar carrying the seed, configuration, and diagnostics.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FitUndefinedError, TargetUnreachedError

__all__ = [
    "COLUMNS",
    "RunRecord",
    "relative_cost_gap",
    "rate_fit",
    "bits_to_target",
    "recursion_check",
    "write_csv",
    "read_csv",
    "write_meta",
    "read_meta",
]

COLUMNS = ("t", "rel_gap", "rel_err", "g_edge", "g_max", "cum_bits", "S_t", "lambda_norm")


@dataclass
class RunRecord:
    """Accumulated per-iteration measurements from a single run."""

    seed: int
    config: dict
    rows: list[dict] = field(default_factory=list)
    s_series: list[float] = field(default_factory=list)
    grad_sq_series: list[float] = field(default_factory=list)
    lambda_norm_series: list[float] = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)
    final_avg: np.ndarray | None = None

    def append(self, **kwargs) -> None:
        if set(kwargs) != set(COLUMNS):
            missing = set(COLUMNS) - set(kwargs)
            extra = set(kwargs) - set(COLUMNS)
            raise ValueError(f"bad row: missing {missing or '{}'}, extra {extra or '{}'}")
        self.rows.append(kwargs)

    def column(self, name: str) -> np.ndarray:
        if name not in COLUMNS:
            raise KeyError(name)
        return np.array([row[name] for row in self.rows])


def relative_cost_gap(cost: float, f_star: float, initial_gap: float) -> float:
    """(F(x) - F*) normalized by the gap at the first recorded iterate."""
    if initial_gap == 0.0:
        return float("nan")
    return (cost - f_star) / initial_gap


def rate_fit(t: np.ndarray, values: np.ndarray) -> float:
    """Least-squares slope of log(value) against log(t) over the last half
    of the recorded points (by count).  Undefined when fewer than two usable
    points remain or any value in the window is non-positive."""
    t = np.asarray(t, dtype=float)
    values = np.asarray(values, dtype=float)
    if t.shape != values.shape or t.ndim != 1:
        raise FitUndefinedError("t and values must be 1-d arrays of equal length")
    start = len(t) // 2
    t_w, v_w = t[start:], values[start:]
    if len(t_w) < 2:
        raise FitUndefinedError("need at least two points in the fit window")
    if np.any(v_w <= 0) or np.any(~np.isfinite(v_w)) or np.any(t_w <= 0):
        raise FitUndefinedError("fit window contains non-positive or non-finite values")
    slope = np.polyfit(np.log(t_w), np.log(v_w), 1)[0]
    return float(slope)


def bits_to_target(
    t: np.ndarray, gaps: np.ndarray, bits: np.ndarray, target: float
) -> tuple[int, int]:
    """First recorded (cum_bits, t) at which rel_gap <= target.  Raises
    TargetUnreachedError (carrying the best gap seen) if never reached."""
    gaps = np.asarray(gaps, dtype=float)
    hit = np.nonzero(gaps <= target)[0]
    if len(hit) == 0:
        best = float(np.nanmin(gaps)) if len(gaps) else float("nan")
        raise TargetUnreachedError(
            f"gap target {target} never reached (best {best:.6g})", best_gap=best
        )
    k = int(hit[0])
    return int(bits[k]), int(t[k])


def recursion_check(
    s_by_seed: np.ndarray, grad_sq_by_seed: np.ndarray, omega: float, eta: float
) -> tuple[float, np.ndarray]:
    """Check the compression-error recursion on seed-averaged series:

        S(t) <= (1 - omega/2) S(t-1) + (2 eta^2 / omega) E(t-1) + slack,

    where E is the mean squared primal gradient norm and the slack is three
    standard errors of the seed mean at t.  Returns (fraction of iterations
    satisfying the bound, boolean mask per checked iteration).
    """
    s_by_seed = np.asarray(s_by_seed, dtype=float)
    grad_sq_by_seed = np.asarray(grad_sq_by_seed, dtype=float)
    if s_by_seed.ndim != 2 or s_by_seed.shape != grad_sq_by_seed.shape:
        raise ValueError("need matching (seeds, iterations) arrays")
    n_seeds, t_len = s_by_seed.shape
    s_mean = s_by_seed.mean(axis=0)
    g_mean = grad_sq_by_seed.mean(axis=0)
    if n_seeds > 1:
        se = s_by_seed.std(axis=0, ddof=1) / math.sqrt(n_seeds)
    else:
        se = np.zeros(t_len)
    lhs = s_mean[1:]
    rhs = (1.0 - omega / 2.0) * s_mean[:-1] + (2.0 * eta**2 / omega) * g_mean[:-1] + 3.0 * se[1:]
    ok = lhs <= rhs + 1e-12
    return float(ok.mean()), ok


def _fmt(value) -> str:
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return format(float(value), ".17g")


def write_csv(path: str | Path, record: RunRecord) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(COLUMNS)
        for row in record.rows:
            writer.writerow([_fmt(row[c]) for c in COLUMNS])


def read_csv(path: str | Path) -> dict[str, np.ndarray]:
    """Columns keyed by name; `t` and `cum_bits` come back as integers."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != COLUMNS:
            raise ValueError(f"unexpected header {header!r} in {path}")
        raw = list(reader)
    out: dict[str, np.ndarray] = {}
    for k, name in enumerate(COLUMNS):
        col = [row[k] for row in raw]
        if name in ("t", "cum_bits"):
            out[name] = np.array([int(v) for v in col], dtype=np.int64)
        else:
            out[name] = np.array([float(v) for v in col])
    return out


def write_meta(path: str | Path, record: RunRecord) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "seed": record.seed,
        "config": record.config,
        "diagnostics": record.diagnostics,
        "columns": list(COLUMNS),
        "rows": len(record.rows),
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_meta(path: str | Path) -> dict:
    with open(path) as fh:
        return json.load(fh)
