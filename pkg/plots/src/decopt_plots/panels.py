"""Render convergence-figure panels from run CSVs.

The input contract is the run CSV schema of the simulator:

    t,rel_gap,rel_err,g_edge,g_max,cum_bits,S_t,lambda_norm

Each panel draws one labeled curve per input CSV:

    gap_vs_iter       rel_gap vs t, log y
    err_vs_iter       rel_err vs t, log y
    gap_vs_bits       rel_gap vs cum_bits, log x and log y
    constraint_trace  g_edge vs t, linear, with a horizontal zero line
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

SCHEMA = ("t", "rel_gap", "rel_err", "g_edge", "g_max", "cum_bits", "S_t", "lambda_norm")

PANELS = ("gap_vs_iter", "err_vs_iter", "gap_vs_bits", "constraint_trace")

_AXES = {
    # panel -> (x column, y column, log x, log y, x label, y label)
    "gap_vs_iter": ("t", "rel_gap", False, True, "iteration", "relative cost gap"),
    "err_vs_iter": ("t", "rel_err", False, True, "iteration", "relative parameter error"),
    "gap_vs_bits": ("cum_bits", "rel_gap", True, True, "bits communicated", "relative cost gap"),
    "constraint_trace": ("t", "g_edge", False, False, "iteration", "edge constraint value"),
}


class SchemaError(ValueError):
    """A CSV is missing required columns or has none usable."""


class EmptyInputError(ValueError):
    """A CSV contains a header but no data rows."""


@dataclass(frozen=True)
class PanelSpec:
    """One panel: which quantity to draw, from which runs, to which file."""

    panel: str
    inputs: tuple[tuple[Path, str], ...]  # (csv path, curve label)
    out_path: Path
    title: str | None = None

    def __post_init__(self):
        if self.panel not in PANELS:
            raise ValueError(f"unknown panel {self.panel!r}; choose from {PANELS}")
        if not self.inputs:
            raise ValueError("panel needs at least one input CSV")


def read_run_csv(path: Path) -> dict[str, np.ndarray]:
    """Load one run CSV, validating the schema by column name."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: file is empty, expected header {SCHEMA}") from None
        missing = [name for name in SCHEMA if name not in header]
        if missing:
            raise SchemaError(f"{path}: missing required columns {missing}")
        rows = list(reader)
    if not rows:
        raise EmptyInputError(f"{path}: no data rows")
    cols = {name: header.index(name) for name in SCHEMA}
    return {
        name: np.array([float(row[idx]) for row in rows])
        for name, idx in cols.items()
    }


def render(spec: PanelSpec) -> Path:
    """Draw the panel and write the image; returns the output path.

    The plotted data is a pure function of the CSV contents.
    """
    x_col, y_col, log_x, log_y, x_label, y_label = _AXES[spec.panel]
    fig, ax = plt.subplots(figsize=(6.0, 4.5))
    for path, label in spec.inputs:
        cols = read_run_csv(Path(path))
        x, y = cols[x_col], cols[y_col]
        if log_y:
            keep = y > 0
            x, y = x[keep], y[keep]
        ax.plot(x, y, label=label, linewidth=1.4)
    if log_x:
        ax.set_xscale("log")
    if log_y:
        ax.set_yscale("log")
    if spec.panel == "constraint_trace":
        ax.axhline(0.0, color="black", linewidth=0.8, linestyle="--")
    ax.set_xlabel(x_label)
    ax.set_ylabel(y_label)
    ax.set_title(spec.title or spec.panel.replace("_", " "))
    ax.legend(fontsize=8)
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    spec.out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(spec.out_path, dpi=150, metadata=_stable_metadata(spec.out_path))
    plt.close(fig)
    return spec.out_path


def _stable_metadata(path: Path) -> dict:
    # pin the fields image writers would otherwise fill with wall-clock data
    suffix = path.suffix.lower()
    if suffix == ".png":
        return {"Software": "decopt-plots"}
    if suffix in (".svg", ".pdf"):
        return {"Creator": "decopt-plots", "Date": None}
    return {}
