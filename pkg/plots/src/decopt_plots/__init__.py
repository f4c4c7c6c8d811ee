"""Figure panels for run CSVs produced by the decentralized optimization
simulator."""

from .panels import PANELS, SCHEMA, EmptyInputError, PanelSpec, SchemaError, read_run_csv, render

__version__ = "0.1.0"

__all__ = [
    "PANELS",
    "SCHEMA",
    "EmptyInputError",
    "PanelSpec",
    "SchemaError",
    "read_run_csv",
    "render",
]
