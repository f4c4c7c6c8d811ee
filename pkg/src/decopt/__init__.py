"""Deterministic simulator for decentralized multi-task stochastic
optimization over a graph with pairwise proximity constraints, using
compressed communication and exact bit accounting."""

from .compression import CompressorSpec, compress, message_bits, omega_of, parse_compressor
from .engine import HyperParams, delta_interval, run
from .errors import DecoptError
from .metrics import RunRecord, bits_to_target, rate_fit, read_csv, write_csv
from .problem import QcqpInstance, generate_qcqp, reference_solution
from .topology import Graph, generate_erdos_renyi

__version__ = "0.1.0"

__all__ = [
    "CompressorSpec",
    "DecoptError",
    "Graph",
    "HyperParams",
    "QcqpInstance",
    "RunRecord",
    "bits_to_target",
    "compress",
    "delta_interval",
    "generate_erdos_renyi",
    "generate_qcqp",
    "message_bits",
    "omega_of",
    "parse_compressor",
    "rate_fit",
    "read_csv",
    "reference_solution",
    "run",
    "write_csv",
]
