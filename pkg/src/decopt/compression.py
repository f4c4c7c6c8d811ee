"""Compression operators with contraction constants and exact bit accounting.

Every operator C here satisfies the contraction contract

    E ||x - C(x)||^2 <= (1 - omega) ||x||^2,   omega in (0, 1],

with C(0) = 0.  `compress` returns the decompressed full-dimension value of
the encoded message together with the exact wire size in bits under a plain
index+payload encoding at 32-bit float precision:

    identity:        32*d
    top_k / rand_k:  k * (32 + ceil(log2 d))
    sign (scaled):   d + 32
    qsgd (s levels): 32 + d * ceil(log2(2s + 1))
    sign+top_k:      k * (1 + ceil(log2 d)) + 32
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

__all__ = [
    "CompressorSpec",
    "parse_compressor",
    "omega_of",
    "compress",
    "message_bits",
    "validate_contract",
    "KINDS",
]

KINDS = ("identity", "top_k", "rand_k", "sign_scaled", "qsgd", "sign_then_topk")

_DEFAULT_QSGD_LEVELS = 4


@dataclass(frozen=True)
class CompressorSpec:
    """A compression operator variant and its parameters.

    k is required for the sparsifying kinds (top_k, rand_k, sign_then_topk);
    s is the number of quantization levels for qsgd.
    """

    kind: str
    k: int | None = None
    s: int | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown compressor kind {self.kind!r}")
        if self.kind in ("top_k", "rand_k", "sign_then_topk"):
            if self.k is None or self.k < 1:
                raise ConfigError(f"{self.kind} needs k >= 1, got k={self.k}")
        if self.kind == "qsgd" and (self.s is None or self.s < 1):
            raise ConfigError(f"qsgd needs s >= 1, got s={self.s}")

    def label(self) -> str:
        if self.kind == "identity":
            return "none"
        if self.kind == "top_k":
            return f"top_k:{self.k}"
        if self.kind == "rand_k":
            return f"rand_k:{self.k}"
        if self.kind == "sign_scaled":
            return "sign"
        if self.kind == "qsgd":
            return f"qsgd:{self.s}"
        return f"sign+top_k:{self.k}"


def parse_compressor(token: str) -> CompressorSpec:
    """Parse a config string like "none", "top_k:5", "sign", "sign+top_k:5",
    "qsgd:4" into a CompressorSpec."""
    token = token.strip().lower()
    name, _, arg = token.partition(":")
    try:
        if name in ("none", "identity", "full"):
            return CompressorSpec("identity")
        if name in ("top_k", "topk"):
            return CompressorSpec("top_k", k=int(arg))
        if name in ("rand_k", "randk"):
            return CompressorSpec("rand_k", k=int(arg))
        if name == "sign":
            return CompressorSpec("sign_scaled")
        if name == "qsgd":
            return CompressorSpec("qsgd", s=int(arg) if arg else _DEFAULT_QSGD_LEVELS)
        if name in ("sign+top_k", "sign+topk"):
            return CompressorSpec("sign_then_topk", k=int(arg))
    except ValueError:
        raise ConfigError(f"bad compressor parameter in {token!r}") from None
    raise ConfigError(f"unknown compressor token {token!r}")


def _qsgd_variance_bound(d: int, s: int) -> float:
    # Variance bound of the unbiased s-level stochastic quantizer.
    return min(d / s**2, math.sqrt(d) / s)


def omega_of(spec: CompressorSpec, d: int) -> float:
    """The contraction constant omega used in the regularizer interval.

    top_k / rand_k (unscaled): k/d.  Scaled sign: 1/d.  sign+top_k composes
    the two constants: (k/d) * (1/k) = 1/d.  qsgd is the unbiased quantizer
    rescaled by 1/(1+beta), which contracts with omega = 1/(1+beta) for beta
    its variance bound.
    """
    _check_dim(spec, d)
    if spec.kind == "identity":
        return 1.0
    if spec.kind in ("top_k", "rand_k"):
        return spec.k / d
    if spec.kind == "sign_scaled":
        return 1.0 / d
    if spec.kind == "sign_then_topk":
        return (spec.k / d) * (1.0 / spec.k)
    beta = _qsgd_variance_bound(d, spec.s)
    return 1.0 / (1.0 + beta)


@functools.lru_cache(maxsize=None)
def message_bits(spec: CompressorSpec, d: int) -> int:
    """Exact wire size in bits of one compressed message of dimension d."""
    idx_bits = math.ceil(math.log2(d)) if d > 1 else 0
    if spec.kind == "identity":
        return 32 * d
    if spec.kind in ("top_k", "rand_k"):
        return spec.k * (32 + idx_bits)
    if spec.kind == "sign_scaled":
        return d + 32
    if spec.kind == "qsgd":
        return 32 + d * math.ceil(math.log2(2 * spec.s + 1))
    return spec.k * (1 + idx_bits) + 32


def _check_dim(spec: CompressorSpec, d: int) -> None:
    if d < 1:
        raise ConfigError(f"dimension must be >= 1, got {d}")
    if spec.k is not None and spec.k > d:
        raise ConfigError(f"{spec.kind} with k={spec.k} exceeds dimension d={d}")


def _top_indices(x: np.ndarray, k: int) -> np.ndarray:
    # Stable sort on -|x| breaks magnitude ties by lowest index.
    return np.argsort(-np.abs(x), kind="stable")[:k]


def compress(
    spec: CompressorSpec, x: np.ndarray, rng: np.random.Generator
) -> tuple[np.ndarray, int]:
    """Apply the operator to x; return (decompressed value, message bits).

    Randomized kinds consume the rng; identical (spec, x, rng state) yields
    an identical result.  The rng belongs to the sender, so one encoded
    message serves every receiver.
    """
    x = np.asarray(x, dtype=np.float64)
    d = x.shape[0]
    _check_dim(spec, d)
    bits = message_bits(spec, d)

    if spec.kind == "identity":
        return x.copy(), bits

    if spec.kind == "top_k":
        idx = _top_indices(x, spec.k)
        y = np.zeros_like(x)
        y[idx] = x[idx]
        return y, bits

    if spec.kind == "rand_k":
        idx = rng.choice(d, size=spec.k, replace=False)
        y = np.zeros_like(x)
        y[idx] = x[idx]
        return y, bits

    if spec.kind == "sign_scaled":
        scale = np.abs(x).sum() / d
        return scale * np.sign(x), bits

    if spec.kind == "sign_then_topk":
        idx = _top_indices(x, spec.k)
        v = x[idx]
        scale = np.abs(v).sum() / spec.k
        y = np.zeros_like(x)
        y[idx] = scale * np.sign(v)
        return y, bits

    # qsgd: unbiased stochastic quantizer rescaled to a contraction.
    norm = float(np.linalg.norm(x))
    if norm == 0.0:
        return np.zeros_like(x), bits
    s = spec.s
    ratio = s * np.abs(x) / norm
    level = np.floor(ratio)
    level += rng.random(d) < (ratio - level)
    q = np.sign(x) * norm * level / s
    beta = _qsgd_variance_bound(d, s)
    return q / (1.0 + beta), bits


_FAMILIES = ("gaussian", "uniform", "one_hot")


def validate_contract(
    spec: CompressorSpec, d: int, trials: int, rng: np.random.Generator
) -> float:
    """Worst Monte Carlo mean of ||x - C(x)||^2 / ||x||^2 over vector families.

    The contract holds when the result is <= (1 - omega) + margin.
    """
    if trials < 1000:
        raise ConfigError(f"need trials >= 1000 for a stable estimate, got {trials}")
    worst = 0.0
    for family in _FAMILIES:
        if family == "gaussian":
            batch = rng.standard_normal((trials, d))
        elif family == "uniform":
            batch = rng.uniform(-1.0, 1.0, size=(trials, d))
        else:
            batch = np.zeros((trials, d))
            batch[np.arange(trials), rng.integers(d, size=trials)] = rng.choice(
                (-1.0, 1.0), size=trials
            )
        total = 0.0
        for x in batch:
            y, _ = compress(spec, x, rng)
            e = x - y
            total += float((e @ e) / (x @ x))
        worst = max(worst, total / trials)
    return worst
