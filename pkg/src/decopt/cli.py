"""Command-line front end for experiment suites.

Subcommands:

    run     execute a suite (one run per compressor x feedback x seed)
    oracle  compute and cache the reference solution for a config
    check   run the compression-contract and invariant battery
    delta   print the admissible regularizer interval for a config

Configuration is a flat key=value text file; `--set key=value` overrides
file entries, which override defaults.  All randomness is seeded from the
config, so a suite is a pure function of the config contents.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import engine, metrics, problem
from .compression import CompressorSpec, omega_of, parse_compressor, validate_contract
from .errors import (
    ConfigError,
    DecoptError,
    FitUndefinedError,
    NumericalDivergenceError,
    OracleFailureError,
    TargetUnreachedError,
)
from .topology import Graph, generate_erdos_renyi

__all__ = ["ExperimentConfig", "load_config", "delta_auto", "run_suite", "main"]

_DEFAULTS: dict[str, str] = {
    "n": "30",
    "p": "0.15",
    "graph_seed": "7",
    "d": "10",
    "radius": "",  # empty -> 40 / sqrt(n)
    "c_lo": "-5.0",
    "c_hi": "-3.0",
    "noise_sigma": "0.1",
    "instance_seed": "11",
    "compressors": "none,top_k:5,sign,sign+top_k:5",
    "feedback": "sample",
    "eta": "0.001",
    "a": "",
    "delta": "100",
    "T": "50000",
    "zeta": "0.0001",
    "seeds": "0",
    "record_every": "50",
    "strict_delta": "false",
    "gap_target": "0.01",
    "out": "results",
}


@dataclass(frozen=True)
class ExperimentConfig:
    """Fully resolved suite configuration."""

    n: int
    p: float
    graph_seed: int
    d: int
    radius: float | None
    c_range: tuple[float, float]
    noise_sigma: float
    instance_seed: int
    compressors: tuple[CompressorSpec, ...]
    feedback: tuple[str, ...]
    eta: float | None
    a: float | None
    delta: float | str
    T: int
    zeta: float
    seeds: tuple[int, ...]
    record_every: int
    strict_delta: bool
    gap_target: float
    out: str


def _parse_bool(value: str) -> bool:
    low = value.strip().lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {value!r}")


def _read_kv_file(path: Path) -> dict[str, str]:
    entries: dict[str, str] = {}
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, value = stripped.split("=", 1)
        entries[key.strip()] = value.strip()
    return entries


def load_config(
    path: str | Path | None = None, overrides: dict[str, str] | None = None
) -> ExperimentConfig:
    """Resolve defaults, file entries, and CLI overrides (highest wins)."""
    raw = dict(_DEFAULTS)
    if path is not None:
        file_entries = _read_kv_file(Path(path))
        unknown = set(file_entries) - set(_DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        raw.update(file_entries)
    if overrides:
        unknown = set(overrides) - set(_DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown override keys: {sorted(unknown)}")
        raw.update(overrides)

    try:
        compressors = tuple(
            parse_compressor(tok.strip()) for tok in raw["compressors"].split(",") if tok.strip()
        )
        feedback = tuple(tok.strip() for tok in raw["feedback"].split(",") if tok.strip())
        for mode in feedback:
            if mode not in ("sample", "bandit"):
                raise ConfigError(f"invalid feedback mode {mode!r}")
        if not compressors or not feedback:
            raise ConfigError("compressors and feedback must be non-empty")
        delta: float | str = raw["delta"]
        if delta != "auto":
            delta = float(delta)
            if delta <= 0:
                raise ConfigError(f"delta must be positive, got {delta}")
        eta = float(raw["eta"]) if raw["eta"] else None
        a = float(raw["a"]) if raw["a"] else None
        if (eta is None) == (a is None):
            raise ConfigError("give exactly one of eta or a (set the other empty)")
        cfg = ExperimentConfig(
            n=int(raw["n"]),
            p=float(raw["p"]),
            graph_seed=int(raw["graph_seed"]),
            d=int(raw["d"]),
            radius=float(raw["radius"]) if raw["radius"] else None,
            c_range=(float(raw["c_lo"]), float(raw["c_hi"])),
            noise_sigma=float(raw["noise_sigma"]),
            instance_seed=int(raw["instance_seed"]),
            compressors=compressors,
            feedback=feedback,
            eta=eta,
            a=a,
            delta=delta,
            T=int(raw["T"]),
            zeta=float(raw["zeta"]),
            seeds=tuple(int(tok) for tok in raw["seeds"].split(",") if tok.strip()),
            record_every=int(raw["record_every"]),
            strict_delta=_parse_bool(raw["strict_delta"]),
            gap_target=float(raw["gap_target"]),
            out=raw["out"],
        )
    except ConfigError:
        raise
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"invalid config value: {exc}") from exc
    if not cfg.seeds:
        raise ConfigError("seeds must be non-empty")
    if cfg.T < 1 or cfg.record_every < 1:
        raise ConfigError("T and record_every must be >= 1")
    return cfg


def build_problem(cfg: ExperimentConfig) -> tuple[Graph, problem.QcqpInstance]:
    graph = generate_erdos_renyi(cfg.n, cfg.p, cfg.graph_seed)
    if not graph.is_connected():
        print("warning: graph is disconnected; constraint coupling decomposes", file=sys.stderr)
    instance = problem.generate_qcqp(
        graph,
        cfg.d,
        cfg.instance_seed,
        c_range=cfg.c_range,
        radius=cfg.radius,
        noise_sigma=cfg.noise_sigma,
    )
    return graph, instance


def delta_auto(
    cfg: ExperimentConfig,
    graph: Graph | None = None,
    instance: problem.QcqpInstance | None = None,
    verbose: bool = True,
) -> float:
    """Midpoint of the admissible regularizer interval under the most
    conservative choice over the suite: the smallest compression factor and
    the bandit coefficient if any bandit run is configured."""
    if graph is None or instance is None:
        graph, instance = build_problem(cfg)
    consts = problem.estimate_constants(instance, graph)
    omega = min(omega_of(spec, cfg.d) for spec in cfg.compressors)
    mode = "bandit" if "bandit" in cfg.feedback else "sample"
    eta = cfg.eta if cfg.eta is not None else cfg.a / np.sqrt(cfg.T)
    lo, hi = engine.delta_interval(eta, graph.m, consts.g_tilde, omega, mode, a=cfg.a)
    if verbose:
        print(f"delta interval: [{lo:.10g}, {hi:.10g}] (omega={omega:.6g}, mode={mode})")
    return (lo + hi) / 2.0


def _resolve_delta(
    cfg: ExperimentConfig, graph: Graph, instance: problem.QcqpInstance
) -> float:
    if cfg.delta == "auto":
        return delta_auto(cfg, graph, instance)
    return float(cfg.delta)


def run_name(spec: CompressorSpec, mode: str, seed: int) -> str:
    label = spec.label().replace(":", "").replace("+", "-")
    return f"{label}_{mode}_s{seed}"


def oracle_path(out_dir: Path) -> Path:
    return out_dir / "reference.npz"


def compute_oracle(
    cfg: ExperimentConfig,
    graph: Graph,
    instance: problem.QcqpInstance,
    out_dir: Path,
) -> problem.ReferenceSolution:
    """Compute the reference solution, caching it under the output directory
    keyed by the instance parameters."""
    path = oracle_path(out_dir)
    key = f"{cfg.n}:{cfg.p}:{cfg.graph_seed}:{cfg.d}:{cfg.instance_seed}:{cfg.c_range}:{cfg.radius}"
    if path.exists():
        data = np.load(path, allow_pickle=False)
        if str(data["key"]) == key:
            return problem.ReferenceSolution(
                x_star=data["x_star"],
                f_star=float(data["f_star"]),
                iterations=int(data["iterations"]),
                movement=float(data["movement"]),
                max_violation=float(data["max_violation"]),
            )
    ref = problem.reference_solution(instance, graph)
    out_dir.mkdir(parents=True, exist_ok=True)
    np.savez(
        path,
        key=key,
        x_star=ref.x_star,
        f_star=ref.f_star,
        iterations=ref.iterations,
        movement=ref.movement,
        max_violation=ref.max_violation,
    )
    return ref


def _execute_one(args: tuple) -> tuple[str, str, dict | None]:
    """Run one (compressor, feedback, seed) cell; returns (name, status,
    summary row or None).  Exceptions are caught and reported, not raised."""
    (instance, graph, spec, mode, seed, eta, a, delta, T, zeta,
     record_every, strict, ref, out_dir, gap_target) = args
    name = run_name(spec, mode, seed)
    try:
        hyper = engine.HyperParams(
            delta=delta, T=T, eta=eta, a=a, zeta=zeta if mode == "bandit" else 0.0,
            feedback=mode, strict_delta=strict,
        )
        record = engine.run(
            instance, graph, spec, hyper, seed,
            record_every=record_every, reference=ref, keep_diagnostics=False,
        )
        metrics.write_csv(out_dir / f"{name}.csv", record)
        metrics.write_meta(out_dir / f"{name}.json", record)
        row = summarize_csv(out_dir / f"{name}.csv", gap_target)
        return name, "ok", row
    except DecoptError as exc:
        return name, f"{type(exc).__name__}: {exc}", None


def summarize_csv(path: Path, gap_target: float) -> dict:
    """Summary statistics recomputed purely from a run's CSV."""
    cols = metrics.read_csv(path)
    row: dict = {
        "final_gap": float(cols["rel_gap"][-1]),
        "final_g_max": float(cols["g_max"][-1]),
        "total_bits": int(cols["cum_bits"][-1]),
    }
    try:
        bits, t_hit = metrics.bits_to_target(
            cols["t"], cols["rel_gap"], cols["cum_bits"], gap_target
        )
        row["bits_to_target"] = bits
        row["t_to_target"] = t_hit
    except TargetUnreachedError:
        row["bits_to_target"] = None
        row["t_to_target"] = None
    try:
        row["rate_slope"] = metrics.rate_fit(cols["t"], cols["rel_gap"])
    except FitUndefinedError:
        row["rate_slope"] = None
    return row


def run_suite(cfg: ExperimentConfig, jobs: int = 1) -> dict[str, dict]:
    """Execute every (compressor x feedback x seed) cell against a shared
    instance and reference solution.  Per-run failures are recorded in the
    summary without aborting the suite."""
    graph, instance = build_problem(cfg)
    out_dir = Path(cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    ref = compute_oracle(cfg, graph, instance, out_dir)
    delta = _resolve_delta(cfg, graph, instance)

    cells = [
        (instance, graph, spec, mode, seed, cfg.eta, cfg.a, delta, cfg.T,
         cfg.zeta, cfg.record_every, cfg.strict_delta, ref, out_dir, cfg.gap_target)
        for spec in cfg.compressors
        for mode in cfg.feedback
        for seed in cfg.seeds
    ]
    results: dict[str, dict] = {}
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_execute_one, cells))
    else:
        outcomes = [_execute_one(cell) for cell in cells]
    for name, status, row in outcomes:
        results[name] = {"status": status, **(row or {})}

    summary_path = out_dir / "summary.json"
    with open(summary_path, "w") as fh:
        json.dump(results, fh, indent=2, sort_keys=True)
        fh.write("\n")
    _print_summary(results, cfg.gap_target)
    return results


def _print_summary(results: dict[str, dict], gap_target: float) -> None:
    header = f"{'run':<28} {'final_gap':>12} {'g_max':>10} {'bits@{:g}'.format(gap_target):>14} {'slope':>8}"
    print(header)
    print("-" * len(header))
    for name in sorted(results):
        row = results[name]
        if row["status"] != "ok":
            print(f"{name:<28} FAILED: {row['status']}")
            continue
        bits = row["bits_to_target"]
        slope = row["rate_slope"]
        print(
            f"{name:<28} {row['final_gap']:>12.4e} {row['final_g_max']:>10.4f} "
            f"{(str(bits) if bits is not None else '-'):>14} "
            f"{(f'{slope:.3f}' if slope is not None else '-'):>8}"
        )


def run_check(cfg: ExperimentConfig) -> None:
    """Contract battery: compression contract for each configured operator,
    plus a short instrumented run with every invariant check on."""
    rng = np.random.default_rng(0)
    for spec in cfg.compressors:
        for d in (4, cfg.d):
            margin = validate_contract(spec, d, trials=2000, rng=rng)
            bound = 1.0 - omega_of(spec, d)
            status = "ok" if margin <= bound + 0.02 else "VIOLATED"
            print(f"contract {spec.label():<14} d={d:<4} ratio={margin:.4f} "
                  f"bound={bound:.4f} {status}")
            if status == "VIOLATED":
                raise OracleFailureError(
                    f"compression contract violated for {spec.label()} at d={d}"
                )
    graph, instance = build_problem(cfg)
    delta = 100.0 if cfg.delta == "auto" else float(cfg.delta)
    hyper = engine.HyperParams(delta=delta, T=200, eta=cfg.eta or 0.001)
    engine.run(instance, graph, cfg.compressors[0], hyper, seed=cfg.seeds[0],
               check_invariants=True, keep_diagnostics=False)
    print("invariants ok over 200 iterations")


def _parse_overrides(pairs: list[str]) -> dict[str, str]:
    out: dict[str, str] = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"--set expects key=value, got {pair!r}")
        key, value = pair.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="decopt",
        description="decentralized compressed saddle-point experiment driver",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in (
        ("run", "execute an experiment suite"),
        ("oracle", "compute and cache the reference solution"),
        ("check", "run the compression-contract and invariant battery"),
        ("delta", "print the admissible regularizer interval"),
    ):
        cmd = sub.add_parser(name, help=helptext)
        cmd.add_argument("--config", type=str, default=None, help="key=value config file")
        cmd.add_argument("--out", type=str, default=None, help="output directory")
        cmd.add_argument("--set", dest="overrides", action="append", default=[],
                         metavar="K=V", help="override a config key")
        cmd.add_argument("--jobs", type=int, default=1, help="parallel runs")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        overrides = _parse_overrides(args.overrides)
        if args.out is not None:
            overrides["out"] = args.out
        cfg = load_config(args.config, overrides)
        if args.command == "run":
            run_suite(cfg, jobs=max(1, args.jobs))
        elif args.command == "oracle":
            graph, instance = build_problem(cfg)
            ref = compute_oracle(cfg, graph, instance, Path(cfg.out))
            print(f"f_star={ref.f_star:.12g} iterations={ref.iterations} "
                  f"movement={ref.movement:.3g} max_violation={ref.max_violation:.3g}")
        elif args.command == "check":
            run_check(cfg)
        elif args.command == "delta":
            mid = delta_auto(cfg)
            print(f"delta midpoint: {mid:.10g}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NumericalDivergenceError as exc:
        print(f"numerical divergence: {exc}", file=sys.stderr)
        return 3
    except OracleFailureError as exc:
        print(f"oracle failure: {exc}", file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
