"""Synchronous saddle-point engine with error-compensated compressed exchange.

One iteration has two phases.  The exchange phase has every node broadcast a
compressed residual q_i = C(raw_i - copy_i) to its neighbors; every holder of
that node's copy applies the identical update, projects, and refreshes its
running average.  The update phase reads a snapshot of the projected
parameters, takes one primal descent step on the modified Lagrangian

    L(x, lam) = sum_i f_i(x_i) + sum_ij (lam_ij g_ij - (delta*eta/2) lam_ij^2)

and one regularized dual ascent step, committing both atomically.  Sample
feedback uses exact sampled gradients; bandit feedback replaces them with the
two-point sphere estimator and projects onto the shrunken ball so both query
points stay feasible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import metrics
from .compression import CompressorSpec, compress
from .errors import (
    ConfigError,
    FeasibilityViolationError,
    HorizonTooShortError,
    NumericalDivergenceError,
)
from .problem import (
    QcqpInstance,
    ReferenceSolution,
    local_cost,
    project_feasible,
    shrunk_bound,
    total_cost,
)
from .topology import ConstraintIndex, Graph

__all__ = [
    "NodeState",
    "DualState",
    "HyperParams",
    "delta_interval",
    "min_horizon",
    "exchange_round",
    "step_sample",
    "step_bandit",
    "bandit_gradient_estimate",
    "run",
]

_MAGNITUDE_GUARD = 1e12


@dataclass
class NodeState:
    """Per-node optimizer state.

    `raw` is the locally updated parameter before compression; `copies[k]`
    is this node's error-compensated estimate of node k's raw parameter for
    k in N_i and k == i; `projected` is the feasible iterate used in all
    gradients, and `running_avg` its arithmetic mean over iterations 1..t.
    """

    raw: np.ndarray
    copies: dict[int, np.ndarray]
    projected: np.ndarray
    running_avg: np.ndarray
    t: int = 0


@dataclass
class DualState:
    """Nonnegative multipliers, one per directed constraint slot."""

    lam: np.ndarray
    index: ConstraintIndex

    def value(self, i: int, j: int) -> float:
        return float(self.lam[self.index.slot(i, j)])


@dataclass(frozen=True)
class HyperParams:
    """Run hyperparameters.  Give either a fixed step `eta` or the constant
    `a` of the diminishing-horizon schedule eta = a / sqrt(T)."""

    delta: float
    T: int
    eta: float | None = None
    a: float | None = None
    zeta: float = 0.0
    feedback: str = "sample"
    strict_delta: bool = False

    def __post_init__(self):
        if (self.eta is None) == (self.a is None):
            raise ConfigError("give exactly one of eta or a")
        if self.T < 1:
            raise ConfigError(f"T must be >= 1, got {self.T}")
        if self.delta <= 0:
            raise ConfigError(f"delta must be positive, got {self.delta}")
        if self.feedback not in ("sample", "bandit"):
            raise ConfigError(f"feedback must be 'sample' or 'bandit', got {self.feedback!r}")
        if self.feedback == "bandit" and self.zeta <= 0:
            raise ConfigError("bandit feedback needs zeta > 0")

    @property
    def step(self) -> float:
        return self.eta if self.eta is not None else self.a / math.sqrt(self.T)


_MODE_COEFF = {"sample": 64.0, "bandit": 256.0}


def _project_rows(x: np.ndarray, bound: float) -> np.ndarray:
    """Row-wise Euclidean ball projection of stacked (n, d) parameters."""
    norms = np.linalg.norm(x, axis=1)
    over = norms > bound
    if np.any(over):
        x = x.copy()
        x[over] *= (bound / norms[over])[:, None]
    return x


def min_horizon(a: float, m: int, g_tilde: float, omega: float, mode: str) -> float:
    """Smallest horizon T keeping the regularizer interval real under the
    schedule eta = a / sqrt(T)."""
    return _MODE_COEFF[mode] * a**2 * (1 + m) * g_tilde**2 / omega**2


def delta_interval(
    eta: float,
    m: int,
    g_tilde: float,
    omega: float,
    mode: str = "sample",
    a: float | None = None,
) -> tuple[float, float]:
    """Admissible regularizer interval

        [ (1 - sqrt(1 - c eta^2 (1+m) G~^2 / w^2)) / (4 eta^2),
          (1 + sqrt(...)) / (4 eta^2) ]

    with c = 64 for sample feedback and c = 256 for bandit feedback.  Raises
    HorizonTooShortError when the discriminant is negative, reporting the
    minimal horizon if the step constant `a` is known.
    """
    if mode not in _MODE_COEFF:
        raise ConfigError(f"mode must be 'sample' or 'bandit', got {mode!r}")
    coeff = _MODE_COEFF[mode]
    disc = 1.0 - coeff * eta**2 * (1 + m) * g_tilde**2 / omega**2
    if disc < 0:
        min_t = None if a is None else min_horizon(a, m, g_tilde, omega, mode)
        hint = "" if min_t is None else f"; need T >= {math.ceil(min_t)}"
        raise HorizonTooShortError(
            f"horizon too short: discriminant {disc:.6g} < 0 for eta={eta}{hint}",
            min_horizon=min_t,
        )
    root = math.sqrt(disc)
    return (1.0 - root) / (4.0 * eta**2), (1.0 + root) / (4.0 * eta**2)


def init_states(
    instance: QcqpInstance,
    graph: Graph,
    rng: np.random.Generator,
    bound: float,
) -> list[NodeState]:
    """Random raw parameters inside the (possibly shrunken) ball; all copy
    parameters start at zero, as mandated before the uncompressed first round."""
    d = instance.d
    states = []
    for i in range(graph.n):
        v = rng.standard_normal(d)
        v *= bound * rng.random() ** (1.0 / d) / np.linalg.norm(v)
        states.append(
            NodeState(
                raw=v,
                copies={k: np.zeros(d) for k in (*graph.neighbors[i], i)},
                projected=np.zeros(d),
                running_avg=np.zeros(d),
            )
        )
    return states


def exchange_round(
    states: list[NodeState],
    graph: Graph,
    spec: CompressorSpec,
    rng: np.random.Generator,
    bound: float,
    first: bool = False,
) -> int:
    """One broadcast round: returns the total bits sent (one message per
    directed edge; a node's message to itself is free).

    The first round is always uncompressed so raw and copy parameters agree
    exactly afterwards; later rounds ship C(raw - copy) residuals.
    """
    n = graph.n
    d = states[0].raw.shape[0]
    messages: list[np.ndarray] = []
    bits_total = 0
    for i in range(n):
        residual = states[i].raw - states[i].copies[i]
        if first:
            q, bits = residual.copy(), 32 * d
        else:
            q, bits = compress(spec, residual, rng)
        messages.append(q)
        bits_total += bits * graph.degree(i)
    for i in range(n):
        for k in (*graph.neighbors[i], i):
            # same operands on every holder, so the copies stay bit-identical
            states[i].copies[k] = states[i].copies[k] + messages[k]
        states[i].projected = project_feasible(states[i].copies[i], bound)
        states[i].t += 1
        t = states[i].t
        states[i].running_avg = states[i].projected / t + states[i].running_avg * ((t - 1) / t)
    return bits_total


def _draw_noise(
    instance: QcqpInstance, n: int, rng: np.random.Generator
) -> np.ndarray | None:
    if instance.noise_sigma == 0.0:
        return None
    return instance.noise_sigma * rng.standard_normal((n, instance.d))


@dataclass(frozen=True)
class _EdgeArrays:
    """Directed constraint slots flattened to index arrays for vector math."""

    src: np.ndarray
    dst: np.ndarray
    c: np.ndarray

    @classmethod
    def from_index(cls, instance: QcqpInstance, index: ConstraintIndex) -> "_EdgeArrays":
        return cls(
            src=np.array([p[0] for p in index.pairs], dtype=np.intp),
            dst=np.array([p[1] for p in index.pairs], dtype=np.intp),
            c=np.array([instance.c[p] for p in index.pairs]),
        )


def _primal_grads(
    instance: QcqpInstance,
    snapshot: np.ndarray,
    lam: np.ndarray,
    edges: _EdgeArrays,
    noise: np.ndarray | None,
) -> np.ndarray:
    """Stacked (n, d) primal Lagrangian gradients at the snapshot."""
    sym = instance.a_mats + np.transpose(instance.a_mats, (0, 2, 1))
    grads = np.einsum("nij,nj->ni", sym, snapshot) + instance.b_vecs
    if noise is not None:
        grads = grads + noise
    if len(edges.src):
        contrib = (4.0 * lam)[:, None] * (snapshot[edges.src] - snapshot[edges.dst])
        np.add.at(grads, edges.src, contrib)
    return grads


def _dual_ascent(
    lam: np.ndarray,
    snapshot: np.ndarray,
    edges: _EdgeArrays,
    eta: float,
    delta: float,
) -> np.ndarray:
    diff = snapshot[edges.src] - snapshot[edges.dst]
    g_vals = np.sum(diff**2, axis=1) + edges.c
    return np.maximum(lam + eta * (g_vals - delta * eta * lam), 0.0)


def _commit(
    states: list[NodeState],
    duals: DualState,
    new_raw: np.ndarray,
    new_lam: np.ndarray,
    iteration: int,
) -> None:
    if not np.all(np.isfinite(new_raw)) or np.abs(new_raw).max() > _MAGNITUDE_GUARD:
        bad = int(np.argmax(~np.all(np.isfinite(new_raw), axis=1)
                            | (np.abs(new_raw).max(axis=1) > _MAGNITUDE_GUARD)))
        raise NumericalDivergenceError(
            f"node {bad} diverged at iteration {iteration}", iteration=iteration
        )
    for i in range(len(states)):
        states[i].raw = new_raw[i]
    duals.lam = new_lam


def step_sample(
    instance: QcqpInstance,
    graph: Graph,
    states: list[NodeState],
    duals: DualState,
    eta: float,
    delta: float,
    bound: float,
    rng: np.random.Generator,
    edges: _EdgeArrays | None = None,
) -> float:
    """One sample-feedback primal/dual step from a snapshot of the current
    projected parameters.  Returns the squared norm of the stacked primal
    Lagrangian gradient (a diagnostic for the compression-error recursion).
    """
    if edges is None:
        edges = _EdgeArrays.from_index(instance, duals.index)
    snapshot = np.stack([s.projected for s in states])
    noise = _draw_noise(instance, graph.n, rng)
    grads = _primal_grads(instance, snapshot, duals.lam, edges, noise)
    raw = np.stack([s.raw for s in states])
    new_raw = _project_rows(raw - eta * grads, bound)
    new_lam = _dual_ascent(duals.lam, snapshot, edges, eta, delta)
    _commit(states, duals, new_raw, new_lam, states[0].t)
    return float(np.sum(grads**2))


def bandit_gradient_estimate(
    instance: QcqpInstance,
    graph: Graph,
    i: int,
    x_i: np.ndarray,
    snapshot: list[np.ndarray],
    duals: DualState,
    zeta: float,
    rng: np.random.Generator,
    noise_i: np.ndarray | None = None,
    u: np.ndarray | None = None,
) -> np.ndarray:
    """Two-point primal gradient estimate

        p_i = (d / 2 zeta) [f_i(x_i + zeta u) - f_i(x_i - zeta u)] u
              + 2 sum_j lam_ij grad_i g_ij,

    with u uniform on the unit sphere; exactly two cost queries are made, at
    points that must lie in the full feasible ball.
    """
    d = instance.d
    if u is None:
        u = rng.standard_normal(d)
        u /= np.linalg.norm(u)
    for q in (x_i + zeta * u, x_i - zeta * u):
        if np.linalg.norm(q) > instance.node_bound + 1e-9:
            raise FeasibilityViolationError(
                f"bandit query point left the feasible ball at node {i} "
                f"(norm {np.linalg.norm(q):.12g} > {instance.node_bound:.12g})"
            )
    f_plus = local_cost(instance, i, x_i + zeta * u, noise_i)
    f_minus = local_cost(instance, i, x_i - zeta * u, noise_i)
    p = (d / (2.0 * zeta)) * (f_plus - f_minus) * u
    for j in graph.neighbors[i]:
        lam = duals.lam[duals.index.slot(i, j)]
        p = p + (4.0 * lam) * (x_i - snapshot[j])
    return p


def step_bandit(
    instance: QcqpInstance,
    graph: Graph,
    states: list[NodeState],
    duals: DualState,
    eta: float,
    delta: float,
    zeta: float,
    bound: float,
    rng: np.random.Generator,
    edges: _EdgeArrays | None = None,
) -> float:
    """Bandit-feedback counterpart of step_sample; `bound` is the shrunken
    ball radius."""
    n, d = graph.n, instance.d
    if edges is None:
        edges = _EdgeArrays.from_index(instance, duals.index)
    snapshot = np.stack([s.projected for s in states])
    noise = _draw_noise(instance, n, rng)
    dirs = rng.standard_normal((n, d))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)

    x_plus = snapshot + zeta * dirs
    x_minus = snapshot - zeta * dirs
    for pts in (x_plus, x_minus):
        norms = np.linalg.norm(pts, axis=1)
        if np.any(norms > instance.node_bound + 1e-9):
            bad = int(np.argmax(norms))
            raise FeasibilityViolationError(
                f"bandit query point left the feasible ball at node {bad} "
                f"(norm {norms[bad]:.12g} > {instance.node_bound:.12g})"
            )

    def costs(pts: np.ndarray) -> np.ndarray:
        vals = np.einsum("ni,nij,nj->n", pts, instance.a_mats, pts)
        lin = instance.b_vecs if noise is None else instance.b_vecs + noise
        return vals + np.sum(lin * pts, axis=1)

    grads = (instance.d / (2.0 * zeta)) * (costs(x_plus) - costs(x_minus))[:, None] * dirs
    if len(edges.src):
        contrib = (4.0 * duals.lam)[:, None] * (snapshot[edges.src] - snapshot[edges.dst])
        np.add.at(grads, edges.src, contrib)
    raw = np.stack([s.raw for s in states])
    new_raw = _project_rows(raw - eta * grads, bound)
    new_lam = _dual_ascent(duals.lam, snapshot, edges, eta, delta)
    _commit(states, duals, new_raw, new_lam, states[0].t)
    return float(np.sum(grads**2))


def _check_invariants(
    states: list[NodeState],
    duals: DualState,
    graph: Graph,
    bound: float,
    dual_norm_cap: float | None,
) -> None:
    lam = duals.lam
    if lam.min() < 0.0:
        raise AssertionError("dual nonnegativity violated")
    for slot in range(len(lam)):
        if lam[slot] != lam[duals.index.reverse_slot(slot)]:
            raise AssertionError("dual symmetry violated")
    for i in range(graph.n):
        for j in graph.neighbors[i]:
            if not np.array_equal(states[i].copies[j], states[j].copies[j]):
                raise AssertionError(f"copy coherence violated on edge ({i}, {j})")
        if np.linalg.norm(states[i].projected) > bound + 1e-9:
            raise AssertionError(f"feasibility margin violated at node {i}")
    if dual_norm_cap is not None and np.linalg.norm(lam) > dual_norm_cap + 1e-9:
        raise AssertionError("dual norm bound violated")


def run(
    instance: QcqpInstance,
    graph: Graph,
    spec: CompressorSpec,
    hyper: HyperParams,
    seed: int,
    record_every: int = 50,
    reference: ReferenceSolution | None = None,
    check_invariants: bool = True,
    dual_norm_cap: float | None = None,
    keep_diagnostics: bool = True,
) -> "metrics.RunRecord":
    """Execute T iterations of the selected feedback mode.

    Identical inputs and seed give a bit-identical record.  When strict delta
    handling is requested the hyperparameters must place delta inside the
    theorem interval (the caller computes that interval; here we only enforce
    positivity in relaxed mode).
    """
    rng = np.random.default_rng(seed)
    index = ConstraintIndex.from_graph(graph)
    bandit = hyper.feedback == "bandit"
    full_bound = instance.node_bound
    bound = shrunk_bound(full_bound, hyper.zeta, instance.r) if bandit else full_bound
    eta, delta = hyper.step, hyper.delta

    states = init_states(instance, graph, rng, bound)
    duals = DualState(lam=np.zeros(len(index)), index=index)
    trace_edge = graph.edges[int(rng.integers(len(graph.edges)))] if graph.edges else None
    edges = _EdgeArrays.from_index(instance, index)

    rec = metrics.RunRecord(
        seed=seed,
        config={
            "compressor": spec.label(),
            "feedback": hyper.feedback,
            "eta": eta,
            "delta": delta,
            "T": hyper.T,
            "zeta": hyper.zeta,
            "n": graph.n,
            "d": instance.d,
            "record_every": record_every,
            "trace_edge": list(trace_edge) if trace_edge else None,
            "connected": graph.is_connected(),
        },
    )
    initial_gap: float | None = None
    cum_bits = 0
    max_lam_norm = 0.0

    for t in range(1, hyper.T + 1):
        cum_bits += exchange_round(states, graph, spec, rng, bound, first=(t == 1))
        if check_invariants:
            _check_invariants(states, duals, graph, bound, dual_norm_cap)
        s_t = sum(float(np.sum((s.raw - s.copies[i]) ** 2)) for i, s in enumerate(states))
        lam_norm = float(np.linalg.norm(duals.lam))
        max_lam_norm = max(max_lam_norm, lam_norm)

        if t == 1 or t % record_every == 0 or t == hyper.T:
            avg = np.stack([s.running_avg for s in states])
            if reference is not None:
                cost = total_cost(instance, avg)
                if initial_gap is None:
                    initial_gap = cost - reference.f_star
                rel_gap = metrics.relative_cost_gap(
                    cost, reference.f_star, initial_gap
                )
                rel_err = float(
                    np.linalg.norm(avg - reference.x_star)
                    / np.linalg.norm(reference.x_star)
                )
            else:
                rel_gap = rel_err = float("nan")
            if len(index):
                diff = avg[edges.src] - avg[edges.dst]
                g_all = np.sum(diff**2, axis=1) + edges.c
                g_max = float(g_all.max())
                g_edge = float(g_all[index.slot(*trace_edge)]) if trace_edge else float("nan")
            else:
                g_max = g_edge = float("nan")
            rec.append(
                t=t, rel_gap=rel_gap, rel_err=rel_err, g_edge=g_edge,
                g_max=g_max, cum_bits=cum_bits, lambda_norm=lam_norm,
                **{"S_t": s_t},
            )

        if bandit:
            grad_sq = step_bandit(
                instance, graph, states, duals, eta, delta, hyper.zeta, bound, rng,
                edges=edges,
            )
        else:
            grad_sq = step_sample(
                instance, graph, states, duals, eta, delta, bound, rng, edges=edges
            )
        if keep_diagnostics:
            rec.s_series.append(s_t)
            rec.grad_sq_series.append(grad_sq)
            rec.lambda_norm_series.append(lam_norm)

    rec.diagnostics = {
        "max_lambda_norm": max_lam_norm,
        "invariants_checked": check_invariants,
        "dual_norm_cap": dual_norm_cap,
    }
    rec.final_avg = np.stack([s.running_avg for s in states])
    return rec
