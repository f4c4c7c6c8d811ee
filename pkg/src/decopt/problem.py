"""Quadratic benchmark with pairwise proximity constraints on a ball.

Each node i owns the cost f_i(x) = x^T A_i x + b_i^T x with A_i PSD (Wishart
generated), and each directed neighbor pair (i, j) the constraint

    g_ij(x_i, x_j) = ||x_i - x_j||^2 + c_ij <= 0,    c_ij = c_ji <= 0.

The feasible set is the Euclidean ball of radius `node_bound` per node.
Optional additive Gaussian gradient noise is modeled by perturbing the linear
term: a sample eps gives cost x^T A x + (b + eps)^T x, so the sampled gradient
is the exact gradient plus eps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, MissingConstraintError, OracleFailureError
from .topology import ConstraintIndex, Graph

__all__ = [
    "QcqpInstance",
    "ProblemConstants",
    "ReferenceSolution",
    "generate_qcqp",
    "local_cost",
    "local_grad",
    "constraint_value",
    "constraint_grad",
    "project_feasible",
    "shrunk_bound",
    "estimate_constants",
    "reference_solution",
    "total_cost",
    "save_instance",
    "load_instance",
]


@dataclass(frozen=True)
class QcqpInstance:
    """Immutable problem data for one benchmark instance.

    Attributes:
        d: parameter dimension.
        a_mats: (n, d, d) PSD cost matrices.
        b_vecs: (n, d) linear cost terms.
        c: symmetric offsets keyed by directed pair (i, j); all <= 0.
        node_bound: per-node feasible ball radius (the paper-scale R/sqrt(n)).
        noise_sigma: stddev of the additive gradient noise; 0 is deterministic.
        interior_radius: radius r of a ball around the origin contained in the
            feasible set; defaults to node_bound (maximal choice).
    """

    d: int
    a_mats: np.ndarray
    b_vecs: np.ndarray
    c: dict[tuple[int, int], float]
    node_bound: float
    noise_sigma: float = 0.0
    interior_radius: float | None = None

    @property
    def n(self) -> int:
        return self.a_mats.shape[0]

    @property
    def r(self) -> float:
        return self.node_bound if self.interior_radius is None else self.interior_radius

    def c_of(self, i: int, j: int) -> float:
        try:
            return self.c[(i, j)]
        except KeyError:
            raise MissingConstraintError(f"no constraint between nodes {i} and {j}") from None


def generate_qcqp(
    graph: Graph,
    d: int,
    seed: int,
    c_range: tuple[float, float] = (-5.0, -3.0),
    radius: float | None = None,
    noise_sigma: float = 0.0,
) -> QcqpInstance:
    """Sample an instance: A_i = M_i M_i^T Wishart with d degrees of freedom,
    b_i Gaussian with one (mean, variance) pair per node drawn from [0, 1],
    c_ij uniform in c_range and symmetrized.  Deterministic given the seed.

    `radius` is the per-node ball radius; default 40/sqrt(n) as in the
    benchmark configuration.
    """
    lo, hi = c_range
    if hi > 0 or lo > hi:
        raise ConfigError(f"c_range must satisfy lo <= hi <= 0, got {c_range}")
    if d < 1:
        raise ConfigError(f"dimension must be >= 1, got d={d}")
    if radius is None:
        radius = 40.0 / np.sqrt(graph.n)
    rng = np.random.default_rng(seed)
    n = graph.n
    a_mats = np.empty((n, d, d))
    b_vecs = np.empty((n, d))
    for i in range(n):
        m_i = rng.standard_normal((d, d))
        a_mats[i] = m_i @ m_i.T
        mean = rng.uniform(0.0, 1.0)
        var = rng.uniform(0.0, 1.0)
        b_vecs[i] = mean + np.sqrt(var) * rng.standard_normal(d)
    c: dict[tuple[int, int], float] = {}
    for i, j in graph.edges:
        val = float(rng.uniform(lo, hi))
        c[(i, j)] = val
        c[(j, i)] = val
    return QcqpInstance(
        d=d,
        a_mats=a_mats,
        b_vecs=b_vecs,
        c=c,
        node_bound=float(radius),
        noise_sigma=float(noise_sigma),
    )


def local_cost(
    instance: QcqpInstance, i: int, x: np.ndarray, noise: np.ndarray | None = None
) -> float:
    """Sampled cost f_i(x, xi): the noise vector perturbs the linear term."""
    b = instance.b_vecs[i] if noise is None else instance.b_vecs[i] + noise
    return float(x @ instance.a_mats[i] @ x + b @ x)


def local_grad(
    instance: QcqpInstance,
    i: int,
    x: np.ndarray,
    rng: np.random.Generator | None = None,
    noise: np.ndarray | None = None,
) -> np.ndarray:
    """Sampled gradient (A_i + A_i^T) x + b_i + eps.

    Pass `noise` to reuse a sample drawn elsewhere; otherwise the rng draws
    eps ~ N(0, noise_sigma^2 I) (no rng or sigma=0 gives the exact gradient).
    """
    a = instance.a_mats[i]
    g = (a + a.T) @ x + instance.b_vecs[i]
    if noise is not None:
        return g + noise
    if rng is not None and instance.noise_sigma > 0:
        return g + instance.noise_sigma * rng.standard_normal(instance.d)
    return g


def constraint_value(
    instance: QcqpInstance, i: int, j: int, x_i: np.ndarray, x_j: np.ndarray
) -> float:
    diff = x_i - x_j
    return float(diff @ diff) + instance.c_of(i, j)


def constraint_grad(
    instance: QcqpInstance, i: int, j: int, x_i: np.ndarray, x_j: np.ndarray
) -> np.ndarray:
    """Gradient of g_ij with respect to x_i."""
    instance.c_of(i, j)  # raises for non-neighbor pairs
    return 2.0 * (x_i - x_j)


def project_feasible(x: np.ndarray, bound: float) -> np.ndarray:
    """Euclidean projection onto the origin-centered ball of the given radius."""
    if bound <= 0:
        raise ConfigError(f"projection bound must be positive, got {bound}")
    norm = float(np.linalg.norm(x))
    if norm <= bound:
        return np.asarray(x, dtype=np.float64).copy()
    return x * (bound / norm)


def shrunk_bound(bound: float, zeta: float, r: float) -> float:
    """Radius of the shrunken ball: points there stay feasible under any
    perturbation of norm zeta.  Requires 0 < zeta < r <= bound."""
    if not 0 <= zeta < r:
        raise ConfigError(f"need 0 <= zeta < r, got zeta={zeta}, r={r}")
    if r > bound:
        raise ConfigError(f"interior radius r={r} exceeds the ball radius {bound}")
    return (1.0 - zeta / r) * bound


@dataclass(frozen=True)
class ProblemConstants:
    """Conservative sampled estimates of the boundedness constants."""

    g: float         # sqrt(sum_i G_i^2), G_i bounding E||grad f_i||^2
    g_tilde: float   # max stacked constraint-gradient norm over pairs
    c: float         # sqrt(sum over directed pairs of C_ij^2)
    r_total: float   # node_bound * sqrt(n): stacked-parameter norm bound
    g_i: np.ndarray  # per-node gradient bounds


def _sample_ball(rng: np.random.Generator, d: int, bound: float, size: int) -> np.ndarray:
    v = rng.standard_normal((size, d))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    radii = bound * rng.random(size) ** (1.0 / d)
    return v * radii[:, None]


def estimate_constants(
    instance: QcqpInstance,
    graph: Graph,
    samples: int = 2000,
    rng: np.random.Generator | None = None,
) -> ProblemConstants:
    """Sample feasible points and report 5%-inflated maxima of the gradient
    and constraint magnitudes, with noise head-room 3*sigma*sqrt(d) added to
    the objective gradients."""
    if samples < 1000:
        raise ConfigError(f"need samples >= 1000, got {samples}")
    if rng is None:
        rng = np.random.default_rng(0)
    n, d, bound = instance.n, instance.d, instance.node_bound
    head_room = 3.0 * instance.noise_sigma * np.sqrt(d)
    g_i = np.empty(n)
    for i in range(n):
        pts = _sample_ball(rng, d, bound, samples)
        a = instance.a_mats[i]
        grads = pts @ (a + a.T).T + instance.b_vecs[i]
        g_i[i] = 1.05 * (np.linalg.norm(grads, axis=1).max() + head_room)
    g = float(np.sqrt(np.sum(g_i**2)))

    g_tilde = 0.0
    c_sq = 0.0
    for i, j in graph.edges:
        xi = _sample_ball(rng, d, bound, samples)
        xj = _sample_ball(rng, d, bound, samples)
        diff = xi - xj
        dist_sq = np.sum(diff**2, axis=1)
        # stacked [2(x_i-x_j); 2(x_j-x_i)] has norm 2*sqrt(2)*||x_i-x_j||
        g_tilde = max(g_tilde, 1.05 * 2.0 * np.sqrt(2.0 * dist_sq.max()))
        c_ij = 1.05 * np.abs(dist_sq + instance.c_of(i, j)).max()
        c_sq += 2.0 * c_ij**2  # both directed copies
    return ProblemConstants(
        g=g,
        g_tilde=float(g_tilde),
        c=float(np.sqrt(c_sq)),
        r_total=float(bound * np.sqrt(n)),
        g_i=g_i,
    )


@dataclass(frozen=True)
class ReferenceSolution:
    """Converged solution used as the metrics baseline."""

    x_star: np.ndarray   # (n, d) per-node optimum estimate
    f_star: float
    iterations: int      # total solver iterations across restarts
    movement: float      # cost spread across restarts (agreement residual)
    max_violation: float  # max positive constraint part at x_star


def total_cost(instance: QcqpInstance, x: np.ndarray) -> float:
    """Noise-free aggregate cost of stacked (n, d) parameters."""
    quad = np.einsum("ni,nij,nj->", x, instance.a_mats, x)
    return float(quad + np.sum(instance.b_vecs * x))


def reference_solution(
    instance: QcqpInstance,
    graph: Graph,
    violation_tol: float = 1e-6,
    solver: str | None = None,
) -> ReferenceSolution:
    """Solve the noise-free instance to solver accuracy.

    The problem is convex (PSD quadratics, convex quadratic constraints,
    ball constraints), so the interior-point optimum is global.  Raises
    OracleFailureError with the residuals when the solver does not reach
    optimality or the solution is insufficiently feasible.
    """
    import cvxpy as cp

    n, d, bound = instance.n, instance.d, instance.node_bound
    index = ConstraintIndex.from_graph(graph)

    x = cp.Variable((n, d))
    sym = 0.5 * (instance.a_mats + np.transpose(instance.a_mats, (0, 2, 1)))
    cost = sum(
        cp.quad_form(x[i], sym[i]) + instance.b_vecs[i] @ x[i] for i in range(n)
    )
    constraints = [cp.norm(x[i]) <= bound for i in range(n)]
    for i, j in graph.edges:  # one copy per unordered pair suffices
        constraints.append(cp.sum_squares(x[i] - x[j]) <= -instance.c[(i, j)])
    prob = cp.Problem(cp.Minimize(cost), constraints)
    try:
        prob.solve(solver=solver)
    except cp.error.SolverError as exc:
        raise OracleFailureError(f"oracle solver error: {exc}", {}) from exc

    stats = prob.solver_stats
    total_nit = int(stats.num_iters or 0) if stats is not None else 0
    residuals = {"status": prob.status, "iterations": total_nit}
    if prob.status not in ("optimal", "optimal_inaccurate") or x.value is None:
        raise OracleFailureError(
            f"oracle did not reach optimality (status {prob.status})", residuals
        )
    spread = 0.0 if prob.status == "optimal" else float("nan")
    x_star = np.asarray(x.value)
    if len(index):
        src = np.array([p[0] for p in index.pairs], dtype=np.intp)
        dst = np.array([p[1] for p in index.pairs], dtype=np.intp)
        c_arr = np.array([instance.c[p] for p in index.pairs])
        diff = x_star[src] - x_star[dst]
        max_violation = float(np.maximum(np.sum(diff**2, axis=1) + c_arr, 0.0).max())
    else:
        max_violation = 0.0
    max_violation = max(
        max_violation,
        float(np.maximum(np.linalg.norm(x_star, axis=1) - bound, 0.0).max()),
    )
    residuals["max_violation"] = max_violation
    if max_violation > violation_tol:
        raise OracleFailureError(
            f"oracle solution violates constraints by {max_violation:.3e} "
            f"(tolerance {violation_tol:.1e})",
            residuals,
        )
    return ReferenceSolution(
        x_star=x_star, f_star=total_cost(instance, x_star), iterations=total_nit,
        movement=spread, max_violation=max_violation,
    )


def save_instance(instance: QcqpInstance, path: str) -> None:
    """Self-describing text dump: header, row-major matrices, constraint table."""
    lines = [
        f"n {instance.n}",
        f"d {instance.d}",
        f"node_bound {instance.node_bound!r}",
        f"noise_sigma {instance.noise_sigma!r}",
        f"interior_radius {instance.r!r}",
    ]
    for i in range(instance.n):
        lines.append(f"A {i} " + " ".join(repr(float(v)) for v in instance.a_mats[i].ravel()))
        lines.append(f"b {i} " + " ".join(repr(float(v)) for v in instance.b_vecs[i]))
    for (i, j), val in sorted(instance.c.items()):
        if i < j:
            lines.append(f"c {i} {j} {float(val)!r}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_instance(path: str) -> QcqpInstance:
    header: dict[str, float] = {}
    a_rows: dict[int, np.ndarray] = {}
    b_rows: dict[int, np.ndarray] = {}
    c: dict[tuple[int, int], float] = {}
    with open(path) as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            tag = parts[0]
            if tag in ("n", "d", "node_bound", "noise_sigma", "interior_radius"):
                header[tag] = float(parts[1])
            elif tag == "A":
                a_rows[int(parts[1])] = np.array([float(v) for v in parts[2:]])
            elif tag == "b":
                b_rows[int(parts[1])] = np.array([float(v) for v in parts[2:]])
            elif tag == "c":
                i, j, val = int(parts[1]), int(parts[2]), float(parts[3])
                c[(i, j)] = val
                c[(j, i)] = val
            else:
                raise ConfigError(f"instance file {path!r}: unknown tag {tag!r}")
    try:
        n, d = int(header["n"]), int(header["d"])
        a_mats = np.stack([a_rows[i].reshape(d, d) for i in range(n)])
        b_vecs = np.stack([b_rows[i] for i in range(n)])
    except KeyError as exc:
        raise ConfigError(f"instance file {path!r} is incomplete: missing {exc}") from None
    return QcqpInstance(
        d=d,
        a_mats=a_mats,
        b_vecs=b_vecs,
        c=c,
        node_bound=header["node_bound"],
        noise_sigma=header.get("noise_sigma", 0.0),
        interior_radius=header.get("interior_radius"),
    )
