"""Benchmark instance generation, derivatives, projection, and the solver
oracle."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from decopt.errors import ConfigError, MissingConstraintError
from decopt.problem import (
    QcqpInstance,
    constraint_grad,
    constraint_value,
    estimate_constants,
    generate_qcqp,
    load_instance,
    local_cost,
    local_grad,
    project_feasible,
    reference_solution,
    save_instance,
    shrunk_bound,
    total_cost,
)
from decopt.topology import Graph, generate_erdos_renyi


@pytest.fixture(scope="module")
def small():
    graph = generate_erdos_renyi(5, 0.6, seed=2)
    instance = generate_qcqp(graph, 3, seed=4, noise_sigma=0.2)
    return graph, instance


def test_generation_is_deterministic(small):
    graph, instance = small
    again = generate_qcqp(graph, 3, seed=4, noise_sigma=0.2)
    assert np.array_equal(instance.a_mats, again.a_mats)
    assert np.array_equal(instance.b_vecs, again.b_vecs)
    assert instance.c == again.c


def test_cost_matrices_are_psd(small):
    _, instance = small
    for a in instance.a_mats:
        assert np.array_equal(a, a.T)
        assert np.linalg.eigvalsh(a).min() >= -1e-12


def test_constraint_offsets_symmetric_and_in_range(small):
    graph, instance = small
    for i, j in graph.edges:
        val = instance.c[(i, j)]
        assert instance.c[(j, i)] == val
        assert -5.0 <= val <= -3.0
    assert len(instance.c) == graph.m


def test_default_radius_scales_with_node_count():
    graph = generate_erdos_renyi(30, 0.15, seed=7)
    instance = generate_qcqp(graph, 10, seed=0)
    assert instance.node_bound == pytest.approx(40.0 / np.sqrt(30))


def test_bad_c_range_rejected(small):
    graph, _ = small
    with pytest.raises(ConfigError):
        generate_qcqp(graph, 3, seed=0, c_range=(-1.0, 0.5))
    with pytest.raises(ConfigError):
        generate_qcqp(graph, 3, seed=0, c_range=(-1.0, -2.0))


def test_non_neighbor_constraint_raises(small):
    graph, instance = small
    non_edges = [
        (i, j) for i in range(graph.n) for j in range(graph.n)
        if i != j and j not in graph.neighbors[i]
    ]
    if not non_edges:
        pytest.skip("graph is complete")
    i, j = non_edges[0]
    with pytest.raises(MissingConstraintError):
        instance.c_of(i, j)


def test_cost_gradient_matches_finite_differences(small):
    _, instance = small
    rng = np.random.default_rng(6)
    x = rng.standard_normal(instance.d)
    h = 1e-6
    for i in range(instance.n):
        grad = local_grad(instance, i, x)
        fd = np.empty(instance.d)
        for k in range(instance.d):
            e = np.zeros(instance.d)
            e[k] = h
            fd[k] = (local_cost(instance, i, x + e) - local_cost(instance, i, x - e)) / (2 * h)
        assert np.linalg.norm(fd - grad) <= 1e-6 * max(1.0, np.linalg.norm(grad))


def test_constraint_gradient_matches_finite_differences(small):
    graph, instance = small
    rng = np.random.default_rng(8)
    i, j = graph.edges[0]
    x_i, x_j = rng.standard_normal((2, instance.d))
    h = 1e-6
    grad = constraint_grad(instance, i, j, x_i, x_j)
    fd = np.empty(instance.d)
    for k in range(instance.d):
        e = np.zeros(instance.d)
        e[k] = h
        fd[k] = (
            constraint_value(instance, i, j, x_i + e, x_j)
            - constraint_value(instance, i, j, x_i - e, x_j)
        ) / (2 * h)
    assert np.linalg.norm(fd - grad) <= 1e-6 * max(1.0, np.linalg.norm(grad))


def test_constraint_symmetry_in_value(small):
    graph, instance = small
    rng = np.random.default_rng(9)
    i, j = graph.edges[0]
    x_i, x_j = rng.standard_normal((2, instance.d))
    assert constraint_value(instance, i, j, x_i, x_j) == constraint_value(
        instance, j, i, x_j, x_i
    )


def test_noise_model_mean_and_scale(small):
    """Sampled gradients are the exact gradient plus isotropic noise of the
    configured scale."""
    _, instance = small
    rng = np.random.default_rng(10)
    x = rng.standard_normal(instance.d)
    exact = local_grad(instance, 0, x)
    draws = np.stack([local_grad(instance, 0, x, rng=rng) for _ in range(4000)])
    err = draws - exact
    assert np.abs(err.mean(axis=0)).max() < 0.02
    assert err.std() == pytest.approx(instance.noise_sigma, rel=0.05)


def test_noise_consistency_between_cost_and_grad(small):
    """A shared noise draw perturbs cost and gradient consistently: the
    two-point difference quotient of the noisy cost recovers the noisy
    gradient of the same sample."""
    _, instance = small
    rng = np.random.default_rng(11)
    x = rng.standard_normal(instance.d)
    eps = instance.noise_sigma * rng.standard_normal(instance.d)
    u = np.zeros(instance.d)
    u[1] = 1.0
    h = 1e-6
    fd = (local_cost(instance, 0, x + h * u, eps) - local_cost(instance, 0, x - h * u, eps)) / (2 * h)
    assert fd == pytest.approx(local_grad(instance, 0, x, noise=eps)[1], abs=1e-5)


@settings(max_examples=50, deadline=None)
@given(
    coords=st.lists(st.floats(-50, 50, allow_nan=False), min_size=1, max_size=6),
    bound=st.floats(min_value=0.1, max_value=30),
)
def test_projection_properties(coords, bound):
    x = np.array(coords)
    y = project_feasible(x, bound)
    assert np.linalg.norm(y) <= bound * (1 + 1e-12)
    if np.linalg.norm(x) <= bound:
        assert np.array_equal(y, x)
    else:
        # projection lands on the sphere, preserving direction
        assert np.linalg.norm(y) == pytest.approx(bound, rel=1e-12)
        assert np.dot(x, y) == pytest.approx(np.linalg.norm(x) * bound, rel=1e-12)


def test_projection_requires_positive_bound():
    with pytest.raises(ConfigError):
        project_feasible(np.ones(2), 0.0)


def test_shrunk_bound_formula_and_validation():
    assert shrunk_bound(10.0, 1.0, 5.0) == pytest.approx((1 - 1.0 / 5.0) * 10.0)
    assert shrunk_bound(10.0, 0.0, 10.0) == 10.0
    with pytest.raises(ConfigError):
        shrunk_bound(10.0, 5.0, 5.0)
    with pytest.raises(ConfigError):
        shrunk_bound(10.0, 1.0, 20.0)


def test_total_cost_is_sum_of_local_costs(small):
    _, instance = small
    rng = np.random.default_rng(12)
    x = rng.standard_normal((instance.n, instance.d))
    expected = sum(local_cost(instance, i, x[i]) for i in range(instance.n))
    assert total_cost(instance, x) == pytest.approx(expected, rel=1e-12)


def test_estimated_constants_dominate_sampled_values(small):
    graph, instance = small
    consts = estimate_constants(instance, graph)
    rng = np.random.default_rng(13)
    for _ in range(200):
        x = rng.standard_normal(instance.d)
        x *= instance.node_bound * rng.random() / np.linalg.norm(x)
        for i in range(instance.n):
            assert np.linalg.norm(local_grad(instance, i, x)) <= consts.g_i[i]
    assert consts.g == pytest.approx(np.sqrt(np.sum(consts.g_i**2)))
    assert consts.r_total == pytest.approx(instance.node_bound * np.sqrt(instance.n))
    assert consts.g_tilde > 0 and consts.c > 0


def test_estimate_constants_requires_enough_samples(small):
    graph, instance = small
    with pytest.raises(ConfigError):
        estimate_constants(instance, graph, samples=10)


def test_instance_roundtrip(tmp_path, small):
    _, instance = small
    path = tmp_path / "instance.txt"
    save_instance(instance, str(path))
    loaded = load_instance(str(path))
    assert np.array_equal(loaded.a_mats, instance.a_mats)
    assert np.array_equal(loaded.b_vecs, instance.b_vecs)
    assert loaded.c == instance.c
    assert loaded.node_bound == instance.node_bound
    assert loaded.noise_sigma == instance.noise_sigma


def test_single_node_interior_optimum_closed_form():
    """With one node and no constraints, the optimum is -(A+A^T)^{-1} b when
    that point lies inside the ball."""
    graph = Graph(n=1, edges=(), neighbors=((),))
    rng = np.random.default_rng(14)
    m = rng.standard_normal((3, 3))
    a = m @ m.T + 0.5 * np.eye(3)
    b = 0.1 * rng.standard_normal(3)
    instance = QcqpInstance(d=3, a_mats=a[None], b_vecs=b[None], c={}, node_bound=10.0)
    expected = -np.linalg.solve(a + a.T, b)
    assert np.linalg.norm(expected) < 10.0  # interior, so clipping is a no-op
    ref = reference_solution(instance, graph)
    assert np.linalg.norm(ref.x_star[0] - expected) < 1e-6
    assert ref.f_star == pytest.approx(total_cost(instance, expected[None]), abs=1e-8)


def test_reference_solution_is_feasible(small):
    graph, instance = small
    ref = reference_solution(instance, graph)
    assert ref.max_violation <= 1e-6
    for i in range(instance.n):
        assert np.linalg.norm(ref.x_star[i]) <= instance.node_bound + 1e-6
