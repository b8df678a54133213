import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import minimize

from plapf.errors import ConfigError, DegenerateDegreeError, ShapeError
from plapf.graph import Graph, normalized_laplacian
from plapf.plap import (
    PenaltySpec, SolverConfig, closed_form_p2, edge_difference, fixed_point_residual,
    iteration_matrix_p2, message_matrices, node_gradient_norm, node_gradient_norms, objective,
    regularizer, solve,
)
from plapf.synthetic import path_graph, random_digraph, random_graph

PENALTIES = [PenaltySpec("power", 1.5), PenaltySpec("power", 2.0), PenaltySpec("power", 2.5),
             PenaltySpec("reg_tv", 1.0, 0.1), PenaltySpec("reg_tv", 1.5, 0.1)]


def brute_objective(g, F, Y, penalty, mu):
    """Direct double loop over neighbourhoods."""
    F, Y = np.atleast_2d(F.T).T, np.atleast_2d(Y.T).T
    W = g.weights.toarray()
    d = W.sum(axis=1)
    total = 0.0
    for i in range(g.n_nodes):
        norms = [np.linalg.norm(np.sqrt(W[i, j]) * (F[j] / np.sqrt(d[j]) - F[i] / np.sqrt(d[i])))
                 for j in range(g.n_nodes) if W[i, j] > 0]
        if norms:
            total += penalty.phi(np.sum(np.array(norms) ** penalty.p) ** (1 / penalty.p))
    return 0.5 * total + mu * np.sum((F - Y) ** 2)


def brute_messages(g, F, penalty, mu, floor=1e-8):
    W = g.weights.toarray()
    d = W.sum(axis=1)
    n, p = g.n_nodes, penalty.p
    F = F.reshape(n, -1)
    delta = lambda i, j: np.linalg.norm(np.sqrt(W[i, j]) * (F[j] / np.sqrt(d[j]) - F[i] / np.sqrt(d[i])))
    N = np.array([sum(delta(i, j) ** p for j in range(n) if W[i, j] > 0) ** (1 / p) for i in range(n)])
    N = np.maximum(N, floor)
    r = penalty.dphi_ratio(N)
    M = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            if W[i, j] > 0:
                M[i, j] = W[i, j] / 2 * (r[i] + r[j]) * max(delta(i, j), floor) ** (p - 2)
    alpha = 1 / (M.sum(axis=1) / d + 2 * mu)
    return M, alpha, 2 * mu * alpha


def numeric_gradient(fun, F, h=1e-6):
    G = np.zeros_like(F)
    for idx in np.ndindex(F.shape):
        E = np.zeros_like(F)
        E[idx] = h
        G[idx] = (fun(F + E) - fun(F - E)) / (2 * h)
    return G


def test_edge_difference_examples():
    g = path_graph(2)
    assert edge_difference(g, np.array([1.0, 0.0]), 0, 1) == pytest.approx(-1.0)
    g3 = path_graph(3)
    assert edge_difference(g3, np.array([0.0, 1.0, 0.0]), 1, 0) == pytest.approx(-1 / np.sqrt(2))
    with pytest.raises(ValueError):
        edge_difference(g3, np.zeros(3), 0, 2)


@given(st.integers(0, 200))
@settings(max_examples=30, deadline=None)
def test_edge_difference_antisymmetric(seed):
    g = random_graph(10, 0.3, seed=seed, weighted=True)
    F = np.random.default_rng(seed).normal(size=(10, 2))
    for i, j, _ in g.edges[:5]:
        assert np.allclose(edge_difference(g, F, i, j), -edge_difference(g, F, j, i))


def test_edge_difference_zero_degree_endpoint():
    g = Graph(2, [0], [1], directed=True)
    with pytest.raises(DegenerateDegreeError):
        edge_difference(g, np.ones(2), 0, 1)


def test_node_gradient_norms_path2():
    g = path_graph(2)
    F = np.array([1.0, 0.0])
    assert node_gradient_norm(g, F, 0, 2.0) == pytest.approx(1.0)
    assert np.allclose(node_gradient_norms(g, F, 1.5), [1.0, 1.0])
    assert node_gradient_norms(Graph(3, [0], [1]), np.ones(3), 2)[2] == 0.0


def test_regularizer_examples():
    g = path_graph(2)
    F = np.array([1.0, 0.0])
    assert regularizer(g, F, PenaltySpec("power", 2.0)) == pytest.approx(1.0)
    assert regularizer(g, F, PenaltySpec("reg_tv", 1.0, epsilon=1.0)) == pytest.approx(np.sqrt(2) - 1)
    assert regularizer(g, np.ones(2), PenaltySpec("power", 1.5)) == pytest.approx(0.0)


@given(st.integers(0, 500))
@settings(max_examples=30, deadline=None)
def test_p2_regularizer_is_laplacian_quadratic_form(seed):
    g = random_graph(15, 0.25, seed=seed, weighted=True)
    F = np.random.default_rng(seed).normal(size=(15, 3))
    quad = np.trace(F.T @ (normalized_laplacian(g) @ F))
    assert regularizer(g, F, PenaltySpec("power", 2.0)) == pytest.approx(quad, rel=1e-10)


@pytest.mark.parametrize("penalty", PENALTIES, ids=str)
def test_objective_matches_brute_force(penalty):
    g = random_graph(12, 0.3, seed=2, weighted=True)
    rng = np.random.default_rng(0)
    F, Y = rng.normal(size=(12, 2)), rng.normal(size=(12, 2))
    assert objective(g, F, Y, penalty, 0.7) == pytest.approx(brute_objective(g, F, Y, penalty, 0.7), rel=1e-12)


def test_objective_shape_mismatch():
    with pytest.raises(ShapeError):
        objective(path_graph(2), np.ones((2, 2)), np.ones((2, 3)), PenaltySpec(), 1.0)


@pytest.mark.parametrize("penalty", PENALTIES, ids=str)
def test_message_matrices_match_brute_force(penalty):
    g = random_graph(10, 0.35, seed=6, weighted=True)
    F = np.random.default_rng(1).normal(size=(10, 2))
    M, alpha, beta = message_matrices(g, F, penalty, 0.3)
    M_ref, a_ref, b_ref = brute_messages(g, F, penalty, 0.3)
    assert np.allclose(M.toarray(), M_ref, rtol=1e-12)
    assert np.allclose(alpha, a_ref) and np.allclose(beta, b_ref)
    assert np.allclose(M.toarray(), M.toarray().T)


def test_message_matrices_p2_example():
    g = path_graph(2)
    M, alpha, beta = message_matrices(g, np.array([1.0, 0.0]), PenaltySpec("power", 2.0), 1.0)
    assert np.allclose(M.toarray(), [[0, 2], [2, 0]])
    assert np.allclose(alpha, 0.25) and np.allclose(beta, 0.5)


def test_message_matrices_finite_at_constant_signal():
    g = random_graph(8, 0.4, seed=0)
    M, alpha, _ = message_matrices(g, np.ones(8), PenaltySpec("power", 1.5), 1.0)
    assert np.isfinite(M.data).all() and np.isfinite(alpha).all()


def test_penalty_validation():
    with pytest.raises(ConfigError):
        PenaltySpec("power", 1.0)
    with pytest.raises(ConfigError):
        PenaltySpec("huber", 2.0)
    PenaltySpec("reg_tv", 1.0)
    with pytest.raises(ConfigError):
        SolverConfig(mu=0.0)


def test_solve_path2_hand_value():
    F, trace = solve(path_graph(2), np.array([1.0, 0.0]), PenaltySpec("power", 2.0),
                     SolverConfig(mu=1.0, T=200, warmup=0))
    assert np.allclose(F, [2 / 3, 1 / 3], atol=1e-10)
    assert trace.converged and len(trace) == 200


@pytest.mark.parametrize("penalty", PENALTIES, ids=str)
def test_constant_signal_is_fixed(penalty):
    g = random_graph(15, 0.3, seed=1)
    Y = np.sqrt(g.degrees)[:, None] * np.array([[1.0, -2.0]])
    F, _ = solve(g, Y, penalty, SolverConfig(mu=0.5, T=20, warmup=0))
    assert np.allclose(F, Y, atol=1e-10)


@pytest.mark.parametrize("penalty", PENALTIES, ids=str)
def test_large_mu_returns_input(penalty):
    g = random_graph(20, 0.2, seed=3)
    Y = np.random.default_rng(0).normal(size=(20, 2))
    F, _ = solve(g, Y, penalty, SolverConfig(mu=1e8, T=5, warmup=0))
    assert np.linalg.norm(F - Y) / np.linalg.norm(Y) < 1e-6


@pytest.mark.parametrize("mu", [0.1, 1.0, 10.0])
def test_p2_matches_closed_form_and_spectral_bound(mu):
    g = random_graph(25, 0.15, seed=int(mu * 10), weighted=True)
    Y = np.random.default_rng(4).normal(size=(25, 3))
    F, trace = solve(g, Y, PenaltySpec("power", 2.0), SolverConfig(mu=mu, T=500, warmup=0, tol=1e-13))
    assert np.abs(F - closed_form_p2(g, Y, mu)).max() < 1e-6
    rho = np.abs(np.linalg.eigvals(iteration_matrix_p2(g, mu))).max()
    assert rho <= 1 / (1 + mu) + 1e-12


SMOOTH = [p for p in PENALTIES if p.p > 1]


@pytest.mark.parametrize("penalty", SMOOTH, ids=str)
def test_fixed_point_is_stationary(penalty):
    # central-difference gradient of the objective vanishes at the solver's limit
    g = random_graph(8, 0.4, seed=12, weighted=True)
    Y = np.random.default_rng(5).normal(size=(8, 2))
    cfg = SolverConfig(mu=1.0, T=1500, warmup=0, tol=1e-14)
    F, trace = solve(g, Y, penalty, cfg, record_objective=False)
    assert trace.converged
    assert fixed_point_residual(g, F, Y, penalty, cfg) < 1e-9
    grad = numeric_gradient(lambda Z: objective(g, Z, Y, penalty, cfg.mu), F)
    scale = numeric_gradient(lambda Z: cfg.mu * np.sum((Z - Y) ** 2), F)
    assert np.linalg.norm(grad) < 1e-5 * max(1.0, np.linalg.norm(scale))


def smoothed_minimum(g, Y, penalty, mu):
    """Independent minimizer: L-BFGS on edge norms sqrt(|delta|^2 + eta^2) with eta driven to 1e-7."""
    W = g.weights.toarray()
    d = W.sum(axis=1)
    I, J = np.nonzero(W)
    n, c = Y.shape
    isd = 1 / np.sqrt(d)

    def fun(z, eta):
        F = z.reshape(n, c)
        D = np.sqrt(W[I, J])[:, None] * (isd[J, None] * F[J] - isd[I, None] * F[I])
        N = np.bincount(I, np.sqrt((D**2).sum(1) + eta**2) ** penalty.p, n) ** (1 / penalty.p)
        return 0.5 * penalty.phi(N).sum() + mu * np.sum((F - Y) ** 2)

    z = Y.ravel()
    for eta in (1e-3, 1e-5, 1e-7):
        z = minimize(fun, z, args=(eta,), method="L-BFGS-B", options=dict(maxiter=20000, ftol=1e-15, gtol=1e-12)).x
    return z.reshape(n, c)


def _tv_case(epsilon):
    g = random_graph(8, 0.4, seed=12, weighted=True)
    Y = np.random.default_rng(5).normal(size=(8, 2))
    penalty = PenaltySpec("reg_tv", 1.0, epsilon)
    F, _ = solve(g, Y, penalty, SolverConfig(mu=1.0, T=3000, warmup=0, tol=1e-14), record_objective=False)
    ref = smoothed_minimum(g, Y, penalty, 1.0)
    return objective(g, F, Y, penalty, 1.0) - objective(g, ref, Y, penalty, 1.0)


def test_tv_p1_reaches_independent_minimum():
    assert abs(_tv_case(1.0)) < 1e-8


@pytest.mark.xfail(strict=True, reason="edges fused at the gradient floor receive weight ~1/floor and never separate")
def test_tv_p1_small_epsilon_reaches_minimum():
    assert abs(_tv_case(0.1)) < 1e-6


@pytest.mark.parametrize("penalty", PENALTIES, ids=str)
def test_solver_lowers_objective(penalty):
    g = random_graph(30, 0.15, seed=8)
    Y = np.random.default_rng(9).normal(size=(30, 2))
    F, trace = solve(g, Y, penalty, SolverConfig(mu=1.0, T=50, warmup=0))
    assert trace.objective[-1] < objective(g, Y, Y, penalty, 1.0)
    assert objective(g, F, Y, penalty, 1.0) == pytest.approx(trace.objective[-1])


def test_solve_directed_graph_finite():
    g = random_digraph(25, 0.1, seed=3)
    Y = np.random.default_rng(0).normal(size=25)
    F, _ = solve(g, Y, PenaltySpec("power", 1.5), SolverConfig(mu=1.0))
    assert F.shape == Y.shape and np.isfinite(F).all()


def test_solve_rejects_wrong_rows():
    with pytest.raises(ShapeError):
        solve(path_graph(3), np.ones(4), PenaltySpec(), SolverConfig())


def test_trace_csv(tmp_path):
    _, trace = solve(path_graph(3), np.array([1.0, 0.0, 0.0]), PenaltySpec(), SolverConfig(T=3, warmup=2))
    lines = trace.to_csv(tmp_path / "trace.csv").read_text().splitlines()
    assert lines[0] == "iteration,phase,objective,delta"
    assert len(lines) == 6
    assert lines[1].startswith("1,warmup,") and lines[-1].startswith("5,main,")


def test_warm_start_continues_the_iteration():
    g = random_graph(15, 0.3, seed=0)
    Y = np.random.default_rng(0).normal(size=(15, 2))
    pen = PenaltySpec("power", 1.5)
    whole, _ = solve(g, Y, pen, SolverConfig(T=20, warmup=0))
    half, _ = solve(g, Y, pen, SolverConfig(T=10, warmup=0))
    resumed, _ = solve(g, Y, pen, SolverConfig(T=10, warmup=0), init=half)
    assert np.array_equal(whole, resumed)
    with pytest.raises(ShapeError):
        solve(g, Y, pen, SolverConfig(), init=np.ones((15, 3)))


def test_p25_weak_fidelity_settles_into_two_cycle():
    # measured behaviour of the undamped iteration for p > 2: a period-2 orbit at mu = 1,
    # convergence once the fidelity weight grows
    rng = np.random.default_rng(404)
    draws = [(int(rng.integers(10, 41)), float(rng.uniform(0.05, 0.4))) for _ in range(2)]
    n, p_edge = draws[1]
    g = random_graph(n, p_edge, seed=[404, 1], weighted=True)
    Y = np.random.default_rng([404, 1]).normal(size=(n, 3))
    pen = PenaltySpec("power", 2.5)
    F, _ = solve(g, Y, pen, SolverConfig(mu=1.0, T=2000, warmup=0))
    F2, _ = solve(g, Y, pen, SolverConfig(mu=1.0, T=2, warmup=0), init=F)
    F1, _ = solve(g, Y, pen, SolverConfig(mu=1.0, T=1, warmup=0), init=F)
    assert np.linalg.norm(F2 - F) < 1e-10 * np.linalg.norm(F)
    assert np.linalg.norm(F1 - F) > 0.1 * np.linalg.norm(F)
    _, trace = solve(g, Y, pen, SolverConfig(mu=3.0, T=2000, warmup=0))
    assert trace.converged
