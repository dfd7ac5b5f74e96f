"""Oracles for the coordination-graph inference pipeline."""
import numpy as np
import pytest

from gacg import tensor as T
from gacg.errors import ParameterError, ShapeError
from gacg.graph_inference import (
    EDGE_MODES,
    EdgeDistribution,
    GroupPartition,
    ablation_edge_source,
    add_graph_parameters,
    agent_group_matrix,
    agent_pair_means,
    build_adjacency,
    divide_groups,
    edge_factors,
    edge_group_full,
    edge_group_matrix,
    edges_from_noise,
    encode_observations,
    sample_edges,
)
from gacg.params import ParameterSet
from gacg.rng import RngStream
from gacg.tensor import Tensor

D_OBS, D_H, D_K = 6, 8, 4


def make_params(seed: int = 0) -> ParameterSet:
    params = ParameterSet()
    return add_graph_parameters(params, D_OBS, D_H, D_K, RngStream(seed, 0))


# ---------------------------------------------------------------- encoder

def test_encoder_zero_input_zero_output():
    # biases start at zero, so the all-zero observation encodes to zero
    params = make_params()
    out = encode_observations(np.zeros((3, D_OBS)), params)
    assert out.shape == (3, D_H)
    np.testing.assert_array_equal(out.data, 0.0)


def test_encoder_permutation_equivariant():
    params = make_params(1)
    obs = RngStream(2, 0).normal((5, D_OBS))
    perm = np.array([3, 0, 4, 1, 2])
    direct = encode_observations(obs[perm], params).data
    permuted = encode_observations(obs, params).data[perm]
    np.testing.assert_allclose(direct, permuted, rtol=0, atol=1e-12)


def test_encoder_batch_axis_matches_per_step():
    params = make_params(3)
    obs = RngStream(4, 0).normal((7, 3, D_OBS))
    batched = encode_observations(obs, params).data
    for t in range(7):
        single = encode_observations(obs[t], params).data
        np.testing.assert_allclose(batched[t], single, rtol=0, atol=1e-12)


def test_encoder_rejects_wrong_width():
    params = make_params()
    with pytest.raises(ShapeError):
        encode_observations(np.zeros((3, D_OBS + 1)), params)


# ------------------------------------------------------------- pair means

def test_pair_means_symmetric_in_unit_interval():
    params = make_params(5)
    enc = encode_observations(RngStream(6, 0).normal((4, D_OBS)), params)
    mu = agent_pair_means(enc, params).data
    assert mu.shape == (4, 4)
    np.testing.assert_allclose(mu, mu.T, rtol=0, atol=1e-15)
    assert np.all(mu > 0.0) and np.all(mu < 1.0)


def test_pair_means_zero_attention_gives_half():
    params = make_params(7)
    params["attention.wq"].data[:] = 0.0
    params["attention.wk"].data[:] = 0.0
    enc = encode_observations(RngStream(8, 0).normal((3, D_OBS)), params)
    mu = agent_pair_means(enc, params).data
    np.testing.assert_array_equal(mu, 0.5)


def test_pair_means_identical_agents_constant():
    params = make_params(9)
    enc = encode_observations(np.tile(RngStream(10, 0).normal(D_OBS), (4, 1)),
                              params)
    mu = agent_pair_means(enc, params).data
    np.testing.assert_allclose(mu, mu[0, 0], rtol=0, atol=1e-12)


# ----------------------------------------------------------- group divide

def test_divide_groups_two_obvious_clusters():
    rng = RngStream(11, 0)
    windows = np.vstack([np.zeros((3, 8)), 50.0 + rng.normal((3, 8))])
    part = divide_groups(windows, 2, rng)
    assert isinstance(part, GroupPartition)
    assert part.m == 2 and part.k == 1
    assert len(set(part.labels[:3])) == 1
    assert len(set(part.labels[3:])) == 1
    assert part.labels[0] != part.labels[3]


def test_divide_groups_three_d_windows_flatten():
    rng = RngStream(12, 0)
    win3 = rng.normal((4, 5, 3))
    a = divide_groups(win3, 2, RngStream(13, 0))
    b = divide_groups(win3.reshape(4, 15), 2, RngStream(13, 0))
    np.testing.assert_array_equal(a.labels, b.labels)
    assert a.k == 5 and b.k == 1


def test_divide_groups_m_equals_n_singletons():
    rng = RngStream(14, 0)
    part = divide_groups(10.0 * rng.normal((5, 4)), 5, rng)
    assert sorted(part.labels) == [0, 1, 2, 3, 4]


def test_divide_groups_bounds_and_shape_errors():
    rng = RngStream(15, 0)
    win = np.zeros((4, 6))
    with pytest.raises(ParameterError):
        divide_groups(win, 0, rng)
    with pytest.raises(ParameterError):
        divide_groups(win, 5, rng)
    with pytest.raises(ShapeError):
        divide_groups(np.zeros(6), 1, rng)
    with pytest.raises(ShapeError):
        divide_groups(np.zeros((2, 2, 2, 2)), 1, rng)


# ---------------------------------------------------------- group matrices

def test_agent_group_matrix_hand_case():
    part = GroupPartition(labels=np.array([0, 0, 1]), m=2, k=1)
    expected = np.array([[1.0, 1.0, 0.0],
                         [1.0, 1.0, 0.0],
                         [0.0, 0.0, 1.0]])
    np.testing.assert_array_equal(agent_group_matrix(part), expected)


def test_edge_group_vector_single_group():
    part = GroupPartition(labels=np.array([0, 0]), m=1, k=1)
    v = edge_group_matrix(agent_group_matrix(part))
    np.testing.assert_array_equal(v, [1.0, 1.0, 1.0, 1.0])


def test_edge_group_vector_singletons():
    part = GroupPartition(labels=np.array([0, 1]), m=2, k=1)
    v = edge_group_matrix(agent_group_matrix(part))
    np.testing.assert_array_equal(v, [1.0, 0.0, 0.0, 1.0])


def test_edge_group_full_matches_elementwise_definition():
    rng = RngStream(16, 0)
    for _ in range(10):
        n = int(rng.integers(2, 6))
        m = int(rng.integers(1, n + 1))
        labels = rng.integers(0, m, size=n)
        mat = agent_group_matrix(GroupPartition(labels=labels, m=m, k=1))
        full = edge_group_full(edge_group_matrix(mat))
        assert full.shape == (n * n, n * n)
        for a in range(n * n):
            for b in range(n * n):
                i, j = divmod(a, n)
                p, q = divmod(b, n)
                assert full[a, b] == mat[i, j] * mat[p, q]


def test_edge_factors_rank1_is_group_vector():
    part = GroupPartition(labels=np.array([0, 1, 0]), m=2, k=1)
    factors = edge_factors(part, "rank1")
    assert factors.shape == (1, 9)
    np.testing.assert_array_equal(
        factors[0], edge_group_matrix(agent_group_matrix(part)))


def test_edge_factors_block_rows_sum_to_group_matrix():
    # per-group factors partition the intra-group support
    part = GroupPartition(labels=np.array([0, 1, 0, 2, 1]), m=3, k=1)
    factors = edge_factors(part, "block")
    assert factors.shape == (3, 25)
    np.testing.assert_array_equal(
        factors.sum(axis=0),
        edge_group_matrix(agent_group_matrix(part)))


def test_edge_factors_unknown_form():
    part = GroupPartition(labels=np.array([0]), m=1, k=1)
    with pytest.raises(ParameterError):
        edge_factors(part, "full")


# ----------------------------------------------------------- edge sampling

def test_sample_edges_rank1_residual_structure():
    mu = Tensor(np.linspace(0.1, 0.9, 9))
    v = edge_group_matrix(agent_group_matrix(
        GroupPartition(labels=np.array([0, 0, 1]), m=2, k=1)))
    dist = EdgeDistribution(mean=mu, cov_factor=v)
    e = sample_edges(dist, RngStream(17, 0)).data
    resid = e - mu.data
    on = resid[v == 1.0]
    np.testing.assert_array_equal(resid[v == 0.0], 0.0)
    # every supported edge shares the single noise scalar exactly
    assert np.all(on == on[0])
    assert on[0] != 0.0


def test_sample_edges_zero_factor_returns_mean():
    mu = Tensor(np.full(4, 0.3))
    dist = EdgeDistribution(mean=mu, cov_factor=np.zeros(4))
    e = sample_edges(dist, RngStream(18, 0)).data
    np.testing.assert_array_equal(e, mu.data)


def test_sample_edges_deterministic():
    mu = Tensor(np.full(9, 0.5))
    v = np.ones(9)
    dist = EdgeDistribution(mean=mu, cov_factor=v)
    a = sample_edges(dist, RngStream(19, 3)).data
    b = sample_edges(dist, RngStream(19, 3)).data
    np.testing.assert_array_equal(a, b)


def test_sample_edges_moments():
    mu_val = np.linspace(0.2, 0.8, 9)
    v = edge_group_matrix(agent_group_matrix(
        GroupPartition(labels=np.array([0, 1, 0]), m=2, k=1)))
    dist = EdgeDistribution(mean=Tensor(mu_val), cov_factor=v)
    rng = RngStream(20, 0)
    draws = np.stack([sample_edges(dist, rng).data for _ in range(4000)])
    np.testing.assert_allclose(draws.mean(axis=0), mu_val, rtol=0, atol=0.05)
    cov = np.cov(draws.T)
    np.testing.assert_allclose(cov, np.outer(v, v), rtol=0, atol=0.08)


def test_edges_from_noise_replays_bit_identically():
    mu = Tensor(np.linspace(0.0, 1.0, 9))
    factors = np.vstack([np.ones(9), np.eye(9)[0]])
    z = RngStream(21, 0).normal(2)
    a = edges_from_noise(mu, factors, z).data
    b = edges_from_noise(mu, factors, z).data
    np.testing.assert_array_equal(a, b)
    np.testing.assert_allclose(
        a, mu.data + z[0] * factors[0] + z[1] * factors[1],
        rtol=0, atol=1e-15)


def test_edges_from_noise_batched_factors_match_per_step():
    rng = RngStream(22, 0)
    mu = Tensor(rng.normal((5, 9)))
    factors = rng.normal((5, 2, 9))
    z = rng.normal((5, 2))
    batched = edges_from_noise(mu, factors, z).data
    for t in range(5):
        row = edges_from_noise(Tensor(mu.data[t]), factors[t], z[t]).data
        np.testing.assert_allclose(batched[t], row, rtol=0, atol=1e-12)


def test_edges_from_noise_gradient_hits_mean_only():
    mu = Tensor(np.full(4, 0.5), requires_grad=True)
    e = edges_from_noise(mu, np.ones((1, 4)), np.array([2.0]))
    T.backward(e.sum())
    np.testing.assert_array_equal(mu.grad, np.ones(4))


# --------------------------------------------------------- ablation modes

def test_ablation_mode_list():
    assert EDGE_MODES == ("gacg", "attention", "bernoulli", "inde_gaussian")
    with pytest.raises(ParameterError):
        ablation_edge_source("mean_field", Tensor(np.zeros(4)),
                             np.ones((1, 4)), RngStream(0, 0))


def test_ablation_attention_is_deterministic_mean():
    mu = Tensor(np.linspace(0.1, 0.4, 4))
    e, noise = ablation_edge_source("attention", mu, np.ones((1, 4)), None)
    assert e is mu
    assert noise.shape == (0,)


def test_ablation_gacg_replay():
    mu = Tensor(np.full(9, 0.5))
    factors = np.ones((1, 9))
    e1, noise = ablation_edge_source("gacg", mu, factors, RngStream(23, 0))
    assert noise.shape == (1,)
    e2, noise2 = ablation_edge_source("gacg", mu, factors, None, noise=noise)
    np.testing.assert_array_equal(e1.data, e2.data)
    np.testing.assert_array_equal(noise, noise2)


def test_ablation_bernoulli_extremes_and_straight_through():
    ones = Tensor(np.ones(4), requires_grad=True)
    e, noise = ablation_edge_source("bernoulli", ones, np.ones((1, 4)),
                                    RngStream(24, 0))
    np.testing.assert_array_equal(e.data, 1.0)
    np.testing.assert_array_equal(noise, 1.0)
    T.backward(e.sum())
    np.testing.assert_array_equal(ones.grad, np.ones(4))

    zeros = Tensor(np.zeros(4))
    e0, n0 = ablation_edge_source("bernoulli", zeros, np.ones((1, 4)),
                                  RngStream(25, 0))
    np.testing.assert_array_equal(e0.data, 0.0)
    np.testing.assert_array_equal(n0, 0.0)


def test_ablation_bernoulli_replay_and_realized_values():
    mu = Tensor(np.full(16, 0.5))
    e1, noise = ablation_edge_source("bernoulli", mu, np.ones((1, 16)),
                                     RngStream(26, 0))
    assert set(np.unique(noise)) <= {0.0, 1.0}
    np.testing.assert_array_equal(e1.data, noise)
    e2, _ = ablation_edge_source("bernoulli", mu, np.ones((1, 16)), None,
                                 noise=noise)
    np.testing.assert_array_equal(e1.data, e2.data)


def test_ablation_inde_gaussian_variance_and_independence():
    mu_val = np.full(9, 0.5)
    rng = RngStream(27, 0)
    draws = np.stack([
        ablation_edge_source("inde_gaussian", Tensor(mu_val),
                             np.ones((1, 9)), rng)[0].data
        for _ in range(4000)])
    np.testing.assert_allclose(draws.mean(axis=0), mu_val, rtol=0, atol=0.05)
    np.testing.assert_allclose(draws.var(axis=0), 0.25, rtol=0, atol=0.05)
    corr = np.corrcoef(draws.T)
    off = corr[~np.eye(9, dtype=bool)]
    assert np.max(np.abs(off)) < 0.08


def test_ablation_inde_gaussian_replay_and_sigma():
    mu = Tensor(np.zeros(4))
    e1, noise = ablation_edge_source("inde_gaussian", mu, np.ones((1, 4)),
                                     RngStream(28, 0), sigma2=0.04)
    np.testing.assert_allclose(e1.data, 0.2 * noise, rtol=0, atol=1e-15)
    e2, _ = ablation_edge_source("inde_gaussian", mu, np.ones((1, 4)), None,
                                 sigma2=0.04, noise=noise)
    np.testing.assert_array_equal(e1.data, e2.data)


# -------------------------------------------------------------- adjacency

def test_adjacency_identity_edges():
    e = Tensor(np.eye(3).reshape(-1))
    graph = build_adjacency(e, 3)
    np.testing.assert_array_equal(graph.c.data, np.eye(3))
    np.testing.assert_array_equal(graph.c_hat.data, np.eye(3))


def test_adjacency_all_ones_two_agents():
    graph = build_adjacency(Tensor(np.ones(4)), 2)
    np.testing.assert_array_equal(graph.c.data, np.ones((2, 2)))
    np.testing.assert_allclose(graph.c_hat.data, 0.5, rtol=0, atol=1e-15)


def test_adjacency_clamps_symmetrizes_forces_diagonal():
    e = Tensor(np.array([-1.0, 3.0, 0.4, 0.2]))
    graph = build_adjacency(e, 2)
    c = graph.c.data
    assert c[0, 0] == 1.0 and c[1, 1] == 1.0
    # off-diagonals average the clamped pair: (1.0 + 0.4) / 2
    np.testing.assert_allclose(c[0, 1], 0.7, rtol=0, atol=1e-15)
    assert c[0, 1] == c[1, 0]


def test_adjacency_symmetry_random():
    rng = RngStream(29, 0)
    e = Tensor(rng.uniform(25))
    graph = build_adjacency(e, 5)
    np.testing.assert_allclose(graph.c.data, graph.c.data.T,
                               rtol=0, atol=1e-15)
    np.testing.assert_allclose(graph.c_hat.data, graph.c_hat.data.T,
                               rtol=0, atol=1e-12)


def test_adjacency_rows_normalized_by_degree():
    rng = RngStream(30, 0)
    e = Tensor(rng.uniform(16))
    graph = build_adjacency(e, 4)
    c = graph.c.data
    d = c.sum(axis=1)
    expected = c / np.sqrt(np.outer(d, d))
    np.testing.assert_allclose(graph.c_hat.data, expected, rtol=0, atol=1e-12)


def test_adjacency_batched_matches_per_row():
    rng = RngStream(31, 0)
    e = rng.uniform((6, 9))
    batched = build_adjacency(Tensor(e), 3)
    for t in range(6):
        single = build_adjacency(Tensor(e[t]), 3)
        np.testing.assert_allclose(batched.c_hat.data[t], single.c_hat.data,
                                   rtol=0, atol=1e-14)


def test_adjacency_wrong_length():
    with pytest.raises(ShapeError):
        build_adjacency(Tensor(np.zeros(8)), 3)


def test_adjacency_gradient_matches_finite_differences():
    rng = RngStream(32, 0)
    e0 = 0.2 + 0.6 * rng.uniform(9)         # keep clear of the clamp kinks
    w = rng.normal((3, 3))

    def f(vec: np.ndarray) -> float:
        with T.no_grad():
            return float((build_adjacency(Tensor(vec), 3).c_hat
                          * Tensor(w)).sum().item())

    e = Tensor(e0.copy(), requires_grad=True)
    T.backward((build_adjacency(e, 3).c_hat * Tensor(w)).sum())
    eps = 1e-6
    for i in range(9):
        up, dn = e0.copy(), e0.copy()
        up[i] += eps
        dn[i] -= eps
        fd = (f(up) - f(dn)) / (2 * eps)
        assert abs(fd - e.grad[i]) < 1e-5


# ------------------------------------------------- full pipeline smoke run

def test_pipeline_end_to_end_shapes():
    params = make_params(33)
    rng = RngStream(34, 0)
    obs = rng.normal((4, D_OBS))
    enc = encode_observations(obs, params)
    mu = agent_pair_means(enc, params)
    part = divide_groups(rng.normal((4, 2, D_OBS)), 2, rng)
    factors = edge_factors(part)
    dist = EdgeDistribution(mean=mu.reshape((16,)), cov_factor=factors[0])
    e = sample_edges(dist, rng)
    graph = build_adjacency(e, 4)
    assert graph.c.shape == (4, 4)
    assert graph.c_hat.shape == (4, 4)
    assert np.all(graph.c.data >= 0.0) and np.all(graph.c.data <= 1.0)
    np.testing.assert_array_equal(np.diag(graph.c.data), 1.0)
