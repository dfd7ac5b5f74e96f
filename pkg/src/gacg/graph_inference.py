"""Coordination-graph inference.

Pipeline: encode observations with a shared MLP, score every agent pair with
scaled dot-product attention (the edge means), cluster trajectory windows
into groups, turn the partition into a rank-1 covariance factor over edges,
sample an edge vector from the resulting degenerate Gaussian, and normalize
it into an adjacency matrix for message passing.

The covariance never materializes: with factor v, a sample is
e = mu + z * v for a single z ~ N(0,1), which has exactly the law
N(mu, v v^T).  Storing z (instead of e) lets training rebuild the very graph
used at acting time while keeping gradients flowing through mu.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .clustering import kmeans
from .errors import ParameterError, ShapeError
from .params import ParameterSet, linear_init
from .rng import RngStream
from .tensor import Tensor

ENCODER_HIDDEN = 64

EDGE_MODES = ("gacg", "attention", "bernoulli", "inde_gaussian")


@dataclass(frozen=True)
class GroupPartition:
    labels: np.ndarray   # (n,) int, values in [0, m)
    m: int
    k: int               # window length that produced the clustering


@dataclass(frozen=True)
class EdgeDistribution:
    mean: Tensor             # (..., n^2) edge means, differentiable
    cov_factor: np.ndarray   # (n^2,) binary v with Sigma = v v^T


@dataclass(frozen=True)
class CoordinationGraph:
    c: Tensor        # (..., n, n) raw adjacency, entries in [0, 1], diag 1
    c_hat: Tensor    # (..., n, n) degree-normalized adjacency


def add_graph_parameters(params: ParameterSet, d_obs: int, d_h: int,
                         d_k: int, rng: RngStream) -> ParameterSet:
    """Register encoder and attention weights (shared across agents)."""
    params.add("encoder.w1", Tensor(linear_init(rng, d_obs, ENCODER_HIDDEN),
                                    requires_grad=True))
    params.add("encoder.b1", Tensor(np.zeros(ENCODER_HIDDEN), requires_grad=True))
    params.add("encoder.w2", Tensor(linear_init(rng, ENCODER_HIDDEN, d_h),
                                    requires_grad=True))
    params.add("encoder.b2", Tensor(np.zeros(d_h), requires_grad=True))
    params.add("attention.wq", Tensor(linear_init(rng, d_h, d_k),
                                      requires_grad=True))
    params.add("attention.wk", Tensor(linear_init(rng, d_h, d_k),
                                      requires_grad=True))
    return params


def encode_observations(obs, params: ParameterSet) -> Tensor:
    """Shared two-layer MLP per agent: d_obs -> 64 -> d_h.

    `obs` is (..., n, d_obs); leading axes batch over timesteps.  Hidden
    layer is ReLU, output layer linear.
    """
    x = obs if isinstance(obs, Tensor) else Tensor(obs)
    w1, b1 = params["encoder.w1"], params["encoder.b1"]
    if x.shape[-1] != w1.shape[0]:
        raise ShapeError(
            f"encode_observations: observation width {x.shape[-1]} does not "
            f"match encoder input {w1.shape[0]}")
    h = T.relu(x @ w1 + b1)
    return h @ params["encoder.w2"] + params["encoder.b2"]


def agent_pair_means(encoded: Tensor, params: ParameterSet) -> Tensor:
    """Symmetric matrix of edge means in (0,1) from pair attention.

    Scaled dot-product scores between per-agent queries and keys, squashed
    by a sigmoid, then symmetrized: mu <- (mu + mu^T) / 2.
    """
    wq, wk = params["attention.wq"], params["attention.wk"]
    q = encoded @ wq
    k = encoded @ wk
    scores = T.scale(q @ k.transpose_last2(), 1.0 / np.sqrt(wq.shape[1]))
    mu = T.sigmoid(scores)
    return T.scale(mu + mu.transpose_last2(), 0.5)


def divide_groups(windows: np.ndarray, m: int, rng: RngStream) -> GroupPartition:
    """Cluster agents by their recent observation windows.

    `windows` is (n, k, d_obs) or (n, k*d_obs); each agent is one point of
    dimension k*d_obs.  m must lie in [1, n]; m=0 (the no-group ablation)
    is handled upstream and never reaches here.
    """
    windows = np.asarray(windows, dtype=np.float64)
    n = windows.shape[0]
    if windows.ndim == 3:
        k = windows.shape[1]
        points = windows.reshape(n, -1)
    elif windows.ndim == 2:
        k = 1
        points = windows
    else:
        raise ShapeError(f"divide_groups: windows must be 2-d or 3-d, "
                         f"got shape {windows.shape}")
    if not (1 <= m <= n):
        raise ParameterError(f"group count {m} outside [1, {n}]")
    labels = kmeans(points, m, rng)
    return GroupPartition(labels=labels, m=m, k=k)


def agent_group_matrix(partition: GroupPartition) -> np.ndarray:
    """Binary same-group indicator: M_ij = 1 iff labels match (so M_ii = 1)."""
    labels = partition.labels
    return (labels[:, None] == labels[None, :]).astype(np.float64)


def edge_group_matrix(m_matrix: np.ndarray) -> np.ndarray:
    """Row-major vectorization v of the agent-group matrix.

    The full edge-group matrix is v v^T (see `edge_group_full`); only the
    factor is ever stored — the n^2 x n^2 object is O(n^4) for no benefit.
    """
    return np.asarray(m_matrix, dtype=np.float64).reshape(-1)


def edge_group_full(v: np.ndarray) -> np.ndarray:
    """Materialize v v^T (tests only)."""
    v = np.asarray(v, dtype=np.float64)
    return np.outer(v, v)


def edge_factors(partition: GroupPartition, covariance: str = "rank1"
                 ) -> np.ndarray:
    """Covariance factors as rows: Sigma = sum_r factors[r] factors[r]^T.

    rank1: the single vec(M) factor — every intra-group edge (even across
    distinct groups) shares one noise scalar.  block: one factor per group,
    so different groups get independent noise.
    """
    m_matrix = agent_group_matrix(partition)
    if covariance == "rank1":
        return edge_group_matrix(m_matrix)[None, :]
    if covariance == "block":
        rows = []
        for g in range(partition.m):
            ind = (partition.labels == g).astype(np.float64)
            rows.append(np.outer(ind, ind).reshape(-1))
        return np.stack(rows)
    raise ParameterError(f"unknown covariance form '{covariance}'")


def sample_edges(dist: EdgeDistribution, rng: RngStream) -> Tensor:
    """One exact draw from N(mean, v v^T) via e = mean + z * v."""
    z = rng.normal(1)
    return edges_from_noise(dist.mean, dist.cov_factor[None, :], z)


def edges_from_noise(mu_flat: Tensor, factors: np.ndarray,
                     z: np.ndarray) -> Tensor:
    """Rebuild e = mu + sum_r z[r] * factors[r] with fixed noise.

    Batched replay passes per-timestep factor stacks: mu_flat (..., n^2),
    z (..., R), factors either (R, n^2) shared or (..., R, n^2) per step.
    Differentiable in mu only; the noise term is a constant offset.
    """
    z = np.asarray(z, dtype=np.float64)
    if factors.ndim == 2:
        offset = z @ factors                                  # (..., n^2)
    else:
        offset = np.einsum("...r,...rn->...n", z, factors)
    return mu_flat + Tensor(offset)


def ablation_edge_source(mode: str, mu_flat: Tensor, factors: np.ndarray,
                         rng: RngStream | None, sigma2: float = 0.25,
                         noise: np.ndarray | None = None
                         ) -> tuple[Tensor, np.ndarray]:
    """Edge vector under each distribution variant, plus its stored noise.

    Passing `noise` back in replays the exact acting-time edges while
    keeping e differentiable in mu; passing None draws fresh noise from
    `rng`.  Stored forms: gacg -> factor coefficients; inde_gaussian ->
    per-edge standard normals; bernoulli -> the realized 0/1 edges
    (straight-through, so d e / d mu = I); attention -> empty.
    """
    if mode not in EDGE_MODES:
        raise ParameterError(f"unknown edge mode '{mode}'")
    n_sq = mu_flat.shape[-1]

    if mode == "attention":
        return mu_flat, np.zeros(0)

    if mode == "gacg":
        if noise is None:
            noise = rng.normal(factors.shape[0])
        return edges_from_noise(mu_flat, factors, noise), noise

    if mode == "inde_gaussian":
        if noise is None:
            noise = rng.normal(n_sq)
        return mu_flat + Tensor(np.sqrt(sigma2) * noise), noise

    # bernoulli: realized edges stored outright; mu + (e - mu).detach()
    # evaluates to e exactly but carries identity gradient into mu.
    if noise is None:
        u = rng.uniform(n_sq)
        noise = (u < mu_flat.data).astype(np.float64)
    return mu_flat + Tensor(noise - mu_flat.data), noise


def build_adjacency(e: Tensor, n: int) -> CoordinationGraph:
    """Edge vector -> normalized adjacency.

    Reshape row-major, clamp to [0,1], symmetrize, force the diagonal to 1
    (self-loops keep the degree matrix invertible), then degree-normalize:
    C_hat = D^{-1/2} C D^{-1/2} with D_ii the row sum of C.  Differentiable
    through the clamp subgradient and the degrees.
    """
    if e.shape[-1] != n * n:
        raise ShapeError(
            f"build_adjacency: edge vector length {e.shape[-1]} != {n}^2")
    c = e.reshape(e.shape[:-1] + (n, n))
    c = T.clamp01(c)
    c = T.scale(c + c.transpose_last2(), 0.5)
    eye = np.eye(n)
    c = c * (1.0 - eye) + eye
    degrees = c.sum(axis=-1, keepdims=True)            # (..., n, 1), >= 1
    inv_sqrt = T.pow_const(degrees, -0.5)
    c_hat = c * inv_sqrt * inv_sqrt.transpose_last2()
    return CoordinationGraph(c=c, c_hat=c_hat)
