"""Losses, replay, and the optimizer step.

The TD loss replays episodes with the *exact* coordination graphs used at
acting time: each step's group partition and sampled noise are stored in
the episode record, and the edge vector is rebuilt from the current means
plus that stored noise.  Gradients therefore flow through the means into
the encoder/attention weights without resampling variance.

The group objective is computed in two forms: the raw inter/intra distance
ratio for reporting, and its reciprocal (intra/inter) as the trained
regularizer — gradient descent on the reciprocal pulls same-group policies
together and pushes different groups apart.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .config import RunConfig
from .errors import ContractError, NumericsError
from .graph_inference import (GroupPartition, ablation_edge_source,
                              agent_pair_means, build_adjacency,
                              encode_observations)
from .params import ParameterSet
from .policy import agent_q_values, gnn_forward, mix, target_sync
from .rng import RngStream
from .tensor import Tensor

EPS = 1e-8


# -- episode storage --------------------------------------------------------

@dataclass
class EpisodeRecord:
    """One episode's trajectory plus everything needed to replay its graphs.

    obs and states have length T+1 (they include the terminal state);
    labels, noise, actions, rewards, dones have length T.  Windows are not
    stored — they are rebuilt from obs on demand.
    """
    obs: np.ndarray          # (T+1, n, d_obs)
    states: np.ndarray       # (T+1, d_state)
    labels: np.ndarray       # (T, n) acting-time group labels (zeros if m=0)
    noise: np.ndarray        # (T, R) stored edge noise (R=0 for attention)
    actions: np.ndarray      # (T, n)
    rewards: np.ndarray      # (T,)
    dones: np.ndarray        # (T,) bool
    group_m: int
    window_k: int

    @property
    def length(self) -> int:
        return len(self.rewards)

    def validate(self):
        t_len = self.length
        if self.obs.shape[0] != t_len + 1 or self.states.shape[0] != t_len + 1:
            raise ContractError("episode obs/states must cover T+1 states")
        for name in ("labels", "noise", "actions", "dones"):
            if getattr(self, name).shape[0] != t_len:
                raise ContractError(f"episode field {name} must have length T")
        if t_len and (self.dones[:-1].any() or not self.dones[-1]):
            raise ContractError("terminal flag must appear exactly at the last step")


def observation_windows(obs: np.ndarray, k: int) -> np.ndarray:
    """Stack the last k observations (zero-padded at the front) per step.

    obs (T+1, n, d) -> (T+1, n, k*d), oldest to newest within each window;
    the window at step t always includes obs[t] itself.
    """
    t1, n, d = obs.shape
    win = np.zeros((t1, n, k * d))
    for j in range(k):
        shift = k - 1 - j                                    # slot j lags by shift
        if shift >= t1:
            continue                                         # episode shorter than lag
        win[shift:, :, j * d:(j + 1) * d] = obs[:t1 - shift]
    return win


def window_at(obs_so_far: list, k: int) -> np.ndarray:
    """Window ending at the latest observation in a growing episode."""
    tail = obs_so_far[-k:]
    n, d = tail[0].shape
    if len(tail) < k:
        tail = [np.zeros((n, d))] * (k - len(tail)) + list(tail)
    return np.stack(tail, axis=1).reshape(n, k * d)


class ReplayBuffer:
    """FIFO episode store with uniform without-replacement sampling."""

    def __init__(self, capacity: int):
        self.capacity = capacity
        self._episodes: deque = deque(maxlen=capacity)

    def __len__(self):
        return len(self._episodes)

    def episodes(self) -> list:
        """Current contents, oldest first."""
        return list(self._episodes)

    def push(self, episode: EpisodeRecord):
        episode.validate()
        self._episodes.append(episode)

    def sample(self, batch_size: int, rng: RngStream) -> list:
        if batch_size > len(self._episodes):
            raise ContractError(
                f"cannot sample {batch_size} episodes from {len(self._episodes)}")
        idx = rng.choice_without_replacement(len(self._episodes), batch_size)
        return [self._episodes[int(i)] for i in idx]


# -- group objective --------------------------------------------------------

def _policy_distance_matrix(pi: Tensor) -> Tensor:
    """Pairwise L2 distances between agents' action distributions.

    pi (..., n, A) -> (..., n, n); the diagonal is exactly 0.
    """
    shape = pi.shape
    n, n_act = shape[-2], shape[-1]
    a = pi.reshape(shape[:-2] + (n, 1, n_act))
    b = pi.reshape(shape[:-2] + (1, n, n_act))
    d = a - b
    return T.pow_const((d * d).sum(axis=-1), 0.5)


def _group_weights(labels: np.ndarray, m: int) -> tuple[np.ndarray, np.ndarray]:
    """Constant weight matrices that turn the distance matrix into the
    numerator (cross-group) and denominator (same-group) of the distance
    ratio.  labels (..., n) -> two (..., n, n) arrays.

    Cross term: each ordered cross-group agent pair weighs
    1 / ((m-1)^2 |g_a| |g_b|); same term: 1 / (m |g_a|^2), self-pairs
    included (they contribute distance 0).
    """
    same = labels[..., :, None] == labels[..., None, :]
    sizes = same.sum(axis=-1).astype(np.float64)             # (..., n)
    outer = sizes[..., :, None] * sizes[..., None, :]
    if m > 1:
        w_num = (~same) / outer / float((m - 1) ** 2)
    else:
        w_num = np.zeros_like(outer)
    w_den = same / (m * sizes[..., :, None] ** 2)
    return w_num, w_den


def group_terms(pi: Tensor, labels: np.ndarray, m: int) -> tuple[Tensor, Tensor]:
    """Per-step (numerator, denominator) of the group distance ratio.

    pi (..., n, A) with labels (..., n) -> two (...,) tensors.
    """
    w_num, w_den = _group_weights(np.asarray(labels), m)
    dist = _policy_distance_matrix(pi)
    num = (dist * w_num).sum(axis=(-1, -2))
    den = (dist * w_den).sum(axis=(-1, -2))
    return num, den


def group_distance_loss(pi, partition: GroupPartition) -> Tensor:
    """Inter/intra distance ratio (the reported form; not descended)."""
    pi = pi if isinstance(pi, Tensor) else Tensor(pi)
    if partition.m == 1:
        return Tensor(0.0)
    num, den = group_terms(pi, partition.labels, partition.m)
    return num / T.clamp_min(den, EPS)


def group_regularizer(pi, partition: GroupPartition) -> Tensor:
    """Intra/(inter+eps) — the form the optimizer actually descends.

    Minimizing it contracts same-group policies and separates groups.
    Zero when there is only one group (nothing to separate).
    """
    pi = pi if isinstance(pi, Tensor) else Tensor(pi)
    if partition.m == 1:
        return Tensor(0.0)
    num, den = group_terms(pi, partition.labels, partition.m)
    return den / (num + EPS)


# -- batched forward over stored transitions --------------------------------

@dataclass
class TransitionBatch:
    """Flat arrays over all transitions of the sampled episodes."""
    obs_t: np.ndarray        # (B, n, d_obs)
    obs_tp1: np.ndarray
    win_t: np.ndarray        # (B, n, k*d_obs)
    win_tp1: np.ndarray
    state_t: np.ndarray      # (B, d_state)
    state_tp1: np.ndarray
    labels_t: np.ndarray     # (B, n)
    labels_tp1: np.ndarray
    noise_t: np.ndarray      # (B, R)
    noise_tp1: np.ndarray
    actions: np.ndarray      # (B, n)
    rewards: np.ndarray      # (B,)
    dones: np.ndarray        # (B,) float (1.0 at terminal)

    @property
    def size(self) -> int:
        return len(self.rewards)


def assemble_batch(episodes: list, cfg: RunConfig) -> TransitionBatch:
    if not episodes:
        raise ContractError("empty episode batch")
    k = cfg.group.k
    parts = {name: [] for name in ("obs_t", "obs_tp1", "win_t", "win_tp1",
                                   "state_t", "state_tp1", "labels_t",
                                   "labels_tp1", "noise_t", "noise_tp1",
                                   "actions", "rewards", "dones")}
    for ep in episodes:
        wins = observation_windows(ep.obs, k)
        parts["obs_t"].append(ep.obs[:-1])
        parts["obs_tp1"].append(ep.obs[1:])
        parts["win_t"].append(wins[:-1])
        parts["win_tp1"].append(wins[1:])
        parts["state_t"].append(ep.states[:-1])
        parts["state_tp1"].append(ep.states[1:])
        parts["labels_t"].append(ep.labels)
        # next-step graph data; the final transition bootstraps nothing, so
        # its slot just repeats the last acting step as a placeholder
        parts["labels_tp1"].append(np.concatenate([ep.labels[1:], ep.labels[-1:]]))
        parts["noise_t"].append(ep.noise)
        parts["noise_tp1"].append(np.concatenate([ep.noise[1:], ep.noise[-1:]]))
        parts["actions"].append(ep.actions)
        parts["rewards"].append(ep.rewards)
        parts["dones"].append(ep.dones.astype(np.float64))
    return TransitionBatch(**{name: np.concatenate(vals)
                              for name, vals in parts.items()})


def _batch_factors(labels: np.ndarray, m: int, covariance: str) -> np.ndarray:
    """Per-step covariance factors, (B, R, n^2), from label rows."""
    b, n = labels.shape
    same = (labels[:, :, None] == labels[:, None, :]).astype(np.float64)
    if covariance == "rank1":
        return same.reshape(b, 1, n * n)
    rows = []
    for g in range(m):
        ind = (labels == g).astype(np.float64)               # (B, n)
        rows.append(np.einsum("bi,bj->bij", ind, ind).reshape(b, n * n))
    return np.stack(rows, axis=1)


def forward_graph_q(obs: np.ndarray, windows: np.ndarray,
                    labels: np.ndarray, noise: np.ndarray,
                    params: ParameterSet, cfg: RunConfig):
    """Full differentiable pipeline for a batch of timesteps.

    Returns (q_output, graph, encoded).  Edges come from the stored noise,
    so this reproduces acting-time graphs exactly under the current means.
    """
    n = cfg.env.n_agents
    enc = encode_observations(obs, params)
    mu = agent_pair_means(enc, params)
    mu_flat = mu.reshape(mu.shape[:-2] + (n * n,))

    mode = "attention" if cfg.group.m == 0 else cfg.graph.mode
    factors = (_batch_factors(labels, cfg.group.m, cfg.graph.covariance)
               if mode == "gacg" else None)
    e, _ = ablation_edge_source(mode, mu_flat, factors, None,
                                sigma2=cfg.graph.sigma2, noise=noise)
    graph = build_adjacency(e, n)
    msgs = gnn_forward(graph, enc, params, cfg.model.gnn_layers)
    q_out = agent_q_values(windows, msgs.messages, params)
    return q_out, graph, msgs


def td_targets(batch: TransitionBatch, target: ParameterSet,
               cfg: RunConfig) -> np.ndarray:
    """y = r + gamma * (1 - done) * Q_tot' with per-agent greedy actions."""
    with T.no_grad():
        q_out, _, _ = forward_graph_q(batch.obs_tp1, batch.win_tp1,
                                      batch.labels_tp1, batch.noise_tp1,
                                      target, cfg)
        greedy = q_out.q.data.argmax(axis=-1)                # (B, n)
        q_max = T.gather_last(q_out.q, greedy)               # (B, n)
        q_tot = mix(q_max, Tensor(batch.state_tp1), target).q_tot.data
    return batch.rewards + cfg.train.gamma * (1.0 - batch.dones) * q_tot


def td_loss(episodes: list, online: ParameterSet, target: ParameterSet,
            cfg: RunConfig) -> Tensor:
    """Mean squared TD error over all transitions of the given episodes."""
    batch = assemble_batch(episodes, cfg)
    q_out, _, _ = forward_graph_q(batch.obs_t, batch.win_t, batch.labels_t,
                                  batch.noise_t, online, cfg)
    q_chosen = T.gather_last(q_out.q, batch.actions)
    q_tot = mix(q_chosen, Tensor(batch.state_t), online).q_tot
    y = td_targets(batch, target, cfg)
    delta = q_tot - Tensor(y)
    return (delta * delta).mean()


@dataclass
class LossReport:
    total: float
    td: float
    group_raw: float     # inter/intra ratio, reporting only
    group_reg: float     # intra/inter, the trained term
    lambda_: float


def total_loss(td: float, group_reg: float, lambda_: float,
               group_raw: float = 0.0) -> LossReport:
    """Combine components into the report; total = td + lambda * reg."""
    return LossReport(total=td + lambda_ * group_reg, td=td,
                      group_raw=group_raw, group_reg=group_reg,
                      lambda_=lambda_)


# -- optimizer --------------------------------------------------------------

@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0

    @classmethod
    def for_params(cls, params: ParameterSet) -> "AdamState":
        state = cls()
        for name, p in params.items():
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        return state


def optimizer_step(params: ParameterSet, state: AdamState, lr: float,
                   beta1: float = 0.9, beta2: float = 0.999,
                   eps: float = 1e-8, clip: float = 10.0) -> float:
    """Adam update after global-norm gradient clipping; returns the norm."""
    grads = {}
    sq_sum = 0.0
    for name, p in params.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if not np.all(np.isfinite(g)):
            raise NumericsError(f"non-finite gradient in parameter '{name}'")
        grads[name] = g
        sq_sum += float(np.sum(g * g))
    norm = float(np.sqrt(sq_sum))
    scale = clip / norm if norm > clip else 1.0

    state.t += 1
    bc1 = 1.0 - beta1 ** state.t
    bc2 = 1.0 - beta2 ** state.t
    for name, p in params.items():
        g = grads[name] * scale
        state.m[name] = beta1 * state.m[name] + (1.0 - beta1) * g
        state.v[name] = beta2 * state.v[name] + (1.0 - beta2) * g * g
        m_hat = state.m[name] / bc1
        v_hat = state.v[name] / bc2
        p.data -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return norm


# -- the composed training step ---------------------------------------------

@dataclass
class TrainState:
    adam: AdamState
    train_steps: int = 0


def train_step(buffer: ReplayBuffer, online: ParameterSet,
               target: ParameterSet, cfg: RunConfig, rng: RngStream,
               state: TrainState) -> LossReport:
    """One optimization step: sample, replay graphs, descend, maybe sync."""
    episodes = buffer.sample(cfg.train.batch_episodes, rng)
    batch = assemble_batch(episodes, cfg)

    q_out, _, msgs = forward_graph_q(batch.obs_t, batch.win_t, batch.labels_t,
                                     batch.noise_t, online, cfg)
    q_chosen = T.gather_last(q_out.q, batch.actions)
    q_tot = mix(q_chosen, Tensor(batch.state_t), online).q_tot
    y = td_targets(batch, target, cfg)
    delta = q_tot - Tensor(y)
    td = (delta * delta).mean()

    lambda_eff = 0.0 if cfg.group.m == 0 else cfg.train.lambda_
    group_raw_val = 0.0
    group_reg_val = 0.0
    reg_term = None
    if cfg.group.m >= 1:
        if cfg.train.group_loss_scope == "policy_only":
            pi = agent_q_values(batch.win_t, msgs.messages.detach(),
                                online).pi
        else:
            pi = q_out.pi
        num, den = group_terms(pi, batch.labels_t, cfg.group.m)
        if cfg.group.m > 1:
            reg_term = (den / (num + EPS)).mean()
            with T.no_grad():
                raw = (num / T.clamp_min(den, EPS)).mean()
            group_raw_val = float(raw.data)
            group_reg_val = float(reg_term.data)

    if lambda_eff > 0.0 and reg_term is not None:
        total = td + T.scale(reg_term, lambda_eff)
    else:
        total = td
    online.zero_grad()
    T.backward(total)
    optimizer_step(online, state.adam, cfg.train.lr, clip=cfg.train.grad_clip)
    state.train_steps += 1
    if state.train_steps % cfg.train.target_period == 0:
        target_sync(online, target)

    td_val = float(td.data)
    return LossReport(total=td_val + lambda_eff * group_reg_val, td=td_val,
                      group_raw=group_raw_val, group_reg=group_reg_val,
                      lambda_=lambda_eff)
