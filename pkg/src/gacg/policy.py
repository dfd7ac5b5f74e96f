"""Message passing, per-agent Q heads, action selection, and the mixer.

The GNN spreads encoded observations along the sampled coordination graph;
each agent's Q head reads its own recent-observation window plus its
message; chosen Q values are combined into Q_tot by a QMIX-style mixer
whose state-conditioned weights pass through abs(), making Q_tot monotone
in every agent's Q.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .config import N_ACTIONS, RunConfig
from .graph_inference import CoordinationGraph, add_graph_parameters
from .params import ParameterSet, linear_init
from .rng import RngStream
from .tensor import Tensor

QHEAD_HIDDEN = 64


@dataclass(frozen=True)
class MessageBatch:
    layers: tuple       # H_0 .. H_L, each (..., n, d_h)

    @property
    def messages(self) -> Tensor:
        return self.layers[-1]


@dataclass(frozen=True)
class AgentQOutput:
    q: Tensor           # (..., n, n_actions)
    pi: Tensor          # softmax(q), rows sum to 1


@dataclass(frozen=True)
class MixerOutput:
    q_tot: Tensor       # (...,) scalar per batch entry
    hidden: Tensor      # (..., 1, embed) mixing-layer activations


def build_parameters(cfg: RunConfig, rng: RngStream) -> ParameterSet:
    """All learnable weights, registered under stable lexicographic names."""
    p = ParameterSet()
    d_h, d_k = cfg.model.d_h, cfg.model.d_k
    add_graph_parameters(p, cfg.env.obs_dim, d_h, d_k, rng)

    for layer in range(cfg.model.gnn_layers):
        p.add(f"gnn.w{layer}", Tensor(linear_init(rng, d_h, d_h),
                                      requires_grad=True))

    # first layer is stored as two horizontal blocks of one logical
    # (k*d_obs + d_h, hidden) matrix: the window block never needs an
    # input gradient, so splitting skips both the concat buffer and the
    # dead half of the backward GEMM
    q_in = cfg.group.k * cfg.env.obs_dim + d_h
    w1 = linear_init(rng, q_in, QHEAD_HIDDEN)
    split = cfg.group.k * cfg.env.obs_dim
    p.add("qhead.w1_obs", Tensor(w1[:split], requires_grad=True))
    p.add("qhead.w1_msg", Tensor(w1[split:], requires_grad=True))
    p.add("qhead.b1", Tensor(np.zeros(QHEAD_HIDDEN), requires_grad=True))
    p.add("qhead.w2", Tensor(linear_init(rng, QHEAD_HIDDEN, N_ACTIONS),
                             requires_grad=True))
    p.add("qhead.b2", Tensor(np.zeros(N_ACTIONS), requires_grad=True))

    n, embed, d_s = cfg.env.n_agents, cfg.model.mixer_embed, cfg.env.state_dim
    p.add("mixer.w1_w", Tensor(linear_init(rng, d_s, n * embed),
                               requires_grad=True))
    p.add("mixer.w1_b", Tensor(np.zeros(n * embed), requires_grad=True))
    p.add("mixer.b1_w", Tensor(linear_init(rng, d_s, embed), requires_grad=True))
    p.add("mixer.b1_b", Tensor(np.zeros(embed), requires_grad=True))
    p.add("mixer.w2_w", Tensor(linear_init(rng, d_s, embed), requires_grad=True))
    p.add("mixer.w2_b", Tensor(np.zeros(embed), requires_grad=True))
    p.add("mixer.b2a_w", Tensor(linear_init(rng, d_s, embed), requires_grad=True))
    p.add("mixer.b2a_b", Tensor(np.zeros(embed), requires_grad=True))
    p.add("mixer.b2b_w", Tensor(linear_init(rng, embed, 1), requires_grad=True))
    p.add("mixer.b2b_b", Tensor(np.zeros(1), requires_grad=True))
    return p


def gnn_forward(graph: CoordinationGraph, h0: Tensor, params: ParameterSet,
                n_layers: int = 2) -> MessageBatch:
    """L rounds of H <- ReLU(C_hat @ H @ W_l); returns every layer."""
    layers = [h0]
    h = h0
    for layer in range(n_layers):
        h = T.relu(graph.c_hat @ h @ params[f"gnn.w{layer}"])
        layers.append(h)
    return MessageBatch(layers=tuple(layers))


def agent_q_values(window, message: Tensor, params: ParameterSet) -> AgentQOutput:
    """Q over actions from (flattened window, message), shared across agents.

    `window` is (..., n, k*d_obs); `message` is (..., n, d_h).
    """
    w = window if isinstance(window, Tensor) else Tensor(window)
    pre = w @ params["qhead.w1_obs"] + message @ params["qhead.w1_msg"]
    h = T.relu(pre + params["qhead.b1"])
    q = h @ params["qhead.w2"] + params["qhead.b2"]
    return AgentQOutput(q=q, pi=T.softmax_rows(q))


def select_actions(q: np.ndarray, epsilon: float, rng: RngStream) -> np.ndarray:
    """Per-agent epsilon-greedy; exact ties go to the lowest action index.

    Always consumes 2n draws (n uniforms, n integers) so the stream
    position is independent of epsilon and of the Q values.
    """
    q = np.asarray(q)
    n, n_actions = q.shape
    explore = rng.uniform(n) < epsilon
    random_actions = rng.integers(0, n_actions, size=n)
    greedy = q.argmax(axis=1)
    return np.where(explore, random_actions, greedy).astype(np.int64)


def mix(q_chosen, state, params: ParameterSet) -> MixerOutput:
    """QMIX: state-hypernetworked two-layer mixer, monotone in each q_i.

    `q_chosen` is (..., n) chosen-action Q values, `state` (..., d_state).
    abs() on both weight layers gives dQ_tot/dq_i >= 0 for every i.
    """
    q = q_chosen if isinstance(q_chosen, Tensor) else Tensor(q_chosen)
    s = state if isinstance(state, Tensor) else Tensor(state)
    lead = q.shape[:-1]
    n = q.shape[-1]
    batch = int(np.prod(lead)) if lead else 1
    embed = params["mixer.b1_w"].shape[1]

    q2 = q.reshape((batch, 1, n))
    s2 = s.reshape((batch, s.shape[-1]))
    w1 = T.absolute(s2 @ params["mixer.w1_w"] + params["mixer.w1_b"])
    b1 = (s2 @ params["mixer.b1_w"] + params["mixer.b1_b"]).reshape((batch, 1, embed))
    hidden = T.relu(q2 @ w1.reshape((batch, n, embed)) + b1)
    w2 = T.absolute(s2 @ params["mixer.w2_w"] + params["mixer.w2_b"])
    b2 = T.relu(s2 @ params["mixer.b2a_w"] + params["mixer.b2a_b"]) \
        @ params["mixer.b2b_w"] + params["mixer.b2b_b"]
    q_tot = (hidden @ w2.reshape((batch, embed, 1))).reshape((batch,)) \
        + b2.reshape((batch,))
    return MixerOutput(q_tot=q_tot.reshape(lead), hidden=hidden)


def target_sync(online: ParameterSet, target: ParameterSet) -> None:
    """Hard copy of every online parameter into the target set."""
    target.copy_from(online)
