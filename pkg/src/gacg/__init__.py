"""Group-aware coordination graphs for cooperative multi-agent RL.

Agents are clustered into behaviour groups from recent observation
windows; pairwise attention over encoded observations gives edge means,
the group structure gives a rank-1 edge covariance, and the sampled graph
drives GNN message passing into per-agent Q heads mixed by a monotonic
QMIX network.  Everything runs on a small float64 autodiff core — the only
runtime dependency is numpy.
"""

from .config import (GraphConfig, GroupConfig, ModelConfig, RunConfig,
                     TrainConfig, config_from_dict, config_hash,
                     config_to_dict, load_config)
from .env_pursuit import EnvConfig, EnvState, observe, render_ascii, reset, step
from .errors import (ConfigError, ContractError, GacgError, IntegrityError,
                     NumericsError, ParameterError, ShapeError,
                     TrainingDivergedError)
from .graph_inference import (CoordinationGraph, EdgeDistribution,
                              GroupPartition, ablation_edge_source,
                              agent_group_matrix, agent_pair_means,
                              build_adjacency, divide_groups,
                              edge_group_matrix, encode_observations,
                              sample_edges)
from .params import ParameterSet, grad_check
from .policy import (AgentQOutput, MessageBatch, MixerOutput, agent_q_values,
                     build_parameters, gnn_forward, mix, select_actions,
                     target_sync)
from .rng import RngStream, standard_normal, stream_id
from .runner import Trainer, evaluate_checkpoint, rollout_episode, run_training
from .tensor import Tensor, backward, no_grad, tensor_arith
from .training import (AdamState, EpisodeRecord, LossReport, ReplayBuffer,
                       group_distance_loss, group_regularizer, optimizer_step,
                       td_loss, total_loss, train_step)
from .clustering import kmeans

__version__ = "0.1.0"
