"""Training and evaluation loops.

Reproducibility scheme: every random decision draws from a stream keyed by
(seed, role, ordinal) — environments and exploration by episode index,
edge/group sampling by episode index, replay sampling by train-step index,
evaluation by evaluation index.  Stream positions never persist across
process boundaries, so a resumed run replays the identical sequence the
uninterrupted run would have produced.
"""
from __future__ import annotations

import json
import logging
import os
import time
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .checkpoint import load_checkpoint, save_checkpoint
from .config import (N_ACTIONS, RunConfig, config_to_dict, epsilon_at)
from .env_pursuit import global_state, reset, step
from .errors import IntegrityError, ParameterError, TrainingDivergedError
from .graph_inference import (ablation_edge_source, agent_pair_means,
                              build_adjacency, divide_groups, edge_factors,
                              encode_observations)
from .metrics import METRICS_COLUMNS, TIMING_COLUMNS, CsvAppender
from .params import ParameterSet
from .policy import (agent_q_values, build_parameters, gnn_forward,
                     select_actions)
from .rng import (ROLE_EDGE, ROLE_ENV, ROLE_EVAL_EDGE, ROLE_EVAL_ENV,
                  ROLE_EVAL_EXPLORE, ROLE_EVAL_GROUP, ROLE_EXPLORE,
                  ROLE_GROUP, ROLE_INIT, ROLE_REPLAY, RngStream)
from .training import (AdamState, EpisodeRecord, ReplayBuffer, TrainState,
                       train_step, window_at)

log = logging.getLogger("gacg")


@dataclass
class EpisodeStats:
    length: int
    episode_return: float
    captures: int
    n_prey: int


def _act(obs_now: np.ndarray, window: np.ndarray, params: ParameterSet,
         cfg: RunConfig, edge_rng: RngStream, group_rng: RngStream
         ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Greedy-value computation for one timestep (no exploration).

    Returns (q (n, A), labels (n,), noise) — labels and noise are what the
    episode record stores so training can replay this exact graph.
    """
    n = cfg.env.n_agents
    with T.no_grad():
        enc = encode_observations(obs_now, params)
        mu = agent_pair_means(enc, params)
        mu_flat = mu.reshape((n * n,))
        if cfg.group.m == 0:
            labels = np.zeros(n, dtype=np.int64)
            e, noise = ablation_edge_source("attention", mu_flat, None, None)
        else:
            k, d_obs = cfg.group.k, cfg.env.obs_dim
            partition = divide_groups(window.reshape(n, k, d_obs),
                                      cfg.group.m, group_rng)
            labels = partition.labels
            factors = edge_factors(partition, cfg.graph.covariance)
            e, noise = ablation_edge_source(cfg.graph.mode, mu_flat, factors,
                                            edge_rng, sigma2=cfg.graph.sigma2)
        graph = build_adjacency(e, n)
        msgs = gnn_forward(graph, enc, params, cfg.model.gnn_layers)
        q = agent_q_values(window, msgs.messages, params).q.data
    return q, labels, noise


def rollout_episode(cfg: RunConfig, params: ParameterSet | None,
                    epsilon: float, env_rng: RngStream,
                    explore_rng: RngStream, edge_rng: RngStream,
                    group_rng: RngStream, record: bool = True
                    ) -> tuple[EpisodeRecord | None, EpisodeStats]:
    """Play one episode; params=None plays the uniform-random policy."""
    env_cfg = cfg.env
    state, obs = reset(env_cfg, env_rng)
    obs_list = [obs]
    states = [global_state(state, env_cfg)]
    labels_l, noise_l, actions_l, rewards_l, dones_l = [], [], [], [], []

    done = False
    while not done:
        window = window_at(obs_list, cfg.group.k)
        if params is None:
            q = np.zeros((env_cfg.n_agents, N_ACTIONS))
            labels = np.zeros(env_cfg.n_agents, dtype=np.int64)
            noise = np.zeros(0)
            actions = select_actions(q, 1.0, explore_rng)
        else:
            q, labels, noise = _act(obs_list[-1], window, params, cfg,
                                    edge_rng, group_rng)
            actions = select_actions(q, epsilon, explore_rng)
        state, obs, reward, done = step(state, actions, env_cfg)
        obs_list.append(obs)
        states.append(global_state(state, env_cfg))
        labels_l.append(labels)
        noise_l.append(noise)
        actions_l.append(actions)
        rewards_l.append(reward)
        dones_l.append(done)

    captures = int(env_cfg.n_prey - state.prey_alive.sum())
    stats = EpisodeStats(length=len(rewards_l),
                         episode_return=float(np.sum(rewards_l)),
                         captures=captures, n_prey=env_cfg.n_prey)
    if not record:
        return None, stats
    episode = EpisodeRecord(
        obs=np.stack(obs_list),
        states=np.stack(states),
        labels=np.stack(labels_l),
        noise=np.stack(noise_l),
        actions=np.stack(actions_l),
        rewards=np.array(rewards_l),
        dones=np.array(dones_l, dtype=bool),
        group_m=cfg.group.m,
        window_k=cfg.group.k,
    )
    return episode, stats


class Trainer:
    """Owns one training run: loop, evaluation, persistence, resume."""

    def __init__(self, cfg: RunConfig, out_dir: str, resume: bool = False):
        self.cfg = cfg
        self.out_dir = out_dir
        os.makedirs(out_dir, exist_ok=True)
        self.master = RngStream(cfg.seed)
        self.online = build_parameters(cfg, self.master.spawn(ROLE_INIT, 0))
        self.target = self.online.copy()
        self.buffer = ReplayBuffer(cfg.train.buffer_capacity)
        self.tstate = TrainState(adam=AdamState.for_params(self.online))
        self.env_step = 0
        self.episode_idx = 0
        self.eval_idx = 0
        self.ckpt_idx = 0
        # running sums of (total, td, group_raw, group_reg) since last eval
        self.loss_sums = np.zeros(4)
        self.loss_count = 0
        self.metrics = CsvAppender(os.path.join(out_dir, "metrics.csv"),
                                   METRICS_COLUMNS)
        self.timing = CsvAppender(os.path.join(out_dir, "timing.csv"),
                                  TIMING_COLUMNS)
        if resume:
            self._load_resume()
        else:
            stale = [self.metrics.path, self.timing.path,
                     os.path.join(out_dir, "resume.npz"),
                     self._ckpt_prefix() + ".json",
                     self._ckpt_prefix() + ".bin"]
            for path in stale:
                if os.path.exists(path):
                    os.remove(path)
            with open(os.path.join(out_dir, "config.json"), "w",
                      encoding="utf-8") as fh:
                json.dump(config_to_dict(cfg), fh, indent=2, sort_keys=True)
                fh.write("\n")

    # -- persistence --------------------------------------------------------

    def _ckpt_prefix(self) -> str:
        return os.path.join(self.out_dir, "checkpoint")

    def _save_all(self):
        save_checkpoint(self.online, self.cfg, self.env_step,
                        self._ckpt_prefix())
        payload = {
            "counters": np.array([self.env_step, self.episode_idx,
                                  self.eval_idx, self.ckpt_idx,
                                  self.tstate.train_steps,
                                  self.tstate.adam.t], dtype=np.int64),
            "loss_sums": self.loss_sums,
            "loss_count": np.array([self.loss_count], dtype=np.int64),
            "n_episodes": np.array([len(self.buffer)], dtype=np.int64),
        }
        for name, p in self.target.items():
            payload[f"target/{name}"] = p.data
        for name in self.tstate.adam.m:
            payload[f"adam_m/{name}"] = self.tstate.adam.m[name]
            payload[f"adam_v/{name}"] = self.tstate.adam.v[name]
        for i, ep in enumerate(self.buffer.episodes()):
            payload[f"ep{i}/obs"] = ep.obs
            payload[f"ep{i}/states"] = ep.states
            payload[f"ep{i}/labels"] = ep.labels
            payload[f"ep{i}/noise"] = ep.noise
            payload[f"ep{i}/actions"] = ep.actions
            payload[f"ep{i}/rewards"] = ep.rewards
            payload[f"ep{i}/dones"] = ep.dones
        np.savez_compressed(os.path.join(self.out_dir, "resume.npz"),
                            **payload)
        log.info("checkpoint written at env step %d", self.env_step)

    def _load_resume(self):
        prefix = self._ckpt_prefix()
        params, ckpt_cfg, step = load_checkpoint(prefix)
        mine = config_to_dict(self.cfg)
        theirs = config_to_dict(ckpt_cfg)
        mine["train"].pop("total_steps")
        theirs["train"].pop("total_steps")
        if mine != theirs:
            raise IntegrityError(
                "resume refused: config differs from the checkpointed run "
                "(only train.total_steps may change)")
        state_path = os.path.join(self.out_dir, "resume.npz")
        if not os.path.exists(state_path):
            raise IntegrityError(f"missing resume state {state_path}")
        self.online.copy_from(params)
        with np.load(state_path) as data:
            (self.env_step, self.episode_idx, self.eval_idx, self.ckpt_idx,
             self.tstate.train_steps, adam_t) = (int(v) for v in data["counters"])
            self.tstate.adam.t = adam_t
            self.loss_sums = data["loss_sums"].copy()
            self.loss_count = int(data["loss_count"][0])
            for name, p in self.target.items():
                p.data[...] = data[f"target/{name}"]
            for name in self.tstate.adam.m:
                self.tstate.adam.m[name] = data[f"adam_m/{name}"].copy()
                self.tstate.adam.v[name] = data[f"adam_v/{name}"].copy()
            n_eps = int(data["n_episodes"][0])
            for i in range(n_eps):
                self.buffer.push(EpisodeRecord(
                    obs=data[f"ep{i}/obs"],
                    states=data[f"ep{i}/states"],
                    labels=data[f"ep{i}/labels"],
                    noise=data[f"ep{i}/noise"],
                    actions=data[f"ep{i}/actions"],
                    rewards=data[f"ep{i}/rewards"],
                    dones=data[f"ep{i}/dones"],
                    group_m=self.cfg.group.m,
                    window_k=self.cfg.group.k,
                ))
        if step != self.env_step:
            raise IntegrityError(
                f"checkpoint step {step} disagrees with resume state "
                f"{self.env_step}")
        log.info("resumed at env step %d (%d buffered episodes)",
                 self.env_step, len(self.buffer))

    # -- evaluation ---------------------------------------------------------

    def _evaluate(self) -> tuple[float, float]:
        """Greedy policy over eval_episodes; returns (mean_return, capture_rate)."""
        returns = []
        captured = 0
        available = 0
        for e in range(self.cfg.train.eval_episodes):
            ordinal = self.eval_idx * self.cfg.train.eval_episodes + e
            _, stats = rollout_episode(
                self.cfg, self.online, 0.0,
                self.master.spawn(ROLE_EVAL_ENV, ordinal),
                self.master.spawn(ROLE_EVAL_EXPLORE, ordinal),
                self.master.spawn(ROLE_EVAL_EDGE, ordinal),
                self.master.spawn(ROLE_EVAL_GROUP, ordinal),
                record=False)
            returns.append(stats.episode_return)
            captured += stats.captures
            available += stats.n_prey
        return float(np.mean(returns)), captured / available

    def _log_eval_row(self):
        mean_return, capture_rate = self._evaluate()
        if self.loss_count:
            means = self.loss_sums / self.loss_count
        else:
            means = np.zeros(4)
        row = {
            "step": self.env_step,
            "episode": self.episode_idx,
            "mean_return": mean_return,
            "capture_rate": capture_rate,
            "epsilon": epsilon_at(self.cfg.train, self.env_step),
            "loss_total": means[0],
            "loss_td": means[1],
            "group_raw": means[2],
            "group_reg": means[3],
        }
        self.metrics.append(row)
        self.loss_sums[:] = 0.0
        self.loss_count = 0
        self.eval_idx += 1
        log.info("eval %d @ step %d: return %.3f capture_rate %.3f",
                 self.eval_idx, self.env_step, mean_return, capture_rate)

    # -- main loop ----------------------------------------------------------

    def run(self):
        cfg = self.cfg
        start = time.monotonic()
        log.info("run %s seed %d -> %s", cfg.run_id, cfg.seed, self.out_dir)
        while self.env_step < cfg.train.total_steps:
            eps = epsilon_at(cfg.train, self.env_step)
            episode, stats = rollout_episode(
                cfg, self.online, eps,
                self.master.spawn(ROLE_ENV, self.episode_idx),
                self.master.spawn(ROLE_EXPLORE, self.episode_idx),
                self.master.spawn(ROLE_EDGE, self.episode_idx),
                self.master.spawn(ROLE_GROUP, self.episode_idx))
            self.buffer.push(episode)
            self.env_step += stats.length
            self.episode_idx += 1
            log.debug("episode %d: length %d return %.3f", self.episode_idx,
                      stats.length, stats.episode_return)

            if len(self.buffer) >= cfg.train.batch_episodes:
                replay_rng = self.master.spawn(ROLE_REPLAY,
                                               self.tstate.train_steps)
                report = train_step(self.buffer, self.online, self.target,
                                    cfg, replay_rng, self.tstate)
                if not np.isfinite(report.total):
                    raise TrainingDivergedError(
                        self.env_step,
                        f"non-finite loss at env step {self.env_step}")
                self.loss_sums += (report.total, report.td,
                                   report.group_raw, report.group_reg)
                self.loss_count += 1

            while self.env_step >= (self.eval_idx + 1) * cfg.train.eval_interval:
                self._log_eval_row()
                self.timing.append({"step": self.env_step,
                                    "wallclock_s": time.monotonic() - start})
            if self.env_step >= (self.ckpt_idx + 1) * cfg.train.checkpoint_interval:
                while self.env_step >= (self.ckpt_idx + 1) * cfg.train.checkpoint_interval:
                    self.ckpt_idx += 1
                if self.env_step < cfg.train.total_steps:
                    self._save_all()
        self._save_all()
        log.info("run complete at env step %d (%.1f s)", self.env_step,
                 time.monotonic() - start)


def run_training(cfg: RunConfig, out_dir: str, resume: bool = False) -> str:
    trainer = Trainer(cfg, out_dir, resume=resume)
    trainer.run()
    return out_dir


def evaluate_checkpoint(checkpoint_path: str, episodes: int, seed: int,
                        random_policy: bool = False) -> dict:
    """Greedy rollouts from a checkpoint; returns the summary dict."""
    if episodes < 1:
        raise ParameterError(f"episodes must be >= 1, got {episodes}")
    params, cfg, step = load_checkpoint(checkpoint_path)
    master = RngStream(seed)
    returns = []
    lengths = []
    captured = 0
    available = 0
    for e in range(episodes):
        _, stats = rollout_episode(
            cfg, None if random_policy else params, 0.0,
            master.spawn(ROLE_EVAL_ENV, e),
            master.spawn(ROLE_EVAL_EXPLORE, e),
            master.spawn(ROLE_EVAL_EDGE, e),
            master.spawn(ROLE_EVAL_GROUP, e),
            record=False)
        returns.append(stats.episode_return)
        lengths.append(stats.length)
        captured += stats.captures
        available += stats.n_prey
    return {
        "checkpoint_step": step,
        "episodes": episodes,
        "seed": seed,
        "random_policy": bool(random_policy),
        "mean_return": float(np.mean(returns)),
        "std_return": float(np.std(returns)),
        "capture_rate": captured / available,
        "mean_length": float(np.mean(lengths)),
    }
