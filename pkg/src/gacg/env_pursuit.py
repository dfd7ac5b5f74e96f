"""Cooperative pursuit on a torus grid.

Two agent types (far-sighted scouts, short-sighted captors) chase fleeing
prey on a W x W torus.  A prey is captured only when at least two agents sit
within Chebyshev distance 1 of it, so single agents can never score: the
reward signal only moves when agents actually coordinate.  All agents share
one reward per step.

States are values; `step` returns a fresh state, so environments can be run
in parallel with independent rng streams.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ContractError, ParameterError
from .rng import RngStream

ACTIONS = ("stay", "N", "S", "E", "W")
N_ACTIONS = len(ACTIONS)
# (dx, dy) per action; y grows downward (row 0 is the top rendered line)
_DELTAS = ((0, 0), (0, -1), (0, 1), (1, 0), (-1, 0))

SCOUT, CAPTOR = 0, 1
N_TYPES = 2


@dataclass(frozen=True)
class EnvConfig:
    grid_size: int = 10
    n_scouts: int = 3
    n_captors: int = 3
    n_prey: int = 2
    vision_scout: int = 3
    vision_captor: int = 1
    episode_limit: int = 60
    step_penalty: float = -0.01
    capture_reward: float = 10.0

    @property
    def n_agents(self) -> int:
        return self.n_scouts + self.n_captors

    @property
    def agent_types(self) -> np.ndarray:
        return np.array([SCOUT] * self.n_scouts + [CAPTOR] * self.n_captors,
                        dtype=np.int64)

    @property
    def max_vision(self) -> int:
        return max(self.vision_scout, self.vision_captor)

    @property
    def patch_side(self) -> int:
        return 2 * self.max_vision + 1

    @property
    def obs_dim(self) -> int:
        # 3 channels over the patch + own type one-hot + own position / W
        return 3 * self.patch_side ** 2 + N_TYPES + 2

    @property
    def state_dim(self) -> int:
        # agent (x, y) pairs, agent type scalars, prey (x, y, alive), t / T
        return 2 * self.n_agents + self.n_agents + 3 * self.n_prey + 1

    def validate(self):
        if self.grid_size < 5:
            raise ParameterError(f"grid_size must be >= 5, got {self.grid_size}")
        if self.n_agents < 2:
            raise ParameterError(f"need at least 2 agents, got {self.n_agents}")
        for r in (self.vision_scout, self.vision_captor):
            if not (1 <= r <= self.grid_size // 2):
                raise ParameterError(
                    f"vision radius {r} outside [1, {self.grid_size // 2}]")
        if self.episode_limit < 1:
            raise ParameterError("episode_limit must be >= 1")
        if self.n_prey < 1:
            raise ParameterError("need at least one prey")


@dataclass(frozen=True)
class EnvState:
    agent_xy: np.ndarray        # (n_agents, 2) int
    agent_types: np.ndarray     # (n_agents,) int
    prey_xy: np.ndarray         # (n_prey, 2) int
    prey_alive: np.ndarray      # (n_prey,) bool
    t: int = 0

    @property
    def done(self) -> bool:
        return not bool(self.prey_alive.any())


def _torus_delta(a: np.ndarray, b: np.ndarray, w: int) -> np.ndarray:
    d = np.abs(a - b)
    return np.minimum(d, w - d)


def chebyshev(a: np.ndarray, b: np.ndarray, w: int) -> np.ndarray:
    """Chebyshev distance on the torus; broadcasts over leading dims."""
    return _torus_delta(a, b, w).max(axis=-1)


def reset(config: EnvConfig, rng: RngStream) -> tuple[EnvState, np.ndarray]:
    """Place agents and prey uniformly at random; prey never share a cell."""
    config.validate()
    w = config.grid_size
    if config.n_prey > w * w:
        raise ParameterError(
            f"{config.n_prey} prey cannot occupy {w * w} distinct cells")

    agent_xy = np.stack([rng.integers(0, w, size=config.n_agents),
                         rng.integers(0, w, size=config.n_agents)], axis=1)
    prey_cells: list[tuple[int, int]] = []
    occupied: set[tuple[int, int]] = set()
    while len(prey_cells) < config.n_prey:
        cell = (int(rng.integers(0, w)), int(rng.integers(0, w)))
        if cell not in occupied:
            occupied.add(cell)
            prey_cells.append(cell)

    state = EnvState(
        agent_xy=agent_xy.astype(np.int64),
        agent_types=config.agent_types,
        prey_xy=np.array(prey_cells, dtype=np.int64),
        prey_alive=np.ones(config.n_prey, dtype=bool),
        t=0,
    )
    return state, observe_all(state, config)


def step(state: EnvState, actions, config: EnvConfig,
         rng: RngStream | None = None
         ) -> tuple[EnvState, np.ndarray, float, bool]:
    """Advance one step: agents move, prey flee, captures resolve.

    The transition itself is deterministic; `rng` is accepted for interface
    symmetry but never consumed.
    """
    if state.t >= config.episode_limit or state.done:
        raise ContractError("step called on a finished episode")
    actions = np.asarray(actions, dtype=np.int64)
    if actions.shape != (config.n_agents,):
        raise ContractError(
            f"expected {config.n_agents} actions, got shape {actions.shape}")
    if actions.min() < 0 or actions.max() >= N_ACTIONS:
        raise ContractError("action index out of range")

    w = config.grid_size
    deltas = np.array(_DELTAS, dtype=np.int64)
    agent_xy = (state.agent_xy + deltas[actions]) % w

    # Prey flee one at a time (index order): pick the neighbouring cell that
    # maximizes Chebyshev distance to the nearest agent, ties broken in
    # action order stay < N < S < E < W.  Cells holding other living prey are
    # off-limits.
    prey_xy = state.prey_xy.copy()
    n_prey = len(prey_xy)
    for p in range(n_prey):
        if not state.prey_alive[p]:
            continue
        best_cell, best_dist = None, -1
        for delta in _DELTAS:
            cand = (prey_xy[p] + np.array(delta, dtype=np.int64)) % w
            blocked = any(
                q != p and state.prey_alive[q] and np.array_equal(cand, prey_xy[q])
                for q in range(n_prey))
            if blocked:
                continue
            dist = int(chebyshev(agent_xy, cand[None, :], w).min())
            if dist > best_dist:
                best_cell, best_dist = cand, dist
        prey_xy[p] = best_cell

    # Capture: at least two agents within Chebyshev distance 1 of a prey.
    prey_alive = state.prey_alive.copy()
    captures = 0
    for p in range(n_prey):
        if not prey_alive[p]:
            continue
        close = chebyshev(agent_xy, prey_xy[p][None, :], w) <= 1
        if int(close.sum()) >= 2:
            prey_alive[p] = False
            captures += 1

    reward = captures * config.capture_reward + config.step_penalty
    new_state = EnvState(
        agent_xy=agent_xy,
        agent_types=state.agent_types,
        prey_xy=prey_xy,
        prey_alive=prey_alive,
        t=state.t + 1,
    )
    done = new_state.t >= config.episode_limit or new_state.done
    return new_state, observe_all(new_state, config), float(reward), done


def observe(state: EnvState, agent_index: int, config: EnvConfig) -> np.ndarray:
    """Egocentric observation for one agent.

    Layout: flattened (patch_side, patch_side, 3) patch with channels
    (allies, living prey, own-type broadcast), then the own-type one-hot,
    then own (x, y) / W.  Every agent uses the patch side of the widest
    vision; cells outside the agent's own radius read as zeros, so a
    short-sighted agent's patch is a zero-padded subset of a far-sighted
    one's at the same cell.
    """
    w = config.grid_size
    r_max = config.max_vision
    own_type = int(state.agent_types[agent_index])
    radius = config.vision_scout if own_type == SCOUT else config.vision_captor
    ax, ay = state.agent_xy[agent_index]

    patch = _base_patch(config, own_type).copy()
    cell = np.array([ax, ay], dtype=np.int64)

    for j in range(len(state.agent_xy)):
        if j == agent_index:
            continue
        dx, dy = _ego_offset(state.agent_xy[j], cell, w)
        if max(abs(dx), abs(dy)) <= radius:
            patch[dy + r_max, dx + r_max, 0] = 1.0
    for p in range(len(state.prey_xy)):
        if not state.prey_alive[p]:
            continue
        dx, dy = _ego_offset(state.prey_xy[p], cell, w)
        if max(abs(dx), abs(dy)) <= radius:
            patch[dy + r_max, dx + r_max, 1] = 1.0

    one_hot = np.zeros(N_TYPES)
    one_hot[own_type] = 1.0
    return np.concatenate([patch.ravel(), one_hot,
                           np.array([ax / w, ay / w])])


@lru_cache(maxsize=None)
def _base_patch(config: EnvConfig, own_type: int) -> np.ndarray:
    """Patch pre-filled with the self-type broadcast over the vision disc."""
    side = config.patch_side
    r_max = config.max_vision
    radius = config.vision_scout if own_type == SCOUT else config.vision_captor
    patch = np.zeros((side, side, 3))
    coords = np.arange(side) - r_max
    within = np.maximum(np.abs(coords)[:, None], np.abs(coords)[None, :]) <= radius
    patch[:, :, 2] = within * ((own_type + 1) / N_TYPES)
    return patch


def _ego_offset(other: np.ndarray, center: np.ndarray, w: int) -> tuple[int, int]:
    # signed torus offset in (-w/2, w/2]
    d = (other - center) % w
    d = np.where(d > w // 2, d - w, d)
    return int(d[0]), int(d[1])


def observe_all(state: EnvState, config: EnvConfig) -> np.ndarray:
    """Observations for every agent, stacked to (n_agents, obs_dim).

    Vectorized equivalent of calling observe() per agent (the acting/eval
    hot path runs this every env step).
    """
    w = config.grid_size
    r_max = config.max_vision
    n = len(state.agent_xy)
    types = state.agent_types
    radius = np.where(types == SCOUT, config.vision_scout,
                      config.vision_captor)
    patches = np.stack([_base_patch(config, int(t)) for t in types])

    def ego(targets):
        d = (targets[None, :, :] - state.agent_xy[:, None, :]) % w
        return np.where(d > w // 2, d - w, d)

    da = ego(state.agent_xy)                                  # (n, n, 2)
    seen = np.maximum(np.abs(da[..., 0]), np.abs(da[..., 1])) <= radius[:, None]
    seen &= ~np.eye(n, dtype=bool)
    ai, aj = np.nonzero(seen)
    patches[ai, da[ai, aj, 1] + r_max, da[ai, aj, 0] + r_max, 0] = 1.0

    if len(state.prey_xy):
        dp = ego(state.prey_xy)                               # (n, P, 2)
        seen = np.maximum(np.abs(dp[..., 0]), np.abs(dp[..., 1])) <= radius[:, None]
        seen &= state.prey_alive[None, :]
        pi, pj = np.nonzero(seen)
        patches[pi, dp[pi, pj, 1] + r_max, dp[pi, pj, 0] + r_max, 1] = 1.0

    one_hot = np.zeros((n, N_TYPES))
    one_hot[np.arange(n), types] = 1.0
    return np.concatenate([patches.reshape(n, -1), one_hot,
                           state.agent_xy / w], axis=1)


def global_state(state: EnvState, config: EnvConfig) -> np.ndarray:
    """Flat global feature vector: positions, types, prey, progress."""
    w = config.grid_size
    parts = [
        (state.agent_xy / w).ravel(),
        (state.agent_types + 1) / N_TYPES,
        np.concatenate([state.prey_xy / w,
                        state.prey_alive[:, None].astype(np.float64)],
                       axis=1).ravel(),
        np.array([state.t / config.episode_limit]),
    ]
    return np.concatenate(parts)


def render_ascii(state: EnvState, config: EnvConfig) -> str:
    """W lines of W glyphs: '.' empty, 'S' scout, 'C' captor, 'P' prey.

    Prey draw over agents when they share a cell; scouts over captors.
    """
    w = config.grid_size
    grid = [["." for _ in range(w)] for _ in range(w)]
    for i, (x, y) in enumerate(state.agent_xy):
        glyph = "S" if state.agent_types[i] == SCOUT else "C"
        if grid[y][x] in (".", "C"):
            grid[y][x] = glyph
    for p, (x, y) in enumerate(state.prey_xy):
        if state.prey_alive[p]:
            grid[y][x] = "P"
    return "\n".join("".join(row) for row in grid)
