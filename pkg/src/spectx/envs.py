"""Desk-scale environments.

``SpreadLite``: four agents move on a [-1, 1]^2 arena with five discrete
actions and must cover three static landmarks.  Every agent receives the
shared coverage term -sum_i min_j ||p_j - l_i|| (one term per landmark)
plus a -1.0 local penalty per collision it is involved in.  Episodes end
after a fixed number of steps.

``LatentProcess``: a mean-reverting scalar diffusion observed through
additive Gaussian noise, discretized by Euler-Maruyama.  Used by the
theory module as a world whose optimal observation-window length can be
computed in closed form.

Both are fully deterministic given (seed, action sequence).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ValidationError

N_AGENTS = 4
N_LANDMARKS = 3
N_ACTIONS = 5  # noop, +x, -x, +y, -y
OBS_DIM = 2 + 2 + 2 * N_LANDMARKS + 2 * (N_AGENTS - 1)  # 16

AGENT_RADIUS = 0.075
COLLISION_DIST = 2 * AGENT_RADIUS
DT = 0.1
ACCEL = 3.0
DAMPING = 0.25
MAX_SPEED = 1.0

_ACTION_VECS = np.array([[0.0, 0.0], [1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])


@dataclass(frozen=True)
class SpreadState:
    agent_positions: np.ndarray  # (n, 2)
    agent_velocities: np.ndarray  # (n, 2)
    landmark_positions: np.ndarray  # (3, 2)
    step: int

    def global_features(self) -> np.ndarray:
        """Flat global-state row used for history windows: agent then
        landmark positions (velocities omitted to keep the feature dim small)."""
        return np.concatenate(
            [self.agent_positions.reshape(-1), self.landmark_positions.reshape(-1)])


GLOBAL_DIM = 2 * N_AGENTS + 2 * N_LANDMARKS  # 14


def spread_reset(seed: int, episode_len: int = 25):
    """Uniform random start positions; returns (state, per-agent observations)."""
    rng = np.random.default_rng(seed)
    state = SpreadState(
        agent_positions=rng.uniform(-1, 1, size=(N_AGENTS, 2)),
        agent_velocities=np.zeros((N_AGENTS, 2)),
        landmark_positions=rng.uniform(-1, 1, size=(N_LANDMARKS, 2)),
        step=0,
    )
    return state, spread_observations(state)


def spread_observations(state: SpreadState) -> np.ndarray:
    """(n, 16) rows: own velocity, own position, landmark offsets, other-agent offsets."""
    obs = np.empty((N_AGENTS, OBS_DIM))
    for i in range(N_AGENTS):
        rel_landmarks = (state.landmark_positions - state.agent_positions[i]).reshape(-1)
        others = [j for j in range(N_AGENTS) if j != i]
        rel_agents = (state.agent_positions[others] - state.agent_positions[i]).reshape(-1)
        obs[i] = np.concatenate(
            [state.agent_velocities[i], state.agent_positions[i], rel_landmarks, rel_agents])
    return obs


def spread_rewards(positions: np.ndarray, landmarks: np.ndarray) -> np.ndarray:
    """Per-agent reward at a configuration: shared coverage term plus collisions."""
    dists = np.linalg.norm(positions[None, :, :] - landmarks[:, None, :], axis=2)
    coverage = -dists.min(axis=1).sum()
    rewards = np.full(positions.shape[0], coverage)
    for i in range(positions.shape[0]):
        for j in range(i + 1, positions.shape[0]):
            if np.linalg.norm(positions[i] - positions[j]) < COLLISION_DIST:
                rewards[i] -= 1.0
                rewards[j] -= 1.0
    return rewards


def spread_step(state: SpreadState, actions, episode_len: int = 25):
    """Advance one step; returns (next_state, observations, rewards, done)."""
    acts = np.asarray(actions, dtype=np.int64).reshape(-1)
    if acts.shape[0] != N_AGENTS:
        raise ValidationError(f"expected {N_AGENTS} actions, got {acts.shape[0]}")
    if acts.min() < 0 or acts.max() >= N_ACTIONS:
        raise ValidationError(f"action index out of range 0..{N_ACTIONS - 1}: {acts}")
    vel = state.agent_velocities * (1.0 - DAMPING) + _ACTION_VECS[acts] * ACCEL * DT
    speed = np.linalg.norm(vel, axis=1, keepdims=True)
    vel = np.where(speed > MAX_SPEED, vel * (MAX_SPEED / np.maximum(speed, 1e-12)), vel)
    pos = np.clip(state.agent_positions + vel * DT, -1.0, 1.0)
    next_state = replace(state, agent_positions=pos, agent_velocities=vel,
                         step=state.step + 1)
    rewards = spread_rewards(pos, state.landmark_positions)
    done = next_state.step >= episode_len
    return next_state, spread_observations(next_state), rewards, done


class SpreadEnv:
    """Thin stateful wrapper over the functional spread ops."""

    n_agents = N_AGENTS
    n_actions = N_ACTIONS
    obs_dim = OBS_DIM
    global_dim = GLOBAL_DIM

    def __init__(self, episode_len: int = 25):
        self.episode_len = episode_len
        self.state: SpreadState | None = None

    def reset(self, seed: int) -> np.ndarray:
        self.state, obs = spread_reset(seed, self.episode_len)
        return obs

    def step(self, actions):
        self.state, obs, rewards, done = spread_step(self.state, actions, self.episode_len)
        return obs, rewards, done

    def global_features(self) -> np.ndarray:
        return self.state.global_features()


@dataclass(frozen=True)
class LatentProcessState:
    xi: float
    theta_ou: float
    eta: float
    sigma_eps: float
    dt: float

    def __post_init__(self):
        if self.theta_ou <= 0 or self.eta < 0 or self.sigma_eps < 0 or self.dt <= 0:
            raise ValidationError(
                f"need theta_ou > 0, eta >= 0, sigma_eps >= 0, dt > 0; got "
                f"theta_ou={self.theta_ou}, eta={self.eta}, "
                f"sigma_eps={self.sigma_eps}, dt={self.dt}")
        if self.theta_ou * self.dt >= 1.0:
            raise ValidationError(
                f"theta_ou * dt = {self.theta_ou * self.dt} >= 1 makes the "
                "Euler-Maruyama step unstable")


def stationary_variance(theta_ou: float, eta: float) -> float:
    return eta * eta / (2.0 * theta_ou)


def latent_reset(theta_ou: float, eta: float, sigma_eps: float, dt: float,
                 seed: int | None = None,
                 rng: np.random.Generator | None = None) -> LatentProcessState:
    """Draw the initial latent from the stationary law N(0, eta^2 / (2 theta))."""
    state = LatentProcessState(xi=0.0, theta_ou=theta_ou, eta=eta,
                               sigma_eps=sigma_eps, dt=dt)
    if eta == 0.0:
        return state
    if rng is None:
        rng = np.random.default_rng(seed)
    xi0 = rng.normal(0.0, np.sqrt(stationary_variance(theta_ou, eta)))
    return replace(state, xi=float(xi0))


def latent_step(state: LatentProcessState, rng: np.random.Generator):
    """Euler-Maruyama transition plus a noisy observation of the new latent.

    xi' = xi - theta * xi * dt + eta * sqrt(dt) * z,   o = xi' + eps.
    Returns (next_state, observation).
    """
    z = rng.normal() if state.eta > 0 else 0.0
    xi_next = (state.xi - state.theta_ou * state.xi * state.dt
               + state.eta * np.sqrt(state.dt) * z)
    eps = rng.normal(0.0, state.sigma_eps) if state.sigma_eps > 0 else 0.0
    return replace(state, xi=float(xi_next)), float(xi_next + eps)
