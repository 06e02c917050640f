"""The context-length controller ("central agent").

At each step it featurizes the global-state history through the spectral
module, picks one context length from a step-dependent dyadic menu, and
hands the decentralized agents a fixed-size window holding the most
recent L rows of history.  It learns from an attention-weighted blend of
the agents' rewards.

``decide`` and ``select_context`` are read-only over parameters and safe
to run concurrently across episodes; ``central_update`` mutates the nets
and must be serialized by the trainer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .approx import AdamOptimizer, DenseNet, forward, backprop, masked_softmax
from .errors import DivergenceError, ValidationError
from .spectral import HistoryWindow, central_state


def _floor_log2(n: int) -> int:
    return int(n).bit_length() - 1


@dataclass(frozen=True)
class ActionSchedule:
    """Step-dependent dyadic menu of candidate context lengths.

    Every emitted vector has exactly M entries: zeros on the left, then
    the dyadic lengths {1, 2, ..., 2^k} with
    k = min(floor(log2 k0), floor(log2 t) - 1), clamped to the empty set
    when t < 2.  The zero slots all mean "no context"; the mask exposes
    only the rightmost of them so the policy sees one canonical zero
    action plus the distinct lengths.
    """

    M: int
    k0: int
    threshold: int

    def __post_init__(self):
        if self.k0 < 1:
            raise ValidationError(f"k0 must be >= 1, got {self.k0}")
        if self.M < _floor_log2(self.k0) + 2:
            raise ValidationError(
                f"M={self.M} too small for k0={self.k0}: need room for "
                f"{_floor_log2(self.k0) + 1} dyadic lengths plus a zero slot")

    def table(self, t: int) -> np.ndarray:
        vector, _ = available_actions(t, self)
        return vector

    @property
    def max_length(self) -> int:
        return 2 ** _floor_log2(self.k0)


def available_actions(t: int, schedule: ActionSchedule):
    """Candidate vector and availability mask at step t (total function).

    Above the schedule threshold the full dyadic menu appears; below it
    the same formula applies with k clamped by floor(log2 t) - 1, so a
    requested length never exceeds the history that exists.
    """
    t = int(t)
    if t < 0:
        t = 0
    k_cap = _floor_log2(t) - 1 if t >= 1 else -1
    k = min(_floor_log2(schedule.k0), k_cap)
    lengths = [2**j for j in range(k + 1)]
    n_zero = schedule.M - len(lengths)
    vector = np.array([0] * n_zero + lengths, dtype=np.int64)
    mask = np.zeros(schedule.M, dtype=bool)
    mask[n_zero - 1:] = True  # canonical zero slot is the rightmost zero
    return vector, mask


@dataclass(frozen=True)
class CentralDecision:
    """One context-length choice, with what the learner needs to train on."""

    action_index: int
    context_length: int
    log_prob: float
    value_estimate: float
    probs: np.ndarray
    mask: np.ndarray
    features: np.ndarray | None = None


def decide(history: HistoryWindow, schedule: ActionSchedule, policy: DenseNet,
           critic: DenseNet, rng: np.random.Generator | None = None,
           greedy: bool = False) -> CentralDecision:
    """Sample (or greedily take) a context length for the given history."""
    state = central_state(history, schedule.k0)
    vector, mask = available_actions(history.t, schedule)
    assert mask.any(), "schedule always exposes the no-context action"
    logits = forward(policy, state.features)
    probs = masked_softmax(logits, mask)
    if greedy:
        idx = int(np.argmax(probs))
    else:
        if rng is None:
            raise ValidationError("decide needs an rng unless greedy=True")
        idx = int(rng.choice(schedule.M, p=probs))
    value = float(forward(critic, state.features)[0])
    return CentralDecision(
        action_index=idx,
        context_length=int(vector[idx]),
        log_prob=float(np.log(probs[idx])),
        value_estimate=value,
        probs=probs,
        mask=mask,
        features=state.features,
    )


@dataclass(frozen=True)
class OptimalContext:
    """Fixed-size context window handed to the decentralized agents.

    The window is L_max x d with the chosen L most recent history rows in
    its tail, leading rows zeroed, plus L / L_max as a scalar feature so
    policies can tell a zeroed row from a short context.
    """

    window: np.ndarray
    chosen_length: int
    length_feature: float

    def flat(self) -> np.ndarray:
        return self.window.reshape(-1)


def select_context(history: HistoryWindow, length: int, l_max: int) -> OptimalContext:
    """Copy the last ``length`` history rows into the tail of an L_max x d window."""
    if l_max < 1:
        raise ValidationError(f"l_max must be >= 1, got {l_max}")
    if length < 0 or length > history.t or length > l_max:
        raise ValidationError(
            f"context length {length} out of range [0, min(t={history.t}, l_max={l_max})]")
    window = np.zeros((l_max, history.d))
    if length > 0:
        window[l_max - length:, :] = history.steps[history.t - length:, :]
    window.setflags(write=False)
    return OptimalContext(window=window, chosen_length=int(length),
                          length_feature=float(length) / float(l_max))


def central_reward(weights, rewards) -> float:
    """Convex combination of per-agent rewards under attention weights."""
    w = np.asarray(weights, dtype=np.float64).reshape(-1)
    r = np.asarray(rewards, dtype=np.float64).reshape(-1)
    if w.shape != r.shape:
        raise ValidationError(f"got {w.size} weights for {r.size} rewards")
    if abs(w.sum() - 1.0) > 1e-9:
        raise ValidationError(f"attention weights sum to {w.sum():.12f}, expected 1")
    return float(w @ r)


@dataclass
class CentralTransition:
    """One step of the controller's own (state, action, reward) stream."""

    features: np.ndarray
    action_index: int
    mask: np.ndarray
    log_prob: float
    reward: float
    next_features: np.ndarray
    done: bool


def central_update(transitions, policy: DenseNet, critic: DenseNet,
                   mode: str = "ppo", gamma: float = 0.98, lam: float = 0.95,
                   clip_eps: float = 0.2, epochs: int = 10,
                   entropy_coef: float = 0.01, zeta: float = 1e-3,
                   policy_opt: AdamOptimizer | None = None,
                   critic_opt: AdamOptimizer | None = None,
                   normalize_advantages: bool = True) -> dict:
    """Update the controller from a batch of its transitions.

    ``mode="td"`` is the one-step actor-critic form: per-step TD error
    delta = r + gamma * V(s') * (1 - done) - V(s), plain gradient ascent
    on log pi(a|s) * delta with rate zeta, and semi-gradient descent on
    the squared TD error for the critic.  ``mode="ppo"`` (the default)
    runs GAE advantages plus clipped-surrogate epochs through the shared
    trainer machinery.
    """
    if not transitions:
        raise ValidationError("central_update needs a non-empty batch")
    feats = np.stack([tr.features for tr in transitions])
    next_feats = np.stack([tr.next_features for tr in transitions])
    actions = np.array([tr.action_index for tr in transitions], dtype=np.int64)
    masks = np.stack([tr.mask for tr in transitions]).astype(bool)
    rewards = np.array([tr.reward for tr in transitions], dtype=np.float64)
    dones = np.array([float(tr.done) for tr in transitions])
    old_log_probs = np.array([tr.log_prob for tr in transitions], dtype=np.float64)

    values = forward(critic, feats)[:, 0]
    next_values = forward(critic, next_feats)[:, 0]

    if mode == "td":
        delta = rewards + gamma * next_values * (1.0 - dones) - values
        if not np.all(np.isfinite(delta)):
            raise DivergenceError("non-finite TD error in central_update")
        batch = feats.shape[0]
        logits = forward(policy, feats)
        probs = _masked_probs(logits, masks)
        d_logits = -probs
        d_logits[np.arange(batch), actions] += 1.0
        d_logits *= (delta / batch)[:, None]
        pol_grads = backprop(policy, feats, d_logits)
        new_weights = [w + zeta * g for w, g in zip(policy.weights, pol_grads.weights)]
        new_biases = [b + zeta * g for b, g in zip(policy.biases, pol_grads.biases)]
        policy.set_parameters(new_weights + new_biases)

        d_value = (-2.0 * delta / batch)[:, None]  # d mean(delta^2)/dV, target frozen
        cr_grads = backprop(critic, feats, d_value)
        new_weights = [w - zeta * g for w, g in zip(critic.weights, cr_grads.weights)]
        new_biases = [b - zeta * g for b, g in zip(critic.biases, cr_grads.biases)]
        critic.set_parameters(new_weights + new_biases)
        return {"mean_delta": float(delta.mean()),
                "mean_abs_delta": float(np.abs(delta).mean())}

    if mode != "ppo":
        raise ValidationError(f"unknown central update mode {mode!r}")

    from .marl import PpoBatch, compute_gae, ppo_update

    advantages, returns = compute_gae(rewards, values, next_values, dones, gamma, lam)
    batch = PpoBatch(policy_inputs=feats, actions=actions, masks=masks,
                     old_log_probs=old_log_probs, advantages=advantages,
                     critic_inputs=feats, returns=returns)
    return ppo_update(batch, policy, critic,
                      clip_eps=clip_eps, epochs=epochs, entropy_coef=entropy_coef,
                      lr=zeta, policy_opt=policy_opt, critic_opt=critic_opt,
                      normalize_advantages=normalize_advantages)


def _masked_probs(logits: np.ndarray, masks: np.ndarray) -> np.ndarray:
    """Row-wise masked softmax for batched logits."""
    z = np.where(masks, logits, -np.inf)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


class CentralAgent:
    """Bundles the controller's schedule, nets, and optimizers."""

    def __init__(self, schedule: ActionSchedule, feature_dim: int, hidden_sizes,
                 seed: int, lr: float = 1e-3, l_max: int | None = None):
        self.schedule = schedule
        self.l_max = int(l_max) if l_max is not None else schedule.max_length
        self.policy = DenseNet.init([feature_dim, *hidden_sizes, schedule.M], seed)
        self.critic = DenseNet.init([feature_dim, *hidden_sizes, 1], seed + 1)
        self.policy_opt = AdamOptimizer(self.policy, lr)
        self.critic_opt = AdamOptimizer(self.critic, lr)

    def decide(self, history: HistoryWindow, rng=None, greedy: bool = False):
        return decide(history, self.schedule, self.policy, self.critic,
                      rng=rng, greedy=greedy)

    def update(self, transitions, mode: str = "ppo", **kwargs) -> dict:
        kwargs.setdefault("policy_opt", self.policy_opt)
        kwargs.setdefault("critic_opt", self.critic_opt)
        return central_update(transitions, self.policy, self.critic, mode=mode, **kwargs)
