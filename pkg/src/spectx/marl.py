"""Decentralized-actor / centralized-critic trainer.

One training iteration collects a full episode: at every step the
controller picks a context length from spectral history features, the
shared decentralized policy acts on (local observation, context window),
and the controller's reward is the attention-weighted blend of the agent
rewards.  The controller is then updated first, followed by clipped
surrogate epochs on the shared policy and the centralized critic.

Rollouts may run in parallel across episodes (per-episode seeds are
``base_seed + episode_index``); all parameter updates happen on the
coordinating thread.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import central as central_mod
from .approx import (AdamOptimizer, AttentionHeads, DenseNet, attention_weights,
                     backprop, forward, forward_cached)
from .central import (CentralAgent, CentralDecision, CentralTransition,
                      OptimalContext, select_context)
from .errors import DivergenceError, ValidationError
from .spectral import HistoryWindow, central_state, dft, idft, next_pow2


@dataclass
class Transition:
    """One decentralized-agent step."""

    agent_id: int
    observation: np.ndarray
    context: OptimalContext
    action: int
    log_prob: float
    reward: float
    next_observation: np.ndarray
    done: bool

    def __post_init__(self):
        if self.log_prob > 0.0:
            raise ValidationError(f"log_prob must be <= 0, got {self.log_prob}")
        if not np.isfinite(self.reward):
            raise ValidationError("reward must be finite")


@dataclass
class Trajectory:
    """Everything one episode produced, in fixed agent order.

    All per-step arrays share the episode length T; the attention weights
    sum to one at every step.
    """

    observations: np.ndarray  # (T, n, obs_dim)
    actions: np.ndarray  # (T, n)
    log_probs: np.ndarray  # (T, n)
    rewards: np.ndarray  # (T, n)
    dones: np.ndarray  # (T,)
    policy_inputs: np.ndarray  # (T, n, policy_in_dim)
    global_inputs: np.ndarray  # (T, critic_in_dim)
    context_lengths: np.ndarray  # (T,)
    attention: np.ndarray  # (T, n)
    central_rewards: np.ndarray  # (T,)
    central_transitions: list  # of CentralTransition
    central_probs: np.ndarray  # (T, M)
    central_values: np.ndarray  # (T,)
    central_actions: np.ndarray  # (T,)
    episode_returns: np.ndarray  # (n,)

    @property
    def length(self) -> int:
        return self.rewards.shape[0]

    @property
    def n_agents(self) -> int:
        return self.rewards.shape[1]

    def agent_transitions(self, agent_id: int) -> list:
        """Materialize one agent's step records as Transition objects."""
        out = []
        for t in range(self.length):
            nxt = self.observations[t + 1, agent_id] if t + 1 < self.length \
                else self.observations[t, agent_id]
            out.append(Transition(
                agent_id=agent_id,
                observation=self.observations[t, agent_id],
                context=None,
                action=int(self.actions[t, agent_id]),
                log_prob=float(self.log_probs[t, agent_id]),
                reward=float(self.rewards[t, agent_id]),
                next_observation=nxt,
                done=bool(self.dones[t]),
            ))
        return out


def compute_gae(rewards, values, next_values, dones, gamma: float, lam: float):
    """Generalized advantage estimation; returns (advantages, returns).

    Standard backward recursion over one-step TD errors; ``returns`` is
    advantages + values.
    """
    r = np.asarray(rewards, dtype=np.float64).reshape(-1)
    v = np.asarray(values, dtype=np.float64).reshape(-1)
    nv = np.asarray(next_values, dtype=np.float64).reshape(-1)
    d = np.asarray(dones, dtype=np.float64).reshape(-1)
    if not (r.shape == v.shape == nv.shape == d.shape):
        raise ValidationError("compute_gae inputs must share one length")
    if not (np.all(np.isfinite(v)) and np.all(np.isfinite(nv))):
        raise ValidationError("compute_gae values must be finite")
    deltas = r + gamma * nv * (1.0 - d) - v
    advantages = np.empty_like(deltas)
    gae = 0.0
    for t in range(len(deltas) - 1, -1, -1):
        gae = deltas[t] + gamma * lam * (1.0 - d[t]) * gae
        advantages[t] = gae
    return advantages, advantages + v


@dataclass
class PpoBatch:
    """Inputs to one clipped-surrogate update.

    ``masks`` marks the available actions per row (all ones for the
    decentralized agents, schedule masks for the controller).  The critic
    rows may differ from the policy rows (the decentralized batch has one
    policy row per agent-step but one critic row per step).
    """

    policy_inputs: np.ndarray  # (B, n_in)
    actions: np.ndarray  # (B,)
    masks: np.ndarray  # (B, A) bool
    old_log_probs: np.ndarray  # (B,)
    advantages: np.ndarray  # (B,)
    critic_inputs: np.ndarray  # (Bv, n_vin)
    returns: np.ndarray  # (Bv,)


def _masked_probs(logits: np.ndarray, masks: np.ndarray) -> np.ndarray:
    z = np.where(masks, logits, -np.inf)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _row_entropy(probs: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        logp = np.where(probs > 0.0, np.log(np.maximum(probs, 1e-300)), 0.0)
    return -(probs * logp).sum(axis=1)


def ppo_update(batch: PpoBatch, policy: DenseNet, critic: DenseNet,
               clip_eps: float = 0.2, epochs: int = 10, entropy_coef: float = 0.01,
               lr: float = 1e-3, policy_opt: AdamOptimizer | None = None,
               critic_opt: AdamOptimizer | None = None,
               normalize_advantages: bool = True) -> dict:
    """Full-batch clipped-surrogate epochs plus value regression.

    Per-epoch stats are measured before that epoch's parameter step, so
    the first epoch sees ratio == 1 exactly.  Top-level floats are means
    over epochs, except ``mean_kl`` which is the final epoch's divergence
    from the rollout policy.
    """
    b = batch.policy_inputs.shape[0]
    if b == 0:
        raise ValidationError("ppo_update needs a non-empty batch")
    adv = np.asarray(batch.advantages, dtype=np.float64).copy()
    if normalize_advantages:
        adv -= adv.mean()
        std = adv.std()
        if std > 1e-8:
            adv /= std
    if policy_opt is None:
        policy_opt = AdamOptimizer(policy, lr)
    if critic_opt is None:
        critic_opt = AdamOptimizer(critic, lr)
    actions = np.asarray(batch.actions, dtype=np.int64)
    masks = np.asarray(batch.masks, dtype=bool)
    rows = np.arange(b)
    bv = batch.critic_inputs.shape[0]

    epoch_stats = []
    for _ in range(int(epochs)):
        logits, policy_cache = forward_cached(policy, batch.policy_inputs)
        probs = _masked_probs(logits, masks)
        logp = np.log(probs[rows, actions])
        ratio = np.exp(logp - batch.old_log_probs)
        unclipped = ratio * adv
        clipped = np.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps) * adv
        surrogate_terms = np.minimum(unclipped, clipped)
        entropies = _row_entropy(probs)
        surrogate = float(surrogate_terms.mean())
        mean_entropy = float(entropies.mean())
        policy_loss = -surrogate - entropy_coef * mean_entropy

        value_out, critic_cache = forward_cached(critic, batch.critic_inputs)
        values = value_out[:, 0]
        value_loss = float(((values - batch.returns) ** 2).mean())
        if not np.isfinite(policy_loss) or not np.isfinite(value_loss):
            raise DivergenceError("non-finite loss in ppo_update")

        clipped_out = np.abs(ratio - 1.0) > clip_eps
        epoch_stats.append({
            "surrogate": surrogate,
            "policy_loss": policy_loss,
            "value_loss": value_loss,
            "entropy": mean_entropy,
            "clip_fraction": float(clipped_out.mean()),
            "mean_kl": float((batch.old_log_probs - logp).mean()),
        })

        # active = the unclipped branch drives the min (clipping not binding)
        active = np.where(adv >= 0.0, ratio <= 1.0 + clip_eps, ratio >= 1.0 - clip_eps)
        coef = np.where(active, ratio * adv, 0.0)
        d_logits = -probs.copy()
        d_logits[rows, actions] += 1.0
        d_logits *= coef[:, None]
        with np.errstate(divide="ignore", invalid="ignore"):
            logp_full = np.where(probs > 0.0, np.log(np.maximum(probs, 1e-300)), 0.0)
        d_entropy = -probs * (logp_full + entropies[:, None])
        d_loss_logits = -(d_logits + entropy_coef * d_entropy) / b
        policy_opt.apply(backprop(policy, batch.policy_inputs, d_loss_logits,
                                  cache=policy_cache))

        d_value = (2.0 * (values - batch.returns) / bv)[:, None]
        critic_opt.apply(backprop(critic, batch.critic_inputs, d_value,
                                  cache=critic_cache))

    stats = {key: float(np.mean([e[key] for e in epoch_stats]))
             for key in ("surrogate", "policy_loss", "value_loss", "entropy",
                         "clip_fraction")}
    stats["mean_kl"] = epoch_stats[-1]["mean_kl"]
    stats["epochs"] = epoch_stats
    return stats


def build_global_critic_input(observations, context: OptimalContext,
                              n_agents: int | None = None) -> np.ndarray:
    """Concatenate all agents' observations (canonical order) plus the context.

    ``observations`` is either a mapping agent_id -> vector (sorted by id)
    or a sequence already in agent order; the shared context window is
    flattened once at the end.
    """
    if isinstance(observations, dict):
        items = [observations[k] for k in sorted(observations)]
    else:
        items = list(observations)
    if n_agents is not None and len(items) != n_agents:
        raise ValidationError(f"expected {n_agents} agent observations, got {len(items)}")
    if not items:
        raise ValidationError("no agent observations given")
    flat = [np.asarray(o, dtype=np.float64).reshape(-1) for o in items]
    return np.concatenate(flat + [context.flat()])


def lowpass_filtered_history(history: HistoryWindow, k0: int) -> HistoryWindow:
    """History with every channel low-pass filtered to its first k0 coefficients.

    Ablation hook for handing agents a smoothed context instead of the raw
    tail; pads to a power of two, zeroes folded frequencies >= k0, inverts.
    """
    t_pad = next_pow2(max(history.t, 2 * k0))
    padded = np.zeros((t_pad, history.d))
    padded[t_pad - history.t:, :] = history.steps
    keep = np.minimum(np.arange(t_pad), t_pad - np.arange(t_pad)) < k0
    out = np.empty_like(padded)
    for c in range(history.d):
        out[:, c] = idft(dft(padded[:, c]) * keep)
    return HistoryWindow(out[t_pad - history.t:, :])


def _forced_decision(schedule, hist_t: int, fixed_length: int) -> CentralDecision:
    """Stand-in decision for fixed-context baselines (no controller learning)."""
    length = min(int(fixed_length), hist_t, schedule.max_length)
    probs = np.full(schedule.M, 1.0 / schedule.M)
    return CentralDecision(action_index=-1, context_length=length, log_prob=0.0,
                           value_estimate=0.0, probs=probs,
                           mask=np.ones(schedule.M, dtype=bool))


def run_episode(env, central_agent: CentralAgent, policy: DenseNet, critic: DenseNet,
                attention: AttentionHeads, episode_seed: int, greedy: bool = False,
                fixed_length: int | None = None, filtered_context: bool = False,
                local_history: bool = False) -> Trajectory:
    """Collect one full episode following the per-step protocol.

    At each step: featurize the history, let the controller choose L,
    materialize the context window, act with the shared policy on
    (observation, context), step the environment, and aggregate the agent
    rewards into the controller's reward through attention.  ``greedy``
    makes the agents take argmax actions (evaluation mode); the controller
    always samples from its own policy, seeded per episode.
    """
    obs = env.reset(int(episode_seed))
    rng_agents = np.random.default_rng([int(episode_seed), 1])
    rng_central = np.random.default_rng([int(episode_seed), 2])
    n = env.n_agents
    l_max = central_agent.l_max
    k0 = central_agent.schedule.k0
    hist_dim = env.obs_dim if local_history else env.global_dim
    policy_version = policy.version

    rows: list[np.ndarray] = []
    T = env.episode_len
    m_actions = central_agent.schedule.M
    observations = np.empty((T, n, env.obs_dim))
    actions = np.empty((T, n), dtype=np.int64)
    log_probs = np.empty((T, n))
    rewards = np.empty((T, n))
    dones = np.zeros(T)
    policy_inputs = None
    global_inputs = None
    context_lengths = np.empty(T, dtype=np.int64)
    attention_w = np.empty((T, n))
    central_rewards = np.empty(T)
    central_probs = np.empty((T, m_actions))
    central_values = np.empty(T)
    central_actions = np.empty(T, dtype=np.int64)
    central_feats = []
    central_trans: list[CentralTransition] = []

    done = False
    t = 0
    while not done:
        if t >= T:
            raise ValidationError("environment did not terminate at its episode length")
        history = HistoryWindow(np.stack(rows)) if rows else HistoryWindow(
            np.zeros((1, hist_dim)))
        if fixed_length is not None:
            decision = _forced_decision(central_agent.schedule, len(rows), fixed_length)
            feats = central_state(history, k0).features
        else:
            decision = central_agent.decide(history, rng=rng_central)
            feats = decision.features
        context_source = (lowpass_filtered_history(history, k0)
                          if filtered_context else history)
        context = select_context(context_source, decision.context_length, l_max)

        ctx_flat = np.concatenate([context.flat(), [context.length_feature]])
        step_inputs = np.hstack([obs, np.tile(ctx_flat, (n, 1))])
        logits = forward(policy, step_inputs)
        probs = _masked_probs(logits, np.ones_like(logits, dtype=bool))
        if greedy:
            acts = probs.argmax(axis=1)
        else:
            acts = np.array([rng_agents.choice(probs.shape[1], p=probs[i])
                             for i in range(n)])
        step_logp = np.log(probs[np.arange(n), acts])

        g_input = build_global_critic_input(obs, context, n_agents=n)
        v_global = float(forward(critic, g_input)[0])

        current_row = (obs.mean(axis=0) if local_history else env.global_features())
        next_obs, step_rewards, done = env.step(acts)

        f_central = np.concatenate([[decision.value_estimate], decision.probs])
        f_agents = [np.concatenate([[v_global], probs[i]]) for i in range(n)]
        omega = attention_weights(f_central, f_agents, attention)
        r_c = central_mod.central_reward(omega, step_rewards)

        if policy_inputs is None:
            policy_inputs = np.empty((T, n, step_inputs.shape[1]))
            global_inputs = np.empty((T, g_input.shape[0]))
        observations[t] = obs
        actions[t] = acts
        log_probs[t] = step_logp
        rewards[t] = step_rewards
        policy_inputs[t] = step_inputs
        global_inputs[t] = g_input
        context_lengths[t] = context.chosen_length
        attention_w[t] = omega
        central_rewards[t] = r_c
        central_probs[t] = decision.probs
        central_values[t] = decision.value_estimate
        central_actions[t] = decision.action_index
        central_feats.append(feats)
        central_trans.append(CentralTransition(
            features=feats, action_index=decision.action_index, mask=decision.mask,
            log_prob=decision.log_prob, reward=r_c,
            next_features=feats,  # patched below once the next state exists
            done=done,
        ))
        rows.append(current_row)
        obs = next_obs
        t += 1

    assert policy.version == policy_version, \
        "policy parameters changed mid-episode; updates must not overlap rollouts"
    dones[t - 1] = 1.0
    final_feats = central_state(HistoryWindow(np.stack(rows)), k0).features
    for i, tr in enumerate(central_trans):
        tr.next_features = central_feats[i + 1] if i + 1 < len(central_trans) else final_feats

    return Trajectory(
        observations=observations[:t], actions=actions[:t], log_probs=log_probs[:t],
        rewards=rewards[:t], dones=dones[:t], policy_inputs=policy_inputs[:t],
        global_inputs=global_inputs[:t], context_lengths=context_lengths[:t],
        attention=attention_w[:t], central_rewards=central_rewards[:t],
        central_transitions=central_trans, central_probs=central_probs[:t],
        central_values=central_values[:t], central_actions=central_actions[:t],
        episode_returns=rewards[:t].sum(axis=0),
    )


@dataclass
class TrainResult:
    """Everything one training run produced, ready for the harness to persist."""

    seed: int
    metrics_rows: list
    eval_rows: list
    decision_rows: list
    policy: DenseNet
    critic: DenseNet
    central_agent: CentralAgent
    attention: AttentionHeads
    baseline_return: float
    final_eval_return: float
    episodes_trained: int
    diverged: bool = False
    error: str = ""


def build_components(config, seed: int, env):
    """Nets, controller, and attention projections for one seeded run."""
    trainer = config.trainer
    hist_dim = env.obs_dim if trainer.local_history else env.global_dim
    schedule = central_mod.ActionSchedule(M=config.central.M, k0=config.central.k0,
                                          threshold=config.central.threshold)
    feature_dim = hist_dim * (2 * config.central.k0 - 1)
    l_max = config.central.l_max
    policy_in = env.obs_dim + l_max * hist_dim + 1
    critic_in = env.n_agents * env.obs_dim + l_max * hist_dim
    base = seed * 100
    policy = DenseNet.init([policy_in, *trainer.hidden_sizes, env.n_actions], base + 1)
    critic = DenseNet.init([critic_in, *trainer.hidden_sizes, 1], base + 2)
    agent = CentralAgent(schedule, feature_dim, config.central.hidden_sizes,
                         seed=base + 3, lr=config.central.lr, l_max=l_max)
    attention = AttentionHeads.init(
        query_dim=1 + config.central.M, key_dim=1 + env.n_actions,
        head_count=trainer.attention_heads, d_k=trainer.attention_dk, seed=base + 7)
    return policy, critic, agent, attention


def random_baseline(env, episodes: int, seed_base: int) -> float:
    """Mean episode return (averaged over agents) of uniform random actions."""
    totals = []
    for k in range(episodes):
        rng = np.random.default_rng([seed_base + k, 99])
        env.reset(seed_base + k)
        done = False
        ep_rewards = np.zeros(env.n_agents)
        while not done:
            acts = rng.integers(0, env.n_actions, size=env.n_agents)
            _, rewards, done = env.step(acts)
            ep_rewards += rewards
        totals.append(ep_rewards.mean())
    return float(np.mean(totals))


def evaluate(env, policy, critic, central_agent, attention, config, episodes: int,
             seed_base: int, episode_tag: int = 0):
    """Greedy-agent evaluation episodes (the controller still samples).

    Returns (summary dict, decision rows) where rows follow the decision
    log schema: episode, step, t, action_index, context_length,
    value_estimate.
    """
    returns = []
    length_counts: dict[int, int] = {}
    rows = []
    for k in range(episodes):
        traj = run_episode(env, central_agent, policy, critic, attention,
                           episode_seed=seed_base + k, greedy=True,
                           fixed_length=config.central.fixed_length,
                           filtered_context=config.central.filtered_context,
                           local_history=config.trainer.local_history)
        returns.append(float(traj.episode_returns.mean()))
        for t in range(traj.length):
            length = int(traj.context_lengths[t])
            length_counts[length] = length_counts.get(length, 0) + 1
            rows.append({
                "episode": episode_tag, "step": k, "t": t,
                "action_index": int(traj.central_actions[t]),
                "context_length": length,
                "value_estimate": float(traj.central_values[t]),
            })
    counts = np.array(list(length_counts.values()), dtype=np.float64)
    freq = counts / counts.sum()
    length_entropy = float(-(freq * np.log(freq)).sum())
    summary = {
        "mean_return": float(np.mean(returns)),
        "std_return": float(np.std(returns)),
        "length_entropy": length_entropy,
        "length_counts": dict(sorted(length_counts.items())),
    }
    return summary, rows


def _snapshot(nets) -> list:
    return [[p.copy() for p in net.parameters()] for net in nets]


def _restore(nets, snapshot) -> None:
    for net, params in zip(nets, snapshot):
        net.set_parameters([p.copy() for p in params])


def train(config, seed: int) -> TrainResult:
    """Run the full training loop for one seed.

    Per episode: collect a trajectory, update the controller (unless a
    fixed-length baseline), compute per-agent GAE against the centralized
    critic, log the goal-alignment diagnostic, then run the clipped
    surrogate epochs on the shared policy and critic.  Evaluation happens
    every ``eval_interval`` episodes (greedy agents); on divergence the
    last evaluated parameters are restored and the run stops early.
    """
    from .envs import SpreadEnv
    trainer = config.trainer
    env = SpreadEnv(trainer.episode_len)
    policy, critic, agent, attention = build_components(config, seed, env)
    policy_opt = AdamOptimizer(policy, trainer.lr)
    critic_opt = AdamOptimizer(critic, trainer.lr)
    base_seed = seed * 1_000_003  # per-episode seeds are base_seed + episode index
    eval_base = base_seed + 500_000_000
    fixed = config.central.fixed_length

    baseline = random_baseline(env, trainer.eval_episodes, eval_base + 900_000)
    metrics_rows, eval_rows, decision_rows = [], [], []

    def run_eval(tag):
        summary, rows = evaluate(env, policy, critic, agent, attention, config,
                                 trainer.eval_episodes, eval_base + tag * 1000,
                                 episode_tag=tag)
        eval_rows.append({"episode": tag, "eval_mean_return": summary["mean_return"],
                          "eval_std_return": summary["std_return"],
                          "length_entropy": summary["length_entropy"]})
        decision_rows.extend(rows)
        return summary

    run_eval(0)
    nets = [policy, critic, agent.policy, agent.critic]
    last_good = _snapshot(nets)
    diverged = False
    error = ""
    episodes_done = 0

    for ep in range(trainer.episodes):
        try:
            traj = run_episode(env, agent, policy, critic, attention,
                               episode_seed=base_seed + ep,
                               fixed_length=fixed,
                               filtered_context=config.central.filtered_context,
                               local_history=trainer.local_history)
            if fixed is None:
                agent.update(traj.central_transitions, mode=config.central.mode,
                             gamma=trainer.gamma, lam=trainer.lam,
                             clip_eps=trainer.clip_eps, epochs=trainer.epochs_central,
                             entropy_coef=trainer.entropy_coef, zeta=config.central.lr)
            T, n = traj.rewards.shape
            values = forward(critic, traj.global_inputs)[:, 0]
            next_values = np.append(values[1:], 0.0)
            advantages = np.empty((T, n))
            returns = np.empty((T, n))
            for i in range(n):
                advantages[:, i], returns[:, i] = compute_gae(
                    traj.rewards[:, i], values, next_values, traj.dones,
                    trainer.gamma, trainer.lam)
            alignment = alignment_diagnostic(policy, traj, advantages, trainer.gamma)
            batch = PpoBatch(
                policy_inputs=traj.policy_inputs.reshape(T * n, -1),
                actions=traj.actions.reshape(-1),
                masks=np.ones((T * n, env.n_actions), dtype=bool),
                old_log_probs=traj.log_probs.reshape(-1),
                advantages=advantages.reshape(-1),
                critic_inputs=traj.global_inputs,
                returns=returns.mean(axis=1),
            )
            stats = ppo_update(batch, policy, critic, clip_eps=trainer.clip_eps,
                               epochs=trainer.epochs_decentralized,
                               entropy_coef=trainer.entropy_coef, lr=trainer.lr,
                               policy_opt=policy_opt, critic_opt=critic_opt,
                               normalize_advantages=trainer.normalize_advantages)
        except DivergenceError as exc:
            _restore(nets, last_good)
            diverged = True
            error = str(exc)
            break
        episodes_done = ep + 1
        central_entropy = float(np.mean(
            [_entropy_row(p) for p in traj.central_probs]))
        metrics_rows.append({
            "episode": ep + 1,
            "mean_return": float(traj.episode_returns.mean()),
            "central_entropy": central_entropy,
            "clip_fraction": stats["clip_fraction"],
            "value_loss": stats["value_loss"],
            "alignment_sign": int(np.sign(alignment)),
        })
        if (ep + 1) % trainer.eval_interval == 0:
            run_eval(ep + 1)
            last_good = _snapshot(nets)

    if not diverged and (trainer.episodes == 0 or episodes_done % trainer.eval_interval != 0):
        if trainer.episodes > 0:
            run_eval(episodes_done)
    final_eval = eval_rows[-1]["eval_mean_return"]
    return TrainResult(seed=seed, metrics_rows=metrics_rows, eval_rows=eval_rows,
                       decision_rows=decision_rows, policy=policy, critic=critic,
                       central_agent=agent, attention=attention,
                       baseline_return=baseline, final_eval_return=final_eval,
                       episodes_trained=episodes_done, diverged=diverged, error=error)


def _entropy_row(probs: np.ndarray) -> float:
    nz = probs[probs > 0.0]
    return float(-(nz * np.log(nz)).sum())


def alignment_diagnostic(policy: DenseNet, trajectory: Trajectory,
                         advantages: np.ndarray, gamma: float) -> float:
    """Inner product between the controller-weighted and plain policy gradients.

    Both gradients share the form sum_t gamma^t sum_i w_ti * grad log
    pi(a|s) * A_ti; the controller side weights each agent by its
    attention weight, the decentralized side weights every agent equally.
    A positive value means the controller's reward pulls the shared policy
    in the same direction as the agents' own objectives.
    """
    T, n = trajectory.rewards.shape
    disc = gamma ** np.arange(T)
    x = trajectory.policy_inputs.reshape(T * n, -1)
    logits, cache = forward_cached(policy, x)
    probs = _masked_probs(logits, np.ones_like(logits, dtype=bool))
    acts = trajectory.actions.reshape(-1)
    base = -probs
    base[np.arange(T * n), acts] += 1.0

    w_central = (disc[:, None] * trajectory.attention * advantages).reshape(-1)
    w_plain = (disc[:, None] * np.ones((T, n)) * advantages).reshape(-1)
    g_central = backprop(policy, x, base * w_central[:, None], cache=cache).flat()
    g_plain = backprop(policy, x, base * w_plain[:, None], cache=cache).flat()
    return float(g_central @ g_plain)
