"""Closed-form study of how observation-window length trades off against drift.

The latent world is the discretized mean-reverting diffusion from the
envs module.  ``kalman_posterior`` is the exact linear-Gaussian filter
for a stationary parameter set and is the calibration oracle: its
variance is checked against brute-force Bayesian grid integration and is
monotone non-increasing in the window length.

The benchmark experiments ask a different question: how well does a
*fixed* processing pipeline do when the world drifts?  There the
estimator runs the same filter recursion but always under one nominal
parameter set, while the true mean-reversion rate switches between
regimes.  Its true mean-squared error is computable exactly from the
joint Gaussian law of (window observations, current latent), and unlike
the matched posterior variance it has a genuine interior optimum: long
windows average in stale observations that the nominal gains weight too
heavily.  Per-step information loss is half the log ratio of that MSE to
the best achievable over the candidate lengths, so the optimal window
tracks the active regime and any fixed choice pays a linear-in-time
price.

Losses are deterministic given the parameter schedule (they are
expectations, not sample quantities); randomness enters only through the
observation trace the learned controller conditions on.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .central import ActionSchedule, CentralAgent, CentralTransition
from .envs import latent_reset, latent_step, stationary_variance
from .errors import ValidationError
from .spectral import HistoryWindow

TIE_TOL = 1e-9  # relative plateau tolerance when picking the optimal window


@dataclass(frozen=True)
class OUParams:
    """Stationary model parameters assumed by the estimator."""

    theta: float
    eta: float
    sigma_eps: float
    dt: float

    def __post_init__(self):
        if self.theta <= 0 or self.eta < 0 or self.sigma_eps < 0 or self.dt <= 0:
            raise ValidationError("need theta > 0, eta >= 0, sigma_eps >= 0, dt > 0")
        if self.theta * self.dt >= 1.0:
            raise ValidationError("theta * dt must be < 1 for a stable discretization")

    @property
    def a(self) -> float:
        return 1.0 - self.theta * self.dt

    @property
    def q(self) -> float:
        return self.eta**2 * self.dt

    @property
    def r(self) -> float:
        return self.sigma_eps**2

    @property
    def prior_var(self) -> float:
        return stationary_variance(self.theta, self.eta)


@dataclass(frozen=True)
class PosteriorEstimate:
    mean: float
    variance: float
    window: int


def kalman_posterior(observations, params: OUParams) -> PosteriorEstimate:
    """Exact filter over the L most recent past observations.

    Starts from the stationary prior N(0, eta^2 / (2 theta)) at the time
    of the oldest observation, runs update-then-predict per observation,
    and lands on the current latent (one transition after the newest
    observation).  L = 0 returns the prior itself.  With sigma_eps -> 0
    the newest observation pins the previous state exactly and the
    variance collapses to the one-step process noise.
    """
    obs = np.asarray(observations, dtype=np.float64).reshape(-1)
    if obs.size and not np.all(np.isfinite(obs)):
        raise ValidationError("observations contain non-finite values")
    mean, var = 0.0, params.prior_var
    a, q, r = params.a, params.q, params.r
    for o in obs:
        gain = var / (var + r) if (var + r) > 0.0 else 0.0
        mean = mean + gain * (o - mean)
        var = (1.0 - gain) * var
        mean = a * mean
        var = a * a * var + q
    return PosteriorEstimate(mean=float(mean), variance=float(var), window=obs.size)


def window_gain_vector(params: OUParams, length: int):
    """Affine weights the window-L filter puts on its observations.

    The filter estimate is linear in the window (the prior mean is zero):
    xi_hat = sum_u c[u] * o[u] with o ordered oldest first.  Returns
    (c, reported_variance).
    """
    if length < 0:
        raise ValidationError("window length must be >= 0")
    c = np.zeros(length)
    var = params.prior_var
    a, q, r = params.a, params.q, params.r
    for u in range(length):
        gain = var / (var + r) if (var + r) > 0.0 else 0.0
        c *= (1.0 - gain)
        c[u] = gain
        var = (1.0 - gain) * var
        c *= a
        var = a * a * var + q
    return c, float(var)


def optimal_window(t: int, observations, params: OUParams, candidates,
                   variance_fn=None, tie_tol: float = TIE_TOL):
    """Exhaustively minimize the window variance over the candidate lengths.

    Ties within ``tie_tol`` (relative) break toward the smaller length, so
    once extra observations stop helping (fast drift makes the variance
    plateau) the shorter window wins.  ``variance_fn`` defaults to the
    matched ``kalman_posterior`` variance on the given observations; the
    regime benchmark passes its misspecification-aware evaluator instead.
    Returns (l_star, variance at l_star).
    """
    cands = sorted(int(c) for c in candidates)
    if not cands:
        raise ValidationError("optimal_window needs at least one candidate")
    if any(c < 0 or c > t for c in cands):
        raise ValidationError(f"candidates must lie in [0, t={t}]")
    if variance_fn is None:
        obs = np.asarray(observations, dtype=np.float64).reshape(-1)

        def variance_fn(length):
            window = obs[obs.size - length:] if length > 0 else obs[:0]
            return kalman_posterior(window, params).variance

    variances = {c: float(variance_fn(c)) for c in cands}
    v_min = min(variances.values())
    for c in cands:  # ascending, so the smallest tied candidate wins
        if variances[c] <= v_min * (1.0 + tie_tol):
            return c, variances[c]
    raise AssertionError("unreachable: minimum must be attained")


def info_loss(length: int, l_star: int, variances) -> float:
    """Per-step information loss 0.5 * log(var[L] / var[L*]).

    ``variances`` maps candidate length -> variance; the value at the
    optimal length defines the floor.  A ratio below 1 by more than 1e-9
    means the caller's floor was not the minimum and raises.
    """
    v = float(variances[length])
    v_min = float(variances[l_star])
    if v <= 0.0 or v_min <= 0.0:
        raise ValidationError("variances must be positive")
    if v < v_min * (1.0 - 1e-9):
        raise ValidationError(
            f"variance at L={length} is below the declared minimum at L*={l_star}")
    if length == l_star:
        return 0.0
    return max(0.0, 0.5 * float(np.log(v / v_min)))


@dataclass(frozen=True)
class ConvexityFit:
    """Local quadratic fit of the variance profile around its minimum."""

    k_hat: float | None
    r2: float | None
    l_star: int
    applicable: bool


def convexity_diagnostic(variances, neighborhood: int = 4) -> ConvexityFit:
    """Fit var[L] - var[L*] against 0.5 * (L - L*)^2 near the minimum.

    Returns a non-applicable result (no error) for flat profiles.  Needs
    at least five candidate lengths to say anything.
    """
    profile = {int(k): float(v) for k, v in dict(variances).items()}
    if len(profile) < 5:
        raise ValidationError("convexity diagnostic needs >= 5 candidate lengths")
    v_min = min(profile.values())
    l_star = next(length for length in sorted(profile)
                  if profile[length] <= v_min * (1.0 + TIE_TOL))
    near = [(length, v) for length, v in sorted(profile.items())
            if abs(length - l_star) <= neighborhood]
    x = np.array([0.5 * (length - l_star) ** 2 for length, _ in near])
    y = np.array([v - profile[l_star] for _, v in near])
    if np.allclose(y, 0.0, atol=1e-15) or not np.any(x > 0):
        return ConvexityFit(k_hat=None, r2=None, l_star=l_star, applicable=False)
    k_hat = float((x @ y) / (x @ x))
    ss_res = float(((y - k_hat * x) ** 2).sum())
    ss_tot = float((y**2).sum())
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else None
    return ConvexityFit(k_hat=k_hat, r2=r2, l_star=l_star, applicable=True)


def theta_schedule(T: int, theta_a: float, theta_b: float, period: int) -> np.ndarray:
    """Per-transition mean-reversion rates alternating every ``period`` steps."""
    if period < 1:
        raise ValidationError("switch period must be >= 1")
    segments = np.arange(T) // period
    return np.where(segments % 2 == 0, theta_a, theta_b)


def simulate_observations(theta_seq, params: OUParams, seed: int):
    """Roll the latent process with per-step drift.

    Returns (xi, obs) with xi[0..T] and obs[1..T]; obs[u] measures xi[u]
    through additive noise, obs[0] is NaN (the initial latent is never
    observed, decisions only look at u >= 1).
    """
    theta_seq = np.asarray(theta_seq, dtype=np.float64)
    T = len(theta_seq)
    rng = np.random.default_rng(seed)
    state = latent_reset(float(theta_seq[0]), params.eta, params.sigma_eps,
                         params.dt, rng=rng)
    xi = np.empty(T + 1)
    obs = np.empty(T + 1)
    xi[0] = state.xi
    obs[0] = np.nan
    for s in range(T):
        state = replace(state, theta_ou=float(theta_seq[s]))
        state, o = latent_step(state, rng)
        xi[s + 1] = state.xi
        obs[s + 1] = o
    return xi, obs


class WindowMseEvaluator:
    """True MSE of the nominal-parameter window filter under a drifting world.

    ``theta_seq[s]`` governs the true transition s -> s+1; the estimator's
    gains come from ``params`` alone.  Both the estimator and the world
    are linear-Gaussian, so the error variance of the window-L estimate
    of xi_t from observations at u = t-L .. t-1 is exact:

        mse = Var(xi_t) - 2 c . Cov(o_win, xi_t) + c' Cov(o_win, o_win) c

    and is independent of the realized observations.  When the schedule
    is constant and equal to the nominal theta, this reduces to the
    matched filter's posterior variance (up to the initial transient).
    """

    def __init__(self, theta_seq, params: OUParams):
        self.params = params
        theta_seq = np.asarray(theta_seq, dtype=np.float64)
        self.T = len(theta_seq)
        a_seq = 1.0 - theta_seq * params.dt
        if np.any(a_seq <= 0.0) or np.any(a_seq >= 1.0):
            raise ValidationError("every theta in the schedule needs 0 < theta*dt < 1")
        latent_var = np.empty(self.T + 1)
        latent_var[0] = stationary_variance(float(theta_seq[0]), params.eta)
        for s in range(self.T):
            latent_var[s + 1] = a_seq[s] ** 2 * latent_var[s] + params.q
        self.latent_var = latent_var
        # log prod of decay factors up to each time: Cov(xi_i, xi_j) =
        # Var(xi_min) * exp(log_decay[max] - log_decay[min])
        self.log_decay = np.concatenate([[0.0], np.cumsum(np.log(a_seq))])
        self._gain_cache: dict[int, np.ndarray] = {}

    def _gains(self, length: int) -> np.ndarray:
        c = self._gain_cache.get(length)
        if c is None:
            c, _ = window_gain_vector(self.params, length)
            self._gain_cache[length] = c
        return c

    def mse(self, t: int, length: int) -> float:
        """Error variance of estimating xi_t from obs at u = t-L .. t-1."""
        if t < 1 or t > self.T:
            raise ValidationError(f"t must be in [1, {self.T}], got {t}")
        if length < 0 or length > t - 1:
            raise ValidationError(
                f"window length {length} exceeds available history at t={t}")
        if length == 0:
            return float(self.latent_var[t])
        idx = np.arange(t - length, t)
        v = self.latent_var[idx]
        ld = self.log_decay[idx]
        # upper[i, j] = Cov(xi_i, xi_j) assuming i <= j; mirror for the rest
        upper = v[:, None] * np.exp(ld[None, :] - ld[:, None])
        pos = np.arange(length)
        cov = np.where(pos[:, None] <= pos[None, :], upper, upper.T)
        cov = cov + np.eye(length) * self.params.r
        cross = v * np.exp(self.log_decay[t] - ld)
        c = self._gains(length)
        return float(self.latent_var[t] - 2.0 * (c @ cross) + c @ cov @ c)

    def variance_profile(self, t: int, candidates) -> dict:
        """Mapping candidate length -> MSE at step t (lengths capped at t-1)."""
        return {int(L): self.mse(t, min(int(L), t - 1)) for L in candidates}


def _fit_linear(ts: np.ndarray, ys: np.ndarray) -> dict:
    coeffs, _, _, _ = np.linalg.lstsq(
        np.column_stack([ts, np.ones_like(ts)]), ys, rcond=None)
    pred = coeffs[0] * ts + coeffs[1]
    ss_res = float(((ys - pred) ** 2).sum())
    ss_tot = float(((ys - ys.mean()) ** 2).sum())
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return {"model": "linear", "slope_or_exponent": float(coeffs[0]), "r2": r2}


def _fit_power(ts: np.ndarray, ys: np.ndarray) -> dict:
    keep = (ys > 0) & (ts > 0)
    if keep.sum() < 10:
        return {"model": "flat", "slope_or_exponent": 0.0, "r2": 1.0}
    lt, ly = np.log(ts[keep]), np.log(ys[keep])
    coeffs, _, _, _ = np.linalg.lstsq(
        np.column_stack([lt, np.ones_like(lt)]), ly, rcond=None)
    pred = coeffs[0] * lt + coeffs[1]
    ss_res = float(((ly - pred) ** 2).sum())
    ss_tot = float(((ly - ly.mean()) ** 2).sum())
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return {"model": "power", "slope_or_exponent": float(coeffs[0]), "r2": r2}


@dataclass
class RegretReport:
    """Per-step and cumulative information loss for every policy.

    ``losses`` and ``cumulative`` are keyed by policy name ("fixed_8",
    "adaptive_oracle", "adaptive_learned"); the arrays align with
    ``steps``.  ``gap_at_horizon`` is the cumulative-loss lead of the
    adaptive policy over the *best* fixed length (the binding case).
    ``tracking_beta`` is the fitted decay exponent of the learned
    policy's distance to the optimal length, and ``convexity`` the local
    quadratic fit of the variance profile at the final step.
    """

    horizon: int
    steps: np.ndarray
    losses: dict
    cumulative: dict
    fits: dict
    l_star_series: np.ndarray
    sigma_min_series: np.ndarray
    gap_at_horizon: float
    convexity: ConvexityFit | None = None
    tracking_beta: float | None = None
    seed: int = 0
    chosen_lengths: np.ndarray | None = None


@dataclass
class LearnedControllerConfig:
    """Knobs for the length controller trained inside the benchmark."""

    feature_window: int = 64
    feature_k0: int = 8
    hidden_sizes: tuple = (32, 32)
    chunk: int = 500
    lr: float = 1e-3
    gamma: float = 0.9
    lam: float = 0.95
    clip_eps: float = 0.2
    epochs: int = 10
    entropy_coef: float = 0.01
    seed_offset: int = 7000


def regret_experiment(params: OUParams, T: int, fixed_lengths, adaptive: str = "oracle",
                      seed: int = 0, theta_seq=None,
                      controller: LearnedControllerConfig | None = None) -> RegretReport:
    """Run the fixed-versus-adaptive cumulative-loss benchmark.

    ``theta_seq`` is the true per-step drift schedule (defaults to the
    time-homogeneous ``params.theta``, the negative control in which one
    fixed length stays permanently optimal).  ``adaptive`` picks how the
    adaptive curve is produced: "oracle" tracks the optimal length
    exactly (per-step loss identically zero); "learned" trains the
    context-length controller online on reward = -loss.
    """
    if T < 1000:
        raise ValidationError("regret experiment needs T >= 1000 for meaningful fits")
    if adaptive not in ("oracle", "learned"):
        raise ValidationError(f"adaptive must be 'oracle' or 'learned', got {adaptive!r}")
    cands = sorted(int(c) for c in fixed_lengths)
    if not cands or cands[0] < 1:
        raise ValidationError("fixed lengths must be positive integers")
    if theta_seq is None:
        theta_seq = np.full(T, params.theta)
    theta_seq = np.asarray(theta_seq, dtype=np.float64)
    if len(theta_seq) != T:
        raise ValidationError("theta schedule length must equal T")

    evaluator = WindowMseEvaluator(theta_seq, params)
    steps = np.arange(2, T + 1)  # first decision once one past obs exists
    n_steps = len(steps)

    l_star_series = np.empty(n_steps, dtype=np.int64)
    sigma_min_series = np.empty(n_steps)
    fixed_losses = {L: np.empty(n_steps) for L in cands}
    for i, t in enumerate(steps):
        # profiles cap each candidate at the t-1 observations that exist, so
        # the search itself can always see the full candidate list
        profile = evaluator.variance_profile(int(t), cands)
        l_star, v_min = optimal_window(max(cands), None, params, cands,
                                       variance_fn=lambda L, p=profile: p[L])
        l_star_series[i] = l_star
        sigma_min_series[i] = v_min
        for L in cands:
            fixed_losses[L][i] = info_loss(L, l_star, profile)

    losses = {f"fixed_{L}": fixed_losses[L] for L in cands}
    chosen = None
    tracking_beta = None
    if adaptive == "oracle":
        losses["adaptive_oracle"] = np.zeros(n_steps)
        adaptive_key = "adaptive_oracle"
    else:
        learned_losses, chosen = _run_learned_controller(
            evaluator, theta_seq, params, cands, steps,
            controller or LearnedControllerConfig(), seed)
        losses["adaptive_learned"] = learned_losses
        adaptive_key = "adaptive_learned"
        err = np.abs(chosen - l_star_series).astype(np.float64)
        tracking_beta = _tracking_exponent(steps, err)

    cumulative = {k: np.cumsum(v) for k, v in losses.items()}
    fits = {}
    ts = steps.astype(np.float64)
    for key, cum in cumulative.items():
        fits[key] = _fit_linear(ts, cum) if key.startswith("fixed_") else _fit_power(ts, cum)

    best_fixed = min(cumulative[f"fixed_{L}"][-1] for L in cands)
    gap = best_fixed - cumulative[adaptive_key][-1]
    convexity = convexity_diagnostic(evaluator.variance_profile(T, cands)) \
        if len(cands) >= 5 else None
    return RegretReport(
        horizon=T, steps=steps, losses=losses, cumulative=cumulative, fits=fits,
        l_star_series=l_star_series, sigma_min_series=sigma_min_series,
        gap_at_horizon=float(gap), convexity=convexity,
        tracking_beta=tracking_beta, seed=seed, chosen_lengths=chosen,
    )


def _tracking_exponent(steps: np.ndarray, err: np.ndarray) -> float | None:
    """Fitted beta in |L_chosen - L*| ~ t^-beta over block averages."""
    blocks = 20
    edges = np.linspace(0, len(steps), blocks + 1, dtype=int)
    ts, es = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        if b > a:
            ts.append(steps[a:b].mean())
            es.append(err[a:b].mean() + 1e-3)
    fit = _fit_power(np.asarray(ts), np.asarray(es))
    return -fit["slope_or_exponent"] if fit["model"] == "power" else None


def _run_learned_controller(evaluator: WindowMseEvaluator, theta_seq, params: OUParams,
                            cands, steps, cfg: LearnedControllerConfig, seed: int):
    """Train the context-length controller online against reward = -loss."""
    T = evaluator.T
    k0 = max(cands)
    schedule = ActionSchedule(M=len(cands) + 1, k0=k0, threshold=2 * k0 - 1)
    feat_dim = 2 * cfg.feature_k0 - 1
    agent = CentralAgent(schedule, feature_dim=feat_dim,
                         hidden_sizes=cfg.hidden_sizes,
                         seed=seed + cfg.seed_offset, lr=cfg.lr, l_max=k0)
    rng = np.random.default_rng([seed, 11])
    _, obs = simulate_observations(theta_seq, params, seed)
    scale = 1.0 / np.sqrt(cfg.feature_window)

    losses = np.empty(len(steps))
    chosen = np.empty(len(steps), dtype=np.int64)
    pending: list[CentralTransition] = []
    prev = None  # (features, action_index, mask, log_prob, reward)

    for i, t in enumerate(steps):
        t = int(t)
        lo = max(1, t - cfg.feature_window)
        window = obs[lo:t] * scale
        history = HistoryWindow(window[:, None])
        decision = agent.decide(history, rng=rng)
        length = min(decision.context_length, t - 1)
        profile = evaluator.variance_profile(t, cands)
        if length == 0:
            v_choice = evaluator.mse(t, 0)
        else:
            v_choice = profile[length] if length in profile \
                else evaluator.mse(t, length)
        v_min = min(profile.values())
        loss = max(0.0, 0.5 * float(np.log(v_choice / v_min)))
        losses[i] = loss
        chosen[i] = length

        if prev is not None:
            feats, act, mask, logp, rew = prev
            pending.append(CentralTransition(
                features=feats, action_index=act, mask=mask, log_prob=logp,
                reward=rew, next_features=decision.features, done=False))
        prev = (decision.features, decision.action_index, decision.mask,
                decision.log_prob, -loss)

        if len(pending) >= cfg.chunk or i == len(steps) - 1:
            if prev is not None:
                feats, act, mask, logp, rew = prev
                pending.append(CentralTransition(
                    features=feats, action_index=act, mask=mask, log_prob=logp,
                    reward=rew, next_features=decision.features, done=True))
                prev = None
            agent.update(pending, mode="ppo", gamma=cfg.gamma, lam=cfg.lam,
                         clip_eps=cfg.clip_eps, epochs=cfg.epochs,
                         entropy_coef=cfg.entropy_coef, zeta=cfg.lr)
            pending = []
    return losses, chosen
