"""Minimal dense function approximators and attention scoring.

Policies and critics here are plain ReLU MLPs with an identity output
layer, stored as numpy weight/bias lists with hand-written forward and
backward passes (the backward pass is validated against central finite
differences in the test suite).  Attention projections are fixed seeded
random matrices; only the nets themselves are trained, via Adam.

Forward passes and attention scoring never mutate parameters and are safe
to call concurrently; parameter updates are the trainer's job and happen
on a single thread.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DivergenceError, ValidationError


@dataclass
class DenseNet:
    """ReLU MLP: hidden layers rectified, output layer linear.

    Parameters live in one contiguous buffer (``flat_parameters``) with
    the weight/bias lists as views into it, which keeps optimizer steps
    cheap.  ``version`` counts parameter updates; rollout code asserts it
    stays constant across an episode so every agent provably shares one
    parameter vector.
    """

    layer_sizes: list
    weights: list  # weights[i]: (layer_sizes[i], layer_sizes[i+1])
    biases: list  # biases[i]: (layer_sizes[i+1],)
    version: int = 0

    def __post_init__(self):
        total = sum(w.size for w in self.weights) + sum(b.size for b in self.biases)
        buf = np.empty(total)
        views = []
        offset = 0
        for arr in list(self.weights) + list(self.biases):
            view = buf[offset:offset + arr.size].reshape(arr.shape)
            view[...] = arr
            views.append(view)
            offset += arr.size
        n = len(self.weights)
        self.weights = views[:n]
        self.biases = views[n:]
        self._buffer = buf

    @classmethod
    def init(cls, layer_sizes, seed: int) -> "DenseNet":
        """Seeded uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization."""
        if len(layer_sizes) < 2 or any(int(s) < 1 for s in layer_sizes):
            raise ValidationError(f"bad layer sizes: {layer_sizes}")
        rng = np.random.default_rng(seed)
        sizes = [int(s) for s in layer_sizes]
        weights, biases = [], []
        for n_in, n_out in zip(sizes[:-1], sizes[1:]):
            bound = 1.0 / np.sqrt(n_in)
            weights.append(rng.uniform(-bound, bound, size=(n_in, n_out)))
            biases.append(rng.uniform(-bound, bound, size=n_out))
        return cls(layer_sizes=sizes, weights=weights, biases=biases)

    @property
    def n_params(self) -> int:
        return self._buffer.size

    def parameters(self) -> list:
        return self.weights + self.biases

    def flat_parameters(self) -> np.ndarray:
        return self._buffer

    def set_parameters(self, params) -> None:
        n = len(self.weights)
        for i, w in enumerate(params[:n]):
            if w.shape != self.weights[i].shape:
                raise ValidationError("weight shape mismatch when loading parameters")
            self.weights[i][...] = w
        for i, b in enumerate(params[n:]):
            if b.shape != self.biases[i].shape:
                raise ValidationError("bias shape mismatch when loading parameters")
            self.biases[i][...] = b
        self.version += 1


def _forward_cached(net: DenseNet, x: np.ndarray):
    """Forward pass keeping pre-activations for the backward pass."""
    activations = [x]
    h = x
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = h @ w + b
        if i < last:
            z = np.maximum(z, 0.0)
        activations.append(z)
        h = z
    return h, activations


def _check_input(net: DenseNet, x) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != net.layer_sizes[0]:
        raise ValidationError(
            f"input shape {np.shape(x)} does not match first layer {net.layer_sizes[0]}"
        )
    return arr


def forward(net: DenseNet, x) -> np.ndarray:
    """Evaluate the net on a single vector or a (batch, n_in) matrix."""
    arr = _check_input(net, x)
    out, _ = _forward_cached(net, arr)
    return out[0] if np.ndim(x) == 1 else out


def forward_cached(net: DenseNet, x):
    """Batched forward returning (output, activation cache) for backprop reuse."""
    arr = _check_input(net, x)
    return _forward_cached(net, arr)


@dataclass
class Gradients:
    weights: list
    biases: list

    def flat(self) -> np.ndarray:
        return np.concatenate([g.ravel() for g in self.weights + self.biases])


def backprop(net: DenseNet, x, output_gradient, cache=None) -> Gradients:
    """Parameter gradients of sum(output * output_gradient) w.r.t. net params.

    Batched inputs accumulate (sum) over the batch; scale the output
    gradient by 1/B beforehand for a mean.  ``cache`` accepts the
    activation list from a prior ``forward_cached`` call on the same
    input to skip the redundant forward pass.
    """
    arr = _check_input(net, x)
    grad_out = np.asarray(output_gradient, dtype=np.float64)
    if grad_out.ndim == 1:
        grad_out = grad_out[None, :]
    if grad_out.shape != (arr.shape[0], net.layer_sizes[-1]):
        raise ValidationError(
            f"output gradient shape {grad_out.shape} does not match "
            f"({arr.shape[0]}, {net.layer_sizes[-1]})"
        )
    acts = cache if cache is not None else _forward_cached(net, arr)[1]
    w_grads = [None] * len(net.weights)
    b_grads = [None] * len(net.biases)
    delta = grad_out
    for i in range(len(net.weights) - 1, -1, -1):
        w_grads[i] = acts[i].T @ delta
        b_grads[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ net.weights[i].T) * (acts[i] > 0.0)
    return Gradients(weights=w_grads, biases=b_grads)


def masked_softmax(logits, mask) -> np.ndarray:
    """Softmax over the unmasked entries; masked entries get exactly 0."""
    z = np.asarray(logits, dtype=np.float64).reshape(-1)
    m = np.asarray(mask).reshape(-1).astype(bool)
    if z.shape != m.shape:
        raise ValidationError("logits and mask lengths differ")
    if not m.any():
        raise ValidationError("masked_softmax needs at least one unmasked entry")
    out = np.zeros_like(z)
    zs = z[m]
    e = np.exp(zs - zs.max())
    out[m] = e / e.sum()
    return out


def entropy(probs) -> float:
    """Shannon entropy in nats, treating 0 * log 0 as 0."""
    p = np.asarray(probs, dtype=np.float64)
    nz = p[p > 0.0]
    return float(-(nz * np.log(nz)).sum())


@dataclass
class AttentionHeads:
    """Fixed random query/key projections shared across an experiment.

    The projections are drawn once from a seeded uniform distribution
    scaled by 1/sqrt(fan_in) and never trained, so the aggregated reward
    stays a stationary function of the agents' signals.
    """

    head_count: int
    d_k: int
    w_q: list  # per head: (d_k, query_dim)
    w_k: list  # per head: (d_k, key_dim)
    seed: int

    @classmethod
    def init(cls, query_dim: int, key_dim: int, head_count: int = 4, d_k: int = 16,
             seed: int = 0) -> "AttentionHeads":
        if head_count < 1 or d_k < 1 or query_dim < 1 or key_dim < 1:
            raise ValidationError("attention dimensions must be positive")
        rng = np.random.default_rng(seed)
        w_q, w_k = [], []
        for _ in range(head_count):
            w_q.append(rng.uniform(-1, 1, size=(d_k, query_dim)) / np.sqrt(query_dim))
            w_k.append(rng.uniform(-1, 1, size=(d_k, key_dim)) / np.sqrt(key_dim))
        return cls(head_count=head_count, d_k=d_k, w_q=w_q, w_k=w_k, seed=seed)

    def stacks(self):
        """(H, d_k, qdim) and (H, d_k, kdim) views for vectorized scoring."""
        return np.stack(self.w_q), np.stack(self.w_k)


def attention_weights(f_central, f_agents, heads: AttentionHeads) -> np.ndarray:
    """Per-agent weights: scaled dot-product softmax per head, averaged over heads.

    Returns a length-n simplex vector (non-negative, sums to 1).
    """
    q_in = np.asarray(f_central, dtype=np.float64).reshape(-1)
    keys_in = [np.asarray(f, dtype=np.float64).reshape(-1) for f in f_agents]
    if len(keys_in) < 1:
        raise ValidationError("attention needs at least one agent feature vector")
    if q_in.shape[0] != heads.w_q[0].shape[1]:
        raise ValidationError("central feature dim does not match query projection")
    for f in keys_in:
        if f.shape[0] != heads.w_k[0].shape[1]:
            raise ValidationError("agent feature dim does not match key projection")
    key_mat = np.stack(keys_in)  # (n, key_dim)
    wq, wk = heads.stacks()
    queries = wq @ q_in  # (H, d_k)
    keys = np.einsum("hdk,nk->hnd", wk, key_mat)  # (H, n, d_k)
    scores = np.einsum("hnd,hd->hn", keys, queries) / np.sqrt(heads.d_k)
    z = scores - scores.max(axis=1, keepdims=True)
    e = np.exp(z)
    per_head = e / e.sum(axis=1, keepdims=True)
    return per_head.mean(axis=0)


@dataclass
class AdamState:
    """First/second moment accumulators, one pair per parameter array."""

    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    step: int = 0

    @classmethod
    def for_params(cls, params) -> "AdamState":
        return cls(m=[np.zeros_like(p) for p in params],
                   v=[np.zeros_like(p) for p in params], step=0)


def adam_step(params, grads, state: AdamState, lr: float, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8):
    """One Adam update in the descent direction of ``grads``.

    Returns (new_params, new_state); inputs are not mutated.  Non-finite
    gradients raise DivergenceError since they signal a run gone bad.
    """
    if lr <= 0:
        raise ValidationError(f"learning rate must be positive, got {lr}")
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValidationError("params/grads/state length mismatch")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ValidationError("gradient shape does not match parameter shape")
        if not np.all(np.isfinite(g)):
            raise DivergenceError("non-finite gradient in adam_step")
    step = state.step + 1
    new_params, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m1 = beta1 * m + (1 - beta1) * g
        v1 = beta2 * v + (1 - beta2) * g * g
        m_hat = m1 / (1 - beta1**step)
        v_hat = v1 / (1 - beta2**step)
        new_params.append(p - lr * m_hat / (np.sqrt(v_hat) + eps))
        new_m.append(m1)
        new_v.append(v1)
    return new_params, AdamState(m=new_m, v=new_v, step=step)


class AdamOptimizer:
    """Stateful wrapper updating a DenseNet in place.

    Same math as ``adam_step`` but fused over the net's flat parameter
    buffer, which keeps the per-update overhead independent of the layer
    count.
    """

    def __init__(self, net: DenseNet, lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.net = net
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = np.zeros(net.n_params)
        self.v = np.zeros(net.n_params)
        self.step = 0

    def apply(self, grads: Gradients) -> None:
        g = grads.flat()
        if not np.all(np.isfinite(g)):
            raise DivergenceError("non-finite gradient in optimizer step")
        self.step += 1
        self.m *= self.beta1
        self.m += (1 - self.beta1) * g
        self.v *= self.beta2
        self.v += (1 - self.beta2) * np.square(g)
        denom = np.sqrt(self.v / (1 - self.beta2**self.step))
        denom += self.eps
        update = self.m / (1 - self.beta1**self.step)
        update /= denom
        buf = self.net.flat_parameters()
        buf -= self.lr * update
        self.net.version += 1


def net_to_dict(net: DenseNet, opt: AdamOptimizer | None = None) -> dict:
    """JSON-ready checkpoint: layer sizes, parameters, optimizer state."""
    out = {
        "layer_sizes": list(net.layer_sizes),
        "weights": [w.tolist() for w in net.weights],
        "biases": [b.tolist() for b in net.biases],
        "optimizer_state": None,
    }
    if opt is not None:
        out["optimizer_state"] = {
            "m": opt.m.tolist(),
            "v": opt.v.tolist(),
            "step": opt.step,
        }
    return out


def net_from_dict(data: dict) -> DenseNet:
    """Rebuild a DenseNet from its checkpoint dict, validating shapes."""
    sizes = [int(s) for s in data["layer_sizes"]]
    net = DenseNet(layer_sizes=sizes,
                   weights=[np.asarray(w, dtype=np.float64) for w in data["weights"]],
                   biases=[np.asarray(b, dtype=np.float64) for b in data["biases"]])
    if len(net.weights) != len(sizes) - 1 or len(net.biases) != len(sizes) - 1:
        raise ValidationError("checkpoint layer count does not match layer_sizes")
    for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        if net.weights[i].shape != (n_in, n_out) or net.biases[i].shape != (n_out,):
            raise ValidationError(
                f"checkpoint parameter shapes at layer {i} do not match layer_sizes")
    return net
