"""Minimal dense-network core: forward, manual reverse-mode gradients, Adam.

Everything is plain numpy float64. A network is a list of (W, b) layers with
rectifier hidden activations and a linear output; gradients are computed
exactly by hand and are validated against finite differences in the tests.
"""

import numpy as np


def relu(x):
    return np.maximum(x, 0.0)


class Mlp:
    """Fully connected net: dims = [in, hidden..., out], relu hiddens, linear out."""

    def __init__(self, dims: list[int], rng: np.random.Generator):
        if len(dims) < 2:
            raise ValueError("need at least input and output dims")
        self.dims = list(dims)
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            self.weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            self.biases.append(rng.uniform(-bound, bound, size=fan_out))

    @property
    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Plain forward pass; x is (batch, in) or (in,)."""
        a = np.asarray(x, dtype=float)
        squeeze = a.ndim == 1
        if squeeze:
            a = a[None, :]
        if a.shape[1] != self.dims[0]:
            raise ValueError(f"input dim {a.shape[1]} != {self.dims[0]}")
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            a = a @ w + b
            if i < last:
                a = relu(a)
        return a[0] if squeeze else a

    def forward_cached(self, x: np.ndarray):
        """Forward pass keeping post-activation values for backward()."""
        a = np.asarray(x, dtype=float)
        if a.ndim == 1:
            a = a[None, :]
        if a.shape[1] != self.dims[0]:
            raise ValueError(f"input dim {a.shape[1]} != {self.dims[0]}")
        acts = [a]
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            a = a @ w + b
            if i < last:
                a = relu(a)
            acts.append(a)
        return acts[-1], acts

    def backward(self, acts: list[np.ndarray], grad_out: np.ndarray):
        """Exact gradients of a scalar loss given d(loss)/d(output).

        Returns (param_grads, grad_input) where param_grads matches the
        params property layout [W0, b0, W1, b1, ...].
        """
        if acts is None or len(acts) != len(self.weights) + 1:
            raise ValueError("backward() needs the cache from forward_cached()")
        delta = np.asarray(grad_out, dtype=float)
        if delta.ndim == 1:
            delta = delta[None, :]
        grads_w = [None] * len(self.weights)
        grads_b = [None] * len(self.biases)
        for i in range(len(self.weights) - 1, -1, -1):
            if i < len(self.weights) - 1:
                delta = delta * (acts[i + 1] > 0.0)  # relu mask on post-activations
            grads_w[i] = acts[i].T @ delta
            grads_b[i] = delta.sum(axis=0)
            delta = delta @ self.weights[i].T
        flat = []
        for gw, gb in zip(grads_w, grads_b):
            flat.append(gw)
            flat.append(gb)
        return flat, delta

    def copy_from(self, other: "Mlp"):
        if self.dims != other.dims:
            raise ValueError("architecture mismatch")
        for mine, theirs in zip(self.params, other.params):
            mine[...] = theirs

    def clone(self) -> "Mlp":
        dup = Mlp.__new__(Mlp)
        dup.dims = list(self.dims)
        dup.weights = [w.copy() for w in self.weights]
        dup.biases = [b.copy() for b in self.biases]
        return dup


class Adam:
    """Adaptive-moment optimizer with bias correction."""

    def __init__(self, params: list[np.ndarray], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]):
        """Update params in place from grads (same layout as construction)."""
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)


def soft_update(target: Mlp, online: Mlp, tau: float):
    """Blend online parameters into the target: t <- tau*o + (1-tau)*t."""
    if target.dims != online.dims:
        raise ValueError("architecture mismatch")
    for tp, op in zip(target.params, online.params):
        tp *= 1.0 - tau
        tp += tau * op
