"""Minimal numpy layers with hand-written backward passes.

Every layer caches what it needs in ``forward`` and, in ``backward``,
*accumulates* parameter gradients into ``self.grads`` and returns the
gradient with respect to its input. Sequence tensors are ``(B, C, L)``.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class Layer:
    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}

    def zero_grad(self):
        for k, v in self.params.items():
            self.grads[k] = np.zeros_like(v)

    def forward(self, x):
        raise NotImplementedError

    def backward(self, dy):
        raise NotImplementedError

    def _add(self, name, g):
        self.grads[name] = self.grads.get(name, 0) + g


def _uniform(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Linear(Layer):
    def __init__(self, n_in, n_out, rng):
        super().__init__()
        self.params = {"W": _uniform(rng, (n_out, n_in), n_in), "b": np.zeros(n_out)}

    def forward(self, x):
        self.x = x
        return x @ self.params["W"].T + self.params["b"]

    def backward(self, dy):
        self._add("W", dy.T @ self.x)
        self._add("b", dy.sum(axis=0))
        return dy @ self.params["W"]


class LeakyReLU(Layer):
    def __init__(self, slope=0.01):
        super().__init__()
        self.slope = slope

    def forward(self, x):
        self.pos = x > 0
        return np.where(self.pos, x, self.slope * x)

    def backward(self, dy):
        return np.where(self.pos, dy, self.slope * dy)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


class Conv1d(Layer):
    """Strided 1-D convolution with symmetric zero padding."""

    def __init__(self, c_in, c_out, kernel, stride, padding, rng):
        super().__init__()
        self.k, self.s, self.p = kernel, stride, padding
        fan_in = c_in * kernel
        self.params = {"W": _uniform(rng, (c_out, c_in, kernel), fan_in), "b": np.zeros(c_out)}

    def out_len(self, n):
        return (n + 2 * self.p - self.k) // self.s + 1

    def forward(self, x):
        B, C, L = x.shape
        xp = np.pad(x, ((0, 0), (0, 0), (self.p, self.p)))
        n_out = self.out_len(L)
        win = sliding_window_view(xp, self.k, axis=2)[:, :, : self.s * n_out : self.s]  # (B, C, Lo, k)
        cols = np.ascontiguousarray(win.transpose(0, 2, 1, 3)).reshape(B, n_out, C * self.k)
        self.cols, self.in_shape = cols, x.shape
        W = self.params["W"]
        y = cols @ W.reshape(W.shape[0], -1).T + self.params["b"]
        return y.transpose(0, 2, 1)

    def backward(self, dy):
        B, C, L = self.in_shape
        W = self.params["W"]
        c_out = W.shape[0]
        dyt = dy.transpose(0, 2, 1)  # (B, Lo, c_out)
        n_out = dyt.shape[1]
        self._add("W", np.tensordot(dyt, self.cols, axes=([0, 1], [0, 1])).reshape(W.shape))
        self._add("b", dyt.sum(axis=(0, 1)))
        dcols = (dyt @ W.reshape(c_out, -1)).reshape(B, n_out, C, self.k)
        dxp = np.zeros((B, C, L + 2 * self.p))
        for j in range(self.k):
            dxp[:, :, j : j + self.s * n_out : self.s] += dcols[:, :, :, j].transpose(0, 2, 1)
        return dxp[:, :, self.p : self.p + L]


class ConvTranspose1d(Layer):
    """Adjoint of :class:`Conv1d`; ``output_padding`` resolves the length ambiguity."""

    def __init__(self, c_in, c_out, kernel, stride, padding, output_padding, rng):
        super().__init__()
        self.k, self.s, self.p, self.op = kernel, stride, padding, output_padding
        fan_in = c_in * kernel // stride
        self.params = {"W": _uniform(rng, (c_in, c_out, kernel), fan_in), "b": np.zeros(c_out)}

    def out_len(self, n):
        return (n - 1) * self.s - 2 * self.p + self.k + self.op

    def _full_len(self, n):
        return max((n - 1) * self.s + self.k, self.p + self.out_len(n))

    def forward(self, x):
        B, C, L = x.shape
        W = self.params["W"]
        c_out = W.shape[1]
        self.x = x
        z = (x.transpose(0, 2, 1) @ W.reshape(C, -1)).reshape(B, L, c_out, self.k)
        full = np.zeros((B, c_out, self._full_len(L)))
        for j in range(self.k):
            full[:, :, j : j + self.s * L : self.s] += z[:, :, :, j].transpose(0, 2, 1)
        n_out = self.out_len(L)
        return full[:, :, self.p : self.p + n_out] + self.params["b"][None, :, None]

    def backward(self, dy):
        x = self.x
        B, C, L = x.shape
        W = self.params["W"]
        c_out = W.shape[1]
        self._add("b", dy.sum(axis=(0, 2)))
        full = np.zeros((B, c_out, self._full_len(L)))
        full[:, :, self.p : self.p + dy.shape[2]] = dy
        dz = np.empty((B, L, c_out, self.k))
        for j in range(self.k):
            dz[:, :, :, j] = full[:, :, j : j + self.s * L : self.s].transpose(0, 2, 1)
        dz = dz.reshape(B, L, c_out * self.k)
        self._add("W", np.tensordot(x, dz, axes=([0, 2], [0, 1])).reshape(W.shape))
        return (dz @ W.reshape(C, -1).T).transpose(0, 2, 1)


class SqueezeExcite(Layer):
    """Channel attention: gate each channel by a sigmoid of its pooled summary."""

    def __init__(self, channels, reduction, rng, slope=0.01):
        super().__init__()
        hidden = max(1, channels // reduction)
        self.slope = slope
        self.params = {
            "W1": _uniform(rng, (hidden, channels), channels),
            "b1": np.zeros(hidden),
            "W2": _uniform(rng, (channels, hidden), hidden),
            "b2": np.zeros(channels),
        }

    def forward(self, x):
        p = self.params
        s = x.mean(axis=2)
        a = s @ p["W1"].T + p["b1"]
        h = np.where(a > 0, a, self.slope * a)
        g = _sigmoid(h @ p["W2"].T + p["b2"])
        self.cache = (x, s, a, h, g)
        return x * g[:, :, None]

    def backward(self, dy):
        x, s, a, h, g = self.cache
        p = self.params
        dg = (dy * x).sum(axis=2)
        dpre = dg * g * (1 - g)
        self._add("W2", dpre.T @ h)
        self._add("b2", dpre.sum(axis=0))
        dh = dpre @ p["W2"]
        da = np.where(a > 0, dh, self.slope * dh)
        self._add("W1", da.T @ s)
        self._add("b1", da.sum(axis=0))
        ds = da @ p["W1"]
        return dy * g[:, :, None] + ds[:, :, None] / x.shape[2]


def _outer_sum(a, b):
    """``sum_{b,t} a[b,t,:] outer b[b,t,:]`` for (B, T, C) arrays."""
    return a.reshape(-1, a.shape[-1]).T @ b.reshape(-1, b.shape[-1])


class SelfAttention(Layer):
    """Single-head scaled dot-product self-attention over time, with residual."""

    def __init__(self, channels, rng):
        super().__init__()
        self.params = {}
        for n in ("q", "k", "v", "o"):
            self.params["W" + n] = _uniform(rng, (channels, channels), channels)
            self.params["b" + n] = np.zeros(channels)

    def forward(self, x):
        p = self.params
        X = x.transpose(0, 2, 1)  # (B, T, C)
        C = X.shape[2]
        Q = X @ p["Wq"].T + p["bq"]
        K = X @ p["Wk"].T + p["bk"]
        V = X @ p["Wv"].T + p["bv"]
        S = Q @ K.transpose(0, 2, 1) / np.sqrt(C)
        S = S - S.max(axis=2, keepdims=True)
        A = np.exp(S)
        A /= A.sum(axis=2, keepdims=True)
        O = A @ V
        out = O @ p["Wo"].T + p["bo"]
        self.cache = (X, Q, K, V, A, O)
        return (X + out).transpose(0, 2, 1)

    def backward(self, dy):
        X, Q, K, V, A, O = self.cache
        p = self.params
        C = X.shape[2]
        dY = dy.transpose(0, 2, 1)
        self._add("Wo", _outer_sum(dY, O))
        self._add("bo", dY.sum(axis=(0, 1)))
        dO = dY @ p["Wo"]
        dA = dO @ V.transpose(0, 2, 1)
        dV = A.transpose(0, 2, 1) @ dO
        dS = A * (dA - (dA * A).sum(axis=2, keepdims=True)) / np.sqrt(C)
        dQ = dS @ K
        dK = dS.transpose(0, 2, 1) @ Q
        dX = dY.copy()
        for n, d in (("q", dQ), ("k", dK), ("v", dV)):
            self._add("W" + n, _outer_sum(d, X))
            self._add("b" + n, d.sum(axis=(0, 1)))
            dX += d @ p["W" + n]
        return dX.transpose(0, 2, 1)


class TemporalMean(Layer):
    def forward(self, x):
        self.L = x.shape[2]
        return x.mean(axis=2)

    def backward(self, dy):
        return np.repeat(dy[:, :, None] / self.L, self.L, axis=2)


class Reshape(Layer):
    def __init__(self, shape):
        super().__init__()
        self.shape = tuple(shape)

    def forward(self, x):
        self.in_shape = x.shape
        return x.reshape((x.shape[0],) + self.shape)

    def backward(self, dy):
        return dy.reshape(self.in_shape)


class Sequential(Layer):
    def __init__(self, layers):
        super().__init__()
        self.layers = list(layers)

    def forward(self, x):
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, dy):
        for layer in reversed(self.layers):
            dy = layer.backward(dy)
        return dy

    def zero_grad(self):
        for layer in self.layers:
            layer.zero_grad()

    def named_params(self):
        """``(name, array)`` pairs in a fixed order; arrays are live views."""
        for i, layer in enumerate(self.layers):
            for k in sorted(layer.params):
                yield f"{i}.{k}", layer.params[k]

    def named_grads(self):
        for i, layer in enumerate(self.layers):
            for k in sorted(layer.params):
                yield f"{i}.{k}", layer.grads[k]

    def n_params(self):
        return sum(v.size for _, v in self.named_params())

    def get_flat(self):
        return np.concatenate([v.ravel() for _, v in self.named_params()]) if self.n_params() else np.zeros(0)

    def set_flat(self, flat):
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != self.n_params():
            raise ValueError(f"expected {self.n_params()} parameters, got {flat.size}")
        i = 0
        for _, v in self.named_params():
            v[...] = flat[i : i + v.size].reshape(v.shape)
            i += v.size
