"""Layers with explicit forward/backward passes over NCHW numpy arrays."""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class Tensor:
    """A trainable array and its accumulated gradient."""

    __slots__ = ("value", "grad")

    def __init__(self, value):
        self.value = value
        self.grad = None

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad = None


class Layer:
    kind = "layer"
    training = True

    def params(self) -> dict:
        return {}

    def buffers(self) -> dict:
        return {}

    def config(self) -> dict:
        return {}

    def forward(self, x):
        raise NotImplementedError

    def backward(self, grad):
        raise NotImplementedError

    def __call__(self, x):
        return self.forward(x)


def _he_uniform(rng, shape, fan_in, dtype):
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def _windows(x, kh, kw, stride):
    """(N, C, Ho, Wo, kh, kw) strided view of x."""
    v = sliding_window_view(x, (kh, kw), axis=(2, 3))
    return v[:, :, ::stride, ::stride]


class Conv2d(Layer):
    kind = "conv"
    input_grad = True  # the first layer has no use for d(loss)/d(input)

    def __init__(self, in_ch, out_ch, kernel, stride=1, padding=0, rng=None, dtype=np.float32):
        rng = np.random.default_rng(0) if rng is None else rng
        self.in_ch, self.out_ch, self.kernel, self.stride, self.padding = in_ch, out_ch, kernel, stride, padding
        fan_in = in_ch * kernel * kernel
        self.weight = Tensor(_he_uniform(rng, (out_ch, in_ch, kernel, kernel), fan_in, dtype))
        self.bias = Tensor(np.zeros(out_ch, dtype=dtype))

    def params(self):
        return {"weight": self.weight, "bias": self.bias}

    def config(self):
        return {"in_ch": self.in_ch, "out_ch": self.out_ch, "kernel": self.kernel,
                "stride": self.stride, "padding": self.padding}

    def output_size(self, size):
        return (size + 2 * self.padding - self.kernel) // self.stride + 1

    def forward(self, x):
        if x.ndim != 4 or x.shape[1] != self.in_ch:
            raise ValueError(f"conv expects (N, {self.in_ch}, H, W), got {x.shape}")
        p, k, s = self.padding, self.kernel, self.stride
        if p:
            x = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
        win = _windows(x, k, k, s)
        n, c, ho, wo = win.shape[:4]
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * k * k)
        wmat = self.weight.value.reshape(self.out_ch, -1)
        out = cols @ wmat.T + self.bias.value
        self._cache = (x.shape, cols, ho, wo) if self.training else None
        return out.reshape(n, ho, wo, self.out_ch).transpose(0, 3, 1, 2)

    def backward(self, grad):
        xshape, cols, ho, wo = self._cache
        if grad is None:
            raise RuntimeError("conv backward needs an upstream gradient")
        n = xshape[0]
        k, s, p = self.kernel, self.stride, self.padding
        g = grad.transpose(0, 2, 3, 1).reshape(n * ho * wo, self.out_ch)
        self.weight.grad = (g.T @ cols).reshape(self.weight.shape)
        self.bias.grad = g.sum(axis=0)
        if not self.input_grad:
            self._cache = None
            return None
        dcols = (g @ self.weight.value.reshape(self.out_ch, -1)).reshape(n, ho, wo, self.in_ch, k, k)
        dx = np.zeros(xshape, dtype=grad.dtype)
        for i in range(k):
            for j in range(k):
                dx[:, :, i:i + s * ho:s, j:j + s * wo:s] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        self._cache = None
        if p:
            dx = dx[:, :, p:-p, p:-p]
        return dx


class Linear(Layer):
    kind = "linear"

    def __init__(self, in_features, out_features, rng=None, dtype=np.float32):
        rng = np.random.default_rng(0) if rng is None else rng
        self.in_features, self.out_features = in_features, out_features
        self.weight = Tensor(_he_uniform(rng, (out_features, in_features), in_features, dtype))
        self.bias = Tensor(np.zeros(out_features, dtype=dtype))

    def params(self):
        return {"weight": self.weight, "bias": self.bias}

    def config(self):
        return {"in_features": self.in_features, "out_features": self.out_features}

    def forward(self, x):
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ValueError(f"linear expects (N, {self.in_features}), got {x.shape}")
        self._x = x if self.training else None
        return x @ self.weight.value.T + self.bias.value

    def backward(self, grad):
        self.weight.grad = grad.T @ self._x
        self.bias.grad = grad.sum(axis=0)
        self._x = None
        return grad @ self.weight.value


class BatchNorm(Layer):
    """Per-channel normalization for (N, C) or (N, C, H, W) inputs."""

    kind = "batchnorm"

    def __init__(self, channels, momentum=0.9, eps=1e-5, dtype=np.float32):
        self.channels, self.momentum, self.eps = channels, momentum, eps
        self.gamma = Tensor(np.ones(channels, dtype=dtype))
        self.beta = Tensor(np.zeros(channels, dtype=dtype))
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)

    def params(self):
        return {"gamma": self.gamma, "beta": self.beta}

    def buffers(self):
        return {"running_mean": self.running_mean, "running_var": self.running_var}

    def config(self):
        return {"channels": self.channels, "momentum": self.momentum, "eps": self.eps}

    def _axes(self, x):
        return (0,) if x.ndim == 2 else (0, 2, 3)

    def _bcast(self, v, x):
        return v if x.ndim == 2 else v[None, :, None, None]

    def forward(self, x):
        if x.shape[1] != self.channels:
            raise ValueError(f"batchnorm expects {self.channels} channels, got {x.shape}")
        axes = self._axes(x)
        if self.training:
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            m = self.momentum
            self.running_mean[...] = m * self.running_mean + (1 - m) * mean
            self.running_var[...] = m * self.running_var + (1 - m) * var
        else:
            mean, var = self.running_mean, self.running_var
        inv = 1.0 / np.sqrt(var + self.eps)
        x_hat = (x - self._bcast(mean, x)) * self._bcast(inv, x)
        if self.training:
            self._cache = (x_hat, inv, axes)
            self.last_normalized = x_hat
        return x_hat * self._bcast(self.gamma.value, x) + self._bcast(self.beta.value, x)

    def backward(self, grad):
        x_hat, inv, axes = self._cache
        m = grad.size // self.channels
        self.gamma.grad = (grad * x_hat).sum(axis=axes)
        self.beta.grad = grad.sum(axis=axes)
        dxhat = grad * self._bcast(self.gamma.value, grad)
        dx = (self._bcast(inv, grad) / m) * (
            m * dxhat
            - self._bcast(dxhat.sum(axis=axes), grad)
            - x_hat * self._bcast((dxhat * x_hat).sum(axis=axes), grad)
        )
        self._cache = None
        self.last_normalized = None
        return dx


class ReLU(Layer):
    kind = "relu"

    def forward(self, x):
        self._mask = x > 0 if self.training else None
        return np.maximum(x, 0)

    def backward(self, grad):
        out = grad * self._mask
        self._mask = None
        return out


class MaxPool2d(Layer):
    kind = "maxpool"

    def __init__(self, kernel=3, stride=2):
        self.kernel, self.stride = kernel, stride

    def config(self):
        return {"kernel": self.kernel, "stride": self.stride}

    def output_size(self, size):
        return (size - self.kernel) // self.stride + 1

    def forward(self, x):
        k, s = self.kernel, self.stride
        win = _windows(x, k, k, s)
        n, c, ho, wo = win.shape[:4]
        flat = win.reshape(n, c, ho, wo, k * k)
        idx = flat.argmax(axis=-1)
        if self.training:
            self._cache = (x.shape, idx)
        return np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]

    def backward(self, grad):
        xshape, idx = self._cache
        k, s = self.kernel, self.stride
        ho, wo = grad.shape[2:]
        dx = np.zeros(xshape, dtype=grad.dtype)
        for pos in range(k * k):
            i, j = divmod(pos, k)
            dx[:, :, i:i + s * ho:s, j:j + s * wo:s] += grad * (idx == pos)
        self._cache = None
        return dx


class Flatten(Layer):
    kind = "flatten"

    def forward(self, x):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad):
        return grad.reshape(self._shape)


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy over the batch and its gradient w.r.t. the logits."""
    labels = np.asarray(labels, dtype=int)
    n = logits.shape[0]
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    loss = -logp[np.arange(n), labels].mean()
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    return float(loss), (grad / n).astype(logits.dtype)
