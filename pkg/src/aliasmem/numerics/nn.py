"""Parameters, modules and the handful of layers the model is built from."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Parameter(Tensor):
    """A trainable leaf tensor carrying its optimizer and EMA slots."""

    __slots__ = ("name", "exp_avg", "exp_avg_sq", "ema")

    def __init__(self, data, name: str = "", dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.name = name
        self.exp_avg = None
        self.exp_avg_sq = None
        self.ema = None

    def __repr__(self) -> str:
        return f"Parameter({self.name or '?'}, shape={self.shape})"


class Module:
    """Container whose attributes may be parameters, modules or lists of modules."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, Parameter):
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")
                    elif isinstance(item, Parameter):
                        yield f"{name}.{i}", item

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def name_parameters(self) -> None:
        for name, p in self.named_parameters():
            p.name = name

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def astype(self, dtype) -> "Module":
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
            for slot in ("exp_avg", "exp_avg_sq", "ema"):
                val = getattr(p, slot)
                if val is not None:
                    setattr(p, slot, val.astype(dtype))
        return self

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        missing = set(params) - set(state)
        unexpected = set(state) - set(params)
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(unexpected)}")
        for name, p in params.items():
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise ValueError(f"{name}: shape {arr.shape} != {p.shape}")
            p.data = arr.astype(p.dtype)


def xavier(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape or (fan_in, fan_out))


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True,
                 zero: bool = False, bias_init: float = 0.0):
        w = np.zeros((d_in, d_out)) if zero else xavier(rng, d_in, d_out)
        self.weight = Parameter(w)
        self.bias = Parameter(np.full(d_out, bias_init)) if bias else None

    def __call__(self, x) -> Tensor:
        y = T.matmul(x, self.weight) if x.ndim >= 2 else T.matmul(T.reshape(x, (1, -1)), self.weight)[0]
        if self.bias is not None:
            y = y + self.bias
        return y


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5, affine: bool = True):
        self.eps = eps
        self.gamma = Parameter(np.ones(dim)) if affine else None
        self.beta = Parameter(np.zeros(dim)) if affine else None

    def __call__(self, x) -> Tensor:
        y = T.layer_norm(x, self.eps)
        if self.gamma is not None:
            y = y * self.gamma + self.beta
        return y


class MLP(Module):
    """Two-layer perceptron with GELU."""

    def __init__(self, d_in: int, d_hidden: int, d_out: int, rng: np.random.Generator,
                 zero_out: bool = False, out_bias: float = 0.0):
        self.fc1 = Linear(d_in, d_hidden, rng)
        self.fc2 = Linear(d_hidden, d_out, rng, zero=zero_out, bias_init=out_bias)

    def __call__(self, x) -> Tensor:
        return self.fc2(T.gelu(self.fc1(x)))


class Embedding(Module):
    def __init__(self, count: int, dim: int, rng: np.random.Generator, std: float = 0.02):
        self.weight = Parameter(rng.normal(0.0, std, size=(count, dim)))

    def __call__(self, ids) -> Tensor:
        ids = np.asarray(ids, dtype=np.int64)
        if ids.size and (ids.min() < 0 or ids.max() >= self.weight.shape[0]):
            raise ValueError(f"embedding id out of range [0, {self.weight.shape[0]})")
        return T.getitem(self.weight, ids)


def attention(q: Tensor, k: Tensor, v: Tensor, bias=None, return_weights: bool = False):
    """softmax(q k^T / sqrt(d) + bias) v over the last two axes."""
    d = q.shape[-1]
    logits = T.matmul(q, T.swapaxes(k)) * (1.0 / np.sqrt(d))
    if bias is not None:
        logits = logits + bias
    if not np.all(np.isfinite(logits.data)):
        raise FloatingPointError("non-finite attention logits")
    w = T.softmax(logits, axis=-1)
    out = T.matmul(w, v)
    return (out, w) if return_weights else out


def split_heads(x: Tensor, heads: int) -> Tensor:
    *lead, n, d = x.shape
    return T.transpose(T.reshape(x, (*lead, n, heads, d // heads)),
                       tuple(range(len(lead))) + (len(lead) + 1, len(lead), len(lead) + 2))


def merge_heads(x: Tensor) -> Tensor:
    *lead, h, n, dh = x.shape
    y = T.transpose(x, tuple(range(len(lead))) + (len(lead) + 1, len(lead), len(lead) + 2))
    return T.reshape(y, (*lead, n, h * dh))


class MultiHeadAttention(Module):
    """Multi-head attention with an optional additive logit bias shared by all heads."""

    def __init__(self, d: int, heads: int, rng: np.random.Generator, d_kv: int | None = None,
                 zero_out: bool = False):
        if d % heads:
            raise ValueError(f"width {d} not divisible by {heads} heads")
        d_kv = d_kv or d
        self.heads = heads
        self.wq = Linear(d, d, rng, bias=False)
        self.wk = Linear(d_kv, d, rng, bias=False)
        self.wv = Linear(d_kv, d, rng, bias=False)
        self.wo = Linear(d, d, rng, zero=zero_out)

    def __call__(self, x_q: Tensor, x_kv: Tensor, bias=None, return_weights: bool = False):
        q = split_heads(self.wq(x_q), self.heads)
        k = split_heads(self.wk(x_kv), self.heads)
        v = split_heads(self.wv(x_kv), self.heads)
        if bias is not None:
            bias = T.expand_dims(T.as_tensor(bias, dtype=q.dtype), -3)
        out, w = attention(q, k, v, bias, return_weights=True)
        y = self.wo(merge_heads(out))
        return (y, w) if return_weights else y
