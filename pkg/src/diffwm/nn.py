"""Layers and the AdamW optimizer on top of the autodiff core.

Initialization takes an explicit ``numpy.random.Generator`` everywhere so that
full-run determinism is a property of the seed, not of import order.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Module:
    """Base class: parameter discovery, state dicts, recursive traversal."""

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def named_parameters(self, prefix: str = ""):
        out = []
        for name, value in vars(self).items():
            self._collect(f"{prefix}{name}", value, out)
        return out

    @staticmethod
    def _collect(key, value, out):
        if isinstance(value, Tensor):
            if value.requires_grad:
                out.append((key, value))
        elif isinstance(value, Module):
            out.extend(value.named_parameters(prefix=f"{key}."))
        elif isinstance(value, (list, tuple)):
            for i, item in enumerate(value):
                Module._collect(f"{key}.{i}", item, out)

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]):
        params = dict(self.named_parameters())
        if set(params) != set(state):
            missing = set(params) ^ set(state)
            raise KeyError(f"state dict mismatch on keys: {sorted(missing)}")
        for name, p in params.items():
            if p.data.shape != state[name].shape:
                raise ValueError(f"shape mismatch for {name}")
            p.data = state[name].copy()

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters())


def _param(data) -> Tensor:
    return Tensor(data, requires_grad=True)


class Linear(Module):
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator,
                 dtype=np.float64, zero_init: bool = False):
        if zero_init:
            w = np.zeros((in_dim, out_dim), dtype=dtype)
        else:
            w = rng.normal(0.0, in_dim ** -0.5, (in_dim, out_dim)).astype(dtype)
        self.weight = _param(w)
        self.bias = _param(np.zeros(out_dim, dtype=dtype))

    def __call__(self, x: Tensor) -> Tensor:
        return T.matmul(x, self.weight) + self.bias


class Conv2d(Module):
    def __init__(self, in_ch: int, out_ch: int, kernel: int, rng: np.random.Generator,
                 padding: int | None = None, dtype=np.float64, zero_init: bool = False):
        fan_in = in_ch * kernel * kernel
        if zero_init:
            w = np.zeros((out_ch, in_ch, kernel, kernel), dtype=dtype)
        else:
            w = rng.normal(0.0, fan_in ** -0.5, (out_ch, in_ch, kernel, kernel)).astype(dtype)
        self.weight = _param(w)
        self.bias = _param(np.zeros(out_ch, dtype=dtype))
        self.padding = (kernel // 2) if padding is None else padding

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.weight, self.bias, padding=self.padding)


class Embedding(Module):
    def __init__(self, num: int, dim: int, rng: np.random.Generator, dtype=np.float64):
        self.weight = _param(rng.normal(0.0, 1.0, (num, dim)).astype(dtype))

    def __call__(self, ids) -> Tensor:
        return T.embedding(self.weight, ids)


class GroupNorm(Module):
    """Channel group normalization over (B, C, H, W); optional learned affine."""

    def __init__(self, channels: int, groups: int | None = None, affine: bool = True,
                 eps: float = 1e-5, dtype=np.float64):
        self.groups = min(groups or 8, channels)
        while channels % self.groups:
            self.groups -= 1
        self.eps = eps
        self.affine = affine
        if affine:
            self.weight = _param(np.ones(channels, dtype=dtype))
            self.bias = _param(np.zeros(channels, dtype=dtype))

    def __call__(self, x: Tensor) -> Tensor:
        b, c, h, w = x.shape
        r = x.reshape(b, self.groups, (c // self.groups) * h * w)
        mu = r.mean(axis=2, keepdims=True)
        xc = r - mu
        var = (xc * xc).mean(axis=2, keepdims=True)
        y = xc * (var + self.eps) ** -0.5
        y = y.reshape(b, c, h, w)
        if self.affine:
            y = y * self.weight.reshape(1, c, 1, 1) + self.bias.reshape(1, c, 1, 1)
        return y


class LSTMCell(Module):
    def __init__(self, in_dim: int, hidden: int, rng: np.random.Generator, dtype=np.float64):
        self.hidden = hidden
        self.w_x = _param(rng.normal(0.0, in_dim ** -0.5, (in_dim, 4 * hidden)).astype(dtype))
        self.w_h = _param(rng.normal(0.0, hidden ** -0.5, (hidden, 4 * hidden)).astype(dtype))
        b = np.zeros(4 * hidden, dtype=dtype)
        b[hidden : 2 * hidden] = 1.0  # forget-gate bias
        self.bias = _param(b)

    def __call__(self, x: Tensor, state: tuple[Tensor, Tensor]):
        h, c = state
        gates = T.matmul(x, self.w_x) + T.matmul(h, self.w_h) + self.bias
        n = self.hidden
        i = T.sigmoid(gates[:, :n])
        f = T.sigmoid(gates[:, n : 2 * n])
        g = T.tanh(gates[:, 2 * n : 3 * n])
        o = T.sigmoid(gates[:, 3 * n :])
        c_new = f * c + i * g
        h_new = o * T.tanh(c_new)
        return h_new, c_new

    def zero_state(self, batch: int, dtype=np.float64):
        z = np.zeros((batch, self.hidden), dtype=dtype)
        return Tensor(z.copy()), Tensor(z.copy())


class AdamW:
    """Decoupled weight decay Adam with per-group lr scaling and global-norm clipping."""

    def __init__(self, groups: list[dict]):
        # each group: {"params": [...], "lr_scale": float, "weight_decay": float}
        self.groups = []
        for g in groups:
            self.groups.append({
                "params": list(g["params"]),
                "lr_scale": float(g.get("lr_scale", 1.0)),
                "weight_decay": float(g.get("weight_decay", 0.0)),
            })
        self.beta1, self.beta2 = 0.9, 0.999
        self.eps = 1e-8
        self.t = 0
        self.m = [[np.zeros_like(p.data) for p in g["params"]] for g in self.groups]
        self.v = [[np.zeros_like(p.data) for p in g["params"]] for g in self.groups]

    def zero_grad(self):
        for g in self.groups:
            for p in g["params"]:
                p.grad = None

    def grad_global_norm(self) -> float:
        total = 0.0
        for g in self.groups:
            for p in g["params"]:
                if p.grad is not None:
                    total += float((p.grad * p.grad).sum())
        return float(np.sqrt(total))

    def step(self, lr: float, grad_clip: float | None = None):
        scale = 1.0
        if grad_clip is not None:
            norm = self.grad_global_norm()
            if norm > grad_clip:
                scale = grad_clip / (norm + 1e-12)
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for gi, g in enumerate(self.groups):
            lr_eff = lr * g["lr_scale"]
            wd = g["weight_decay"]
            for pi, p in enumerate(g["params"]):
                if p.grad is None:
                    continue
                grad = p.grad * scale
                m = self.m[gi][pi]
                v = self.v[gi][pi]
                m *= self.beta1
                m += (1 - self.beta1) * grad
                v *= self.beta2
                v += (1 - self.beta2) * grad * grad
                update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
                if wd:
                    p.data -= lr_eff * wd * p.data
                p.data -= lr_eff * update

    def state_dict(self) -> dict:
        return {
            "t": self.t,
            "m": [[a.copy() for a in row] for row in self.m],
            "v": [[a.copy() for a in row] for row in self.v],
        }

    def load_state_dict(self, state: dict):
        self.t = int(state["t"])
        for row, saved in zip(self.m, state["m"]):
            for i, a in enumerate(saved):
                row[i][...] = a
        for row, saved in zip(self.v, state["v"]):
            for i, a in enumerate(saved):
                row[i][...] = a


def linear_warmup(step: int, warmup_steps: int, base_lr: float) -> float:
    """Linearly ramp 0 -> base_lr over ``warmup_steps`` optimizer steps."""
    if warmup_steps <= 0 or step >= warmup_steps:
        return base_lr
    return base_lr * step / warmup_steps
