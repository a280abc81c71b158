"""Layers built on the autodiff core: dense stacks and a stacked ConvLSTM encoder."""

from __future__ import annotations

import zlib

import numpy as np

from . import autograd as ag
from .autograd import Parameter, Tensor


def named_rng(seed: int, name: str) -> np.random.Generator:
    """Independent generator per (seed, name); stable across runs and platforms."""
    return np.random.default_rng([int(seed) & 0xFFFFFFFF, zlib.crc32(name.encode("utf-8"))])


class Module:
    """Container that discovers Parameters and sub-Modules among its attributes."""

    def named_parameters(self):
        for value in vars(self).values():
            if isinstance(value, Parameter):
                yield value.name, value
            elif isinstance(value, Module):
                yield from value.named_parameters()
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        yield from item.named_parameters()
                    elif isinstance(item, Parameter):
                        yield item.name, item

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def n_params(self) -> int:
        return sum(p.size for p in self.parameters())

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, name: str, seed: int = 0, dtype=np.float32,
                 bias_init: float = 0.0):
        rng = named_rng(seed, name)
        scale = np.sqrt(2.0 / n_in)
        self.weight = Parameter(rng.normal(0.0, scale, (n_in, n_out)), f"{name}.weight", dtype=dtype)
        self.bias = Parameter(np.full(n_out, bias_init), f"{name}.bias", dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        return ag.matmul(x, self.weight) + self.bias


class MLP(Module):
    """Dense stack with ReLU between layers; ``out_activation`` may add a ReLU at the end."""

    def __init__(self, sizes, name: str, seed: int = 0, dtype=np.float32, out_activation: str | None = None,
                 out_bias: float = 0.0):
        self.layers = [
            Linear(a, b, f"{name}.fc{i}", seed, dtype, bias_init=out_bias if i == len(sizes) - 2 else 0.0)
            for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:]))
        ]
        self.out_activation = out_activation

    def forward(self, x: Tensor) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1 or self.out_activation == "relu":
                x = ag.relu(x)
        return x


class ConvLSTMCell(Module):
    def __init__(self, n_in: int, hidden: int, name: str, kernel: int = 3, seed: int = 0, dtype=np.float32):
        rng = named_rng(seed, name)
        fan_in = kernel * (n_in + hidden)
        w = rng.uniform(-1.0, 1.0, (kernel, n_in + hidden, 4 * hidden)) * np.sqrt(1.0 / fan_in)
        b = np.zeros(4 * hidden)
        b[hidden:2 * hidden] = 1.0  # forget-gate bias
        self.weight = Parameter(w, f"{name}.weight", dtype=dtype)
        self.bias = Parameter(b, f"{name}.bias", dtype=dtype)
        self.hidden = hidden

    def forward(self, x, h, c):
        return ag.convlstm_step(x, h, c, self.weight, self.bias)


class ConvLSTM(Module):
    """Stacked ConvLSTM over a window cut into ``n_steps`` sub-sequences.

    A (B, T, C) input becomes ``n_steps`` recurrent steps, each a (B, T/n_steps, C)
    slice; gates convolve along that local time axis.  Returns the final hidden
    state of the top cell flattened to (B, (T/n_steps) * hidden).
    """

    def __init__(self, n_in: int, hidden: tuple[int, ...], n_steps: int, name: str, kernel: int = 3,
                 seed: int = 0, dtype=np.float32):
        self.cells = []
        for i, width in enumerate(hidden):
            self.cells.append(ConvLSTMCell(n_in if i == 0 else hidden[i - 1], width, f"{name}.cell{i}",
                                           kernel, seed, dtype))
        self.n_steps = n_steps
        self.dtype = dtype

    def forward(self, x: Tensor) -> Tensor:
        B, T, C = x.shape
        if T % self.n_steps:
            raise ag.ShapeError("ConvLSTM (T must divide into n_steps)", x.shape)
        L = T // self.n_steps
        seq = ag.reshape(x, (B, self.n_steps, L, C))
        states = [(Tensor(np.zeros((B, L, cell.hidden), self.dtype)),
                   Tensor(np.zeros((B, L, cell.hidden), self.dtype))) for cell in self.cells]
        for s in range(self.n_steps):
            inp = seq[:, s]
            for k, cell in enumerate(self.cells):
                h, c = cell(inp, *states[k])
                states[k] = (h, c)
                inp = h
        top = states[-1][0]
        return ag.reshape(top, (B, L * top.shape[-1]))


class Encoder(Module):
    """ConvLSTM followed by two dense layers (ReLU between); linear output."""

    def __init__(self, n_in: int, T: int, n_steps: int, conv_hidden: tuple[int, ...], fc_hidden: int,
                 n_out: int, name: str, seed: int = 0, dtype=np.float32):
        self.conv = ConvLSTM(n_in, conv_hidden, n_steps, f"{name}.convlstm", seed=seed, dtype=dtype)
        flat = (T // n_steps) * conv_hidden[-1]
        self.head = MLP([flat, fc_hidden, n_out], f"{name}.fc", seed, dtype)
        self.n_in = n_in

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 3 or x.shape[2] != self.n_in:
            raise ag.ShapeError("encoder input", x.shape, (None, None, self.n_in))
        return self.head(self.conv(x))
