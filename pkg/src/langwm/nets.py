"""Network building blocks over the autodiff core.

Layers register their parameters in a shared ParamStore under a name prefix
at construction time and are plain callables afterwards. Initialization is
truncated-normal scaled by fan-in; output heads can be zero-initialized so
untrained reward/value readouts decode to zero.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, Tensor


def trunc_normal(rng: np.random.Generator, shape, scale: float) -> np.ndarray:
    out = rng.normal(size=shape)
    out = np.clip(out, -2.0, 2.0) * scale
    return out.astype(ad.default_dtype())


class Linear:
    def __init__(self, store: ParamStore, name: str, in_dim: int, out_dim: int,
                 rng: np.random.Generator, zero_init: bool = False):
        scale = 0.0 if zero_init else 1.0 / np.sqrt(in_dim)
        self.w = store.add(f"{name}/w", trunc_normal(rng, (in_dim, out_dim), scale))
        self.b = store.add(f"{name}/b", np.zeros(out_dim, dtype=ad.default_dtype()))

    def __call__(self, x: Tensor) -> Tensor:
        return ad.matmul(x, self.w) + self.b


class LayerNorm:
    def __init__(self, store: ParamStore, name: str, dim: int):
        self.g = store.add(f"{name}/g", np.ones(dim, dtype=ad.default_dtype()))
        self.b = store.add(f"{name}/b", np.zeros(dim, dtype=ad.default_dtype()))

    def __call__(self, x: Tensor) -> Tensor:
        return ad.layer_norm(x, self.g, self.b)


class MLP:
    """Stack of Linear -> LayerNorm -> SiLU blocks, then an optional head."""

    def __init__(self, store: ParamStore, name: str, in_dim: int, units: int,
                 layers: int, rng: np.random.Generator, out_dim: int | None = None,
                 zero_head: bool = False):
        self.blocks = []
        dim = in_dim
        for i in range(layers):
            lin = Linear(store, f"{name}/l{i}", dim, units, rng)
            norm = LayerNorm(store, f"{name}/n{i}", units)
            self.blocks.append((lin, norm))
            dim = units
        self.head = None
        if out_dim is not None:
            self.head = Linear(store, f"{name}/head", dim, out_dim, rng, zero_init=zero_head)
        self.out_dim = out_dim if out_dim is not None else dim

    def __call__(self, x: Tensor) -> Tensor:
        for lin, norm in self.blocks:
            x = ad.silu(norm(lin(x)))
        if self.head is not None:
            x = self.head(x)
        return x


class GRUCell:
    """Fused gated recurrent cell with layer-normalized gate preactivations.

    One matmul per step produces reset/candidate/update parts; the candidate
    is tanh of the reset-gated preactivation, so the state stays in (-1, 1)
    when initialized at zero.
    """

    def __init__(self, store: ParamStore, name: str, in_dim: int, hidden: int,
                 rng: np.random.Generator):
        self.hidden = hidden
        self.lin = Linear(store, f"{name}/gates", in_dim + hidden, 3 * hidden, rng)
        self.norm = LayerNorm(store, f"{name}/norm", 3 * hidden)

    def __call__(self, x: Tensor, h: Tensor) -> Tensor:
        parts = self.norm(self.lin(ad.concat([x, h], axis=-1)))
        n = self.hidden
        reset = ad.sigmoid(parts[:, :n])
        cand = ad.tanh(reset * parts[:, n:2 * n])
        update = ad.sigmoid(parts[:, 2 * n:])
        return update * cand + (1.0 - update) * h


class Embedding:
    def __init__(self, store: ParamStore, name: str, vocab: int, dim: int,
                 rng: np.random.Generator):
        self.table = store.add(f"{name}/table", trunc_normal(rng, (vocab, dim), 0.02))

    def __call__(self, ids: np.ndarray) -> Tensor:
        return ad.embedding(self.table, ids)


class ConvEncoder:
    """Strided CNN for pixel observations: 4 stride-2 stages, then flatten."""

    def __init__(self, store: ParamStore, name: str, in_channels: int, depth: int,
                 rng: np.random.Generator, resolution: int = 64):
        self.layers = []
        c = in_channels
        res = resolution
        for i in range(4):
            out_c = depth * (2 ** i)
            k = 4
            scale = 1.0 / np.sqrt(c * k * k)
            w = store.add(f"{name}/c{i}/w", trunc_normal(rng, (out_c, c, k, k), scale))
            norm = LayerNorm(store, f"{name}/c{i}/n", out_c)
            self.layers.append((w, norm))
            c = out_c
            res //= 2
        self.out_dim = c * res * res
        self.final_res = res
        self.final_c = c

    def __call__(self, x: Tensor) -> Tensor:
        for w, norm in self.layers:
            x = ad.conv2d(x, w, stride=2, padding=1)
            b, c, h, wd = x.shape
            flat = ad.reshape(ad.transpose(x, (0, 2, 3, 1)), (b * h * wd, c))
            flat = ad.silu(norm(flat))
            x = ad.transpose(ad.reshape(flat, (b, h, wd, c)), (0, 3, 1, 2))
        return ad.reshape(x, (x.shape[0], self.out_dim))


class ConvDecoder:
    """Mirror of ConvEncoder: dense to a 4x4 map, then 4 stride-2 transposes."""

    def __init__(self, store: ParamStore, name: str, in_dim: int, out_channels: int,
                 depth: int, rng: np.random.Generator, resolution: int = 64):
        self.start_res = resolution // 16
        self.start_c = depth * 8
        self.lin = Linear(store, f"{name}/in", in_dim,
                          self.start_c * self.start_res ** 2, rng)
        self.layers = []
        c = self.start_c
        for i in range(4):
            out_c = out_channels if i == 3 else depth * (2 ** (2 - i))
            k = 4
            scale = 1.0 / np.sqrt(c * k * k)
            w = store.add(f"{name}/d{i}/w", trunc_normal(rng, (c, out_c, k, k), scale))
            norm = None if i == 3 else LayerNorm(store, f"{name}/d{i}/n", out_c)
            self.layers.append((w, norm))
            c = out_c

    def __call__(self, z: Tensor) -> Tensor:
        b = z.shape[0]
        x = ad.reshape(self.lin(z), (b, self.start_c, self.start_res, self.start_res))
        for w, norm in self.layers:
            x = ad.conv_transpose2d(x, w, stride=2, padding=1)
            if norm is not None:
                bb, c, h, wd = x.shape
                flat = ad.reshape(ad.transpose(x, (0, 2, 3, 1)), (bb * h * wd, c))
                flat = ad.silu(norm(flat))
                x = ad.transpose(ad.reshape(flat, (bb, h, wd, c)), (0, 3, 1, 2))
        return x
