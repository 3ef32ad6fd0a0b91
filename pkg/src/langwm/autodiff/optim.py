"""Parameter storage and the adaptive-moment optimizer.

Update rule per step: clip the global gradient norm across all parameters,
then apply bias-corrected Adam, increment the step counter, and zero the
gradients. NaN gradients abort with the offending parameter's name.
"""

from __future__ import annotations

import numpy as np

from ..errors import ConfigurationError, NumericalError
from .tensor import Tensor


class ParamStore:
    """Named trainable tensors plus a shared step counter."""

    def __init__(self):
        self.params: dict[str, Tensor] = {}
        self.step = 0

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self.params:
            raise ConfigurationError(f"duplicate parameter name {name!r}")
        t = Tensor(np.asarray(value), requires_grad=True)
        self.params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __iter__(self):
        return iter(self.params.items())

    def __len__(self):
        return len(self.params)

    def num_values(self) -> int:
        return sum(int(p.size) for p in self.params.values())

    def zero_grads(self) -> None:
        for p in self.params.values():
            p.grad = None

    def grads(self) -> dict[str, np.ndarray | None]:
        return {k: p.grad for k, p in self.params.items()}

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        missing = set(self.params) ^ set(state)
        if missing:
            raise ConfigurationError(f"parameter set mismatch: {sorted(missing)[:4]}")
        for k, p in self.params.items():
            arr = np.asarray(state[k], dtype=p.data.dtype)
            if arr.shape != p.data.shape:
                raise ConfigurationError(
                    f"shape mismatch for {k!r}: {arr.shape} vs {p.data.shape}"
                )
            p.data = arr.copy()


class Adam:
    """Adam with global-norm clipping applied before the moment update."""

    def __init__(self, store: ParamStore, lr: float = 1e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8, clip: float = 100.0):
        self.store = store
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.clip = clip
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def grad_norm(self) -> float:
        total = 0.0
        for name, p in self.store:
            if p.grad is None:
                continue
            g = p.grad.astype(np.float64, copy=False)
            total += float(np.dot(g.reshape(-1), g.reshape(-1)))
        return float(np.sqrt(total))

    def step(self) -> float:
        """Apply one update; returns the pre-clip global gradient norm."""
        for name, p in self.store:
            if p.grad is not None and not np.all(np.isfinite(p.grad)):
                raise NumericalError(f"NaN/Inf gradient in parameter {name!r}")
        norm = self.grad_norm()
        scale = 1.0 if norm <= self.clip else self.clip / norm
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for name, p in self.store:
            if p.grad is None:
                continue
            g = p.grad * scale if scale != 1.0 else p.grad
            m = self.m.get(name)
            if m is None:
                m = self.m[name] = np.zeros_like(p.data, dtype=np.float64)
            v = self.v.get(name)
            if v is None:
                v = self.v[name] = np.zeros_like(p.data, dtype=np.float64)
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            update = (m / b1c) / (np.sqrt(v / b2c) + self.eps)
            p.data = p.data - (self.lr * update).astype(p.data.dtype)
        self.store.zero_grads()
        self.store.step += 1
        return norm

    def state_dict(self) -> dict:
        return {
            "t": self.t,
            "m": {k: v.copy() for k, v in self.m.items()},
            "v": {k: v.copy() for k, v in self.v.items()},
        }

    def load_state_dict(self, state: dict) -> None:
        self.t = int(state["t"])
        self.m = {k: np.asarray(v, dtype=np.float64).copy() for k, v in state["m"].items()}
        self.v = {k: np.asarray(v, dtype=np.float64).copy() for k, v in state["v"].items()}
