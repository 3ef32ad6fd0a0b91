"""Shared numeric estimators for the model and the policy.

* symlog/symexp pair and twohot scalar regression over exponentially spaced
  bins (uniform in symlog space, symmetric about zero),
* straight-through sampling of vectors of one-hot categoricals,
* categorical KL with a free-nat floor (clipped at 1 nat by default so the
  term contributes no gradient below the floor),
* an exponential moving average of a batch percentile range, used to scale
  policy advantages.

Group probabilities are mixed with 1% uniform before sampling and before KL
terms, which keeps every class probability strictly positive.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import ConfigurationError, UsageError


def symlog(x):
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.log1p(np.abs(x))


def symexp(x):
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.expm1(np.abs(x))


@dataclass(frozen=True)
class TwohotSpec:
    """Bin layout for scalar-as-classification regression.

    `bins` odd so the middle center sits exactly at zero; centers are
    symexp of a uniform grid on [low, high] in symlog space.
    """

    bins: int = 63
    low: float = -20.0
    high: float = 20.0

    def __post_init__(self):
        if self.bins < 3 or self.bins % 2 == 0:
            raise ConfigurationError(f"twohot bins must be odd and >= 3, got {self.bins}")
        if not (self.low < 0.0 < self.high) or self.low != -self.high:
            raise ConfigurationError("twohot range must be symmetric about zero")

    @property
    def grid(self) -> np.ndarray:
        """Bin positions in symlog space (uniform)."""
        return np.linspace(self.low, self.high, self.bins)

    @property
    def centers(self) -> np.ndarray:
        return symexp(self.grid)


def twohot_encode(values, spec: TwohotSpec) -> np.ndarray:
    """Weights over the bins: at most two adjacent nonzero, summing to one.

    Linear interpolation between the bracketing centers in symlog space;
    values outside the outermost centers clamp to them.
    """
    values = np.asarray(values, dtype=np.float64)
    shape = values.shape
    s = np.clip(symlog(values).reshape(-1), spec.low, spec.high)
    step = (spec.high - spec.low) / (spec.bins - 1)
    pos = (s - spec.low) / step
    lo = np.clip(np.floor(pos).astype(np.int64), 0, spec.bins - 2)
    frac = pos - lo
    out = np.zeros((s.size, spec.bins), dtype=np.float64)
    rows = np.arange(s.size)
    out[rows, lo] = 1.0 - frac
    out[rows, lo + 1] += frac
    return out.reshape(shape + (spec.bins,))


def twohot_decode(probs, spec: TwohotSpec) -> np.ndarray:
    """symexp of the probability-weighted mean of the symlog bin positions."""
    probs = np.asarray(probs, dtype=np.float64)
    if np.any(probs < -1e-9):
        raise UsageError("twohot_decode: negative probability")
    total = probs.sum(axis=-1)
    if np.any(np.abs(total - 1.0) > 1e-6):
        raise UsageError("twohot_decode: probabilities must sum to 1")
    return symexp(probs @ spec.grid)


# ---------------------------------------------------------------------------
# straight-through categoricals
# ---------------------------------------------------------------------------

@dataclass
class CategoricalCode:
    """A sampled vector of one-hot categoricals with its distribution.

    `sample` carries straight-through gradients: forward it is exactly
    one-hot per group, backward it behaves like `probs`. `probs` are the
    uniform-mixed softmax probabilities (the distribution actually sampled).
    """

    sample: ad.Tensor  # (..., N, K), one-hot forward
    probs: ad.Tensor   # (..., N, K)
    onehot: np.ndarray  # plain numpy copy of the sample


def mixed_probs(logits: ad.Tensor, unimix: float = 0.01) -> ad.Tensor:
    """Softmax over the last axis mixed with `unimix` of uniform."""
    p = ad.softmax(logits, axis=-1)
    if unimix:
        k = logits.shape[-1]
        p = p * (1.0 - unimix) + (unimix / k)
    return p


def st_sample(logits: ad.Tensor, rng: np.random.Generator,
              unimix: float = 0.01) -> CategoricalCode:
    """Sample one-hots per group; gradients pass through the probabilities."""
    probs = mixed_probs(logits, unimix)
    p = probs.data
    flat = p.reshape(-1, p.shape[-1])
    cum = np.cumsum(flat, axis=-1)
    u = rng.random((flat.shape[0], 1)) * cum[:, -1:]
    choice = (u > cum).sum(axis=-1)
    onehot = np.zeros_like(flat)
    onehot[np.arange(flat.shape[0]), choice] = 1.0
    onehot = onehot.reshape(p.shape)
    sample = probs + ad.Tensor(onehot - p)
    return CategoricalCode(sample=sample, probs=probs, onehot=onehot)


def onehot_code(onehot: np.ndarray) -> CategoricalCode:
    """Wrap an externally supplied one-hot array as a constant code."""
    t = ad.Tensor(onehot)
    return CategoricalCode(sample=t, probs=t, onehot=np.asarray(onehot))


def categorical_kl(p: ad.Tensor, q: ad.Tensor) -> ad.Tensor:
    """KL(p || q) summed over the class axis and all group axes past the first.

    p, q: probability tensors (..., N, K); returns shape (...,) with the
    leading axis kept (the batch).
    """
    logp = ad.log(p)
    logq = ad.log(q)
    per_group = ad.sum_(p * (logp - logq), axis=-1)
    if per_group.ndim > 1:
        axes = tuple(range(1, per_group.ndim))
        return ad.sum_(per_group, axis=axes)
    return per_group


def free_nat_clip(kl: ad.Tensor, floor: float = 1.0) -> ad.Tensor:
    """max(floor, kl) elementwise; zero gradient wherever kl < floor."""
    return ad.maximum(ad.constant(np.full(kl.shape, floor, dtype=kl.dtype)), kl)


def kl_clipped(p_logits: ad.Tensor, q_logits: ad.Tensor,
               stop_gradient_side: str = "target", unimix: float = 0.01,
               floor: float = 1.0) -> ad.Tensor:
    """Group-summed KL between two categorical codes with a free-nat floor.

    `stop_gradient_side` names which distribution is detached: "target"
    stops q (gradients shape p), "input" stops p (gradients shape q).
    Returns the mean over the batch axis.
    """
    if stop_gradient_side not in ("target", "input"):
        raise ConfigurationError(f"unknown stop_gradient_side {stop_gradient_side!r}")
    p = mixed_probs(p_logits, unimix)
    q = mixed_probs(q_logits, unimix)
    if stop_gradient_side == "target":
        q = ad.stop_gradient(q)
    else:
        p = ad.stop_gradient(p)
    return ad.mean(free_nat_clip(categorical_kl(p, q), floor))


# ---------------------------------------------------------------------------
# percentile range EMA
# ---------------------------------------------------------------------------

@dataclass
class PercentileEMA:
    """Running estimate of the 5th-95th percentile spread of a return batch."""

    decay: float = 0.99
    low_pct: float = 5.0
    high_pct: float = 95.0
    low: float = 0.0
    high: float = 0.0
    initialized: bool = False

    def update(self, returns) -> float:
        returns = np.asarray(returns, dtype=np.float64).reshape(-1)
        if returns.size == 0:
            raise UsageError("percentile update needs a nonempty batch")
        lo = float(np.percentile(returns, self.low_pct))
        hi = float(np.percentile(returns, self.high_pct))
        if not self.initialized:
            self.low, self.high = lo, hi
            self.initialized = True
        else:
            self.low = self.decay * self.low + (1.0 - self.decay) * lo
            self.high = self.decay * self.high + (1.0 - self.decay) * hi
        return self.spread

    @property
    def spread(self) -> float:
        return self.high - self.low

    def state_dict(self) -> dict:
        return {"decay": self.decay, "low": self.low, "high": self.high,
                "initialized": self.initialized}

    def load_state_dict(self, state: dict) -> None:
        self.decay = float(state["decay"])
        self.low = float(state["low"])
        self.high = float(state["high"])
        self.initialized = bool(state["initialized"])
