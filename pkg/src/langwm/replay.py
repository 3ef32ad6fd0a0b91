"""Uniform-sampling replay of observation/action streams.

Transitions are stored per stream (one stream per parallel environment) in
preallocated rings. A sampled segment is a contiguous window of one stream;
episode boundaries inside a segment are visible through the stored is_first
flags, so the model can reset its state mid-segment. Segments never wrap
over the write position.

Images are stored as uint8 (symbol grids verbatim; pixels quantized by 255)
and converted to float on sampling. Transitions are never mutated after
insertion; sampling returns copies.
"""

from __future__ import annotations

import json

import numpy as np

from .errors import ConfigurationError, UsageError
from .seeding import rng_state, set_rng_state


class _Ring:
    def __init__(self, capacity: int, obs_shape: tuple, action_factors: int):
        self.capacity = capacity
        self.image = np.zeros((capacity,) + tuple(obs_shape), dtype=np.uint8)
        self.token = np.zeros(capacity, dtype=np.int32)
        self.reward = np.zeros(capacity, dtype=np.float32)
        self.cont = np.zeros(capacity, dtype=np.float32)
        self.is_first = np.zeros(capacity, dtype=np.uint8)
        self.action = np.zeros((capacity, action_factors), dtype=np.int32)
        self.episode = np.zeros(capacity, dtype=np.int32)
        self.step_idx = np.zeros(capacity, dtype=np.int32)
        self.pos = 0
        self.size = 0

    def add(self, image, token, reward, cont, is_first, action, episode, step_idx):
        i = self.pos
        self.image[i] = image
        self.token[i] = token
        self.reward[i] = reward
        self.cont[i] = cont
        self.is_first[i] = is_first
        self.action[i] = action
        self.episode[i] = episode
        self.step_idx[i] = step_idx
        self.pos = (self.pos + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def eligible(self, length: int) -> int:
        return max(0, self.size - length + 1)

    def gather(self, start_offset: int, length: int) -> np.ndarray:
        """Ring indices for a segment starting `start_offset` steps into the
        oldest-to-newest window."""
        oldest = (self.pos - self.size) % self.capacity
        return (oldest + start_offset + np.arange(length)) % self.capacity


class ReplayBuffer:
    def __init__(self, capacity: int, obs_shape: tuple, action_factors: int,
                 seed: int = 0, num_streams: int = 1, pixel_obs: bool = False):
        if capacity < num_streams:
            raise ConfigurationError("replay capacity smaller than stream count")
        self.obs_shape = tuple(obs_shape)
        self.action_factors = action_factors
        self.pixel_obs = pixel_obs
        per = capacity // num_streams
        self.rings = [_Ring(per, obs_shape, action_factors) for _ in range(num_streams)]
        self.rng = np.random.default_rng(seed)

    @property
    def size(self) -> int:
        return sum(r.size for r in self.rings)

    def add(self, image: np.ndarray, token: int, reward: float, cont: float,
            is_first: int, action: np.ndarray, episode: int = 0,
            step_idx: int = 0, stream: int = 0) -> None:
        if self.pixel_obs:
            image = np.clip(np.asarray(image) * 255.0, 0, 255).astype(np.uint8)
        self.rings[stream].add(image, token, reward, cont, is_first, action,
                               episode, step_idx)

    def _decode_image(self, raw: np.ndarray) -> np.ndarray:
        out = raw.astype(np.float32)
        if self.pixel_obs:
            out /= 255.0
        return out

    def can_sample(self, batch: int, length: int) -> bool:
        return sum(r.eligible(length) for r in self.rings) >= max(batch, 1)

    def sample(self, batch: int, length: int) -> dict:
        """Uniform over all eligible (stream, start) pairs, with replacement."""
        counts = np.array([r.eligible(length) for r in self.rings], dtype=np.int64)
        total = counts.sum()
        if total <= 0:
            raise UsageError("not enough data in replay to sample a segment")
        flat = self.rng.integers(0, total, size=batch)
        bounds = np.cumsum(counts)
        out = {
            "image": np.empty((batch, length) + self.obs_shape, dtype=np.float32),
            "token": np.empty((batch, length), dtype=np.int64),
            "reward": np.empty((batch, length), dtype=np.float32),
            "cont": np.empty((batch, length), dtype=np.float32),
            "is_first": np.empty((batch, length), dtype=np.float32),
            "action": np.empty((batch, length, self.action_factors), dtype=np.int64),
            "prev_action_first": np.zeros((batch, self.action_factors), dtype=np.int64),
        }
        for b, f in enumerate(flat):
            s = int(np.searchsorted(bounds, f, side="right"))
            offset = int(f - (bounds[s - 1] if s else 0))
            ring = self.rings[s]
            idx = ring.gather(offset, length)
            out["image"][b] = self._decode_image(ring.image[idx])
            out["token"][b] = ring.token[idx]
            out["reward"][b] = ring.reward[idx]
            out["cont"][b] = ring.cont[idx]
            out["is_first"][b] = ring.is_first[idx]
            out["action"][b] = ring.action[idx]
            if offset > 0 and not ring.is_first[idx[0]]:
                prev = ring.gather(offset - 1, 1)[0]
                out["prev_action_first"][b] = ring.action[prev]
        return out

    # ------------------------------------------------------------------
    def save(self, path) -> None:
        arrays = {}
        meta = {"pixel_obs": self.pixel_obs, "streams": len(self.rings),
                "rng": rng_state(self.rng), "pos": [], "size": []}
        for i, r in enumerate(self.rings):
            meta["pos"].append(r.pos)
            meta["size"].append(r.size)
            for field in ("image", "token", "reward", "cont", "is_first",
                          "action", "episode", "step_idx"):
                arrays[f"{i}/{field}"] = getattr(r, field)
        arrays["__meta__"] = np.frombuffer(json.dumps(meta).encode("utf8"), dtype=np.uint8)
        np.savez_compressed(path, **arrays)

    def load(self, path) -> None:
        with np.load(path) as data:
            meta = json.loads(bytes(data["__meta__"]).decode("utf8"))
            if meta["streams"] != len(self.rings):
                raise ConfigurationError("replay stream count mismatch")
            self.pixel_obs = bool(meta["pixel_obs"])
            set_rng_state(self.rng, meta["rng"])
            for i, r in enumerate(self.rings):
                r.pos = int(meta["pos"][i])
                r.size = int(meta["size"][i])
                for field in ("image", "token", "reward", "cont", "is_first",
                              "action", "episode", "step_idx"):
                    arr = data[f"{i}/{field}"]
                    if arr.shape != getattr(r, field).shape:
                        raise ConfigurationError(f"replay field {field} shape mismatch")
                    setattr(r, field, arr.copy())
