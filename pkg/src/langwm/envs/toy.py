"""Tiny deterministic MDPs used for learning smoke tests.

ChainEnv: 3 states in a row, start at 0, reward 1 for reaching the end
(terminal), otherwise episodes cap at 8 steps. An expert earns exactly 1.0
per episode in 2 steps.

ToggleEnv: 2 states, action 1 toggles, reward 1 every step spent in state 1;
fixed 16-step episodes. Used to check that imagined rollouts of a trained
model reproduce real reward sequences open-loop.
"""

from __future__ import annotations

import numpy as np

from ..errors import DataError
from .base import EnvStep


class ChainEnv:
    obs_kind = "symbol"
    obs_shape = (3, 1, 1)
    vocab_size = 2
    action_dims = (2,)

    def __init__(self, seed: int = 0, episode_len: int = 8):
        self.episode_len = episode_len
        self.rng = np.random.default_rng(seed)
        self.reset()

    def _obs(self) -> np.ndarray:
        img = np.zeros(self.obs_shape, dtype=np.uint8)
        img[self.state, 0, 0] = 1
        return img

    def reset(self, seed: int | None = None) -> EnvStep:
        if seed is not None:
            self.rng = np.random.default_rng(seed)
        self.state = 0
        self.t = 0
        self.episode_return = 0.0
        return EnvStep(image=self._obs(), token=0, reward=0.0, cont=1, is_first=1)

    def step(self, action) -> EnvStep:
        a = int(np.asarray(action).reshape(-1)[0])
        if a not in (0, 1):
            raise DataError(f"chain action {a} out of range")
        self.state = max(0, min(2, self.state + (1 if a == 1 else -1)))
        self.t += 1
        reward = 1.0 if self.state == 2 else 0.0
        self.episode_return += reward
        done = self.state == 2 or self.t >= self.episode_len
        info = {"episode": {"score": self.episode_return}} if done else {}
        return EnvStep(image=self._obs(), token=0, reward=reward,
                       cont=0 if done else 1, is_first=0, info=info)

    def rng_state(self) -> dict:
        return self.rng.bit_generator.state

    def set_rng_state(self, state: dict) -> None:
        self.rng.bit_generator.state = state


class ToggleEnv:
    obs_kind = "symbol"
    obs_shape = (2, 1, 1)
    vocab_size = 2
    action_dims = (2,)

    def __init__(self, seed: int = 0, episode_len: int = 16):
        self.episode_len = episode_len
        self.rng = np.random.default_rng(seed)
        self.reset()

    def _obs(self) -> np.ndarray:
        img = np.zeros(self.obs_shape, dtype=np.uint8)
        img[self.state, 0, 0] = 1
        return img

    def reset(self, seed: int | None = None) -> EnvStep:
        if seed is not None:
            self.rng = np.random.default_rng(seed)
        self.state = 0
        self.t = 0
        self.episode_return = 0.0
        return EnvStep(image=self._obs(), token=0, reward=0.0, cont=1, is_first=1)

    def step(self, action) -> EnvStep:
        a = int(np.asarray(action).reshape(-1)[0])
        if a not in (0, 1):
            raise DataError(f"toggle action {a} out of range")
        if a == 1:
            self.state = 1 - self.state
        self.t += 1
        reward = float(self.state == 1)
        self.episode_return += reward
        done = self.t >= self.episode_len
        info = {"episode": {"score": self.episode_return}} if done else {}
        return EnvStep(image=self._obs(), token=0, reward=reward,
                       cont=0 if done else 1, is_first=0, info=info)

    def rng_state(self) -> dict:
        return self.rng.bit_generator.state

    def set_rng_state(self, state: dict) -> None:
        self.rng.bit_generator.state = state
