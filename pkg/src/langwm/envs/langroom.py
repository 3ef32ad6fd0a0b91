"""Embodied question answering in a small room.

Four objects sit at fixed corner positions with colors re-randomized after
every question/answer round. The environment streams "what color is the
<object>?", a random stretch of silence, then "it is <color>". The agent
moves (5 movement actions) and speaks one token per step (its second action
factor). It is rewarded +1 for emitting the correct color token on the step
in which the environment produces the color token, -0.1 for any other
non-silent token on that step, -0.01 for speaking on any other step, and 0
for silence.

Alignment detail: the scored action is the one submitted to the `step` call
that emits the color token, i.e. the agent answers before observing the
environment's own answer, so it must have seen the object to know its color.
The room is 9x9 with a 5x5 egocentric view; the corners are never visible
from the center, forcing information-gathering movement.
"""

from __future__ import annotations

import numpy as np

from ..errors import DataError
from .base import EnvStep
from .vocab import LANGROOM_WORDS, PAD, build_vocab

OBJECTS = ["ball", "chair", "table", "lamp"]
COLORS = ["red", "green", "blue", "yellow"]
MOVES = {0: (-1, 0), 1: (1, 0), 2: (0, -1), 3: (0, 1), 4: (0, 0)}  # up/down/left/right/stay

GRID = 9
VIEW = 5
EPISODE_LEN = 200
SILENCE_RANGE = (2, 10)

CHANNELS = 1 + len(OBJECTS) + len(COLORS)  # out-of-bounds, object one-hot, color one-hot


class LangRoom:
    obs_kind = "symbol"
    obs_shape = (CHANNELS, VIEW, VIEW)

    def __init__(self, seed: int = 0, token_actions: int = 15,
                 episode_len: int = EPISODE_LEN):
        self.words = build_vocab("langroom")
        self.ids = {w: i for i, w in enumerate(self.words)}
        self.vocab_size = len(self.words)
        self.token_actions = token_actions
        self.action_dims = (len(MOVES), token_actions)
        self.episode_len = episode_len
        self.rng = np.random.default_rng(seed)
        self.corners = [(0, 0), (0, GRID - 1), (GRID - 1, 0), (GRID - 1, GRID - 1)]
        self._color_ids = [self.ids[c] for c in COLORS]
        self.reset()

    # ------------------------------------------------------------------
    def _new_round(self) -> None:
        self.colors = [int(self.rng.integers(len(COLORS))) for _ in OBJECTS]
        self.q_object = int(self.rng.integers(len(OBJECTS)))
        obj_word = OBJECTS[self.q_object]
        color_word = COLORS[self.colors[self.q_object]]
        silence = int(self.rng.integers(SILENCE_RANGE[0], SILENCE_RANGE[1] + 1))
        script = [self.ids[w] for w in ("what", "color", "is", "the", obj_word, "?")]
        script += [PAD] * silence
        script += [self.ids["it"], self.ids["is"]]
        # (token, is_answer_slot)
        self.script = [(t, False) for t in script]
        self.script.append((self.ids[color_word], True))
        self.cursor = 0

    def _pop_token(self) -> tuple[int, bool]:
        if self.cursor >= len(self.script):
            self._new_round()
        tok, is_answer = self.script[self.cursor]
        self.cursor += 1
        return tok, is_answer

    def _render(self) -> np.ndarray:
        obs = np.zeros(self.obs_shape, dtype=np.uint8)
        r0, c0 = self.agent[0] - VIEW // 2, self.agent[1] - VIEW // 2
        for i in range(VIEW):
            for j in range(VIEW):
                r, c = r0 + i, c0 + j
                if not (0 <= r < GRID and 0 <= c < GRID):
                    obs[0, i, j] = 1
                    continue
                for k, pos in enumerate(self.corners):
                    if (r, c) == pos:
                        obs[1 + k, i, j] = 1
                        obs[1 + len(OBJECTS) + self.colors[k], i, j] = 1
        return obs

    # ------------------------------------------------------------------
    def reset(self, seed: int | None = None) -> EnvStep:
        if seed is not None:
            self.rng = np.random.default_rng(seed)
        self.agent = (GRID // 2, GRID // 2)
        self.t = 0
        self.qa_rounds = 0
        self.qa_correct = 0
        self.episode_return = 0.0
        self._new_round()
        tok, self._answer_pending = self._pop_token()
        return EnvStep(image=self._render(), token=tok, reward=0.0, cont=1,
                       is_first=1, info={"phase": self.phase})

    def step(self, action) -> EnvStep:
        action = np.asarray(action).reshape(-1)
        move, spoken = int(action[0]), int(action[1])
        if move not in MOVES:
            raise DataError(f"movement action {move} out of range")
        if not (0 <= spoken < self.token_actions):
            raise DataError(f"token action {spoken} out of range")

        # score the action against the token this step is about to emit
        tok, is_answer = self._pop_token()
        reward = 0.0
        info: dict = {}
        if is_answer:
            self.qa_rounds += 1
            if spoken == tok:
                reward = 1.0
                self.qa_correct += 1
            elif spoken != PAD:
                reward = -0.1
            info["answer_event"] = {"correct": spoken == tok}
        elif spoken != PAD:
            reward = -0.01

        dr, dc = MOVES[move]
        nr, nc = self.agent[0] + dr, self.agent[1] + dc
        if 0 <= nr < GRID and 0 <= nc < GRID and (nr, nc) not in self.corners:
            self.agent = (nr, nc)

        self.t += 1
        self.episode_return += reward
        cont = 0 if self.t >= self.episode_len else 1
        info["phase"] = self.phase
        if cont == 0:
            info["episode"] = {
                "qa_rounds": self.qa_rounds,
                "qa_correct": self.qa_correct,
                "qa_accuracy": self.qa_correct / max(1, self.qa_rounds),
            }
        return EnvStep(image=self._render(), token=tok, reward=reward,
                       cont=cont, is_first=0, info=info)

    # ------------------------------------------------------------------
    @property
    def phase(self) -> str:
        idx = min(self.cursor, len(self.script) - 1)
        tok, is_answer = self.script[idx]
        if is_answer or self.script[max(0, idx - 1)][0] == self.ids["it"]:
            return "answer"
        return "silence" if tok == PAD else "question"

    def answer_is_next(self) -> bool:
        """True when the next step call will emit the color token (oracle use)."""
        if self.cursor >= len(self.script):
            return False
        return self.script[self.cursor][1]

    def correct_color_token(self) -> int:
        return self._color_ids[self.colors[self.q_object]]

    def rng_state(self) -> dict:
        return self.rng.bit_generator.state

    def set_rng_state(self, state: dict) -> None:
        self.rng.bit_generator.state = state
