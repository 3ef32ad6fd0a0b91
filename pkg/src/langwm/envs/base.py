"""Common environment step record and helpers.

Every environment emits exactly one token observation per step (pad when it
has nothing to say), a reward, and a continue flag that is 0 only on the
terminal step.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class EnvStep:
    image: np.ndarray
    token: int
    reward: float
    cont: int
    is_first: int
    info: dict = field(default_factory=dict)


class UtteranceStream:
    """Queue of utterances emitted one token per step.

    A new utterance can interrupt the current one (`interrupt=True`), which
    drops whatever was still streaming.
    """

    def __init__(self):
        self.current: list[int] = []
        self.cursor = 0

    @property
    def streaming(self) -> bool:
        return self.cursor < len(self.current)

    def begin(self, tokens: list[int], interrupt: bool = False) -> None:
        if self.streaming and not interrupt:
            return
        self.current = list(tokens)
        self.cursor = 0

    def pop(self, pad: int = 0) -> int:
        if not self.streaming:
            return pad
        tok = self.current[self.cursor]
        self.cursor += 1
        return tok

    def clear(self) -> None:
        self.current = []
        self.cursor = 0
