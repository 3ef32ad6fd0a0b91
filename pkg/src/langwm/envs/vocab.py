"""Shared token vocabulary and the whitespace tokenizer.

One vocabulary covers both environments so token ids stay stable across
transfer experiments: ids 0..14 are the question-answering room's tokens
(pad + 14 words, which is also its token action space), followed by <unk>,
punctuation, and the home-gridworld template words.

File format: one token string per line, line number = id, line 0 reserved
for the pad token.
"""

from __future__ import annotations

import re
from pathlib import Path

from ..errors import ConfigurationError

PAD = 0

# ids 0..14: the small QA-room vocabulary (pad + 14 words)
LANGROOM_WORDS = [
    "<pad>", "what", "color", "is", "the", "?", "it",
    "ball", "chair", "table", "lamp",
    "red", "green", "blue", "yellow",
]

_EXTRA_WORDS = [
    "<unk>", ".", ",",
    "find", "get", "put", "move", "open", "to", "in",
    "bottle", "fruit", "papers", "plates",
    "recycling", "trash", "compost", "bin",
    "kitchen", "living", "dining", "room",
    "i", "moved", "there", "will", "be", "later",
    "no", "turn", "around",
    "pedal", "grasp", "lift",
]

SHARED_WORDS = LANGROOM_WORDS + _EXTRA_WORDS

_TOKEN_RE = re.compile(r"[a-z0-9]+|[?.,!<>_-]+")


def build_vocab(mode: str = "shared", pad_to: int = 0) -> list[str]:
    """Vocabulary word list by mode: 'langroom' (15 ids) or 'shared'.

    `pad_to` appends dummy tokens until the vocabulary reaches that size
    (used to stress large action spaces); dummies never occur in any
    environment text.
    """
    if mode == "langroom":
        words = list(LANGROOM_WORDS)
    elif mode == "shared":
        words = list(SHARED_WORDS)
    else:
        raise ConfigurationError(f"unknown vocab mode {mode!r}")
    if pad_to:
        if pad_to < len(words):
            raise ConfigurationError(
                f"pad_to {pad_to} below base vocabulary size {len(words)}")
        words += [f"<extra{i}>" for i in range(pad_to - len(words))]
    return words


def save_vocab(words: list[str], path) -> None:
    Path(path).write_text("\n".join(words) + "\n", encoding="utf8")


def load_vocab(path) -> list[str]:
    lines = Path(path).read_text(encoding="utf8").splitlines()
    words = [ln.strip() for ln in lines if ln.strip() != ""]
    if not words:
        raise ConfigurationError(f"empty vocabulary file {path}")
    return words


class Tokenizer:
    """Lowercasing whitespace/punctuation splitter over a fixed vocabulary."""

    def __init__(self, words: list[str]):
        if len(set(words)) != len(words):
            raise ConfigurationError("vocabulary contains duplicate tokens")
        self.words = list(words)
        self.ids = {w: i for i, w in enumerate(words)}
        self.unk = self.ids.get("<unk>")

    @property
    def size(self) -> int:
        return len(self.words)

    def tokenize(self, text: str) -> list[int]:
        out = []
        for piece in _TOKEN_RE.findall(text.lower()):
            tid = self.ids.get(piece)
            if tid is None:
                if self.unk is None:
                    raise ConfigurationError(
                        f"token {piece!r} not in vocabulary and no <unk> present")
                tid = self.unk
            out.append(tid)
        return out

    def detokenize(self, ids) -> str:
        parts = []
        for tid in ids:
            if tid < 0 or tid >= len(self.words):
                raise ConfigurationError(f"token id {tid} out of range")
            word = self.words[tid]
            if word in (".", ",", "?", "!") and parts:
                parts[-1] += word
            else:
                parts.append(word)
        return " ".join(parts)
