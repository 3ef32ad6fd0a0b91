"""Synthetic text corpus from a small probabilistic grammar.

Documents are 3-8 sentences drawn from four templates over the shared
environment vocabulary: located/moved/future declaratives and a
question-answer pair matching the QA room's phrasing. The generator is
deterministic per seed, ships with a membership checker (every generated
line parses), and splits train/held-out with no document string shared
between the two.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .homegridlite import OBJECTS as HG_OBJECTS
from .homegridlite import ROOMS
from .langroom import COLORS, OBJECTS as LR_OBJECTS
from .vocab import SHARED_WORDS, Tokenizer

_TOK = Tokenizer(SHARED_WORDS)


def _ids(text: str) -> tuple[int, ...]:
    return tuple(_TOK.tokenize(text))


# template element: tuple of alternatives, each alternative a tuple of ids
def _lit(text: str):
    return (_ids(text),)


def _alt(*texts: str):
    return tuple(_ids(t) for t in texts)


_OBJ = _alt(*HG_OBJECTS)
_LOBJ = _alt(*LR_OBJECTS)
_ROOM = _alt(*ROOMS)
_COLOR = _alt(*COLORS)

TEMPLATES = [
    ("located", (_lit("the"), _OBJ, _lit("is in the"), _ROOM, _lit("."))),
    ("moved", (_lit("i moved the"), _OBJ, _lit("to the"), _ROOM, _lit("."))),
    ("future", (_lit("there will be"), _OBJ, _lit("in the"), _ROOM, _lit("later ."))),
    ("qa", (_lit("what color is the"), _LOBJ, _lit("? it is"), _COLOR, _lit("."))),
]


@dataclass
class Corpus:
    train: list[str]
    heldout: list[str]
    tokenizer: Tokenizer


def sentence(rng: np.random.Generator) -> str:
    _, parts = TEMPLATES[int(rng.integers(len(TEMPLATES)))]
    ids: list[int] = []
    for alternatives in parts:
        ids.extend(alternatives[int(rng.integers(len(alternatives)))])
    return _TOK.detokenize(ids)


def document(rng: np.random.Generator) -> str:
    n = int(rng.integers(3, 9))
    return " ".join(sentence(rng) for _ in range(n))


def generate(seed: int, documents: int, heldout_frac: float = 0.1) -> Corpus:
    """Deterministic corpus; held-out docs are textually disjoint from train."""
    rng = np.random.default_rng(seed)
    docs = [document(rng) for _ in range(documents)]
    n_held = max(1, int(documents * heldout_frac))
    heldout, train, seen_held = [], [], set()
    for d in docs:
        if len(heldout) < n_held and d not in seen_held:
            heldout.append(d)
            seen_held.add(d)
        else:
            train.append(d)
    train = [d for d in train if d not in seen_held]
    return Corpus(train=train, heldout=heldout, tokenizer=_TOK)


# ---------------------------------------------------------------------------
# membership checking
# ---------------------------------------------------------------------------

def _match_template(ids, pos: int, parts) -> int | None:
    """Return end position if `parts` match at `pos`, else None."""
    for alternatives in parts:
        matched = None
        for alt in alternatives:
            if ids[pos:pos + len(alt)] == list(alt):
                matched = len(alt)
                break
        if matched is None:
            return None
        pos += matched
    return pos


def _match_sentence(ids, pos: int) -> int | None:
    for _, parts in TEMPLATES:
        end = _match_template(ids, pos, parts)
        if end is not None:
            return end
    return None


def is_grammatical(token_ids, allow_partial_tail: bool = False) -> bool:
    """True if the id sequence is a concatenation of template sentences.

    With `allow_partial_tail`, a trailing strict prefix of some sentence is
    accepted (used when judging fixed-length generations).
    """
    ids = list(token_ids)
    pos = 0
    while pos < len(ids):
        end = _match_sentence(ids, pos)
        if end is None:
            return allow_partial_tail and _is_sentence_prefix(ids[pos:])
        pos = end
    return True


def _is_sentence_prefix(tail: list[int]) -> bool:
    for _, parts in TEMPLATES:
        if _prefix_matches(tail, 0, parts):
            return True
    return False


def _prefix_matches(ids, pos: int, parts) -> bool:
    # walk parts consuming ids; succeed if ids run out mid-way
    def walk(pos: int, part_idx: int) -> bool:
        if pos >= len(ids):
            return True
        if part_idx >= len(parts):
            return False
        for alt in parts[part_idx]:
            n = len(alt)
            take = min(n, len(ids) - pos)
            if ids[pos:pos + take] == list(alt[:take]):
                if take < n:
                    return True
                if walk(pos + n, part_idx + 1):
                    return True
        return False

    return walk(pos, 0)


def grammatical_text(text: str, allow_partial_tail: bool = False) -> bool:
    return is_grammatical(_TOK.tokenize(text), allow_partial_tail)


def unigram_cross_entropy(train_docs: list[str], heldout_docs: list[str],
                          vocab_size: int, smoothing: float = 1.0) -> float:
    """Held-out per-token cross entropy (nats) of an add-k unigram model."""
    counts = np.full(vocab_size, smoothing, dtype=np.float64)
    for doc in train_docs:
        for tid in _TOK.tokenize(doc):
            counts[tid] += 1
    logp = np.log(counts / counts.sum())
    total, n = 0.0, 0
    for doc in heldout_docs:
        for tid in _TOK.tokenize(doc):
            total -= logp[tid]
            n += 1
    return total / max(1, n)
