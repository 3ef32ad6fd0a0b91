"""Deterministic named RNG substreams derived from one root seed."""

from __future__ import annotations

import zlib

import numpy as np


def substream(seed: int, label: str) -> np.random.Generator:
    """Independent generator for (seed, label); stable across runs."""
    key = zlib.crc32(label.encode("utf8"))
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(key,)))


def rng_state(gen: np.random.Generator) -> dict:
    return gen.bit_generator.state


def set_rng_state(gen: np.random.Generator, state: dict) -> None:
    gen.bit_generator.state = state
