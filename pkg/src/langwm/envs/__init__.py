"""Environments, tokenizer, language streaming, and the text corpus."""

from .base import EnvStep, UtteranceStream
from .homegridlite import HomeGridLite
from .langroom import LangRoom
from .toy import ChainEnv, ToggleEnv
from .vocab import Tokenizer, build_vocab, load_vocab, save_vocab

from ..errors import ConfigurationError


def make_env(name: str, seed: int = 0, **kwargs):
    if name == "langroom":
        return LangRoom(seed=seed, **kwargs)
    if name == "homegrid":
        return HomeGridLite(seed=seed, **kwargs)
    if name == "chain":
        return ChainEnv(seed=seed, **kwargs)
    if name == "toggle":
        return ToggleEnv(seed=seed, **kwargs)
    raise ConfigurationError(f"unknown environment {name!r}")


__all__ = [
    "ChainEnv", "EnvStep", "HomeGridLite", "LangRoom", "ToggleEnv", "Tokenizer",
    "UtteranceStream", "build_vocab", "load_vocab", "make_env", "save_vocab",
]
