"""Command-line entry point.

Subcommands: train, pretrain, finetune, eval, rollout, generate.
Exit codes: 0 success, 2 configuration/usage error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import checkpoint as ckpt
from .config import config_text, load_config, save_config
from .envs.grammar import generate as generate_corpus, grammatical_text
from .errors import ConfigurationError, DataError, NumericalError, UsageError
from .metrics import JsonlWriter
from .runtime import (Agent, Trainer, build_env, evaluate, load_agent_from_run,
                      pretrain, resolve_vocab)
from .seeding import substream
from .envs.vocab import Tokenizer, build_vocab, load_vocab


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigurationError, UsageError, DataError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except NumericalError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 3


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="langwm",
                                description="language-conditioned world-model agent")
    sub = p.add_subparsers(dest="cmd", required=True)

    def common(sp):
        sp.add_argument("--config", default=None,
                        help="preset name or INI file path")
        sp.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="KEY=VALUE", help="config override (repeatable)")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--outdir", default="runs/run")

    sp = sub.add_parser("train", help="train an agent in an environment")
    common(sp)
    sp.add_argument("--resume", action="store_true",
                    help="resume from the checkpoint in --outdir")
    sp.set_defaults(fn=cmd_train)

    sp = sub.add_parser("pretrain", help="text-only pretraining on the grammar corpus")
    common(sp)
    sp.set_defaults(fn=cmd_pretrain)

    sp = sub.add_parser("finetune", help="train starting from a pretrained world model")
    common(sp)
    sp.add_argument("--from-run", required=True,
                    help="run directory holding the pretrained checkpoint")
    sp.set_defaults(fn=cmd_finetune)

    sp = sub.add_parser("eval", help="evaluate a checkpointed agent")
    sp.add_argument("--run", required=True, help="run directory with ckpt.bin")
    sp.add_argument("--episodes", type=int, default=50)
    sp.add_argument("--seed", type=int, default=1234)
    sp.add_argument("--greedy", action="store_true")
    sp.set_defaults(fn=cmd_eval)

    sp = sub.add_parser("rollout", help="dump real + imagined trajectories as JSON lines")
    sp.add_argument("--run", required=True)
    sp.add_argument("--episodes", type=int, default=1)
    sp.add_argument("--horizon", type=int, default=15)
    sp.add_argument("--samples", type=int, default=3, help="imagined rollouts per step")
    sp.add_argument("--out", default="-", help="output path or - for stdout")
    sp.add_argument("--seed", type=int, default=1234)
    sp.add_argument("--images", action="store_true",
                    help="include real/reconstructed observations in the dump")
    sp.set_defaults(fn=cmd_rollout)

    sp = sub.add_parser("generate", help="sample text from a (pre)trained model")
    sp.add_argument("--run", required=True)
    sp.add_argument("--prefix", default="")
    sp.add_argument("--length", type=int, default=10)
    sp.add_argument("--temperature", type=float, default=1.0)
    sp.add_argument("--seed", type=int, default=1234)
    sp.add_argument("--samples", type=int, default=1)
    sp.add_argument("--check-grammar", action="store_true",
                    help="append a grammar-validity flag per sample")
    sp.set_defaults(fn=cmd_generate)
    return p


def _load_cfg(args):
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    return load_config(args.config, overrides)


def cmd_train(args) -> int:
    cfg = _load_cfg(args)
    trainer = Trainer(cfg, args.outdir, resume=args.resume)
    trainer.run()
    print(f"done: {trainer.state.env_steps} env steps, "
          f"{trainer.state.updates} updates -> {args.outdir}")
    return 0


def cmd_pretrain(args) -> int:
    cfg = _load_cfg(args)
    out = pretrain(cfg, args.outdir)
    print(json.dumps(out))
    return 0


def cmd_finetune(args) -> int:
    cfg = _load_cfg(args)
    trainer = Trainer(cfg, args.outdir)
    src = Path(args.from_run)
    _, arrays, _ = ckpt.load(src / "ckpt.bin")
    trainer.agent.load_arrays(arrays, params_only=True)
    trainer.run()
    print(f"done: finetuned from {src} -> {args.outdir}")
    return 0


def cmd_eval(args) -> int:
    cfg, agent, _ = load_agent_from_run(args.run)
    env = build_env(cfg, args.seed, eval_env=True, instance=1)
    rng = substream(args.seed, "cli-eval")
    out = evaluate(agent, env, args.episodes, rng, greedy=args.greedy)
    print(json.dumps(out))
    return 0


def cmd_generate(args) -> int:
    cfg, agent, _ = load_agent_from_run(args.run)
    words, _, _ = resolve_vocab(cfg)
    if words is None:
        raise ConfigurationError("this run's environment has no text vocabulary")
    tok = Tokenizer(words)
    if tok.size != agent.wm.cfg.vocab_size:
        raise ConfigurationError(
            f"vocabulary size {tok.size} does not match checkpoint "
            f"({agent.wm.cfg.vocab_size})")
    prefix = tok.tokenize(args.prefix) if args.prefix else []
    rng = substream(args.seed, "cli-generate")
    for _ in range(max(1, args.samples)):
        ids = agent.wm.decode_text_rollout(prefix, args.length, rng,
                                           temperature=args.temperature)
        text = tok.detokenize(ids)
        if args.check_grammar:
            full = tok.detokenize(list(prefix) + list(ids))
            flag = grammatical_text(full, allow_partial_tail=True)
            print(f"{text}\t[grammatical={flag}]")
        else:
            print(text)
    return 0


def cmd_rollout(args) -> int:
    cfg, agent, _ = load_agent_from_run(args.run)
    env = build_env(cfg, args.seed, eval_env=True, instance=2)
    rng = substream(args.seed, "cli-rollout")
    out_fh = sys.stdout if args.out == "-" else open(args.out, "w", encoding="utf8")
    try:
        for ep in range(args.episodes):
            _dump_episode(agent, env, ep, args, rng, out_fh)
    finally:
        if out_fh is not sys.stdout:
            out_fh.close()
    return 0


def _dump_episode(agent: Agent, env, ep: int, args, rng, out_fh) -> None:
    obs = env.reset(seed=int(rng.integers(2 ** 31)))
    z, h = agent.wm.initial_state(1)
    prev_a = None
    step = 0
    while True:
        with ad.no_grad():
            a_vec = agent.wm.action_vec(prev_a if prev_a is not None
                                        else agent.wm.zero_action(1))
            if prev_a is None:
                a_vec = a_vec * ad.constant(
                    np.zeros((1, 1), dtype=ad.default_dtype()))
            h = agent.wm.seq_step(ad.constant(z), ad.constant(h), a_vec).data
        z = agent.wm.encode_obs_step(obs.image[None].astype(np.float32),
                                     np.array([obs.token]), h, rng)
        with ad.no_grad():
            heads = agent.wm.decode(ad.constant(z), ad.constant(h))
        rec = {
            "episode": ep, "step": step,
            "real": {"token": int(obs.token), "reward": float(obs.reward),
                     "cont": int(obs.cont)},
            "recon": {
                "token": int(np.argmax(heads["token"].data[0])),
                "reward": float(agent.wm.decode_reward(heads["reward"].data)[0]),
                "cont": float(1 / (1 + np.exp(-heads["cont"].data[0, 0]))),
            },
            "imagined": [],
        }
        if args.images:
            rec["real"]["image"] = np.asarray(obs.image, dtype=np.float64).round(3).tolist()
            rec["recon"]["image"] = heads["image"].data[0].astype(np.float64).round(3).tolist()
        for _ in range(args.samples):
            zi, hi = z.copy(), h.copy()
            seq = []
            for _ in range(args.horizon):
                act = agent.ac.act(zi, hi, rng)
                zi, hi, _, reward, cont = agent.wm.imagine_step(zi, hi, act, rng)
                entry = {"action": act[0].tolist(), "reward": float(reward[0]),
                         "cont": float(cont[0])}
                if not np.isfinite(entry["reward"]):
                    raise NumericalError("imagined reward is not finite")
                seq.append(entry)
            rec["imagined"].append(seq)
        out_fh.write(json.dumps(rec) + "\n")
        action = agent.ac.act(z, h, rng)
        prev_a = action
        if obs.cont == 0:
            break
        obs = env.step(action[0])
        step += 1


if __name__ == "__main__":
    sys.exit(main())
