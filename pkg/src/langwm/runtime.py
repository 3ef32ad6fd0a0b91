"""End-to-end training runtime.

Interleaves environment stepping with gradient updates through a token
bucket: every env step credits `train_ratio` replayed-step units, and an
update fires whenever the bucket covers one batch (batch_size *
batch_length). Each update trains the world model first, then rolls out the
policy from all (optionally subsampled) batch states and updates critic and
actor. Metrics stream as JSON lines, one record per update and per episode.

Checkpoints are written at episode boundaries so that resuming reproduces
an uninterrupted run step for step (single environment, single thread).
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import checkpoint as ckpt
from .autodiff import Adam
from .config import RunConfig, config_text
from .envs import make_env
from .envs.grammar import generate as generate_corpus
from .envs.vocab import build_vocab
from .errors import ConfigurationError, NumericalError
from .metrics import JsonlWriter
from .policy import ActorCritic, PolicyConfig
from .replay import ReplayBuffer
from .seeding import rng_state, set_rng_state, substream
from .worldmodel import WorldModel, WorldModelConfig, _np_softmax


def resolve_vocab(cfg: RunConfig):
    """(vocabulary words or None, model vocab size, token action count)."""
    if cfg.env in ("chain", "toggle"):
        return None, 2, 0
    mode = cfg.vocab
    if mode == "auto":
        mode = "langroom" if cfg.env == "langroom" else "shared"
    words = build_vocab(mode, cfg.pad_vocab_to)
    token_actions = 0
    if cfg.env == "langroom":
        token_actions = cfg.pad_vocab_to if cfg.pad_vocab_to else 15
    return words, len(words), token_actions


def build_env(cfg: RunConfig, seed: int, instance: int = 0, eval_env: bool = False):
    label = f"env-eval-{instance}" if eval_env else f"env-{instance}"
    env_seed = int(substream(seed, label).integers(2 ** 31))
    kwargs = {}
    if cfg.episode_len:
        kwargs["episode_len"] = cfg.episode_len
    if cfg.env == "langroom":
        _, _, token_actions = resolve_vocab(cfg)
        kwargs["token_actions"] = token_actions
    if cfg.env == "homegrid":
        kwargs["hints"] = cfg.hints
    return make_env(cfg.env, seed=env_seed, **kwargs)


def model_configs(cfg: RunConfig, env) -> tuple[WorldModelConfig, PolicyConfig]:
    _, vocab_size, token_actions = resolve_vocab(cfg)
    action_dims = env.action_dims
    wm_cfg = WorldModelConfig(
        obs_kind=env.obs_kind, obs_shape=env.obs_shape, vocab_size=vocab_size,
        action_dims=tuple(action_dims), deter=cfg.deter, groups=cfg.groups,
        classes=cfg.classes, units=cfg.units, layers=cfg.layers,
        token_embed=cfg.token_embed, cnn_depth=cfg.cnn_depth, bins=cfg.bins,
        beta_reg=cfg.beta_reg, beta_pred=cfg.beta_pred, unimix=cfg.unimix,
        free_nats=cfg.free_nats)
    token_factor = 1 if (cfg.env == "langroom" and len(action_dims) > 1) else None
    pol_cfg = PolicyConfig(
        action_dims=tuple(action_dims), feat_dim=wm_cfg.feat_dim, units=cfg.units,
        layers=cfg.layers, horizon=cfg.horizon, gamma=cfg.gamma, lam=cfg.lam,
        entropy=cfg.entropy, beta_lm=cfg.beta_lm, token_factor=token_factor,
        bins=cfg.bins, ema_critic=cfg.ema_critic)
    return wm_cfg, pol_cfg


class Agent:
    """World model + policy + optimizers + per-env acting state."""

    def __init__(self, cfg: RunConfig, env, seed: int):
        ad.set_default_dtype(cfg.precision)
        self.cfg = cfg
        wm_cfg, pol_cfg = model_configs(cfg, env)
        init_rng = substream(seed, "model-init")
        self.wm = WorldModel(wm_cfg, init_rng)
        self.ac = ActorCritic(pol_cfg, init_rng)
        self.wm_opt = Adam(self.wm.store, lr=cfg.lr, clip=cfg.clip)
        self.actor_opt = Adam(self.ac.actor_store, lr=cfg.lr_actor, clip=cfg.clip)
        self.critic_opt = Adam(self.ac.critic_store, lr=cfg.lr_critic, clip=cfg.clip)
        self.sample_rng = substream(seed, "sampling")
        self.train_rng = substream(seed, "training")
        n = cfg.num_envs
        self.z, self.h = self.wm.initial_state(n)
        self.prev_action = np.zeros((n, len(wm_cfg.action_dims)), dtype=np.int64)
        self.prev_valid = np.zeros(n, dtype=bool)

    # ------------------------------------------------------------------
    # acting
    # ------------------------------------------------------------------
    def observe(self, images: np.ndarray, tokens: np.ndarray,
                firsts: np.ndarray) -> None:
        keep = (1.0 - np.asarray(firsts, dtype=ad.default_dtype()))[:, None]
        self.z *= keep
        self.h *= keep
        self.prev_valid &= firsts < 0.5
        with ad.no_grad():
            a_vec = self.wm.action_vec(self.prev_action)
            a_vec = a_vec * ad.constant(keep * self.prev_valid[:, None])
            h = self.wm.seq_step(ad.constant(self.z), ad.constant(self.h), a_vec)
            self.h = h.data
        self.z = self.wm.encode_obs_step(images, tokens, self.h, self.sample_rng)

    def act(self, greedy: bool = False) -> np.ndarray:
        actions = self.ac.act(self.z, self.h, self.sample_rng, greedy=greedy)
        self.prev_action = actions
        self.prev_valid[:] = True
        return actions

    # ------------------------------------------------------------------
    # learning
    # ------------------------------------------------------------------
    def train_update(self, replay: ReplayBuffer) -> dict:
        cfg = self.cfg
        batch = replay.sample(cfg.batch_size, cfg.batch_length)
        total, breakdown, starts = self.wm.compute_losses(batch, self.train_rng)
        total.backward()
        wm_norm = self.wm_opt.step()

        z0, h0 = starts["z"], starts["h"]
        if cfg.imag_starts and cfg.imag_starts < z0.shape[0]:
            idx = self.train_rng.choice(z0.shape[0], size=cfg.imag_starts, replace=False)
            z0, h0 = z0[idx], h0[idx]
        traj = self.ac.rollout(self.wm, z0, h0, self.train_rng)
        scale = self.ac.scale.update(traj.returns[:, :-1])

        closs = self.ac.critic_loss(traj)
        closs_val = closs.item()
        closs.backward()
        critic_norm = self.critic_opt.step()
        self.ac.update_ema()

        ref = None
        if self.ac.cfg.beta_lm:
            ref = self.ac.model_token_reference(self.wm, traj)
        aloss, actor_metrics = self.ac.actor_loss(traj, scale, ref)
        aloss_val = aloss.item()
        aloss.backward()
        actor_norm = self.actor_opt.step()

        rec = dict(breakdown.as_dict())
        rec.update(actor_metrics)
        rec.update({
            "loss/critic": closs_val, "loss/actor": aloss_val,
            "grad_norm/model": wm_norm, "grad_norm/actor": actor_norm,
            "grad_norm/critic": critic_norm,
            "policy/S": scale,
            "policy/value_mean": float(traj.values.mean()),
            "policy/return_mean": float(traj.returns.mean()),
            "policy/imag_reward_mean": float(traj.rewards.mean()),
        })
        for key in ("loss/critic", "loss/actor"):
            if not np.isfinite(rec[key]):
                raise NumericalError(f"non-finite {key}")
        return rec

    # ------------------------------------------------------------------
    # persistence
    # ------------------------------------------------------------------
    def arrays(self) -> dict:
        out = {}
        for prefix, store in (("wm", self.wm.store), ("actor", self.ac.actor_store),
                              ("critic", self.ac.critic_store)):
            for name, p in store:
                out[f"{prefix}/{name}"] = p.data
        for prefix, opt in (("adam_wm", self.wm_opt), ("adam_actor", self.actor_opt),
                            ("adam_critic", self.critic_opt)):
            for name, arr in opt.m.items():
                out[f"{prefix}/m/{name}"] = arr
            for name, arr in opt.v.items():
                out[f"{prefix}/v/{name}"] = arr
        if self.ac._ema_params is not None:
            for name, arr in self.ac._ema_params.items():
                out[f"critic_ema/{name}"] = arr
        return out

    def load_arrays(self, arrays: dict, params_only: bool = False) -> None:
        def pick(prefix):
            plen = len(prefix) + 1
            return {k[plen:]: v for k, v in arrays.items() if k.startswith(prefix + "/")}

        self.wm.store.load_state_dict(pick("wm"))
        if params_only:
            return
        self.ac.actor_store.load_state_dict(pick("actor"))
        self.ac.critic_store.load_state_dict(pick("critic"))
        for prefix, opt in (("adam_wm", self.wm_opt), ("adam_actor", self.actor_opt),
                            ("adam_critic", self.critic_opt)):
            sub = pick(prefix)
            opt.m = {k[2:]: v.copy() for k, v in sub.items() if k.startswith("m/")}
            opt.v = {k[2:]: v.copy() for k, v in sub.items() if k.startswith("v/")}
        ema = pick("critic_ema")
        if ema and self.ac._ema_params is not None:
            self.ac._ema_params = {k: v.copy() for k, v in ema.items()}

    def meta(self) -> dict:
        return {
            "adam_t": {"wm": self.wm_opt.t, "actor": self.actor_opt.t,
                       "critic": self.critic_opt.t},
            "store_steps": {"wm": self.wm.store.step, "actor": self.ac.actor_store.step,
                            "critic": self.ac.critic_store.step},
            "rngs": {"sample": rng_state(self.sample_rng),
                     "train": rng_state(self.train_rng)},
            "scale": self.ac.scale.state_dict(),
        }

    def load_meta(self, meta: dict) -> None:
        self.wm_opt.t = int(meta["adam_t"]["wm"])
        self.actor_opt.t = int(meta["adam_t"]["actor"])
        self.critic_opt.t = int(meta["adam_t"]["critic"])
        self.wm.store.step = int(meta["store_steps"]["wm"])
        self.ac.actor_store.step = int(meta["store_steps"]["actor"])
        self.ac.critic_store.step = int(meta["store_steps"]["critic"])
        set_rng_state(self.sample_rng, meta["rngs"]["sample"])
        set_rng_state(self.train_rng, meta["rngs"]["train"])
        self.ac.scale.load_state_dict(meta["scale"])


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def evaluate(agent: Agent, env, episodes: int, rng: np.random.Generator,
             greedy: bool = False) -> dict:
    """Run full episodes with fresh latent state; aggregates env extras."""
    cfg_envs = 1
    z, h = agent.wm.initial_state(cfg_envs)
    returns, lengths, extras = [], [], {}
    for _ in range(episodes):
        obs = env.reset(seed=int(rng.integers(2 ** 31)))
        z, h = agent.wm.initial_state(cfg_envs)
        prev_a = None
        ep_ret, ep_len = 0.0, 0
        while True:
            with ad.no_grad():
                if prev_a is None:
                    a_vec = agent.wm.action_vec(agent.wm.zero_action(1)) * ad.constant(
                        np.zeros((1, 1), dtype=ad.default_dtype()))
                else:
                    a_vec = agent.wm.action_vec(prev_a)
                h = agent.wm.seq_step(ad.constant(z), ad.constant(h), a_vec).data
            z = agent.wm.encode_obs_step(obs.image[None].astype(np.float32),
                                         np.array([obs.token]), h, rng)
            action = agent.ac.act(z, h, rng, greedy=greedy)
            prev_a = action
            if obs.cont == 0:
                for k, v in obs.info.get("episode", {}).items():
                    extras.setdefault(k, []).append(v)
                break
            obs = env.step(action[0])
            ep_ret += obs.reward
            ep_len += 1
        returns.append(ep_ret)
        lengths.append(ep_len)
    out = {"eval/return": float(np.mean(returns)),
           "eval/length": float(np.mean(lengths)),
           "eval/episodes": episodes}
    for k, v in extras.items():
        out[f"eval/{k}"] = float(np.mean(v))
    return out


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

@dataclass
class TrainState:
    env_steps: int = 0
    updates: int = 0
    episodes: int = 0
    credits: float = 0.0
    next_eval: int = 0
    ckpt_due: bool = False
    last_ckpt: int = 0


class Trainer:
    def __init__(self, cfg: RunConfig, outdir, resume: bool = False):
        cfg.validate()
        ad.set_default_dtype(cfg.precision)
        self.cfg = cfg
        self.outdir = Path(outdir)
        self.outdir.mkdir(parents=True, exist_ok=True)
        self.cfg_hash = ckpt.config_hash(config_text(cfg))
        (self.outdir / "resolved.cfg").write_text(config_text(cfg), encoding="utf8")

        self.envs = [build_env(cfg, cfg.seed, i) for i in range(cfg.num_envs)]
        self.eval_env = build_env(cfg, cfg.seed, 0, eval_env=True)
        self.eval_rng = substream(cfg.seed, "eval")
        self.agent = Agent(cfg, self.envs[0], cfg.seed)
        self.replay = ReplayBuffer(
            cfg.replay_capacity, self.envs[0].obs_shape,
            len(self.envs[0].action_dims),
            seed=int(substream(cfg.seed, "replay").integers(2 ** 31)),
            num_streams=cfg.num_envs,
            pixel_obs=self.envs[0].obs_kind == "pixel")
        self.metrics = JsonlWriter(self.outdir / "metrics.jsonl")
        self.state = TrainState(next_eval=cfg.eval_every)
        self.obs = [None] * cfg.num_envs
        self.pending = None
        if resume:
            self._load_checkpoint()

    # ------------------------------------------------------------------
    def run(self, stop_after_checkpoint: bool = False) -> None:
        """Train until cfg.steps env steps.

        With `stop_after_checkpoint`, return right after the first cadence
        checkpoint is written (used to exercise interrupted-run resumption).
        """
        cfg, st = self.cfg, self.state
        try:
            while st.env_steps < cfg.steps:
                self._advance_envs()
                self._act_and_store()
                while (st.credits >= cfg.batch_size * cfg.batch_length
                       and self.replay.size >= cfg.replay_min
                       and self.replay.can_sample(cfg.batch_size, cfg.batch_length)):
                    rec = self.agent.train_update(self.replay)
                    st.updates += 1
                    st.credits -= cfg.batch_size * cfg.batch_length
                    rec.update({"step": st.env_steps, "update": st.updates,
                                "kind": "update"})
                    self.metrics.write(rec)
                if st.env_steps >= st.next_eval:
                    self._run_eval()
                    st.next_eval += cfg.eval_every
                if st.env_steps - st.last_ckpt >= cfg.checkpoint_every:
                    st.ckpt_due = True
                if st.ckpt_due and self.obs[0] is not None and self.obs[0].cont == 0:
                    self.save_checkpoint()
                    st.ckpt_due = False
                    st.last_ckpt = st.env_steps
                    if stop_after_checkpoint:
                        return
        except NumericalError:
            self.save_checkpoint(name="abort.ckpt")
            raise
        self.save_checkpoint()

    def _advance_envs(self) -> None:
        for i, env in enumerate(self.envs):
            if self.obs[i] is None or self.obs[i].cont == 0:
                self.obs[i] = env.reset()
            else:
                self.obs[i] = env.step(self.pending[i])

    def _act_and_store(self) -> None:
        st = self.state
        images = np.stack([o.image for o in self.obs]).astype(np.float32)
        tokens = np.array([o.token for o in self.obs])
        firsts = np.array([o.is_first for o in self.obs], dtype=np.float32)
        self.agent.observe(images, tokens, firsts)
        actions = self.agent.act()
        self.pending = actions
        for i, o in enumerate(self.obs):
            self.replay.add(o.image, o.token, o.reward, o.cont, o.is_first,
                            actions[i], episode=st.episodes, step_idx=st.env_steps,
                            stream=i)
            st.env_steps += 1
            st.credits += self.cfg.train_ratio
            if o.cont == 0:
                st.episodes += 1
                env = self.envs[i]
                rec = {"kind": "episode", "step": st.env_steps,
                       "episode": st.episodes,
                       "return": float(getattr(env, "episode_return", 0.0)),
                       "length": int(getattr(env, "t", 0))}
                for k, v in o.info.get("episode", {}).items():
                    rec[f"episode/{k}"] = v
                self.metrics.write(rec)

    def _run_eval(self) -> None:
        rec = evaluate(self.agent, self.eval_env, self.cfg.eval_episodes, self.eval_rng)
        rec.update({"kind": "eval", "step": self.state.env_steps,
                    "update": self.state.updates})
        self.metrics.write(rec)

    # ------------------------------------------------------------------
    def save_checkpoint(self, name: str = "ckpt.bin") -> None:
        st = self.state
        meta = {
            "agent": self.agent.meta(),
            "counters": {"env_steps": st.env_steps, "updates": st.updates,
                         "episodes": st.episodes, "credits": st.credits,
                         "next_eval": st.next_eval, "last_ckpt": st.last_ckpt},
            "rngs": {"eval": rng_state(self.eval_rng),
                     "envs": [e.rng_state() for e in self.envs]},
        }
        ckpt.save(self.outdir / name, self.cfg_hash, self.agent.arrays(), meta)
        if self.cfg.save_replay:
            self.replay.save(self.outdir / "replay.npz")

    def _load_checkpoint(self) -> None:
        path = self.outdir / "ckpt.bin"
        _, arrays, meta = ckpt.load(path, expect_hash=self.cfg_hash)
        self.agent.load_arrays(arrays)
        self.agent.load_meta(meta["agent"])
        c = meta["counters"]
        self.state = TrainState(env_steps=int(c["env_steps"]), updates=int(c["updates"]),
                                episodes=int(c["episodes"]), credits=float(c["credits"]),
                                next_eval=int(c["next_eval"]), last_ckpt=int(c["last_ckpt"]))
        set_rng_state(self.eval_rng, meta["rngs"]["eval"])
        for env, state in zip(self.envs, meta["rngs"]["envs"]):
            env.set_rng_state(state)
        replay_path = self.outdir / "replay.npz"
        if replay_path.exists():
            self.replay.load(replay_path)
        self.obs = [None] * self.cfg.num_envs  # envs restart at episode boundary
        self.pending = None


# ---------------------------------------------------------------------------
# text-only pretraining
# ---------------------------------------------------------------------------

def pack_token_rows(docs: list[list[int]], rows: int, length: int,
                    rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Pack randomly drawn documents into (rows, length) id/is_first arrays."""
    token = np.zeros((rows, length), dtype=np.int64)
    first = np.zeros((rows, length), dtype=np.float32)
    for r in range(rows):
        filled = 0
        while filled < length:
            doc = docs[int(rng.integers(len(docs)))]
            first[r, filled] = 1.0
            take = min(len(doc), length - filled)
            token[r, filled:filled + take] = doc[:take]
            filled += take
    return token, first


def text_batch(wm: WorldModel, token: np.ndarray, first: np.ndarray) -> dict:
    rows, length = token.shape
    return {
        "image": np.zeros((rows, length) + tuple(wm.cfg.obs_shape), dtype=np.float32),
        "token": token,
        "reward": np.zeros((rows, length), dtype=np.float32),
        "cont": np.ones((rows, length), dtype=np.float32),
        "is_first": first,
        "action": np.zeros((rows, length, len(wm.cfg.action_dims)), dtype=np.int64),
    }


def text_heldout_ce(wm: WorldModel, docs: list[list[int]],
                    rng: np.random.Generator, rows: int = 16,
                    length: int = 64, samples: int = 3) -> float:
    """Predictive per-token cross entropy (nats) on held-out text.

    The next token is predicted through the prior: advance the sequence
    model one step from each posterior state, sample codes from the prior
    (averaging `samples` draws), decode the token head, and score the
    actual next token. Positions crossing document boundaries are skipped.
    """
    token, first = pack_token_rows(docs, rows, length, rng)
    batch = text_batch(wm, token, first)
    with ad.no_grad():
        z_all, h_all, _, _ = wm.unroll_posterior(batch, rng, mode="text_pretrain")
        a_vec = wm.action_vec(np.zeros((rows * length, len(wm.cfg.action_dims)),
                                       dtype=np.int64))
        zero_mask = ad.constant(np.zeros((rows * length, 1), dtype=ad.default_dtype()))
        h_next = wm.seq_step(z_all, h_all, a_vec * zero_mask).data
        probs = None
        for _ in range(samples):
            logits = wm.prior_logits(ad.constant(h_next))
            code = wm.sample_code(logits, rng)
            tok_logits = wm.decode(code.sample, ad.constant(h_next),
                                   heads=("token",))["token"].data
            p = _np_softmax(tok_logits)
            probs = p if probs is None else probs + p
        probs /= samples
    # probs row (t*rows + r) predicts token[r, t+1]
    total, count = 0.0, 0
    for t in range(length - 1):
        for r in range(rows):
            if first[r, t + 1]:
                continue
            total -= float(np.log(max(probs[t * rows + r, token[r, t + 1]], 1e-12)))
            count += 1
    return total / max(1, count)


def pretrain(cfg: RunConfig, outdir) -> dict:
    """Text-only pretraining on the grammar corpus; writes a checkpoint."""
    cfg.validate()
    ad.set_default_dtype(cfg.precision)
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    cfg_hash = ckpt.config_hash(config_text(cfg))
    (outdir / "resolved.cfg").write_text(config_text(cfg), encoding="utf8")

    corpus = generate_corpus(cfg.corpus_seed, cfg.corpus_docs, cfg.heldout_frac)
    if not corpus.train:
        raise ConfigurationError("empty pretraining corpus")
    train_docs = [corpus.tokenizer.tokenize(d) for d in corpus.train]
    held_docs = [corpus.tokenizer.tokenize(d) for d in corpus.heldout]

    env = build_env(cfg, cfg.seed)
    agent = Agent(cfg, env, cfg.seed)
    wm = agent.wm
    rng = substream(cfg.seed, "pretrain")
    eval_rng_seed = substream(cfg.seed, "pretrain-eval")
    metrics = JsonlWriter(outdir / "metrics.jsonl")
    final_ce = None
    for step in range(1, cfg.pretrain_steps + 1):
        token, first = pack_token_rows(train_docs, cfg.batch_size,
                                       cfg.batch_length, rng)
        batch = text_batch(wm, token, first)
        total, breakdown, _ = wm.compute_losses(batch, rng, mode="text_pretrain")
        total.backward()
        norm = agent.wm_opt.step()
        if step % cfg.pretrain_eval_every == 0 or step == cfg.pretrain_steps:
            ce_rng = np.random.default_rng(eval_rng_seed.integers(2 ** 31))
            final_ce = text_heldout_ce(wm, held_docs, ce_rng,
                                       rows=cfg.batch_size, length=cfg.batch_length)
            rec = dict(breakdown.as_dict())
            rec.update({"kind": "pretrain", "step": step, "grad_norm/model": norm,
                        "heldout_ce": final_ce})
            metrics.write(rec)
    meta = {"agent": agent.meta(), "counters": {"pretrain_steps": cfg.pretrain_steps},
            "rngs": {"eval": rng_state(eval_rng_seed), "envs": []}}
    ckpt.save(outdir / "ckpt.bin", cfg_hash, agent.arrays(), meta)
    metrics.close()
    return {"heldout_ce": final_ce,
            "train_docs": len(train_docs), "heldout_docs": len(held_docs)}


def load_agent_from_run(run_dir, overrides: list[str] = (),
                        params_only: bool = False):
    """Rebuild (cfg, agent) from a run directory's resolved config + checkpoint."""
    from .config import load_config
    run_dir = Path(run_dir)
    cfg_path = run_dir / "resolved.cfg"
    if not cfg_path.exists():
        raise ConfigurationError(f"no resolved.cfg in {run_dir}")
    cfg = load_config(str(cfg_path), overrides)
    env = build_env(cfg, cfg.seed)
    agent = Agent(cfg, env, cfg.seed)
    expect = None if (overrides or params_only) else ckpt.config_hash(config_text(cfg))
    _, arrays, meta = ckpt.load(run_dir / "ckpt.bin", expect_hash=expect)
    agent.load_arrays(arrays, params_only=params_only)
    if not params_only:
        agent.load_meta(meta["agent"])
    return cfg, agent, env
