"""Actor-critic learned from imagined rollouts.

The rollout itself never builds a gradient tape: states, actions, decoded
rewards/continues and critic values are collected as plain arrays, lambda
returns are computed by backward recursion, and only then are the actor and
critic networks re-run with gradients on the frozen states.

Actor loss: REINFORCE with the (stopped) advantage normalized by
max(1, S) where S tracks the 5th-95th percentile spread of returns, an
entropy bonus, and optionally a KL that pulls a token-action head towards
the world model's (stopped) next-token prediction. Critic loss: categorical
cross entropy against the twohot-encoded returns. Every per-step term is
weighted by the cumulative discount weight w, with w_0 = 1 and
w_{t+1} = w_t * gamma * c_t.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import codecs
from .autodiff import ParamStore, Tensor
from .codecs import PercentileEMA, TwohotSpec
from .errors import ConfigurationError, UsageError
from .nets import MLP, Linear
from .worldmodel import WorldModel, _np_softmax


@dataclass
class PolicyConfig:
    action_dims: tuple
    feat_dim: int                 # z_dim + deter
    units: int = 256
    layers: int = 2
    horizon: int = 15
    gamma: float = 0.99
    lam: float = 0.95
    entropy: float = 3e-4
    beta_lm: float = 0.0          # language-prior KL coefficient (0 = off)
    token_factor: int | None = None  # which action factor is the token head
    bins: int = 63
    ema_critic: bool = False
    ema_decay: float = 0.98
    percentile_decay: float = 0.99


@dataclass
class ImaginedTrajectory:
    """Open-loop rollout of length T from B start states.

    rewards[t] / continues[t] are decoded at state t+1 (the outcome of
    actions[t]); values/returns/weights cover states 0..T.
    """

    z: np.ndarray          # (B, T+1, Z)
    h: np.ndarray          # (B, T+1, D)
    actions: np.ndarray    # (B, T, F)
    rewards: np.ndarray    # (B, T)
    continues: np.ndarray  # (B, T)
    values: np.ndarray     # (B, T+1)
    returns: np.ndarray    # (B, T+1)
    weights: np.ndarray    # (B, T+1)

    @property
    def batch(self) -> int:
        return self.z.shape[0]

    @property
    def horizon(self) -> int:
        return self.actions.shape[1]


def lambda_returns(rewards: np.ndarray, continues: np.ndarray,
                   values: np.ndarray, gamma: float, lam: float) -> np.ndarray:
    """Backward recursion R_t = r_t + gamma*c_t*((1-lam) V_{t+1} + lam R_{t+1}).

    rewards/continues: (..., T); values: (..., T+1). Returns (..., T+1)
    with the bootstrap R_T = V_T.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    continues = np.asarray(continues, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    T = rewards.shape[-1]
    if continues.shape != rewards.shape or values.shape[-1] != T + 1:
        raise UsageError(
            f"lambda_returns: rewards {rewards.shape}, continues {continues.shape}, "
            f"values {values.shape} are inconsistent")
    out = np.empty_like(values)
    out[..., T] = values[..., T]
    for t in range(T - 1, -1, -1):
        boot = (1.0 - lam) * values[..., t + 1] + lam * out[..., t + 1]
        out[..., t] = rewards[..., t] + gamma * continues[..., t] * boot
    return out


class ActorCritic:
    def __init__(self, cfg: PolicyConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.spec = TwohotSpec(bins=cfg.bins)
        self.actor_store = ParamStore()
        self.critic_store = ParamStore()
        self.actor_trunk = MLP(self.actor_store, "actor/trunk", cfg.feat_dim,
                               cfg.units, cfg.layers, rng)
        self.actor_heads = [
            Linear(self.actor_store, f"actor/head{i}", cfg.units, n, rng, zero_init=True)
            for i, n in enumerate(cfg.action_dims)
        ]
        self.critic = MLP(self.critic_store, "critic", cfg.feat_dim, cfg.units,
                          cfg.layers, rng, out_dim=cfg.bins, zero_head=True)
        self.scale = PercentileEMA(decay=cfg.percentile_decay)
        self._ema_params: dict[str, np.ndarray] | None = None
        if cfg.ema_critic:
            self._ema_params = self.critic_store.state_dict()

    # ------------------------------------------------------------------
    def actor_logits(self, feat: Tensor) -> list[Tensor]:
        trunk = self.actor_trunk(feat)
        return [head(trunk) for head in self.actor_heads]

    def sample_actions(self, logits: list[np.ndarray],
                       rng: np.random.Generator) -> np.ndarray:
        cols = []
        for lg in logits:
            p = _np_softmax(lg)
            cum = np.cumsum(p, axis=-1)
            u = rng.random((p.shape[0], 1)) * cum[:, -1:]
            cols.append((u > cum).sum(axis=-1))
        return np.stack(cols, axis=-1)

    def act(self, z: np.ndarray, h: np.ndarray, rng: np.random.Generator,
            greedy: bool = False) -> np.ndarray:
        with ad.no_grad():
            logits = self.actor_logits(ad.constant(np.concatenate([z, h], axis=-1)))
            logits = [lg.data for lg in logits]
        if greedy:
            return np.stack([lg.argmax(axis=-1) for lg in logits], axis=-1)
        return self.sample_actions(logits, rng)

    def values(self, z: np.ndarray, h: np.ndarray, use_ema: bool = False) -> np.ndarray:
        with ad.no_grad():
            if use_ema and self._ema_params is not None:
                live = self.critic_store.state_dict()
                self.critic_store.load_state_dict(self._ema_params)
                try:
                    logits = self.critic(ad.constant(np.concatenate([z, h], axis=-1)))
                finally:
                    self.critic_store.load_state_dict(live)
            else:
                logits = self.critic(ad.constant(np.concatenate([z, h], axis=-1)))
        probs = _np_softmax(logits.data)
        return codecs.twohot_decode(probs, self.spec)

    # ------------------------------------------------------------------
    def rollout(self, wm: WorldModel, start_z: np.ndarray, start_h: np.ndarray,
                rng: np.random.Generator, horizon: int | None = None) -> ImaginedTrajectory:
        """Imagine `horizon` steps from every start state, without gradients."""
        cfg = self.cfg
        T = horizon if horizon is not None else cfg.horizon
        B = start_z.shape[0]
        zs = np.empty((B, T + 1, start_z.shape[1]), dtype=start_z.dtype)
        hs = np.empty((B, T + 1, start_h.shape[1]), dtype=start_h.dtype)
        acts = np.empty((B, T, len(cfg.action_dims)), dtype=np.int64)
        zs[:, 0], hs[:, 0] = start_z, start_h
        z, h = start_z, start_h
        for t in range(T):
            a = self.act(z, h, rng)
            acts[:, t] = a
            z, h, _ = wm.imagine_dynamics(z, h, a, rng)
            zs[:, t + 1], hs[:, t + 1] = z, h

        flat_z = zs.reshape(B * (T + 1), -1)
        flat_h = hs.reshape(B * (T + 1), -1)
        with ad.no_grad():
            heads = wm.decode(ad.constant(flat_z), ad.constant(flat_h),
                              heads=("reward", "cont"))
        rew_all = wm.decode_reward(heads["reward"].data).reshape(B, T + 1)
        from .worldmodel import _np_sigmoid
        cont_all = _np_sigmoid(heads["cont"].data[:, 0]).reshape(B, T + 1)
        values = self.values(flat_z, flat_h, use_ema=cfg.ema_critic).reshape(B, T + 1)

        rewards = rew_all[:, 1:]
        continues = cont_all[:, 1:]
        returns = lambda_returns(rewards, continues, values, cfg.gamma, cfg.lam)
        weights = np.ones((B, T + 1))
        weights[:, 1:] = np.cumprod(cfg.gamma * continues, axis=-1)
        return ImaginedTrajectory(z=zs, h=hs, actions=acts, rewards=rewards,
                                  continues=continues, values=values,
                                  returns=returns, weights=weights)

    # ------------------------------------------------------------------
    def critic_loss(self, traj: ImaginedTrajectory) -> Tensor:
        """Twohot cross entropy towards the (stopped) lambda returns."""
        B, T = traj.batch, traj.horizon
        feat = np.concatenate([traj.z[:, :T], traj.h[:, :T]], axis=-1).reshape(B * T, -1)
        target = codecs.twohot_encode(traj.returns[:, :T].reshape(-1), self.spec)
        w = traj.weights[:, :T].reshape(-1, 1)
        logits = self.critic(ad.constant(feat))
        xent = -ad.sum_(ad.log_softmax(logits) * ad.constant(
            target.astype(ad.default_dtype())), axis=-1, keepdims=True)
        return ad.mean(xent * ad.constant(w.astype(ad.default_dtype())))

    def actor_loss(self, traj: ImaginedTrajectory, scale: float,
                   model_token_probs: np.ndarray | None = None) -> tuple[Tensor, dict]:
        """REINFORCE with normalized advantages, entropy, optional token KL."""
        cfg = self.cfg
        B, T = traj.batch, traj.horizon
        feat = np.concatenate([traj.z[:, :T], traj.h[:, :T]], axis=-1).reshape(B * T, -1)
        adv = (traj.returns[:, :T] - traj.values[:, :T]).reshape(-1)
        adv = adv / max(1.0, scale)
        w = traj.weights[:, :T].reshape(-1)

        logits = self.actor_logits(ad.constant(feat))
        logprob = None
        entropy = None
        for i, lg in enumerate(logits):
            ls = ad.log_softmax(lg)
            ids = traj.actions[:, :, i].reshape(-1)
            lp = ad.gather_last(ls, ids)
            ent = -ad.sum_(ad.softmax(lg) * ls, axis=-1)
            logprob = lp if logprob is None else logprob + lp
            entropy = ent if entropy is None else entropy + ent

        wt = ad.constant(w.astype(ad.default_dtype()))
        advt = ad.constant((adv * w).astype(ad.default_dtype()))
        loss = ad.mean(-advt * logprob - cfg.entropy * (wt * entropy))
        metrics = {"policy/entropy": float(entropy.mean().item()),
                   "policy/adv_scale": float(max(1.0, scale))}

        if cfg.beta_lm and model_token_probs is not None:
            if cfg.token_factor is None:
                raise ConfigurationError("language regularizer needs a token action factor")
            tok_logits = logits[cfg.token_factor]
            pi_logp = ad.log_softmax(tok_logits)
            pi_p = ad.softmax(tok_logits)
            ref = np.clip(model_token_probs.reshape(B * T, -1), 1e-8, None)
            ref = ref / ref.sum(axis=-1, keepdims=True)
            kl = ad.sum_(pi_p * (pi_logp - ad.constant(
                np.log(ref).astype(ad.default_dtype()))), axis=-1)
            loss = loss + cfg.beta_lm * ad.mean(wt * kl)
            metrics["policy/lm_kl"] = float(kl.mean().item())
        return loss, metrics

    def model_token_reference(self, wm: WorldModel,
                              traj: ImaginedTrajectory) -> np.ndarray:
        """Model next-token distribution at states 1..T, restricted to the
        token action ids (the first A vocabulary entries), renormalized."""
        cfg = self.cfg
        if cfg.token_factor is None:
            raise ConfigurationError("no token action factor configured")
        A = cfg.action_dims[cfg.token_factor]
        B, T = traj.batch, traj.horizon
        flat_z = traj.z[:, 1:].reshape(B * T, -1)
        flat_h = traj.h[:, 1:].reshape(B * T, -1)
        with ad.no_grad():
            logits = wm.decode(ad.constant(flat_z), ad.constant(flat_h),
                               heads=("token",))["token"].data
        if logits.shape[-1] < A:
            raise ConfigurationError(
                f"token head vocabulary {logits.shape[-1]} smaller than action factor {A}")
        probs = _np_softmax(logits)[:, :A]
        probs = probs / probs.sum(axis=-1, keepdims=True)
        return probs.reshape(B, T, A)

    # ------------------------------------------------------------------
    def update_ema(self) -> None:
        if self._ema_params is None:
            return
        d = self.cfg.ema_decay
        for k, p in self.critic_store:
            self._ema_params[k] = d * self._ema_params[k] + (1 - d) * p.data

    def state_dict(self) -> dict:
        out = {"actor": self.actor_store.state_dict(),
               "critic": self.critic_store.state_dict(),
               "scale": self.scale.state_dict()}
        if self._ema_params is not None:
            out["critic_ema"] = {k: v.copy() for k, v in self._ema_params.items()}
        return out

    def load_state_dict(self, state: dict) -> None:
        self.actor_store.load_state_dict(state["actor"])
        self.critic_store.load_state_dict(state["critic"])
        self.scale.load_state_dict(state["scale"])
        if self._ema_params is not None and "critic_ema" in state:
            self._ema_params = {k: np.asarray(v).copy()
                                for k, v in state["critic_ema"].items()}
