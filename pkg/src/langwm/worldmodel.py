"""Multimodal recurrent latent world model.

Per step the model carries a deterministic recurrent state h and a stochastic
code z (a vector of one-hot categoricals). Three learned maps define the
dynamics and the observation model:

    sequence:  prior logits for z_t and h_t from (z_{t-1}, h_{t-1}, a_{t-1})
    encoder:   posterior logits for z_t from (x_t, l_t, h_t)
    decoder:   reconstructed image, token logits, reward bins, continue logit
               from (z_t, h_t)

Training minimizes reconstruction losses on all decoder heads plus two
KL terms with a one-nat floor: the posterior is regularized towards the
(stopped) prior, and the prior is trained to predict the (stopped)
posterior. In text-pretraining mode the image/reward/continue coefficients
are zero and image/action inputs are zeros, leaving token modeling plus the
KL terms.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import codecs
from .autodiff import ParamStore, Tensor
from .codecs import TwohotSpec
from .errors import ConfigurationError, DataError, NumericalError
from .nets import MLP, ConvDecoder, ConvEncoder, Embedding, GRUCell, Linear

ONEHOT_ACTION_MAX = 32  # action factors wider than this use a learned embedding


@dataclass
class WorldModelConfig:
    obs_kind: str                    # "symbol" | "pixel"
    obs_shape: tuple                 # (C, H, W)
    vocab_size: int
    action_dims: tuple               # e.g. (5,) or (5, 15)
    deter: int = 256
    groups: int = 8
    classes: int = 8
    units: int = 256
    layers: int = 2
    token_embed: int = 32
    cnn_depth: int = 24
    bins: int = 63
    beta_reg: float = 0.1
    beta_pred: float = 0.5
    unimix: float = 0.01
    free_nats: float = 1.0

    @property
    def z_dim(self) -> int:
        return self.groups * self.classes

    @property
    def feat_dim(self) -> int:
        return self.z_dim + self.deter


@dataclass
class LossBreakdown:
    image: float
    token: float
    reward: float
    cont: float
    reg: float
    pred: float

    @property
    def total(self) -> float:
        return self.image + self.token + self.reward + self.cont + self.reg + self.pred

    def as_dict(self) -> dict:
        return {
            "loss/image": self.image, "loss/token": self.token,
            "loss/reward": self.reward, "loss/cont": self.cont,
            "loss/reg": self.reg, "loss/pred": self.pred,
            "loss/total": self.total,
        }


class WorldModel:
    def __init__(self, cfg: WorldModelConfig, rng: np.random.Generator):
        if cfg.obs_kind not in ("symbol", "pixel"):
            raise ConfigurationError(f"unknown obs kind {cfg.obs_kind!r}")
        self.cfg = cfg
        self.spec = TwohotSpec(bins=cfg.bins)
        self.store = ParamStore()
        s, c = self.store, cfg

        # observation trunk
        if cfg.obs_kind == "symbol":
            in_dim = int(np.prod(cfg.obs_shape))
            self.img_enc = MLP(s, "enc/img", in_dim, c.units, c.layers, rng)
            img_feat = c.units
        else:
            self.img_enc = ConvEncoder(s, "enc/img", cfg.obs_shape[0], c.cnn_depth,
                                       rng, resolution=cfg.obs_shape[1])
            img_feat = self.img_enc.out_dim
        self.token_embed = Embedding(s, "enc/embed", c.vocab_size, c.token_embed, rng)
        self.token_enc = MLP(s, "enc/token", c.token_embed, c.units, 1, rng)
        self.obs_feat_dim = img_feat + c.units

        # posterior fusion: obs features + current h -> code logits
        self.fuse = MLP(s, "enc/fuse", self.obs_feat_dim + c.deter, c.units, 1, rng,
                        out_dim=c.z_dim)

        # action encoding (per factor: one-hot or embedding)
        self.action_embeds = []
        a_dim = 0
        for i, n in enumerate(c.action_dims):
            if n <= ONEHOT_ACTION_MAX:
                self.action_embeds.append(None)
                a_dim += n
            else:
                self.action_embeds.append(Embedding(s, f"seq/act{i}", n, 32, rng))
                a_dim += 32
        self.action_dim = a_dim

        # sequence model and prior head
        self.gru = GRUCell(s, "seq/gru", c.z_dim + a_dim, c.deter, rng)
        self.prior = MLP(s, "seq/prior", c.deter, c.units, 1, rng, out_dim=c.z_dim)

        # decoder trunk and heads
        self.dec_trunk = MLP(s, "dec/trunk", c.feat_dim, c.units, c.layers, rng)
        if cfg.obs_kind == "symbol":
            self.dec_img = Linear(s, "dec/img", c.units, int(np.prod(cfg.obs_shape)), rng)
        else:
            self.dec_img = ConvDecoder(s, "dec/img", c.units, cfg.obs_shape[0],
                                       c.cnn_depth, rng, resolution=cfg.obs_shape[1])
        self.dec_token = Linear(s, "dec/token", c.units, c.vocab_size, rng)
        self.dec_reward = Linear(s, "dec/reward", c.units, c.bins, rng, zero_init=True)
        self.dec_cont = Linear(s, "dec/cont", c.units, 1, rng, zero_init=True)

    # ------------------------------------------------------------------
    # state and input plumbing
    # ------------------------------------------------------------------
    def initial_state(self, batch: int) -> tuple[np.ndarray, np.ndarray]:
        dt = ad.default_dtype()
        return (np.zeros((batch, self.cfg.z_dim), dtype=dt),
                np.zeros((batch, self.cfg.deter), dtype=dt))

    def action_vec(self, actions: np.ndarray) -> Tensor:
        """(B, F) integer actions -> concatenated per-factor encoding."""
        actions = np.asarray(actions)
        if actions.ndim == 1:
            actions = actions[:, None]
        if actions.shape[1] != len(self.cfg.action_dims):
            raise ConfigurationError(
                f"expected {len(self.cfg.action_dims)} action factors, got {actions.shape[1]}")
        parts = []
        for i, n in enumerate(self.cfg.action_dims):
            col = actions[:, i]
            if np.any((col < 0) | (col >= n)):
                raise DataError(f"action factor {i} out of range [0, {n})")
            emb = self.action_embeds[i]
            if emb is None:
                oh = np.zeros((len(col), n), dtype=ad.default_dtype())
                oh[np.arange(len(col)), col] = 1.0
                parts.append(ad.constant(oh))
            else:
                parts.append(emb(col))
        return parts[0] if len(parts) == 1 else ad.concat(parts, axis=-1)

    def zero_action(self, batch: int) -> np.ndarray:
        return np.zeros((batch, len(self.cfg.action_dims)), dtype=np.int64)

    def obs_feat(self, image: np.ndarray, tokens: np.ndarray) -> Tensor:
        """Joint observation features for a flat batch of steps."""
        tokens = np.asarray(tokens)
        if np.any((tokens < 0) | (tokens >= self.cfg.vocab_size)):
            raise DataError(f"token id out of range [0, {self.cfg.vocab_size})")
        image = np.asarray(image, dtype=ad.default_dtype())
        if self.cfg.obs_kind == "symbol":
            flat = image.reshape(image.shape[0], -1)
            img = self.img_enc(ad.constant(flat))
        else:
            img = self.img_enc(ad.constant(image))
        tok = self.token_enc(self.token_embed(tokens))
        return ad.concat([img, tok], axis=-1)

    # ------------------------------------------------------------------
    # model components (Tensor in, Tensor out)
    # ------------------------------------------------------------------
    def seq_step(self, z: Tensor, h: Tensor, a_vec: Tensor) -> Tensor:
        """Recurrent update: new deterministic state from (z, h, a)."""
        return self.gru(ad.concat([z, a_vec], axis=-1), h)

    def prior_logits(self, h: Tensor) -> Tensor:
        out = self.prior(h)
        return ad.reshape(out, (h.shape[0], self.cfg.groups, self.cfg.classes))

    def posterior_logits(self, feat: Tensor, h: Tensor) -> Tensor:
        out = self.fuse(ad.concat([feat, h], axis=-1))
        return ad.reshape(out, (h.shape[0], self.cfg.groups, self.cfg.classes))

    def sample_code(self, logits: Tensor, rng: np.random.Generator,
                    greedy: bool = False, relaxed: bool = False) -> codecs.CategoricalCode:
        if relaxed:
            # differentiable surrogate (the straight-through backward path):
            # the code is the mixed probabilities themselves; used by the
            # finite-difference checks, never by training or acting
            probs = codecs.mixed_probs(logits, self.cfg.unimix)
            return codecs.CategoricalCode(sample=probs, probs=probs,
                                          onehot=probs.data)
        if greedy:
            probs = codecs.mixed_probs(logits, self.cfg.unimix)
            idx = probs.data.argmax(axis=-1)
            onehot = np.zeros_like(probs.data)
            np.put_along_axis(onehot, idx[..., None], 1.0, axis=-1)
            sample = probs + ad.constant(onehot - probs.data)
            return codecs.CategoricalCode(sample=sample, probs=probs, onehot=onehot)
        return codecs.st_sample(logits, rng, self.cfg.unimix)

    def flat(self, code_sample: Tensor) -> Tensor:
        return ad.reshape(code_sample, (code_sample.shape[0], self.cfg.z_dim))

    def decode(self, z: Tensor, h: Tensor, heads: tuple = ("image", "token", "reward", "cont")) -> dict:
        """Decoder heads from latent state; returns a dict of Tensors."""
        trunk = self.dec_trunk(ad.concat([z, h], axis=-1))
        out = {}
        if "image" in heads:
            img = self.dec_img(trunk)
            if self.cfg.obs_kind == "symbol":
                img = ad.reshape(img, (z.shape[0],) + tuple(self.cfg.obs_shape))
            out["image"] = img
        if "token" in heads:
            out["token"] = self.dec_token(trunk)
        if "reward" in heads:
            out["reward"] = self.dec_reward(trunk)
        if "cont" in heads:
            out["cont"] = self.dec_cont(trunk)
        return out

    def decode_reward(self, reward_logits: np.ndarray) -> np.ndarray:
        probs = _np_softmax(reward_logits)
        return codecs.twohot_decode(probs, self.spec)

    # ------------------------------------------------------------------
    # training
    # ------------------------------------------------------------------
    def unroll_posterior(self, batch: dict, rng: np.random.Generator,
                         mode: str = "full", relaxed: bool = False):
        """Run encoder + sequence model across a (B, T) batch.

        The recurrent and stochastic state (and the action input) are zeroed
        wherever `is_first` marks an episode start. Actions enter shifted by
        one step; the action preceding the segment comes from
        batch["prev_action_first"] (zeros when the segment opens an episode).
        Returns time-major stacked tensors: z (T*B, Z), h (T*B, D),
        posterior logits (T*B, N, K), prior logits (T*B, N, K).
        """
        tokens = batch["token"]
        B, T = tokens.shape
        image_tm = np.ascontiguousarray(np.swapaxes(batch["image"], 0, 1)).reshape(
            (T * B,) + tuple(batch["image"].shape[2:]))
        token_tm = np.ascontiguousarray(np.swapaxes(tokens, 0, 1)).reshape(T * B)
        is_first = batch["is_first"]
        actions = batch["action"]  # (B, T, F) actions taken at each step
        first_prev = batch.get("prev_action_first")
        if first_prev is None:
            first_prev = np.zeros_like(actions[:, 0])
        prev_actions = np.concatenate([first_prev[:, None], actions[:, :-1]], axis=1)

        feat_all = self.obs_feat(image_tm, token_tm)

        z_np, h_np = self.initial_state(B)
        z, h = ad.constant(z_np), ad.constant(h_np)
        zero_avec = None
        zs, hs, posts = [], [], []
        for t in range(T):
            keep = (1.0 - is_first[:, t]).astype(ad.default_dtype())[:, None]
            if mode == "text_pretrain":
                if zero_avec is None:
                    zero_avec = ad.constant(
                        np.zeros((B, self.action_dim), dtype=ad.default_dtype()))
                a_vec = zero_avec
            else:
                a_vec = self.action_vec(prev_actions[:, t])
            if keep.min() < 1.0:
                mask = ad.constant(keep)
                z = z * mask
                h = h * mask
                if mode != "text_pretrain":
                    a_vec = a_vec * mask
            h = self.seq_step(z, h, a_vec)
            feat_t = feat_all[t * B:(t + 1) * B]
            post_logits = self.posterior_logits(feat_t, h)
            code = self.sample_code(post_logits, rng, relaxed=relaxed)
            z = self.flat(code.sample)
            zs.append(z)
            hs.append(h)
            posts.append(post_logits)

        z_all = ad.concat(zs, axis=0)
        h_all = ad.concat(hs, axis=0)
        post_all = ad.concat(posts, axis=0)
        prior_all = self.prior_logits(h_all)
        return z_all, h_all, post_all, prior_all

    def compute_losses(self, batch: dict, rng: np.random.Generator,
                       mode: str = "full", relaxed: bool = False):
        """Joint loss over a batch of sequences.

        Returns (total Tensor, LossBreakdown, starts) where starts is the
        detached (h, z) at every step, used to seed imagination.
        """
        if mode not in ("full", "text_pretrain"):
            raise ConfigurationError(f"unknown loss mode {mode!r}")
        cfg = self.cfg
        for key in ("image", "reward", "cont"):
            if not np.all(np.isfinite(batch[key])):
                raise NumericalError(f"batch field {key!r} contains non-finite values")
        B, T = batch["token"].shape
        z_all, h_all, post_all, prior_all = self.unroll_posterior(
            batch, rng, mode=mode, relaxed=relaxed)

        heads = ("token",) if mode == "text_pretrain" else ("image", "token", "reward", "cont")
        decoded = self.decode(z_all, h_all, heads=heads)

        token_tm = np.ascontiguousarray(np.swapaxes(batch["token"], 0, 1)).reshape(T * B)
        loss_token = ad.mean(-ad.gather_last(ad.log_softmax(decoded["token"]), token_tm))

        zero = ad.constant(np.zeros((), dtype=ad.default_dtype()))
        if mode == "full":
            image_tm = np.swapaxes(batch["image"], 0, 1).reshape(
                (T * B,) + tuple(batch["image"].shape[2:]))
            diff = decoded["image"] - ad.constant(image_tm.astype(ad.default_dtype()))
            loss_image = ad.mean(ad.sum_(
                ad.reshape(ad.square(diff), (T * B, -1)), axis=-1))

            reward_tm = np.swapaxes(batch["reward"], 0, 1).reshape(T * B)
            target = codecs.twohot_encode(reward_tm, self.spec).astype(ad.default_dtype())
            loss_reward = ad.mean(-ad.sum_(
                ad.log_softmax(decoded["reward"]) * ad.constant(target), axis=-1))

            cont_tm = np.swapaxes(batch["cont"], 0, 1).reshape(T * B, 1)
            logit = decoded["cont"]
            loss_cont = ad.mean(ad.softplus(logit) - logit * ad.constant(
                cont_tm.astype(ad.default_dtype())))
        else:
            loss_image = loss_reward = loss_cont = zero

        post_p = codecs.mixed_probs(post_all, cfg.unimix)
        prior_p = codecs.mixed_probs(prior_all, cfg.unimix)
        kl_reg = codecs.categorical_kl(post_p, ad.stop_gradient(prior_p))
        kl_pred = codecs.categorical_kl(ad.stop_gradient(post_p), prior_p)
        loss_reg = ad.mean(codecs.free_nat_clip(kl_reg, cfg.free_nats)) * cfg.beta_reg
        loss_pred = ad.mean(codecs.free_nat_clip(kl_pred, cfg.free_nats)) * cfg.beta_pred

        total = loss_token + loss_reg + loss_pred
        if mode == "full":
            total = total + loss_image + loss_reward + loss_cont

        breakdown = LossBreakdown(
            image=float(loss_image.item()), token=float(loss_token.item()),
            reward=float(loss_reward.item()), cont=float(loss_cont.item()),
            reg=float(loss_reg.item()), pred=float(loss_pred.item()))
        for name, value in breakdown.as_dict().items():
            if not np.isfinite(value):
                raise NumericalError(f"non-finite world-model loss term {name}")

        starts = {"z": z_all.data.copy(), "h": h_all.data.copy()}
        return total, breakdown, starts

    # ------------------------------------------------------------------
    # imagination and generation
    # ------------------------------------------------------------------
    def imagine_step(self, z: np.ndarray, h: np.ndarray, actions: np.ndarray,
                     rng: np.random.Generator, greedy: bool = False):
        """One open-loop step from the prior; no gradients.

        Returns (z', h', prior_logits, reward, cont_prob) with decoded
        reward/continue read from the new state.
        """
        with ad.no_grad():
            zn, hn, logits = self.imagine_dynamics(z, h, actions, rng, greedy)
            heads = self.decode(ad.constant(zn), ad.constant(hn), heads=("reward", "cont"))
            reward = self.decode_reward(heads["reward"].data)
            cont = _np_sigmoid(heads["cont"].data[:, 0])
        return zn, hn, logits, reward, cont

    def imagine_dynamics(self, z: np.ndarray, h: np.ndarray, actions: np.ndarray,
                         rng: np.random.Generator, greedy: bool = False):
        """Prior transition only: (z, h, a) -> (z', h', prior logits)."""
        with ad.no_grad():
            a_vec = self.action_vec(actions)
            hn = self.seq_step(ad.constant(z), ad.constant(h), a_vec)
            logits = self.prior_logits(hn)
            code = self.sample_code(logits, rng, greedy=greedy)
            zn = self.flat(code.sample)
            return zn.data, hn.data, logits.data

    def encode_obs_step(self, image: np.ndarray, token: int | np.ndarray,
                        h: np.ndarray, rng: np.random.Generator,
                        greedy: bool = False) -> np.ndarray:
        """Posterior code for a single already-advanced deterministic state."""
        with ad.no_grad():
            tokens = np.atleast_1d(np.asarray(token, dtype=np.int64))
            feat = self.obs_feat(image, tokens)
            logits = self.posterior_logits(feat, ad.constant(h))
            code = self.sample_code(logits, rng, greedy=greedy)
            return self.flat(code.sample).data

    def decode_text_rollout(self, prefix_ids, length: int,
                            rng: np.random.Generator,
                            temperature: float = 1.0) -> list[int]:
        """Generate tokens by imagining forward and feeding samples back.

        The prefix is consumed with posterior encoding (zero images and
        actions); each generated token is sampled from the token head at the
        imagined state and re-encoded as the next observation. Temperature 0
        decodes greedily (argmax tokens and code modes), which is
        deterministic.
        """
        greedy = temperature == 0.0
        zero_img = np.zeros((1,) + tuple(self.cfg.obs_shape), dtype=ad.default_dtype())
        zero_act = self.zero_action(1)
        z, h = self.initial_state(1)
        with ad.no_grad():
            for tok in prefix_ids:
                a_vec = self.action_vec(zero_act)
                h = self.seq_step(ad.constant(z), ad.constant(h), a_vec).data
                z = self.encode_obs_step(zero_img, int(tok), h, rng, greedy=greedy)
            out: list[int] = []
            for _ in range(length):
                a_vec = self.action_vec(zero_act)
                h = self.seq_step(ad.constant(z), ad.constant(h), a_vec).data
                logits = self.prior_logits(ad.constant(h))
                code = self.sample_code(logits, rng, greedy=greedy)
                zp = self.flat(code.sample)
                tok_logits = self.decode(zp, ad.constant(h), heads=("token",))["token"].data[0]
                tok = _sample_logits(tok_logits, rng, temperature)
                out.append(int(tok))
                z = self.encode_obs_step(zero_img, int(tok), h, rng, greedy=greedy)
        return out


def _np_softmax(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _np_sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (np.tanh(0.5 * x) + 1.0)


def _sample_logits(logits: np.ndarray, rng: np.random.Generator,
                   temperature: float = 1.0) -> int:
    if temperature == 0.0:
        return int(np.argmax(logits))
    p = _np_softmax(logits / temperature)
    return int(rng.choice(len(p), p=p / p.sum()))
