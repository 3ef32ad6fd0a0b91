import numpy as np
import pytest

import langwm.autodiff as ad
from langwm import codecs
from langwm.autodiff import Adam
from langwm.errors import ConfigurationError, UsageError
from langwm.policy import ActorCritic, ImaginedTrajectory, PolicyConfig, lambda_returns
from langwm.worldmodel import WorldModel, WorldModelConfig


# ---------------------------------------------------------------------------
# lambda returns
# ---------------------------------------------------------------------------

def test_lambda_zero_collapses_to_one_step():
    rng = np.random.default_rng(0)
    T = 9
    r, c = rng.normal(size=T), rng.random(T)
    v = rng.normal(size=T + 1)
    out = lambda_returns(r, c, v, gamma=0.93, lam=0.0)
    np.testing.assert_allclose(out[:T], r + 0.93 * c * v[1:], atol=1e-12)
    assert out[T] == v[T]


def test_lambda_one_hand_case():
    # gamma=0.9, c=1, V=0, r=[1,1]: R_1 = 1, R_0 = 1 + 0.9 = 1.9
    out = lambda_returns(np.array([1.0, 1.0]), np.ones(2), np.zeros(3),
                         gamma=0.9, lam=1.0)
    np.testing.assert_allclose(out, [1.9, 1.0, 0.0])


def brute_force_returns(r, c, v, gamma, lam):
    """Expand the lambda mixture explicitly: weighted n-step bootstraps."""
    T = len(r)
    out = np.zeros(T + 1)
    out[T] = v[T]
    for t in range(T):
        # G^(n) = sum_{k<n} (prod_{j<k} gamma c) r ... accumulate iteratively
        total = 0.0
        # n-step return G_n for n = 1..T-t, each bootstrapping with V
        for n in range(1, T - t + 1):
            g = 0.0
            disc = 1.0
            for k in range(n):
                g += disc * r[t + k]
                disc *= gamma * c[t + k]
            g += disc * v[t + n]
            weight = (1 - lam) * lam ** (n - 1) if n < T - t else lam ** (n - 1)
            total += weight * g
        out[t] = total
    return out


def test_lambda_matches_brute_force_oracle():
    rng = np.random.default_rng(3)
    for _ in range(200):
        T = 15
        r = rng.normal(size=T)
        c = rng.random(T)
        v = rng.normal(size=T + 1)
        gamma, lam = rng.uniform(0.8, 1.0), rng.uniform(0.0, 1.0)
        fast = lambda_returns(r, c, v, gamma, lam)
        slow = brute_force_returns(r, c, v, gamma, lam)
        np.testing.assert_allclose(fast, slow, atol=1e-9)


def test_lambda_length_mismatch_rejected():
    with pytest.raises(UsageError):
        lambda_returns(np.zeros(5), np.zeros(5), np.zeros(5), 0.9, 0.9)


# ---------------------------------------------------------------------------
# rollout against a real (untrained) world model
# ---------------------------------------------------------------------------

TINY_WM = dict(obs_kind="symbol", obs_shape=(3, 2, 2), vocab_size=8,
               action_dims=(3,), deter=16, groups=4, classes=4, units=16,
               layers=1, token_embed=4)


def make_pair(action_dims=(3,), **pol_kw):
    wm = WorldModel(WorldModelConfig(**{**TINY_WM, "action_dims": action_dims}),
                    np.random.default_rng(0))
    pc = PolicyConfig(action_dims=action_dims, feat_dim=wm.cfg.feat_dim,
                      units=16, layers=1, horizon=6, **pol_kw)
    ac = ActorCritic(pc, np.random.default_rng(1))
    return wm, ac


def test_rollout_shapes_and_weights(f64, rng):
    wm, ac = make_pair()
    B = 10
    z, h = wm.initial_state(B)
    traj = ac.rollout(wm, z, h, rng)
    assert traj.z.shape == (B, 7, wm.cfg.z_dim)
    assert traj.actions.shape == (B, 6, 1)
    assert traj.returns.shape == (B, 7)
    assert np.all(traj.weights[:, 0] == 1.0)
    assert np.all(np.diff(traj.weights, axis=1) <= 1e-12)  # non-increasing


def test_rollout_reproducible(f64):
    wm, ac = make_pair()
    z, h = wm.initial_state(4)
    t1 = ac.rollout(wm, z, h, np.random.default_rng(9))
    t2 = ac.rollout(wm, z, h, np.random.default_rng(9))
    np.testing.assert_array_equal(t1.actions, t2.actions)
    np.testing.assert_array_equal(t1.returns, t2.returns)


def test_dead_steps_lose_weight(f64):
    # steps after a predicted episode end contribute almost nothing: two
    # continuation factors under 0.1 push the weight below 1e-2, and near
    # zero continuation (0.03) pushes it below 1e-3
    for c_val, bound in ((0.0999, 1e-2), (0.03, 1e-3)):
        continues = np.full((1, 6), c_val)
        w = np.ones((1, 7))
        w[:, 1:] = np.cumprod(0.99 * continues, axis=-1)
        assert w[0, 2] < bound


# ---------------------------------------------------------------------------
# critic loss
# ---------------------------------------------------------------------------

def make_traj(rng, ac, B=5, T=6, zdim=16, ddim=16):
    values = rng.normal(size=(B, T + 1))
    rewards = rng.normal(size=(B, T))
    continues = np.ones((B, T))
    returns = lambda_returns(rewards, continues, values, 0.99, 0.95)
    weights = np.ones((B, T + 1))
    weights[:, 1:] = np.cumprod(0.99 * continues, axis=-1)
    return ImaginedTrajectory(
        z=rng.normal(size=(B, T + 1, zdim)), h=rng.normal(size=(B, T + 1, ddim)),
        actions=rng.integers(0, 3, size=(B, T, 1)), rewards=rewards,
        continues=continues, values=values, returns=returns, weights=weights)


def test_critic_loss_minimum_is_target_entropy(f64, rng):
    # when the critic softmax equals the twohot target exactly, the cross
    # entropy equals the entropy of the target (its minimum)
    wm, ac = make_pair()
    traj = make_traj(rng, ac, B=2, T=3)
    target = codecs.twohot_encode(traj.returns[:, :3].reshape(-1), ac.spec)
    probs = np.clip(target, 1e-8, None)
    probs /= probs.sum(-1, keepdims=True)
    xent = -(target * np.log(probs)).sum(-1)
    ent = -(target * np.log(np.clip(target, 1e-12, None))).sum(-1)
    np.testing.assert_allclose(xent, ent, atol=1e-5)


def test_critic_fits_fixed_targets(f64, rng):
    wm, ac = make_pair()
    traj = make_traj(rng, ac)
    opt = Adam(ac.critic_store, lr=3e-3)
    losses = []
    for _ in range(100):
        loss = ac.critic_loss(traj)
        losses.append(loss.item())
        loss.backward()
        opt.step()
    assert losses[-1] < losses[0]


def test_critic_loss_fd(f64, rng):
    wm, ac = make_pair()
    traj = make_traj(rng, ac, B=2, T=3)
    subset = {k: ac.critic_store[k] for k in ["critic/head/w", "critic/l0/w"]}
    report = ad.grad_check(lambda: ac.critic_loss(traj), subset, tolerance=1e-4)
    assert report.passed, str(report)


# ---------------------------------------------------------------------------
# actor loss
# ---------------------------------------------------------------------------

def test_actor_zero_advantage_leaves_entropy_gradient(f64, rng):
    wm, ac = make_pair()
    traj = make_traj(rng, ac)
    traj.returns[:] = traj.values[:]  # zero advantage everywhere
    # perturb the actor head away from uniform, then check entropy ascends
    head = ac.actor_store["actor/head0/w"]
    head.data = head.data + rng.normal(size=head.shape) * 0.5
    opt = Adam(ac.actor_store, lr=1e-2)

    def entropy_of(traj):
        B, T = traj.batch, traj.horizon
        feat = np.concatenate([traj.z[:, :T], traj.h[:, :T]], axis=-1).reshape(B * T, -1)
        with ad.no_grad():
            logits = ac.actor_logits(ad.constant(feat))[0].data
        p = np.exp(logits - logits.max(-1, keepdims=True))
        p /= p.sum(-1, keepdims=True)
        return float(-(p * np.log(p)).sum(-1).mean())

    before = entropy_of(traj)
    for _ in range(50):
        loss, _ = ac.actor_loss(traj, scale=1.0)
        loss.backward()
        opt.step()
    assert entropy_of(traj) > before


def test_advantage_sign_invariant_under_joint_rescale(rng):
    # scaling returns and the percentile spread by the same positive factor
    # never flips the sign of the normalized advantage
    for _ in range(300):
        adv = rng.normal() * 10
        s = abs(rng.normal()) * 3
        c = rng.uniform(0.1, 100)
        a1 = adv / max(1.0, s)
        a2 = (c * adv) / max(1.0, c * s)
        assert np.sign(a1) == np.sign(a2)


def test_doubling_returns_doubles_fresh_percentile_scale(rng):
    r = rng.normal(size=500)
    s1 = codecs.PercentileEMA().update(r)
    s2 = codecs.PercentileEMA().update(2 * r)
    assert s2 == pytest.approx(2 * s1)


def test_actor_loss_fd(f64, rng):
    wm, ac = make_pair()
    traj = make_traj(rng, ac, B=2, T=3)
    subset = {k: ac.actor_store[k] for k in ["actor/head0/w", "actor/trunk/l0/w"]}
    report = ad.grad_check(lambda: ac.actor_loss(traj, scale=2.0)[0], subset,
                           tolerance=1e-4)
    assert report.passed, str(report)


def test_actor_gradients_do_not_touch_world_model(f64, rng):
    wm, ac = make_pair()
    z, h = wm.initial_state(4)
    traj = ac.rollout(wm, z, h, rng)
    loss, _ = ac.actor_loss(traj, scale=1.0)
    loss.backward()
    assert all(p.grad is None for _, p in wm.store)


# ---------------------------------------------------------------------------
# two-armed bandit stub: the policy must find the rewarding arm
# ---------------------------------------------------------------------------

class BanditStub:
    """Fixed 'world model': arm 0 yields reward 1, arm 1 yields 0."""

    class cfg:
        z_dim = 4
        deter = 4
        action_dims = (2,)

    def imagine_dynamics(self, z, h, actions, rng, greedy=False):
        self._last = np.asarray(actions)[:, 0]
        return z, h, None

    def decode(self, z, h, heads=()):
        n = z.shape[0]
        out = {}
        if "reward" in heads:
            # logits that twohot-decode to the last action's reward
            out["reward"] = ad.constant(np.zeros((n, 63)))
        if "cont" in heads:
            out["cont"] = ad.constant(np.full((n, 1), 10.0))
        return out

    def decode_reward(self, logits):
        # the stub bypasses bins: reward of arm 0 is 1
        B = logits.shape[0]
        T = B // max(1, len(getattr(self, "_acts", [1])))
        return self._reward_vec

    def initial_state(self, n):
        return np.zeros((n, 4)), np.zeros((n, 4))


def test_bandit_actor_prefers_rewarding_arm(f64):
    # hand-rolled imagination on the stub: horizon 1, reward = [arm == 0]
    rng = np.random.default_rng(0)
    pc = PolicyConfig(action_dims=(2,), feat_dim=8, units=16, layers=1,
                      horizon=1, gamma=0.9, lam=0.95, entropy=3e-4)
    ac = ActorCritic(pc, np.random.default_rng(1))
    aopt = Adam(ac.actor_store, lr=1e-2)
    copt = Adam(ac.critic_store, lr=3e-3)
    B = 64
    z = np.zeros((B, 4), dtype=np.float64)
    h = np.zeros((B, 4), dtype=np.float64)
    for step in range(500):
        actions = ac.act(z, h, rng)
        rewards = (actions[:, 0] == 0).astype(np.float64)[:, None]
        values = ac.values(np.zeros((B * 2, 4)), np.zeros((B * 2, 4))).reshape(B, 2)
        returns = lambda_returns(rewards, np.ones((B, 1)), values, 0.9, 0.95)
        traj = ImaginedTrajectory(
            z=np.zeros((B, 2, 4)), h=np.zeros((B, 2, 4)),
            actions=actions[:, None, :], rewards=rewards,
            continues=np.ones((B, 1)), values=values, returns=returns,
            weights=np.ones((B, 2)))
        s = ac.scale.update(traj.returns[:, :1])
        closs = ac.critic_loss(traj)
        closs.backward()
        copt.step()
        aloss, _ = ac.actor_loss(traj, s)
        aloss.backward()
        aopt.step()
    with ad.no_grad():
        logits = ac.actor_logits(ad.constant(np.zeros((1, 8))))[0].data
    p = np.exp(logits - logits.max())
    p /= p.sum()
    assert p[0, 0] > 0.95, f"actor prefers arm 0 with p={p[0, 0]:.3f}"


# ---------------------------------------------------------------------------
# language-action regularizer
# ---------------------------------------------------------------------------

def test_language_kl_zero_when_matched(f64, rng):
    wm, ac = make_pair(action_dims=(3, 8), beta_lm=1.0, token_factor=1)
    traj = make_traj(rng, ac, B=2, T=3)
    traj.actions = np.stack([rng.integers(0, 3, (2, 3)), rng.integers(0, 8, (2, 3))],
                            axis=-1)
    B, T = 2, 3
    feat = np.concatenate([traj.z[:, :T], traj.h[:, :T]], axis=-1).reshape(B * T, -1)
    with ad.no_grad():
        pi = ad.softmax(ac.actor_logits(ad.constant(feat))[1]).data
    ref = pi.reshape(B, T, 8)
    loss_with, m = ac.actor_loss(traj, 1.0, ref)
    assert m["policy/lm_kl"] == pytest.approx(0.0, abs=1e-9)


def test_language_kl_requires_token_head(f64, rng):
    wm, ac = make_pair(beta_lm=1.0, token_factor=None)
    traj = make_traj(rng, ac)
    with pytest.raises(ConfigurationError):
        ac.actor_loss(traj, 1.0, np.zeros((5, 6, 8)))


def test_language_kl_fd(f64, rng):
    wm, ac = make_pair(action_dims=(3, 8), beta_lm=1.0, token_factor=1)
    traj = make_traj(rng, ac, B=2, T=3)
    traj.actions = np.stack([rng.integers(0, 3, (2, 3)), rng.integers(0, 8, (2, 3))],
                            axis=-1)
    ref = rng.dirichlet(np.ones(8), size=(2, 3))
    subset = {"actor/head1/w": ac.actor_store["actor/head1/w"]}
    report = ad.grad_check(lambda: ac.actor_loss(traj, 1.0, ref)[0], subset,
                           tolerance=1e-4)
    assert report.passed, str(report)


def test_model_token_reference_restricts_and_renormalizes(f64, rng):
    wm, ac = make_pair(action_dims=(3, 5), beta_lm=1.0, token_factor=1)
    z, h = wm.initial_state(3)
    traj = ac.rollout(wm, z, h, rng)
    ref = ac.model_token_reference(wm, traj)
    assert ref.shape == (3, 6, 5)
    np.testing.assert_allclose(ref.sum(-1), 1.0, atol=1e-6)
