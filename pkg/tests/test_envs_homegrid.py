import numpy as np
import pytest

from langwm.envs.base import UtteranceStream
from langwm.envs.homegridlite import (BROKEN, CLOSED, DYNAMICS_TOKEN_CAP,
                                      EPISODE_LEN, INSTRUCTION_PERIOD, OPEN,
                                      HomeGridLite)
from langwm.envs.scripted import HomeGridExpert
from langwm.envs.vocab import PAD, SHARED_WORDS, Tokenizer

TOK = Tokenizer(SHARED_WORDS)
NOOP = np.array([0])


def drive(env, expert, max_steps=EPISODE_LEN):
    """Run the expert until the first task completion; returns reward steps."""
    obs = env.reset()
    for t in range(max_steps):
        obs = env.step(expert(env))
        if obs.reward > 0:
            return t + 1, obs
        if obs.cont == 0:
            break
    return None, obs


# ---------------------------------------------------------------------------
# task semantics
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("kind", ["find", "get", "put", "move", "open"])
def test_expert_completes_each_task_type(kind):
    expert = HomeGridExpert()
    done = 0
    for seed in range(12):
        env = HomeGridLite(seed=seed, task_filter=(kind,))
        steps, obs = drive(env, expert)
        if steps is not None:
            done += 1
    assert done >= 11, f"{kind}: expert solved only {done}/12 seeds"


def test_expert_completes_95pct_across_seeds():
    expert = HomeGridExpert()
    done, total = 0, 60
    for seed in range(total):
        env = HomeGridLite(seed=1000 + seed)
        steps, _ = drive(env, expert)
        done += steps is not None
    assert done / total >= 0.95, f"expert completed {done}/{total}"


def test_task_completion_pays_one_and_resamples():
    expert = HomeGridExpert()
    env = HomeGridLite(seed=5, task_filter=("find",))
    first_task = env._instruction_text()
    steps, obs = drive(env, expert)
    assert steps is not None and obs.reward == pytest.approx(1.0)
    assert env.score == 1


def test_episode_lasts_100_steps():
    env = HomeGridLite(seed=6)
    env.reset()
    for t in range(1, EPISODE_LEN + 1):
        obs = env.step(NOOP)
        assert obs.cont == (0 if t == EPISODE_LEN else 1)
    assert "score" in obs.info["episode"]


def test_drop_with_empty_inventory_is_noop():
    env = HomeGridLite(seed=7)
    env.reset()
    before = (env.agent, env.orient, dict(env.obj_pos))
    out = env.step(np.array([5]))
    assert out.reward == 0.0
    assert env.inventory is None
    assert dict(env.obj_pos) == before[2]


# ---------------------------------------------------------------------------
# bins
# ---------------------------------------------------------------------------

def wrong_action_for(b):
    return 7 + next(a for a in range(3) if a != b["correct"])


def face_bin(env, b):
    """Teleport the agent next to a bin, facing it (test convenience)."""
    r, c = b["pos"]
    for orient, (dr, dc) in {0: (1, 0), 1: (-1, 0), 2: (0, 1), 3: (0, -1)}.items():
        cell = (r + dr, c + dc)
        if env.in_bounds(*cell) and env._cell_is_floor(cell):
            env.agent = cell
            env.orient = {0: 0, 1: 1, 2: 2, 3: 3}[orient]
            return


def test_wrong_action_breaks_then_resets_after_5_steps():
    env = HomeGridLite(seed=8)
    env.reset()
    b = next(bb for bb in env.bins if bb["resettable"])
    b["state"] = CLOSED
    face_bin(env, b)
    env.step(np.array([wrong_action_for(b)]))
    assert b["state"] == BROKEN
    for _ in range(4):
        env.step(NOOP)
        assert b["state"] == BROKEN
    env.step(NOOP)
    assert b["state"] == CLOSED  # reset after 5 timesteps
    face_bin(env, b)
    env.step(np.array([7 + b["correct"]]))
    assert b["state"] == OPEN


def test_irreversible_bin_stays_broken():
    env = HomeGridLite(seed=9)
    env.reset()
    b = next(bb for bb in env.bins if not bb["resettable"])
    b["state"] = CLOSED
    face_bin(env, b)
    env.step(np.array([wrong_action_for(b)]))
    assert b["state"] == BROKEN
    for _ in range(20):
        env.step(NOOP)
    assert b["state"] == BROKEN
    face_bin(env, b)
    env.step(np.array([7 + b["correct"]]))
    assert b["state"] == BROKEN  # ignores interactions until reset (never)


def test_bins_start_open_with_probability_half():
    opens, total = 0, 400
    for seed in range(total):
        env = HomeGridLite(seed=seed)
        opens += sum(b["state"] == OPEN for b in env.bins)
    frac = opens / (2 * total)
    assert 0.42 < frac < 0.58


# ---------------------------------------------------------------------------
# language scheduling
# ---------------------------------------------------------------------------

def collect_tokens(env, steps, policy=lambda env: NOOP):
    toks = []
    for _ in range(steps):
        obs = env.step(policy(env))
        toks.append(obs.token)
        if obs.cont == 0:
            break
    return toks


def test_instruction_streams_from_reset_and_repeats_every_20():
    env = HomeGridLite(seed=10)
    obs = env.reset()
    instr = env.tok.tokenize(env._instruction_text())
    stream = [obs.token] + collect_tokens(env, 60)
    assert stream[:len(instr)] == instr
    # the instruction restarts at steps 20 and 40 (no events with hints=none)
    assert stream[INSTRUCTION_PERIOD:INSTRUCTION_PERIOD + len(instr)] == instr
    assert stream[2 * INSTRUCTION_PERIOD:2 * INSTRUCTION_PERIOD + len(instr)] == instr


def test_hints_none_only_instruction_tokens():
    env = HomeGridLite(seed=11, hints="none")
    obs = env.reset()
    instr_words = set(env.tok.tokenize(env._instruction_text()))
    toks = set([obs.token] + collect_tokens(env, 99))
    extra = toks - instr_words - {PAD}
    # tasks can resample on accidental completion; allow instruction words only
    for t in extra:
        assert TOK.words[t] in set(
            w for k in ("find", "get", "put", "move", "open") for w in [k]) \
            or t in instr_words or TOK.words[t] in (
                "the", "in", "to", "bin", "recycling", "trash", "compost",
                "bottle", "fruit", "papers", "plates", "kitchen", "living",
                "dining", "room")


def test_new_task_interrupts_current_utterance():
    expert = HomeGridExpert()
    env = HomeGridLite(seed=12, task_filter=("find",))
    env.reset()
    for _ in range(EPISODE_LEN):
        obs = env.step(expert(env))
        if obs.reward > 0:
            new_instr = env.tok.tokenize(env._instruction_text())
            assert obs.token == new_instr[0] or env.stream.cursor == 1
            break
    else:
        pytest.skip("expert found no task this seed")


def test_dynamics_hints_stream_first_capped_with_agent_frozen():
    env = HomeGridLite(seed=13, hints="dynamics")
    obs = env.reset()
    n_dynamics = env.freeze_until
    assert 0 < n_dynamics <= DYNAMICS_TOKEN_CAP
    start = env.agent
    toks = [obs.token]
    for _ in range(n_dynamics - 1):
        obs = env.step(np.array([1]))  # try to move during the prelude
        toks.append(obs.token)
    assert env.agent == start  # held in place
    text = TOK.detokenize(toks)
    for b in env.bins:
        assert f"to open the" in text
    env.step(np.array([1]))
    # after the prelude movement works (unless blocked)


def test_dynamics_token_cap_enforced():
    # the utterance stream is truncated to 28 tokens even with many bins
    env = HomeGridLite(seed=14, hints="dynamics", num_bins=3)
    env.reset()
    assert env.freeze_until <= DYNAMICS_TOKEN_CAP


def test_futures_hints_are_truthful():
    # every "<thing> is in the <room>" fact must match ground truth at the
    # step it starts streaming
    env = HomeGridLite(seed=15, hints="futures")
    obs = env.reset()
    checked = 0
    rooms = ("kitchen", "living room", "dining room")
    for _ in range(600):
        obs = env.step(NOOP) if obs.cont else env.reset()
        text = obs.info.get("utterance")
        if not text or " is in the " not in text or "will" in text:
            continue
        subject, room = text.split(" is in the ")
        room_idx = rooms.index(room)
        if subject.endswith(" bin"):
            bname = subject[:-4]
            b = next(bb for bb in env.bins
                     if ("recycling", "trash", "compost")[bb["type"]] == bname)
            assert env.room_of(b["pos"]) == room_idx
        else:
            o = ("bottle", "fruit", "papers", "plates").index(subject)
            assert isinstance(env.obj_pos[o], tuple)
            assert env.room_of(env.obj_pos[o]) == room_idx
        checked += 1
    assert checked >= 3, f"only {checked} facts observed"


def test_corrections_emitted_when_distance_increases():
    env = HomeGridLite(seed=16, hints="corrections")
    obs = env.reset()
    saw_correction = False
    no_id = TOK.tokenize("no")[0]
    for trial in range(800):
        obs = env.step(NOOP) if obs.cont else env.reset()
        if obs.token == no_id:
            saw_correction = True
            break
    assert saw_correction


def test_spawn_scheduling_and_announcement():
    env = HomeGridLite(seed=17, hints="futures")
    env.reset()
    found = False
    for _ in range(400):
        obs = env.step(NOOP)
        if env.pending_spawns:
            s = env.pending_spawns[0]
            assert s["due"] - env.t <= 5
            found = True
            break
        if obs.cont == 0:
            env.reset()
    assert found, "no spawn scheduled in 400 steps"


def test_objects_teleport_sometimes():
    env = HomeGridLite(seed=18)
    env.reset()
    starts = {o: p for o, p in env.obj_pos.items() if isinstance(p, tuple)}
    moved = False
    for _ in range(200):
        obs = env.step(NOOP)
        for o, p in starts.items():
            if isinstance(env.obj_pos[o], tuple) and env.obj_pos[o] != p:
                moved = True
        if obs.cont == 0:
            break
    assert moved


def test_observation_channels_and_one_token():
    env = HomeGridLite(seed=19)
    obs = env.reset()
    assert obs.image.shape == env.obs_shape
    assert isinstance(obs.token, int) and 0 <= obs.token < env.vocab_size
    # orientation plane is constant one
    assert obs.image[18 + env.orient].min() == 1


def test_pixel_renderer_shape():
    env = HomeGridLite(seed=20)
    env.reset()
    img = env.render_pixels()
    assert img.shape == (3, 64, 64)
    assert img.min() >= 0.0 and img.max() <= 1.0


def test_utterance_stream_interrupt():
    s = UtteranceStream()
    s.begin([1, 2, 3])
    assert s.pop() == 1
    s.begin([7, 8], interrupt=False)  # ignored while streaming
    assert s.pop() == 2
    s.begin([7, 8], interrupt=True)
    assert s.pop() == 7
    assert s.pop() == 8
    assert s.pop(PAD) == PAD
