"""Household cleanup gridworld with streamed language at reduced scale.

A 12x10 grid (border walls) split into three rooms by flooring, two trash
bins and two initial objects per episode. Five task families (find, get,
put, move, open) each pay reward 1 and resample a new task on completion;
episodes last 100 steps. Bin opening requires a per-episode secret action
out of {pedal, grasp, lift}; a wrong action breaks the bin - one bin resets
after 5 steps, the other stays broken. Objects teleport with probability
0.05 per step and new objects spawn with probability 0.1 per remaining
unique type, materializing 5 steps after being scheduled.

Language: one token per step. When nothing is streaming, the scheduler
(1) repeats the task instruction every 20 steps, (2) describes events of the
current step ("i moved the ... to the ..."), (3) emits a true state fact
("... is in the ...") at a small rate, or (4) emits a correction
("no, turn around") with probability 0.1 when the distance to the goal
increased. A new task interrupts any streaming sentence. With the
"dynamics" hint set, descriptions of the correct opening actions stream
before acting (at most 28 tokens) while the agent is held in place.

Hint sets: none (instructions only), futures (events + state facts),
dynamics (opening actions), corrections. Underlying world dynamics are
identical across hint sets.
"""

from __future__ import annotations

import numpy as np

from ..errors import ConfigurationError, DataError
from .base import EnvStep, UtteranceStream
from .vocab import PAD, SHARED_WORDS, Tokenizer

OBJECTS = ["bottle", "fruit", "papers", "plates"]
BIN_TYPES = ["recycling", "trash", "compost"]
OPEN_ACTIONS = ["pedal", "grasp", "lift"]
ROOMS = ["kitchen", "living room", "dining room"]
ACTIONS = ["up", "down", "left", "right", "pickup", "drop", "get",
           "pedal", "grasp", "lift"]
MOVE_DELTAS = {0: (-1, 0), 1: (1, 0), 2: (0, -1), 3: (0, 1)}

WIDTH, HEIGHT = 12, 10          # columns x rows, border is wall
ROOM_COLS = [(1, 4), (5, 7), (8, 10)]  # inclusive column bands
VIEW = 3
EPISODE_LEN = 100
TELEPORT_P = 0.05
SPAWN_P_PER_OBJ = 0.1
SPAWN_DELAY = 5
BIN_RESET_STEPS = 5
INSTRUCTION_PERIOD = 20
CORRECTION_P = 0.1
FACT_P = 0.25
DYNAMICS_TOKEN_CAP = 28

OPEN, CLOSED, BROKEN = 0, 1, 2
CHANNELS = 1 + 3 + 4 + 3 + 3 + 4 + 4  # wall, room, object, bin type, bin state, carry, orient


class HomeGridLite:
    obs_kind = "symbol"
    obs_shape = (CHANNELS, VIEW, VIEW)

    def __init__(self, seed: int = 0, hints: str = "none",
                 episode_len: int = EPISODE_LEN, num_bins: int = 2,
                 num_objects: int = 2, task_filter: tuple = ()):
        if hints not in ("none", "futures", "dynamics", "corrections"):
            raise ConfigurationError(f"unknown hint set {hints!r}")
        self.hints = hints
        self.tok = Tokenizer(SHARED_WORDS)
        self.vocab_size = self.tok.size
        self.action_dims = (len(ACTIONS),)
        self.episode_len = episode_len
        self.num_bins = num_bins
        self.num_objects = num_objects
        self.task_filter = tuple(task_filter)
        self.rng = np.random.default_rng(seed)
        self.reset()

    # ------------------------------------------------------------------
    # layout helpers
    # ------------------------------------------------------------------
    @staticmethod
    def in_bounds(r: int, c: int) -> bool:
        return 1 <= r <= HEIGHT - 2 and 1 <= c <= WIDTH - 2

    @staticmethod
    def room_of(pos) -> int:
        for i, (lo, hi) in enumerate(ROOM_COLS):
            if lo <= pos[1] <= hi:
                return i
        return 0

    def _free_cells(self, room: int | None = None) -> list:
        taken = {b["pos"] for b in self.bins}
        taken |= {p for p in self.obj_pos.values() if isinstance(p, tuple)}
        taken.add(self.agent)
        out = []
        for r in range(1, HEIGHT - 1):
            for c in range(1, WIDTH - 1):
                if (r, c) in taken:
                    continue
                if room is not None and self.room_of((r, c)) != room:
                    continue
                out.append((r, c))
        return out

    def _pick_free(self, room: int | None = None):
        cells = self._free_cells(room)
        if not cells:
            return None
        return cells[int(self.rng.integers(len(cells)))]

    # ------------------------------------------------------------------
    # reset
    # ------------------------------------------------------------------
    def reset(self, seed: int | None = None) -> EnvStep:
        if seed is not None:
            self.rng = np.random.default_rng(seed)
        rng = self.rng
        self.t = 0
        self.score = 0
        self.episode_return = 0.0
        self.inventory: int | None = None
        self.orient = int(rng.integers(4))
        self.agent = (int(rng.integers(1, HEIGHT - 1)), int(rng.integers(1, WIDTH - 1)))

        bin_types = rng.choice(len(BIN_TYPES), size=self.num_bins, replace=False)
        resettable = rng.permutation(self.num_bins) == 0 if self.num_bins > 1 else [True]
        self.bins = []
        self.obj_pos: dict[int, tuple | str | None] = {i: None for i in range(len(OBJECTS))}
        for i, bt in enumerate(bin_types):
            pos = self._pick_free()
            self.bins.append({
                "type": int(bt), "pos": pos,
                "state": OPEN if rng.random() < 0.5 else CLOSED,
                "contains": None,
                "correct": int(rng.integers(len(OPEN_ACTIONS))),
                "resettable": bool(resettable[i]),
                "broken_at": -1,
            })
        for obj in rng.choice(len(OBJECTS), size=self.num_objects, replace=False):
            self.obj_pos[int(obj)] = self._pick_free()

        self.pending_spawns: list[dict] = []
        self.stream = UtteranceStream()
        self.event_queue: list[list[int]] = []
        self.last_instruction = 0
        self.freeze_until = 0
        self.prev_goal_dist: int | None = None
        self._started_utterance = None

        if self.hints == "dynamics":
            utts = []
            for b in rng.permutation(len(self.bins)):
                utts.append(self._dynamics_text(self.bins[int(b)]))
            tokens = [t for u in utts for t in self.tok.tokenize(u)]
            tokens = tokens[:DYNAMICS_TOKEN_CAP]
            self.stream.begin(tokens, interrupt=True)
            self.freeze_until = len(tokens)
            self.last_instruction = -INSTRUCTION_PERIOD  # instruction right after
        self.task = self._sample_task()
        if self.hints != "dynamics":
            self.stream.begin(self._instruction_tokens(), interrupt=True)
            self.last_instruction = 0
        tok = self.stream.pop(PAD)
        return EnvStep(image=self._render(), token=tok, reward=0.0, cont=1,
                       is_first=1, info={"task": self._instruction_text()})

    # ------------------------------------------------------------------
    # language helpers
    # ------------------------------------------------------------------
    def _bin_name(self, b) -> str:
        return f"{BIN_TYPES[b['type']]} bin"

    def _dynamics_text(self, b) -> str:
        return f"{OPEN_ACTIONS[b['correct']]} to open the {self._bin_name(b)}"

    def _instruction_text(self) -> str:
        kind = self.task[0]
        if kind == "find":
            _, what, idx = self.task
            name = OBJECTS[idx] if what == "obj" else self._bin_name(self.bins[idx])
            return f"find the {name}"
        if kind == "get":
            return f"get the {OBJECTS[self.task[1]]}"
        if kind == "put":
            return f"put the {OBJECTS[self.task[1]]} in the {self._bin_name(self.bins[self.task[2]])}"
        if kind == "move":
            return f"move the {OBJECTS[self.task[1]]} to the {ROOMS[self.task[2]]}"
        return f"open the {self._bin_name(self.bins[self.task[1]])}"

    def _instruction_tokens(self) -> list[int]:
        return self.tok.tokenize(self._instruction_text())

    # ------------------------------------------------------------------
    # tasks
    # ------------------------------------------------------------------
    def _objects_on_floor(self) -> list[int]:
        return [o for o, p in self.obj_pos.items() if isinstance(p, tuple)]

    def _object_exists(self, o: int) -> bool:
        if self.inventory == o:
            return True
        if isinstance(self.obj_pos[o], tuple):
            return True
        return any(b["contains"] == o for b in self.bins)

    def _object_room(self, o: int) -> int | None:
        if isinstance(self.obj_pos[o], tuple):
            return self.room_of(self.obj_pos[o])
        for b in self.bins:
            if b["contains"] == o:
                return self.room_of(b["pos"])
        return None

    def _sample_task(self):
        cands = []
        for o in self._objects_on_floor():
            cands.append(("find", "obj", o))
        for i, b in enumerate(self.bins):
            cands.append(("find", "bin", i))
        for o in range(len(OBJECTS)):
            if self._object_exists(o) and self.inventory != o:
                cands.append(("get", o))
        for o in range(len(OBJECTS)):
            if not self._object_exists(o):
                continue
            for i, b in enumerate(self.bins):
                broken_forever = b["state"] == BROKEN and not b["resettable"]
                if b["contains"] is None and not broken_forever:
                    cands.append(("put", o, i))
            for r in range(len(ROOMS)):
                if self._object_room(o) != r:
                    cands.append(("move", o, r))
        for i, b in enumerate(self.bins):
            if b["state"] == CLOSED:
                cands.append(("open", i))
        if self.task_filter:
            filtered = [c for c in cands if c[0] in self.task_filter]
            cands = filtered or cands
        if not cands:
            cands = [("find", "bin", 0)]
        return cands[int(self.rng.integers(len(cands)))]

    def _facing_cell(self):
        dr, dc = MOVE_DELTAS[self.orient]
        return (self.agent[0] + dr, self.agent[1] + dc)

    def _task_done(self) -> bool:
        kind = self.task[0]
        face = self._facing_cell()
        if kind == "find":
            _, what, idx = self.task
            if what == "obj":
                return self.obj_pos[idx] == face
            return self.bins[idx]["pos"] == face
        if kind == "get":
            return self.inventory == self.task[1]
        if kind == "put":
            return self.bins[self.task[2]]["contains"] == self.task[1]
        if kind == "move":
            return self._object_room(self.task[1]) == self.task[2]
        return self.bins[self.task[1]]["state"] == OPEN

    def _goal_cell(self):
        kind = self.task[0]
        if kind == "find":
            _, what, idx = self.task
            return self.obj_pos[idx] if what == "obj" else self.bins[idx]["pos"]
        if kind == "get":
            o = self.task[1]
            if isinstance(self.obj_pos[o], tuple):
                return self.obj_pos[o]
            for b in self.bins:
                if b["contains"] == o:
                    return b["pos"]
            return None
        if kind == "put":
            o = self.task[1]
            if self.inventory != o and isinstance(self.obj_pos[o], tuple):
                return self.obj_pos[o]
            return self.bins[self.task[2]]["pos"]
        if kind == "move":
            o = self.task[1]
            if self.inventory != o and isinstance(self.obj_pos[o], tuple):
                return self.obj_pos[o]
            lo, hi = ROOM_COLS[self.task[2]]
            return (HEIGHT // 2, (lo + hi) // 2)
        return self.bins[self.task[1]]["pos"]

    # ------------------------------------------------------------------
    # dynamics
    # ------------------------------------------------------------------
    def _apply_action(self, action: int, events: list) -> float:
        if action in MOVE_DELTAS:
            self.orient = action
            nr, nc = self._facing_cell()
            if self.in_bounds(nr, nc) and self._cell_is_floor((nr, nc)):
                self.agent = (nr, nc)
            return 0.0
        face = self._facing_cell()
        if action == 4:  # pickup
            for o, p in self.obj_pos.items():
                if p == face and self.inventory is None:
                    self.inventory = o
                    self.obj_pos[o] = "inventory"
                    break
            return 0.0
        if action == 5:  # drop
            if self.inventory is None:
                return 0.0
            b = self._bin_at(face)
            if b is not None:
                if b["state"] == OPEN and b["contains"] is None:
                    b["contains"] = self.inventory
                    self.obj_pos[self.inventory] = "bin"
                    self.inventory = None
            elif self.in_bounds(*face) and self._cell_is_floor(face):
                self.obj_pos[self.inventory] = face
                self.inventory = None
            return 0.0
        if action == 6:  # get from bin
            b = self._bin_at(face)
            if b is not None and b["contains"] is not None and self.inventory is None:
                self.inventory = b["contains"]
                self.obj_pos[self.inventory] = "inventory"
                b["contains"] = None
            return 0.0
        # pedal / grasp / lift
        b = self._bin_at(face)
        if b is not None and b["state"] == CLOSED:
            if action - 7 == b["correct"]:
                b["state"] = OPEN
            else:
                b["state"] = BROKEN
                b["broken_at"] = self.t
        return 0.0

    def _bin_at(self, pos):
        for b in self.bins:
            if b["pos"] == pos:
                return b
        return None

    def _cell_is_floor(self, pos) -> bool:
        if self._bin_at(pos) is not None:
            return False
        if pos in (p for p in self.obj_pos.values() if isinstance(p, tuple)):
            return False
        return True

    def _world_step(self, events: list) -> None:
        # broken resettable bins recover
        for b in self.bins:
            if b["state"] == BROKEN and b["resettable"] and \
                    self.t - b["broken_at"] >= BIN_RESET_STEPS:
                b["state"] = CLOSED
        # teleports
        for o in self._objects_on_floor():
            if self.rng.random() < TELEPORT_P:
                new = self._pick_free()
                if new is not None:
                    self.obj_pos[o] = new
                    events.append(self.tok.tokenize(
                        f"i moved the {OBJECTS[o]} to the {ROOMS[self.room_of(new)]}"))
        # spawn scheduling
        remaining = [o for o in range(len(OBJECTS))
                     if not self._object_exists(o)
                     and not any(s["obj"] == o for s in self.pending_spawns)]
        if remaining and self.rng.random() < SPAWN_P_PER_OBJ * len(remaining):
            o = remaining[int(self.rng.integers(len(remaining)))]
            pos = self._pick_free()
            if pos is not None:
                room = self.room_of(pos)
                self.pending_spawns.append(
                    {"obj": o, "pos": pos, "room": room, "due": self.t + SPAWN_DELAY})
                events.append(self.tok.tokenize(
                    f"there will be {OBJECTS[o]} in the {ROOMS[room]} later"))
        # materialize due spawns
        still = []
        for s in self.pending_spawns:
            if self.t < s["due"]:
                still.append(s)
                continue
            pos = s["pos"]
            if not self._cell_is_floor(pos) or pos == self.agent:
                pos = self._pick_free(room=s["room"])
            if pos is None:
                still.append(s)  # try again next step
                continue
            self.obj_pos[s["obj"]] = pos
        self.pending_spawns = still

    def _next_token(self, events: list, goal_dist_increased: bool) -> int:
        # the reset observation consumed token clock 0; this step emits t+1
        clock = self.t + 1
        if self.stream.streaming:
            return self.stream.pop(PAD)
        if clock - self.last_instruction >= INSTRUCTION_PERIOD:
            self._begin(self._instruction_tokens())
            self.last_instruction = clock
            return self.stream.pop(PAD)
        if self.hints == "futures" and events:
            self._begin(events[int(self.rng.integers(len(events)))])
            return self.stream.pop(PAD)
        if self.hints == "futures" and self.rng.random() < FACT_P:
            fact = self._state_fact()
            if fact:
                self._begin(fact)
                return self.stream.pop(PAD)
        if self.hints == "corrections" and goal_dist_increased and \
                self.rng.random() < CORRECTION_P:
            self._begin(self.tok.tokenize("no, turn around"))
            return self.stream.pop(PAD)
        return PAD

    def _begin(self, tokens: list[int], interrupt: bool = False) -> None:
        self.stream.begin(tokens, interrupt=interrupt)
        self._started_utterance = self.tok.detokenize(tokens)

    def _state_fact(self) -> list[int] | None:
        items = []
        for o in self._objects_on_floor():
            items.append(f"{OBJECTS[o]} is in the {ROOMS[self.room_of(self.obj_pos[o])]}")
        for b in self.bins:
            items.append(f"{self._bin_name(b)} is in the {ROOMS[self.room_of(b['pos'])]}")
        if not items:
            return None
        return self.tok.tokenize(items[int(self.rng.integers(len(items)))])

    # ------------------------------------------------------------------
    def step(self, action) -> EnvStep:
        action = int(np.asarray(action).reshape(-1)[0])
        if not 0 <= action < len(ACTIONS):
            raise DataError(f"action {action} out of range")
        events: list[list[int]] = []
        self._started_utterance = None
        frozen = self.t < self.freeze_until
        if not frozen:
            self._apply_action(action, events)
        self._world_step(events)

        goal = self._goal_cell()
        dist = None if goal is None else abs(goal[0] - self.agent[0]) + abs(goal[1] - self.agent[1])
        increased = (dist is not None and self.prev_goal_dist is not None
                     and dist > self.prev_goal_dist)

        reward = 0.0
        info: dict = {}
        if self._task_done():
            reward = 1.0
            self.score += 1
            self.task = self._sample_task()
            self._begin(self._instruction_tokens(), interrupt=True)
            self.last_instruction = self.t + 1
            dist = None
        self.prev_goal_dist = dist

        tok = self._next_token(events, increased)
        self.t += 1
        self.episode_return += reward
        cont = 0 if self.t >= self.episode_len else 1
        info["task"] = self._instruction_text()
        if self._started_utterance is not None:
            info["utterance"] = self._started_utterance
        if cont == 0:
            info["episode"] = {"score": self.score}
        return EnvStep(image=self._render(), token=tok, reward=reward,
                       cont=cont, is_first=0, info=info)

    # ------------------------------------------------------------------
    def _render(self) -> np.ndarray:
        obs = np.zeros(self.obs_shape, dtype=np.uint8)
        r0, c0 = self.agent[0] - VIEW // 2, self.agent[1] - VIEW // 2
        bins_at = {b["pos"]: b for b in self.bins}
        objs_at = {p: o for o, p in self.obj_pos.items() if isinstance(p, tuple)}
        for i in range(VIEW):
            for j in range(VIEW):
                r, c = r0 + i, c0 + j
                if not self.in_bounds(r, c):
                    obs[0, i, j] = 1
                    continue
                obs[1 + self.room_of((r, c)), i, j] = 1
                if (r, c) in objs_at:
                    obs[4 + objs_at[(r, c)], i, j] = 1
                if (r, c) in bins_at:
                    b = bins_at[(r, c)]
                    obs[8 + b["type"], i, j] = 1
                    obs[11 + b["state"], i, j] = 1
        if self.inventory is not None:
            obs[14 + self.inventory, :, :] = 1
        obs[18 + self.orient, :, :] = 1
        return obs

    def render_pixels(self, size: int = 64) -> np.ndarray:
        """Tiny tile renderer for the pixel observation path."""
        palette_obj = [(0.9, 0.2, 0.2), (0.9, 0.6, 0.1), (0.9, 0.9, 0.2), (0.6, 0.2, 0.8)]
        palette_bin = [(0.2, 0.4, 0.9), (0.15, 0.15, 0.15), (0.2, 0.8, 0.3)]
        room_tint = [(0.85, 0.8, 0.7), (0.7, 0.85, 0.7), (0.7, 0.75, 0.9)]
        obs = self._render()
        cell = size // VIEW
        img = np.zeros((3, size, size), dtype=np.float32)
        for i in range(VIEW):
            for j in range(VIEW):
                if obs[0, i, j]:
                    color = (0.3, 0.3, 0.3)
                else:
                    color = room_tint[int(np.argmax(obs[1:4, i, j]))]
                    if obs[4:8, i, j].any():
                        color = palette_obj[int(np.argmax(obs[4:8, i, j]))]
                    elif obs[8:11, i, j].any():
                        color = palette_bin[int(np.argmax(obs[8:11, i, j]))]
                        state = int(np.argmax(obs[11:14, i, j]))
                        color = tuple(c * (1.0 - 0.3 * state) for c in color)
                sl = np.s_[i * cell:(i + 1) * cell, j * cell:(j + 1) * cell]
                for ch in range(3):
                    img[ch][sl] = color[ch]
        return img

    def rng_state(self) -> dict:
        return self.rng.bit_generator.state

    def set_rng_state(self, state: dict) -> None:
        self.rng.bit_generator.state = state
