"""Scripted reference policies reading ground-truth environment state.

Used as test oracles and evaluation baselines: a question-answering oracle
that walks to the asked object and answers on exactly the scoring step, a
breadth-first-search expert for the household gridworld, and a uniform
random policy.
"""

from __future__ import annotations

from collections import deque

import numpy as np

from .homegridlite import (BROKEN, CLOSED, HEIGHT, MOVE_DELTAS, OPEN, WIDTH,
                           HomeGridLite)
from .langroom import GRID, MOVES, VIEW, LangRoom
from .vocab import PAD


class RandomPolicy:
    def __init__(self, action_dims, seed: int = 0):
        self.action_dims = action_dims
        self.rng = np.random.default_rng(seed)

    def __call__(self, env) -> np.ndarray:
        return np.array([self.rng.integers(n) for n in self.action_dims])


class LangRoomOracle:
    """Walks toward the asked object, answers on the scoring step, else silent."""

    def __call__(self, env: LangRoom) -> np.ndarray:
        token = PAD
        if env.answer_is_next():
            token = env.correct_color_token()
        move = self._move_toward(env)
        return np.array([move, token])

    @staticmethod
    def _move_toward(env: LangRoom) -> int:
        cr, cc = env.corners[env.q_object]
        # stand within view range of the corner (clamp target into the room)
        tr = min(max(cr, VIEW // 2), GRID - 1 - VIEW // 2)
        tc = min(max(cc, VIEW // 2), GRID - 1 - VIEW // 2)
        ar, ac = env.agent
        if abs(cr - ar) <= VIEW // 2 and abs(cc - ac) <= VIEW // 2:
            return 4  # already sees the object
        if ar != tr:
            return 0 if tr < ar else 1
        if ac != tc:
            return 2 if tc < ac else 3
        return 4


class HomeGridExpert:
    """Completes the current task via BFS; knows the correct bin actions."""

    def __call__(self, env: HomeGridLite) -> np.ndarray:
        kind = env.task[0]
        if kind == "find":
            _, what, idx = env.task
            target = env.obj_pos[idx] if what == "obj" else env.bins[idx]["pos"]
            if not isinstance(target, tuple):
                return np.array([0])  # object vanished; wait for resample/teleport
            act = self._face_or_approach(env, target)
            if act == -1:
                act = env.orient  # already facing: stepping into it is a no-op
            return np.array([act])
        if kind == "get":
            return np.array([self._acquire(env, env.task[1])])
        if kind == "put":
            return np.array([self._put(env, env.task[1], env.task[2])])
        if kind == "move":
            return np.array([self._move_to_room(env, env.task[1], env.task[2])])
        return np.array([self._open(env, env.task[1])])

    # ------------------------------------------------------------------
    def _acquire(self, env, obj) -> int:
        if env.inventory == obj:
            return 0
        if env.inventory is not None:
            return self._drop_anywhere(env)
        pos = env.obj_pos[obj]
        if isinstance(pos, tuple):
            act = self._face_or_approach(env, pos)
            if act == -1:
                return 4  # facing it: pick up
            return act
        for i, b in enumerate(env.bins):
            if b["contains"] == obj:
                act = self._face_or_approach(env, b["pos"])
                if act == -1:
                    return 6  # facing the bin: get
                return act
        return 0

    def _put(self, env, obj, bin_idx) -> int:
        if env.inventory != obj:
            return self._acquire(env, obj)
        b = env.bins[bin_idx]
        act = self._face_or_approach(env, b["pos"])
        if act != -1:
            return act
        if b["state"] == OPEN:
            return 5  # drop into bin
        if b["state"] == CLOSED:
            return 7 + b["correct"]
        return 0  # broken: wait for reset

    def _move_to_room(self, env, obj, room) -> int:
        if env.inventory != obj:
            return self._acquire(env, obj)
        if env.room_of(env.agent) == room:
            face = env._facing_cell()
            if env.in_bounds(*face) and env._cell_is_floor(face) and \
                    env.room_of(face) == room:
                return 5
            return self._turn_to_free_cell(env, room)
        target = self._nearest_room_cell(env, room)
        if target is None:
            return 0
        return self._step_along(env, target, enter=True)

    def _open(self, env, bin_idx) -> int:
        b = env.bins[bin_idx]
        act = self._face_or_approach(env, b["pos"])
        if act == -1:
            if b["state"] == CLOSED:
                return 7 + b["correct"]
            return 0  # open already or broken
        return act

    def _drop_anywhere(self, env) -> int:
        face = env._facing_cell()
        if env.in_bounds(*face) and env._cell_is_floor(face):
            return 5
        return self._turn_to_free_cell(env, None)

    def _turn_to_free_cell(self, env, room) -> int:
        for a, (dr, dc) in MOVE_DELTAS.items():
            cell = (env.agent[0] + dr, env.agent[1] + dc)
            if env.in_bounds(*cell) and env._cell_is_floor(cell) and \
                    (room is None or env.room_of(cell) == room):
                return a
        return 0

    def _nearest_room_cell(self, env, room):
        best, best_d = None, None
        for cell in env._free_cells(room):
            d = abs(cell[0] - env.agent[0]) + abs(cell[1] - env.agent[1])
            if best_d is None or d < best_d:
                best, best_d = cell, d
        return best

    # ------------------------------------------------------------------
    def _face_or_approach(self, env, target) -> int:
        """-1 when already facing the target; otherwise the next move."""
        ar, ac = env.agent
        for a, (dr, dc) in MOVE_DELTAS.items():
            if (ar + dr, ac + dc) == target and env.orient == a:
                return -1
        for a, (dr, dc) in MOVE_DELTAS.items():
            if (ar + dr, ac + dc) == target:
                return a  # adjacent: turn (move into it is blocked)
        return self._step_along(env, target, enter=False)

    def _step_along(self, env, target, enter: bool) -> int:
        """First move of a shortest path to `target` (or a cell adjacent to
        it when `enter` is False)."""
        goals = {target} if enter else {
            (target[0] + dr, target[1] + dc)
            for dr, dc in MOVE_DELTAS.values()
            if env.in_bounds(target[0] + dr, target[1] + dc)
            and env._cell_is_floor((target[0] + dr, target[1] + dc))
        }
        if env.agent in goals:
            return self._turn_toward(env, target)
        prev = {env.agent: None}
        queue = deque([env.agent])
        found = None
        while queue:
            cur = queue.popleft()
            if cur in goals:
                found = cur
                break
            for a, (dr, dc) in MOVE_DELTAS.items():
                nxt = (cur[0] + dr, cur[1] + dc)
                if nxt in prev or not env.in_bounds(*nxt):
                    continue
                if not env._cell_is_floor(nxt) and nxt != target:
                    continue
                prev[nxt] = (cur, a)
                queue.append(nxt)
        if found is None:
            return 0
        node = found
        last_action = 0
        while prev[node] is not None:
            node, action = prev[node]
            last_action = action
        return last_action

    @staticmethod
    def _turn_toward(env, target) -> int:
        ar, ac = env.agent
        for a, (dr, dc) in MOVE_DELTAS.items():
            if (ar + dr, ac + dc) == target:
                return a
        # not adjacent: move along the larger axis difference
        if abs(target[0] - ar) >= abs(target[1] - ac):
            return 0 if target[0] < ar else 1
        return 2 if target[1] < ac else 3
