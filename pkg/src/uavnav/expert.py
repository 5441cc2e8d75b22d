"""A* expert, nearest-visible-point search and imitation dataset generation."""
from __future__ import annotations

import heapq
import json
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from . import gridworld as gw
from .gridworld import ACTION_DELTAS, Cell, GlobalMap


class NoPath(RuntimeError):
    pass


class NoCandidate(RuntimeError):
    pass


def _passable_codes(unknown_traversable: bool):
    return (gw.FREE, gw.TARGET, gw.UNKNOWN) if unknown_traversable else (gw.FREE, gw.TARGET)


def manhattan(a: Cell, b: Cell) -> int:
    return abs(a[0] - b[0]) + abs(a[1] - b[1])


def astar(grid, start: Cell, goal: Cell, unknown_traversable: bool = False) -> list[Cell]:
    """Shortest 4-connected path from ``start`` to ``goal`` (both inclusive).

    ``grid`` may hold ground-truth codes {0, 1} or observation codes
    {-1, 0, 1, 2}.  Heap order is (f, h, insertion order) and neighbours are
    pushed up, down, left, right, which makes the result deterministic.
    """
    grid = np.asarray(grid)
    H, W = grid.shape
    ok = np.isin(grid, _passable_codes(unknown_traversable))
    start, goal = tuple(start), tuple(goal)
    for name, rc in (("start", start), ("goal", goal)):
        if not (0 <= rc[0] < H and 0 <= rc[1] < W) or not ok[rc]:
            raise NoPath(f"{name} {rc} is not a passable cell")
    g = {start: 0}
    parent = {start: None}
    counter = 0
    heap = [(manhattan(start, goal), manhattan(start, goal), counter, start)]
    closed = set()
    while heap:
        _, _, _, cur = heapq.heappop(heap)
        if cur in closed:
            continue
        if cur == goal:
            path = []
            while cur is not None:
                path.append(cur)
                cur = parent[cur]
            return path[::-1]
        closed.add(cur)
        for dr, dc in ACTION_DELTAS:
            nxt = (cur[0] + dr, cur[1] + dc)
            if not (0 <= nxt[0] < H and 0 <= nxt[1] < W) or not ok[nxt] or nxt in closed:
                continue
            ng = g[cur] + 1
            if ng < g.get(nxt, 1 << 60):
                g[nxt] = ng
                parent[nxt] = cur
                h = manhattan(nxt, goal)
                counter += 1
                heapq.heappush(heap, (ng + h, h, counter, nxt))
    raise NoPath(f"no path from {start} to {goal}")


def path_actions(path: list[Cell]) -> list[int]:
    return [gw.action_between(a, b) for a, b in zip(path, path[1:])]


def search_min_dis_to_target(grid, current: Cell, target: Cell,
                             unknown_traversable: bool = False) -> Cell:
    """Visible cell reachable from ``current`` that is closest (Manhattan) to ``target``.

    ``target`` may lie outside ``grid``.  Ties go to the first cell in
    row-major order.
    """
    grid = np.asarray(grid)
    H, W = grid.shape
    ok = np.isin(grid, _passable_codes(unknown_traversable))
    current = tuple(current)
    if not (0 <= current[0] < H and 0 <= current[1] < W) or not ok[current]:
        raise NoCandidate(f"current cell {current} is not a visible passable cell")
    seen = np.zeros(grid.shape, dtype=bool)
    seen[current] = True
    queue = deque([current])
    while queue:
        r, c = queue.popleft()
        for dr, dc in ACTION_DELTAS:
            nr, nc = r + dr, c + dc
            if 0 <= nr < H and 0 <= nc < W and ok[nr, nc] and not seen[nr, nc]:
                seen[nr, nc] = True
                queue.append((nr, nc))
    rr, cc = np.nonzero(seen)  # row-major order
    d = np.abs(rr - target[0]) + np.abs(cc - target[1])
    k = int(np.argmin(d))
    return (int(rr[k]), int(cc[k]))


# ---------------------------------------------------------------------------
# imitation data
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ExpertSample:
    """One (observation, optimal action) pair.

    Mode I samples carry ``o_g`` with ``pos``/``target`` in map coordinates;
    mode II samples carry ``o_p`` with both expressed in the FOV frame.
    """
    obs: np.ndarray
    action: int
    scenario_id: str
    step_index: int
    mode: str
    pos: Cell
    target: Cell

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario_id,
            "step": self.step_index,
            "mode": self.mode,
            "obs": self.obs.astype(int).tolist(),
            "action": int(self.action),
            "pos": list(self.pos),
            "target": list(self.target),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExpertSample":
        return cls(np.asarray(d["obs"], dtype=np.int8), int(d["action"]), str(d["scenario"]),
                   int(d["step"]), d["mode"], tuple(d["pos"]), tuple(d["target"]))


def expert_rollout(gmap: GlobalMap, fov, scenario_id: str = "0") -> tuple[list[ExpertSample], int]:
    """Roll the full-map A* path forward, labelling each visited state.

    Returns the samples and the number of mode-II states skipped because
    the UGV stood outside the hovering UAV's FOV.
    """
    path = astar(gmap.cells, gmap.start, gmap.target)
    actions = path_actions(path)
    state = gw.reset(gmap, fov, step_cap=len(actions) + 1)
    samples, skipped = [], 0
    for k, a in enumerate(actions):
        obs = gw.mask(gmap, state.uav, fov)
        if state.mode == "I":
            samples.append(ExpertSample(obs.o_g, a, scenario_id, k, "I", state.ugv, gmap.target))
        elif obs.in_fov(state.ugv):
            samples.append(ExpertSample(obs.o_p, a, scenario_id, k, "II",
                                        obs.to_local(state.ugv), obs.to_local(gmap.target)))
        else:
            skipped += 1
        state = gw.step(state, gmap, a)
    if not state.success:  # pragma: no cover - A* path on a feasible map
        raise RuntimeError(f"expert replay failed on scenario {scenario_id}")
    return samples, skipped


def generate_dataset(suite: Iterable[GlobalMap], fov, scenario_ids=None) -> list[ExpertSample]:
    suite = list(suite)
    if scenario_ids is None:
        scenario_ids = [str(i) for i in range(len(suite))]
    out = []
    for sid, gmap in zip(scenario_ids, suite):
        try:
            samples, _ = expert_rollout(gmap, fov, sid)
        except NoPath as exc:
            raise RuntimeError(f"scenario {sid} is infeasible: {exc}") from exc
        out.extend(samples)
    return out


def write_jsonl(samples: Iterable[ExpertSample], path) -> None:
    with open(path, "w") as fh:
        for s in samples:
            fh.write(json.dumps(s.to_dict(), separators=(",", ":")))
            fh.write("\n")


def read_jsonl(path) -> list[ExpertSample]:
    lines = Path(path).read_text().splitlines()
    return [ExpertSample.from_dict(json.loads(line)) for line in lines if line.strip()]


def split_by_mode(samples: Iterable[ExpertSample]) -> tuple[list[ExpertSample], list[ExpertSample]]:
    mode1 = [s for s in samples if s.mode == "I"]
    mode2 = [s for s in samples if s.mode == "II"]
    return mode1, mode2
