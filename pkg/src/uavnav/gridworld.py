"""Ground-truth maps, FOV masking and the discrete UAV/UGV dynamics.

Coordinates are ``(row, col)`` with the origin at the top-left cell.
Actions: 0=up (row-1), 1=down (row+1), 2=left (col-1), 3=right (col+1).
"""
from __future__ import annotations

import hashlib
import json
import time
from collections import deque
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

UNKNOWN = -1
FREE = 0
OBSTACLE = 1
TARGET = 2

UP, DOWN, LEFT, RIGHT = 0, 1, 2, 3
ACTION_DELTAS = ((-1, 0), (1, 0), (0, -1), (0, 1))
ACTION_NAMES = ("up", "down", "left", "right")

DEFAULT_STEP_CAP = 40

Cell = tuple[int, int]


class ScenarioError(RuntimeError):
    """Scenario generation could not satisfy its constraints."""


class EpisodeDone(RuntimeError):
    """``step`` was called on an episode that already terminated."""


def apply_action(pos: Cell, action: int) -> Cell:
    dr, dc = ACTION_DELTAS[action]
    return (pos[0] + dr, pos[1] + dc)


def action_between(a: Cell, b: Cell) -> int:
    """Action that moves from cell ``a`` to the 4-adjacent cell ``b``."""
    delta = (b[0] - a[0], b[1] - a[1])
    try:
        return ACTION_DELTAS.index(delta)
    except ValueError:
        raise ValueError(f"{a} and {b} are not 4-adjacent") from None


@dataclass(frozen=True, eq=False)
class GlobalMap:
    cells: np.ndarray
    start: Cell
    target: Cell
    seed: int | None = None

    def __post_init__(self):
        cells = np.array(self.cells, dtype=np.int8)
        if cells.ndim != 2:
            raise ValueError("cells must be a 2-D grid")
        if not np.isin(cells, (FREE, OBSTACLE)).all():
            raise ValueError("ground-truth cells must be 0 (free) or 1 (obstacle)")
        cells.setflags(write=False)
        object.__setattr__(self, "cells", cells)
        object.__setattr__(self, "start", (int(self.start[0]), int(self.start[1])))
        object.__setattr__(self, "target", (int(self.target[0]), int(self.target[1])))
        for name in ("start", "target"):
            rc = getattr(self, name)
            if not self.in_bounds(rc):
                raise ValueError(f"{name} {rc} outside the map")
            if cells[rc] != FREE:
                raise ValueError(f"{name} {rc} is on an obstacle")
        if self.start == self.target:
            raise ValueError("start and target coincide")

    @property
    def shape(self) -> tuple[int, int]:
        return self.cells.shape

    def in_bounds(self, rc: Cell) -> bool:
        return 0 <= rc[0] < self.cells.shape[0] and 0 <= rc[1] < self.cells.shape[1]

    def passable(self, rc: Cell) -> bool:
        return self.in_bounds(rc) and self.cells[rc] == FREE

    def digest(self) -> str:
        h = hashlib.sha1()
        h.update(np.ascontiguousarray(self.cells).tobytes())
        h.update(repr((self.shape, self.start, self.target)).encode())
        return h.hexdigest()[:16]

    def to_dict(self) -> dict:
        M, N = self.shape
        return {
            "M": M,
            "N": N,
            "cells": self.cells.astype(int).ravel().tolist(),
            "start": list(self.start),
            "target": list(self.target),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GlobalMap":
        cells = np.asarray(d["cells"], dtype=np.int8).reshape(d["M"], d["N"])
        return cls(cells, tuple(d["start"]), tuple(d["target"]), d.get("seed"))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "GlobalMap":
        return cls.from_dict(json.loads(text))


def bfs_distances(grid: np.ndarray, source: Cell, passable=(FREE, TARGET)) -> np.ndarray:
    """Unit-cost 4-connected distances from ``source``; -1 where unreachable."""
    grid = np.asarray(grid)
    ok = np.isin(grid, passable)
    dist = np.full(grid.shape, -1, dtype=np.int64)
    if not ok[source]:
        return dist
    dist[source] = 0
    queue = deque([source])
    H, W = grid.shape
    while queue:
        r, c = queue.popleft()
        for dr, dc in ACTION_DELTAS:
            nr, nc = r + dr, c + dc
            if 0 <= nr < H and 0 <= nc < W and ok[nr, nc] and dist[nr, nc] < 0:
                dist[nr, nc] = dist[r, c] + 1
                queue.append((nr, nc))
    return dist


def is_feasible(gmap: GlobalMap) -> bool:
    return bfs_distances(gmap.cells, gmap.start)[gmap.target] >= 0


def generate_scenario(M: int, N: int, obstacle_count: int, rng_seed: int,
                      max_attempts: int = 1000, max_block: int = 3) -> GlobalMap:
    """Random feasible map with ``obstacle_count`` rectangular blocks.

    Block sides are uniform in ``1..max_block``; start and target are drawn
    uniformly from the remaining free cells.  Infeasible draws are rejected.
    """
    if M < 5 or N < 5:
        raise ValueError("maps must be at least 5x5")
    if obstacle_count < 0:
        raise ValueError("obstacle_count must be non-negative")
    rng = np.random.default_rng(rng_seed)
    for _ in range(max_attempts):
        cells = np.zeros((M, N), dtype=np.int8)
        for _ in range(obstacle_count):
            h = int(rng.integers(1, max_block + 1))
            w = int(rng.integers(1, max_block + 1))
            r = int(rng.integers(0, M - h + 1))
            c = int(rng.integers(0, N - w + 1))
            cells[r:r + h, c:c + w] = OBSTACLE
        free = np.flatnonzero(cells.ravel() == FREE)
        if free.size < 2:
            continue
        i, j = rng.choice(free.size, size=2, replace=False)
        start = divmod(int(free[i]), N)
        target = divmod(int(free[j]), N)
        if bfs_distances(cells, start)[target] < 0:
            continue
        return GlobalMap(cells, start, target, seed=rng_seed)
    raise ScenarioError(
        f"no feasible {M}x{N} map with {obstacle_count} obstacles after {max_attempts} attempts")


# ---------------------------------------------------------------------------
# observation model
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class MaskedObservation:
    o_g: np.ndarray
    o_p: np.ndarray
    fov_origin: Cell

    @property
    def fov(self) -> tuple[int, int]:
        return self.o_p.shape

    def in_fov(self, rc: Cell) -> bool:
        r, c = rc[0] - self.fov_origin[0], rc[1] - self.fov_origin[1]
        return 0 <= r < self.o_p.shape[0] and 0 <= c < self.o_p.shape[1]

    def to_local(self, rc: Cell) -> Cell:
        return (rc[0] - self.fov_origin[0], rc[1] - self.fov_origin[1])

    def to_global(self, rc: Cell) -> Cell:
        return (rc[0] + self.fov_origin[0], rc[1] + self.fov_origin[1])

    def target_visible(self) -> bool:
        return bool((self.o_p == TARGET).any())


def _check_fov(fov):
    m, n = fov
    if m < 1 or n < 1 or m % 2 == 0 or n % 2 == 0:
        raise ValueError(f"FOV sides must be odd and positive, got {fov}")


def mask(gmap: GlobalMap, uav: Cell, fov: tuple[int, int]) -> MaskedObservation:
    """Observation of a camera centred on ``uav`` with an ``m x n`` footprint."""
    _check_fov(fov)
    if not gmap.in_bounds(uav):
        raise ValueError(f"UAV {uav} outside the map")
    m, n = fov
    M, N = gmap.shape
    r0, c0 = uav[0] - m // 2, uav[1] - n // 2
    rs, re = max(r0, 0), min(r0 + m, M)
    cs, ce = max(c0, 0), min(c0 + n, N)
    o_g = np.full((M, N), UNKNOWN, dtype=np.int8)
    o_g[rs:re, cs:ce] = gmap.cells[rs:re, cs:ce]
    tr, tc = gmap.target
    if rs <= tr < re and cs <= tc < ce:
        o_g[tr, tc] = TARGET
    o_p = np.full((m, n), UNKNOWN, dtype=np.int8)
    o_p[rs - r0:re - r0, cs - c0:ce - c0] = o_g[rs:re, cs:ce]
    o_g.setflags(write=False)
    o_p.setflags(write=False)
    return MaskedObservation(o_g, o_p, (r0, c0))


def target_in_fov(gmap: GlobalMap, uav: Cell, fov: tuple[int, int]) -> bool:
    m, n = fov
    return abs(gmap.target[0] - uav[0]) <= m // 2 and abs(gmap.target[1] - uav[1]) <= n // 2


# ---------------------------------------------------------------------------
# dynamics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EpisodeState:
    ugv: Cell
    uav: Cell
    fov: tuple[int, int]
    step: int = 0
    collisions: int = 0
    mode: str = "I"
    done: bool = False
    success: bool = False
    tau: int | None = None
    step_cap: int = DEFAULT_STEP_CAP
    allow_switch: bool = True
    modes: tuple[str, ...] = field(default=())


def reset(gmap: GlobalMap, fov: tuple[int, int], step_cap: int = DEFAULT_STEP_CAP,
          allow_switch: bool = True) -> EpisodeState:
    _check_fov(fov)
    state = EpisodeState(ugv=gmap.start, uav=gmap.start, fov=tuple(fov),
                         step_cap=step_cap, allow_switch=allow_switch)
    if allow_switch and target_in_fov(gmap, gmap.start, fov):
        state = replace(state, mode="II", tau=0)
    return state


def step(state: EpisodeState, gmap: GlobalMap, action: int) -> EpisodeState:
    """Advance one time step.  Blocked moves keep the position and count a collision."""
    if state.done:
        raise EpisodeDone("episode already terminated")
    if action not in (UP, DOWN, LEFT, RIGHT):
        raise ValueError(f"invalid action {action!r}")
    nxt = apply_action(state.ugv, action)
    collisions = state.collisions
    if gmap.passable(nxt):
        ugv = nxt
    else:
        ugv = state.ugv
        collisions += 1
    uav = ugv if state.mode == "I" else state.uav
    t = state.step + 1
    mode, tau = state.mode, state.tau
    if mode == "I" and state.allow_switch and target_in_fov(gmap, uav, state.fov):
        mode, tau = "II", t
    success = ugv == gmap.target
    return replace(state, ugv=ugv, uav=uav, step=t, collisions=collisions, mode=mode, tau=tau,
                   success=success, done=success or t >= state.step_cap,
                   modes=state.modes + (state.mode,))


# ---------------------------------------------------------------------------
# label images -> grid maps
# ---------------------------------------------------------------------------


def reduce_labels(label_image: np.ndarray, grid: tuple[int, int]) -> np.ndarray:
    """Majority label per tile; ties go to obstacle."""
    img = np.asarray(label_image)
    if img.ndim != 2:
        raise ValueError("label image must be 2-D")
    if not np.isin(img, (0, 1)).all():
        raise ValueError("label image must be binary (0 passable, 1 obstacle)")
    m, n = grid
    H, W = img.shape
    if H < m or W < n:
        raise ValueError(f"image {H}x{W} smaller than grid {m}x{n}")
    r_edges = (np.arange(m + 1) * H) // m
    c_edges = (np.arange(n + 1) * W) // n
    ones = np.add.reduceat(np.add.reduceat(img.astype(np.int64), r_edges[:-1], axis=0),
                           c_edges[:-1], axis=1)
    sizes = np.outer(np.diff(r_edges), np.diff(c_edges))
    return (2 * ones >= sizes).astype(np.int8)


def _pgm_tokens(data: bytes):
    # header tokens, skipping comments; yields (token, end_offset)
    i = 0
    while i < len(data):
        ch = data[i:i + 1]
        if ch == b"#":
            while i < len(data) and data[i:i + 1] not in (b"\n", b"\r"):
                i += 1
        elif ch.isspace():
            i += 1
        else:
            j = i
            while j < len(data) and not data[j:j + 1].isspace() and data[j:j + 1] != b"#":
                j += 1
            yield data[i:j], j
            i = j


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    toks = _pgm_tokens(data)
    magic, _ = next(toks)
    if magic not in (b"P2", b"P5"):
        raise ValueError(f"{path}: not a P2/P5 PGM file")
    width, _ = next(toks)
    height, _ = next(toks)
    maxval, end = next(toks)
    w, h, maxv = int(width), int(height), int(maxval)
    if magic == b"P5":
        dtype = np.uint8 if maxv < 256 else np.dtype(">u2")
        raw = np.frombuffer(data[end + 1:], dtype=dtype, count=w * h)
        return raw.reshape(h, w).astype(np.int64)
    values = [int(t) for t, _ in toks]
    if len(values) < w * h:
        raise ValueError(f"{path}: truncated P2 data")
    return np.asarray(values[:w * h], dtype=np.int64).reshape(h, w)


def write_pgm(path, image: np.ndarray, maxval: int = 255) -> None:
    img = np.asarray(image)
    h, w = img.shape
    header = f"P5\n{w} {h}\n{maxval}\n".encode()
    Path(path).write_bytes(header + img.astype(np.uint8).tobytes())


def load_label_image(path) -> np.ndarray:
    """Read a PGM label image; values must be {0, maxval-or-1}."""
    img = read_pgm(path)
    vals = np.unique(img)
    if set(vals.tolist()) <= {0, 1}:
        return img
    hi = int(vals.max())
    if set(vals.tolist()) <= {0, hi}:
        return (img == hi).astype(np.int64)
    raise ValueError(f"{path}: label image is not binary (values {vals[:8].tolist()}...)")


# ---------------------------------------------------------------------------
# episode outcome (shared by planners and the harness)
# ---------------------------------------------------------------------------


@dataclass
class EpisodeOutcome:
    success: bool
    steps: int
    collisions: int
    trajectory: list
    actions: list = field(default_factory=list)
    modes: list = field(default_factory=list)
    tau: int | None = None
    reason: str = ""
    oscillation: bool = False

    def to_dict(self) -> dict:
        return {
            "success": bool(self.success),
            "steps": int(self.steps),
            "collisions": int(self.collisions),
            "trajectory": [list(map(int, rc)) for rc in self.trajectory],
            "actions": [int(a) for a in self.actions],
            "modes": list(self.modes),
            "tau": self.tau,
            "reason": self.reason,
            "oscillation": bool(self.oscillation),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EpisodeOutcome":
        return cls(d["success"], d["steps"], d["collisions"], [tuple(rc) for rc in d["trajectory"]],
                   list(d.get("actions", [])), list(d.get("modes", [])), d.get("tau"),
                   d.get("reason", ""), d.get("oscillation", False))


def detect_oscillation(actions, min_cycles: int = 2) -> bool:
    """True if the action tail alternates left/right for ``min_cycles`` full cycles."""
    need = 2 * min_cycles
    tail = list(actions)[-need:]
    if len(tail) < need or any(a not in (LEFT, RIGHT) for a in tail):
        return False
    return all(a != b for a, b in zip(tail, tail[1:]))


class EpisodeRecorder:
    """Thin wrapper that steps an episode and keeps its trajectory.

    If ``decision_times`` is a list, the wall time from each ``observe()``
    to the next ``act()`` is appended to it.
    """

    def __init__(self, gmap: GlobalMap, fov, step_cap: int = DEFAULT_STEP_CAP,
                 allow_switch: bool = True, decision_times: list | None = None):
        self.gmap = gmap
        self.state = reset(gmap, fov, step_cap, allow_switch)
        self.trajectory = [gmap.start]
        self.actions: list[int] = []
        self.decision_times = decision_times
        self._t_obs = None

    @property
    def done(self) -> bool:
        return self.state.done

    def observe(self) -> MaskedObservation:
        if self.decision_times is not None:
            self._t_obs = time.perf_counter()
        return mask(self.gmap, self.state.uav, self.state.fov)

    def act(self, action: int) -> EpisodeState:
        if self._t_obs is not None:
            self.decision_times.append(time.perf_counter() - self._t_obs)
            self._t_obs = None
        self.state = step(self.state, self.gmap, action)
        self.trajectory.append(self.state.ugv)
        self.actions.append(int(action))
        return self.state

    def outcome(self, reason: str | None = None) -> EpisodeOutcome:
        s = self.state
        if reason is None:
            reason = "reached" if s.success else ("step_cap" if s.done else "stopped")
        return EpisodeOutcome(s.success, s.step, s.collisions, list(self.trajectory),
                              list(self.actions), list(s.modes), s.tau, reason,
                              detect_oscillation(self.actions))
