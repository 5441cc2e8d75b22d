"""Hand-drawn maps and the small seeded suites used for quick training runs.

Maps are written as strings: ``.`` free, ``#`` obstacle, ``S`` start,
``T`` target.
"""
from __future__ import annotations

import numpy as np

from .gridworld import OBSTACLE, GlobalMap, generate_scenario

# A concave pocket sits between start and target.  The visible cell
# closest to the target lies inside it, so a planner that greedily heads
# for that cell keeps bouncing off the pocket's far wall.
TRAP_MAP = """
...........
...........
...........
...........
...........
...........
...........
.S###......
..###......
.....##T...
.....##....
"""
TRAP_FOV = (7, 7)

TOY_SHAPE = (9, 9)
TOY_FOV = (5, 5)
TOY_OBSTACLES = 3
TOY_TRAIN_SEED = 0
TOY_HELDOUT_SEED = 10_000


def parse_grid(text: str, seed: int | None = None) -> GlobalMap:
    rows = [r.strip() for r in text.strip().splitlines() if r.strip()]
    if len({len(r) for r in rows}) != 1:
        raise ValueError("ragged grid")
    cells = np.zeros((len(rows), len(rows[0])), dtype=np.int8)
    start = target = None
    for i, row in enumerate(rows):
        for j, ch in enumerate(row):
            if ch == "#":
                cells[i, j] = OBSTACLE
            elif ch == "T":
                target = (i, j)
            elif ch == "S":
                start = (i, j)
            elif ch != ".":
                raise ValueError(f"unexpected character {ch!r} at ({i}, {j})")
    if start is None or target is None:
        raise ValueError("grid needs one S and one T")
    return GlobalMap(cells, start, target, seed)


def format_grid(gmap: GlobalMap) -> str:
    rows = [["#" if v == OBSTACLE else "." for v in row] for row in gmap.cells]
    rows[gmap.start[0]][gmap.start[1]] = "S"
    rows[gmap.target[0]][gmap.target[1]] = "T"
    return "\n".join("".join(r) for r in rows)


def trap_map() -> GlobalMap:
    return parse_grid(TRAP_MAP)


def seeded_suite(count: int, shape=TOY_SHAPE, obstacles: int = TOY_OBSTACLES, seed0: int = 0) -> list[GlobalMap]:
    """``count`` feasible maps drawn with consecutive seeds starting at ``seed0``."""
    return [generate_scenario(shape[0], shape[1], obstacles, seed0 + i) for i in range(count)]


def toy_dataset(n_samples: int = 500, fov=TOY_FOV, seed0: int = TOY_TRAIN_SEED):
    """First ``n_samples`` expert samples from the toy training suite.

    Returns ``(samples, maps)``; ``maps`` holds every map that contributed.
    """
    from .expert import expert_rollout

    samples, maps = [], []
    seed = seed0
    while len(samples) < n_samples:
        g = generate_scenario(TOY_SHAPE[0], TOY_SHAPE[1], TOY_OBSTACLES, seed)
        got, _ = expert_rollout(g, fov, f"toy-{seed}")
        samples.extend(got)
        maps.append(g)
        seed += 1
    return samples[:n_samples], maps


def toy_config(**overrides):
    """Settings for the 9x9 / 5x5 quick-training suite.

    The architecture sizes match the defaults apart from a short unroll and
    a small controller; the agent-cell Q skip and weight decay keep the
    mode-I network from memorising the few hundred training states.
    """
    from .mcgn import McgnConfig

    kw = dict(vin_iterations=10, lstm_hidden=32, learning_rate=0.005, epochs=50,
              episodes_per_epoch=1000, batch_size=8, q_skip=True, weight_decay=1.0)
    kw.update(overrides)
    return McgnConfig(**kw)
