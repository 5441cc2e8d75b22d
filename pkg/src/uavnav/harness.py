"""Evaluation suites, aggregate reports, trace rendering and latency probes."""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .baselines import DeadEnd, run_expert, run_tb1, run_tb2
from .gridworld import OBSTACLE, EpisodeOutcome, GlobalMap, ScenarioError, generate_scenario, write_pgm
from .mcgn import run_episode

METHODS = ("mcgn", "mcgn_memory_always", "tb1", "tb2", "expert_astar")
METHOD_LABELS = {
    "mcgn": "MCGN",
    "mcgn_memory_always": "memory-always (MACN-approx)",
    "tb1": "TB1",
    "tb2": "TB2",
    "expert_astar": "Expert A*",
}


@dataclass(frozen=True)
class TaskSpec:
    name: str
    global_scale: tuple
    observation_range: tuple
    obstacle_counts: tuple = (2, 3, 4, 5)
    episodes_per_count: int = 20

    def __post_init__(self):
        (M, N), (m, n) = self.global_scale, self.observation_range
        if not (0 < m <= M and 0 < n <= N):
            raise ValueError(f"{self.name}: observation range {m}x{n} must fit inside {M}x{N}")
        if self.episodes_per_count <= 0 or not self.obstacle_counts:
            raise ValueError(f"{self.name}: empty suite")

    @property
    def observation_ratio(self) -> float:
        return self.observation_range[0] / self.global_scale[0]

    def with_episodes(self, n: int) -> "TaskSpec":
        return TaskSpec(self.name, self.global_scale, self.observation_range, self.obstacle_counts, n)


TASKS = {
    "Task1": TaskSpec("Task1", (17, 17), (11, 11)),
    "Task2": TaskSpec("Task2", (17, 17), (9, 9)),
    "Task3": TaskSpec("Task3", (15, 15), (9, 9)),
}


def scenario_seed(seed: int, obstacle_count: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, obstacle_count, index]).generate_state(1)[0])


def task_scenarios(task: TaskSpec, seed: int) -> dict[int, list[GlobalMap]]:
    """The paired scenario grid: every method is evaluated on these maps."""
    M, N = task.global_scale
    out = {}
    for count in task.obstacle_counts:
        maps = []
        for i in range(task.episodes_per_count):
            try:
                maps.append(generate_scenario(M, N, count, scenario_seed(seed, count, i)))
            except ScenarioError as exc:
                raise ScenarioError(f"{task.name}, {count} obstacles, episode {i}: {exc}") from exc
        out[count] = maps
    return out


def make_runner(method: str, params=None, cfg=None):
    """``(gmap, fov, decision_times) -> EpisodeOutcome`` for a method name."""
    if method in ("tb1", "tb2", "expert_astar"):
        fn = {"tb1": run_tb1, "tb2": run_tb2, "expert_astar": run_expert}[method]
        step_cap = cfg.step_cap if cfg is not None else 40

        def run(gmap, fov, times=None):
            try:
                return fn(gmap, fov, step_cap, decision_times=times)
            except DeadEnd as exc:
                return exc.outcome
        return run
    if method in ("mcgn", "mcgn_memory_always"):
        if params is None:
            raise ValueError(f"method {method!r} needs trained parameters")
        c = replace(cfg or params.cfg, ablation_memory_always=(method == "mcgn_memory_always"))
        return lambda gmap, fov, times=None: run_episode(gmap, fov, params, c, decision_times=times)
    raise ValueError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")


@dataclass
class CellStats:
    # integer sums keep the means independent of episode order
    successes: int = 0
    total: int = 0
    steps_sum: int = 0
    collisions_sum: int = 0

    def add(self, o: EpisodeOutcome) -> None:
        self.successes += int(o.success)
        self.total += 1
        self.steps_sum += int(o.steps)
        self.collisions_sum += int(o.collisions)

    def to_dict(self) -> dict:
        return {
            "successes": self.successes,
            "total": self.total,
            "steps_sum": self.steps_sum,
            "collisions_sum": self.collisions_sum,
            "mean_steps": round(self.steps_sum / self.total, 6) if self.total else None,
            "mean_collisions": round(self.collisions_sum / self.total, 6) if self.total else None,
        }


@dataclass
class EvalReport:
    seed: int
    tasks: dict = field(default_factory=dict)      # name -> {"global_scale", "observation_range", "ratio"}
    cells: dict = field(default_factory=dict)      # (task, method, count) -> CellStats
    scenario_hashes: dict = field(default_factory=dict)  # (task, count) -> [digest, ...]
    methods: list = field(default_factory=list)
    outcomes: dict = field(default_factory=dict)   # (task, method, count) -> [EpisodeOutcome]

    def success(self, task: str, method: str, count: int) -> tuple[int, int]:
        c = self.cells[(task, method, count)]
        return c.successes, c.total

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "methods": list(self.methods),
            "tasks": self.tasks,
            "results": [
                {"task": t, "method": m, "obstacles": n, **self.cells[(t, m, n)].to_dict()}
                for (t, m, n) in sorted(self.cells)
            ],
            "scenarios": [
                {"task": t, "obstacles": n, "hashes": h} for (t, n), h in sorted(self.scenario_hashes.items())
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        rep = cls(d["seed"], dict(d["tasks"]), methods=list(d["methods"]))
        for r in d["results"]:
            rep.cells[(r["task"], r["method"], r["obstacles"])] = CellStats(
                r["successes"], r["total"], r["steps_sum"], r["collisions_sum"])
        for s in d["scenarios"]:
            rep.scenario_hashes[(s["task"], s["obstacles"])] = list(s["hashes"])
        return rep


def run_suite(task: TaskSpec, methods, seed: int, params=None, cfg=None, report: EvalReport | None = None,
              keep_outcomes: bool = False) -> EvalReport:
    """Run each method on the same seeded scenarios and aggregate per obstacle count."""
    report = report or EvalReport(seed)
    report.tasks[task.name] = {
        "global_scale": list(task.global_scale),
        "observation_range": list(task.observation_range),
        "observation_ratio": round(task.observation_ratio, 6),
    }
    runners = {m: make_runner(m, params, cfg) for m in methods}
    for m in methods:
        if m not in report.methods:
            report.methods.append(m)
    for count, maps in task_scenarios(task, seed).items():
        report.scenario_hashes[(task.name, count)] = [g.digest() for g in maps]
        for m, run in runners.items():
            stats = CellStats()
            outs = []
            for g in maps:
                o = run(g, task.observation_range)
                stats.add(o)
                outs.append(o)
            report.cells[(task.name, m, count)] = stats
            if keep_outcomes:
                report.outcomes[(task.name, m, count)] = outs
    return report


def report_table(report: EvalReport) -> str:
    """Successes/total per task and obstacle count, one row per method, plus observation ratios."""
    tasks = list(report.tasks)
    counts = {t: sorted({n for (tt, _, n) in report.cells if tt == t}) for t in tasks}
    head = ["Method"] + [f"{t}/Obs_{n}" for t in tasks for n in counts[t]]
    rows = [head]
    for m in report.methods:
        row = [METHOD_LABELS.get(m, m)]
        for t in tasks:
            for n in counts[t]:
                c = report.cells.get((t, m, n))
                row.append(f"{c.successes}/{c.total}" if c else "-")
        rows.append(row)
    widths = [max(len(r[i]) for r in rows) for i in range(len(head))]
    lines = ["  ".join(v.ljust(w) for v, w in zip(r, widths)).rstrip() for r in rows]
    if tasks:
        lines.append("")
        lines.append("Observation ratio: " + ", ".join(
            f"{t} {report.tasks[t]['observation_ratio']:.2f}" for t in tasks))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# traces
# ---------------------------------------------------------------------------


def _star(cx: float, cy: float, r: float) -> str:
    pts = []
    for k in range(10):
        rad = r if k % 2 == 0 else r * 0.45
        ang = -np.pi / 2 + k * np.pi / 5
        pts.append(f"{cx + rad * np.cos(ang):.2f},{cy + rad * np.sin(ang):.2f}")
    return " ".join(pts)


def render_svg(outcome: EpisodeOutcome, gmap: GlobalMap, fov=None, cell: int = 20) -> str:
    if not outcome.trajectory:
        raise ValueError("cannot render an empty trajectory")
    M, N = gmap.shape
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{N * cell}" height="{M * cell}" '
           f'viewBox="0 0 {N * cell} {M * cell}">',
           f'<rect class="background" x="0" y="0" width="{N * cell}" height="{M * cell}" fill="#ffffff"/>']
    if fov is not None:
        m, n = fov
        r0, c0 = gmap.start[0] - m // 2, gmap.start[1] - n // 2
        r1, c1 = max(r0, 0), max(c0, 0)
        r2, c2 = min(r0 + m, M), min(c0 + n, N)
        out.append(f'<rect class="fov" x="{c1 * cell}" y="{r1 * cell}" width="{(c2 - c1) * cell}" '
                   f'height="{(r2 - r1) * cell}" fill="#9ecae1" fill-opacity="0.35"/>')
    for r, c in zip(*np.nonzero(gmap.cells == OBSTACLE)):
        out.append(f'<rect class="obstacle" x="{c * cell}" y="{r * cell}" width="{cell}" height="{cell}" '
                   f'fill="#333333"/>')
    h = cell / 2
    pts = [(c * cell + h, r * cell + h) for r, c in outcome.trajectory]
    d = f"M {pts[0][0]:g} {pts[0][1]:g}" + "".join(f" L {x:g} {y:g}" for x, y in pts[1:])
    out.append(f'<path class="trajectory" d="{d}" fill="none" stroke="#d62728" stroke-width="{cell / 6:g}"/>')
    for name, (r, c), color in (("start", gmap.start, "#2ca02c"), ("target", gmap.target, "#ff7f0e")):
        out.append(f'<polygon class="{name}" points="{_star(c * cell + h, r * cell + h, cell * 0.45)}" '
                   f'fill="{color}"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def render_raster(outcome: EpisodeOutcome, gmap: GlobalMap, fov=None, cell: int = 8) -> np.ndarray:
    """Grey-level raster: free 255, initial footprint 200, path 120, start/target 60, obstacles 0."""
    M, N = gmap.shape
    img = np.full((M, N), 255, dtype=np.uint8)
    if fov is not None:
        m, n = fov
        r0, c0 = gmap.start[0] - m // 2, gmap.start[1] - n // 2
        img[max(r0, 0):max(r0 + m, 0), max(c0, 0):max(c0 + n, 0)] = 200
    img[gmap.cells == OBSTACLE] = 0
    for r, c in outcome.trajectory:
        img[r, c] = 120
    img[gmap.start] = 60
    img[gmap.target] = 60
    return np.kron(img, np.ones((cell, cell), dtype=np.uint8))


def render_trace(outcome: EpisodeOutcome, gmap: GlobalMap, out_stem, fov=None) -> tuple[Path, Path]:
    """Write ``<stem>.svg`` and ``<stem>.pgm``; returns both paths."""
    stem = Path(out_stem)
    svg, pgm = stem.with_suffix(".svg"), stem.with_suffix(".pgm")
    try:
        svg.write_text(render_svg(outcome, gmap, fov))
        write_pgm(pgm, render_raster(outcome, gmap, fov))
    except OSError as exc:
        raise OSError(f"cannot write trace under {stem}: {exc}") from exc
    return svg, pgm


# ---------------------------------------------------------------------------
# latency
# ---------------------------------------------------------------------------


@dataclass
class LatencyStats:
    count: int
    mean: float
    median: float
    p95: float

    def to_dict(self) -> dict:
        return {"count": self.count, "mean_s": self.mean, "median_s": self.median, "p95_s": self.p95}


def latency_stats(times) -> LatencyStats:
    t = np.asarray(times, dtype=np.float64)
    if t.size == 0:
        return LatencyStats(0, float("nan"), float("nan"), float("nan"))
    return LatencyStats(int(t.size), float(t.mean()), float(np.median(t)), float(np.percentile(t, 95)))


def timing_probe(method: str, suite, fov, params=None, cfg=None, warmup: int = 1) -> LatencyStats:
    """Wall time per planning decision over every episode in ``suite``.

    The first ``warmup`` episodes are run untimed so JIT compilation does
    not pollute the numbers.
    """
    run = make_runner(method, params, cfg)
    suite = list(suite)
    for g in suite[:warmup]:
        run(g, fov)
    times: list[float] = []
    for g in suite:
        run(g, fov, times)
    return latency_stats(times)
