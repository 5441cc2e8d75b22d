"""Command-line entry point: ``uavnav <subcommand> ...``.

Every run writes into ``<out>/<subcommand>-<stamp>/`` together with a
``manifest.json`` listing the inputs, arguments and produced files.  The
output root is ``--out``, else ``$UAVNAV_OUT``, else ``./runs``.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from pathlib import Path

from . import __version__
from ._accel import backend_name

log = logging.getLogger("uavnav")

OUT_ENV = "UAVNAV_OUT"

def read_kv(path) -> dict[str, str]:
    """Plain ``key=value`` lines; ``#`` starts a comment."""
    out = {}
    if path is None:
        return out
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise SystemExit(f"{path}:{lineno}: expected key=value")
        k, v = (s.strip() for s in line.split("=", 1))
        out[k] = v
    return out

def _floats(text: str, n: int) -> tuple:
    vals = tuple(float(v) for v in text.replace(",", " ").split())
    if len(vals) != n:
        raise SystemExit(f"expected {n} numbers, got {text!r}")
    return vals

def _mcgn_config(path, **overrides):
    from .mcgn import McgnConfig

    text = Path(path).read_text() if path else ""
    return McgnConfig.from_kv(text, **{k: v for k, v in overrides.items() if v is not None})

class Run:
    """Run-stamped output directory plus its manifest."""

    def __init__(self, command: str, args: argparse.Namespace):
        root = Path(args.out or os.environ.get(OUT_ENV) or "runs")
        name = args.run_name or f"{command}-{time.strftime('%Y%m%d-%H%M%S')}"
        path = root / name
        k = 1
        while path.exists() and not args.run_name:
            path = root / f"{name}-{k}"
            k += 1
        path.mkdir(parents=True, exist_ok=True)
        self.dir = path
        self.command = command
        self.args = {k: v for k, v in vars(args).items() if k != "func"}
        self.files: list[Path] = []

    def file(self, name: str) -> Path:
        p = self.dir / name
        self.files.append(p)
        return p

    def finish(self, extra: dict | None = None) -> Path:
        manifest = {
            "command": self.command,
            "arguments": {k: (str(v) if isinstance(v, Path) else v) for k, v in self.args.items()},
            "version": __version__,
            "backend": backend_name(),
            "files": {p.name: hashlib.sha1(p.read_bytes()).hexdigest() for p in self.files if p.exists()},
        }
        manifest.update(extra or {})
        mpath = self.dir / "manifest.json"
        mpath.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")
        print(self.dir)
        return mpath

# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def _task(args):
    from .harness import TASKS, TaskSpec

    if args.task not in TASKS:
        raise SystemExit(f"unknown task {args.task!r}; choose from {', '.join(TASKS)}")
    t = TASKS[args.task]
    if args.episodes:
        t = t.with_episodes(args.episodes)
    if getattr(args, "obstacles", None):
        t = TaskSpec(t.name, t.global_scale, t.observation_range, tuple(args.obstacles), t.episodes_per_count)
    return t

def cmd_gen_scenarios(args):
    from .harness import task_scenarios

    task = _task(args)
    run = Run("gen-scenarios", args)
    with run.file("scenarios.jsonl").open("w") as fh:
        for count, maps in task_scenarios(task, args.seed).items():
            for g in maps:
                fh.write(json.dumps({"task": task.name, "obstacles": count, "map": g.to_dict()}) + "\n")
    run.finish()

def _load_scenarios(path):
    from .gridworld import GlobalMap

    out = []
    for line in Path(path).read_text().splitlines():
        if line.strip():
            d = json.loads(line)
            out.append(GlobalMap.from_dict(d.get("map", d)))
    return out

def cmd_gen_dataset(args):
    from .expert import generate_dataset, write_jsonl
    from .fixtures import toy_dataset

    run = Run("gen-dataset", args)
    if args.scenarios:
        maps = _load_scenarios(args.scenarios)
        samples = generate_dataset(maps, tuple(args.fov))
        if args.limit:
            samples = samples[:args.limit]
    else:
        samples, _ = toy_dataset(args.limit or 500, tuple(args.fov))
    write_jsonl(samples, run.file("dataset.jsonl"))
    run.finish({"samples": len(samples)})

def cmd_train(args):
    from .expert import read_jsonl
    from .mcgn import train

    cfg = _mcgn_config(args.config, epochs=args.epochs)
    samples = read_jsonl(args.dataset)
    run = Run("train", args)
    params, reports = train(samples, cfg, args.seed)
    params.save(run.file("params.uvtc"))
    run.file("config.kv").write_text(cfg.to_kv())
    run.file("train_report.json").write_text(json.dumps(
        {m: {"loss": r.loss, "accuracy": r.accuracy, "wall_time_s": r.wall_time} for m, r in reports.items()},
        indent=2) + "\n")
    run.finish({"samples": len(samples)})

def _load_model(args):
    if not args.checkpoint:
        return None, None
    from .mcgn import McgnParams

    ckpt = Path(args.checkpoint)
    cfg_path = args.config or (ckpt.parent / "config.kv" if (ckpt.parent / "config.kv").exists() else None)
    cfg = _mcgn_config(cfg_path)
    return McgnParams.load(ckpt, cfg), cfg

def cmd_eval(args):
    from .harness import EvalReport, report_table, run_suite

    params, cfg = _load_model(args)
    methods = args.methods
    if params is None:
        methods = [m for m in methods if not m.startswith("mcgn")]
    run = Run("eval", args)
    rep = EvalReport(args.seed)
    for name in args.task:
        args_t = argparse.Namespace(task=name, episodes=args.episodes, obstacles=args.obstacles)
        run_suite(_task(args_t), methods, args.seed, params, cfg, report=rep)
    run.file("report.json").write_text(rep.to_json())
    run.file("table.txt").write_text(report_table(rep))
    sys.stdout.write(report_table(rep))
    run.finish()

def cmd_replay(args):
    from .harness import make_runner, render_trace

    maps = _load_scenarios(args.scenarios)
    gmap = maps[args.index]
    params, cfg = _load_model(args)
    outcome = make_runner(args.method, params, cfg)(gmap, tuple(args.fov))
    run = Run("replay", args)
    run.file("outcome.json").write_text(json.dumps(outcome.to_dict(), indent=2) + "\n")
    run.file("trace.svg")
    run.file("trace.pgm")
    render_trace(outcome, gmap, run.dir / "trace", tuple(args.fov))
    run.finish({"success": outcome.success, "reason": outcome.reason})

def cmd_transform(args):
    from . import frames

    conf = read_kv(args.config)
    cam = _floats(args.camera_origin or conf.get("camera_origin_w", "0 0 0"), 3)
    mo = _floats(args.map_origin or conf.get("map_origin_c", "0 0 0"), 3)
    size = float(args.cell_size or conf.get("cell_size_m", 1.0))
    if args.cell:
        p = frames.cell_to_world(tuple(args.cell), size, cam, mo)
        result = {"frame": "W", "xyz": list(p.xyz)}
    else:
        p = frames.FramePoint(args.src, tuple(args.point))
        if (args.src, args.dst) == ("W", "C"):
            q = frames.world_to_camera(p, cam)
        elif (args.src, args.dst) == ("C", "M"):
            q = frames.camera_to_map(p, mo)
        elif (args.src, args.dst) == ("W", "M"):
            q = frames.world_to_map(p, cam, mo)
        elif (args.src, args.dst) == ("M", "W"):
            q = frames.map_to_world(p, cam, mo)
        elif (args.src, args.dst) == ("M", "C"):
            q = frames.map_to_camera(p, mo)
        else:
            raise SystemExit(f"unsupported transform {args.src} -> {args.dst}")
        result = {"frame": q.frame, "xyz": list(q.xyz)}
        if q.frame == "M":
            result["cell"] = list(frames.point_to_cell(q, size))
    print(json.dumps(result))

def cmd_report(args):
    from .harness import EvalReport, report_table

    rep = EvalReport.from_dict(json.loads(Path(args.report).read_text()))
    sys.stdout.write(report_table(rep))

# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    from .harness import METHODS, TASKS

    ap = argparse.ArgumentParser(prog="uavnav", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, out=True):
        if out:
            p.add_argument("--out", type=Path, help=f"output root (default ${OUT_ENV} or ./runs)")
            p.add_argument("--run-name", help="fixed run directory name instead of a timestamp")
        return p

    p = common(sub.add_parser("gen-scenarios", help="write a seeded scenario suite"))
    p.add_argument("--task", default="Task1", choices=sorted(TASKS))
    p.add_argument("--episodes", type=int, help="episodes per obstacle count")
    p.add_argument("--obstacles", type=int, nargs="+")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gen_scenarios)

    p = common(sub.add_parser("gen-dataset", help="roll the A* expert into JSONL samples"))
    p.add_argument("--scenarios", type=Path, help="scenarios.jsonl (default: the built-in toy suite)")
    p.add_argument("--fov", type=int, nargs=2, default=(5, 5))
    p.add_argument("--limit", type=int)
    p.set_defaults(func=cmd_gen_dataset)

    p = common(sub.add_parser("train", help="imitation-train both networks"))
    p.add_argument("--dataset", type=Path, required=True)
    p.add_argument("--config", type=Path)
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = common(sub.add_parser("eval", help="run methods on paired scenario suites"))
    p.add_argument("--task", nargs="+", default=["Task1"], choices=sorted(TASKS))
    p.add_argument("--methods", nargs="+", default=["tb1", "tb2", "expert_astar"], choices=METHODS)
    p.add_argument("--episodes", type=int)
    p.add_argument("--obstacles", type=int, nargs="+")
    p.add_argument("--checkpoint", type=Path)
    p.add_argument("--config", type=Path)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_eval)

    p = common(sub.add_parser("replay", help="run one scenario and render its trace"))
    p.add_argument("--scenarios", type=Path, required=True)
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--method", default="tb1", choices=METHODS)
    p.add_argument("--fov", type=int, nargs=2, default=(11, 11))
    p.add_argument("--checkpoint", type=Path)
    p.add_argument("--config", type=Path)
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("transform", help="map a point between world, camera and map frames")
    p.add_argument("--from", dest="src", default="W", choices=("W", "C", "M"))
    p.add_argument("--to", dest="dst", default="M", choices=("W", "C", "M"))
    p.add_argument("--point", type=float, nargs=3, default=(0.0, 0.0, 0.0))
    p.add_argument("--cell", type=int, nargs=2, help="grid cell (row col) to place in the world frame")
    p.add_argument("--camera-origin")
    p.add_argument("--map-origin")
    p.add_argument("--cell-size", type=float)
    p.add_argument("--config", type=Path)
    p.set_defaults(func=cmd_transform)

    p = sub.add_parser("report", help="print the success table of a saved report")
    p.add_argument("report", type=Path)
    p.set_defaults(func=cmd_report)
    return ap

def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    args.func(args)
    return 0

if __name__ == "__main__":
    raise SystemExit(main())
