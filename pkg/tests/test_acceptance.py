"""End-to-end acceptance checks, one test per criterion.

Each test prints a PASS/FAIL line (also collected in the terminal summary)
before asserting, so a failing run still reports every measured value.
"""
import json
import re
import time
from dataclasses import replace

import numpy as np
import pytest
import sympy as sp

from oracles import bellman_fixed_point, bfs_length, central_diff, rel_err
from uavnav import frames, mcgn
from uavnav.baselines import run_tb1, run_tb2
from uavnav.cli import main as cli_main
from uavnav.controller import ControllerParams, ControllerState, controller_backward, controller_step
from uavnav.expert import astar, read_jsonl
from uavnav.fixtures import (TOY_FOV, TOY_HELDOUT_SEED, TOY_OBSTACLES, TOY_SHAPE, TRAP_FOV, seeded_suite,
                             toy_config, toy_dataset, trap_map)
from uavnav.gridworld import DEFAULT_STEP_CAP, LEFT, RIGHT, detect_oscillation, generate_scenario
from uavnav.harness import TASKS, run_suite, timing_probe
from uavnav.memory import MemoryState, _slices, interface_size, memory_step, memory_step_backward, parse_interface
from uavnav.vi_core import PARAM_NAMES, TabularMdp, VinParams, grid_mdp, value_iteration_exact, vin_backward, vin_forward

pytestmark = pytest.mark.acceptance


# --- 1 -----------------------------------------------------------------------


def test_exact_value_iteration_matches_bellman_oracle(verdict):
    rng = np.random.default_rng(1)
    worst, elapsed = 0.0, 0.0
    for _ in range(50):
        cells = (rng.random((8, 8)) < 0.2).astype(int)
        target = tuple(rng.integers(0, 8, 2))
        cells[target] = 0
        mdp = grid_mdp(cells, rng.normal(size=64), float(rng.uniform(0.5, 0.95)), terminal_cells=[target],
                       blocked_reward=-1.0)
        mdp = TabularMdp(mdp.next_state, mdp.reward + rng.normal(0, 0.1, mdp.reward.shape), mdp.gamma,
                         mdp.terminal)
        t0 = time.perf_counter()
        V = value_iteration_exact(mdp)
        elapsed += time.perf_counter() - t0
        want = bellman_fixed_point(mdp.next_state.tolist(), mdp.reward.tolist(), mdp.gamma, mdp.terminal.tolist())
        worst = max(worst, float(np.abs(V - want).max()))
    ok = worst < 1e-9 and elapsed < 5.0
    assert verdict(1, "exact VI vs Bellman oracle, 50 random 8x8 MDPs", ok,
                   f"max error {worst:.2e} (< 1e-9), solver time {elapsed:.3f} s (< 5 s)")


# --- 2 -----------------------------------------------------------------------


def _vin_worst(rng):
    # full-width hidden layer; resample until no ReLU input or Q channel max sits near a kink
    while True:
        p = VinParams.init(rng, hidden=150, k=10, scale=0.3)
        p.conv1_bias[:] = rng.normal(0, 0.1, 150)
        x = np.stack([rng.integers(-1, 3, (7, 7)).astype(float), rng.normal(size=(7, 7))], -1)
        m = vin_forward(x, p)
        gaps = [np.diff(np.sort(vin_forward(x, VinParams(**p.tensors(), k=j)).q, -1)[..., -2:], axis=-1).min()
                for j in range(1, p.k + 1)]
        if np.abs(m.cache["z1"]).min() > 1e-4 and min(gaps) > 1e-4:
            break
    wR, wQ, wV = rng.normal(size=(7, 7)), rng.normal(size=(7, 7, 4)), rng.normal(size=(7, 7))

    def loss():
        mm = vin_forward(x, p)
        return float((mm.reward[0] * wR).sum() + (mm.q[0] * wQ).sum() + (mm.value[0] * wV).sum())

    grads, dx = vin_backward(m, p, d_reward=wR, d_q=wQ, d_value=wV)
    worst = {}
    for name in PARAM_NAMES:
        arr = getattr(p, name)
        worst[name] = max(rel_err(grads[name][i], central_diff(loss, arr, i)) for i in np.ndindex(arr.shape))
    worst["input"] = max(rel_err(dx[(0,) + i], central_diff(loss, x, i)) for i in np.ndindex(x.shape))
    return worst


def _controller_worst(rng):
    # features of a 7x7 instance: value map, observation, four Q values
    W, R, H, Y, T = 8, 4, 16, 4, 3
    X = 2 * 49 + 4
    p = ControllerParams.init(rng, X + R * W, H, Y, W, R)
    for arr in p.tensors().values():
        arr += rng.normal(0, 0.1, arr.shape)
    xs = [np.concatenate([rng.normal(size=49), rng.integers(-1, 3, 49), rng.normal(size=4)]) for _ in range(T)]
    reads = [rng.normal(size=(R, W)) for _ in range(T)]
    w_out = [rng.normal(size=Y) for _ in range(T)]
    w_mem = [rng.normal(size=(R, W)) for _ in range(T)]

    def run():
        st, mem_state, caches, total = ControllerState.zeros(H), MemoryState.zeros(6, W, R), [], 0.0
        for t in range(T):
            out, it, st, c = controller_step(p, st, xs[t], reads[t], W, R)
            mem_state, mc = memory_step(mem_state, it)
            caches.append((c, mc))
            total += float(out @ w_out[t]) + float((mem_state.read_vectors * w_mem[t]).sum())
        return total, caches

    _, caches = run()
    grads = {n: np.zeros_like(a) for n, a in p.tensors().items()}
    d_mem, dh, dc = MemoryState.zeros(6, W, R), None, None
    for t in reversed(range(T)):
        c, mc = caches[t]
        d_mem.read_vectors = d_mem.read_vectors + w_mem[t]
        d_mem, d_if = memory_step_backward(mc, d_mem)
        g, _, _, dst = controller_backward(p, c, w_out[t], d_if, dh, dc)
        for n in grads:
            grads[n] += g[n]
        dh, dc = dst.h, dst.c
    worst = {}
    for name, arr in p.tensors().items():
        worst[name] = max(rel_err(grads[name][i], central_diff(lambda: run()[0], arr, i))
                          for i in np.ndindex(arr.shape))
    return worst


def test_backward_passes_match_finite_differences(verdict):
    rng = np.random.default_rng(2)
    t0 = time.perf_counter()
    worst = {f"vin/{k}": v for k, v in _vin_worst(rng).items()}
    worst.update({f"ctrl/{k}": v for k, v in _controller_worst(rng).items()})
    elapsed = time.perf_counter() - t0
    top = max(worst, key=worst.get)
    ok = max(worst.values()) < 1e-4 and elapsed < 60
    assert verdict(2, "VIN and controller gradients vs central differences, 7x7", ok,
                   f"{len(worst)} groups, worst rel-err {worst[top]:.1e} in {top} (< 1e-4), {elapsed:.1f} s (< 60 s)")


# --- 3 -----------------------------------------------------------------------


def test_memory_invariants_and_recall(verdict):
    rng = np.random.default_rng(3)
    t0 = time.perf_counter()
    N, W, R = 32, 8, 4
    s = MemoryState.zeros(N, W, R)
    violations = 0
    for _ in range(1000):
        s, _ = memory_step(s, parse_interface(rng.normal(0, 3, interface_size(W, R)), W, R))
        try:
            s.check()
            assert (s.usage >= 0).all() and (s.usage <= 1).all()
        except AssertionError:
            violations += 1
    sl = _slices(W, R)
    # recall trials start from partially used memories; once every slot is
    # heavily used, allocation spreads a single write over several rows
    worst_cos = 1.0
    for _ in range(20):
        s = MemoryState.zeros(N, W, R)
        for _ in range(int(rng.integers(0, 11))):
            s, _ = memory_step(s, parse_interface(rng.normal(0, 1, interface_size(W, R)), W, R))
        v = rng.normal(size=W)
        raw = np.zeros(interface_size(W, R))
        raw[sl["write_gate"]] = raw[sl["allocation_gate"]] = 30.0
        raw[sl["erase"]] = 30.0
        raw[sl["free_gates"]] = -30.0
        raw[sl["write_vector"]] = v
        s, _ = memory_step(s, parse_interface(raw, W, R))
        raw = np.zeros(interface_size(W, R))
        raw[sl["write_gate"]] = -30.0
        raw[sl["read_keys"]] = np.tile(v, R)
        raw[sl["read_strengths"]] = 200.0
        raw[sl["read_modes"]] = np.tile([-30.0, 30.0, -30.0], R)
        s, _ = memory_step(s, parse_interface(raw, W, R))
        r = s.read_vectors[0]
        worst_cos = min(worst_cos, float(r @ v / (np.linalg.norm(r) * np.linalg.norm(v))))
    elapsed = time.perf_counter() - t0
    ok = violations == 0 and worst_cos > 0.99 and elapsed < 10
    assert verdict(3, "memory invariants over 1000 steps, store/recall", ok,
                   f"{violations} violations, worst recall cosine {worst_cos:.4f} (> 0.99), {elapsed:.2f} s (< 10 s)")


# --- 4 -----------------------------------------------------------------------


def test_astar_matches_bfs(verdict):
    maps = [generate_scenario(9, 9, 6, 500 + i) for i in range(200)]
    t0 = time.perf_counter()
    lengths = [len(astar(g.cells, g.start, g.target)) - 1 for g in maps]
    elapsed = time.perf_counter() - t0
    agree = sum(a == bfs_length(g.cells.tolist(), g.start, g.target, passable=(0,)) for a, g in zip(lengths, maps))
    ok = agree == 200 and elapsed < 2
    assert verdict(4, "A* length equals BFS on 200 random 9x9 maps", ok,
                   f"{agree}/200 agree, {elapsed:.3f} s (< 2 s)")


# --- 5 -----------------------------------------------------------------------


def test_trap_fixture(verdict):
    g = trap_map()
    o1 = run_tb1(g, TRAP_FOV)
    o2 = run_tb2(g, TRAP_FOV)
    backtracked = len(set(o1.trajectory)) < len(o1.trajectory)
    tail = o2.actions[-8:]
    ok = (o1.success and backtracked and not o2.success and o2.steps == DEFAULT_STEP_CAP
          and o2.reason == "step_cap" and detect_oscillation(o2.actions) and set(tail) == {LEFT, RIGHT})
    assert verdict(5, "trap map: TB1 backtracks, TB2 oscillates", ok,
                   f"TB1 success={o1.success} in {o1.steps} steps, revisits={backtracked}; "
                   f"TB2 success={o2.success} at {o2.steps} steps, left/right oscillation={detect_oscillation(o2.actions)}")


# --- 6 and 7 share one trained toy model --------------------------------------


@pytest.fixture(scope="module")
def toy_model():
    samples, _ = toy_dataset(500, TOY_FOV)
    cfg = toy_config()
    t0 = time.perf_counter()
    params, reports = mcgn.train(samples, cfg, rng_seed=0, shape=TOY_SHAPE)
    return samples, cfg, params, reports, time.perf_counter() - t0


def _loss_ratio(reports):
    # sample-weighted across the two networks
    n = {m: r.samples for m, r in reports.items()}
    first = sum(reports[m].loss[0] * n[m] for m in reports) / sum(n.values())
    last = sum(reports[m].loss[-1] * n[m] for m in reports) / sum(n.values())
    return last / first


def test_toy_imitation_training(verdict, toy_model):
    samples, cfg, params, reports, train_time = toy_model
    t0 = time.perf_counter()
    ratio = _loss_ratio(reports)
    train_acc = mcgn.evaluate_accuracy(params, samples)["all"]
    held = seeded_suite(200, TOY_SHAPE, TOY_OBSTACLES, TOY_HELDOUT_SEED)
    success = np.mean([mcgn.run_episode(g, TOY_FOV, params).success for g in held])

    rng = np.random.default_rng(99)
    labels = rng.permutation([s.action for s in samples])
    shuffled = [replace(s, action=int(a)) for s, a in zip(samples, labels)]
    p_shuf, _ = mcgn.train(shuffled, cfg, rng_seed=0, shape=TOY_SHAPE)
    heldout_samples, _ = toy_dataset(500, TOY_FOV, TOY_HELDOUT_SEED)
    shuf_acc = mcgn.evaluate_accuracy(p_shuf, heldout_samples)["all"]
    elapsed = train_time + time.perf_counter() - t0
    ok = ratio <= 0.5 and train_acc >= 0.90 and success >= 0.70 and abs(shuf_acc - 0.25) <= 0.10 and elapsed < 900
    assert verdict(6, "toy imitation training 9x9/5x5, 500 samples, 50 epochs", ok,
                   f"loss ratio {ratio:.3f} (<= 0.5), train acc {train_acc:.3f} (>= 0.90), "
                   f"held-out success {success:.3f} (>= 0.70), shuffled-label acc {shuf_acc:.3f} (0.25 +- 0.10), "
                   f"{elapsed:.0f} s (< 900 s)")


def test_mode_switch_contract(verdict, toy_model, monkeypatch):
    _, cfg, params, _, _ = toy_model
    logged = []
    real = mcgn.plan_step_mode1

    def spy(*a, **kw):
        logits, carry = real(*a, **kw)
        logged.append(logits.tobytes() + carry.mem.memory.tobytes() + carry.ctrl.h.tobytes())
        return logits, carry

    monkeypatch.setattr(mcgn, "plan_step_mode1", spy)
    ablated = replace(params.cfg, ablation_memory_always=True)
    bad_modes = mismatches = switched = 0
    for g in seeded_suite(100, TOY_SHAPE, TOY_OBSTACLES, 20_000):
        logged.clear()
        a = mcgn.run_episode(g, TOY_FOV, params)
        trace_a = list(logged)
        logged.clear()
        b = mcgn.run_episode(g, TOY_FOV, params, ablated)
        trace_b = list(logged)
        bad_modes += re.fullmatch(r"I*(II)*", "".join(a.modes)) is None
        tau = a.tau if a.tau is not None else len(a.actions)
        switched += a.tau is not None
        same = (a.actions[:tau] == b.actions[:tau] and a.trajectory[:tau + 1] == b.trajectory[:tau + 1]
                and trace_a[:tau] == trace_b[:tau] and len(trace_a) == tau)
        mismatches += not same
    ok = bad_modes == 0 and mismatches == 0
    assert verdict(7, "mode sequence I*II* and ablation identical before the switch, 100 episodes", ok,
                   f"{bad_modes} bad mode sequences, {mismatches} pre-switch mismatches, "
                   f"{switched}/100 episodes switched")


# --- 8 -----------------------------------------------------------------------


def test_coordinate_round_trip(verdict):
    rng = np.random.default_rng(8)
    worst = 0.0
    for _ in range(1000):
        p = rng.uniform(-100, 100, 3)
        cam, mo = rng.uniform(-50, 50, 3), rng.uniform(-50, 50, 3)
        back = frames.map_to_world(frames.world_to_map(frames.FramePoint(frames.WORLD, p), cam, mo), cam, mo)
        worst = max(worst, float(np.abs(np.subtract(back.xyz, p)).max()))

    xw, yw, zw, xc, yc, zc = sp.symbols("xw yw zw xc yc zc", real=True)
    a, b = sp.pi / 2, sp.pi
    cw = sp.Matrix([[sp.cos(b), 0, sp.sin(b), xw], [0, 1, 0, yw], [-sp.sin(b), 0, sp.cos(b), zw], [0, 0, 0, 1]])
    mc = sp.Matrix([[sp.cos(a), -sp.sin(a), 0, xc],
                    [sp.cos(b) * sp.sin(a), sp.cos(b) * sp.cos(a), -sp.sin(b), yc],
                    [sp.sin(b) * sp.sin(a), sp.sin(b) * sp.cos(a), sp.cos(b), zc],
                    [0, 0, 0, 1]])
    cam, mo = (1.25, -3.5, 12.0), (0.5, 2.0, -4.0)
    sym = np.array((mc * cw).subs(dict(zip((xw, yw, zw, xc, yc, zc), (*cam, *mo)))).evalf(), dtype=float)
    got = frames.map_from_world(cam, mo).matrix
    product_ok = np.array_equal(got, sym)
    ok = worst < 1e-9 and product_ok
    assert verdict(8, "world->map->world round trip on 1000 points, composed matrix", ok,
                   f"max round-trip error {worst:.1e} (< 1e-9), composed matrix equals symbolic product: {product_ok}")


# --- 9 -----------------------------------------------------------------------


def test_evaluation_determinism(verdict, tmp_path, capsys):
    args = ["eval", "--task", "Task1", "Task2", "Task3", "--methods", "tb1", "tb2", "expert_astar",
            "--seed", "7", "--out", str(tmp_path)]
    cli_main(args + ["--run-name", "a"])
    cli_main(args + ["--run-name", "b"])
    capsys.readouterr()
    a = (tmp_path / "a" / "report.json").read_bytes()
    b = (tmp_path / "b" / "report.json").read_bytes()

    params = mcgn.init_params(mcgn.McgnConfig(vin_iterations=5, lstm_hidden=16), (15, 15), None,
                              np.random.default_rng(0))
    small = TASKS["Task3"].with_episodes(3)
    m1 = run_suite(small, ["mcgn", "mcgn_memory_always"], 7, params).to_json()
    m2 = run_suite(small, ["mcgn", "mcgn_memory_always"], 7, params).to_json()

    rep = json.loads(a)
    expert = [r for r in rep["results"] if r["method"] == "expert_astar"]
    expert_ok = all(r["successes"] == r["total"] for r in expert)
    n_expert = sum(r["total"] for r in expert)
    ok = a == b and m1 == m2 and expert_ok
    assert verdict(9, "eval reports byte-identical per seed, expert 100%", ok,
                   f"baseline reports identical: {a == b}, network reports identical: {m1 == m2}, "
                   f"expert {sum(r['successes'] for r in expert)}/{n_expert} over {len(expert)} suites")


# --- 10 ----------------------------------------------------------------------


def test_decision_latency(verdict):
    cfg = mcgn.McgnConfig()  # full-size network
    medians = {}
    for name, task in TASKS.items():
        params = mcgn.init_params(cfg, task.global_scale, None, np.random.default_rng(0))
        suite = seeded_suite(4, task.global_scale, 3, seed0=40)
        medians[name] = timing_probe("mcgn", suite, task.observation_range, params, cfg).median
    worst = max(medians.values())
    ok = worst < 0.050
    assert verdict(10, "per-decision latency at full task scale", ok,
                   "median " + ", ".join(f"{k} {v * 1e3:.1f} ms" for k, v in medians.items()) + " (< 50 ms)")
