import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import bfs_length, tile_majority
from uavnav import gridworld as gw
from uavnav.gridworld import (DOWN, LEFT, OBSTACLE, RIGHT, TARGET, UNKNOWN, UP, EpisodeDone, GlobalMap,
                              ScenarioError, generate_scenario, mask, reduce_labels, reset, step)


def open_map(M=7, N=7, start=(3, 3), target=(0, 0)):
    return GlobalMap(np.zeros((M, N), dtype=np.int8), start, target)


# --- GlobalMap ---------------------------------------------------------------


def test_map_rejects_bad_codes_and_positions():
    cells = np.zeros((5, 5), dtype=np.int8)
    with pytest.raises(ValueError):
        GlobalMap(cells + 2, (0, 0), (1, 1))
    cells[1, 1] = OBSTACLE
    with pytest.raises(ValueError):
        GlobalMap(cells, (1, 1), (0, 0))
    with pytest.raises(ValueError):
        GlobalMap(cells, (0, 0), (0, 0))
    with pytest.raises(ValueError):
        GlobalMap(cells, (0, 0), (5, 0))


def test_map_json_round_trip():
    g = generate_scenario(9, 11, 4, 3)
    back = GlobalMap.from_json(g.to_json())
    assert np.array_equal(back.cells, g.cells)
    assert (back.start, back.target, back.seed) == (g.start, g.target, g.seed)
    d = g.to_dict()
    assert set(d) == {"M", "N", "cells", "start", "target", "seed"}
    assert len(d["cells"]) == 9 * 11


# --- scenario generation -----------------------------------------------------


def test_task1_scale_scenario_is_feasible():
    g = generate_scenario(17, 17, 2, 7)
    assert g.shape == (17, 17)
    assert bfs_length(g.cells.tolist(), g.start, g.target, passable=(0,)) is not None


def test_obstacle_free_scenario():
    g = generate_scenario(5, 5, 0, 0)
    assert not g.cells.any()


@given(st.integers(0, 10_000))
def test_generated_maps_feasible_by_independent_bfs(seed):
    g = generate_scenario(9, 9, 5, seed)
    assert bfs_length(g.cells.tolist(), g.start, g.target, passable=(0,)) is not None


def test_generated_obstacles_are_blocks_of_at_most_3x3():
    # with one block the obstacle set is a single rectangle
    for seed in range(50):
        g = generate_scenario(9, 9, 1, seed)
        rows, cols = np.nonzero(g.cells)
        h, w = np.ptp(rows) + 1, np.ptp(cols) + 1
        assert h <= 3 and w <= 3 and len(rows) == h * w


def test_same_seed_same_bytes():
    a, b = generate_scenario(15, 15, 5, 99), generate_scenario(15, 15, 5, 99)
    assert a.cells.tobytes() == b.cells.tobytes() and a.to_json() == b.to_json()


def test_generation_gives_up_when_overconstrained():
    with pytest.raises(ScenarioError):
        generate_scenario(5, 5, 40, 0, max_attempts=5, max_block=5)
    with pytest.raises(ValueError):
        generate_scenario(4, 9, 1, 0)


# --- masking -----------------------------------------------------------------


def test_full_visibility_mask():
    g = generate_scenario(7, 7, 3, 1)
    obs = mask(g, (3, 3), (7, 7))
    assert (obs.o_g != UNKNOWN).all()
    assert (obs.o_g == TARGET).sum() == 1


def test_degenerate_fov():
    g = generate_scenario(7, 7, 3, 1)
    pos = g.start
    obs = mask(g, pos, (1, 1))
    hidden = np.ones(g.shape, bool)
    hidden[pos] = False
    assert (obs.o_g[hidden] == UNKNOWN).all()
    assert obs.o_g[pos] == g.cells[pos]


def test_target_outside_fov_is_unknown():
    g = open_map(9, 9, start=(8, 8), target=(0, 0))
    obs = mask(g, (8, 8), (3, 3))
    assert obs.o_g[0, 0] == UNKNOWN
    assert not obs.target_visible()


def test_edge_padding_in_local_view():
    g = open_map(7, 7, start=(0, 0), target=(6, 6))
    obs = mask(g, (0, 0), (3, 3))
    assert obs.fov_origin == (-1, -1)
    assert (obs.o_p[0, :] == UNKNOWN).all() and (obs.o_p[:, 0] == UNKNOWN).all()
    assert (obs.o_p[1:, 1:] == 0).all()


def test_even_fov_rejected():
    with pytest.raises(ValueError):
        mask(open_map(), (3, 3), (4, 3))


@given(st.integers(0, 500), st.integers(0, 6), st.integers(0, 6),
       st.sampled_from([1, 3, 5, 7]), st.sampled_from([1, 3, 5]))
def test_mask_matches_cellwise_definition(seed, r, c, m, n):
    g = generate_scenario(7, 7, 3, seed)
    obs = mask(g, (r, c), (m, n))
    for i in range(7):
        for j in range(7):
            inside = abs(i - r) <= m // 2 and abs(j - c) <= n // 2
            if not inside:
                assert obs.o_g[i, j] == UNKNOWN
            elif (i, j) == g.target:
                assert obs.o_g[i, j] == TARGET
            else:
                assert obs.o_g[i, j] == g.cells[i, j]
    # o_p is the window of o_g, -1 where it hangs over the edge
    r0, c0 = obs.fov_origin
    for i in range(m):
        for j in range(n):
            gi, gj = r0 + i, c0 + j
            expect = obs.o_g[gi, gj] if g.in_bounds((gi, gj)) else UNKNOWN
            assert obs.o_p[i, j] == expect
    again = mask(g, (r, c), (m, n))
    assert np.array_equal(again.o_g, obs.o_g) and np.array_equal(again.o_p, obs.o_p)


# --- dynamics ----------------------------------------------------------------


def test_up_moves_to_previous_row():
    g = open_map(7, 7, start=(3, 3), target=(6, 6))
    s = step(reset(g, (3, 3)), g, UP)
    assert s.ugv == (2, 3) and s.uav == (2, 3) and s.collisions == 0


def test_blocked_move_counts_collision():
    cells = np.zeros((5, 5), dtype=np.int8)
    cells[1, 2] = OBSTACLE
    g = GlobalMap(cells, (2, 2), (4, 4))
    s = step(reset(g, (1, 1)), g, UP)
    assert s.ugv == (2, 2) and s.collisions == 1 and s.step == 1
    s = step(reset(GlobalMap(cells, (0, 0), (4, 4)), (1, 1)), GlobalMap(cells, (0, 0), (4, 4)), LEFT)
    assert s.ugv == (0, 0) and s.collisions == 1


def test_reaching_target_finishes_episode():
    g = open_map(5, 5, start=(2, 2), target=(2, 3))
    s = step(reset(g, (1, 1)), g, RIGHT)
    assert s.done and s.success
    with pytest.raises(EpisodeDone):
        step(s, g, LEFT)


def test_step_cap_ends_episode():
    g = open_map(9, 9, start=(0, 0), target=(8, 8))
    s = reset(g, (1, 1), step_cap=3)
    for _ in range(3):
        s = step(s, g, UP)
    assert s.done and not s.success and s.step == 3


def test_mode_switch_and_hover():
    g = open_map(9, 9, start=(0, 4), target=(3, 4))
    s = reset(g, (5, 5))
    assert s.mode == "I"
    s = step(s, g, DOWN)
    assert s.mode == "II" and s.tau == 1 and s.uav == (1, 4)
    s = step(s, g, DOWN)
    assert s.uav == (1, 4) and s.ugv == (2, 4)
    assert s.modes == ("I", "II")


def test_target_visible_at_start_is_mode_two():
    g = open_map(7, 7, start=(3, 3), target=(3, 4))
    s = reset(g, (3, 3))
    assert s.mode == "II" and s.tau == 0
    assert reset(g, (3, 3), allow_switch=False).mode == "I"


@given(st.integers(0, 300), st.lists(st.integers(0, 3), min_size=1, max_size=40))
def test_random_walk_invariants(seed, actions):
    g = generate_scenario(9, 9, 4, seed)
    s = reset(g, (3, 3))
    seen_two = s.mode == "II"
    for a in actions:
        if s.done:
            break
        s = step(s, g, a)
        assert g.passable(s.ugv)
        if s.mode == "I":
            assert s.uav == s.ugv
            assert not seen_two
        else:
            seen_two = True
        assert s.step <= s.step_cap


def test_invalid_action():
    g = open_map()
    with pytest.raises(ValueError):
        step(reset(g, (3, 3)), g, 4)


# --- label images ------------------------------------------------------------


def test_constant_label_images():
    assert not reduce_labels(np.zeros((256, 256), int), (16, 16)).any()
    assert reduce_labels(np.ones((256, 256), int), (16, 16)).all()


@given(st.integers(0, 1000), st.integers(3, 8), st.integers(3, 8))
def test_reduce_labels_matches_tile_count(seed, m, n):
    rng = np.random.default_rng(seed)
    img = (rng.random((int(rng.integers(m, 40)), int(rng.integers(n, 40)))) < 0.5).astype(int)
    assert np.array_equal(reduce_labels(img, (m, n)), tile_majority(img.tolist(), (m, n)))


def test_tie_goes_to_obstacle():
    img = np.array([[0, 1], [1, 0]])
    assert reduce_labels(img, (1, 1))[0, 0] == 1


def test_reduce_labels_rejects_bad_input():
    with pytest.raises(ValueError):
        reduce_labels(np.full((4, 4), 3), (2, 2))
    with pytest.raises(ValueError):
        reduce_labels(np.zeros((2, 2), int), (4, 4))


def test_pgm_round_trip(tmp_path, rng):
    img = (rng.random((12, 10)) < 0.4).astype(np.uint8) * 255
    gw.write_pgm(tmp_path / "a.pgm", img)
    assert np.array_equal(gw.read_pgm(tmp_path / "a.pgm"), img)
    labels = gw.load_label_image(tmp_path / "a.pgm")
    assert set(np.unique(labels)) <= {0, 1}
    (tmp_path / "b.pgm").write_text("P2\n# comment\n3 2\n1\n0 1 0\n1 1 0\n")
    assert gw.read_pgm(tmp_path / "b.pgm").tolist() == [[0, 1, 0], [1, 1, 0]]


# --- outcomes ----------------------------------------------------------------


def test_oscillation_detector():
    assert gw.detect_oscillation([UP, LEFT, RIGHT, LEFT, RIGHT])
    assert not gw.detect_oscillation([LEFT, RIGHT, LEFT])
    assert not gw.detect_oscillation([LEFT, LEFT, RIGHT, RIGHT])
    assert not gw.detect_oscillation([UP, DOWN, UP, DOWN])


def test_outcome_dict_round_trip():
    g = open_map(5, 5, start=(0, 0), target=(0, 2))
    rec = gw.EpisodeRecorder(g, (1, 1))
    rec.act(RIGHT)
    rec.act(RIGHT)
    o = rec.outcome()
    assert o.success and o.reason == "reached" and o.trajectory == [(0, 0), (0, 1), (0, 2)]
    assert gw.EpisodeOutcome.from_dict(o.to_dict()) == o
