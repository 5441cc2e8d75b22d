"""Improved-A* planners that only see the UAV's current footprint.

TB1 walks the whole local plan to the visible cell nearest the target
before looking again; TB2 re-plans after every single move.  In both the
UAV stays above the UGV for the entire episode.
"""
from __future__ import annotations

from .expert import NoCandidate, NoPath, astar, path_actions, search_min_dis_to_target
from .gridworld import DEFAULT_STEP_CAP, EpisodeOutcome, EpisodeRecorder, GlobalMap


class DeadEnd(RuntimeError):
    """TB1 stopped making progress; ``outcome`` holds the partial episode."""

    def __init__(self, message: str, outcome: EpisodeOutcome):
        super().__init__(message)
        self.outcome = outcome


def _execute(rec: EpisodeRecorder, actions) -> bool:
    for a in actions:
        if rec.done:
            return False
        rec.act(a)
    return True


def run_tb1(gmap: GlobalMap, fov, step_cap: int = DEFAULT_STEP_CAP,
            decision_times: list | None = None) -> EpisodeOutcome:
    rec = EpisodeRecorder(gmap, fov, step_cap, allow_switch=False, decision_times=decision_times)
    obs = rec.observe()
    stalls = 0
    while not obs.target_visible():
        cur = obs.to_local(rec.state.ugv)
        mid = search_min_dis_to_target(obs.o_p, cur, obs.to_local(gmap.target))
        if mid == cur:
            stalls += 1
            if stalls >= 2:
                raise DeadEnd(f"no progress from {rec.state.ugv}", rec.outcome("dead_end"))
        else:
            stalls = 0
        _execute(rec, path_actions(astar(obs.o_p, cur, mid)))
        if rec.done:
            return rec.outcome()
        obs = rec.observe()
    cur = obs.to_local(rec.state.ugv)
    try:
        plan = astar(obs.o_p, cur, obs.to_local(gmap.target))
    except NoPath:
        return rec.outcome("no_local_path")
    _execute(rec, path_actions(plan))
    return rec.outcome()


def tb2_decide(obs, ugv, target) -> int | None:
    """First action of the A* plan to the nearest visible point, or None if the plan is empty."""
    cur = obs.to_local(ugv)
    try:
        mid = search_min_dis_to_target(obs.o_p, cur, obs.to_local(target))
    except NoCandidate:
        return None
    if mid == cur:
        return None
    return path_actions(astar(obs.o_p, cur, mid))[0]


def run_tb2(gmap: GlobalMap, fov, step_cap: int = DEFAULT_STEP_CAP,
            decision_times: list | None = None) -> EpisodeOutcome:
    rec = EpisodeRecorder(gmap, fov, step_cap, allow_switch=False, decision_times=decision_times)
    while not rec.done:
        a = tb2_decide(rec.observe(), rec.state.ugv, gmap.target)
        if a is None:
            return rec.outcome("dead_end")
        rec.act(a)
    return rec.outcome()


def run_expert(gmap: GlobalMap, fov, step_cap: int = DEFAULT_STEP_CAP,
               decision_times: list | None = None) -> EpisodeOutcome:
    """Full-knowledge A* (upper bound)."""
    rec = EpisodeRecorder(gmap, fov, step_cap, allow_switch=False, decision_times=decision_times)
    rec.observe()
    _execute(rec, path_actions(astar(gmap.cells, gmap.start, gmap.target)))
    return rec.outcome()
