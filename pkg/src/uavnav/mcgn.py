"""Two-mode motion command network.

Mode I (target not yet seen): VIN over the masked global map feeds an LSTM
controller with external memory; action logits are the controller output
plus a linear read-out of the read vectors.

Mode II (target inside the hovering UAV's footprint): VIN over the local
map only; logits are the Q-values at the UGV's cell.
"""
from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import tensorio
from .controller import ControllerParams, ControllerState, controller_backward, controller_step
from .expert import ExpertSample
from .gridworld import DEFAULT_STEP_CAP, TARGET, EpisodeOutcome, EpisodeRecorder, GlobalMap
from .memory import MemoryState, memory_step, memory_step_backward
from .vi_core import PARAM_NAMES as VIN_NAMES
from .vi_core import VinParams, attention_select, vin_backward, vin_forward

log = logging.getLogger(__name__)

REWARD_VALUE = 10.0


class ModeError(RuntimeError):
    """A planning mode was invoked outside its contract."""


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class McgnConfig:
    learning_rate: float = 1e-4
    epochs: int = 120
    episodes_per_epoch: int = 200
    batch_size: int = 64
    vin_iterations: int = 30
    q_channels: int = 4
    hidden_channels: int = 150
    lstm_hidden: int = 256
    memory_slots: int = 32
    memory_width: int = 8
    read_heads: int = 4
    write_heads: int = 1
    step_cap: int = DEFAULT_STEP_CAP
    ablation_memory_always: bool = False
    init_scale: float = 0.1
    grad_clip: float = 10.0
    controller_attention: bool = True
    q_skip: bool = False
    weight_decay: float = 0.0
    attention: str = "q"

    def __post_init__(self):
        for f in fields(self):
            if f.type == "int" and getattr(self, f.name) <= 0:
                raise ValueError(f"{f.name} must be positive")
        if self.q_channels != 4:
            raise ValueError("q_channels must equal the number of actions (4)")
        if self.write_heads != 1:
            raise ValueError("only a single write head is supported")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.attention not in ("q", "q+r"):
            raise ValueError("attention must be 'q' or 'q+r'")

    def to_kv(self) -> str:
        lines = []
        for k, v in asdict(self).items():
            lines.append(f"{k}={str(v).lower() if isinstance(v, bool) else v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_kv(cls, text: str, **overrides) -> "McgnConfig":
        types = {f.name: f.type for f in fields(cls)}
        vals = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"line {lineno}: expected key=value")
            k, v = (s.strip() for s in line.split("=", 1))
            if k not in types:
                continue  # other sections (harness / transforms) share the file
            vals[k] = _coerce(types[k], v)
        vals.update(overrides)
        return cls(**vals)


def _coerce(typ: str, v: str):
    if typ == "bool":
        return v.lower() in ("1", "true", "yes", "on")
    if typ == "int":
        return int(v)
    if typ == "float":
        return float(v)
    return v


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------


def controller_input_size(cfg: McgnConfig, shape) -> int:
    M, N = shape
    extra = cfg.q_channels if cfg.controller_attention else 0
    return 2 * M * N + extra + cfg.read_heads * cfg.memory_width


@dataclass(eq=False)
class Mode1Params:
    vin: VinParams
    ctrl: ControllerParams
    w_read: np.ndarray  # (R * W, A)
    shape: tuple

    def tensors(self) -> dict[str, np.ndarray]:
        out = {f"vin/{k}": v for k, v in self.vin.tensors().items()}
        out.update({f"ctrl/{k}": v for k, v in self.ctrl.tensors().items()})
        out["w_read"] = self.w_read
        return out


@dataclass(eq=False)
class Mode2Params:
    vin: VinParams

    def tensors(self) -> dict[str, np.ndarray]:
        return {f"vin/{k}": v for k, v in self.vin.tensors().items()}


@dataclass(eq=False)
class McgnParams:
    mode1: Mode1Params
    mode2: Mode2Params
    cfg: McgnConfig = field(default_factory=McgnConfig)

    def tensors(self) -> dict[str, np.ndarray]:
        out = {f"mode1/{k}": v for k, v in self.mode1.tensors().items()}
        out.update({f"mode2/{k}": v for k, v in self.mode2.tensors().items()})
        return out

    def save(self, path) -> None:
        t = dict(self.tensors())
        t["meta/global_shape"] = np.asarray(self.mode1.shape, dtype=np.float64)
        tensorio.save(path, t)

    @classmethod
    def load(cls, path, cfg: McgnConfig) -> "McgnParams":
        t = tensorio.load(path)
        shape = tuple(int(x) for x in t["meta/global_shape"])
        p = init_params(cfg, shape, fov=(3, 3), rng=np.random.default_rng(0))
        for name, arr in p.tensors().items():
            if name not in t:
                raise tensorio.TensorFileError(f"checkpoint lacks tensor {name!r}")
            if t[name].shape != arr.shape:
                raise tensorio.TensorFileError(f"{name}: shape {t[name].shape} != {arr.shape}")
            arr[...] = t[name]
        return p


def init_params(cfg: McgnConfig, shape, fov, rng: np.random.Generator, zero: bool = False) -> McgnParams:
    """Fresh parameters for maps of ``shape`` (mode I) and any footprint (mode II)."""
    n_in = controller_input_size(cfg, shape)
    A, H = cfg.q_channels, cfg.hidden_channels
    if zero:
        vin1 = VinParams.zeros(H, A, cfg.vin_iterations)
        vin2 = VinParams.zeros(H, A, cfg.vin_iterations)
        ctrl = ControllerParams.zeros(n_in, cfg.lstm_hidden, A, cfg.memory_width, cfg.read_heads)
        w_read = np.zeros((cfg.read_heads * cfg.memory_width, A))
    else:
        vin1 = VinParams.init(rng, H, A, cfg.vin_iterations, cfg.init_scale)
        vin2 = VinParams.init(rng, H, A, cfg.vin_iterations, cfg.init_scale)
        ctrl = ControllerParams.init(rng, n_in, cfg.lstm_hidden, A, cfg.memory_width, cfg.read_heads)
        w_read = rng.normal(0.0, 0.1, (cfg.read_heads * cfg.memory_width, A))
    return McgnParams(Mode1Params(vin1, ctrl, w_read, tuple(shape)), Mode2Params(vin2), cfg)


# ---------------------------------------------------------------------------
# inputs
# ---------------------------------------------------------------------------


def reward_map(shape, target=None, obs=None, value: float = REWARD_VALUE) -> np.ndarray:
    """Initial reward map: ``value`` at the target, zero elsewhere.

    With ``target=None`` the target is read off ``obs`` (cells coded 2), so
    an unseen target yields an all-zero map.
    """
    R = np.zeros(shape)
    if target is not None:
        if 0 <= target[0] < shape[0] and 0 <= target[1] < shape[1]:
            R[target] = value
    elif obs is not None:
        R[np.asarray(obs) == TARGET] = value
    return R


def build_input(obs, reward_init) -> np.ndarray:
    obs = np.asarray(obs, dtype=np.float64)
    reward_init = np.asarray(reward_init, dtype=np.float64)
    if obs.shape != reward_init.shape or obs.ndim != 2:
        raise ValueError(f"observation {obs.shape} and reward map {reward_init.shape} must match")
    return np.stack((obs, reward_init), axis=-1)


# ---------------------------------------------------------------------------
# mode I
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class Mode1Carry:
    ctrl: ControllerState
    mem: MemoryState

    @classmethod
    def zeros(cls, cfg: McgnConfig) -> "Mode1Carry":
        return cls(ControllerState.zeros(cfg.lstm_hidden),
                   MemoryState.zeros(cfg.memory_slots, cfg.memory_width, cfg.read_heads))


def _mode1_features(cfg, maps_value, maps_q, obs, pos):
    parts = [np.ravel(maps_value), np.ravel(np.asarray(obs, dtype=np.float64))]
    if cfg.controller_attention:
        parts.append(attention_select(maps_q, pos))
    return np.concatenate(parts)


def _mode1_core(p: Mode1Params, cfg: McgnConfig, value, q, obs, pos, carry: Mode1Carry):
    feats = _mode1_features(cfg, value, q, obs, pos)
    out, iface, ctrl, ccache = controller_step(p.ctrl, carry.ctrl, feats, carry.mem.read_vectors,
                                               cfg.memory_width, cfg.read_heads)
    mem, mcache = memory_step(carry.mem, iface)
    logits = out + mem.read_vectors.ravel() @ p.w_read
    if cfg.q_skip:
        logits = logits + attention_select(q, pos)
    return logits, Mode1Carry(ctrl, mem), (ccache, mcache, mem.read_vectors.ravel())


def plan_step_mode1(o_g, pos, target, carry: Mode1Carry, params: McgnParams):
    """Logits for one mode-I decision and the updated recurrent carry."""
    p, cfg = params.mode1, params.cfg
    if np.shape(o_g) != p.shape:
        raise ValueError(f"mode-I network built for {p.shape} maps, got {np.shape(o_g)}")
    x = build_input(o_g, reward_map(p.shape, target))
    maps = vin_forward(x, p.vin)
    logits, carry, _ = _mode1_core(p, cfg, maps.value[0], maps.q[0], o_g, pos, carry)
    return logits, carry


def _softmax_ce(logits, label):
    z = logits - logits.max()
    pr = np.exp(z)
    pr /= pr.sum()
    loss = -np.log(max(pr[label], 1e-300))
    d = pr.copy()
    d[label] -= 1.0
    return loss, d


def mode1_episode_grad(params: McgnParams, samples: list[ExpertSample]):
    """Loss summed over one episode's mode-I samples and its BPTT gradient.

    Returns ``(loss, grads, n_correct)`` with grads keyed like ``Mode1Params.tensors()``.
    """
    p, cfg = params.mode1, params.cfg
    T = len(samples)
    X = np.stack([build_input(s.obs, reward_map(p.shape, s.target)) for s in samples])
    maps = vin_forward(X, p.vin)
    carry = Mode1Carry.zeros(cfg)
    steps, dlogits = [], []
    loss, correct = 0.0, 0
    for t, s in enumerate(samples):
        logits, carry, cache = _mode1_core(p, cfg, maps.value[t], maps.q[t], s.obs, s.pos, carry)
        l, d = _softmax_ce(logits, s.action)
        loss += l
        correct += int(np.argmax(logits) == s.action)
        steps.append(cache)
        dlogits.append(d)

    g = {k: np.zeros_like(v) for k, v in p.tensors().items()}
    dV = np.zeros_like(maps.value)
    dQ = np.zeros_like(maps.q)
    H, W = p.shape
    d_mem = None
    d_ctrl = None
    for t in range(T - 1, -1, -1):
        ccache, mcache, reads = steps[t]
        dl = dlogits[t]
        g["w_read"] += np.outer(reads, dl)
        d_new = MemoryState.zeros(cfg.memory_slots, cfg.memory_width, cfg.read_heads) if d_mem is None else d_mem
        d_new.read_vectors = d_new.read_vectors + (p.w_read @ dl).reshape(cfg.read_heads, cfg.memory_width)
        d_prev, d_iface = memory_step_backward(mcache, d_new)
        cg, d_feat, d_prev_reads, d_ctrl = controller_backward(
            p.ctrl, ccache, dl, d_iface,
            None if d_ctrl is None else d_ctrl.h, None if d_ctrl is None else d_ctrl.c)
        for k, v in cg.items():
            g[f"ctrl/{k}"] += v
        d_prev.read_vectors = d_prev.read_vectors + d_prev_reads.reshape(cfg.read_heads, cfg.memory_width)
        d_mem = d_prev
        dV[t] = d_feat[:H * W].reshape(H, W)
        r, c = samples[t].pos
        if cfg.controller_attention:
            dQ[t, r, c] += d_feat[2 * H * W:2 * H * W + cfg.q_channels]
        if cfg.q_skip:
            dQ[t, r, c] += dl
    vg, _ = vin_backward(maps, p.vin, d_q=dQ, d_value=dV)
    for k, v in vg.items():
        g[f"vin/{k}"] += v
    return loss, g, correct


# ---------------------------------------------------------------------------
# mode II
# ---------------------------------------------------------------------------


def _mode2_logits(maps, b, pos, attention):
    q = attention_select(maps.q[b], pos)
    if attention == "q+r":
        q = q + maps.reward[b][pos]
    return q


def plan_step_mode2(o_p, ugv_local, params: McgnParams, target_local=None):
    """Logits from the local footprint; the target must be visible in ``o_p``."""
    o_p = np.asarray(o_p)
    if not (o_p == TARGET).any():
        raise ModeError("mode II requires the target inside the footprint")
    x = build_input(o_p, reward_map(o_p.shape, target_local, obs=o_p))
    maps = vin_forward(x, params.mode2.vin)
    return _mode2_logits(maps, 0, ugv_local, params.cfg.attention)


def mode2_batch_grad(params: McgnParams, samples: list[ExpertSample]):
    p, cfg = params.mode2, params.cfg
    X = np.stack([build_input(s.obs, reward_map(s.obs.shape, s.target)) for s in samples])
    maps = vin_forward(X, p.vin)
    dQ = np.zeros_like(maps.q)
    dR = np.zeros_like(maps.reward)
    loss, correct = 0.0, 0
    for b, s in enumerate(samples):
        logits = _mode2_logits(maps, b, s.pos, cfg.attention)
        l, d = _softmax_ce(logits, s.action)
        loss += l
        correct += int(np.argmax(logits) == s.action)
        dQ[b, s.pos[0], s.pos[1]] += d
        if cfg.attention == "q+r":
            dR[b, s.pos[0], s.pos[1]] += d.sum()
    vg, _ = vin_backward(maps, p.vin, d_reward=dR, d_q=dQ)
    return loss, {f"vin/{k}": v for k, v in vg.items()}, correct


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


class Adam:
    """Adam with optional decoupled weight decay."""

    def __init__(self, params: dict, lr: float, b1: float = 0.9, b2: float = 0.999, eps: float = 1e-8,
                 weight_decay: float = 0.0):
        self.params = params
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.weight_decay = weight_decay
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, grads: dict) -> None:
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for k, g in grads.items():
            m, v = self.m[k], self.v[k]
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            p = self.params[k]
            if self.weight_decay:
                p *= 1.0 - self.lr * self.weight_decay
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class TrainReport:
    loss: list = field(default_factory=list)
    accuracy: list = field(default_factory=list)
    wall_time: float = 0.0
    samples: int = 0


def _clip(grads: dict, max_norm: float) -> None:
    total = np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if not np.isfinite(total):
        raise TrainingDiverged(f"non-finite gradient norm ({total})")
    if max_norm > 0 and total > max_norm:
        for g in grads.values():
            g *= max_norm / total


def group_episodes(samples: list[ExpertSample]) -> list[list[ExpertSample]]:
    eps: dict[str, list] = {}
    for s in samples:
        eps.setdefault(s.scenario_id, []).append(s)
    return [sorted(v, key=lambda s: s.step_index) for _, v in sorted(eps.items())]


def _train_net(tensors, batches_fn, grad_fn, cfg: McgnConfig, rng, label: str) -> TrainReport:
    opt = Adam(tensors, cfg.learning_rate, weight_decay=cfg.weight_decay)
    rep = TrainReport()
    t0 = time.perf_counter()
    for epoch in range(cfg.epochs):
        tot_loss, tot_ok, tot_n = 0.0, 0, 0
        for batch in batches_fn(rng):
            loss, grads, ok, n = grad_fn(batch)
            if not np.isfinite(loss):
                raise TrainingDiverged(f"{label}: loss became {loss} at epoch {epoch}")
            for g in grads.values():
                g /= n
            _clip(grads, cfg.grad_clip)
            opt.step(grads)
            tot_loss += loss
            tot_ok += ok
            tot_n += n
        rep.loss.append(tot_loss / max(tot_n, 1))
        rep.accuracy.append(tot_ok / max(tot_n, 1))
        rep.samples = tot_n
        log.info("%s epoch %d loss %.4f acc %.3f", label, epoch, rep.loss[-1], rep.accuracy[-1])
    rep.wall_time = time.perf_counter() - t0
    return rep


def train(dataset: list[ExpertSample], cfg: McgnConfig, rng_seed: int = 0, shape=None,
          params: McgnParams | None = None):
    """Imitation learning of both networks by cross-entropy on expert actions.

    Mode-I episodes are unrolled through time (BPTT over each episode);
    mode-II samples are independent.  Each epoch visits up to
    ``episodes_per_epoch`` episodes in shuffled order, in mini-batches of
    about ``batch_size`` samples.
    """
    rng = np.random.default_rng(rng_seed)
    mode1 = [s for s in dataset if s.mode == "I"]
    mode2 = [s for s in dataset if s.mode == "II"]
    if shape is None:
        if not mode1:
            raise ValueError("cannot infer the global map shape without mode-I samples")
        shape = mode1[0].obs.shape
    if params is None:
        params = init_params(cfg, shape, None, rng)
    eps1 = group_episodes(mode1)
    eps2 = group_episodes(mode2)

    def episode_batches(episodes):
        def fn(r):
            order = r.permutation(len(episodes))[:cfg.episodes_per_epoch]
            batch, n = [], 0
            for i in order:
                batch.append(episodes[i])
                n += len(episodes[i])
                if n >= cfg.batch_size:
                    yield batch
                    batch, n = [], 0
            if batch:
                yield batch
        return fn

    def grad1(batch):
        acc = {k: np.zeros_like(v) for k, v in params.mode1.tensors().items()}
        loss, ok, n = 0.0, 0, 0
        for ep in batch:
            l, g, c = mode1_episode_grad(params, ep)
            for k in acc:
                acc[k] += g[k]
            loss += l
            ok += c
            n += len(ep)
        return loss, acc, ok, n

    def grad2(batch):
        flat = [s for ep in batch for s in ep]
        loss, g, ok = mode2_batch_grad(params, flat)
        return loss, g, ok, len(flat)

    reports = {}
    reports["I"] = _train_net(params.mode1.tensors(), episode_batches(eps1), grad1, cfg, rng, "mode-I") \
        if eps1 else TrainReport()
    reports["II"] = _train_net(params.mode2.tensors(), episode_batches(eps2), grad2, cfg, rng, "mode-II") \
        if eps2 else TrainReport()
    return params, reports


def evaluate_accuracy(params: McgnParams, samples: list[ExpertSample]) -> dict:
    """Greedy action accuracy per mode, episodes replayed with fresh memory."""
    ok = {"I": 0, "II": 0}
    n = {"I": 0, "II": 0}
    for ep in group_episodes([s for s in samples if s.mode == "I"]):
        carry = Mode1Carry.zeros(params.cfg)
        for s in ep:
            logits, carry = plan_step_mode1(s.obs, s.pos, s.target, carry, params)
            ok["I"] += int(np.argmax(logits) == s.action)
            n["I"] += 1
    for s in samples:
        if s.mode == "II":
            logits = plan_step_mode2(s.obs, s.pos, params, s.target)
            ok["II"] += int(np.argmax(logits) == s.action)
            n["II"] += 1
    total = n["I"] + n["II"]
    return {
        "I": ok["I"] / n["I"] if n["I"] else float("nan"),
        "II": ok["II"] / n["II"] if n["II"] else float("nan"),
        "all": (ok["I"] + ok["II"]) / total if total else float("nan"),
        "n": total,
    }


# ---------------------------------------------------------------------------
# closed-loop episodes
# ---------------------------------------------------------------------------


def run_episode(gmap: GlobalMap, fov, params: McgnParams, cfg: McgnConfig | None = None,
                decision_times: list | None = None) -> EpisodeOutcome:
    """Greedy rollout: mode I until the target enters the footprint, then mode II.

    With ``cfg.ablation_memory_always`` the switch never happens.
    """
    cfg = cfg or params.cfg
    rec = EpisodeRecorder(gmap, fov, cfg.step_cap, allow_switch=not cfg.ablation_memory_always,
                          decision_times=decision_times)
    carry = Mode1Carry.zeros(params.cfg)
    while not rec.done:
        obs = rec.observe()
        st = rec.state
        if st.mode == "I":
            logits, carry = plan_step_mode1(obs.o_g, st.ugv, gmap.target, carry, params)
        else:
            if not obs.in_fov(st.ugv):
                return rec.outcome("left_fov")
            logits = plan_step_mode2(obs.o_p, obs.to_local(st.ugv), params, obs.to_local(gmap.target))
        rec.act(int(np.argmax(logits)))
    st = rec.state
    if st.success:
        return rec.outcome("reached")
    if st.tau is None and not cfg.ablation_memory_always:
        return rec.outcome("no_mode_switch")
    return rec.outcome("step_cap")


__all__ = [
    "McgnConfig", "McgnParams", "Mode1Params", "Mode2Params", "Mode1Carry", "TrainReport",
    "ModeError", "TrainingDiverged", "Adam", "build_input", "reward_map", "init_params",
    "plan_step_mode1", "plan_step_mode2", "mode1_episode_grad", "mode2_batch_grad", "train",
    "evaluate_accuracy", "run_episode", "group_episodes", "VIN_NAMES",
]
