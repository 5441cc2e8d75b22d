"""Exact value iteration and its convolutional, differentiable counterpart."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .gridworld import ACTION_DELTAS

N_ACTIONS = 4


@dataclass(frozen=True, eq=False)
class TabularMdp:
    """Deterministic MDP.  ``next_state[s, a]`` is the successor of ``s`` under ``a``.

    States flagged in ``terminal`` collect their reward and stop (no
    discounted continuation).
    """
    next_state: np.ndarray
    reward: np.ndarray
    gamma: float
    terminal: np.ndarray | None = None

    def __post_init__(self):
        ns = np.asarray(self.next_state, dtype=np.int64)
        r = np.asarray(self.reward, dtype=np.float64)
        if ns.shape != r.shape or ns.ndim != 2:
            raise ValueError("next_state and reward must both be (S, A)")
        if ns.size and (ns.min() < 0 or ns.max() >= ns.shape[0]):
            raise ValueError("transition leaves the state space")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        term = np.zeros(ns.shape[0], bool) if self.terminal is None else np.asarray(self.terminal, bool)
        object.__setattr__(self, "next_state", ns)
        object.__setattr__(self, "reward", r)
        object.__setattr__(self, "terminal", term)

    @property
    def n_states(self) -> int:
        return self.reward.shape[0]

    def continuation(self) -> np.ndarray:
        return (~self.terminal).astype(np.float64)


def grid_mdp(cells, state_reward, gamma: float, terminal_cells=(), blocked_reward: float | None = None,
             off_grid_sink: bool = False) -> TabularMdp:
    """Build a 4-action grid MDP; state ``r * W + c``.

    ``state_reward`` gives R(s, a) = state_reward[s] for every action.
    Moves into obstacles self-loop (optionally with ``blocked_reward``).
    With ``off_grid_sink`` an extra zero-value absorbing state receives
    moves that leave the grid, which mirrors zero padding in a convolution.
    """
    cells = np.asarray(cells)
    H, W = cells.shape
    S = H * W + (1 if off_grid_sink else 0)
    sink = H * W
    ns = np.zeros((S, N_ACTIONS), dtype=np.int64)
    rew = np.zeros((S, N_ACTIONS))
    sr = np.asarray(state_reward, dtype=np.float64).reshape(H, W)
    for r in range(H):
        for c in range(W):
            s = r * W + c
            for a, (dr, dc) in enumerate(ACTION_DELTAS):
                nr, nc = r + dr, c + dc
                rew[s, a] = sr[r, c]
                if not (0 <= nr < H and 0 <= nc < W):
                    ns[s, a] = sink if off_grid_sink else s
                elif cells[nr, nc] == 1:
                    ns[s, a] = s
                    if blocked_reward is not None:
                        rew[s, a] = blocked_reward
                else:
                    ns[s, a] = nr * W + nc
    if off_grid_sink:
        ns[sink] = sink
    term = np.zeros(S, bool)
    for rc in terminal_cells:
        term[rc[0] * W + rc[1]] = True
    return TabularMdp(ns, rew, gamma, term)


def value_iteration_exact(mdp: TabularMdp, tol: float = 1e-12, max_iter: int = 100_000,
                          return_deltas: bool = False):
    """Iterate ``V <- max_a R(s,a) + gamma V(P(s,a))`` until the max-norm change is below ``tol``."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    V, deltas = kernels.tabular_vi(mdp.next_state, mdp.reward, mdp.continuation(),
                                   float(mdp.gamma), float(tol), int(max_iter))
    return (V, deltas) if return_deltas else V


def q_values(V, mdp: TabularMdp) -> np.ndarray:
    return mdp.reward + mdp.gamma * mdp.continuation()[:, None] * np.asarray(V)[mdp.next_state]


def greedy_policy(V, mdp: TabularMdp) -> np.ndarray:
    # np.argmax keeps the first maximum, i.e. the lowest action index
    return q_values(V, mdp).argmax(axis=1)


# ---------------------------------------------------------------------------
# VIN block
# ---------------------------------------------------------------------------

PARAM_NAMES = ("conv1_kernel", "conv1_bias", "pool_weights", "conv2_kernel", "conv2_v_kernel")


@dataclass(eq=False)
class VinParams:
    """Learnable tensors of the planning block.

    ``conv2_kernel`` maps the reward map to Q (3x3, 1 -> A) and
    ``conv2_v_kernel`` does the same for the value map; together they act
    as one 2-channel convolution over the stacked (R, V) pair.
    """
    conv1_kernel: np.ndarray    # (3, 3, 2, hidden)
    conv1_bias: np.ndarray      # (hidden,)
    pool_weights: np.ndarray    # (1, 1, hidden, 1)
    conv2_kernel: np.ndarray    # (3, 3, 1, A)
    conv2_v_kernel: np.ndarray  # (3, 3, 1, A)
    k: int = 30

    def __post_init__(self):
        hidden = self.conv1_kernel.shape[3]
        A = self.conv2_kernel.shape[3]
        expected = {
            "conv1_kernel": (3, 3, 2, hidden),
            "conv1_bias": (hidden,),
            "pool_weights": (1, 1, hidden, 1),
            "conv2_kernel": (3, 3, 1, A),
            "conv2_v_kernel": (3, 3, 1, A),
        }
        for name, shape in expected.items():
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.shape != shape:
                raise ValueError(f"{name}: expected shape {shape}, got {arr.shape}")
            setattr(self, name, arr)
        if self.k < 0:
            raise ValueError("k must be non-negative")

    @property
    def hidden(self) -> int:
        return self.conv1_kernel.shape[3]

    @property
    def n_actions(self) -> int:
        return self.conv2_kernel.shape[3]

    @classmethod
    def zeros(cls, hidden: int = 150, n_actions: int = N_ACTIONS, k: int = 30) -> "VinParams":
        return cls(np.zeros((3, 3, 2, hidden)), np.zeros(hidden), np.zeros((1, 1, hidden, 1)),
                   np.zeros((3, 3, 1, n_actions)), np.zeros((3, 3, 1, n_actions)), k)

    @classmethod
    def init(cls, rng: np.random.Generator, hidden: int = 150, n_actions: int = N_ACTIONS,
             k: int = 30, scale: float = 0.1) -> "VinParams":
        return cls(
            rng.normal(0.0, scale, (3, 3, 2, hidden)),
            np.zeros(hidden),
            rng.normal(0.0, scale / np.sqrt(hidden) * 4, (1, 1, hidden, 1)),
            rng.normal(0.0, scale, (3, 3, 1, n_actions)),
            rng.normal(0.0, scale, (3, 3, 1, n_actions)),
            k,
        )

    def tensors(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def copy(self) -> "VinParams":
        return VinParams(**{n: a.copy() for n, a in self.tensors().items()}, k=self.k)


def max_propagation_params(gamma: float, k: int, hidden: int = 1, n_actions: int = N_ACTIONS,
                           reward_scale: float = 1.0) -> VinParams:
    """Hand-set weights that make the block run textbook value iteration.

    The reward channel of the input passes straight through to R, and
    channel ``a`` of Q reads ``R(s) + gamma * V(s + delta_a)``.
    """
    p = VinParams.zeros(hidden, n_actions, k)
    p.conv1_kernel[1, 1, 1, 0] = 1.0
    p.pool_weights[0, 0, 0, 0] = reward_scale
    p.conv2_kernel[1, 1, 0, :] = 1.0
    for a, (dr, dc) in enumerate(ACTION_DELTAS[:n_actions]):
        p.conv2_v_kernel[1 + dr, 1 + dc, 0, a] = gamma
    return p


@dataclass(eq=False)
class ValueMaps:
    reward: np.ndarray          # (B, H, W)
    q: np.ndarray               # (B, H, W, A)
    value: np.ndarray           # (B, H, W)
    cache: dict = field(default_factory=dict, repr=False)


def vin_forward(x, params: VinParams) -> ValueMaps:
    """ConvNet -> reward map -> ``k`` unrolled Bellman backups.

    ``x`` is (H, W, 2) or (B, H, W, 2): channel 0 the observation codes,
    channel 1 the initial reward map.  Outputs keep a leading batch axis.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        x = x[None]
    if x.ndim != 4 or x.shape[3] != 2:
        raise ValueError(f"VIN input must be (B, H, W, 2), got {x.shape}")
    x = np.ascontiguousarray(x)
    z1 = kernels.conv3x3(x, params.conv1_kernel) + params.conv1_bias
    h = np.maximum(z1, 0.0)
    R = h @ params.pool_weights[0, 0, :, 0]
    rq = kernels.conv3x3(np.ascontiguousarray(R[..., None]), params.conv2_kernel)
    kv = np.ascontiguousarray(params.conv2_v_kernel[:, :, 0, :])
    Q, Vs, idx = kernels.vi_forward(rq, kv, int(params.k))
    cache = {"x": x, "z1": z1, "h": h, "R": R, "Vs": Vs, "idx": idx, "kv": kv}
    return ValueMaps(R, Q, Vs[-1].copy(), cache)


def vin_backward(maps: ValueMaps, params: VinParams, d_reward=None, d_q=None, d_value=None):
    """Reverse-mode gradients through the unrolled block.

    The channel max routes its gradient to the argmax (lowest index on
    ties).  Returns ``(grads, d_input)`` where ``grads`` maps parameter
    names to arrays shaped like the parameters.
    """
    c = maps.cache
    shape = maps.value.shape
    dR = np.zeros(shape) if d_reward is None else np.asarray(d_reward, np.float64).reshape(shape)
    dQ = np.zeros(maps.q.shape) if d_q is None else np.asarray(d_q, np.float64).reshape(maps.q.shape)
    dV = np.zeros(shape) if d_value is None else np.asarray(d_value, np.float64).reshape(shape)
    drq, dkv = kernels.vi_backward(np.ascontiguousarray(dQ), np.ascontiguousarray(dV), c["kv"],
                                   c["Vs"], c["idx"])
    dR_in, d_conv2 = kernels.conv3x3_backward(np.ascontiguousarray(c["R"][..., None]),
                                              params.conv2_kernel, drq)
    dR = dR + dR_in[..., 0]
    pool = params.pool_weights[0, 0, :, 0]
    d_pool = np.einsum("bhwc,bhw->c", c["h"], dR)
    dz1 = dR[..., None] * pool * (c["z1"] > 0)
    d_bias = dz1.sum(axis=(0, 1, 2))
    dx, d_conv1 = kernels.conv3x3_backward(c["x"], params.conv1_kernel, np.ascontiguousarray(dz1))
    grads = {
        "conv1_kernel": d_conv1,
        "conv1_bias": d_bias,
        "pool_weights": d_pool.reshape(1, 1, -1, 1),
        "conv2_kernel": d_conv2,
        "conv2_v_kernel": dkv[:, :, None, :],
    }
    return grads, dx


def attention_select(q_map, pos) -> np.ndarray:
    """Q-values of the four actions at ``pos``; ``q_map`` is (H, W, A) or (1, H, W, A)."""
    q = np.asarray(q_map)
    if q.ndim == 4:
        q = q[0]
    r, c = pos
    if not (0 <= r < q.shape[0] and 0 <= c < q.shape[1]):
        raise IndexError(f"position {pos} outside the {q.shape[:2]} map")
    return q[r, c].copy()
