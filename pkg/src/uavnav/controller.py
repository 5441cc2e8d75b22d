"""LSTM controller that drives the external memory."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .memory import InterfaceVector, interface_size, parse_interface, parse_interface_backward

PARAM_NAMES = ("w_gates", "b_gates", "w_out", "b_out", "w_iface", "b_iface")


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass(eq=False)
class ControllerParams:
    w_gates: np.ndarray   # (X + H, 4H), gate order i, f, o, g
    b_gates: np.ndarray   # (4H,)
    w_out: np.ndarray     # (H, Y)
    b_out: np.ndarray     # (Y,)
    w_iface: np.ndarray   # (H, interface size)
    b_iface: np.ndarray

    @property
    def hidden(self) -> int:
        return self.w_out.shape[0]

    @property
    def input_size(self) -> int:
        return self.w_gates.shape[0] - self.hidden

    @classmethod
    def init(cls, rng, input_size: int, hidden: int, out_size: int, width: int, read_heads: int,
             scale: float = 1.0) -> "ControllerParams":
        n_if = interface_size(width, read_heads)
        lim = scale / np.sqrt(input_size + hidden)
        b = np.zeros(4 * hidden)
        b[hidden:2 * hidden] = 1.0  # forget-gate bias
        return cls(rng.uniform(-lim, lim, (input_size + hidden, 4 * hidden)), b,
                   rng.normal(0.0, scale / np.sqrt(hidden), (hidden, out_size)), np.zeros(out_size),
                   rng.normal(0.0, scale / np.sqrt(hidden), (hidden, n_if)), np.zeros(n_if))

    @classmethod
    def zeros(cls, input_size: int, hidden: int, out_size: int, width: int, read_heads: int):
        n_if = interface_size(width, read_heads)
        return cls(np.zeros((input_size + hidden, 4 * hidden)), np.zeros(4 * hidden),
                   np.zeros((hidden, out_size)), np.zeros(out_size), np.zeros((hidden, n_if)),
                   np.zeros(n_if))

    def tensors(self) -> dict[str, np.ndarray]:
        return {n: getattr(self, n) for n in PARAM_NAMES}


@dataclass(eq=False)
class ControllerState:
    h: np.ndarray
    c: np.ndarray

    @classmethod
    def zeros(cls, hidden: int) -> "ControllerState":
        return cls(np.zeros(hidden), np.zeros(hidden))


def controller_step(params: ControllerParams, state: ControllerState, features, prev_reads,
                    width: int, read_heads: int):
    """One LSTM step on ``[features ; prev_reads]``.

    Returns ``(output, iface, new_state, cache)``.
    """
    x = np.concatenate((np.ravel(features), np.ravel(prev_reads)))
    if x.shape[0] != params.input_size:
        raise ValueError(f"controller expects {params.input_size} inputs, got {x.shape[0]}")
    H = params.hidden
    xh = np.concatenate((x, state.h))
    z = xh @ params.w_gates + params.b_gates
    i = _sigmoid(z[:H])
    f = _sigmoid(z[H:2 * H])
    o = _sigmoid(z[2 * H:3 * H])
    g = np.tanh(z[3 * H:])
    c = f * state.c + i * g
    tc = np.tanh(c)
    h = o * tc
    out = h @ params.w_out + params.b_out
    raw = h @ params.w_iface + params.b_iface
    iface = parse_interface(raw, width, read_heads)
    cache = dict(xh=xh, i=i, f=f, o=o, g=g, c=c, tc=tc, h=h, c_prev=state.c, raw=raw, iface=iface,
                 n_features=np.size(features))
    return out, iface, ControllerState(h, c), cache


def controller_backward(params: ControllerParams, cache, d_out, d_iface: InterfaceVector | None,
                        d_h_next=None, d_c_next=None):
    """Returns ``(grads, d_features, d_prev_reads_flat, d_state_prev)``."""
    H = params.hidden
    h = cache["h"]
    d_out = np.asarray(d_out, dtype=np.float64)
    grads = {"w_out": np.outer(h, d_out), "b_out": d_out.copy()}
    dh = params.w_out @ d_out
    if d_iface is not None:
        d_raw = parse_interface_backward(cache["raw"], cache["iface"], d_iface)
    else:
        d_raw = np.zeros_like(cache["raw"])
    grads["w_iface"] = np.outer(h, d_raw)
    grads["b_iface"] = d_raw
    dh = dh + params.w_iface @ d_raw
    if d_h_next is not None:
        dh = dh + d_h_next
    i, f, o, g, tc = cache["i"], cache["f"], cache["o"], cache["g"], cache["tc"]
    do = dh * tc
    dc = dh * o * (1.0 - tc * tc)
    if d_c_next is not None:
        dc = dc + d_c_next
    dz = np.concatenate((dc * g * i * (1 - i), dc * cache["c_prev"] * f * (1 - f),
                         do * o * (1 - o), dc * i * (1 - g * g)))
    grads["w_gates"] = np.outer(cache["xh"], dz)
    grads["b_gates"] = dz
    dxh = params.w_gates @ dz
    nx = params.input_size
    nf = cache["n_features"]
    return grads, dxh[:nf], dxh[nf:nx], ControllerState(dxh[nx:], dc * f)
