from dataclasses import fields

import numpy as np

from oracles import central_diff, rel_err
from uavnav.controller import PARAM_NAMES, ControllerParams, ControllerState, controller_backward, controller_step
from uavnav.memory import InterfaceVector, interface_size, zero_interface_grad

W, R = 3, 2


def setup(rng, X=5, H=4, Y=4):
    p = ControllerParams.init(rng, X + R * W, H, Y, W, R)
    for arr in p.tensors().values():
        arr += rng.normal(0, 0.3, arr.shape)
    return p


def test_zero_weights_give_neutral_outputs(rng):
    p = ControllerParams.zeros(5 + R * W, 4, 4, W, R)
    out, it, st, _ = controller_step(p, ControllerState.zeros(4), rng.normal(size=5), rng.normal(size=(R, W)), W, R)
    assert not out.any()
    assert it.write_gate == 0.5 and it.allocation_gate == 0.5
    assert np.allclose(it.erase, 0.5) and np.allclose(it.read_modes, 1 / 3)
    assert not st.h.any() and not st.c.any()


def test_init_shapes_and_forget_bias(rng):
    p = ControllerParams.init(rng, 10, 6, 4, W, R)
    assert p.w_gates.shape == (16, 24) and p.w_iface.shape == (6, interface_size(W, R))
    assert np.array_equal(p.b_gates[6:12], np.ones(6)) and not p.b_gates[:6].any()


def test_deterministic(rng):
    p = setup(rng)
    st = ControllerState(rng.normal(size=4), rng.normal(size=4))
    x, reads = rng.normal(size=5), rng.normal(size=(R, W))
    a = controller_step(p, st, x, reads, W, R)
    b = controller_step(p, st, x, reads, W, R)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[2].h, b[2].h)


def random_iface_weights(rng):
    d = zero_interface_grad(W, R)
    for f in fields(InterfaceVector):
        v = getattr(d, f.name)
        setattr(d, f.name, float(rng.normal()) if isinstance(v, float) else rng.normal(size=v.shape))
    return d


def iface_dot(it, d):
    return sum(float(np.sum(getattr(it, f.name) * getattr(d, f.name))) for f in fields(InterfaceVector))


def test_gradients_match_finite_differences(rng):
    p = setup(rng)
    T = 3
    xs = [rng.normal(size=5) for _ in range(T)]
    reads = [rng.normal(size=(R, W)) for _ in range(T)]
    w_out = [rng.normal(size=4) for _ in range(T)]
    w_if = [random_iface_weights(rng) for _ in range(T)]
    st0 = ControllerState(rng.normal(size=4), rng.normal(size=4))

    def run():
        st, caches, loss = st0, [], 0.0
        for t in range(T):
            out, it, st, c = controller_step(p, st, xs[t], reads[t], W, R)
            caches.append(c)
            loss += float(out @ w_out[t]) + iface_dot(it, w_if[t])
        return loss, caches

    _, caches = run()
    grads = {n: np.zeros_like(a) for n, a in p.tensors().items()}
    dh = dc = None
    dx, dr = [None] * T, [None] * T
    for t in reversed(range(T)):
        g, dx[t], dr[t], dst = controller_backward(p, caches[t], w_out[t], w_if[t], dh, dc)
        for n in grads:
            grads[n] += g[n]
        dh, dc = dst.h, dst.c
    for name, arr in p.tensors().items():
        for idx in np.ndindex(arr.shape):
            fd = central_diff(lambda: run()[0], arr, idx)
            assert rel_err(grads[name][idx], fd) < 1e-4, (name, idx)
    for t in range(T):
        for i in range(5):
            assert rel_err(dx[t][i], central_diff(lambda: run()[0], xs[t], i)) < 1e-4
        for idx in np.ndindex(reads[t].shape):
            assert rel_err(dr[t][np.ravel_multi_index(idx, reads[t].shape)],
                           central_diff(lambda: run()[0], reads[t], idx)) < 1e-4
    for arr, d in ((st0.h, dh), (st0.c, dc)):
        for i in range(4):
            assert rel_err(d[i], central_diff(lambda: run()[0], arr, i)) < 1e-4
    assert set(grads) == set(PARAM_NAMES)
