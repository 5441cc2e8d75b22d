"""Hot numeric kernels, each in a numba and a pure-numpy flavour.

Layout convention: activations are ``(B, H, W, C)``, 3x3 kernels are
``(3, 3, C_in, C_out)`` and act as cross-correlations with zero padding
("same" output size).  The public names at the bottom dispatch on
``_accel.USE_NUMBA``; the ``*_np`` / ``*_nb`` variants stay importable so
tests and the benchmark can compare the two directly.
"""
import numpy as np

from . import _accel
from ._accel import njit

# ---------------------------------------------------------------------------
# 3x3 same-padding convolution
# ---------------------------------------------------------------------------


def conv3x3_np(x, k):
    B, H, W, _ = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    out = np.zeros((B, H, W, k.shape[3]))
    for di in range(3):
        for dj in range(3):
            out += xp[:, di:di + H, dj:dj + W, :] @ k[di, dj]
    return out


def conv3x3_backward_np(x, k, dout):
    B, H, W, ci = x.shape
    co = k.shape[3]
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    dxp = np.zeros_like(xp)
    dk = np.zeros_like(k)
    dflat = dout.reshape(-1, co)
    for di in range(3):
        for dj in range(3):
            sl = xp[:, di:di + H, dj:dj + W, :]
            dk[di, dj] = sl.reshape(-1, ci).T @ dflat
            dxp[:, di:di + H, dj:dj + W, :] += dout @ k[di, dj].T
    return dxp[:, 1:-1, 1:-1, :], dk


@njit
def conv3x3_nb(x, k):
    B, H, W, ci = x.shape
    co = k.shape[3]
    out = np.zeros((B, H, W, co))
    for b in range(B):
        for h in range(H):
            for w in range(W):
                for di in range(3):
                    hh = h + di - 1
                    if hh < 0 or hh >= H:
                        continue
                    for dj in range(3):
                        ww = w + dj - 1
                        if ww < 0 or ww >= W:
                            continue
                        for c in range(ci):
                            xv = x[b, hh, ww, c]
                            if xv == 0.0:
                                continue
                            for o in range(co):
                                out[b, h, w, o] += xv * k[di, dj, c, o]
    return out


@njit
def conv3x3_backward_nb(x, k, dout):
    B, H, W, ci = x.shape
    co = k.shape[3]
    dx = np.zeros((B, H, W, ci))
    dk = np.zeros((3, 3, ci, co))
    for b in range(B):
        for h in range(H):
            for w in range(W):
                for di in range(3):
                    hh = h + di - 1
                    if hh < 0 or hh >= H:
                        continue
                    for dj in range(3):
                        ww = w + dj - 1
                        if ww < 0 or ww >= W:
                            continue
                        for c in range(ci):
                            xv = x[b, hh, ww, c]
                            acc = 0.0
                            for o in range(co):
                                g = dout[b, h, w, o]
                                dk[di, dj, c, o] += xv * g
                                acc += g * k[di, dj, c, o]
                            dx[b, hh, ww, c] += acc
    return dx, dk


# ---------------------------------------------------------------------------
# Unrolled value-iteration block: Q_n = rq + conv(V_n, kv); V_{n+1} = max_a Q_n
# ---------------------------------------------------------------------------


def vi_forward_np(rq, kv, k):
    """Run ``k`` iterations starting from ``V_0 = 0``.

    ``rq`` is the reward contribution ``conv(R, K_r)`` of shape (B, H, W, A),
    ``kv`` the value kernel (3, 3, A).  Returns the last Q, the value history
    ``Vs`` of shape (k+1, B, H, W) and the argmax channels (k, B, H, W).
    """
    B, H, W, A = rq.shape
    Vs = np.zeros((k + 1, B, H, W))
    idx = np.zeros((k, B, H, W), dtype=np.int64)
    Q = np.zeros((B, H, W, A))
    for n in range(k):
        Vp = np.pad(Vs[n], ((0, 0), (1, 1), (1, 1)))
        Q = rq.copy()
        for di in range(3):
            for dj in range(3):
                Q += Vp[:, di:di + H, dj:dj + W, None] * kv[di, dj]
        a = Q.argmax(axis=-1)
        idx[n] = a
        Vs[n + 1] = np.take_along_axis(Q, a[..., None], axis=-1)[..., 0]
    return Q, Vs, idx


def vi_backward_np(dQ, dV, kv, Vs, idx):
    k = idx.shape[0]
    B, H, W, A = dQ.shape
    drq = np.zeros((B, H, W, A))
    dkv = np.zeros_like(kv)
    gV = dV.copy()
    for n in range(k - 1, -1, -1):
        dQn = dQ.copy() if n == k - 1 else np.zeros((B, H, W, A))
        np.put_along_axis(dQn, idx[n][..., None],
                          np.take_along_axis(dQn, idx[n][..., None], axis=-1) + gV[..., None], axis=-1)
        drq += dQn
        Vp = np.pad(Vs[n], ((0, 0), (1, 1), (1, 1)))
        gVp = np.zeros_like(Vp)
        for di in range(3):
            for dj in range(3):
                dkv[di, dj] += np.einsum("bhw,bhwa->a", Vp[:, di:di + H, dj:dj + W], dQn)
                gVp[:, di:di + H, dj:dj + W] += dQn @ kv[di, dj]
        gV = gVp[:, 1:-1, 1:-1]
    return drq, dkv


@njit
def vi_forward_nb(rq, kv, k):
    B, H, W, A = rq.shape
    Vs = np.zeros((k + 1, B, H, W))
    idx = np.zeros((k, B, H, W), dtype=np.int64)
    Q = np.zeros((B, H, W, A))
    for n in range(k):
        for b in range(B):
            for h in range(H):
                for w in range(W):
                    best = -np.inf
                    bi = 0
                    for a in range(A):
                        s = rq[b, h, w, a]
                        for di in range(3):
                            hh = h + di - 1
                            if hh < 0 or hh >= H:
                                continue
                            for dj in range(3):
                                ww = w + dj - 1
                                if ww < 0 or ww >= W:
                                    continue
                                s += kv[di, dj, a] * Vs[n, b, hh, ww]
                        Q[b, h, w, a] = s
                        if s > best:
                            best = s
                            bi = a
                    Vs[n + 1, b, h, w] = best
                    idx[n, b, h, w] = bi
    return Q, Vs, idx


@njit
def vi_backward_nb(dQ, dV, kv, Vs, idx):
    k = idx.shape[0]
    B, H, W, A = dQ.shape
    drq = np.zeros((B, H, W, A))
    dkv = np.zeros((3, 3, A))
    gV = dV.copy()
    dQn = np.zeros((B, H, W, A))
    for n in range(k - 1, -1, -1):
        if n == k - 1:
            dQn[:] = dQ
        else:
            dQn[:] = 0.0
        gnext = np.zeros((B, H, W))
        for b in range(B):
            for h in range(H):
                for w in range(W):
                    dQn[b, h, w, idx[n, b, h, w]] += gV[b, h, w]
                    for a in range(A):
                        g = dQn[b, h, w, a]
                        drq[b, h, w, a] += g
                        if g == 0.0:
                            continue
                        for di in range(3):
                            hh = h + di - 1
                            if hh < 0 or hh >= H:
                                continue
                            for dj in range(3):
                                ww = w + dj - 1
                                if ww < 0 or ww >= W:
                                    continue
                                dkv[di, dj, a] += g * Vs[n, b, hh, ww]
                                gnext[b, hh, ww] += g * kv[di, dj, a]
        gV = gnext
    return drq, dkv


# ---------------------------------------------------------------------------
# Tabular value iteration on deterministic MDPs
# ---------------------------------------------------------------------------


def tabular_vi_np(next_state, reward, cont, gamma, tol, max_iter):
    S = reward.shape[0]
    V = np.zeros(S)
    deltas = []
    for _ in range(max_iter):
        Vn = (reward + gamma * cont[:, None] * V[next_state]).max(axis=1)
        delta = float(np.abs(Vn - V).max()) if S else 0.0
        V = Vn
        deltas.append(delta)
        if delta < tol:
            break
    return V, np.asarray(deltas)


@njit
def tabular_vi_nb(next_state, reward, cont, gamma, tol, max_iter):
    S, A = reward.shape
    V = np.zeros(S)
    Vn = np.zeros(S)
    deltas = np.zeros(max_iter)
    it = 0
    while it < max_iter:
        delta = 0.0
        for s in range(S):
            best = -np.inf
            for a in range(A):
                q = reward[s, a] + gamma * cont[s] * V[next_state[s, a]]
                if q > best:
                    best = q
            Vn[s] = best
            d = abs(best - V[s])
            if d > delta:
                delta = d
        V[:] = Vn
        deltas[it] = delta
        it += 1
        if delta < tol:
            break
    return V, deltas[:it]


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

if _accel.USE_NUMBA:
    conv3x3 = conv3x3_nb
    conv3x3_backward = conv3x3_backward_nb
    vi_forward = vi_forward_nb
    vi_backward = vi_backward_nb
    tabular_vi = tabular_vi_nb
else:
    conv3x3 = conv3x3_np
    conv3x3_backward = conv3x3_backward_np
    vi_forward = vi_forward_np
    vi_backward = vi_backward_np
    tabular_vi = tabular_vi_np
