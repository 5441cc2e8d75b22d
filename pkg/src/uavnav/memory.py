"""Differentiable external memory (one write head, several read heads).

Write: usage/retention update, allocation by ascending usage, content
lookup, then the erase-and-add rule

    M_t = M_{t-1} * (1 - w_w e^T) + w_w v^T          (elementwise *)

followed by the temporal link and precedence updates.  Read: per head a
mix of backward link, content and forward link weightings, then
``r = M_t^T w_r``.

Every forward function returns its result plus a cache; the matching
``*_backward`` takes the cache and upstream gradients.
"""
from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

COS_EPS = 1e-6


@dataclass(eq=False)
class MemoryState:
    memory: np.ndarray          # (N, W)
    usage: np.ndarray           # (N,)
    precedence: np.ndarray      # (N,)
    link: np.ndarray            # (N, N)
    write_weights: np.ndarray   # (N,)
    read_weights: np.ndarray    # (R, N)
    read_vectors: np.ndarray    # (R, W)

    @classmethod
    def zeros(cls, n_slots: int = 32, width: int = 8, read_heads: int = 4) -> "MemoryState":
        return cls(np.zeros((n_slots, width)), np.zeros(n_slots), np.zeros(n_slots),
                   np.zeros((n_slots, n_slots)), np.zeros(n_slots), np.zeros((read_heads, n_slots)),
                   np.zeros((read_heads, width)))

    @property
    def n_slots(self) -> int:
        return self.memory.shape[0]

    def arrays(self) -> dict[str, np.ndarray]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def zeros_like(self) -> "MemoryState":
        return MemoryState(**{k: np.zeros_like(v) for k, v in self.arrays().items()})

    def copy(self) -> "MemoryState":
        return MemoryState(**{k: v.copy() for k, v in self.arrays().items()})

    def check(self, slack: float = 1e-9) -> None:
        """Raise AssertionError if a structural invariant is violated."""
        for name in ("write_weights", "read_weights", "usage", "precedence", "link"):
            assert (getattr(self, name) >= -slack).all(), f"{name} has negative entries"
        assert self.write_weights.sum() <= 1 + slack
        assert (self.read_weights.sum(axis=1) <= 1 + slack).all()
        assert self.precedence.sum() <= 1 + slack
        assert (self.usage <= 1 + slack).all()
        assert np.abs(np.diag(self.link)).max(initial=0.0) <= slack
        assert (self.link.sum(axis=0) <= 1 + slack).all()
        assert (self.link.sum(axis=1) <= 1 + slack).all()


# ---------------------------------------------------------------------------
# interface vector
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class InterfaceVector:
    read_keys: np.ndarray       # (R, W)
    read_strengths: np.ndarray  # (R,)   > 1 via oneplus
    write_key: np.ndarray       # (W,)
    write_strength: float
    erase: np.ndarray           # (W,)   in (0, 1)
    write_vector: np.ndarray    # (W,)
    free_gates: np.ndarray      # (R,)
    allocation_gate: float
    write_gate: float
    read_modes: np.ndarray      # (R, 3)  backward / content / forward


def interface_size(width: int, read_heads: int) -> int:
    return read_heads * width + 3 * width + 5 * read_heads + 3


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _oneplus(x):
    return 1.0 + np.logaddexp(0.0, x)


def _slices(width: int, read_heads: int):
    R, W = read_heads, width
    sizes = [("read_keys", R * W), ("read_strengths", R), ("write_key", W), ("write_strength", 1),
             ("erase", W), ("write_vector", W), ("free_gates", R), ("allocation_gate", 1),
             ("write_gate", 1), ("read_modes", 3 * R)]
    out, i = {}, 0
    for name, n in sizes:
        out[name] = slice(i, i + n)
        i += n
    return out


def parse_interface(raw, width: int, read_heads: int) -> InterfaceVector:
    """Squash a raw controller emission into a valid interface vector."""
    raw = np.asarray(raw, dtype=np.float64)
    if raw.shape != (interface_size(width, read_heads),):
        raise ValueError(f"raw interface has shape {raw.shape}")
    s = _slices(width, read_heads)
    modes = raw[s["read_modes"]].reshape(read_heads, 3)
    modes = np.exp(modes - modes.max(axis=1, keepdims=True))
    modes /= modes.sum(axis=1, keepdims=True)
    return InterfaceVector(
        read_keys=raw[s["read_keys"]].reshape(read_heads, width).copy(),
        read_strengths=_oneplus(raw[s["read_strengths"]]),
        write_key=raw[s["write_key"]].copy(),
        write_strength=float(_oneplus(raw[s["write_strength"]])[0]),
        erase=_sigmoid(raw[s["erase"]]),
        write_vector=raw[s["write_vector"]].copy(),
        free_gates=_sigmoid(raw[s["free_gates"]]),
        allocation_gate=float(_sigmoid(raw[s["allocation_gate"]])[0]),
        write_gate=float(_sigmoid(raw[s["write_gate"]])[0]),
        read_modes=modes,
    )


def parse_interface_backward(raw, iface: InterfaceVector, d: InterfaceVector) -> np.ndarray:
    raw = np.asarray(raw, dtype=np.float64)
    read_heads, width = iface.read_keys.shape
    s = _slices(width, read_heads)
    out = np.zeros_like(raw)
    out[s["read_keys"]] = np.ravel(d.read_keys)
    out[s["read_strengths"]] = d.read_strengths * _sigmoid(raw[s["read_strengths"]])
    out[s["write_key"]] = d.write_key
    out[s["write_strength"]] = d.write_strength * _sigmoid(raw[s["write_strength"]])
    out[s["erase"]] = d.erase * iface.erase * (1 - iface.erase)
    out[s["write_vector"]] = d.write_vector
    out[s["free_gates"]] = d.free_gates * iface.free_gates * (1 - iface.free_gates)
    out[s["allocation_gate"]] = d.allocation_gate * iface.allocation_gate * (1 - iface.allocation_gate)
    out[s["write_gate"]] = d.write_gate * iface.write_gate * (1 - iface.write_gate)
    pm = iface.read_modes
    dm = np.asarray(d.read_modes)
    out[s["read_modes"]] = (pm * (dm - (dm * pm).sum(axis=1, keepdims=True))).ravel()
    return out


def zero_interface_grad(width: int, read_heads: int) -> InterfaceVector:
    return InterfaceVector(np.zeros((read_heads, width)), np.zeros(read_heads), np.zeros(width), 0.0,
                           np.zeros(width), np.zeros(width), np.zeros(read_heads), 0.0, 0.0,
                           np.zeros((read_heads, 3)))


# ---------------------------------------------------------------------------
# addressing
# ---------------------------------------------------------------------------


def content_address(memory, key, strength, return_cache: bool = False):
    """softmax_i(strength * cos(memory[i], key)); zero rows score 0."""
    memory = np.asarray(memory, dtype=np.float64)
    key = np.asarray(key, dtype=np.float64)
    mnorm = np.sqrt((memory * memory).sum(axis=1))
    knorm = float(np.sqrt(key @ key))
    dots = memory @ key
    denom = mnorm * knorm + COS_EPS
    sim = dots / denom
    z = strength * sim
    w = np.exp(z - z.max())
    w /= w.sum()
    if not return_cache:
        return w
    return w, (memory, key, strength, mnorm, knorm, dots, denom, sim, w)


def content_address_backward(cache, dw):
    memory, key, strength, mnorm, knorm, dots, denom, sim, w = cache
    dz = w * (dw - w @ dw)
    d_strength = float(dz @ sim)
    dsim = strength * dz
    ddots = dsim / denom
    ddenom = -dsim * dots / denom ** 2
    safe_m = np.where(mnorm > 0, mnorm, 1.0)
    d_memory = ddots[:, None] * key[None, :] + (ddenom * knorm / safe_m)[:, None] * memory
    d_key = memory.T @ ddots
    if knorm > 0:
        d_key += (ddenom @ mnorm) / knorm * key
    return d_memory, d_key, d_strength


def allocation_weights(usage, return_cache: bool = False):
    """a[phi_j] = (1 - u[phi_j]) * prod_{i<j} u[phi_i], phi = ascending usage order."""
    usage = np.asarray(usage, dtype=np.float64)
    order = np.argsort(usage, kind="stable")
    us = usage[order]
    excl = np.concatenate(([1.0], np.cumprod(us)[:-1]))
    a_sorted = (1.0 - us) * excl
    a = np.empty_like(usage)
    a[order] = a_sorted
    if not return_cache:
        return a
    return a, (order, us, excl)


def allocation_weights_backward(cache, da):
    order, us, excl = cache
    n = us.shape[0]
    da_s = da[order]
    d_us = -da_s * excl
    dexcl = da_s * (1.0 - us)
    # d excl_j / d us_i = prod_{l<j, l != i} us_l  for i < j
    if n > 1:
        tri = np.triu(np.ones((n, n)), k=1)          # tri[i, j] = 1 for i < j
        prods = np.ones((n, n))
        for j in range(1, n):
            head = us[:j]
            left = np.concatenate(([1.0], np.cumprod(head)[:-1]))
            right = np.concatenate((np.cumprod(head[::-1])[::-1][1:], [1.0]))
            prods[:j, j] = left * right
        d_us += (tri * prods) @ dexcl
    d_usage = np.empty_like(d_us)
    d_usage[order] = d_us
    return d_usage


# ---------------------------------------------------------------------------
# write / read
# ---------------------------------------------------------------------------


def write(state: MemoryState, iface: InterfaceVector):
    """Apply the write head.  Returns ``(new_state, cache)``; read fields are carried over."""
    f = iface.free_gates
    wr_prev = state.read_weights
    ww_prev = state.write_weights
    factors = 1.0 - f[:, None] * wr_prev                 # (R, N)
    psi = factors.prod(axis=0)
    pre_u = state.usage + ww_prev - state.usage * ww_prev
    usage = pre_u * psi
    alloc, alloc_cache = allocation_weights(usage, return_cache=True)
    cw, cw_cache = content_address(state.memory, iface.write_key, iface.write_strength, return_cache=True)
    ga, gw = iface.allocation_gate, iface.write_gate
    ww = gw * (ga * alloc + (1.0 - ga) * cw)
    e, v = iface.erase, iface.write_vector
    keep = 1.0 - np.outer(ww, e)
    memory = state.memory * keep + np.outer(ww, v)
    p = state.precedence
    link = (1.0 - ww[:, None] - ww[None, :]) * state.link + np.outer(ww, p)
    np.fill_diagonal(link, 0.0)
    precedence = (1.0 - ww.sum()) * p + ww
    new = MemoryState(memory, usage, precedence, link, ww, wr_prev.copy(), state.read_vectors.copy())
    cache = dict(state=state, iface=iface, factors=factors, psi=psi, pre_u=pre_u, alloc=alloc,
                 alloc_cache=alloc_cache, cw=cw, cw_cache=cw_cache, keep=keep)
    return new, cache


def write_backward(cache, d_new: MemoryState):
    """Gradients wrt the previous state and the interface vector.

    ``d_new.read_weights`` / ``d_new.read_vectors`` pass straight through.
    """
    st: MemoryState = cache["state"]
    it: InterfaceVector = cache["iface"]
    R, N = st.read_weights.shape
    W = st.memory.shape[1]
    ga, gw = it.allocation_gate, it.write_gate
    alloc, cw = cache["alloc"], cache["cw"]
    ww = gw * (ga * alloc + (1.0 - ga) * cw)
    p = st.precedence
    e, v = it.erase, it.write_vector

    d = st.zeros_like()
    di = zero_interface_grad(W, R)
    d.read_weights = d_new.read_weights.copy()
    d.read_vectors = d_new.read_vectors.copy()
    dww = d_new.write_weights.copy()

    # precedence
    dpn = d_new.precedence
    d.precedence += (1.0 - ww.sum()) * dpn
    dww += dpn - dpn @ p
    # link
    G = d_new.link.copy()
    np.fill_diagonal(G, 0.0)
    GL = G * st.link
    d.link += G * (1.0 - ww[:, None] - ww[None, :])
    dww += -GL.sum(axis=1) - GL.sum(axis=0) + G @ p
    d.precedence += G.T @ ww
    # memory
    dM = d_new.memory
    d.memory += dM * cache["keep"]
    dww += -(dM * st.memory) @ e + dM @ v
    di.erase = -(dM * st.memory).T @ ww
    di.write_vector = dM.T @ ww
    # write weighting
    di.write_gate = float(dww @ (ga * alloc + (1.0 - ga) * cw))
    di.allocation_gate = float(gw * (dww @ (alloc - cw)))
    d_alloc = dww * gw * ga
    d_cw = dww * gw * (1.0 - ga)
    dmem_c, di.write_key, di.write_strength = content_address_backward(cache["cw_cache"], d_cw)
    d.memory += dmem_c
    # usage
    du = d_new.usage + allocation_weights_backward(cache["alloc_cache"], d_alloc)
    psi, pre_u, factors = cache["psi"], cache["pre_u"], cache["factors"]
    dpsi = du * pre_u
    dpre = du * psi
    d.usage += dpre * (1.0 - st.write_weights)
    d.write_weights += dpre * (1.0 - st.usage)
    # psi = prod_r factors[r]; d factors[r] = dpsi * prod_{q != r} factors[q]
    dfac = np.empty_like(factors)
    for r in range(R):
        others = np.prod(np.delete(factors, r, axis=0), axis=0) if R > 1 else np.ones(N)
        dfac[r] = dpsi * others
    di.free_gates = -(dfac * st.read_weights).sum(axis=1)
    d.read_weights += -dfac * it.free_gates[:, None]
    return d, di


def read(state: MemoryState, iface: InterfaceVector):
    """Read heads on the post-write memory.  Returns ``(new_state, cache)``."""
    R = state.read_weights.shape[0]
    wr_prev = state.read_weights
    caches = []
    w_new = np.empty_like(wr_prev)
    for h in range(R):
        c, cc = content_address(state.memory, iface.read_keys[h], iface.read_strengths[h], return_cache=True)
        fwd = state.link @ wr_prev[h]
        bwd = state.link.T @ wr_prev[h]
        pi = iface.read_modes[h]
        w_new[h] = pi[0] * bwd + pi[1] * c + pi[2] * fwd
        caches.append((c, cc, fwd, bwd))
    reads = w_new @ state.memory
    new = MemoryState(state.memory, state.usage, state.precedence, state.link, state.write_weights,
                      w_new, reads)
    return new, dict(state=state, iface=iface, caches=caches, w_new=w_new)


def read_backward(cache, d_new: MemoryState):
    st: MemoryState = cache["state"]
    it: InterfaceVector = cache["iface"]
    R, N = st.read_weights.shape
    W = st.memory.shape[1]
    d = MemoryState(d_new.memory.copy(), d_new.usage.copy(), d_new.precedence.copy(), d_new.link.copy(),
                    d_new.write_weights.copy(), np.zeros((R, N)), np.zeros((R, W)))
    di = zero_interface_grad(W, R)
    w_new = cache["w_new"]
    dr = d_new.read_vectors
    d.memory += w_new.T @ dr
    dw_all = d_new.read_weights + dr @ st.memory.T
    for h in range(R):
        c, cc, fwd, bwd = cache["caches"][h]
        pi = it.read_modes[h]
        dw = dw_all[h]
        di.read_modes[h] = (dw @ bwd, dw @ c, dw @ fwd)
        dbwd, dc, dfwd = pi[0] * dw, pi[1] * dw, pi[2] * dw
        wp = st.read_weights[h]
        d.link += np.outer(dfwd, wp) + np.outer(wp, dbwd)
        d.read_weights[h] += st.link.T @ dfwd + st.link @ dbwd
        dm, di.read_keys[h], di.read_strengths[h] = content_address_backward(cc, dc)
        d.memory += dm
    return d, di


def add_interface_grads(a: InterfaceVector, b: InterfaceVector) -> InterfaceVector:
    return InterfaceVector(*(getattr(a, f.name) + getattr(b, f.name) for f in fields(InterfaceVector)))


def memory_step(state: MemoryState, iface: InterfaceVector):
    """Write then read.  Returns ``(new_state, cache)``."""
    mid, wc = write(state, iface)
    new, rc = read(mid, iface)
    return new, (wc, rc)


def memory_step_backward(cache, d_new: MemoryState):
    wc, rc = cache
    d_mid, di_r = read_backward(rc, d_new)
    d_prev, di_w = write_backward(wc, d_mid)
    return d_prev, add_interface_grads(di_r, di_w)


def save_snapshot(state: MemoryState, path) -> None:
    from . import tensorio

    tensorio.save(path, {f"memory/{k}": v for k, v in state.arrays().items()})


def load_snapshot(path) -> MemoryState:
    from . import tensorio

    t = tensorio.load(path)
    try:
        return MemoryState(**{f.name: t[f"memory/{f.name}"] for f in fields(MemoryState)})
    except KeyError as exc:
        raise tensorio.TensorFileError(f"snapshot lacks {exc.args[0]}") from None
