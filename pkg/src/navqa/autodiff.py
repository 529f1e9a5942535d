"""Minimal reverse-mode tape over numpy arrays.

Every op's vector-Jacobian product is derived by hand and validated against
central finite differences in the test suite. Arrays are float64 so finite
difference checks at step 1e-4 are meaningful; checkpoints downcast to
float32 at the file boundary only.

Sized for models with a few thousand parameters: no broadcasting rules, no
batching, shapes must match exactly.
"""
from __future__ import annotations

from contextlib import contextmanager
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import DimensionMismatch

_grad_enabled = True


@contextmanager
def no_grad():
    """Disable taping inside the block; forward values are unaffected."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(
        self,
        data: np.ndarray,
        requires_grad: bool = False,
        parents: tuple = (),
        vjp: Optional[Callable] = None,
    ):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._vjp = vjp

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def constant(data) -> Tensor:
    return Tensor(np.asarray(data, dtype=np.float64))


def parameter(data) -> Tensor:
    return Tensor(np.asarray(data, dtype=np.float64), requires_grad=True)


def zeros(shape) -> Tensor:
    return Tensor(np.zeros(shape, dtype=np.float64))


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _make(data: np.ndarray, parents: Sequence[Tensor], vjp: Callable) -> Tensor:
    if _grad_enabled and any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, parents=tuple(parents), vjp=vjp)
    return Tensor(data)


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into .grad of every reachable parameter."""
    if loss.data.shape != ():
        raise DimensionMismatch("backward expects a scalar loss")
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            stack.append((p, False))
    loss.grad = np.ones((), dtype=np.float64)
    for node in reversed(topo):
        if node._vjp is not None and node.grad is not None:
            node._vjp(node.grad)
            # clear intermediate grads so shared subgraphs (e.g. cached masked
            # language states) can back-propagate again without double counting
            node.grad = None


def _check_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.data.shape != b.data.shape:
        raise DimensionMismatch(f"{op}: {a.data.shape} vs {b.data.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "add")

    def vjp(g):
        _accum(a, g)
        _accum(b, g)

    return _make(a.data + b.data, (a, b), vjp)


def add_n(ts: Sequence[Tensor]) -> Tensor:
    out = ts[0]
    for t in ts[1:]:
        out = add(out, t)
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "sub")

    def vjp(g):
        _accum(a, g)
        _accum(b, -g)

    return _make(a.data - b.data, (a, b), vjp)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "mul")

    def vjp(g):
        _accum(a, g * b.data)
        _accum(b, g * a.data)

    return _make(a.data * b.data, (a, b), vjp)


def scale(a: Tensor, c: float) -> Tensor:
    def vjp(g):
        _accum(a, g * c)

    return _make(a.data * c, (a,), vjp)


def concat(parts: Sequence[Tensor]) -> Tensor:
    sizes = [p.data.shape[0] for p in parts]
    offs = np.cumsum([0] + sizes)

    def vjp(g):
        for p, lo, hi in zip(parts, offs[:-1], offs[1:]):
            _accum(p, g[lo:hi])

    return _make(np.concatenate([p.data for p in parts]), tuple(parts), vjp)


def matvec(m: Tensor, v: Tensor) -> Tensor:
    if m.data.ndim != 2 or v.data.ndim != 1 or m.data.shape[1] != v.data.shape[0]:
        raise DimensionMismatch(f"matvec: {m.data.shape} @ {v.data.shape}")

    def vjp(g):
        _accum(m, np.outer(g, v.data))
        _accum(v, m.data.T @ g)

    return _make(m.data @ v.data, (m, v), vjp)


def tmatvec(m: Tensor, v: Tensor) -> Tensor:
    """m.T @ v for m of shape (k, n) and v of shape (k,)."""
    if m.data.ndim != 2 or v.data.ndim != 1 or m.data.shape[0] != v.data.shape[0]:
        raise DimensionMismatch(f"tmatvec: {m.data.shape}.T @ {v.data.shape}")

    def vjp(g):
        _accum(m, np.outer(v.data, g))
        _accum(v, m.data @ g)

    return _make(m.data.T @ v.data, (m, v), vjp)


def dot(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "dot")

    def vjp(g):
        _accum(a, g * b.data)
        _accum(b, g * a.data)

    return _make(np.asarray(a.data @ b.data), (a, b), vjp)


def stack(rows: Sequence[Tensor]) -> Tensor:
    def vjp(g):
        for i, r in enumerate(rows):
            _accum(r, g[i])

    return _make(np.stack([r.data for r in rows]), tuple(rows), vjp)


def row(m: Tensor, i: int) -> Tensor:
    def vjp(g):
        if m.requires_grad:
            if m.grad is None:
                m.grad = np.zeros_like(m.data)
            m.grad[i] += g

    return _make(m.data[i].copy(), (m,), vjp)


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)

    def vjp(g):
        _accum(a, g * (1.0 - out * out))

    return _make(out, (a,), vjp)


def sigmoid(a: Tensor) -> Tensor:
    out = 1.0 / (1.0 + np.exp(-a.data))

    def vjp(g):
        _accum(a, g * out * (1.0 - out))

    return _make(out, (a,), vjp)


def relu(a: Tensor) -> Tensor:
    out = np.maximum(a.data, 0.0)

    def vjp(g):
        _accum(a, g * (a.data > 0))

    return _make(out, (a,), vjp)


def softmax(a: Tensor) -> Tensor:
    z = a.data - a.data.max()
    e = np.exp(z)
    s = e / e.sum()

    def vjp(g):
        _accum(a, s * (g - float(g @ s)))

    return _make(s, (a,), vjp)


def masked_softmax(a: Tensor, avail: np.ndarray) -> Tensor:
    """Softmax with unavailable entries pinned to probability exactly 0.
    ``avail`` is a constant boolean mask; no gradient flows to masked slots."""
    work = np.where(avail, a.data, -np.inf)
    z = work - work.max()
    e = np.exp(z)
    s = e / e.sum()

    def vjp(g):
        _accum(a, s * (g - float(g @ s)))

    return _make(s, (a,), vjp)


def cross_entropy(logits: Tensor, target: int, avail: Optional[np.ndarray] = None) -> Tensor:
    """Negative log softmax probability of ``target``.

    With ``avail`` given, unavailable logits are pushed to -inf first so their
    probability is exactly 0; the target must be available."""
    if avail is not None:
        if not avail[target]:
            raise DimensionMismatch("cross_entropy: target is masked out")
        work = np.where(avail, logits.data, -np.inf)
    else:
        work = logits.data
    m = work.max()
    e = np.exp(work - m)
    z = e.sum()
    p = e / z
    loss = np.log(z) + m - work[target]

    def vjp(g):
        d = p.copy()
        d[target] -= 1.0
        _accum(logits, float(g) * d)

    return _make(np.asarray(loss), (logits,), vjp)


def gru_cell(
    x: Tensor,
    h: Tensor,
    wz: Tensor,
    uz: Tensor,
    bz: Tensor,
    wr: Tensor,
    ur: Tensor,
    br: Tensor,
    wh: Tensor,
    uh: Tensor,
    bh: Tensor,
) -> Tensor:
    """One 3-gate gated-recurrent step, fused into a single tape node.

        z = sigmoid(Wz x + Uz h + bz)
        r = sigmoid(Wr x + Ur h + br)
        c = tanh(Wh x + Uh (r*h) + bh)
        h' = (1-z)*h + z*c
    """
    xd, hd = x.data, h.data
    z = 1.0 / (1.0 + np.exp(-(wz.data @ xd + uz.data @ hd + bz.data)))
    r = 1.0 / (1.0 + np.exp(-(wr.data @ xd + ur.data @ hd + br.data)))
    rh = r * hd
    c = np.tanh(wh.data @ xd + uh.data @ rh + bh.data)
    out = (1.0 - z) * hd + z * c

    def vjp(g):
        dz = g * (c - hd) * z * (1.0 - z)
        dc = g * z * (1.0 - c * c)
        dh = g * (1.0 - z)
        drh = uh.data.T @ dc
        dr = drh * hd * r * (1.0 - r)
        dh += drh * r
        dh += uz.data.T @ dz
        dh += ur.data.T @ dr
        dx = wz.data.T @ dz
        dx += wr.data.T @ dr
        dx += wh.data.T @ dc
        xrow, hrow = xd[None, :], hd[None, :]
        _accum(wz, dz[:, None] * xrow)
        _accum(uz, dz[:, None] * hrow)
        _accum(bz, dz)
        _accum(wr, dr[:, None] * xrow)
        _accum(ur, dr[:, None] * hrow)
        _accum(br, dr)
        _accum(wh, dc[:, None] * xrow)
        _accum(uh, dc[:, None] * rh[None, :])
        _accum(bh, dc)
        _accum(x, dx)
        _accum(h, dh)

    return _make(out, (x, h, wz, uz, bz, wr, ur, br, wh, uh, bh), vjp)


def affine(w: Tensor, x: Tensor, b: Tensor, activation: Optional[str] = None) -> Tensor:
    """w @ x + b with an optional fused tanh/sigmoid, one tape node."""
    pre = w.data @ x.data + b.data
    if activation is None:
        out, dact = pre, None
    elif activation == "tanh":
        out = np.tanh(pre)
        dact = 1.0 - out * out
    elif activation == "sigmoid":
        out = 1.0 / (1.0 + np.exp(-pre))
        dact = out * (1.0 - out)
    else:
        raise ValueError(f"unknown activation {activation!r}")

    def vjp(g):
        gp = g if dact is None else g * dact
        _accum(w, np.outer(gp, x.data))
        _accum(b, gp)
        _accum(x, w.data.T @ gp)

    return _make(out, (w, x, b), vjp)


def spatial_sum(x: Tensor) -> Tensor:
    """(H, W, C) -> (C,) sum over the spatial grid."""

    def vjp(g):
        _accum(x, np.broadcast_to(g, x.data.shape).copy())

    return _make(x.data.sum(axis=(0, 1)), (x,), vjp)


def tile_concat(const_map: np.ndarray, q: Tensor) -> Tensor:
    """Tile vector ``q`` over the grid and concatenate channel-wise with a
    constant (H, W, Cm) map."""
    h, w, _ = const_map.shape
    tiled = np.broadcast_to(q.data, (h, w, q.data.shape[0]))
    cm = const_map.shape[2]

    def vjp(g):
        _accum(q, g[:, :, cm:].sum(axis=(0, 1)))

    return _make(np.concatenate([const_map, tiled], axis=2), (q,), vjp)


def conv3x3(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """3x3 same-size convolution with zero padding.

    x: (H, W, Cin), w: (Cout, 3, 3, Cin), b: (Cout,) -> (H, W, Cout).
    """
    hh, ww, cin = x.data.shape
    cout = w.data.shape[0]
    if w.data.shape != (cout, 3, 3, cin) or b.data.shape != (cout,):
        raise DimensionMismatch(f"conv3x3: x{x.data.shape} w{w.data.shape} b{b.data.shape}")
    pad = np.zeros((hh + 2, ww + 2, cin), dtype=np.float64)
    pad[1 : hh + 1, 1 : ww + 1] = x.data
    # columns: (H*W, 3*3*Cin) laid out as (ki, kj, cin)
    col = np.empty((hh * ww, 9 * cin), dtype=np.float64)
    k = 0
    for ki in range(3):
        for kj in range(3):
            col[:, k * cin : (k + 1) * cin] = pad[ki : ki + hh, kj : kj + ww].reshape(
                hh * ww, cin
            )
            k += 1
    wm = w.data.reshape(cout, 9 * cin)
    out = (col @ wm.T + b.data).reshape(hh, ww, cout)

    def vjp(g):
        g2 = g.reshape(hh * ww, cout)
        _accum(b, g2.sum(axis=0))
        _accum(w, (g2.T @ col).reshape(cout, 3, 3, cin))
        if x.requires_grad:
            gcol = g2 @ wm  # (H*W, 9*Cin)
            gpad = np.zeros_like(pad)
            k2 = 0
            for ki in range(3):
                for kj in range(3):
                    gpad[ki : ki + hh, kj : kj + ww] += gcol[
                        :, k2 * cin : (k2 + 1) * cin
                    ].reshape(hh, ww, cin)
                    k2 += 1
            _accum(x, gpad[1 : hh + 1, 1 : ww + 1])

    return _make(out, (x, w, b), vjp)
