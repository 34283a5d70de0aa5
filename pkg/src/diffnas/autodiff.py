"""Minimal reverse-mode autodiff over float64 numpy arrays.

Only the handful of ops the denoiser needs. Every op that performs
multiply-accumulates reports them to `mac_counter` so the analytic FLOPs
estimate can be cross-checked against an instrumented execution.
"""

from __future__ import annotations

import numpy as np


class MacCounter:
    """Counts multiply-accumulate operations executed by conv/linear/matmul."""

    def __init__(self) -> None:
        self.enabled = False
        self.total = 0

    def add(self, macs: int) -> None:
        if self.enabled:
            self.total += macs

    def reset(self) -> None:
        self.total = 0


mac_counter = MacCounter()


class Tensor:
    __slots__ = ("data", "grad", "_backward", "_prev")

    def __init__(self, data, prev=()):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self._backward = None
        self._prev = prev

    @property
    def shape(self):
        return self.data.shape

    def accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self, grad_output: np.ndarray) -> None:
        """Propagate grad_output through the recorded graph."""
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._prev:
                if id(p) not in seen:
                    stack.append((p, False))
        self.accumulate(np.asarray(grad_output, dtype=np.float64))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum g down to `shape` (inverse of numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def add(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data + b.data, prev=(a, b))

    def _bw(g):
        a.accumulate(_unbroadcast(g, a.data.shape))
        b.accumulate(_unbroadcast(g, b.data.shape))

    out._backward = _bw
    return out


def mul_const(a: Tensor, c) -> Tensor:
    """Elementwise multiply by a constant array/scalar (no grad through c)."""
    c = np.asarray(c, dtype=np.float64)
    out = Tensor(a.data * c, prev=(a,))

    def _bw(g):
        a.accumulate(_unbroadcast(g * c, a.data.shape))

    out._backward = _bw
    return out


def silu(x: Tensor) -> Tensor:
    s = 1.0 / (1.0 + np.exp(-x.data))
    out = Tensor(x.data * s, prev=(x,))

    def _bw(g):
        x.accumulate(g * (s * (1.0 + x.data * (1.0 - s))))

    out._backward = _bw
    return out


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x: (B, Din), w: (Dout, Din), b: (Dout,) -> (B, Dout)."""
    out = Tensor(x.data @ w.data.T + b.data, prev=(x, w, b))
    mac_counter.add(x.data.shape[0] * w.data.shape[0] * w.data.shape[1])

    def _bw(g):
        x.accumulate(g @ w.data)
        w.accumulate(g.T @ x.data)
        b.accumulate(g.sum(axis=0))

    out._backward = _bw
    return out


def conv1d(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Same-padded 1-D convolution. x: (B, Cin, L), w: (Cout, Cin, k), b: (Cout,)."""
    B, cin, L = x.data.shape
    cout, _, k = w.data.shape
    pad = k // 2
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad))) if pad else x.data
    # view: (B, Cin, L, k)
    view = np.lib.stride_tricks.sliding_window_view(xp, k, axis=2)
    y = np.einsum("oij,bilj->bol", w.data, view, optimize=True) + b.data[None, :, None]
    mac_counter.add(B * cout * cin * k * L)
    out = Tensor(y, prev=(x, w, b))

    def _bw(g):
        w.accumulate(np.einsum("bol,bilj->oij", g, view, optimize=True))
        b.accumulate(g.sum(axis=(0, 2)))
        dview = np.einsum("oij,bol->bilj", w.data, g, optimize=True)
        dxp = np.zeros_like(xp)
        for j in range(k):
            dxp[:, :, j : j + L] += dview[:, :, :, j]
        x.accumulate(dxp[:, :, pad : pad + L] if pad else dxp)

    out._backward = _bw
    return out


def bmatmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matmul: (B, n, m) @ (B, m, p) -> (B, n, p)."""
    out = Tensor(a.data @ b.data, prev=(a, b))
    Bn, n, m = a.data.shape
    p = b.data.shape[2]
    mac_counter.add(Bn * n * m * p)

    def _bw(g):
        a.accumulate(g @ b.data.transpose(0, 2, 1))
        b.accumulate(a.data.transpose(0, 2, 1) @ g)

    out._backward = _bw
    return out


def transpose_last2(x: Tensor) -> Tensor:
    out = Tensor(x.data.transpose(0, 2, 1), prev=(x,))

    def _bw(g):
        x.accumulate(g.transpose(0, 2, 1))

    out._backward = _bw
    return out


def softmax_last(x: Tensor) -> Tensor:
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(y, prev=(x,))

    def _bw(g):
        x.accumulate(y * (g - (g * y).sum(axis=-1, keepdims=True)))

    out._backward = _bw
    return out


def avgpool1d(x: Tensor, factor: int = 2) -> Tensor:
    B, C, L = x.data.shape
    y = x.data.reshape(B, C, L // factor, factor).mean(axis=3)
    out = Tensor(y, prev=(x,))

    def _bw(g):
        x.accumulate(np.repeat(g, factor, axis=2) / factor)

    out._backward = _bw
    return out


def upsample_nearest(x: Tensor, factor: int = 2) -> Tensor:
    out = Tensor(np.repeat(x.data, factor, axis=2), prev=(x,))
    B, C, L = x.data.shape

    def _bw(g):
        x.accumulate(g.reshape(B, C, L, factor).sum(axis=3))

    out._backward = _bw
    return out


def expand_last(x: Tensor) -> Tensor:
    """Append a broadcastable trailing axis: (B, C) -> (B, C, 1)."""
    out = Tensor(x.data[..., None], prev=(x,))

    def _bw(g):
        x.accumulate(g[..., 0])

    out._backward = _bw
    return out


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(np.concatenate([a.data, b.data], axis=1), prev=(a, b))
    ca = a.data.shape[1]

    def _bw(g):
        a.accumulate(g[:, :ca])
        b.accumulate(g[:, ca:])

    out._backward = _bw
    return out
