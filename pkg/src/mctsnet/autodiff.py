"""Tape-based reverse-mode differentiation over numpy arrays.

Every forward operation appends a record to an append-only tape, so the
tape's order is already a topological order of the computation.  The
backward pass walks the tape once, in exact reverse append order, routing
each node's output gradient to its inputs through a per-op vector-Jacobian
product.  Because the tape is rebuilt per forward pass, data-dependent
control flow (a different search tree per input) needs no special casing.

Shapes are checked exactly; there is no implicit broadcasting.  Scalars are
rank-0 arrays.  Parameter gradients accumulate additively across graphs
until :func:`~mctsnet.params.sgd_step` consumes them.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .params import ParamStore


class GraphError(RuntimeError):
    """Misuse of the tape (non-scalar loss, repeated backward, bad shapes)."""


class Node:
    """One tape record: an operation's output plus what backward needs."""

    __slots__ = ("idx", "op", "inputs", "value", "vjp", "param")

    def __init__(self, idx, op, inputs, value, vjp, param=None):
        self.idx: int = idx
        self.op: str = op
        self.inputs: tuple[Node, ...] = inputs
        self.value: np.ndarray = value
        self.vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = vjp
        self.param: str | None = param

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __repr__(self):
        return f"Node({self.idx}, {self.op}, shape={self.value.shape})"


class Graph:
    """A single forward pass: append-only tape bound to one ParamStore."""

    def __init__(self, params: ParamStore):
        self.params = params
        self.dtype = params.dtype
        self.nodes: list[Node] = []
        self._param_nodes: dict[str, Node] = {}
        self._backward_done = False

    def _append(self, op, inputs, value, vjp, param=None) -> Node:
        node = Node(len(self.nodes), op, tuple(inputs), value, vjp, param)
        self.nodes.append(node)
        return node

    # -- leaves ------------------------------------------------------------

    def param(self, name: str) -> Node:
        """Leaf holding the current value of a named parameter.

        Repeated requests return the same tape node, so gradient
        contributions from every use accumulate on one record.
        """
        if name in self._param_nodes:
            return self._param_nodes[name]
        if name not in self.params:
            raise KeyError(f"parameter {name!r} not found in store")
        node = self._append("param", (), self.params.values[name], None, param=name)
        self._param_nodes[name] = node
        return node

    def constant(self, array) -> Node:
        """Leaf with no gradient (inputs, stop-gradient values)."""
        return self._append("const", (), np.asarray(array, dtype=self.dtype), None)

    # -- elementwise and shape ops ------------------------------------------

    def add(self, a: Node, b: Node) -> Node:
        self._same_shape("add", a, b)
        return self._append("add", (a, b), a.value + b.value, lambda g: (g, g))

    def sub(self, a: Node, b: Node) -> Node:
        self._same_shape("sub", a, b)
        return self._append("sub", (a, b), a.value - b.value, lambda g: (g, -g))

    def mul(self, a: Node, b: Node) -> Node:
        self._same_shape("mul", a, b)
        av, bv = a.value, b.value
        return self._append("mul", (a, b), av * bv, lambda g: (g * bv, g * av))

    def scale(self, x: Node, c: float) -> Node:
        c = float(c)
        return self._append("scale", (x,), x.value * c, lambda g: (g * c,))

    def scalar_mul(self, s: Node, x: Node) -> Node:
        """Learned scalar times an arbitrary tensor."""
        if s.value.shape != ():
            raise GraphError(f"scalar_mul expects a rank-0 scalar, got shape {s.value.shape}")
        sv, xv = s.value, x.value
        return self._append(
            "scalar_mul", (s, x), sv * xv, lambda g: (np.asarray(np.sum(g * xv)), sv * g)
        )

    def concat(self, parts: Sequence[Node]) -> Node:
        for p in parts:
            if p.value.ndim != 1:
                raise GraphError(f"concat expects 1-D parts, got shape {p.value.shape}")
        sizes = [p.value.shape[0] for p in parts]
        splits = np.cumsum(sizes)[:-1]

        def vjp(g):
            return tuple(np.split(g, splits))

        return self._append("concat", tuple(parts), np.concatenate([p.value for p in parts]), vjp)

    def flatten(self, x: Node) -> Node:
        shape = x.value.shape
        return self._append("flatten", (x,), x.value.reshape(-1), lambda g: (g.reshape(shape),))

    def pick(self, x: Node, index: int) -> Node:
        if x.value.ndim != 1:
            raise GraphError(f"pick expects a 1-D tensor, got shape {x.value.shape}")
        if not 0 <= index < x.value.shape[0]:
            raise GraphError(f"pick index {index} out of range for length {x.value.shape[0]}")
        size = x.value.shape[0]

        def vjp(g):
            out = np.zeros(size, dtype=g.dtype)
            out[index] = g
            return (out,)

        return self._append("pick", (x,), np.asarray(x.value[index]), vjp)

    def sum_all(self, x: Node) -> Node:
        shape = x.value.shape
        return self._append(
            "sum", (x,), np.asarray(np.sum(x.value)), lambda g: (np.full(shape, g, dtype=g.dtype),)
        )

    def exp(self, x: Node) -> Node:
        y = np.exp(x.value)
        return self._append("exp", (x,), y, lambda g: (g * y,))

    def dot(self, a: Node, b: Node) -> Node:
        self._same_shape("dot", a, b)
        av, bv = a.value, b.value
        return self._append(
            "dot", (a, b), np.asarray(np.dot(av.ravel(), bv.ravel())),
            lambda g: (g * bv, g * av),
        )

    # -- nonlinearities ------------------------------------------------------

    def pointwise(self, x: Node, kind: str) -> Node:
        if kind == "relu":
            y = np.maximum(x.value, 0.0)
            mask = x.value > 0.0
            return self._append("relu", (x,), y, lambda g: (g * mask,))
        if kind == "sigmoid":
            v = x.value
            y = np.where(v >= 0, 1.0 / (1.0 + np.exp(-np.abs(v))), np.exp(-np.abs(v)) / (1.0 + np.exp(-np.abs(v))))
            return self._append("sigmoid", (x,), y, lambda g: (g * y * (1.0 - y),))
        if kind == "tanh":
            y = np.tanh(x.value)
            return self._append("tanh", (x,), y, lambda g: (g * (1.0 - y * y),))
        raise GraphError(f"unknown pointwise kind {kind!r} (expected relu|sigmoid|tanh)")

    def relu(self, x: Node) -> Node:
        return self.pointwise(x, "relu")

    def sigmoid(self, x: Node) -> Node:
        return self.pointwise(x, "sigmoid")

    def tanh(self, x: Node) -> Node:
        return self.pointwise(x, "tanh")

    # -- dense and convolutional layers ---------------------------------------

    def linear(self, x: Node, name: str) -> Node:
        """x @ W + b with parameters ``name.W`` [I, O] and ``name.b`` [O].

        Accepts a single vector [I] or a batch [B, I].
        """
        w = self.param(f"{name}.W")
        b = self.param(f"{name}.b")
        xv, wv, bv = x.value, w.value, b.value
        if xv.ndim not in (1, 2):
            raise GraphError(f"linear {name!r}: input must be 1-D or 2-D, got shape {xv.shape}")
        if xv.shape[-1] != wv.shape[0]:
            raise GraphError(
                f"linear {name!r}: input shape {xv.shape} does not match weight shape {wv.shape}"
            )
        y = xv @ wv + bv

        if xv.ndim == 1:
            def vjp(g):
                return (g @ wv.T, np.outer(xv, g), g)
        else:
            def vjp(g):
                return (g @ wv.T, xv.T @ g, g.sum(axis=0))

        return self._append("linear", (x, w, b), y, vjp)

    def conv3x3(self, x: Node, name: str) -> Node:
        """3x3 same-padding cross-correlation; kernel ``name.K`` [Cout, Cin, 3, 3]."""
        return self._conv(x, name, 3, 1)

    def conv1x1(self, x: Node, name: str) -> Node:
        return self._conv(x, name, 1, 0)

    def _conv(self, x: Node, name: str, ksize: int, pad: int) -> Node:
        k = self.param(f"{name}.K")
        b = self.param(f"{name}.b")
        kv, bv = k.value, b.value
        squeeze = x.value.ndim == 3
        xv = x.value[None] if squeeze else x.value
        if xv.ndim != 4:
            raise GraphError(f"conv {name!r}: input must be [C,H,W] or [B,C,H,W], got {x.value.shape}")
        bsz, c_in, hh, ww = xv.shape
        c_out, kc_in, kh, kw = kv.shape
        if (kh, kw) != (ksize, ksize):
            raise GraphError(f"conv {name!r}: kernel {kv.shape} is not {ksize}x{ksize}")
        if kc_in != c_in:
            raise GraphError(
                f"conv {name!r}: input has {c_in} channels but kernel expects {kc_in}"
            )

        if pad:
            xp = np.zeros((bsz, c_in, hh + 2 * pad, ww + 2 * pad), dtype=xv.dtype)
            xp[:, :, pad:-pad, pad:-pad] = xv
        else:
            xp = xv
        # [B, C, H, W, k, k] -> columns [B, H*W, C*k*k]
        win = np.lib.stride_tricks.sliding_window_view(xp, (ksize, ksize), axis=(2, 3))
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(bsz, hh * ww, c_in * ksize * ksize)
        kmat = kv.reshape(c_out, -1)
        y = cols @ kmat.T + bv  # [B, H*W, Cout]
        y = y.transpose(0, 2, 1).reshape(bsz, c_out, hh, ww)

        def vjp(g):
            gv = g[None] if squeeze else g
            og = gv.reshape(bsz, c_out, hh * ww).transpose(0, 2, 1)  # [B, H*W, Cout]
            gk = np.einsum("bnc,bnk->ck", og, cols).reshape(kv.shape)
            gb = og.sum(axis=(0, 1))
            gcols = og @ kmat  # [B, H*W, C*k*k]
            gcols = gcols.reshape(bsz, hh, ww, c_in, ksize, ksize)
            gxp = np.zeros_like(xp)
            for di in range(ksize):
                for dj in range(ksize):
                    gxp[:, :, di : di + hh, dj : dj + ww] += gcols[:, :, :, :, di, dj].transpose(0, 3, 1, 2)
            gx = gxp[:, :, pad : pad + hh, pad : pad + ww] if pad else gxp
            return (gx[0] if squeeze else gx, gk, gb)

        return self._append(f"conv{ksize}x{ksize}", (x, k, b), y[0] if squeeze else y, vjp)

    # -- softmax family --------------------------------------------------------

    def log_softmax(self, logits: Node) -> Node:
        lv = self._row(logits, "log_softmax")
        m = lv.max()
        ls = lv - (m + np.log(np.sum(np.exp(lv - m))))
        p = np.exp(ls)
        return self._append("log_softmax", (logits,), ls, lambda g: (g - p * np.sum(g),))

    def softmax(self, logits: Node) -> Node:
        lv = self._row(logits, "softmax")
        m = lv.max()
        e = np.exp(lv - m)
        p = e / e.sum()
        return self._append("softmax", (logits,), p, lambda g: (p * (g - np.dot(g, p)),))

    def softmax_xent(self, logits: Node, label: int) -> tuple[Node, Node]:
        """Fused softmax + cross-entropy; returns (probs, scalar loss).

        Log-sum-exp uses max subtraction, so saturated logits stay exact.
        """
        lv = self._row(logits, "softmax_xent")
        k = lv.shape[0]
        if not 0 <= label < k:
            raise GraphError(f"label {label} out of range for {k} classes")
        m = lv.max()
        ls = lv - (m + np.log(np.sum(np.exp(lv - m))))
        p = np.exp(ls)
        probs = self._append("softmax_xent.p", (logits,), p, lambda g: (p * (g - np.dot(g, p)),))

        def loss_vjp(g):
            out = p.copy()
            out[label] -= 1.0
            return (out * g,)

        loss = self._append("softmax_xent.l", (logits,), np.asarray(-ls[label]), loss_vjp)
        return probs, loss

    def _row(self, x: Node, op: str) -> np.ndarray:
        if x.value.ndim != 1:
            raise GraphError(f"{op} expects a 1-D logits vector, got shape {x.value.shape}")
        return x.value

    def _same_shape(self, op: str, a: Node, b: Node) -> None:
        if a.value.shape != b.value.shape:
            raise GraphError(f"{op}: shape {a.value.shape} vs {b.value.shape}")

    # -- backward ---------------------------------------------------------------

    def backward(self, loss: Node, seed: float = 1.0) -> None:
        """Accumulate d(loss)/d(param) into the store, reverse tape order.

        May be called once per graph; the loss must be scalar.  Parameters
        of nodes unreachable from the loss receive no contribution.
        """
        if self._backward_done:
            raise GraphError("backward already ran on this graph")
        if loss.value.shape != ():
            raise GraphError(f"backward needs a scalar loss, got shape {loss.value.shape}")
        self._backward_done = True

        grads: list[np.ndarray | None] = [None] * len(self.nodes)
        grads[loss.idx] = np.asarray(seed, dtype=self.dtype)
        for node in reversed(self.nodes[: loss.idx + 1]):
            g = grads[node.idx]
            grads[node.idx] = None  # release memory as we go
            if g is None:
                continue
            if node.param is not None:
                self.params.grads[node.param] += g
                continue
            if node.vjp is None:
                continue
            for inp, gi in zip(node.inputs, node.vjp(g)):
                if gi is None:
                    continue
                if grads[inp.idx] is None:
                    grads[inp.idx] = np.array(gi, dtype=self.dtype, copy=True)
                else:
                    grads[inp.idx] += gi
