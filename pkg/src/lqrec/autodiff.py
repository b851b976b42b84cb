"""Minimal reverse-mode differentiation over a fixed operation vocabulary.

The model graph is static per query shape, so there is no need for a general
autodiff system: a closed set of ops with hand-written backward rules keeps
the engine small and each rule individually checkable against finite
differences. All values are float64; shapes are rank 0-2.

Subgradient conventions are fixed: relu'(0) = 0, the L1 distance uses
sign with sign(0) = 0, and elementwise_max routes ties to its first operand.

A tape is single-threaded. Several tapes may run concurrently over shared
read-only parameters; applying gradients must be serialized by the caller.
"""

from __future__ import annotations

import numpy as np

_BCE_EPS = 1e-12


class OpShapeError(ValueError):
    """Operand shapes violate an op contract."""

    def __init__(self, op: str, *shapes):
        super().__init__(f"{op}: incompatible shapes {[tuple(s) for s in shapes]}")


class EmptyTapeError(RuntimeError):
    pass


class Tensor:
    """A float64 array with an optional gradient slot.

    ``requires_grad`` marks trainable leaves; intermediates produced by tape
    ops receive gradients automatically during the backward pass.
    """

    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim > 2:
            raise OpShapeError("tensor", arr.shape)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        tag = f" name={self.name}" if self.name else ""
        return f"Tensor(shape={self.data.shape}{tag})"


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


class Tape:
    """Append-only record of ops; reversed append order is a valid reverse
    topological order, so backward visits each node exactly once."""

    def __init__(self):
        # (op kind, outputs, inputs, backward closure over saved activations)
        self.nodes: list[
            tuple[str, tuple[Tensor, ...], tuple[Tensor, ...], object]
        ] = []

    def _record(self, op: str, inputs, outputs, backward_fn) -> None:
        self.nodes.append((op, tuple(outputs), tuple(inputs), backward_fn))

    # -- table access ------------------------------------------------------

    def gather(self, table: Tensor, ids) -> Tensor:
        """Row lookup: scalar id -> (d,), id sequence -> (m, d).

        The backward pass scatter-adds only into the touched rows.
        """
        if table.data.ndim != 2:
            raise OpShapeError("gather", table.shape)
        scalar = np.isscalar(ids) or isinstance(ids, (int, np.integer))
        idx = int(ids) if scalar else np.asarray(ids, dtype=np.int64)
        out = Tensor(table.data[idx])

        def backward(gs):
            (g,) = gs
            if table.grad is None:
                table.grad = np.zeros_like(table.data)
            if scalar:
                table.grad[idx] += g
            else:
                np.add.at(table.grad, idx, g)

        self._record("gather", (table,), (out,), backward)
        return out

    # -- elementwise arithmetic ---------------------------------------------

    def add(self, a: Tensor, b: Tensor) -> Tensor:
        if a.shape != b.shape:
            raise OpShapeError("add", a.shape, b.shape)
        out = Tensor(a.data + b.data)

        def backward(gs):
            (g,) = gs
            _accumulate(a, g)
            _accumulate(b, g)

        self._record("add", (a, b), (out,), backward)
        return out

    def sub(self, a: Tensor, b: Tensor) -> Tensor:
        if a.shape != b.shape:
            raise OpShapeError("sub", a.shape, b.shape)
        out = Tensor(a.data - b.data)

        def backward(gs):
            (g,) = gs
            _accumulate(a, g)
            _accumulate(b, -g)

        self._record("sub", (a, b), (out,), backward)
        return out

    def elementwise_mul(self, a: Tensor, b: Tensor) -> Tensor:
        if a.shape != b.shape:
            raise OpShapeError("elementwise_mul", a.shape, b.shape)
        out = Tensor(a.data * b.data)

        def backward(gs):
            (g,) = gs
            _accumulate(a, g * b.data)
            _accumulate(b, g * a.data)

        self._record("elementwise_mul", (a, b), (out,), backward)
        return out

    def elementwise_max(self, a: Tensor, b: Tensor) -> Tensor:
        """Per-element max; ties route the gradient to the first operand."""
        if a.shape != b.shape:
            raise OpShapeError("elementwise_max", a.shape, b.shape)
        take_a = a.data >= b.data
        out = Tensor(np.where(take_a, a.data, b.data))

        def backward(gs):
            (g,) = gs
            _accumulate(a, g * take_a)
            _accumulate(b, g * ~take_a)

        self._record("elementwise_max", (a, b), (out,), backward)
        return out

    def scale_shift(self, x: Tensor, scale: float, shift: float) -> Tensor:
        """``scale * x + shift`` with python-float constants."""
        out = Tensor(scale * x.data + shift)

        def backward(gs):
            (g,) = gs
            _accumulate(x, g * scale)

        self._record("scale_shift", (x,), (out,), backward)
        return out

    # -- shape plumbing ------------------------------------------------------

    def concat_last_dim(self, a: Tensor, b: Tensor) -> Tensor:
        if a.data.ndim != 1 or b.data.ndim != 1:
            raise OpShapeError("concat_last_dim", a.shape, b.shape)
        out = Tensor(np.concatenate([a.data, b.data]))
        na = a.data.shape[0]

        def backward(gs):
            (g,) = gs
            _accumulate(a, g[:na])
            _accumulate(b, g[na:])

        self._record("concat_last_dim", (a, b), (out,), backward)
        return out

    def split_halves(self, x: Tensor) -> tuple[Tensor, Tensor]:
        if x.data.ndim != 1 or x.data.shape[0] % 2 != 0:
            raise OpShapeError("split_halves", x.shape)
        half = x.data.shape[0] // 2
        lo = Tensor(x.data[:half].copy())
        hi = Tensor(x.data[half:].copy())

        def backward(gs):
            g_lo, g_hi = gs
            g = np.concatenate(
                [
                    g_lo if g_lo is not None else np.zeros(half),
                    g_hi if g_hi is not None else np.zeros(half),
                ]
            )
            _accumulate(x, g)

        self._record("split_halves", (x,), (lo, hi), backward)
        return lo, hi

    def stack_rows(self, tensors: list[Tensor]) -> Tensor:
        if not tensors or any(t.data.ndim != 1 for t in tensors):
            raise OpShapeError("stack_rows", *[t.shape for t in tensors])
        out = Tensor(np.stack([t.data for t in tensors]))

        def backward(gs):
            (g,) = gs
            for row, t in enumerate(tensors):
                _accumulate(t, g[row])

        self._record("stack_rows", tuple(tensors), (out,), backward)
        return out

    # -- linear algebra -------------------------------------------------------

    def affine(self, w: Tensor, x: Tensor) -> Tensor:
        """``x @ w[:-1] + w[-1]``; the weight's last row is the bias.

        ``x`` may be a vector (d_in,) or a matrix (m, d_in).
        """
        if w.data.ndim != 2 or x.data.shape[-1] != w.data.shape[0] - 1:
            raise OpShapeError("affine", w.shape, x.shape)
        weights, bias = w.data[:-1], w.data[-1]
        out = Tensor(x.data @ weights + bias)

        def backward(gs):
            (g,) = gs
            gw = np.zeros_like(w.data)
            if x.data.ndim == 1:
                gw[:-1] = np.outer(x.data, g)
                gw[-1] = g
                gx = weights @ g
            else:
                gw[:-1] = x.data.T @ g
                gw[-1] = g.sum(axis=0)
                gx = g @ weights.T
            _accumulate(w, gw)
            _accumulate(x, gx)

        self._record("affine", (w, x), (out,), backward)
        return out

    def weighted_sum(self, weights: Tensor, stack: Tensor) -> Tensor:
        """Mix (k, d) rows by a (k,) weight vector into a (d,) output."""
        if (
            weights.data.ndim != 1
            or stack.data.ndim != 2
            or weights.data.shape[0] != stack.data.shape[0]
        ):
            raise OpShapeError("weighted_sum", weights.shape, stack.shape)
        out = Tensor(weights.data @ stack.data)

        def backward(gs):
            (g,) = gs
            _accumulate(weights, stack.data @ g)
            _accumulate(stack, np.outer(weights.data, g))

        self._record("weighted_sum", (weights, stack), (out,), backward)
        return out

    # -- nonlinearities --------------------------------------------------------

    def relu(self, x: Tensor) -> Tensor:
        mask = x.data > 0
        out = Tensor(np.where(mask, x.data, 0.0))

        def backward(gs):
            (g,) = gs
            _accumulate(x, g * mask)

        self._record("relu", (x,), (out,), backward)
        return out

    def sigmoid(self, x: Tensor) -> Tensor:
        s = _stable_sigmoid(x.data)
        out = Tensor(s)

        def backward(gs):
            (g,) = gs
            _accumulate(x, g * s * (1.0 - s))

        self._record("sigmoid", (x,), (out,), backward)
        return out

    def softmax_last_dim(self, x: Tensor) -> Tensor:
        shifted = x.data - x.data.max(axis=-1, keepdims=True)
        ex = np.exp(shifted)
        s = ex / ex.sum(axis=-1, keepdims=True)
        out = Tensor(s)

        def backward(gs):
            (g,) = gs
            inner = (g * s).sum(axis=-1, keepdims=True)
            _accumulate(x, s * (g - inner))

        self._record("softmax_last_dim", (x,), (out,), backward)
        return out

    # -- distances and losses ----------------------------------------------------

    def l1_distance(self, a: Tensor, b: Tensor) -> Tensor:
        """L1 distance: two vectors -> scalar; (m, d) against (d,) -> (m,)."""
        if a.data.ndim == 1 and a.shape == b.shape:
            diff = a.data - b.data
            out = Tensor(np.abs(diff).sum())

            def backward(gs):
                (g,) = gs
                s = np.sign(diff)
                _accumulate(a, g * s)
                _accumulate(b, -g * s)

        elif a.data.ndim == 2 and b.data.ndim == 1 and a.data.shape[1] == b.data.shape[0]:
            diff = a.data - b.data
            out = Tensor(np.abs(diff).sum(axis=1))

            def backward(gs):
                (g,) = gs
                s = np.sign(diff)
                _accumulate(a, g[:, None] * s)
                _accumulate(b, -(g[:, None] * s).sum(axis=0))

        else:
            raise OpShapeError("l1_distance", a.shape, b.shape)
        self._record("l1_distance", (a, b), (out,), backward)
        return out

    def bce_loss(self, probs: Tensor, labels: Tensor) -> Tensor:
        """Binary cross-entropy, averaged over all elements.

        Probabilities are clipped to [eps, 1-eps] purely as a log() guard;
        sigmoid outputs only reach the clip under extreme saturation.
        """
        if probs.shape != labels.shape or probs.data.ndim != 1:
            raise OpShapeError("bce_loss", probs.shape, labels.shape)
        p = np.clip(probs.data, _BCE_EPS, 1.0 - _BCE_EPS)
        y = labels.data
        n = p.shape[0]
        out = Tensor(-(y * np.log(p) + (1.0 - y) * np.log1p(-p)).sum() / n)

        def backward(gs):
            (g,) = gs
            _accumulate(probs, g * (-(y / p) + (1.0 - y) / (1.0 - p)) / n)

        self._record("bce_loss", (probs, labels), (out,), backward)
        return out

    # -- reductions -----------------------------------------------------------

    def reduce_sum(self, x: Tensor) -> Tensor:
        out = Tensor(x.data.sum())

        def backward(gs):
            (g,) = gs
            _accumulate(x, np.full_like(x.data, float(g)))

        self._record("reduce_sum", (x,), (out,), backward)
        return out

    def reduce_mean(self, x: Tensor) -> Tensor:
        n = x.data.size
        out = Tensor(x.data.sum() / n)

        def backward(gs):
            (g,) = gs
            _accumulate(x, np.full_like(x.data, float(g) / n))

        self._record("reduce_mean", (x,), (out,), backward)
        return out


def backward(tape: Tape, loss: Tensor) -> None:
    """Accumulate d(loss)/d(tensor) into ``.grad`` for every reachable tensor.

    Gradients add across shared subgraphs; parameters used in several branches
    end up with the sum of the branch gradients. Caller is responsible for
    zeroing parameter gradients between optimization steps.
    """
    if not tape.nodes:
        raise EmptyTapeError("backward called before any forward op")
    if loss.data.shape != ():
        raise OpShapeError("backward", loss.data.shape)
    loss.grad = np.ones_like(loss.data)
    for _op, outputs, _inputs, backward_fn in reversed(tape.nodes):
        if all(o.grad is None for o in outputs):
            continue
        backward_fn(tuple(o.grad for o in outputs))


class AdamState:
    """Per-parameter moment buffers for bias-corrected Adam."""

    def __init__(
        self,
        params: dict[str, Tensor],
        lr: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in params.items()}


def adam_step(params: dict[str, Tensor], state: AdamState) -> None:
    """One bias-corrected adaptive-moment update; missing grads count as zero."""
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    for name, p in params.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p.data -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
