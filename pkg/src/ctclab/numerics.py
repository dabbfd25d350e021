"""Minimal dense-tensor math with reverse-mode differentiation.

Tensors are immutable float64 values. Differentiable operations live on a
GradientTape: each op computes eagerly with numpy and records a node whose
vector-Jacobian product is replayed in exact reverse recording order by
``backward``. No implicit broadcasting except scalar * tensor; row/column
broadcasts are explicit ops with their own adjoints.
"""

from __future__ import annotations

from typing import Callable, Iterator, Sequence

import numpy as np
from scipy.special import expit


class NumericsError(Exception):
    pass


class ShapeMismatchError(NumericsError):
    pass


class NonFiniteError(NumericsError):
    pass


class Tensor:
    """Immutable row-major float64 array. NaN/Inf anywhere is an error."""

    __slots__ = ("data",)

    def __init__(self, data):
        arr = np.array(data, dtype=np.float64, order="C")
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError(f"non-finite values in tensor of shape {arr.shape}")
        arr.setflags(write=False)
        self.data = arr

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeMismatchError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self):
        return f"Tensor(shape={self.shape})"


class ParamStore:
    """Named trainable tensors with deterministic (lexicographic) iteration.

    Names are unique and shapes are frozen at first assignment; ``assign``
    swaps in a new value of the same shape.
    """

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, value) -> Tensor:
        if name in self._params:
            raise KeyError(f"parameter {name!r} already exists")
        t = value if isinstance(value, Tensor) else Tensor(value)
        self._params[name] = t
        return t

    def assign(self, name: str, value) -> Tensor:
        old = self._params[name]
        t = value if isinstance(value, Tensor) else Tensor(value)
        if t.shape != old.shape:
            raise ShapeMismatchError(
                f"parameter {name!r} is {old.shape}, got {t.shape}"
            )
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return sorted(self._params)

    def items(self) -> Iterator[tuple[str, Tensor]]:
        for name in sorted(self._params):
            yield name, self._params[name]

    def num_scalars(self) -> int:
        return sum(t.size for t in self._params.values())


class _Node:
    __slots__ = ("out", "inputs", "vjp")

    def __init__(self, out: Tensor, inputs: tuple, vjp: Callable):
        self.out = out
        self.inputs = inputs
        self.vjp = vjp


class Tape:
    """Wengert list of primitive ops; ``record=False`` computes forward only."""

    def __init__(self, record: bool = True):
        self.record = record
        self._nodes: list[_Node] = []

    def __len__(self) -> int:
        return len(self._nodes)

    def record_node(self, out: Tensor, inputs: Sequence[Tensor], vjp: Callable) -> Tensor:
        """Append a primitive: vjp(g) returns one gradient per input (or None)."""
        if self.record:
            self._nodes.append(_Node(out, tuple(inputs), vjp))
        return out

    # -- binary elementwise / linear algebra ---------------------------------

    def matmul(self, a: Tensor, b: Tensor) -> Tensor:
        if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
            raise ShapeMismatchError(f"matmul {a.shape} x {b.shape}")
        out = Tensor(a.data @ b.data)
        ad, bd = a.data, b.data
        return self.record_node(out, (a, b), lambda g: (g @ bd.T, ad.T @ g))

    def add(self, a: Tensor, b: Tensor) -> Tensor:
        if a.shape != b.shape:
            raise ShapeMismatchError(f"add {a.shape} vs {b.shape}")
        out = Tensor(a.data + b.data)
        return self.record_node(out, (a, b), lambda g: (g, g))

    def mul(self, a: Tensor, b: Tensor) -> Tensor:
        if a.shape != b.shape:
            raise ShapeMismatchError(f"mul {a.shape} vs {b.shape}")
        out = Tensor(a.data * b.data)
        ad, bd = a.data, b.data
        return self.record_node(out, (a, b), lambda g: (g * bd, g * ad))

    def scale(self, a: Tensor, c: float) -> Tensor:
        c = float(c)
        out = Tensor(a.data * c)
        return self.record_node(out, (a,), lambda g: (g * c,))

    def add_rowvec(self, mat: Tensor, vec: Tensor) -> Tensor:
        """mat[i, :] + vec, the one sanctioned row broadcast (bias add)."""
        if mat.ndim != 2 or vec.shape != (mat.shape[1],):
            raise ShapeMismatchError(f"add_rowvec {mat.shape} + {vec.shape}")
        out = Tensor(mat.data + vec.data[None, :])
        return self.record_node(out, (mat, vec), lambda g: (g, g.sum(axis=0)))

    def mul_rowvec(self, mat: Tensor, vec: Tensor) -> Tensor:
        """mat[i, :] * vec per row (diagonal peephole products)."""
        if mat.ndim != 2 or vec.shape != (mat.shape[1],):
            raise ShapeMismatchError(f"mul_rowvec {mat.shape} * {vec.shape}")
        out = Tensor(mat.data * vec.data[None, :])
        md, vd = mat.data, vec.data
        return self.record_node(
            out, (mat, vec), lambda g: (g * vd[None, :], (g * md).sum(axis=0))
        )

    def scale_rows(self, mat: Tensor, col: Tensor) -> Tensor:
        """mat[i, :] * col[i]: per-row scaling by a differentiable column."""
        if mat.ndim != 2 or col.shape != (mat.shape[0],):
            raise ShapeMismatchError(f"scale_rows {mat.shape} * {col.shape}")
        out = Tensor(mat.data * col.data[:, None])
        md, cd = mat.data, col.data
        return self.record_node(
            out, (mat, col), lambda g: (g * cd[:, None], (g * md).sum(axis=1))
        )

    def mul_colvec(self, mat: Tensor, col: Tensor) -> Tensor:
        """mat[i, :] * col[i, 0]: per-row scaling by an (R, 1) column tensor."""
        if mat.ndim != 2 or col.shape != (mat.shape[0], 1):
            raise ShapeMismatchError(f"mul_colvec {mat.shape} * {col.shape}")
        out = Tensor(mat.data * col.data)
        md, cd = mat.data, col.data
        return self.record_node(
            out, (mat, col), lambda g: (g * cd, (g * md).sum(axis=1, keepdims=True))
        )

    def mask_rows(self, mat: Tensor, mask: np.ndarray) -> Tensor:
        """mat[i, :] * mask[i] with a constant 0/1 mask (no gradient to mask)."""
        if mat.ndim != 2 or mask.shape != (mat.shape[0],):
            raise ShapeMismatchError(f"mask_rows {mat.shape} * {mask.shape}")
        m = mask.astype(np.float64)
        out = Tensor(mat.data * m[:, None])
        return self.record_node(out, (mat,), lambda g: (g * m[:, None],))

    # -- elementwise nonlinearities ------------------------------------------

    def tanh(self, a: Tensor) -> Tensor:
        out = Tensor(np.tanh(a.data))
        od = out.data
        return self.record_node(out, (a,), lambda g: (g * (1.0 - od * od),))

    def sigmoid(self, a: Tensor) -> Tensor:
        out = Tensor(expit(a.data))
        od = out.data
        return self.record_node(out, (a,), lambda g: (g * od * (1.0 - od),))

    # -- reductions and normalizers ------------------------------------------

    def softmax_rows(self, a: Tensor) -> Tensor:
        if a.ndim != 2:
            raise ShapeMismatchError(f"softmax_rows on {a.shape}")
        out = Tensor(softmax_rows(a.data))
        od = out.data

        def vjp(g):
            dot = (g * od).sum(axis=1, keepdims=True)
            return (od * (g - dot),)

        return self.record_node(out, (a,), vjp)

    def logsumexp(self, a: Tensor) -> Tensor:
        if a.ndim != 1 or a.size == 0:
            raise ShapeMismatchError(f"logsumexp needs a nonempty vector, got {a.shape}")
        val = logsumexp(a.data)
        out = Tensor(val)
        w = np.exp(a.data - val)
        return self.record_node(out, (a,), lambda g: (g * w,))

    def sum_all(self, a: Tensor) -> Tensor:
        out = Tensor(a.data.sum())
        shape = a.shape
        return self.record_node(out, (a,), lambda g: (np.full(shape, g),))

    # -- shape surgery --------------------------------------------------------

    def hconcat(self, a: Tensor, b: Tensor) -> Tensor:
        if a.ndim != 2 or b.ndim != 2 or a.shape[0] != b.shape[0]:
            raise ShapeMismatchError(f"hconcat {a.shape} | {b.shape}")
        out = Tensor(np.concatenate([a.data, b.data], axis=1))
        c1 = a.shape[1]
        return self.record_node(out, (a, b), lambda g: (g[:, :c1], g[:, c1:]))

    def vstack(self, rows: Sequence[Tensor]) -> Tensor:
        if not rows:
            raise ShapeMismatchError("vstack of nothing")
        out = Tensor(np.concatenate([r.data for r in rows], axis=0))
        extents = [r.shape[0] for r in rows]

        def vjp(g):
            grads, lo = [], 0
            for n in extents:
                grads.append(g[lo : lo + n])
                lo += n
            return tuple(grads)

        return self.record_node(out, tuple(rows), vjp)

    def slice_cols(self, a: Tensor, j0: int, j1: int) -> Tensor:
        if a.ndim != 2 or not (0 <= j0 <= j1 <= a.shape[1]):
            raise ShapeMismatchError(f"slice_cols [{j0}:{j1}] of {a.shape}")
        out = Tensor(a.data[:, j0:j1])
        shape = a.shape

        def vjp(g):
            ga = np.zeros(shape)
            ga[:, j0:j1] = g
            return (ga,)

        return self.record_node(out, (a,), vjp)

    def take_rows(self, a: Tensor, idx: np.ndarray) -> Tensor:
        """out[i] = a[idx[i]] for a constant index vector (duplicates allowed).

        Used to pull one utterance's frames out of a flattened padded batch;
        the adjoint scatter-adds rows back, accumulating over duplicates.
        """
        idx = np.asarray(idx, dtype=np.int64)
        if a.ndim != 2 or idx.ndim != 1:
            raise ShapeMismatchError(f"take_rows from {a.shape} with idx {idx.shape}")
        if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
            raise ShapeMismatchError(f"take_rows index out of range for {a.shape}")
        out = Tensor(a.data[idx])
        shape = a.shape

        def vjp(g):
            ga = np.zeros(shape)
            np.add.at(ga, idx, g)
            return (ga,)

        return self.record_node(out, (a,), vjp)

    # -- composites ------------------------------------------------------------

    def linear(self, x: Tensor, w: Tensor, b: Tensor) -> Tensor:
        return self.add_rowvec(self.matmul(x, w), b)


def backward(tape: Tape, loss: Tensor, params: ParamStore) -> dict[str, np.ndarray]:
    """Exact reverse-mode gradients of a scalar loss for every parameter.

    Nodes replay in exact reverse recording order with sequential accumulation,
    so repeated runs are bit-identical. Parameters the loss never touched get
    zero gradients.
    """
    if loss.size != 1:
        raise ShapeMismatchError(f"loss must be scalar, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones(loss.shape)}
    for node in reversed(tape._nodes):
        g = grads.get(id(node.out))
        if g is None:
            continue
        for t, gi in zip(node.inputs, node.vjp(g)):
            if gi is None:
                continue
            acc = grads.get(id(t))
            grads[id(t)] = gi if acc is None else acc + gi
    out: dict[str, np.ndarray] = {}
    for name, tensor in params.items():
        g = grads.get(id(tensor))
        out[name] = np.zeros(tensor.shape) if g is None else np.asarray(g, dtype=np.float64)
    return out


def grad_check(
    build_loss: Callable[[Tape, ParamStore], Tensor],
    params: ParamStore,
    eps: float = 1e-5,
) -> float:
    """Max relative error of analytic vs central-difference gradients.

    ``build_loss`` must be a pure function of the store's current values. The
    relative error for one scalar slot is |a - n| / max(1, |a|, |n|); the
    maximum over every slot of every parameter is returned.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    tape = Tape()
    loss = build_loss(tape, params)
    analytic = backward(tape, loss, params)

    def probe() -> float:
        return build_loss(Tape(record=False), params).item()

    worst = 0.0
    for name, tensor in params.items():
        base = tensor.data
        grad = analytic[name]
        flat = base.reshape(-1)
        for i in range(flat.size):
            bumped = base.copy().reshape(-1)
            bumped[i] = flat[i] + eps
            params.assign(name, bumped.reshape(base.shape))
            f_plus = probe()
            bumped[i] = flat[i] - eps
            params.assign(name, bumped.reshape(base.shape))
            f_minus = probe()
            params.assign(name, base)
            numeric = (f_plus - f_minus) / (2.0 * eps)
            a = grad.reshape(-1)[i]
            err = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
            worst = max(worst, float(err))
    return worst


# -- plain ndarray helpers (shared stable kernels, no tape) ---------------------


def softmax_rows(a: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction; rows sum to 1."""
    shifted = a - a.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def log_softmax_rows(a: np.ndarray) -> np.ndarray:
    shifted = a - a.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def logsumexp(a: np.ndarray) -> float:
    """log sum exp of a nonempty vector, max-shifted for stability."""
    a = np.asarray(a, dtype=np.float64)
    if a.size == 0:
        raise ValueError("logsumexp of empty input")
    m = a.max()
    if not np.isfinite(m):
        # all -inf stays -inf rather than producing nan from inf - inf
        return float(m)
    return float(np.log(np.exp(a - m).sum()) + m)
