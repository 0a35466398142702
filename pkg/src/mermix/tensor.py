"""Dense float64 tensors with tape-based reverse-mode automatic differentiation.

Values are numpy arrays; the graph is a flat Wengert list recorded on a
``Tape`` in creation order, so walking it backwards is already a valid
topological order. Tapes are per-step and thread-confined; parameters are
plain leaf tensors that outlive any tape, with additively accumulated
gradients cleared via :func:`zero_grads`.
"""

from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np

# Debug hook for gradient-check self-tests: when True, one matmul backward
# rule is deliberately scaled wrong so a correct checker must report failure.
BREAK_BACKWARD = False


class ShapeError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


_local = threading.local()


def _tape_stack() -> list["Tape"]:
    stack = getattr(_local, "tapes", None)
    if stack is None:
        stack = []
        _local.tapes = stack
    return stack


def _active_tape() -> "Tape | None":
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    """A non-empty float64 array plus a gradient slot.

    Leaves are tensors created directly (parameters, inputs, constants);
    operation results are non-leaf and owned by the recording tape.
    """

    __slots__ = ("data", "grad", "requires_grad", "is_leaf")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.size == 0:
            raise ShapeError(f"tensor must be non-empty, got shape {arr.shape}")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.is_leaf = True

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self) -> str:
        flags = []
        if self.requires_grad:
            flags.append("requires_grad")
        if not self.is_leaf:
            flags.append("op")
        tail = (", " + ",".join(flags)) if flags else ""
        return f"Tensor(shape={self.shape}{tail})"


# A pull takes the output gradient and returns this input's contribution.
Pull = Callable[[np.ndarray], np.ndarray]


class Tape:
    """Ordered record of operations; reverse traversal accumulates gradients.

    Use as a context manager around one forward pass. ``backward`` may be
    called more than once; leaf gradients then accumulate additively.
    """

    def __init__(self):
        self._nodes: list[tuple[Tensor, list[tuple[Tensor, Pull]]]] = []
        self._output_ids: set[int] = set()

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        popped = _tape_stack().pop()
        assert popped is self, "tapes must unwind in LIFO order"

    def __len__(self) -> int:
        return len(self._nodes)

    def _record(self, out: Tensor, pulls: list[tuple[Tensor, Pull]]) -> None:
        self._nodes.append((out, pulls))
        self._output_ids.add(id(out))

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(leaf) into every requires_grad leaf on this tape."""
        if loss.data.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        if id(loss) not in self._output_ids:
            raise ValueError("loss is not connected to this tape")
        flowing: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for out, pulls in reversed(self._nodes):
            g = flowing.pop(id(out), None)
            if g is None:
                continue
            for inp, pull in pulls:
                contrib = pull(g)
                if inp.is_leaf:
                    if inp.grad is None:
                        inp.grad = np.zeros_like(inp.data)
                    inp.grad += contrib
                else:
                    prev = flowing.get(id(inp))
                    flowing[id(inp)] = contrib if prev is None else prev + contrib
        # Leaves on a path that carried no gradient still get a zero buffer,
        # so every requires_grad leaf ends up with a grad of its own shape.
        for _, pulls in self._nodes:
            for inp, _ in pulls:
                if inp.is_leaf and inp.grad is None:
                    inp.grad = np.zeros_like(inp.data)


def zero_grads(tensors: Sequence[Tensor]) -> None:
    for t in tensors:
        t.grad = None


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, pulls: list[tuple[Tensor, Pull]]) -> Tensor:
    out = Tensor(data)
    tape = _active_tape()
    if tape is not None:
        tracked = [(t, f) for t, f in pulls if t.requires_grad]
        if tracked:
            out.is_leaf = False
            out.requires_grad = True
            tape._record(out, tracked)
    return out


def _is_suffix(shorter: tuple[int, ...], longer: tuple[int, ...]) -> bool:
    n = len(shorter)
    return n <= len(longer) and longer[len(longer) - n :] == shorter


def _reduce_leading(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    return g


def add(a, b) -> Tensor:
    """Elementwise sum; one operand's shape may be a suffix of the other's."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape and not (_is_suffix(a.shape, b.shape) or _is_suffix(b.shape, a.shape)):
        raise ShapeError(f"add expects equal or leading-broadcast shapes, got {a.shape} and {b.shape}")
    data = a.data + b.data
    return _result(
        data,
        [
            (a, lambda g: _reduce_leading(g, a.shape)),
            (b, lambda g: _reduce_leading(g, b.shape)),
        ],
    )


def mul(a, b) -> Tensor:
    """Elementwise product of equal-shaped tensors."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"mul expects equal shapes, got {a.shape} and {b.shape}")
    return _result(
        a.data * b.data,
        [
            (a, lambda g: g * b.data),
            (b, lambda g: g * a.data),
        ],
    )


def scale(x, s: float) -> Tensor:
    x = _as_tensor(x)
    s = float(s)
    return _result(x.data * s, [(x, lambda g: g * s)])


def _swap_last(a: np.ndarray) -> np.ndarray:
    return np.swapaxes(a, -1, -2)


def _reduce_matmul(raw: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    raw = _reduce_leading(raw, shape)
    for axis in range(raw.ndim - 2):
        if shape[axis] == 1 and raw.shape[axis] != 1:
            raw = raw.sum(axis=axis, keepdims=True)
    return raw


def matmul(a, b) -> Tensor:
    """Batched matrix product with numpy semantics on the leading dimensions."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul expects at least 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} x {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError as exc:
        raise ShapeError(f"matmul batch dimensions incompatible: {a.shape} x {b.shape}") from exc
    data = a.data @ b.data

    def pull_a(g: np.ndarray) -> np.ndarray:
        raw = g @ _swap_last(b.data)
        if BREAK_BACKWARD:
            raw = raw * 1.01
        return _reduce_matmul(raw, a.shape)

    def pull_b(g: np.ndarray) -> np.ndarray:
        return _reduce_matmul(_swap_last(a.data) @ g, b.shape)

    return _result(data, [(a, pull_a), (b, pull_b)])


def transpose(x, axes: Sequence[int]) -> Tensor:
    x = _as_tensor(x)
    axes = tuple(axes)
    if sorted(axes) != list(range(x.ndim)):
        raise ShapeError(f"transpose axes {axes} do not permute shape {x.shape}")
    inverse = tuple(np.argsort(axes))
    return _result(x.data.transpose(axes), [(x, lambda g: g.transpose(inverse))])


def reshape(x, shape: Sequence[int]) -> Tensor:
    x = _as_tensor(x)
    shape = tuple(int(s) for s in shape)
    try:
        data = x.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"cannot reshape {x.shape} into {shape}") from exc
    return _result(data, [(x, lambda g: g.reshape(x.shape))])


def concat_lastdim(parts: Sequence[Tensor]) -> Tensor:
    """Concatenate along the last axis; all other dimensions must agree."""
    parts = [_as_tensor(p) for p in parts]
    if not parts:
        raise ShapeError("concat_lastdim needs at least one tensor")
    lead = parts[0].shape[:-1]
    for p in parts[1:]:
        if p.shape[:-1] != lead:
            raise ShapeError(
                f"concat_lastdim expects matching leading dims, got {parts[0].shape} and {p.shape}"
            )
    data = np.concatenate([p.data for p in parts], axis=-1)

    pulls: list[tuple[Tensor, Pull]] = []
    offset = 0
    for p in parts:
        width = p.shape[-1]

        def pull(g: np.ndarray, lo: int = offset, hi: int = offset + width) -> np.ndarray:
            return g[..., lo:hi]

        pulls.append((p, pull))
        offset += width
    return _result(data, pulls)


def sum_over_axis(x, axis: int) -> Tensor:
    x = _as_tensor(x)
    axis = axis % x.ndim
    data = x.data.sum(axis=axis)
    return _result(
        data, [(x, lambda g: np.broadcast_to(np.expand_dims(g, axis), x.shape))]
    )


def mean_over_axis(x, axis: int) -> Tensor:
    x = _as_tensor(x)
    axis = axis % x.ndim
    n = x.shape[axis]
    data = x.data.mean(axis=axis)
    return _result(
        data, [(x, lambda g: np.broadcast_to(np.expand_dims(g / n, axis), x.shape))]
    )


def sum_all(x) -> Tensor:
    x = _as_tensor(x)
    return _result(
        np.asarray(x.data.sum()), [(x, lambda g: np.broadcast_to(g, x.shape))]
    )


def softmax_lastdim(x) -> Tensor:
    """Row-stable softmax over the last axis; -inf entries map to exactly 0."""
    x = _as_tensor(x)
    if x.ndim < 1:
        raise ShapeError("softmax_lastdim expects at least 1-D input")
    row_max = np.max(x.data, axis=-1, keepdims=True)
    if np.any(np.isneginf(row_max)):
        raise ValueError("fully masked attention row")
    z = np.exp(x.data - row_max)
    y = z / z.sum(axis=-1, keepdims=True)

    def pull(g: np.ndarray) -> np.ndarray:
        inner = (g * y).sum(axis=-1, keepdims=True)
        return y * (g - inner)

    return _result(y, [(x, pull)])


def linear(x, w, b) -> Tensor:
    """Affine map ``x @ w + b`` with ``w`` shaped (in_features, out_features)."""
    return add(matmul(x, w), b)


def cross_entropy(logits, labels) -> Tensor:
    """Mean negative log-softmax of the true class; scalar output.

    ``logits`` may be (E,) with an int label or (B, E) with B labels.
    """
    logits = _as_tensor(logits)
    squeeze = logits.ndim == 1
    if squeeze:
        mat = logits.data[None, :]
        lab = np.asarray([labels], dtype=np.int64)
    elif logits.ndim == 2:
        mat = logits.data
        lab = np.asarray(labels, dtype=np.int64)
        if lab.shape != (mat.shape[0],):
            raise ShapeError(
                f"cross_entropy expects {mat.shape[0]} labels, got shape {lab.shape}"
            )
    else:
        raise ShapeError(f"cross_entropy expects 1-D or 2-D logits, got {logits.shape}")
    batch, classes = mat.shape
    if np.any(lab < 0) or np.any(lab >= classes):
        bad = int(lab[(lab < 0) | (lab >= classes)][0])
        raise ValueError(f"label {bad} out of range for {classes} classes")

    row_max = mat.max(axis=-1, keepdims=True)
    lse = row_max[:, 0] + np.log(np.exp(mat - row_max).sum(axis=-1))
    losses = lse - mat[np.arange(batch), lab]
    loss = np.asarray(losses.mean())

    def pull(g: np.ndarray) -> np.ndarray:
        probs = np.exp(mat - row_max)
        probs /= probs.sum(axis=-1, keepdims=True)
        probs[np.arange(batch), lab] -= 1.0
        grad = probs * (float(g) / batch)
        return grad[0] if squeeze else grad

    return _result(loss, [(logits, pull)])


def finite_difference(f: Callable[[], float], x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of ``f()`` wrt ``x``, perturbing it in place."""
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def max_relative_error(a, b, floor: float = 1e-4) -> float:
    """Largest |a-b| / max(|a|, |b|, floor); the floor keeps near-zero entries honest."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom))
