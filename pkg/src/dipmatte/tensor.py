"""Dense tensor with reverse-mode automatic differentiation.

Operations record themselves on a per-thread :class:`Tape` whenever one of
their inputs requires a gradient.  ``backward`` replays the tape in exact
reverse execution order and then marks it spent.
"""

import contextlib
import threading

import numpy as np

_FLOAT_TYPES = (np.float32, np.float64)


class ShapeError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


class TapeError(RuntimeError):
    """Misuse of the computation tape (e.g. a second backward pass)."""


class _Node:
    __slots__ = ("out", "parents", "backward")

    def __init__(self, out, parents, backward):
        self.out = out
        self.parents = parents
        self.backward = backward


class Tape:
    """Ordered record of executed differentiable operations."""

    def __init__(self):
        self._nodes = []
        self.spent = False

    def __len__(self):
        return len(self._nodes)

    def record(self, out, parents, backward):
        if self.spent:
            raise TapeError("cannot record on a spent tape; call reset()")
        self._nodes.append(_Node(out, parents, backward))
        out._tape = self

    def reset(self):
        self._nodes = []
        self.spent = False

    def backward(self, loss):
        if loss.data.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        if self.spent:
            raise TapeError("backward already ran on this tape; reset and rerun the forward pass")
        if loss._tape is not self:
            raise TapeError("loss was not recorded on this tape")
        loss.grad = np.ones_like(loss.data)
        for node in reversed(self._nodes):
            g = node.out.grad
            if g is None:
                continue
            grads = node.backward(g)
            for parent, pg in zip(node.parents, grads):
                if pg is None or not parent.requires_grad:
                    continue
                if parent.grad is None:
                    parent.grad = np.array(pg, dtype=parent.data.dtype, copy=True)
                else:
                    parent.grad += pg
        self._nodes = []
        self.spent = True


_local = threading.local()


def current_tape():
    tape = getattr(_local, "tape", None)
    if tape is None or tape.spent:
        tape = _local.tape = Tape()
    return tape


def reset_tape():
    """Drop everything recorded on this thread's tape and start a fresh one."""
    _local.tape = Tape()
    return _local.tape


def grad_enabled():
    return getattr(_local, "grad_enabled", True)


@contextlib.contextmanager
def no_grad():
    prev = grad_enabled()
    _local.grad_enabled = False
    try:
        yield
    finally:
        _local.grad_enabled = prev


class Tensor:
    """N-dimensional float array (channels x height x width for images)."""

    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype.type not in _FLOAT_TYPES:
            arr = arr.astype(np.float32)
        self.data = np.ascontiguousarray(arr)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._tape = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    def item(self):
        return float(self.data.reshape(-1)[0])

    def numpy(self):
        return self.data

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data.copy())

    def backward(self):
        if self._tape is None:
            raise TapeError("tensor was not produced by a recorded operation")
        self._tape.backward(self)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    # operators route through dipmatte.ops; scalars are the only broadcast allowed
    def __add__(self, other):
        from . import ops
        if isinstance(other, Tensor):
            return ops.add(self, other)
        return ops.scalar_add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        if isinstance(other, Tensor):
            return ops.sub(self, other)
        return ops.scalar_add(self, -other)

    def __rsub__(self, other):
        from . import ops
        return ops.scalar_add(ops.scalar_mul(self, -1.0), other)

    def __mul__(self, other):
        from . import ops
        if isinstance(other, Tensor):
            return ops.mul(self, other)
        return ops.scalar_mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops
        return ops.scalar_mul(self, -1.0)

    def __pow__(self, exponent):
        from . import ops
        if exponent != 2:
            raise NotImplementedError("only squaring is supported")
        return ops.square(self)

    def sum(self):
        from . import ops
        return ops.sum_all(self)


def as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def backward(loss):
    loss.backward()
