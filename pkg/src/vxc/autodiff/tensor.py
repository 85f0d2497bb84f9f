"""Dense tensor with define-by-run reverse-mode differentiation.

Every differentiable operation appends a :class:`Node` carrying a global
sequence number.  The sequence number is the append order of the tape, so the
tape of a loss is simply its reachable nodes sorted by ``seq``; backward walks
that list in reverse.
"""

from __future__ import annotations

import contextlib
import itertools
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from vxc.exceptions import UsageError

DEFAULT_DTYPE = np.float64

_sequence = itertools.count()
_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


def is_grad_enabled() -> bool:
    return _grad_enabled


class Node:
    """One recorded operation: its inputs and a closure mapping the output
    gradient to a tuple of input gradients (``None`` for inputs that do not
    need one)."""

    __slots__ = ("seq", "op", "inputs", "backward", "stochastic")

    def __init__(self, op: str, inputs: Sequence["Tensor"], backward: Callable, stochastic: bool = False):
        self.seq = next(_sequence)
        self.op = op
        self.inputs = tuple(inputs)
        self.backward = backward
        self.stochastic = stochastic

    def __repr__(self):
        return f"Node({self.op}, seq={self.seq})"


@dataclass
class Tape:
    """Nodes that contribute to one output, in append order."""

    nodes: list = field(default_factory=list)

    @classmethod
    def of(cls, output: "Tensor") -> "Tape":
        seen = set()
        stack = [output._node] if output._node is not None else []
        nodes = []
        while stack:
            node = stack.pop()
            if id(node) in seen:
                continue
            seen.add(id(node))
            nodes.append(node)
            for t in node.inputs:
                if t._node is not None and id(t._node) not in seen:
                    stack.append(t._node)
        nodes.sort(key=lambda n: n.seq)
        return cls(nodes)

    @property
    def stochastic(self) -> bool:
        return any(n.stochastic for n in self.nodes)

    def __len__(self):
        return len(self.nodes)


class Tensor:
    """n-dimensional array participating in gradient recording.

    ``data`` is a numpy array; ``grad`` is populated on leaves that have
    ``requires_grad=True`` after :meth:`backward`.
    """

    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False, dtype=None, _node: Optional[Node] = None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            arr = np.asarray(data)
            dtype = arr.dtype if arr.dtype in (np.float32, np.float64) else DEFAULT_DTYPE
        self.data = np.asarray(data, dtype=dtype)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._node = _node

    # -- introspection -----------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self):
        return self.shape[0]

    # -- autodiff ----------------------------------------------------------
    def backward(self, grad=None):
        backward(self, grad)

    # operator sugar; implementations live in functional.py
    def __add__(self, other):
        from vxc.autodiff import functional as F
        return F.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from vxc.autodiff import functional as F
        return F.sub(self, other)

    def __rsub__(self, other):
        from vxc.autodiff import functional as F
        return F.sub(other, self)

    def __mul__(self, other):
        from vxc.autodiff import functional as F
        return F.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from vxc.autodiff import functional as F
        return F.div(self, other)

    def __rtruediv__(self, other):
        from vxc.autodiff import functional as F
        return F.div(other, self)

    def __neg__(self):
        from vxc.autodiff import functional as F
        return F.neg(self)

    def __pow__(self, exponent):
        from vxc.autodiff import functional as F
        return F.power(self, exponent)

    def __matmul__(self, other):
        from vxc.autodiff import functional as F
        return F.matmul(self, other)

    def __getitem__(self, index):
        from vxc.autodiff import functional as F
        return F.getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        from vxc.autodiff import functional as F
        return F.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        from vxc.autodiff import functional as F
        return F.mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        from vxc.autodiff import functional as F
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return F.reshape(self, shape)

    def transpose(self, *axes):
        from vxc.autodiff import functional as F
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return F.transpose(self, axes or None)

    @property
    def T(self):
        return self.transpose()


def as_tensor(value, dtype=None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value, dtype=dtype)


def make_result(data: np.ndarray, inputs: Sequence[Tensor], backward_fn: Callable,
                op: str, stochastic: bool = False) -> Tensor:
    """Wrap an op result, recording a node when any input needs a gradient."""
    if _grad_enabled and any(t.requires_grad for t in inputs):
        node = Node(op, inputs, backward_fn, stochastic=stochastic)
        return Tensor(data, requires_grad=True, _node=node)
    return Tensor(data)


def backward(loss: Tensor, grad=None):
    """Populate ``.grad`` of every requires-grad leaf reachable from ``loss``.

    Gradients are summed into existing ``.grad`` arrays, so repeated calls
    accumulate until :meth:`Tensor.zero_grad` is used.
    """
    if grad is None:
        if loss.data.size != 1:
            raise UsageError(f"backward() needs a scalar loss, got shape {loss.shape}")
        grad = np.ones_like(loss.data)
    else:
        grad = np.asarray(grad, dtype=loss.dtype)
        if grad.shape != loss.shape:
            raise UsageError(f"seed gradient shape {grad.shape} != output shape {loss.shape}")
    if loss._node is None:
        if loss.requires_grad:
            _accumulate_leaf(loss, grad)
        return
    tape = Tape.of(loss)
    pending = {id(loss._node): grad}
    for node in reversed(tape.nodes):
        g_out = pending.pop(id(node), None)
        if g_out is None:
            continue
        g_inputs = node.backward(g_out)
        for t, g in zip(node.inputs, g_inputs):
            if g is None or not t.requires_grad:
                continue
            if t._node is None:
                _accumulate_leaf(t, g)
            else:
                key = id(t._node)
                if key in pending:
                    pending[key] = pending[key] + g
                else:
                    pending[key] = g


def _accumulate_leaf(t: Tensor, g: np.ndarray):
    g = np.asarray(g, dtype=t.dtype)
    if g.shape != t.shape:
        raise UsageError(f"gradient shape {g.shape} does not match leaf shape {t.shape}")
    if t.grad is None:
        t.grad = g.copy()
    else:
        t.grad = t.grad + g
