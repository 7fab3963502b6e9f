"""Tensor type and the reverse-mode tape.

A :class:`Tensor` wraps a float64 numpy array. Operations are subclasses of
:class:`Function`; applying one to tensors that require gradients links the
output to the function instance, which keeps whatever forward values its
adjoint needs. :func:`backward` orders the linked functions topologically
(:class:`DiffGraph`), runs the adjoints in reverse and accumulates ``.grad``
on the leaves. A graph can be walked once: the saved activations are released
afterwards and a second walk raises.
"""

import contextlib

import numpy as np

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable recording inside the block (inference, optimizer updates)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def is_grad_enabled():
    return _GRAD_ENABLED


class GraphConsumedError(RuntimeError):
    pass


def unbroadcast(grad, shape):
    """Sum ``grad`` back down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Function:
    """One recorded operation.

    Subclasses implement ``forward(*arrays, **kwargs) -> ndarray`` and
    ``backward(grad) -> tuple`` with one entry (array or ``None``) per input.
    """

    def __init__(self, *inputs):
        self.inputs = inputs
        self.consumed = False

    def forward(self, *arrays, **kwargs):
        raise NotImplementedError

    def backward(self, grad):
        raise NotImplementedError

    @classmethod
    def apply(cls, *inputs, **kwargs):
        inputs = tuple(as_tensor(t) for t in inputs)
        fn = cls(*inputs)
        fn.needs_input_grad = tuple(t.requires_grad for t in inputs)
        out = fn.forward(*(t.data for t in inputs), **kwargs)
        out = Tensor(out)
        if _GRAD_ENABLED and any(t.requires_grad for t in inputs):
            out.requires_grad = True
            out._fn = fn
        return out

    def release(self):
        """Drop saved activations once the adjoint has run."""
        keep = {"inputs", "consumed", "needs_input_grad"}
        for key in list(vars(self)):
            if key not in keep:
                delattr(self, key)
        self.inputs = ()
        self.consumed = True


class Tensor:
    """Dense float64 array with optional gradient tracking."""

    __slots__ = ("data", "grad", "requires_grad", "_fn", "name", "__weakref__")

    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, name=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=np.float64)
        if any(n < 1 for n in arr.shape):
            raise ValueError(f"tensor extents must all be >= 1, got shape {arr.shape}")
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._fn = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def is_leaf(self):
        return self._fn is None

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _raise_item(self.shape)

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    def backward(self):
        return backward(self)

    # arithmetic is defined in functional.py to keep this module import-light
    def __add__(self, other):
        from . import functional as F
        return F.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import functional as F
        return F.sub(self, other)

    def __rsub__(self, other):
        from . import functional as F
        return F.sub(other, self)

    def __mul__(self, other):
        from . import functional as F
        return F.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import functional as F
        return F.div(self, other)

    def __rtruediv__(self, other):
        from . import functional as F
        return F.div(other, self)

    def __neg__(self):
        from . import functional as F
        return F.mul(self, -1.0)

    def __pow__(self, exponent):
        from . import functional as F
        return F.power(self, exponent)

    def __getitem__(self, index):
        from . import functional as F
        return F.getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        from . import functional as F
        return F.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        from . import functional as F
        return F.mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        from . import functional as F
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return F.reshape(self, shape)

    def transpose(self, *axes):
        from . import functional as F
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return F.transpose(self, axes)


def _raise_item(shape):
    raise ValueError(f"item() needs a single-element tensor, got shape {shape}")


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


class DiffGraph:
    """Topologically ordered view of the functions behind a scalar."""

    def __init__(self, nodes, parameters):
        self.nodes = nodes  # non-leaf tensors, inputs before outputs
        self.parameters = parameters  # leaf tensors that require grad

    @classmethod
    def trace(cls, root):
        nodes, leaves = [], []
        seen = set()
        stack = [(root, False)]
        while stack:
            t, expanded = stack.pop()
            if expanded:
                nodes.append(t)
                continue
            if id(t) in seen:
                continue
            seen.add(id(t))
            if t._fn is None:
                if t.requires_grad:
                    leaves.append(t)
                continue
            if t._fn.consumed:
                raise GraphConsumedError(
                    "graph was already walked by backward(); run a new forward pass first")
            stack.append((t, True))
            for inp in t._fn.inputs:
                if inp.requires_grad and id(inp) not in seen:
                    stack.append((inp, False))
        return cls(nodes, leaves)

    def check_order(self):
        position = {id(t): i for i, t in enumerate(self.nodes)}
        for i, t in enumerate(self.nodes):
            for inp in t._fn.inputs:
                if id(inp) in position and position[id(inp)] >= i:
                    return False
        return True


def backward(loss):
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every reachable leaf."""
    if loss.data.size != 1 or loss.ndim > 1:
        raise ValueError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ValueError("loss is detached: no parameter that requires grad contributed to it")
    graph = DiffGraph.trace(loss)
    grads = {id(loss): np.ones_like(loss.data)}
    for t in reversed(graph.nodes):
        g = grads.pop(id(t), None)
        fn = t._fn
        if g is not None:
            in_grads = fn.backward(g)
            for inp, gi in zip(fn.inputs, in_grads):
                if gi is None or not inp.requires_grad:
                    continue
                if gi.shape != inp.shape:
                    raise RuntimeError(
                        f"{type(fn).__name__} adjoint shape {gi.shape} != input shape {inp.shape}")
                if inp._fn is None:
                    inp.grad = gi.copy() if inp.grad is None else inp.grad + gi
                elif id(inp) in grads:
                    grads[id(inp)] = grads[id(inp)] + gi
                else:
                    grads[id(inp)] = gi
        fn.release()
    if loss._fn is None:
        loss.grad = np.ones_like(loss.data) if loss.grad is None else loss.grad + 1.0
    return graph
