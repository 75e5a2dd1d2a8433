"""Dense float64 matrices and a small reverse-mode gradient tape.

Every primitive accepts plain 2-D ``numpy`` arrays or :class:`Node` objects.
When no input is a node the primitive simply returns the computed array, so
the same network and loss code serves both inference and training.  When at
least one input is a node, the result is recorded on that node's tape and
:meth:`Tape.backward` can later propagate gradients to registered parameters.

The primitive set is closed: matmul, add, mul, scale, transpose,
concat_rows, row_normalize, leaky_relu, exp, log, logsumexp_rows and
softmax_ce_rows.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "ContractError",
    "DimensionError",
    "DomainError",
    "Node",
    "Tape",
    "as_matrix",
    "matmul",
    "add",
    "mul",
    "scale",
    "transpose",
    "concat_rows",
    "row_normalize",
    "leaky_relu",
    "exp",
    "log",
    "logsumexp_rows",
    "softmax_ce_rows",
    "value_of",
]


class DimensionError(ValueError):
    """Operand shapes do not conform to a primitive."""


class DomainError(ValueError):
    """An input lies outside the domain of an operation."""


class ContractError(RuntimeError):
    """A caller violated a documented precondition."""


def as_matrix(x, *, copy: bool = True) -> np.ndarray:
    """Return ``x`` as a read-only, finite, 2-D float64 array.

    Scalars become ``(1, 1)`` and vectors become a single row.
    """
    arr = np.array(x, dtype=np.float64, copy=copy)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    elif arr.ndim != 2:
        raise DimensionError(f"expected at most 2 dimensions, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DomainError("matrix entries must be finite")
    arr.setflags(write=False)
    return arr


class Node:
    """A value recorded on a :class:`Tape`."""

    __slots__ = ("value", "tape", "index", "parents", "grad_fn", "name")

    def __init__(self, value, tape, index, parents=(), grad_fn=None, name=None):
        self.value = value
        self.tape = tape
        self.index = index
        self.parents = parents
        self.grad_fn = grad_fn
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Node{label}(shape={self.value.shape}, index={self.index})"


class Tape:
    """Ordered record of primitive applications.

    Nodes are appended in creation order, which is a topological order of the
    computation graph; :meth:`backward` walks it in reverse exactly once.
    """

    def __init__(self):
        self.nodes: list[Node] = []
        self.params: dict[str, Node] = {}

    def _push(self, value, parents=(), grad_fn=None, name=None) -> Node:
        node = Node(value, self, len(self.nodes), parents, grad_fn, name)
        self.nodes.append(node)
        return node

    def parameter(self, value, name: str) -> Node:
        if name in self.params:
            raise ContractError(f"parameter {name!r} registered twice")
        node = self._push(_checked(value), name=name)
        self.params[name] = node
        return node

    def constant(self, value) -> Node:
        return self._push(_checked(value))

    def backward(self, loss: Node) -> dict[str, np.ndarray]:
        """Return d(loss)/d(parameter) for every registered parameter."""
        if not isinstance(loss, Node) or loss.tape is not self:
            raise ContractError("loss must be a node recorded on this tape")
        if loss.value.size != 1:
            raise ContractError(f"loss must be scalar, got shape {loss.value.shape}")
        grads: dict[int, np.ndarray] = {loss.index: np.ones_like(loss.value)}
        for node in reversed(self.nodes[: loss.index + 1]):
            g = grads.pop(node.index, None)
            if g is None or node.grad_fn is None:
                if g is not None:
                    grads[node.index] = g  # leaf: keep for the parameter lookup
                continue
            for parent, pg in zip(node.parents, node.grad_fn(g)):
                if pg is None:
                    continue
                if parent.index in grads:
                    grads[parent.index] = grads[parent.index] + pg
                else:
                    grads[parent.index] = pg
        return {
            name: grads.get(p.index, np.zeros_like(p.value))
            for name, p in self.params.items()
        }


def _checked(value) -> np.ndarray:
    if isinstance(value, np.ndarray) and value.dtype == np.float64 and value.ndim == 2:
        return value
    return as_matrix(value)


def value_of(x) -> np.ndarray:
    return x.value if isinstance(x, Node) else x


def _apply(forward, backward, inputs):
    tape = None
    for x in inputs:
        if isinstance(x, Node):
            tape = x.tape
            break
    values = [value_of(x) for x in inputs]
    for v in values:
        if not isinstance(v, np.ndarray) or v.ndim != 2:
            raise DimensionError("primitive inputs must be 2-D arrays")
    out, saved = forward(*values)
    if tape is None:
        return out
    parents = tuple(x if isinstance(x, Node) else tape.constant(x) for x in inputs)
    trainable = [p.grad_fn is not None or p.name is not None for p in parents]

    def grad_fn(g):
        return tuple(
            gi if need else None
            for gi, need in zip(backward(g, values, out, saved), trainable)
        )

    if not any(trainable):
        return tape._push(out)
    return tape._push(out, parents, grad_fn)


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    if shape[0] == 1 and g.shape[0] != 1:
        g = g.sum(axis=0, keepdims=True)
    if shape[1] == 1 and g.shape[1] != 1:
        g = g.sum(axis=1, keepdims=True)
    return g


def _broadcast_ok(a, b):
    return all(db == da or db == 1 for da, db in zip(a.shape, b.shape))


def matmul(a, b):
    def fwd(a, b):
        if a.shape[1] != b.shape[0]:
            raise DimensionError(f"matmul shapes {a.shape} and {b.shape} do not conform")
        return a @ b, None

    def bwd(g, vals, out, saved):
        a, b = vals
        return g @ b.T, a.T @ g

    return _apply(fwd, bwd, (a, b))


def add(a, b):
    """Elementwise sum; ``b`` may be a ``(1, n)`` row or ``(m, 1)`` column."""

    def fwd(a, b):
        if not _broadcast_ok(a, b):
            raise DimensionError(f"cannot add shapes {a.shape} and {b.shape}")
        return a + b, None

    def bwd(g, vals, out, saved):
        return _unbroadcast(g, vals[0].shape), _unbroadcast(g, vals[1].shape)

    return _apply(fwd, bwd, (a, b))


def mul(a, b):
    """Elementwise product with the same broadcasting rule as :func:`add`."""

    def fwd(a, b):
        if not _broadcast_ok(a, b):
            raise DimensionError(f"cannot multiply shapes {a.shape} and {b.shape}")
        return a * b, None

    def bwd(g, vals, out, saved):
        a, b = vals
        return _unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)

    return _apply(fwd, bwd, (a, b))


def scale(a, factor: float):
    factor = float(factor)

    def fwd(a):
        return a * factor, None

    def bwd(g, vals, out, saved):
        return (g * factor,)

    return _apply(fwd, bwd, (a,))


def transpose(a):
    def fwd(a):
        return a.T, None

    def bwd(g, vals, out, saved):
        return (g.T,)

    return _apply(fwd, bwd, (a,))


def concat_rows(a, b):
    def fwd(a, b):
        if a.shape[1] != b.shape[1]:
            raise DimensionError(f"cannot stack shapes {a.shape} and {b.shape}")
        return np.concatenate([a, b], axis=0), None

    def bwd(g, vals, out, saved):
        m = vals[0].shape[0]
        return g[:m], g[m:]

    return _apply(fwd, bwd, (a, b))


def row_normalize(a):
    """Project each row onto the unit sphere; zero rows are a domain error."""

    def fwd(a):
        norms = np.sqrt(np.einsum("ij,ij->i", a, a))[:, None]
        if np.any(norms == 0.0):
            raise DomainError("row_normalize of a zero row")
        return a / norms, norms

    def bwd(g, vals, out, norms):
        proj = np.einsum("ij,ij->i", g, out)[:, None]
        return ((g - out * proj) / norms,)

    return _apply(fwd, bwd, (a,))


def leaky_relu(a, slope: float = 0.2):
    def fwd(a):
        mask = a > 0
        return np.where(mask, a, slope * a), mask

    def bwd(g, vals, out, mask):
        return (np.where(mask, g, slope * g),)

    return _apply(fwd, bwd, (a,))


def exp(a):
    def fwd(a):
        return np.exp(a), None

    def bwd(g, vals, out, saved):
        return (g * out,)

    return _apply(fwd, bwd, (a,))


def log(a):
    def fwd(a):
        if np.any(a <= 0):
            raise DomainError("log of a non-positive entry")
        return np.log(a), None

    def bwd(g, vals, out, saved):
        return (g / vals[0],)

    return _apply(fwd, bwd, (a,))


def _log_softmax(a):
    shifted = a - a.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    return shifted - lse


def logsumexp_rows(a):
    """Row-wise log-sum-exp, shape ``(m, 1)``, computed with max subtraction."""

    def fwd(a):
        top = a.max(axis=1, keepdims=True)
        e = np.exp(a - top)
        s = e.sum(axis=1, keepdims=True)
        return top + np.log(s), e / s

    def bwd(g, vals, out, softmax):
        return (g * softmax,)

    return _apply(fwd, bwd, (a,))


def softmax_ce_rows(logits, targets):
    """Mean over rows of ``-log softmax(row)[target]`` as a ``(1, 1)`` matrix.

    ``targets`` is an integer sequence with one column index per row; it is
    data, not a differentiable input.
    """
    targets = np.asarray(targets, dtype=np.intp)

    def fwd(z):
        m = z.shape[0]
        if m == 0:
            raise ContractError("softmax cross-entropy over an empty batch")
        if targets.shape != (m,):
            raise DimensionError(f"need {m} targets, got shape {targets.shape}")
        if np.any(targets < 0) or np.any(targets >= z.shape[1]):
            raise DimensionError("target index out of range")
        logp = _log_softmax(z)
        loss = -logp[np.arange(m), targets].mean()
        return np.array([[loss]]), logp

    def bwd(g, vals, out, logp):
        m = logp.shape[0]
        d = np.exp(logp)
        d[np.arange(m), targets] -= 1.0
        return (d * (g[0, 0] / m),)

    return _apply(fwd, bwd, (logits,))
