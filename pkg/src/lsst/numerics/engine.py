"""Dense tensors and a reverse-mode differentiation tape.

Values live in row-major numpy arrays, float64 by default (float32 is
accepted for training-only runs).  Every differentiable primitive records
itself on an explicit :class:`Tape`; sweeping the records in reverse order
once yields exact gradients.  Because records are appended in execution
order, the recording order is already a valid topological order and no
graph search is needed.

The tape is single-writer: one forward pass (one training step) owns it
exclusively.  Kernels themselves are pure and safe to run concurrently on
separate tapes.
"""

from contextlib import contextmanager

import numpy as np

from ..errors import UsageError


class Tensor:
    """A dense nd-array wrapper used by all tape operations.

    The public constructor copies and validates its input: NaN/Inf from
    external data are rejected here so they cannot propagate silently.
    Internal primitives wrap freshly computed arrays via :meth:`_wrap`
    without re-validating.
    """

    __slots__ = ("data",)

    def __init__(self, data, dtype=np.float64):
        arr = np.array(data, dtype=dtype, order="C")
        if not np.all(np.isfinite(arr)):
            raise ValueError("tensor input contains NaN or Inf")
        self.data = arr

    @classmethod
    def _wrap(cls, arr):
        t = cls.__new__(cls)
        t.data = arr
        return t

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
    def dtype(self):
        return self.data.dtype

    def copy(self):
        return Tensor._wrap(self.data.copy())

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype})"


class OpCounter:
    """Multiply-add accumulator owned by a single instrumented forward pass.

    Counts are keyed by tag.  Kernels that are matmul-like count under the
    currently active tag ("matmul" unless a caller pushed one); convolution
    kernels always count under "conv".
    """

    def __init__(self):
        self.counts = {}
        self._tag = "matmul"

    def add(self, n, tag=None):
        key = self._tag if tag is None else tag
        self.counts[key] = self.counts.get(key, 0) + int(n)

    @contextmanager
    def tagged(self, tag):
        prev, self._tag = self._tag, tag
        try:
            yield self
        finally:
            self._tag = prev

    def total(self, *tags):
        if not tags:
            return sum(self.counts.values())
        return sum(self.counts.get(t, 0) for t in tags)


class Tape:
    """Ordered record of primitive operations plus named trainable leaves."""

    def __init__(self, parameters=None):
        self._records = []
        self.parameters = dict(parameters) if parameters else {}
        self.counter = None

    def record(self, out, inputs, vjp):
        """Append one primitive.

        ``vjp(grad_out)`` must return one gradient array (or None) per
        input, in order.  Inputs are kept alive by the record so id-based
        bookkeeping in the backward sweep stays sound.
        """
        self._records.append((out, tuple(inputs), vjp))

    def __len__(self):
        return len(self._records)


class CountingTape(Tape):
    """Tape that counts multiply-adds but records no backward state.

    Lets an instrumented forward pass run at larger sizes without holding
    every convolution's im2col buffer alive.
    """

    def __init__(self):
        super().__init__()
        self.counter = OpCounter()

    def record(self, out, inputs, vjp):
        pass


def gradients(tape, loss, wrt):
    """Reverse-mode gradients of a scalar ``loss`` w.r.t. the tensors in ``wrt``.

    Visits each recorded node exactly once, in reverse recording order, so
    repeated calls on an unchanged tape are bitwise identical.  Tensors the
    loss does not depend on get zero gradients of their own shape.
    """
    if loss.size != 1:
        raise UsageError(f"loss must be scalar, got shape {loss.shape}")
    grad = {id(loss): np.ones_like(loss.data)}
    for out, inputs, vjp in reversed(tape._records):
        g = grad.get(id(out))
        if g is None:
            continue
        for t, gi in zip(inputs, vjp(g)):
            if gi is None:
                continue
            acc = grad.get(id(t))
            grad[id(t)] = gi if acc is None else acc + gi
    return [grad.get(id(t), np.zeros_like(t.data)) for t in wrt]


def backward(tape, loss):
    """Gradients of ``loss`` for every named parameter on the tape.

    Returns ``{name: ndarray}`` in the tape's deterministic parameter order.
    """
    names = list(tape.parameters)
    gs = gradients(tape, loss, [tape.parameters[n] for n in names])
    return dict(zip(names, gs))
