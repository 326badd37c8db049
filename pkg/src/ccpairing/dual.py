"""Forward-mode dual numbers over numpy arrays.

A :class:`Dual` carries a value together with its first derivatives and,
at order 2, its second derivatives with respect to a fixed set of seed
slots.  Values may be scalars or 2-D arrays (column vectors are stored as
``(n, 1)``), so polynomial matrix expressions propagate exact derivatives
through ``+``, ``*`` and ``@``.

The second-order jet is the collapsed form of a dual-over-dual evaluation:
products obey the Leibniz rule truncated at second order, which is exact
for the polynomial functionals evaluated in this package.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np


def _lift(arr: np.ndarray | None, lead: int, ndim: int) -> np.ndarray | None:
    """Insert unit axes after the ``lead`` slot axes so the value part has ``ndim`` axes."""
    if arr is None:
        return None
    missing = ndim - (arr.ndim - lead)
    if missing <= 0:
        return arr
    shape = arr.shape[:lead] + (1,) * missing + arr.shape[lead:]
    return arr.reshape(shape)


def _add(a, b):
    if a is None:
        return b
    if b is None:
        return a
    return a + b


class Dual:
    """Value with exact first (and optionally second) derivatives.

    ``grad`` has shape ``(k,) + value.shape`` and ``hess`` has shape
    ``(k, k) + value.shape``.  Either may be ``None`` to mean identically
    zero, which keeps constants and linear terms cheap.
    """

    __slots__ = ("val", "grad", "hess", "nslots", "order")
    __array_ufunc__ = None

    def __init__(self, val, grad=None, hess=None, nslots: int = 0, order: int = 1):
        self.val = np.asarray(val, dtype=float)
        self.grad = grad
        self.hess = hess
        self.nslots = nslots
        self.order = order

    # -- construction -----------------------------------------------------

    @classmethod
    def variables(cls, x: Sequence[float], order: int = 1) -> list["Dual"]:
        """Seed one independent variable per entry of ``x``."""
        x = np.asarray(x, dtype=float)
        k = x.size
        eye = np.eye(k)
        return [cls(x[i], eye[i].copy(), None, k, order) for i in range(k)]

    @classmethod
    def constant(cls, val, nslots: int, order: int = 1) -> "Dual":
        return cls(val, None, None, nslots, order)

    # -- accessors --------------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.val.shape

    def gradient(self) -> np.ndarray:
        if self.grad is None:
            return np.zeros((self.nslots,) + self.val.shape)
        return np.broadcast_to(self.grad, (self.nslots,) + self.val.shape).copy()

    def hessian(self) -> np.ndarray:
        if self.order < 2:
            raise ValueError("second derivatives were not propagated (order=1)")
        if self.hess is None:
            return np.zeros((self.nslots, self.nslots) + self.val.shape)
        return np.broadcast_to(self.hess, (self.nslots, self.nslots) + self.val.shape).copy()

    def __getitem__(self, idx) -> "Dual":
        if not isinstance(idx, tuple):
            idx = (idx,)
        full = (Ellipsis,) + idx
        g = None if self.grad is None else self.grad[full]
        h = None if self.hess is None else self.hess[full]
        return Dual(self.val[idx], g, h, self.nslots, self.order)

    @property
    def T(self) -> "Dual":
        g = None if self.grad is None else np.swapaxes(self.grad, -1, -2)
        h = None if self.hess is None else np.swapaxes(self.hess, -1, -2)
        return Dual(self.val.T, g, h, self.nslots, self.order)

    def __float__(self) -> float:
        return float(self.val)

    def __repr__(self) -> str:
        return f"Dual(val={self.val!r}, nslots={self.nslots}, order={self.order})"

    # -- arithmetic -------------------------------------------------------

    def _coerce(self, other) -> "Dual":
        if isinstance(other, Dual):
            return other
        return Dual(other, None, None, self.nslots, self.order)

    def __neg__(self) -> "Dual":
        g = None if self.grad is None else -self.grad
        h = None if self.hess is None else -self.hess
        return Dual(-self.val, g, h, self.nslots, self.order)

    def __add__(self, other) -> "Dual":
        other = self._coerce(other)
        nd = max(self.val.ndim, other.val.ndim)
        g = _add(_lift(self.grad, 1, nd), _lift(other.grad, 1, nd))
        h = None
        if self.order > 1:
            h = _add(_lift(self.hess, 2, nd), _lift(other.hess, 2, nd))
        return Dual(self.val + other.val, g, h, self.nslots, self.order)

    __radd__ = __add__

    def __sub__(self, other) -> "Dual":
        return self + (-self._coerce(other))

    def __rsub__(self, other) -> "Dual":
        return (-self) + other

    def __mul__(self, other) -> "Dual":
        if not isinstance(other, Dual):
            c = np.asarray(other, dtype=float)
            nd = max(self.val.ndim, c.ndim)
            g = None if self.grad is None else _lift(self.grad, 1, nd) * c
            h = None if self.hess is None else _lift(self.hess, 2, nd) * c
            return Dual(self.val * c, g, h, self.nslots, self.order)
        a, b = self, other
        nd = max(a.val.ndim, b.val.ndim)
        av, bv = a.val, b.val
        ag, bg = _lift(a.grad, 1, nd), _lift(b.grad, 1, nd)
        g = _add(None if ag is None else ag * bv, None if bg is None else av * bg)
        h = None
        if a.order > 1:
            ah, bh = _lift(a.hess, 2, nd), _lift(b.hess, 2, nd)
            h = _add(None if ah is None else ah * bv, None if bh is None else av * bh)
            if ag is not None and bg is not None:
                cross = ag[:, None] * bg[None, :]
                h = _add(h, cross + np.swapaxes(cross, 0, 1))
        return Dual(av * bv, g, h, a.nslots, a.order)

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Dual":
        if isinstance(other, Dual):
            raise TypeError("division by a Dual is not supported; functionals are polynomial")
        return self * (1.0 / np.asarray(other, dtype=float))

    def __pow__(self, n: int) -> "Dual":
        if not isinstance(n, (int, np.integer)) or n < 0:
            raise ValueError("only non-negative integer powers are supported")
        out = Dual(np.ones_like(self.val), None, None, self.nslots, self.order)
        for _ in range(n):
            out = out * self
        return out

    def __matmul__(self, other) -> "Dual":
        if not isinstance(other, Dual):
            c = np.asarray(other, dtype=float)
            g = None if self.grad is None else self.grad @ c
            h = None if self.hess is None else self.hess @ c
            return Dual(self.val @ c, g, h, self.nslots, self.order)
        a, b = self, other
        av, bv = a.val, b.val
        g = _add(None if a.grad is None else a.grad @ bv, None if b.grad is None else av @ b.grad)
        h = None
        if a.order > 1:
            h = _add(None if a.hess is None else a.hess @ bv, None if b.hess is None else av @ b.hess)
            if a.grad is not None and b.grad is not None:
                cross = a.grad[:, None] @ b.grad[None, :]
                h = _add(h, cross + np.swapaxes(cross, 0, 1))
        return Dual(av @ bv, g, h, a.nslots, a.order)

    def __rmatmul__(self, other) -> "Dual":
        c = np.asarray(other, dtype=float)
        g = None if self.grad is None else c @ self.grad
        h = None if self.hess is None else c @ self.hess
        return Dual(c @ self.val, g, h, self.nslots, self.order)


def value(x) -> np.ndarray:
    """Strip derivative information (works on plain arrays too)."""
    return x.val if isinstance(x, Dual) else np.asarray(x, dtype=float)
