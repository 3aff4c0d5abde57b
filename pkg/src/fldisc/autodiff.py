"""Forward-mode automatic differentiation with nestable, tagged dual numbers.

A :class:`Dual` carries a primal value and a first-order perturbation for a
single tag. Tags are ordered by creation, and a newer tag always sits on the
outside, so functions that differentiate internally (a Jacobian inside a vector
field whose Lie bracket is being taken) compose without perturbation confusion.

User maps must be written with generic arithmetic: build outputs with
``np.array([...])`` rather than assigning into preallocated float arrays, and
use numpy ufuncs (``np.sin``, ``np.sqrt``, ...) or the helpers below.
"""

from __future__ import annotations

import itertools
import math
from typing import Callable

import numpy as np

_tags = itertools.count(1)


def new_tag() -> int:
    return next(_tags)


class Dual:
    """re + du*eps_tag with eps_tag**2 = 0; ``re`` and ``du`` may be Duals of older tags."""

    __slots__ = ("re", "du", "tag")

    def __init__(self, re, du, tag: int):
        self.re = re
        self.du = du
        self.tag = tag

    def __repr__(self) -> str:
        return f"Dual({self.re!r}, {self.du!r}, tag={self.tag})"

    # -- arithmetic -------------------------------------------------------
    def __add__(self, other):
        if isinstance(other, Dual):
            if other.tag == self.tag:
                return Dual(self.re + other.re, self.du + other.du, self.tag)
            if other.tag > self.tag:
                return other.__radd__(self)
        elif isinstance(other, np.ndarray):
            return NotImplemented
        return Dual(self.re + other, self.du, self.tag)

    def __radd__(self, other):
        return Dual(other + self.re, self.du, self.tag)

    def __sub__(self, other):
        if isinstance(other, Dual):
            if other.tag == self.tag:
                return Dual(self.re - other.re, self.du - other.du, self.tag)
            if other.tag > self.tag:
                return other.__rsub__(self)
        elif isinstance(other, np.ndarray):
            return NotImplemented
        return Dual(self.re - other, self.du, self.tag)

    def __rsub__(self, other):
        return Dual(other - self.re, -self.du, self.tag)

    def __mul__(self, other):
        if isinstance(other, Dual):
            if other.tag == self.tag:
                return Dual(self.re * other.re,
                            self.re * other.du + self.du * other.re, self.tag)
            if other.tag > self.tag:
                return other.__rmul__(self)
        elif isinstance(other, np.ndarray):
            return NotImplemented
        return Dual(self.re * other, self.du * other, self.tag)

    def __rmul__(self, other):
        return Dual(other * self.re, other * self.du, self.tag)

    def __truediv__(self, other):
        if isinstance(other, Dual):
            if other.tag == self.tag:
                q = self.re / other.re
                return Dual(q, (self.du - q * other.du) / other.re, self.tag)
            if other.tag > self.tag:
                return other.__rtruediv__(self)
        elif isinstance(other, np.ndarray):
            return NotImplemented
        return Dual(self.re / other, self.du / other, self.tag)

    def __rtruediv__(self, other):
        q = other / self.re
        return Dual(q, -q * self.du / self.re, self.tag)

    def __neg__(self):
        return Dual(-self.re, -self.du, self.tag)

    def __pos__(self):
        return self

    def __pow__(self, other):
        if isinstance(other, Dual) and other.tag >= self.tag:
            if other.tag > self.tag:
                return other.__rpow__(self)
            return (self.log() * other).exp()
        if isinstance(other, (int, np.integer)):
            if other == 0:
                return Dual(self.re ** 0, 0.0 * self.du, self.tag)
            return Dual(self.re ** other, other * self.re ** (other - 1) * self.du, self.tag)
        return Dual(self.re ** other, other * self.re ** (other - 1) * self.du, self.tag)

    def __rpow__(self, other):
        # other ** self with other constant w.r.t. this tag
        val = other ** self.re
        return Dual(val, val * _log(other) * self.du, self.tag)

    def __abs__(self):
        return -self if primal(self) < 0 else self

    # -- comparisons act on the innermost primal value -------------------
    def __lt__(self, other):
        return primal(self) < primal(other)

    def __le__(self, other):
        return primal(self) <= primal(other)

    def __gt__(self, other):
        return primal(self) > primal(other)

    def __ge__(self, other):
        return primal(self) >= primal(other)

    def __eq__(self, other):
        return primal(self) == primal(other)

    def __ne__(self, other):
        return primal(self) != primal(other)

    __hash__ = None

    # -- elementary functions (numpy ufuncs on object arrays call these) --
    def sqrt(self):
        r = _sqrt(self.re)
        return Dual(r, self.du / (2 * r), self.tag)

    def exp(self):
        e = _exp(self.re)
        return Dual(e, e * self.du, self.tag)

    def log(self):
        return Dual(_log(self.re), self.du / self.re, self.tag)

    def sin(self):
        return Dual(_sin(self.re), _cos(self.re) * self.du, self.tag)

    def cos(self):
        return Dual(_cos(self.re), -_sin(self.re) * self.du, self.tag)

    def tan(self):
        t = _tan(self.re)
        return Dual(t, (1 + t * t) * self.du, self.tag)

    def tanh(self):
        t = _tanh(self.re)
        return Dual(t, (1 - t * t) * self.du, self.tag)

    def arctan(self):
        return Dual(_arctan(self.re), self.du / (1 + self.re * self.re), self.tag)

    def conjugate(self):
        return self


def _unary(name: str, fn: Callable[[float], float]):
    def apply(x):
        if isinstance(x, Dual):
            return getattr(x, name)()
        return fn(x)
    apply.__name__ = name
    return apply


_sqrt = _unary("sqrt", math.sqrt)
_exp = _unary("exp", math.exp)
_log = _unary("log", math.log)
_sin = _unary("sin", math.sin)
_cos = _unary("cos", math.cos)
_tan = _unary("tan", math.tan)
_tanh = _unary("tanh", math.tanh)
_arctan = _unary("arctan", math.atan)

sqrt, exp, log, sin, cos, tan, tanh, arctan = _sqrt, _exp, _log, _sin, _cos, _tan, _tanh, _arctan


def primal(x):
    """Innermost float value of a (possibly nested) dual scalar."""
    while isinstance(x, Dual):
        x = x.re
    return x


def primal_array(x) -> np.ndarray:
    if type(x) is np.ndarray and x.dtype == np.float64:
        return x
    x = np.asarray(x)
    if x.dtype != object:
        return x.astype(float, copy=False)
    return np.vectorize(primal, otypes=[float])(x) if x.size else x.astype(float)


def is_generic(x) -> bool:
    """True when ``x`` holds any Dual entries."""
    if isinstance(x, Dual):
        return True
    x = np.asarray(x)
    return x.dtype == object and any(isinstance(v, Dual) for v in x.flat)


def as_vector(values) -> np.ndarray:
    """Array from a list of scalars; float dtype unless some entry is a Dual."""
    try:
        return np.array(values, dtype=float)
    except TypeError:
        return np.array(values, dtype=object)


def _seed(x: np.ndarray, v: np.ndarray, tag: int) -> np.ndarray:
    out = np.empty(x.shape, dtype=object)
    for i in range(x.size):
        out.flat[i] = Dual(x.flat[i], v.flat[i], tag)
    return out


def _tangent(y, tag: int) -> np.ndarray:
    y = np.asarray(y)
    out = np.empty(y.shape, dtype=object)
    for i in range(y.size):
        v = y.flat[i]
        out.flat[i] = v.du if isinstance(v, Dual) and v.tag == tag else 0.0
    return as_vector(out.tolist()) if out.ndim else as_vector([out.item()])[0]


def _value(y, tag: int) -> np.ndarray:
    y = np.asarray(y)
    out = np.empty(y.shape, dtype=object)
    for i in range(y.size):
        v = y.flat[i]
        out.flat[i] = v.re if isinstance(v, Dual) and v.tag == tag else v
    return as_vector(out.tolist()) if out.ndim else as_vector([out.item()])[0]


def jvp(f: Callable, x, v) -> np.ndarray:
    """Directional derivative Df(x)·v by one forward pass."""
    x = np.asarray(x)
    v = np.asarray(v)
    tag = new_tag()
    return _tangent(f(_seed(x, v, tag)), tag)


def value_and_jvp(f: Callable, x, v):
    x = np.asarray(x)
    v = np.asarray(v)
    tag = new_tag()
    y = f(_seed(x, v, tag))
    return _value(y, tag), _tangent(y, tag)


def ad_jacobian(f: Callable, x) -> np.ndarray:
    """Jacobian of a vector map by one forward pass per input coordinate."""
    x = np.asarray(x)
    n = x.size
    cols = []
    for j in range(n):
        e = np.zeros(n)
        e[j] = 1.0
        cols.append(np.atleast_1d(jvp(f, x, e)).ravel())
    if not cols:
        return np.zeros((np.size(f(x)), 0))
    return _stack_columns(cols)


def fd_jacobian(f: Callable, x) -> np.ndarray:
    """Central differences with step max(1e-6, 1e-6·|x_i|)."""
    x = np.asarray(x)
    n = x.size
    cols = []
    for j in range(n):
        s = max(1e-6, 1e-6 * abs(primal(x.flat[j])))
        xp = x.astype(object if x.dtype == object else float, copy=True)
        xm = xp.copy()
        xp.flat[j] = xp.flat[j] + s
        xm.flat[j] = xm.flat[j] - s
        cols.append((np.atleast_1d(f(xp)) - np.atleast_1d(f(xm))).ravel() / (2 * s))
    return _stack_columns(cols)


def _stack_columns(cols) -> np.ndarray:
    mat = np.empty((cols[0].size, len(cols)), dtype=object)
    for j, c in enumerate(cols):
        mat[:, j] = c
    return as_vector(mat.tolist())


def jacobian(f: Callable, x, method: str = "ad") -> np.ndarray:
    """Jacobian of ``f`` at ``x``; ``method`` is ``"ad"`` (default) or ``"fd"``."""
    if method == "ad":
        return ad_jacobian(f, x)
    if method == "fd":
        return fd_jacobian(f, x)
    raise ValueError(f"unknown Jacobian method {method!r}")
