"""Discretization and retraction maps on open subsets of ℝ^d, and their lifts.

Tangent vectors are pairs (point, vector) in ℝ^d × ℝ^d. A discretization map
sends (x, v) to a pair of points (x₀, x₁) and must satisfy
D(x, 0) = (x, x) and ∂(D² − D¹)/∂v |_{v=0} = I.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .autodiff import jacobian, jvp, primal_array
from .linalg import ConvergenceError, newton, solve

KINDS = ("explicit-euler", "implicit-euler", "midpoint", "lifted", "from-retraction", "custom")
BUILTIN_KINDS = ("explicit-euler", "implicit-euler", "midpoint")


class MapInversionError(RuntimeError):
    pass


@dataclass(frozen=True)
class Diffeomorphism:
    """A map with inverse and tangent map; missing pieces fall back to AD and Newton."""

    forward: Callable[[np.ndarray], np.ndarray]
    inverse: Optional[Callable[[np.ndarray], np.ndarray]] = None
    dforward: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def __call__(self, x):
        return np.asarray(self.forward(x))

    def inv(self, y, hint=None):
        if self.inverse is not None:
            return np.asarray(self.inverse(y))
        seed = y if hint is None else hint
        try:
            return newton(lambda s: self.forward(s) - y, seed, jac="ad", damped=True).x
        except ConvergenceError as exc:
            raise MapInversionError(str(exc)) from exc

    def jac(self, x):
        if self.dforward is not None:
            return np.asarray(self.dforward(x))
        return jacobian(self.forward, x)

    def push(self, x, v):
        """Tangent map: Dφ(x)·v."""
        if self.dforward is not None:
            return np.asarray(self.dforward(x)) @ np.asarray(v)
        return jvp(self.forward, x, v)

    def pull(self, y, w):
        """Tangent map of the inverse at y: Dφ⁻¹(y)·w."""
        if self.inverse is not None:
            return jvp(self.inverse, y, w)
        return solve(self.jac(self.inv(y)), w)

    def inverted(self) -> "Diffeomorphism":
        if self.inverse is None:
            raise ValueError("cannot swap a diffeomorphism without a closed-form inverse")
        return Diffeomorphism(self.inverse, self.forward)

    def then(self, other: "Diffeomorphism") -> "Diffeomorphism":
        """other ∘ self."""
        inverse = None
        if self.inverse is not None and other.inverse is not None:
            def inverse(y):
                return self.inverse(other.inverse(y))
        return Diffeomorphism(lambda x: other.forward(self.forward(x)), inverse)


IDENTITY = Diffeomorphism(lambda x: x, lambda y: y)


@dataclass(frozen=True)
class RetractionMap:
    R: Callable[[np.ndarray, np.ndarray], np.ndarray]
    R_inv: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None

    def __call__(self, x, v):
        return np.asarray(self.R(x, v))


@dataclass(frozen=True)
class DiscretizationMap:
    """D(x, v) = (D¹, D²) with inverse (x₀, x₁) ↦ (x, v).

    ``base`` and ``phi`` are set on lifted maps: the map is then
    (φ×φ)∘base∘Tφ⁻¹.
    """

    dim: int
    D: Callable
    D_inv: Optional[Callable] = None
    kind: str = "custom"
    base: Optional["DiscretizationMap"] = None
    phi: Optional[Diffeomorphism] = None

    def __call__(self, x, v):
        d1, d2 = self.D(np.asarray(x), np.asarray(v))
        return np.asarray(d1), np.asarray(d2)

    def inverse(self, x0, x1):
        x0, x1 = np.asarray(x0), np.asarray(x1)
        if self.D_inv is not None:
            x, v = self.D_inv(x0, x1)
            return np.asarray(x), np.asarray(v)
        d = self.dim

        def residual(s):
            a, b = self(s[:d], s[d:])
            return np.concatenate([a - x0, b - x1])

        try:
            sol = newton(residual, np.concatenate([primal_array(x0), primal_array(x1 - x0)]), jac="fd")
        except ConvergenceError as exc:
            raise MapInversionError(f"numeric inversion of {self.kind} map failed: {exc}") from exc
        return sol.x[:d], sol.x[d:]


def make_builtin_map(kind: str, dim: int) -> DiscretizationMap:
    if dim < 1:
        raise ValueError("dimension must be at least 1")
    if kind == "explicit-euler":
        return DiscretizationMap(dim, lambda x, v: (x, x + v), lambda a, b: (a, b - a), kind)
    if kind == "implicit-euler":
        return DiscretizationMap(dim, lambda x, v: (x - v, x), lambda a, b: (b, b - a), kind)
    if kind == "midpoint":
        return DiscretizationMap(dim, lambda x, v: (x - v / 2, x + v / 2),
                                 lambda a, b: ((a + b) / 2, b - a), kind)
    raise ValueError(f"unknown discretization map kind {kind!r}; builtin kinds: {', '.join(BUILTIN_KINDS)}")


def retraction_to_discretization(R: RetractionMap, dim: int) -> DiscretizationMap:
    """D(x, v) = (x, R(x, v)); the inverse solves R(x₀, v) = x₁ for v."""

    def D(x, v):
        return x, R(x, v)

    def D_inv(x0, x1):
        if R.R_inv is not None:
            return x0, np.asarray(R.R_inv(x0, x1))
        try:
            sol = newton(lambda v: R(x0, v) - x1, primal_array(x1 - x0), jac="fd")
        except ConvergenceError as exc:
            raise MapInversionError(f"retraction inversion failed: {exc}") from exc
        return x0, sol.x

    return DiscretizationMap(dim, D, D_inv, "from-retraction")


def lift_map(D: DiscretizationMap, phi: Diffeomorphism) -> DiscretizationMap:
    """D_φ = (φ×φ)∘D∘Tφ⁻¹ on the image of φ."""

    def D_lift(y, ydot):
        x = phi.inv(y)
        v = phi.pull(y, ydot)
        d1, d2 = D(x, v)
        return phi(d1), phi(d2)

    def D_lift_inv(y0, y1):
        x0 = phi.inv(y0)
        x1 = phi.inv(y1, hint=x0)
        x, v = D.inverse(x0, x1)
        return phi(x), phi.push(x, v)

    return DiscretizationMap(D.dim, D_lift, D_lift_inv, "lifted", base=D, phi=phi)


@dataclass(frozen=True)
class AxiomReport:
    passed: bool
    base_error: float
    tangent_error: float
    worst_point: Optional[np.ndarray]
    base_tol: float = 1e-12
    tangent_tol: float = 1e-6


def _fd_tangent(fn: Callable, x: np.ndarray, step: float) -> np.ndarray:
    d = x.size
    cols = []
    for j in range(d):
        e = np.zeros(d)
        e[j] = step
        cols.append((fn(x, e) - fn(x, -e)) / (2 * step))
    return np.column_stack(cols)


def _check(zero_err: Callable, tangent: Callable, points, step, base_tol, tangent_tol) -> AxiomReport:
    worst_b = worst_t = 0.0
    worst_pt, worst_score = None, -1.0
    for p in points:
        p = np.asarray(p, dtype=float)
        eb = zero_err(p)
        et = float(np.max(np.abs(_fd_tangent(tangent, p, step) - np.eye(p.size))))
        worst_b, worst_t = max(worst_b, eb), max(worst_t, et)
        score = max(eb / base_tol, et / tangent_tol)
        if score > worst_score:
            worst_score, worst_pt = score, p
    passed = worst_b <= base_tol and worst_t <= tangent_tol
    return AxiomReport(passed, worst_b, worst_t, worst_pt, base_tol, tangent_tol)


def check_map_axioms(D: DiscretizationMap, points, *, step: float = 1e-6,
                     base_tol: float = 1e-12, tangent_tol: float = 1e-6) -> AxiomReport:
    """D(x,0) = (x,x) and (∂D²/∂v − ∂D¹/∂v)|_{v=0} = I by central differences."""

    def zero_err(p):
        a, b = D(p, np.zeros_like(p))
        return float(max(np.max(np.abs(a - p)), np.max(np.abs(b - p))))

    def diff(p, v):
        a, b = D(p, v)
        return b - a

    return _check(zero_err, diff, points, step, base_tol, tangent_tol)


def check_retraction_axioms(R: RetractionMap, points, *, step: float = 1e-6,
                            base_tol: float = 1e-12, tangent_tol: float = 1e-6) -> AxiomReport:
    """R(x,0) = x and ∂R/∂v|_{v=0} = I by central differences."""

    def zero_err(p):
        return float(np.max(np.abs(R(p, np.zeros_like(p)) - p)))

    return _check(zero_err, lambda p, v: R(p, v), points, step, base_tol, tangent_tol)
