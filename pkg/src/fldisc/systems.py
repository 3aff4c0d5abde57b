"""Control-affine systems, dynamic compensators and linearizing transformations."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .autodiff import ad_jacobian, as_vector, primal_array
from .linalg import ConvergenceError, newton, numerical_rank

Vector = np.ndarray
Guard = Callable[[Vector], bool]


class ChartError(ValueError):
    """A point lies outside the chart on which a map is valid."""


class SingularityError(ChartError):
    """The linearizing feedback is singular at the requested point."""


class InversionError(RuntimeError):
    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (last residual {residual:.3e})")
        self.residual = residual


def _always(_x) -> bool:
    return True


def _guard_ok(guard: Guard, x) -> bool:
    return bool(guard(primal_array(x)))


@dataclass(frozen=True)
class ControlAffineSystem:
    """ẋ = f(x) + g(x)·u with state dimension n and m inputs."""

    n: int
    m: int
    f: Callable[[Vector], Vector]
    g: Callable[[Vector], np.ndarray]
    domain_guard: Guard = _always
    name: str = ""

    def drift(self, x) -> Vector:
        return np.asarray(self.f(x))

    def input_matrix(self, x) -> np.ndarray:
        return np.asarray(self.g(x)).reshape(self.n, self.m)

    def velocity(self, x, u) -> Vector:
        return self.drift(x) + self.input_matrix(x) @ np.asarray(u)

    def inputs_independent(self, points) -> bool:
        """rank g(x) = m at every point (singular-value tolerance)."""
        return all(numerical_rank(self.input_matrix(p), self.n) == self.m for p in points)


@dataclass(frozen=True)
class DynamicCompensator:
    """ẇ = γ(x,w) + δ(x,w)μ,  u = α(x,w) + β(x,w)μ.

    ``gamma`` and ``delta`` may be omitted when q = 0. No invertibility is
    required of β or δ.
    """

    q: int
    alpha: Callable
    beta: Callable
    gamma: Optional[Callable] = None
    delta: Optional[Callable] = None
    w0: Optional[Vector] = None

    @property
    def initial_state(self) -> Vector:
        return np.zeros(self.q) if self.w0 is None else np.asarray(self.w0, dtype=float)


@dataclass(frozen=True)
class ExtendedSystem:
    """ξ̇ = F(ξ) + G(ξ)μ on ℝ^{n_ext}."""

    n_ext: int
    m: int
    F: Callable[[Vector], Vector]
    G: Callable[[Vector], np.ndarray]
    guard: Guard = _always
    provenance: Optional[tuple] = None

    def drift(self, xi) -> Vector:
        return np.asarray(self.F(xi))

    def input_matrix(self, xi) -> np.ndarray:
        return np.asarray(self.G(xi)).reshape(self.n_ext, self.m)

    def velocity(self, xi, mu) -> Vector:
        return self.drift(xi) + self.input_matrix(xi) @ np.asarray(mu)

    def as_control_affine(self) -> ControlAffineSystem:
        return ControlAffineSystem(self.n_ext, self.m, self.F, self.G, self.guard)


def system_as_extended(sys: ControlAffineSystem) -> ExtendedSystem:
    return ExtendedSystem(sys.n, sys.m, sys.f, sys.g, sys.domain_guard, (sys, None))


def _shape_of(name: str, value, expected: tuple) -> np.ndarray:
    arr = np.asarray(value)
    if arr.size != int(np.prod(expected)):
        raise ValueError(f"compensator map {name!r} returned shape {arr.shape}, expected {expected}")
    return arr.reshape(expected)


def extend(sys: ControlAffineSystem, comp: DynamicCompensator,
           probe: Optional[Vector] = None) -> ExtendedSystem:
    """Append the compensator state to the plant, giving F and G of the extended system.

    Dimensions are checked by evaluating every compensator map once at
    ``probe`` (default: x = 0 and w = w₀).
    """
    n, m, q = sys.n, sys.m, comp.q
    if q > 0 and (comp.gamma is None or comp.delta is None):
        raise ValueError("compensator with q > 0 needs both gamma and delta")
    if probe is None:
        probe = np.concatenate([np.zeros(n), comp.initial_state])
    px, pw = probe[:n], probe[n:]
    _shape_of("alpha", comp.alpha(px, pw), (m,))
    _shape_of("beta", comp.beta(px, pw), (m, m))
    if q > 0:
        _shape_of("gamma", comp.gamma(px, pw), (q,))
        _shape_of("delta", comp.delta(px, pw), (q, m))

    def F(xi):
        x, w = xi[:n], xi[n:]
        head = sys.drift(x) + sys.input_matrix(x) @ np.asarray(comp.alpha(x, w)).reshape(m)
        if q == 0:
            return head
        return np.concatenate([head, np.asarray(comp.gamma(x, w)).reshape(q)])

    def G(xi):
        x, w = xi[:n], xi[n:]
        top = sys.input_matrix(x) @ np.asarray(comp.beta(x, w)).reshape(m, m)
        if q == 0:
            return top
        return np.concatenate([top, np.asarray(comp.delta(x, w)).reshape(q, m)], axis=0)

    def guard(xi):
        return bool(sys.domain_guard(xi[:n]))

    return ExtendedSystem(n + q, m, F, G, guard, provenance=(sys, comp))


def eval_dynamics(ext: ExtendedSystem, xi, mu) -> Vector:
    if not _guard_ok(ext.guard, xi):
        raise ChartError(f"state {primal_array(xi)} violates the domain guard of the system")
    return ext.velocity(xi, mu)


@dataclass(frozen=True)
class DiscreteLTI:
    A_h: np.ndarray
    B_h: np.ndarray
    h: float


@dataclass(frozen=True)
class LinearizingData:
    """State transformation Φ, feedback μ = α̃(ξ) + β̃(ξ)v and the target pair (A, B).

    ``phi_inv`` (closed-form inverse) and ``dphi`` (closed-form Jacobian) are
    optional; AD and Newton are used in their absence.
    """

    phi: Callable[[Vector], Vector]
    alpha: Callable[[Vector], Vector]
    beta: Callable[[Vector], np.ndarray]
    A: np.ndarray
    B: np.ndarray
    phi_inv: Optional[Callable[[Vector], Vector]] = None
    dphi: Optional[Callable[[Vector], np.ndarray]] = None
    chart_guard: Guard = _always
    name: str = field(default="", compare=False)

    @property
    def dim(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    def forward(self, xi) -> Vector:
        return np.asarray(self.phi(xi))

    def jacobian(self, xi) -> np.ndarray:
        if self.dphi is not None:
            return np.asarray(self.dphi(xi))
        return ad_jacobian(self.phi, xi)

    def inverse(self, z, hint=None) -> Vector:
        return inverse_transform(self, z, hint)

    def feedback(self, xi, v) -> Vector:
        return apply_feedback(self, xi, v)


def apply_feedback(lin: LinearizingData, xi, v) -> Vector:
    """μ = α̃(ξ) + β̃(ξ)v."""
    if not lin.chart_guard(primal_array(xi)):
        raise SingularityError(f"linearizing feedback is singular or undefined at {primal_array(xi)}")
    return lin.alpha(xi) + np.asarray(lin.beta(xi)).dot(np.asarray(v))


def inverse_transform(lin: LinearizingData, z, hint=None, *, tol: float = 1e-10) -> Vector:
    """ξ with Φ(ξ) = z.

    Uses the closed-form inverse when the data carries one; otherwise damped
    Newton on Φ(ξ) − z starting from ``hint`` (required in that case).
    """
    z = np.asarray(z)
    if lin.phi_inv is not None:
        xi = np.asarray(lin.phi_inv(z))
        # plain-float loop: this check runs once per simulation step
        zp = primal_array(z).tolist()
        back = primal_array(lin.phi(xi)).tolist()
        res = max(abs(a - b) for a, b in zip(back, zp))
        if not res <= tol * (1.0 + max(map(abs, zp))):
            raise InversionError("closed-form inverse does not reproduce z", float(res))
        return xi
    if hint is None:
        raise ValueError("no closed-form inverse: a Newton seed (hint) is required")
    try:
        sol = newton(lambda s: lin.forward(s) - z, hint, tol=tol, maxiter=50, jac="ad", damped=True)
    except ConvergenceError as exc:
        raise InversionError("Newton inversion of the transformation failed", exc.residual) from exc
    return sol.x


@dataclass(frozen=True)
class LinearizationReport:
    drift_residual: float
    input_residual: float
    worst_point: Optional[Vector]
    tol: float = 1e-9

    @property
    def passed(self) -> bool:
        return self.drift_residual <= self.tol and self.input_residual <= self.tol


def verify_linearization(ext: ExtendedSystem, lin: LinearizingData, points,
                         tol: float = 1e-9) -> LinearizationReport:
    """Max over points of ‖DΦ(F+Gα̃) − AΦ‖ and ‖DΦ·G·β̃ − B‖."""
    worst, worst_pt = (0.0, 0.0), None
    drift_max = input_max = 0.0
    for p in points:
        p = np.asarray(p, dtype=float)
        J = lin.jacobian(p)
        G = ext.input_matrix(p)
        r1 = float(np.linalg.norm(J @ (ext.drift(p) + G @ np.asarray(lin.alpha(p))) - lin.A @ lin.forward(p)))
        r2 = float(np.linalg.norm(J @ G @ np.asarray(lin.beta(p)).reshape(lin.m, lin.m) - lin.B))
        if max(r1, r2) > max(worst):
            worst, worst_pt = (r1, r2), p
        drift_max, input_max = max(drift_max, r1), max(input_max, r2)
    return LinearizationReport(drift_max, input_max, worst_pt, tol)


