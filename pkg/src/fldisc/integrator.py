"""One-step schemes induced by discretization maps, simulation and error studies."""

from __future__ import annotations

import csv
import io
import math
import os
import tempfile
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .autodiff import primal_array
from .geometry import DiscretizationMap, lift_map, make_builtin_map, Diffeomorphism
from .linalg import ConvergenceError, newton
from .systems import DiscreteLTI, ExtendedSystem, LinearizingData

MODES = ("implicit-general", "lifted-fast-path")


class StepError(RuntimeError):
    """A single step failed (Newton divergence or chart exit)."""


class SimulationError(RuntimeError):
    def __init__(self, message: str, k: int, partial: "Trajectory"):
        super().__init__(f"step {k}: {message}")
        self.message = message
        self.k = k
        self.partial = partial


@dataclass(frozen=True)
class DiscreteScheme:
    map: DiscretizationMap
    ext: ExtendedSystem
    h: float
    mode: str = "implicit-general"
    lin: Optional[LinearizingData] = None

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError(f"step size must be positive, got {self.h}")
        if self.mode not in MODES:
            raise ValueError(f"unknown scheme mode {self.mode!r}")
        if self.mode == "lifted-fast-path":
            if self.lin is None or self.map.kind != "lifted" or self.map.base is None:
                raise ValueError("lifted-fast-path needs a lifted map and linearizing data")

    def __call__(self, xi, mu):
        return step(self, xi, mu)


def lifted_scheme(ext: ExtendedSystem, lin: LinearizingData, h: float,
                  base: str = "explicit-euler", mode: str = "lifted-fast-path") -> DiscreteScheme:
    """Scheme of the map (Φ⁻¹×Φ⁻¹)∘D_base∘TΦ, where D_base acts in linearizing coordinates."""
    to_xi = Diffeomorphism(lambda z: lin.inverse(z), lin.forward)
    dmap = lift_map(make_builtin_map(base, lin.dim), to_xi)
    return DiscreteScheme(dmap, ext, h, mode, lin)


def plain_scheme(ext: ExtendedSystem, h: float, kind: str = "explicit-euler") -> DiscreteScheme:
    return DiscreteScheme(make_builtin_map(kind, ext.n_ext), ext, h)


def _implicit_step(dmap: DiscretizationMap, velocity: Callable, x_k, h: float, seed) -> np.ndarray:
    """Solve D⁻¹(x_k, x_{k+1}) = h·(π(D⁻¹(x_k, x_{k+1})), velocity(π(...))) for x_{k+1}."""
    if dmap.kind == "explicit-euler":
        return x_k + h * velocity(x_k)

    def residual(y):
        x, v = dmap.inverse(x_k, y)
        return v - h * velocity(x)

    try:
        return newton(residual, seed, tol=1e-12, maxiter=50, jac="fd").x
    except ConvergenceError as exc:
        raise StepError(str(exc)) from exc


def step(scheme: DiscreteScheme, xi, mu) -> np.ndarray:
    """ξ_{k+1} from ξ_k under the piecewise-constant control μ_k."""
    xi = np.asarray(xi)
    mu = np.asarray(mu)
    ext, h = scheme.ext, scheme.h
    if scheme.mode == "lifted-fast-path":
        lin = scheme.lin
        base = scheme.map.base
        z = lin.forward(xi)
        # ndarray.dot has far less call overhead than @ on 5-vectors
        zdot = lin.jacobian(xi).dot(ext.F(xi) + ext.G(xi).dot(mu))
        if base.kind == "explicit-euler":
            z_next = z + h * zdot
        else:
            def z_velocity(zz):
                x = lin.inverse(zz, hint=xi)
                return lin.jacobian(x) @ ext.velocity(x, mu)

            z_next = _implicit_step(base, z_velocity, z, h, primal_array(z + h * zdot))
        try:
            return lin.inverse(z_next, hint=xi)
        except (ValueError, RuntimeError) as exc:
            raise StepError(f"left the chart of the transformation: {exc}") from exc

    def velocity(x):
        return ext.velocity(x, mu)

    seed = primal_array(xi + h * velocity(xi))
    if scheme.map.kind == "explicit-euler":
        return xi + h * velocity(xi)
    try:
        return _implicit_step(scheme.map, velocity, xi, h, seed)
    except (ValueError, RuntimeError) as exc:
        if isinstance(exc, StepError):
            raise
        raise StepError(str(exc)) from exc


def _linear_system(A: np.ndarray, B: np.ndarray) -> ExtendedSystem:
    return ExtendedSystem(A.shape[0], B.shape[1], lambda z: A @ z, lambda z: B)


def discretize_lti(dmap: DiscretizationMap, A, B, h: float, *, seed: int = 0) -> DiscreteLTI:
    """(A_h, B_h) of the scheme the map induces on ż = Az + Bv.

    Raises ValueError if that scheme is not affine (superposition defect > 1e-9).
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    n, m = B.shape
    scheme = DiscreteScheme(dmap, _linear_system(A, B), h)

    def run(z, v):
        return step(scheme, z, v)

    origin = run(np.zeros(n), np.zeros(m))
    if np.max(np.abs(origin)) > 1e-9:
        raise ValueError("induced scheme does not fix the origin; it is not linear")
    rng = np.random.default_rng(seed)
    z1, z2 = rng.standard_normal((2, n))
    v1, v2 = rng.standard_normal((2, m))
    defect = run(z1 + z2, v1 + v2) - run(z1, v1) - run(z2, v2) + origin
    if np.max(np.abs(defect)) > 1e-9:
        raise ValueError(f"induced scheme is not affine (superposition defect {np.max(np.abs(defect)):.2e})")
    A_h = np.column_stack([run(e, np.zeros(m)) for e in np.eye(n)])
    B_h = np.column_stack([run(np.zeros(n), e) for e in np.eye(m)])
    return DiscreteLTI(A_h, B_h, h)


@dataclass
class Trajectory:
    """States ξ_0..ξ_K on t_k = t₀ + k·h, controls μ_0..μ_{K-1} held on [t_k, t_{k+1})."""

    t: np.ndarray
    states: np.ndarray
    controls: np.ndarray
    h: float

    def __post_init__(self):
        if not (len(self.states) == len(self.t) == len(self.controls) + 1):
            raise ValueError("trajectory needs len(states) == len(t) == len(controls) + 1")

    @property
    def steps(self) -> int:
        return len(self.controls)

    def to_csv(self, path=None) -> str:
        """CSV with header t,xi_1..,mu_1..; the final row has blank controls."""
        n = self.states.shape[1]
        m = self.controls.shape[1] if self.controls.ndim == 2 and self.controls.size else _ncols(self.controls)
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["t"] + [f"xi_{i + 1}" for i in range(n)] + [f"mu_{j + 1}" for j in range(m)])
        for k, tk in enumerate(self.t):
            row = [fmt(tk)] + [fmt(s) for s in self.states[k]]
            row += [fmt(c) for c in self.controls[k]] if k < self.steps else [""] * m
            writer.writerow(row)
        text = buf.getvalue()
        if path is not None:
            write_atomic(path, text)
        return text


def _ncols(controls: np.ndarray) -> int:
    return controls.shape[1] if controls.ndim == 2 else 0


def fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_atomic(path, text: str) -> None:
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def simulate(scheme: DiscreteScheme, controller: Callable, xi0, steps: int, t0: float = 0.0) -> Trajectory:
    """Iterate the scheme with μ_k = controller(k, ξ_k)."""
    xi = np.asarray(xi0, dtype=float)
    states = [xi]
    controls = []
    m = scheme.ext.m
    for k in range(steps):
        try:
            mu = np.asarray(controller(k, xi), dtype=float)
            if mu.shape != (m,):
                mu = mu.reshape(m)
            xi = np.asarray(step(scheme, xi, mu), dtype=float)
            if not all(map(math.isfinite, xi.tolist())):
                raise StepError("non-finite state")
        except (ValueError, RuntimeError, ZeroDivisionError, FloatingPointError) as exc:
            partial = _make_traj(states, controls, scheme.h, t0, m)
            raise SimulationError(str(exc), k, partial) from exc
        controls.append(mu)
        states.append(xi)
    return _make_traj(states, controls, scheme.h, t0, m)


def _make_traj(states, controls, h, t0, m) -> Trajectory:
    states = np.array(states, dtype=float)
    ctrl = np.array(controls, dtype=float).reshape(len(controls), m)
    t = t0 + h * np.arange(len(states))
    return Trajectory(t, states, ctrl, h)


def reference_trajectory(ext: ExtendedSystem, control, xi0, t_grid, substeps: int = 100) -> Trajectory:
    """Fine-step classical RK4 solution on ``t_grid`` with the control held on each interval.

    ``control`` is either an array of μ_k (replayed open loop) or a controller
    ``(k, ξ) -> μ`` sampled on the reference's own state at each t_k
    (sample-and-hold feedback). Each interval uses ``substeps`` RK4 steps.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    steps = len(t_grid) - 1
    replay = not callable(control)
    if replay:
        control = np.asarray(control, dtype=float).reshape(steps, ext.m)
    x = np.asarray(xi0, dtype=float)
    states = [x]
    controls = []
    for k in range(steps):
        mu = control[k] if replay else np.asarray(control(k, x), dtype=float).reshape(ext.m)
        controls.append(mu)
        dt = (t_grid[k + 1] - t_grid[k]) / substeps
        for _ in range(substeps):
            k1 = ext.velocity(x, mu)
            k2 = ext.velocity(x + 0.5 * dt * k1, mu)
            k3 = ext.velocity(x + 0.5 * dt * k2, mu)
            k4 = ext.velocity(x + dt * k3, mu)
            x = x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        states.append(x)
    h = float(t_grid[1] - t_grid[0]) if steps else 0.0
    return Trajectory(t_grid.copy(), np.array(states), np.array(controls).reshape(steps, ext.m), h)


def global_error(traj: Trajectory, ref: Trajectory) -> np.ndarray:
    """‖ξ(t_k) − ξ_k‖ for every grid point."""
    if len(traj.t) != len(ref.t) or not np.allclose(traj.t, ref.t, rtol=0, atol=1e-12):
        raise ValueError("trajectory and reference are on different time grids")
    return np.linalg.norm(traj.states - ref.states, axis=1)


def closed_loop_error(scheme: DiscreteScheme, controller: Callable, xi0, T: float,
                      substeps: int = 100) -> tuple[Trajectory, Trajectory, np.ndarray]:
    """Simulate to horizon T and compare with the exact sample-and-hold closed loop."""
    steps = int(round(T / scheme.h))
    traj = simulate(scheme, controller, xi0, steps)
    ref = reference_trajectory(scheme.ext, controller, xi0, traj.t, substeps)
    return traj, ref, global_error(traj, ref)


@dataclass(frozen=True)
class OrderEstimate:
    slope: float
    h_list: tuple
    errors: tuple
    degenerate: bool = False
    geometric: bool = True
    notes: tuple = field(default=())


def _is_geometric(h_list: Sequence[float]) -> bool:
    ratios = np.asarray(h_list[1:]) / np.asarray(h_list[:-1])
    return bool(np.allclose(ratios, ratios[0], rtol=1e-9))


def order_estimate(make_scheme: Callable[[float], DiscreteScheme], controller: Callable, xi0,
                   T: float, h_list: Sequence[float], substeps: int = 100,
                   floor: float = 1e-12) -> OrderEstimate:
    """Least-squares slope of log(max global error) against log(h)."""
    h_list = [float(h) for h in h_list]
    if len(h_list) < 4:
        raise ValueError("order estimation needs at least 4 step sizes")
    errors = []
    for h in h_list:
        try:
            _, _, err = closed_loop_error(make_scheme(h), controller, xi0, T, substeps)
        except SimulationError as exc:
            raise SimulationError(f"h={h}: {exc.message}", exc.k, exc.partial) from exc
        errors.append(float(np.max(err)))
    geometric = _is_geometric(h_list)
    notes = () if geometric else ("step sizes are not geometric; plain least squares used",)
    if min(errors) <= floor:
        return OrderEstimate(float("nan"), tuple(h_list), tuple(errors), True, geometric,
                             notes + ("errors at rounding floor; fit is degenerate",))
    slope = float(np.polyfit(np.log(h_list), np.log(errors), 1)[0])
    return OrderEstimate(slope, tuple(h_list), tuple(errors), False, geometric, notes)


def linearity_residual(traj: Trajectory, lin: LinearizingData, v_seq, dlti: DiscreteLTI) -> np.ndarray:
    """‖Φ(ξ_{k+1}) − A_h Φ(ξ_k) − B_h v_k‖ per step."""
    z = np.array([lin.forward(s) for s in traj.states])
    v = np.asarray(v_seq, dtype=float).reshape(traj.steps, -1)
    pred = z[:-1] @ dlti.A_h.T + v @ dlti.B_h.T
    return np.linalg.norm(z[1:] - pred, axis=1)
