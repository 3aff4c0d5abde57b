"""Ready-made scenarios: the four-state unicycle-type system with a one-state precompensator."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import as_vector, sqrt
from .systems import (ControlAffineSystem, DynamicCompensator, ExtendedSystem,
                      LinearizingData)

DEFAULT_GAINS = np.array([[10.0, 10.0, 10.0, 0.0, 0.0],
                          [0.0, 0.0, 0.0, 10.0, 10.0]])


@dataclass(frozen=True)
class ScenarioPreset:
    name: str
    system: ControlAffineSystem
    compensator: DynamicCompensator
    ext: ExtendedSystem
    lin: LinearizingData
    xi0: np.ndarray
    gains: np.ndarray
    h: float
    T: float


def _coords(x):
    # Python floats (or Duals) are much cheaper to combine than numpy scalars
    return x.tolist() if isinstance(x, np.ndarray) else list(x)


def _f(x):
    x1, x2, x3, x4 = _coords(x)
    return as_vector([x2 + 2 * x2 * x3, x3, 0.0, 0.0])


def _g(x):
    x1, x2, x3, x4 = _coords(x)
    return as_vector([[0.0, 2 * x2 * x4],
                      [0.0, x4],
                      [1.0, 0.0],
                      [0.0, 1 + x3]])


def _alpha(x, w):
    return as_vector([0.0, w[0]])


def _beta(x, w):
    return np.array([[1.0, 0.0], [0.0, 0.0]])


def _gamma(x, w):
    return np.zeros(1)


def _delta(x, w):
    return np.array([[0.0, 1.0]])


def _F_ext(xi):
    x1, x2, x3, x4, w = _coords(xi)
    s = x3 + x4 * w
    return as_vector([x2 + 2 * x2 * s, s, 0.0, (1 + x3) * w, 0.0])


_G_EXT = np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 0.0], [0.0, 0.0], [0.0, 1.0]])


def _G_ext(xi):
    return _G_EXT


def regularity(xi):
    """1 + x₃ − w·x₄: the feedback matrix determinant; the chart is where it is positive."""
    x1, x2, x3, x4, w = _coords(xi)
    return 1 + x3 - w * x4


def _chart(xi) -> bool:
    return bool(regularity(xi) > 0)


def _phi(xi):
    x1, x2, x3, x4, w = _coords(xi)
    return as_vector([x1 - x2 * x2, x2, x3 + x4 * w, x4, (1 + x3) * w])


def _dphi(xi):
    x1, x2, x3, x4, w = _coords(xi)
    return as_vector([[1.0, -2 * x2, 0.0, 0.0, 0.0],
                      [0.0, 1.0, 0.0, 0.0, 0.0],
                      [0.0, 0.0, 1.0, w, x4],
                      [0.0, 0.0, 0.0, 1.0, 0.0],
                      [0.0, 0.0, w, 0.0, 1 + x3]])


def _phi_inv(z):
    z1, z2, z3, z4, z5 = _coords(z)
    # w solves z4·w² − (1+z3)·w + z5 = 0; the root with 1 + x3 − w·x4 = sqrt(disc) > 0
    # is taken in the cancellation-free form 2·z5 / ((1+z3) + sqrt(disc)).
    disc = (1 + z3) * (1 + z3) - 4 * z4 * z5
    if disc < 0:
        raise ValueError(f"point {z} is outside the image of the transformation")
    w = 2 * z5 / ((1 + z3) + sqrt(disc))
    return as_vector([z1 + z2 * z2, z2, z3 - z4 * w, z4, w])


def _feedback_alpha(xi):
    x1, x2, x3, x4, w = _coords(xi)
    det = 1 + x3 - w * x4
    r1 = -(1 + x3) * w * w
    # inverse of [[1, x4], [w, 1+x3]] applied to (r1, 0)
    return as_vector([(1 + x3) * r1 / det, -w * r1 / det])


def _feedback_beta(xi):
    x1, x2, x3, x4, w = _coords(xi)
    det = 1 + x3 - w * x4
    return as_vector([[(1 + x3) / det, -x4 / det],
                      [-w / det, 1 / det]])


def chain_pair() -> tuple[np.ndarray, np.ndarray]:
    """Two integrator chains of lengths 3 and 2."""
    A = np.zeros((5, 5))
    A[0, 1] = A[1, 2] = A[3, 4] = 1.0
    B = np.zeros((5, 2))
    B[2, 0] = B[4, 1] = 1.0
    return A, B


def unicycle_preset() -> ScenarioPreset:
    system = ControlAffineSystem(4, 2, _f, _g, name="unicycle")
    comp = DynamicCompensator(1, _alpha, _beta, _gamma, _delta)
    # closed-form F, G of the compensated system; tests check them against extend()
    ext = ExtendedSystem(5, 2, _F_ext, _G_ext, _chart, provenance=(system, comp))
    A, B = chain_pair()
    lin = LinearizingData(_phi, _feedback_alpha, _feedback_beta, A, B,
                          phi_inv=_phi_inv, dphi=_dphi, chart_guard=_chart, name="unicycle")
    xi0 = np.array([0.5, 0.2, 0.1, 0.2, 0.0])
    return ScenarioPreset("unicycle", system, comp, ext, lin, xi0, DEFAULT_GAINS.copy(), 1e-2, 10.0)


PRESETS = {"unicycle": unicycle_preset}


def get_preset(name: str) -> ScenarioPreset:
    try:
        return PRESETS[name]()
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; available: {', '.join(sorted(PRESETS))}") from None


class LinearizingController:
    """v = −K·Φ(ξ), then μ = α̃(ξ) + β̃(ξ)v."""

    def __init__(self, lin: LinearizingData, gains):
        self.lin = lin
        self.gains = np.asarray(gains, dtype=float)

    def new_input(self, xi) -> np.ndarray:
        return -self.gains.dot(self.lin.forward(xi))

    def __call__(self, k: int, xi) -> np.ndarray:
        return self.lin.feedback(xi, self.new_input(xi))


def stabilizing_controller(preset: ScenarioPreset, gains=None) -> LinearizingController:
    return LinearizingController(preset.lin, preset.gains if gains is None else gains)


def euler_kernel_reference(xi, h: float) -> np.ndarray:
    """Closed-form 7×2 basis of ker DF_h for the explicit Euler map of the preset.

    Columns are ordered (x₁, x₂, x₃, x₄, w, μ₁, μ₂).
    """
    x1, x2, x3, x4, w = _coords(xi)[:5]
    s = 1 + 2 * (x3 + x4 * w)
    s2 = h * h * x4 - h ** 3 * w * (1 + x3)
    s1 = -h * s * s2 - 2 * h ** 3 * x2 * w * (1 + x3) + 2 * h * h * x2 * x4
    s4 = h * h - h ** 3 * w * w
    s3 = -h * s * s4 + 2 * x2 * s4
    return np.array([[s1, s3],
                     [s2, s4],
                     [0.0, -h],
                     [h * h * (1 + x3), h * h * w],
                     [-h, 0.0],
                     [0.0, 1.0],
                     [1.0, 0.0]])


def audit_points(n_points: int = 25, *, seed: int = 0, margin: float = 1e-3, box: float = 1.0,
                 model=None) -> np.ndarray:
    """Seeded (ξ, μ) samples in the unit box, on the chart and at least ``margin`` away
    from 1 + x₃ − w·x₄ = 0; with ``model`` given, points where it cannot be evaluated
    are skipped too."""
    from .linearizability import sample_points

    def accept(p):
        if regularity(p[:5]) <= margin:
            return False
        if model is None:
            return True
        try:
            out = model(p)
        except (ValueError, RuntimeError, ZeroDivisionError):
            return False
        return bool(np.all(np.isfinite(out)))

    return sample_points(n_points, 7, seed=seed, box=box, accept=accept)
