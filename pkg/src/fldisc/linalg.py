"""Small linear-algebra and root-finding helpers shared by the other modules.

Everything here accepts object arrays of :class:`~fldisc.autodiff.Dual` as well
as plain floats, so solves and Newton iterations stay differentiable.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .autodiff import as_vector, fd_jacobian, is_generic, jacobian, primal_array

RANK_RTOL = 1e-10


class ConvergenceError(RuntimeError):
    """Newton iteration failed to reach its tolerance."""

    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(f"{message} (residual {residual:.3e} after {iterations} iterations)")
        self.residual = residual
        self.iterations = iterations


def rank_tolerance(sv: np.ndarray, dim: int) -> float:
    return dim * (sv[0] if sv.size else 0.0) * RANK_RTOL


def numerical_rank(mat, dim: int | None = None) -> int:
    """Rank with tolerance dim·σ_max·1e-10 (dim defaults to the row count)."""
    mat = primal_array(mat)
    if mat.size == 0:
        return 0
    sv = np.linalg.svd(mat, compute_uv=False)
    return int(np.sum(sv > rank_tolerance(sv, dim or mat.shape[0])))


def nullspace(mat, dim: int | None = None) -> np.ndarray:
    """Orthonormal basis (columns) of the right nullspace."""
    mat = primal_array(mat)
    ncols = mat.shape[1]
    if mat.size == 0:
        return np.eye(ncols)
    _, sv, vh = np.linalg.svd(mat)
    r = int(np.sum(sv > rank_tolerance(sv, dim or max(mat.shape))))
    return vh[r:].T.copy()


def orth(mat, dim: int | None = None) -> np.ndarray:
    """Orthonormal basis of the column space."""
    mat = primal_array(mat)
    if mat.size == 0:
        return np.zeros((mat.shape[0], 0))
    u, sv, _ = np.linalg.svd(mat, full_matrices=False)
    r = int(np.sum(sv > rank_tolerance(sv, dim or mat.shape[0])))
    return u[:, :r]


def solve(a, b):
    """Solve a·x = b; Gaussian elimination on primal pivots for generic entries."""
    a = np.asarray(a)
    b = np.asarray(b)
    if not (is_generic(a) or is_generic(b)):
        return np.linalg.solve(a.astype(float), b.astype(float))
    n = a.shape[0]
    vec = b.ndim == 1
    m = a.astype(object).copy()
    rhs = (b.reshape(n, 1) if vec else b).astype(object).copy()
    pm = primal_array(m)
    for k in range(n):
        p = k + int(np.argmax(np.abs(pm[k:, k])))
        if pm[p, k] == 0.0:
            raise np.linalg.LinAlgError("singular matrix")
        if p != k:
            m[[k, p]] = m[[p, k]]
            rhs[[k, p]] = rhs[[p, k]]
            pm[[k, p]] = pm[[p, k]]
        for i in range(k + 1, n):
            factor = m[i, k] / m[k, k]
            m[i, k:] = m[i, k:] - factor * m[k, k:]
            rhs[i] = rhs[i] - factor * rhs[k]
            pm[i, k:] = primal_array(m[i, k:])
    x = np.empty_like(rhs)
    for i in range(n - 1, -1, -1):
        acc = rhs[i]
        for j in range(i + 1, n):
            acc = acc - m[i, j] * x[j]
        x[i] = acc / m[i, i]
    x = as_vector(x.tolist())
    return x.ravel() if vec else x


@dataclass(frozen=True)
class NewtonResult:
    x: np.ndarray
    residual: float
    iterations: int


def newton(residual: Callable, x0, *, tol: float = 1e-12, maxiter: int = 50,
           jac: str = "fd", damped: bool = False, polish: int = 3) -> NewtonResult:
    """Solve residual(x) = 0 from seed ``x0`` (∞-norm tolerance).

    The iteration runs on primal values. If the residual carries dual
    perturbations (a solve nested inside a derivative), ``polish`` extra Newton
    steps are taken in generic arithmetic from the converged point so the
    returned root is differentiable to that nesting depth.
    """
    x = primal_array(x0).copy()
    probe = residual(x)
    generic = is_generic(probe)
    def r_primal(z):
        return primal_array(residual(z))

    def jac_fn(z):
        # AD must see the raw residual: r_primal would strip the seeded perturbations
        if jac == "fd":
            return fd_jacobian(r_primal, z)
        return jacobian(residual, z, "ad")

    r = primal_array(probe)
    norm = float(np.max(np.abs(r))) if r.size else 0.0
    it = 0
    while norm > tol:
        if it >= maxiter:
            raise ConvergenceError("Newton did not converge", norm, it)
        jm = primal_array(jac_fn(x))
        try:
            dx = np.linalg.solve(jm, r)
        except np.linalg.LinAlgError as exc:
            raise ConvergenceError(f"singular Newton Jacobian: {exc}", norm, it) from exc
        step = 1.0
        while True:
            x_new = x - step * dx
            r_new = r_primal(x_new)
            n_new = float(np.max(np.abs(r_new)))
            if not damped or n_new < norm or step < 1e-4:
                break
            step *= 0.5
        if not np.isfinite(n_new):
            raise ConvergenceError("Newton diverged", n_new, it + 1)
        x, r, norm = x_new, r_new, n_new
        it += 1
    if generic:
        xg = x.astype(object)
        for _ in range(polish):
            jm = jacobian(residual, xg, "ad")
            xg = xg - solve(jm, residual(xg))
        x = xg
    return NewtonResult(x=x, residual=norm, iterations=it)
