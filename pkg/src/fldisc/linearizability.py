"""Jacobians, Lie brackets and distributions evaluated pointwise, plus two linearizability tests.

``grizzle_audit`` runs the distribution sequence used to decide feedback
linearizability of a discrete map ξ⁺ = F_h(ξ, μ): the kernel distribution K of
DF_h, Δ₀ = span ∂/∂μ, Δ₁ and the involutivity of Δ₀+K and Δ₁+K.
``static_fl_check`` is the classical controllability-distribution test for
continuous-time control-affine systems.

Everything is numeric: distributions are spans of vector fields evaluated at
sample points, ranks use the tolerance dim·σ_max·1e-10, and brackets come from
forward-mode AD.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.linalg

from . import autodiff
from .autodiff import as_vector, jvp, primal_array, sqrt
from .linalg import ConvergenceError, newton, nullspace, numerical_rank, orth, solve
from .systems import ControlAffineSystem, ExtendedSystem

NOT_LINEARIZABLE = "NOT-LINEARIZABLE"
CONSISTENT = "LINEARIZABLE-CONSISTENT"
INCONCLUSIVE = "INCONCLUSIVE"
VERDICTS = (NOT_LINEARIZABLE, CONSISTENT, INCONCLUSIVE)


# -- derivatives ---------------------------------------------------------------

def jacobian(field: Callable, x, method: str = "auto") -> np.ndarray:
    """r×d Jacobian of ``field`` at ``x``.

    ``"auto"`` uses AD and falls back to central differences when the field
    cannot be evaluated on dual numbers (e.g. it assigns into float arrays).
    """
    x = np.asarray(x, dtype=float) if not autodiff.is_generic(x) else np.asarray(x)
    if method != "auto":
        return autodiff.jacobian(field, x, method)
    try:
        return autodiff.jacobian(field, x, "ad")
    except (TypeError, ValueError):
        return autodiff.jacobian(field, x, "fd")


def jacobian_agreement(field: Callable, x) -> float:
    """max|J_ad − J_fd| / max(1, max|J_ad|) at ``x``."""
    ja = primal_array(autodiff.jacobian(field, x, "ad"))
    jf = primal_array(autodiff.jacobian(field, x, "fd"))
    return float(np.max(np.abs(ja - jf)) / max(1.0, float(np.max(np.abs(ja)))))


def lie_bracket(X: Callable, Y: Callable, x) -> np.ndarray:
    """[X, Y](x) = DY(x)·X(x) − DX(x)·Y(x)."""
    return jvp(Y, x, X(x)) - jvp(X, x, Y(x))


# -- distributions -------------------------------------------------------------

@dataclass(frozen=True)
class Distribution:
    """Span of vector fields on ℝ^dim.

    Generators are stored in blocks: each block is a map p ↦ (dim × k) matrix
    whose columns are k generators. One JVP of a block gives the derivative of
    all its columns, which is what makes bracket computations affordable when
    the columns come from a shared computation such as a kernel basis.
    """

    dim: int
    blocks: tuple = ()

    @classmethod
    def from_fields(cls, dim: int, fields: Sequence[Callable]) -> "Distribution":
        blocks = tuple((_column_block(f), 1) for f in fields)
        return cls(dim, blocks)

    @classmethod
    def constant(cls, vectors) -> "Distribution":
        """Constant fields from the columns of a matrix."""
        mat = np.atleast_2d(np.asarray(vectors, dtype=float))
        if mat.shape[1] == 0:
            return cls(mat.shape[0])
        frozen = mat.copy()
        return cls(mat.shape[0], ((lambda p, _m=frozen: _m, mat.shape[1]),))

    @property
    def size(self) -> int:
        """Number of generators."""
        return sum(k for _, k in self.blocks)

    @property
    def generators(self) -> list[Callable]:
        out = []
        for fn, k in self.blocks:
            for j in range(k):
                out.append(lambda p, _fn=fn, _j=j: np.asarray(_fn(p))[:, _j])
        return out

    def matrix(self, p) -> np.ndarray:
        """dim × size matrix of generator values at p (generic entries allowed)."""
        if not self.blocks:
            return np.zeros((self.dim, 0))
        mats = [np.asarray(fn(p)).reshape(self.dim, k) for fn, k in self.blocks]
        return _hstack(mats)

    def rank(self, p) -> int:
        return numerical_rank(self.matrix(p), self.dim) if self.blocks else 0

    def __add__(self, other: "Distribution") -> "Distribution":
        return dist_sum(self, other)


def _column_block(fn: Callable) -> Callable:
    def block(p):
        v = np.asarray(fn(p))
        return v.reshape(v.size, 1)
    return block


def _hstack(mats) -> np.ndarray:
    if any(m.dtype == object for m in mats):
        return np.concatenate([m.astype(object) for m in mats], axis=1)
    return np.concatenate(mats, axis=1)


def coordinate_distribution(dim: int, indices: Sequence[int], scale: float = 1.0) -> Distribution:
    """span{scale·e_i : i ∈ indices}."""
    mat = np.zeros((dim, len(indices)))
    for j, i in enumerate(indices):
        mat[i, j] = scale
    return Distribution.constant(mat)


def dist_sum(a: Distribution, b: Distribution) -> Distribution:
    if a.dim != b.dim:
        raise ValueError(f"cannot add distributions on ℝ^{a.dim} and ℝ^{b.dim}")
    return Distribution(a.dim, a.blocks + b.blocks)


def dist_intersect(a: Distribution, b: Distribution, p) -> Distribution:
    """a(p) ∩ b(p) as constant fields anchored at p."""
    if a.dim != b.dim:
        raise ValueError(f"cannot intersect distributions on ℝ^{a.dim} and ℝ^{b.dim}")
    d = a.dim
    if a.size == 0 or b.size == 0:
        return Distribution(d)
    ca = nullspace(orth(a.matrix(p), d).T, d)
    cb = nullspace(orth(b.matrix(p), d).T, d)
    stacked = np.vstack([ca.T, cb.T])
    basis = np.eye(d) if stacked.shape[0] == 0 else nullspace(stacked, d)
    return Distribution.constant(basis) if basis.shape[1] else Distribution(d)


@dataclass(frozen=True)
class InvolutivityWitness:
    point: np.ndarray
    pair: tuple[int, int]
    rank: int
    rank_with_bracket: int

    def to_dict(self) -> dict:
        return {"point": self.point.tolist(), "pair": list(self.pair),
                "rank": self.rank, "rank_with_bracket": self.rank_with_bracket}


@dataclass(frozen=True)
class InvolutivityResult:
    involutive: bool
    witness: Optional[InvolutivityWitness]
    ranks: list[int]
    failures: list[InvolutivityWitness] = field(default_factory=list)

    def __bool__(self) -> bool:
        return self.involutive


def _block_derivatives(dist: Distribution, p, direction) -> np.ndarray:
    """D(generator matrix)(p)·direction, all blocks at once."""
    mats = [np.asarray(jvp(fn, p, direction)).reshape(dist.dim, k) for fn, k in dist.blocks]
    return primal_array(np.concatenate(mats, axis=1))


def _check_point(dist: Distribution, p, stop_at_first: bool):
    M = primal_array(dist.matrix(p))
    d, k = dist.dim, M.shape[1]
    r = numerical_rank(M, d) if k else 0
    if k < 2 or r == d:
        return r, []
    # derivs[i][:, j] = DX_j(p)·X_i(p)
    derivs = [_block_derivatives(dist, p, M[:, i]) for i in range(k)]
    found = []
    for i in range(k):
        for j in range(i + 1, k):
            bracket = derivs[i][:, j] - derivs[j][:, i]
            r2 = numerical_rank(np.column_stack([M, bracket]), d)
            if r2 > r:
                found.append(InvolutivityWitness(np.asarray(p, dtype=float), (i, j), r, r2))
                if stop_at_first:
                    return r, found
    return r, found


def involutive(dist: Distribution, points, *, stop_at_first: bool = True) -> InvolutivityResult:
    """Is every bracket [X_i, X_j] in the span of the generators at every point?

    With ``stop_at_first`` (default) the scan ends at the first failing pair;
    otherwise every point is checked and one witness per failing point is kept.
    """
    ranks, failures = [], []
    for p in points:
        p = np.asarray(p, dtype=float)
        r, found = _check_point(dist, p, stop_at_first=True)
        ranks.append(r)
        if found:
            failures.append(found[0])
            if stop_at_first:
                break
    return InvolutivityResult(not failures, failures[0] if failures else None, ranks, failures)


# -- discrete maps and their kernel distribution -------------------------------

@dataclass(frozen=True)
class DiscreteMapModel:
    """ξ⁺ = F_h(ξ, μ) with d_s states and m inputs; points of ℝ^{d_s+m} are (ξ, μ)."""

    F_h: Callable[[np.ndarray, np.ndarray], np.ndarray]
    d_s: int
    m: int
    name: str = ""

    @property
    def dim(self) -> int:
        return self.d_s + self.m

    def __call__(self, y) -> np.ndarray:
        y = np.asarray(y)
        return np.asarray(self.F_h(y[:self.d_s], y[self.d_s:]))

    def jacobian(self, y, method: str = "auto") -> np.ndarray:
        """[∂F_h/∂ξ | ∂F_h/∂μ] at y = (ξ, μ)."""
        return jacobian(self, y, method)

    def input_jacobian(self, xi, mu) -> np.ndarray:
        return jacobian(lambda u: self.F_h(xi, u), mu)

    def state_preimage(self, xi, mu) -> np.ndarray:
        """p with F_h(p, μ) = ξ, by Newton seeded at ξ."""
        try:
            return newton(lambda s: np.asarray(self.F_h(s, mu)) - xi, xi,
                          tol=1e-13, jac="ad", damped=True).x
        except ConvergenceError as exc:
            raise ConvergenceError(f"no state preimage under {self.name or 'the map'}: {exc}",
                                   exc.residual, exc.iterations) from exc


def euler_model(ext: ExtendedSystem, h: float) -> DiscreteMapModel:
    """Plain explicit Euler: F_h(ξ, μ) = ξ + h(F(ξ) + G(ξ)μ)."""
    return DiscreteMapModel(lambda xi, mu: xi + h * ext.velocity(xi, mu), ext.n_ext, ext.m,
                            f"explicit Euler (h={h:g})")


def scheme_model(scheme) -> DiscreteMapModel:
    """Wrap one step of an integrator scheme as a discrete map."""
    from .integrator import step

    return DiscreteMapModel(lambda xi, mu: step(scheme, xi, mu), scheme.ext.n_ext, scheme.ext.m,
                            f"{scheme.map.kind} scheme, {scheme.mode} (h={scheme.h:g})")


def linear_model(A_h, B_h) -> DiscreteMapModel:
    A_h = np.asarray(A_h, dtype=float)
    B_h = np.asarray(B_h, dtype=float)
    return DiscreteMapModel(lambda z, v: A_h @ z + B_h @ v, A_h.shape[0], B_h.shape[1], "linear")


def _kernel_pattern(J: np.ndarray):
    """Independent rows and pivot columns of J, chosen by pivoted QR."""
    d = max(J.shape)
    r = numerical_rank(J, d)
    _, _, rows = scipy.linalg.qr(J.T, pivoting=True)
    rows = np.sort(rows[:r])
    _, _, cols = scipy.linalg.qr(J[rows], pivoting=True)
    pivots = np.sort(cols[:r])
    free = np.array([j for j in range(J.shape[1]) if j not in set(pivots)], dtype=int)
    return rows, pivots, free


def _gram_schmidt(N: np.ndarray) -> np.ndarray:
    """Orthonormalize columns in generic arithmetic (modified GS, two passes)."""
    cols = [N[:, j] for j in range(N.shape[1])]
    out = []
    for c in cols:
        for _ in range(2):
            for q in out:
                c = c - (q @ c) * q
        out.append(c / sqrt(c @ c))
    return np.column_stack(out) if out else N[:, :0]


def _kernel_basis(J, pattern) -> np.ndarray:
    rows, pivots, free = pattern
    n = J.shape[1]
    Jr = J[rows]
    if len(free) == 0:
        return np.zeros((n, 0))
    X = solve(Jr[:, pivots], -Jr[:, free]) if len(pivots) else np.zeros((0, len(free)))
    generic = X.dtype == object
    N = np.zeros((n, len(free)), dtype=object if generic else float)
    N[pivots] = X
    N[free, np.arange(len(free))] = 1.0
    return _gram_schmidt(N)


def kernel_distribution(model: DiscreteMapModel, p) -> Distribution:
    """Orthonormal nullspace of DF_h near p, as smooth fields on ℝ^{d_s+m}.

    The kernel is parametrized as a graph over the non-pivot columns chosen at
    p, which keeps the basis smooth (and differentiable by AD) around p.
    """
    p = np.asarray(p, dtype=float)
    J = primal_array(model.jacobian(p))
    pattern = _kernel_pattern(J)
    k = len(pattern[2])
    if k == 0:
        return Distribution(model.dim)

    def block(y):
        return _kernel_basis(model.jacobian(y, "ad"), pattern)

    return Distribution(model.dim, ((block, k),))


def control_distribution(model: DiscreteMapModel) -> Distribution:
    """Δ₀ = span{∂/∂μ_i}."""
    return coordinate_distribution(model.dim, range(model.d_s, model.dim))


def pushed_control_distribution(model: DiscreteMapModel) -> Distribution:
    """Δ₀ + span{(∂F_h/∂μ_i(p, μ), 0)} where p is the state preimage of ξ under F_h(·, μ).

    These are the images of the control directions under DF_h, transported to
    the points they land on.
    """
    d_s, m = model.d_s, model.m

    def block(y):
        y = np.asarray(y)
        xi, mu = y[:d_s], y[d_s:]
        p = model.state_preimage(xi, mu)
        top = np.asarray(model.input_jacobian(p, mu)).reshape(d_s, m)
        return np.concatenate([top.astype(object) if top.dtype == object else top, np.zeros((m, m))])

    return dist_sum(control_distribution(model), Distribution(model.dim, ((block, m),)))


def spans_match(a, b, dim: Optional[int] = None) -> bool:
    """Equal column spans: rank(a) = rank(b) = rank([a | b])."""
    a, b = primal_array(a), primal_array(b)
    d = dim or a.shape[0]
    ra, rb = numerical_rank(a, d), numerical_rank(b, d)
    return ra == rb == numerical_rank(np.column_stack([a, b]), d)


# -- the audit -----------------------------------------------------------------

STAGES = ("K", "D0+K involutive", "D0∩K constant dimension", "D1 involutive", "D1+K involutive")


@dataclass
class AuditStage:
    name: str
    status: str  # "pass", "fail", "unstable", "skipped"
    ranks: list[int] = field(default_factory=list)
    failing_points: int = 0
    witness: Optional[InvolutivityWitness] = None
    note: str = ""

    def to_dict(self) -> dict:
        return {"name": self.name, "status": self.status, "ranks": self.ranks,
                "failing_points": self.failing_points,
                "witness": self.witness.to_dict() if self.witness else None, "note": self.note}


@dataclass
class AuditReport:
    verdict: str
    failed_stage: Optional[str]
    stages: list[AuditStage]
    points: np.ndarray
    model: str = ""

    def stage(self, name: str) -> AuditStage:
        return next(s for s in self.stages if s.name == name)

    def to_dict(self) -> dict:
        return {"model": self.model, "verdict": self.verdict, "failed_stage": self.failed_stage,
                "n_points": int(len(self.points)), "stages": [s.to_dict() for s in self.stages]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_text(self) -> str:
        lines = [f"model: {self.model}", f"sample points: {len(self.points)}"]
        for s in self.stages:
            ranks = sorted(set(s.ranks))
            line = f"  {s.name:<26} {s.status:<8} ranks={ranks}"
            if s.failing_points:
                line += f" failing_points={s.failing_points}"
            lines.append(line)
            if s.witness is not None:
                w = s.witness
                lines.append(f"    witness: pair {w.pair} rank {w.rank} -> {w.rank_with_bracket} "
                             f"at {np.array2string(w.point, precision=4)}")
            if s.note:
                lines.append(f"    {s.note}")
        tail = f" at stage {self.failed_stage}" if self.failed_stage else ""
        lines.append(f"verdict: {self.verdict}{tail}")
        return "\n".join(lines)


def _constant(ranks) -> bool:
    return len(set(ranks)) <= 1


def grizzle_audit(model: DiscreteMapModel, points) -> AuditReport:
    """Distribution sequence Δ₀, K, Δ₁ and involutivity of Δ₀+K, Δ₁+K at sample points.

    NOT-LINEARIZABLE when a required involutivity fails (reporting the stage and
    the number of failing points); INCONCLUSIVE when a rank is not the same at
    all points; LINEARIZABLE-CONSISTENT otherwise. Passing only means none of
    these necessary conditions is violated.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if points.shape[1] != model.dim:
        raise ValueError(f"sample points must lie in ℝ^{model.dim} (state and input)")
    d0 = control_distribution(model)
    d1 = pushed_control_distribution(model)
    kernels = [kernel_distribution(model, p) for p in points]
    stages: list[AuditStage] = []

    def finish(verdict, failed):
        for name in STAGES[len(stages):]:
            stages.append(AuditStage(name, "skipped"))
        return AuditReport(verdict, failed, stages, points, model.name)

    k_ranks = [K.rank(p) for K, p in zip(kernels, points)]
    if not _constant(k_ranks):
        stages.append(AuditStage("K", "unstable", k_ranks, note="kernel rank varies across points"))
        return finish(INCONCLUSIVE, "K")
    stages.append(AuditStage("K", "pass", k_ranks))

    def involutivity_stage(name, dists):
        ranks, failures = [], []
        for dist, p in zip(dists, points):
            res = involutive(dist, [p])
            ranks.extend(res.ranks)
            failures.extend(res.failures)
        if failures:
            return AuditStage(name, "fail", ranks, len(failures), failures[0])
        if not _constant(ranks):
            return AuditStage(name, "unstable", ranks, note="rank varies across points")
        return AuditStage(name, "pass", ranks)

    checks = [
        ("D0+K involutive", lambda: [d0 + K for K in kernels]),
        ("D0∩K constant dimension", None),
        ("D1 involutive", lambda: [d1] * len(points)),
        ("D1+K involutive", lambda: [d1 + K for K in kernels]),
    ]
    for name, make in checks:
        if make is None:
            ranks = [dist_intersect(d0, K, p).size for K, p in zip(kernels, points)]
            st = AuditStage(name, "pass" if _constant(ranks) else "unstable", ranks)
        else:
            st = involutivity_stage(name, make())
        stages.append(st)
        if st.status == "fail":
            return finish(NOT_LINEARIZABLE, name)
        if st.status == "unstable":
            return finish(INCONCLUSIVE, name)
    return finish(CONSISTENT, None)


# -- continuous-time static feedback linearizability -----------------------------

@dataclass(frozen=True)
class StaticFLResult:
    linearizable: Optional[bool]  # None: inconclusive
    stage: Optional[int]
    reason: str
    ranks: dict
    witness: Optional[InvolutivityWitness] = None

    @property
    def verdict(self) -> str:
        return {True: "STATIC-FL", False: "NOT-STATIC-FL", None: INCONCLUSIVE}[self.linearizable]


def _ad_f_block(f: Callable, block: Callable) -> Callable:
    """Columns [f, X_j] = DX_j·f − Df·X_j of a matrix field."""

    def out(x):
        M = np.asarray(block(x))
        dM = np.asarray(jvp(block, x, f(x))).reshape(M.shape)
        cols = [jvp(f, x, M[:, j]) for j in range(M.shape[1])]
        df = np.column_stack(cols) if cols else M[:, :0]
        return dM - df

    return out


def static_fl_check(sys: ControlAffineSystem, points) -> StaticFLResult:
    """Classical test: G_k = span{ad_f^j g_i : j ≤ k} must be involutive and of constant
    rank for k ≤ n−2, and G_{n−1} must have rank n.

    Stops early once some G_k already has rank n.
    """
    points = [np.asarray(p, dtype=float) for p in points]
    n, m = sys.n, sys.m

    def g_block(x):
        return np.asarray(sys.g(x)).reshape(n, m)

    blocks = [(g_block, m)]
    ranks: dict = {}
    for k in range(n):
        dist = Distribution(n, tuple(blocks))
        rk = [dist.rank(p) for p in points]
        ranks[k] = rk
        if not _constant(rk):
            return StaticFLResult(None, k, f"rank of G_{k} varies across points", ranks)
        if rk[0] == n:
            return StaticFLResult(True, k, f"G_{k} has full rank {n}", ranks)
        if k == n - 1:
            break
        res = involutive(dist, points)
        if not res:
            return StaticFLResult(False, k, f"G_{k} is not involutive", ranks, res.witness)
        blocks.append((_ad_f_block(sys.f, blocks[-1][0]), m))
    return StaticFLResult(False, n - 1, f"G_{n - 1} has rank {ranks[n - 1][0]} < {n}", ranks)


# -- sample points -------------------------------------------------------------

def sample_points(n_points: int, dim: int, *, seed: int = 0, box: float = 1.0,
                  accept: Optional[Callable] = None, max_tries: int = 100_000) -> np.ndarray:
    """Seeded uniform draws from [−box, box]^dim kept when ``accept(p)`` is true."""
    rng = np.random.default_rng(seed)
    out = []
    tries = 0
    while len(out) < n_points:
        if tries >= max_tries:
            raise RuntimeError(f"only {len(out)} of {n_points} sample points accepted")
        p = rng.uniform(-box, box, dim)
        tries += 1
        if accept is None or accept(p):
            out.append(p)
    return np.array(out)
