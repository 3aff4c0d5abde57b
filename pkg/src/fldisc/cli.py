"""Command-line front end: ``fldisc simulate | check | order``.

Exit codes: 0 success (or verdict delivered), 1 usage error, 2 runtime failure,
failed check or inconclusive diagnostics.
"""

from __future__ import annotations

import argparse
import math
import sys
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import linearizability as lz
from .geometry import (BUILTIN_KINDS, Diffeomorphism, check_map_axioms,
                       lift_map, make_builtin_map)
from .integrator import (SimulationError, closed_loop_error, discretize_lti, fmt, lifted_scheme,
                         linearity_residual, order_estimate, plain_scheme, simulate, write_atomic)
from .presets import PRESETS, audit_points, get_preset, stabilizing_controller
from .systems import verify_linearization

CHECKS = ("map-axioms", "linearization", "fl-discrete", "fl-continuous", "linearity-residual")
DEFAULT_H_LIST = (0.1, 0.05, 0.025, 0.0125)

EXIT_OK, EXIT_USAGE, EXIT_FAIL = 0, 1, 2


class UsageError(Exception):
    pass


@dataclass(frozen=True)
class ScenarioConfig:
    preset: str = "unicycle"
    map: str = "explicit-euler"
    lifted: bool = False
    h: Optional[float] = None
    T: Optional[float] = None
    gains: Optional[np.ndarray] = None
    seed: int = 0
    out: Optional[str] = None
    h_list: tuple = DEFAULT_H_LIST
    substeps: int = 100

    def validate(self) -> "ScenarioConfig":
        if self.preset not in PRESETS:
            raise UsageError(f"unknown preset {self.preset!r}; available: {', '.join(sorted(PRESETS))}")
        if self.map not in BUILTIN_KINDS:
            raise UsageError(f"unknown map {self.map!r}; choose from {', '.join(BUILTIN_KINDS)}")
        if self.h is not None and not (math.isfinite(self.h) and self.h > 0):
            raise UsageError(f"--h must be positive, got {self.h}")
        if self.T is not None and not (math.isfinite(self.T) and self.T >= 0):
            raise UsageError(f"--T must be non-negative, got {self.T}")
        if self.substeps < 1:
            raise UsageError("--substeps must be at least 1")
        return self


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _floats(text: str) -> tuple:
    try:
        return tuple(float(s) for s in text.replace(" ", "").split(",") if s)
    except ValueError:
        raise UsageError(f"expected comma-separated numbers, got {text!r}") from None


def parse_gains(text: str) -> np.ndarray:
    """Rows separated by ';', entries by ',' (e.g. "10,10,10,0,0;0,0,0,10,10")."""
    rows = [_floats(r) for r in text.split(";") if r.strip()]
    if not rows or len({len(r) for r in rows}) != 1:
        raise UsageError(f"malformed gain matrix {text!r}")
    return np.array(rows)


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"expected a boolean, got {text!r}")


_CONFIG_KEYS = {
    "preset": str, "map": str, "lifted": _bool, "h": float, "T": float, "gains": parse_gains,
    "seed": int, "out": str, "h_list": _floats, "substeps": int,
}


def read_config(path: str) -> dict:
    """Flat key=value file; '#' starts a comment."""
    values = {}
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip().replace("-", "_")
        if not sep or key not in _CONFIG_KEYS:
            raise UsageError(f"{path}:{lineno}: expected key=value with key in {', '.join(_CONFIG_KEYS)}")
        try:
            values[key] = _CONFIG_KEYS[key](value.strip())
        except ValueError:
            raise UsageError(f"{path}:{lineno}: bad value for {key}: {value.strip()!r}") from None
    return values


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="key=value file; flags override it")
    common.add_argument("--preset")
    common.add_argument("--map", help=f"base discretization map ({', '.join(BUILTIN_KINDS)})")
    common.add_argument("--lifted", action="store_true", default=None,
                        help="lift the map through the linearizing transformation")
    common.add_argument("--h", type=float)
    common.add_argument("--T", type=float)
    common.add_argument("--gains", type=parse_gains, help='rows ";"-separated, e.g. "10,10,10,0,0;0,0,0,10,10"')
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output path prefix")
    common.add_argument("--substeps", type=int, help="RK4 substeps per interval of the reference")

    parser = _Parser(prog="fldisc", description="Feedback-linearizable discretizations of control systems.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="closed-loop run with error against a fine reference")
    chk = sub.add_parser("check", parents=[common], help="run one verification")
    chk.add_argument("what", choices=CHECKS)
    order = sub.add_parser("order", parents=[common], help="empirical convergence order")
    order.add_argument("--h-list", dest="h_list", type=_floats, help="comma-separated step sizes (at least 4)")
    return parser


def make_config(args: argparse.Namespace) -> ScenarioConfig:
    values = read_config(args.config) if args.config else {}
    for key in _CONFIG_KEYS:
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    return ScenarioConfig(**values).validate()


# -- commands --------------------------------------------------------------------

def _scheme(cfg: ScenarioConfig, preset, h: float):
    if cfg.lifted:
        return lifted_scheme(preset.ext, preset.lin, h, base=cfg.map)
    return plain_scheme(preset.ext, h, cfg.map)


def _label(cfg: ScenarioConfig) -> str:
    return f"{'lifted ' if cfg.lifted else ''}{cfg.map}"


def _prefix(cfg: ScenarioConfig, default: str) -> str:
    return cfg.out or default


def cmd_simulate(cfg: ScenarioConfig, out=None) -> int:
    out = out or sys.stdout
    preset = get_preset(cfg.preset)
    h = cfg.h or preset.h
    T = preset.T if cfg.T is None else cfg.T
    steps = T / h
    if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
        raise UsageError(f"T={T} is not a whole number of steps of h={h}")
    controller = stabilizing_controller(preset, cfg.gains)
    try:
        traj, ref, err = closed_loop_error(_scheme(cfg, preset, h), controller, preset.xi0, T, cfg.substeps)
    except SimulationError as exc:
        print(f"error: simulation failed at {exc}", file=sys.stderr)
        return EXIT_FAIL
    prefix = _prefix(cfg, cfg.preset)
    traj.to_csv(f"{prefix}.traj.csv")
    write_atomic(f"{prefix}.ctrl.csv", _table(["t"] + [f"mu_{j + 1}" for j in range(traj.controls.shape[1])],
                                              np.column_stack([traj.t[:-1], traj.controls])))
    write_atomic(f"{prefix}.err.csv", _table(["t", "error"], np.column_stack([traj.t, err])))
    n0 = float(np.linalg.norm(traj.states[0]))
    nT = float(np.linalg.norm(traj.states[-1]))
    lines = [
        f"preset: {cfg.preset}",
        f"scheme: {_label(cfg)}, h={fmt(h)}, T={fmt(T)}, steps={traj.steps}",
        f"max global error: {float(np.max(err)):.6e}",
        f"final state norm: {nT:.6e}",
        f"final/initial norm ratio: {nT / n0 if n0 else float('nan'):.6e}",
        f"reference final state norm: {float(np.linalg.norm(ref.states[-1])):.6e}",
    ]
    report = "\n".join(lines) + "\n"
    write_atomic(f"{prefix}.report.txt", report)
    out.write(report)
    return EXIT_OK


def _table(header, rows) -> str:
    body = [",".join(header)]
    body += [",".join(fmt(v) for v in row) for row in np.atleast_2d(rows) if len(row)]
    return "\n".join(body) + "\n"


def _status(ok: bool) -> str:
    return "PASS" if ok else "FAIL"


def _check_map_axioms(cfg, preset, out) -> int:
    rng = np.random.default_rng(cfg.seed)
    dim = preset.ext.n_ext
    base = make_builtin_map(cfg.map, dim)
    if cfg.lifted:
        # the lift acts on ξ; the base map acts in the linearizing coordinates
        dmap = lift_map(base, Diffeomorphism(preset.lin.inverse, preset.lin.forward))
        points = audit_points(100, seed=cfg.seed)[:, :dim]
    else:
        dmap = base
        points = rng.uniform(-1, 1, (100, dim))
    rep = check_map_axioms(dmap, points)
    out.write(f"{_status(rep.passed)}: {_label(cfg)} map axioms at {len(points)} points; "
              f"D(x,0)=(x,x) error {rep.base_error:.2e} (tol {rep.base_tol:g}), "
              f"tangent error {rep.tangent_error:.2e} (tol {rep.tangent_tol:g})\n")
    if not rep.passed:
        out.write(f"  worst point: {rep.worst_point.tolist()}\n")
    return EXIT_OK if rep.passed else EXIT_FAIL


def _check_linearization(cfg, preset, out) -> int:
    points = audit_points(100, seed=cfg.seed)[:, :preset.ext.n_ext]
    rep = verify_linearization(preset.ext, preset.lin, points)
    out.write(f"{_status(rep.passed)}: linearizing transformation of {cfg.preset}; drift residual "
              f"{rep.drift_residual:.2e}, input residual {rep.input_residual:.2e} (tol {rep.tol:g})\n")
    if not rep.passed:
        out.write(f"  worst point: {rep.worst_point.tolist()}\n")
    return EXIT_OK if rep.passed else EXIT_FAIL


def _check_fl_discrete(cfg, preset, out) -> int:
    h = cfg.h or preset.h
    if not cfg.lifted and cfg.map == "explicit-euler":
        model = lz.euler_model(preset.ext, h)
    else:
        model = lz.scheme_model(_scheme(cfg, preset, h))
    points = audit_points(25, seed=cfg.seed, model=model)
    rep = lz.grizzle_audit(model, points)
    text = rep.to_text()
    out.write(text + "\n")
    if rep.verdict == lz.NOT_LINEARIZABLE:
        out.write(f"FAIL: not linearizable (stage {rep.failed_stage})\n")
    elif rep.verdict == lz.CONSISTENT:
        out.write("PASS: every checked condition holds\n")
    else:
        out.write(f"INCONCLUSIVE: rank varies across sample points (stage {rep.failed_stage})\n")
    if cfg.out:
        write_atomic(f"{cfg.out}.audit.txt", text + "\n")
        write_atomic(f"{cfg.out}.audit.json", rep.to_json() + "\n")
    return EXIT_FAIL if rep.verdict == lz.INCONCLUSIVE else EXIT_OK


def _check_fl_continuous(cfg, preset, out) -> int:
    pts = audit_points(25, seed=cfg.seed)[:, :preset.ext.n_ext]
    n = preset.system.n
    plant = lz.static_fl_check(preset.system, pts[:, :n])
    ext = lz.static_fl_check(preset.ext.as_control_affine(), pts)
    for name, res in (("plant", plant), ("extended system", ext)):
        status = {True: "PASS", False: "FAIL", None: "INCONCLUSIVE"}[res.linearizable]
        out.write(f"{status}: {name} {res.verdict} ({res.reason})\n")
        if res.witness is not None:
            w = res.witness
            out.write(f"  witness: pair {w.pair} rank {w.rank} -> {w.rank_with_bracket} at {w.point.tolist()}\n")
    return EXIT_FAIL if plant.linearizable is None or ext.linearizable is None else EXIT_OK


def _check_linearity_residual(cfg, preset, out) -> int:
    h = cfg.h or preset.h
    T = preset.T if cfg.T is None else cfg.T
    steps = int(round(T / h))
    controller = stabilizing_controller(preset, cfg.gains)
    v_seq = np.zeros((steps, preset.lin.m))

    def recorded(k, xi):
        v_seq[k] = controller.new_input(xi)
        return preset.lin.feedback(xi, v_seq[k])

    try:
        traj = simulate(_scheme(cfg, preset, h), recorded, preset.xi0, steps)
    except SimulationError as exc:
        print(f"error: simulation failed at {exc}", file=sys.stderr)
        return EXIT_FAIL
    dlti = discretize_lti(make_builtin_map(cfg.map, preset.lin.dim), preset.lin.A, preset.lin.B, h)
    res = float(np.max(linearity_residual(traj, preset.lin, v_seq, dlti))) if steps else 0.0
    ok = res <= 1e-9
    out.write(f"{_status(ok)}: {_label(cfg)} max ‖Φ(ξ_k+1) − A_h Φ(ξ_k) − B_h v_k‖ = {res:.3e} "
              f"over {steps} steps (tol 1e-09)\n")
    return EXIT_OK if ok else EXIT_FAIL


_CHECKERS = {
    "map-axioms": _check_map_axioms,
    "linearization": _check_linearization,
    "fl-discrete": _check_fl_discrete,
    "fl-continuous": _check_fl_continuous,
    "linearity-residual": _check_linearity_residual,
}


def cmd_check(cfg: ScenarioConfig, what: str, out=None) -> int:
    return _CHECKERS[what](cfg, get_preset(cfg.preset), out or sys.stdout)


def cmd_order(cfg: ScenarioConfig, out=None) -> int:
    out = out or sys.stdout
    h_list = cfg.h_list
    if len(h_list) < 4:
        raise UsageError("--h-list needs at least 4 step sizes")
    if any(not h > 0 for h in h_list):
        raise UsageError("step sizes must be positive")
    preset = get_preset(cfg.preset)
    T = preset.T if cfg.T is None else cfg.T
    controller = stabilizing_controller(preset, cfg.gains)
    try:
        est = order_estimate(lambda h: _scheme(cfg, preset, h), controller, preset.xi0, T, h_list,
                             cfg.substeps)
    except SimulationError as exc:
        print(f"error: simulation failed at {exc}", file=sys.stderr)
        return EXIT_FAIL
    for note in est.notes:
        print(f"warning: {note}", file=sys.stderr)
    rows = np.column_stack([est.h_list, est.errors, np.log(est.h_list), np.log(est.errors)])
    table = _table(["h", "max_error", "log_h", "log_error"], rows)
    ok = not est.degenerate and 0.8 <= est.slope <= 1.2
    summary = f"{_status(ok)}: {_label(cfg)} observed order {est.slope:.4f} (accepted range [0.8, 1.2])\n"
    if cfg.out:
        write_atomic(f"{cfg.out}.order.csv", table)
        write_atomic(f"{cfg.out}.report.txt", table + summary)
    out.write(table + summary)
    return EXIT_OK if ok else EXIT_FAIL


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = make_config(args)
        if args.command == "simulate":
            return cmd_simulate(cfg)
        if args.command == "check":
            return cmd_check(cfg, args.what)
        return cmd_order(cfg)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    except (ValueError, RuntimeError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
