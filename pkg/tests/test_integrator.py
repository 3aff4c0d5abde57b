import numpy as np
import pytest
import scipy.linalg
import scipy.special

from fldisc.geometry import DiscretizationMap, make_builtin_map
from fldisc.integrator import (DiscreteScheme, SimulationError, Trajectory, closed_loop_error,
                               discretize_lti, global_error, lifted_scheme, linearity_residual,
                               order_estimate, plain_scheme, reference_trajectory, simulate, step)
from fldisc.presets import chain_pair, stabilizing_controller
from fldisc.systems import ExtendedSystem

XI0 = np.array([0.5, 0.2, 0.1, 0.2, 0.0])
ZERO_MU = np.zeros(2)


def test_lifted_step_example(preset):
    s = lifted_scheme(preset.ext, preset.lin, 0.01)
    assert np.allclose(step(s, XI0, ZERO_MU), [0.502401, 0.201, 0.1, 0.2, 0.0], atol=1e-12)


def test_plain_euler_step_example(preset):
    s = plain_scheme(preset.ext, 0.01)
    assert np.allclose(step(s, XI0, ZERO_MU), [0.5024, 0.201, 0.1, 0.2, 0.0], atol=1e-15)


@pytest.mark.parametrize("kind", ["explicit-euler", "implicit-euler", "midpoint"])
def test_zero_field_is_fixed(kind):
    ext = ExtendedSystem(3, 1, lambda x: np.zeros(3), lambda x: np.zeros((3, 1)))
    x = np.array([0.3, -1.0, 2.0])
    assert np.allclose(step(plain_scheme(ext, 0.1, kind), x, [0.0]), x, atol=1e-14)


def test_scheme_validation(preset):
    with pytest.raises(ValueError):
        plain_scheme(preset.ext, 0.0)
    with pytest.raises(ValueError):
        DiscreteScheme(make_builtin_map("midpoint", 5), preset.ext, 0.1, mode="lifted-fast-path")


def test_implicit_and_fast_path_agree(preset):
    h = 0.01
    fast = lifted_scheme(preset.ext, preset.lin, h)
    slow = lifted_scheme(preset.ext, preset.lin, h, mode="implicit-general")
    c = stabilizing_controller(preset)
    xi = XI0
    for k in range(100):
        mu = c(k, xi)
        a, b = step(fast, xi, mu), step(slow, xi, mu)
        assert np.max(np.abs(a - b)) <= 1e-10
        xi = a


@pytest.mark.parametrize("kind", ["implicit-euler", "midpoint"])
def test_implicit_bases_fast_path_agree(preset, kind):
    fast = lifted_scheme(preset.ext, preset.lin, 0.01, base=kind)
    slow = lifted_scheme(preset.ext, preset.lin, 0.01, base=kind, mode="implicit-general")
    mu = np.array([0.3, -0.2])
    assert np.max(np.abs(step(fast, XI0, mu) - step(slow, XI0, mu))) <= 1e-10


def test_first_order_consistency(preset):
    mu = np.array([0.5, -0.3])
    ratios = []
    for kind in ("midpoint", "implicit-euler"):
        for lifted in (False, True):
            devs = []
            for h in (0.04, 0.02, 0.01):
                s = lifted_scheme(preset.ext, preset.lin, h, base=kind) if lifted else plain_scheme(preset.ext, h, kind)
                devs.append(np.linalg.norm(step(s, XI0, mu) - (XI0 + h * preset.ext.velocity(XI0, mu))))
            ratios.append(devs[0] / devs[2])
    # local deviation from Euler is O(h²): quartering h divides it by ≈ 16
    assert all(12 < r < 20 for r in ratios)


def test_discretize_lti_explicit_euler():
    A, B = chain_pair()
    d = discretize_lti(make_builtin_map("explicit-euler", 5), A, B, 0.01)
    assert np.allclose(d.A_h, np.eye(5) + 0.01 * A, atol=1e-15)
    assert np.allclose(d.B_h, 0.01 * B, atol=1e-15)
    assert d.A_h[0, 1] == pytest.approx(0.01) and d.A_h[3, 4] == pytest.approx(0.01)


def test_discretize_lti_midpoint_closed_form():
    A, B = chain_pair()
    h = 0.01
    d = discretize_lti(make_builtin_map("midpoint", 5), A, B, h)
    M = np.linalg.inv(np.eye(5) - h * A / 2)
    assert np.max(np.abs(d.A_h - M @ (np.eye(5) + h * A / 2))) <= 1e-12
    assert np.max(np.abs(d.B_h - M @ (h * B))) <= 1e-12


def test_discretize_lti_trivial_and_nonlinear_maps():
    d = discretize_lti(make_builtin_map("explicit-euler", 2), np.zeros((2, 2)), np.eye(2), 0.5)
    assert np.array_equal(d.A_h, np.eye(2)) and np.array_equal(d.B_h, 0.5 * np.eye(2))
    curved = DiscretizationMap(2, lambda x, v: (x, x + v + v * v), kind="custom")
    with pytest.raises(ValueError):
        discretize_lti(curved, -np.eye(2), np.eye(2), 0.1)


def test_superposition_of_induced_linear_scheme(rng):
    A, B = chain_pair()
    for kind in ("explicit-euler", "implicit-euler", "midpoint"):
        s = plain_scheme(ExtendedSystem(5, 2, lambda z: A @ z, lambda z: B), 0.05, kind)
        z1, z2 = rng.normal(size=(2, 5))
        v1, v2 = rng.normal(size=(2, 2))
        defect = step(s, z1 + z2, v1 + v2) - step(s, z2, v2) - step(s, z1, v1) + step(s, np.zeros(5), np.zeros(2))
        assert np.max(np.abs(defect)) <= 1e-10


def test_simulate_trivial_cases(preset):
    s = lifted_scheme(preset.ext, preset.lin, 0.01)
    tr = simulate(s, stabilizing_controller(preset), XI0, 0)
    assert tr.states.shape == (1, 5) and tr.controls.shape == (0, 2)
    zero = simulate(s, lambda k, x: np.zeros(2), np.zeros(5), 50)
    assert np.array_equal(zero.states, np.zeros((51, 5)))


def test_simulate_stabilizes(preset):
    tr = simulate(lifted_scheme(preset.ext, preset.lin, 0.01), stabilizing_controller(preset), XI0, 1000)
    assert np.linalg.norm(tr.states[-1]) <= 0.05 * np.linalg.norm(XI0)
    assert np.allclose(tr.t[[0, -1]], [0.0, 10.0])


def test_simulate_reports_failing_step(preset):
    s = lifted_scheme(preset.ext, preset.lin, 0.01)
    with pytest.raises(SimulationError) as info:
        simulate(s, lambda k, x: np.array([0.0, 0.0]) if k < 3 else np.array([np.nan, 0.0]), XI0, 10)
    assert info.value.k == 3 and info.value.partial.steps == 3


def test_reference_matches_matrix_exponential():
    A, B = chain_pair()
    ext = ExtendedSystem(5, 2, lambda z: A @ z, lambda z: B)
    z0 = np.array([1.0, -0.5, 0.2, 0.3, -0.1])
    v = np.array([0.4, -0.7])
    ref = reference_trajectory(ext, np.tile(v, (10, 1)), z0, np.linspace(0, 1, 11))
    M = scipy.linalg.expm(np.block([[A, B], [np.zeros((2, 7))]]))
    exact = (M @ np.concatenate([z0, v]))[:5]
    assert np.max(np.abs(ref.states[-1] - exact)) <= 1e-10


def test_reference_zero_field_and_example(preset):
    ext = ExtendedSystem(2, 1, lambda x: np.zeros(2), lambda x: np.zeros((2, 1)))
    ref = reference_trajectory(ext, np.zeros((5, 1)), np.ones(2), np.linspace(0, 0.5, 6))
    assert np.array_equal(ref.states, np.ones((6, 2)))
    r = reference_trajectory(preset.ext, np.zeros((1, 2)), XI0, [0.0, 0.01])
    # exact flow with μ ≡ 0: x₂ = 0.2 + 0.1t, x₁ = 0.5 + 1.2(0.2t + 0.05t²)
    assert r.states[1, 0] == pytest.approx(0.502406, abs=1e-12)
    assert 0.5024 < r.states[1, 0]


def test_global_error(preset):
    tr = simulate(plain_scheme(preset.ext, 0.01), stabilizing_controller(preset), XI0, 20)
    assert np.array_equal(global_error(tr, tr), np.zeros(21))
    other = Trajectory(tr.t + 0.5, tr.states, tr.controls, tr.h)
    with pytest.raises(ValueError):
        global_error(tr, other)


def test_error_magnitude_and_halving(preset):
    c = stabilizing_controller(preset)
    errs = []
    for h in (0.02, 0.01):
        _, _, err = closed_loop_error(lifted_scheme(preset.ext, preset.lin, h), c, XI0, 4.0, substeps=20)
        errs.append(err.max())
    assert 1e-3 <= errs[1] <= 1e-1
    assert 1.6 <= errs[0] / errs[1] <= 2.4


def test_order_estimate_validation_and_degenerate_flag(preset):
    c = stabilizing_controller(preset)
    with pytest.raises(ValueError):
        order_estimate(lambda h: plain_scheme(preset.ext, h), c, XI0, 1.0, [0.1])
    # exact scheme on a linear system: errors sit at the rounding floor
    A, B = chain_pair()
    ext = ExtendedSystem(5, 2, lambda z: A @ z, lambda z: B)

    def exact(h):
        # D(x, v) = (x, x + φ₁(hA)v) with φ₁(X) = Σ X^k/(k+1)! turns v = hAx into e^{hA}x
        P = sum(np.linalg.matrix_power(h * A, k) / scipy.special.factorial(k + 1) for k in range(5))
        D = DiscretizationMap(5, lambda x, v: (x, x + P @ v), lambda a, b: (a, np.linalg.solve(P, b - a)))
        return DiscreteScheme(D, ext, h)

    est = order_estimate(exact, lambda k, z: np.zeros(2), np.ones(5), 0.4, [0.1, 0.05, 0.025, 0.02],
                         substeps=50)
    assert est.degenerate is True and not est.geometric


def test_trajectory_csv_format(preset, tmp_path):
    tr = simulate(plain_scheme(preset.ext, 0.01), stabilizing_controller(preset), XI0, 3)
    text = tr.to_csv(tmp_path / "t.csv")
    lines = text.splitlines()
    assert lines[0] == "t,xi_1,xi_2,xi_3,xi_4,xi_5,mu_1,mu_2"
    assert lines[-1].endswith(",,") and len(lines) == 5
    assert lines[1].split(",")[2] == "0.20000000000000001"
    assert (tmp_path / "t.csv").read_text() == text


def test_trajectory_invariants():
    with pytest.raises(ValueError):
        Trajectory(np.zeros(3), np.zeros((3, 2)), np.zeros((3, 1)), 0.1)


def test_linearity_residual_detects_plain_euler(preset):
    c = stabilizing_controller(preset)
    V = []

    def rec(k, x):
        V.append(c.new_input(x))
        return preset.lin.feedback(x, V[-1])

    A, B = chain_pair()
    d = discretize_lti(make_builtin_map("explicit-euler", 5), A, B, 0.01)
    tr = simulate(plain_scheme(preset.ext, 0.01), rec, XI0, 100)
    assert linearity_residual(tr, preset.lin, V, d).max() > 1e-7
