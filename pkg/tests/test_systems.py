import numpy as np
import pytest

from fldisc.presets import unicycle_preset
from fldisc.systems import (ChartError, ControlAffineSystem, DynamicCompensator, ExtendedSystem,
                            InversionError, LinearizingData, SingularityError, apply_feedback,
                            eval_dynamics, extend, inverse_transform, system_as_extended,
                            verify_linearization)

XI0 = np.array([0.5, 0.2, 0.1, 0.2, 0.0])


def test_extend_reproduces_compensated_dynamics(preset):
    ext = extend(preset.system, preset.compensator)
    assert ext.n_ext == 5 and ext.m == 2
    assert np.allclose(ext.drift(XI0), [0.24, 0.1, 0.0, 0.0, 0.0])
    G = ext.input_matrix(np.array([0.3, -0.2, 0.4, 0.1, 0.7]))
    assert np.array_equal(G, [[0, 0], [0, 0], [1, 0], [0, 0], [0, 1]])


def test_closed_form_preset_fields_match_extend(preset, rng):
    ext = extend(preset.system, preset.compensator)
    for _ in range(200):
        xi, mu = rng.uniform(-1, 1, 5), rng.uniform(-1, 1, 2)
        assert np.max(np.abs(ext.velocity(xi, mu) - preset.ext.velocity(xi, mu))) <= 1e-14


def test_extend_block_structure(preset, rng):
    ext = extend(preset.system, preset.compensator)
    sys, comp = preset.system, preset.compensator
    for _ in range(200):
        xi, mu = rng.uniform(-1, 1, 5), rng.uniform(-1, 1, 2)
        x, w = xi[:4], xi[4:]
        top = sys.f(x) + sys.g(x) @ (comp.alpha(x, w) + comp.beta(x, w) @ mu)
        bottom = comp.gamma(x, w) + comp.delta(x, w) @ mu
        vel = ext.velocity(xi, mu)
        assert np.max(np.abs(vel[:4] - top)) <= 1e-14
        assert np.max(np.abs(vel[4:] - bottom)) <= 1e-14


def test_identity_extension(preset):
    sys = preset.system
    comp = DynamicCompensator(0, lambda x, w: np.zeros(2), lambda x, w: np.eye(2))
    ext = extend(sys, comp)
    x = np.array([0.1, 0.2, 0.3, 0.4])
    assert np.allclose(ext.drift(x), sys.f(x)) and np.allclose(ext.input_matrix(x), sys.g(x))


def test_extend_rejects_wrong_shapes(preset):
    bad = DynamicCompensator(1, lambda x, w: np.zeros(3), lambda x, w: np.eye(2),
                             lambda x, w: np.zeros(1), lambda x, w: np.zeros((1, 2)))
    with pytest.raises(ValueError, match="alpha"):
        extend(preset.system, bad)
    missing = DynamicCompensator(1, lambda x, w: np.zeros(2), lambda x, w: np.eye(2))
    with pytest.raises(ValueError):
        extend(preset.system, missing)


def test_eval_dynamics_examples(preset):
    assert np.allclose(eval_dynamics(preset.ext, XI0, [0, 0]), [0.24, 0.1, 0, 0, 0])
    assert np.allclose(eval_dynamics(preset.ext, XI0, [1, 0]), [0.24, 0.1, 1, 0, 0])
    zero = ExtendedSystem(2, 1, lambda x: np.zeros(2), lambda x: np.zeros((2, 1)))
    assert np.array_equal(eval_dynamics(zero, np.ones(2), [0.0]), np.zeros(2))
    guarded = ExtendedSystem(1, 1, lambda x: x, lambda x: np.ones((1, 1)), guard=lambda x: x[0] > 0)
    with pytest.raises(ChartError):
        eval_dynamics(guarded, np.array([-1.0]), [0.0])


def test_apply_feedback_examples(preset):
    lin = preset.lin
    assert np.allclose(apply_feedback(lin, np.zeros(5), [1, 0]), [1, 0])
    assert np.allclose(apply_feedback(lin, np.zeros(5), [0, 0]), [0, 0])
    with pytest.raises(SingularityError):
        apply_feedback(lin, np.array([0, 0, 0, 1.0, 1.0]), [1, 0])


def test_feedback_is_affine_in_v(preset, chart_states, rng):
    lin = preset.lin
    for xi in chart_states:
        v1, v2 = rng.normal(size=2), rng.normal(size=2)
        lhs = lin.feedback(xi, v1 + v2) - lin.feedback(xi, v2)
        assert np.max(np.abs(lhs - lin.beta(xi) @ v1)) <= 1e-12


def test_inverse_transform_examples(preset):
    lin = preset.lin
    assert np.allclose(inverse_transform(lin, [-3, 2, 0, 0, 0]), [1, 2, 0, 0, 0])
    assert np.allclose(inverse_transform(lin, [0.46, 0.2, 0.1, 0.2, 0]), XI0)
    assert np.allclose(inverse_transform(lin, lin.forward(XI0)), XI0)


def test_inverse_branch_keeps_regularity_positive(preset):
    lin = preset.lin
    xi = np.array([0.0, 0.0, 0.2, 0.8, 0.9])  # 1 + x3 − w x4 = 0.48
    back = inverse_transform(lin, lin.forward(xi))
    assert np.allclose(back, xi, atol=1e-12)


def test_round_trip_on_chart(preset, chart_states):
    lin = preset.lin
    err = max(np.max(np.abs(lin.inverse(lin.forward(s)) - s)) for s in chart_states)
    assert err <= 1e-10


def test_outside_image_raises(preset):
    with pytest.raises(ValueError):
        inverse_transform(preset.lin, [0, 0, 0, 1.0, 1.0])  # discriminant < 0


def test_newton_inverse_needs_hint_and_converges(preset):
    lin = preset.lin
    newton_lin = LinearizingData(lin.phi, lin.alpha, lin.beta, lin.A, lin.B)
    z = lin.forward(XI0)
    with pytest.raises(ValueError, match="hint"):
        newton_lin.inverse(z)
    assert np.allclose(newton_lin.inverse(z, hint=XI0 + 0.05), XI0, atol=1e-10)


def test_failing_closed_form_inverse_is_reported():
    lin = LinearizingData(lambda x: x, lambda x: np.zeros(1), lambda x: np.eye(1),
                          np.zeros((1, 1)), np.eye(1), phi_inv=lambda z: z + 1.0)
    with pytest.raises(InversionError):
        lin.inverse(np.array([0.0]))


def test_verify_linearization(preset, chart_states):
    rep = verify_linearization(preset.ext, preset.lin, chart_states)
    assert rep.passed and rep.drift_residual <= 1e-9 and rep.input_residual <= 1e-9


def test_verify_linearization_detects_perturbed_A(preset, chart_states):
    lin = preset.lin
    A = lin.A.copy()
    A[0, 1] += 1e-3
    bad = LinearizingData(lin.phi, lin.alpha, lin.beta, A, lin.B, lin.phi_inv, lin.dphi)
    rep = verify_linearization(preset.ext, bad, chart_states)
    assert not rep.passed
    assert 1e-4 <= rep.drift_residual <= 1e-2


def test_identity_system_linearization():
    sys = ControlAffineSystem(2, 2, lambda x: np.zeros(2), lambda x: np.eye(2))
    ext = system_as_extended(sys)
    lin = LinearizingData(lambda x: x, lambda x: np.zeros(2), lambda x: np.eye(2), np.zeros((2, 2)), np.eye(2))
    rep = verify_linearization(ext, lin, np.random.default_rng(0).normal(size=(10, 2)))
    assert rep.drift_residual == 0 and rep.input_residual == 0


def test_inputs_independent(preset, chart_states):
    assert preset.system.inputs_independent(chart_states[:, :4])
