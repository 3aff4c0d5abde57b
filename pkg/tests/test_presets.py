import numpy as np
import pytest

from fldisc.presets import (DEFAULT_GAINS, LinearizingController, chain_pair, euler_kernel_reference,
                            get_preset, regularity, stabilizing_controller, unicycle_preset)
from fldisc.systems import verify_linearization

XI0 = np.array([0.5, 0.2, 0.1, 0.2, 0.0])


def test_preset_contents(preset):
    assert (preset.system.n, preset.system.m, preset.compensator.q) == (4, 2, 1)
    assert np.array_equal(preset.xi0, XI0)
    assert preset.h == 1e-2 and preset.T == 10.0
    assert preset.ext.guard(preset.xi0)


def test_transformation_values(preset):
    assert np.allclose(preset.lin.forward(XI0), [0.46, 0.2, 0.1, 0.2, 0.0])
    assert np.array_equal(preset.lin.forward(np.zeros(5)), np.zeros(5))


def test_chain_pair():
    A, B = chain_pair()
    assert {tuple(i) for i in np.argwhere(A == 1)} == {(0, 1), (1, 2), (3, 4)} and A.sum() == 3
    assert {tuple(i) for i in np.argwhere(B == 1)} == {(2, 0), (4, 1)} and B.sum() == 2


def test_closed_form_jacobian_matches_ad(preset, chart_states):
    from fldisc.autodiff import ad_jacobian
    for s in chart_states[:20]:
        assert np.allclose(preset.lin.jacobian(s), ad_jacobian(preset.lin.phi, s), atol=1e-14)


def test_controller_examples(preset):
    c = stabilizing_controller(preset)
    assert np.allclose(c.new_input(XI0), [-7.6, -2.0])
    assert np.allclose(c(0, np.zeros(5)), [0, 0])
    zero = stabilizing_controller(preset, np.zeros((2, 5)))
    assert np.allclose(zero(0, XI0), preset.lin.alpha(XI0))


def test_gains_as_printed_and_closed_loop_hurwitz(preset):
    assert np.array_equal(DEFAULT_GAINS, [[10, 10, 10, 0, 0], [0, 0, 0, 10, 10]])
    A, B = chain_pair()
    eig = np.linalg.eigvals(A - B @ DEFAULT_GAINS)
    assert np.all(eig.real < 0)


def test_preset_invariant_linearization(preset, chart_states):
    assert verify_linearization(preset.ext, preset.lin, chart_states).passed


def test_kernel_reference_at_origin():
    h = 0.01
    K = euler_kernel_reference(np.zeros(5), h)
    assert np.allclose(K[:, 0], [0, 0, 0, h * h, -h, 0, 1])
    assert np.allclose(K[:, 1], [-h ** 3, h * h, -h, 0, 0, 1, 0])


def test_regularity_and_registry():
    assert regularity(np.array([0, 0, 0, 1.0, 1.0])) == 0
    assert get_preset("unicycle").name == "unicycle"
    with pytest.raises(KeyError):
        get_preset("induction-motor")


def test_controller_propagates_singularity(preset):
    from fldisc.systems import SingularityError
    with pytest.raises(SingularityError):
        LinearizingController(preset.lin, DEFAULT_GAINS)(0, np.array([0, 0, 0, 1.0, 1.0]))


def test_presets_are_fresh_but_equal():
    a, b = unicycle_preset(), unicycle_preset()
    assert np.array_equal(a.xi0, b.xi0)
    a.xi0[0] = 9.0
    assert b.xi0[0] == 0.5
