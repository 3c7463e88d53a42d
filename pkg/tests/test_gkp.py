import math

import numpy as np
import pytest

from gkptrap.constants import SQRT_PI
from gkptrap.errors import InvalidInput, InvalidParameters
from gkptrap.fock import OscState, displacement_block, fidelity, squeezed_vacuum, vacuum
from gkptrap.gkp import (GkpCode, SQUARE, braiding_phase, default_cutoff, effective_squeezing,
                         finite_gkp_exact, finite_gkp_superposition, hermite_functions, to_db)


def test_braiding_relation():
    a, b = 0.5 + 0.2j, -1.0 + 0.7j
    big, keep = 120, 50
    lhs = displacement_block(a, big) @ displacement_block(b, big)
    rhs = np.exp(-1j * braiding_phase(a, b)) * displacement_block(b, big) @ displacement_block(a, big)
    np.testing.assert_allclose(lhs[:keep, :keep], rhs[:keep, :keep], atol=1e-10)


def test_logicals_anticommute_stabilizers_commute():
    c = SQUARE
    assert braiding_phase(c.stab_x_amp, c.stab_z_amp) == pytest.approx(4 * math.pi)
    assert braiding_phase(c.logical_x_amp, c.logical_z_amp) == pytest.approx(math.pi)


def test_invalid_lattice_rejected():
    with pytest.raises(InvalidParameters):
        GkpCode(stab_x_amp=2.0, stab_z_amp=2j)


def test_rectangular_code_is_valid():
    code = GkpCode.rectangular(2.0)
    assert abs(code.stab_x_amp) == pytest.approx(2 * SQRT_PI * math.sqrt(2))


def test_to_db():
    assert to_db(0.3) == pytest.approx(10.457, abs=1e-3)


def test_default_cutoff_tail():
    K = default_cutoff(0.3)
    assert math.exp(-2 * math.pi * 0.09 * (K + 1) ** 2) < 1e-8
    assert math.exp(-2 * math.pi * 0.09 * K**2) >= 1e-8


def test_hermite_functions_orthonormal():
    x = np.linspace(-12, 12, 4001)
    h = hermite_functions(x, 10)
    gram = h @ h.T * (x[1] - x[0])
    np.testing.assert_allclose(gram, np.eye(10), atol=1e-10)


def test_vacuum_effective_squeezing_is_one():
    dx, dz = effective_squeezing(vacuum(60))
    assert dx == pytest.approx(1.0, abs=1e-9) and dz == pytest.approx(1.0, abs=1e-9)


def test_effective_squeezing_rejects_multimode():
    with pytest.raises(InvalidInput):
        effective_squeezing(OscState(np.eye(4)[0], (2, 2)))


def test_unresolvable_expectation_reports_inf():
    # enough levels that the truncated tail stays below the resolution floor
    st = OscState.normalized(squeezed_vacuum(-math.log(0.2), 500))
    dx, dz = effective_squeezing(st)
    assert math.isinf(dx) and dz == pytest.approx(0.2, rel=1e-3)


@pytest.mark.parametrize("logical", ["0", "1", "+", "-"])
def test_code_states_have_target_squeezing(logical):
    st = finite_gkp_superposition(logical, 0.3, dim=150)
    dx, dz = effective_squeezing(st)
    assert dx == pytest.approx(0.3, abs=3e-3) and dz == pytest.approx(0.3, abs=3e-3)


def test_logical_states_orthogonal():
    z0 = finite_gkp_exact("0", 0.25, 150)
    z1 = finite_gkp_exact("1", 0.25, 150)
    assert abs(np.vdot(z0.data, z1.data)) < 1e-3


def test_constructions_converge_as_delta_shrinks():
    inf = [1 - fidelity(finite_gkp_exact("+", d, 150), finite_gkp_superposition("+", d, dim=150))
           for d in (0.4, 0.25)]
    assert inf[1] < inf[0] / 4


def test_superposition_validation():
    with pytest.raises(InvalidParameters):
        finite_gkp_superposition("0", 1.5)
    with pytest.raises(InvalidParameters):
        finite_gkp_superposition("0", 0.3, K=1)
    with pytest.raises(InvalidInput):
        finite_gkp_superposition("x", 0.3)
