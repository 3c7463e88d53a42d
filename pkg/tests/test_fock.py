import math

import numpy as np
import pytest

from gkptrap.errors import InvalidDimension, InvalidInput, TruncationWarning
from gkptrap.fock import (OscState, crop, displacement, displacement_block, embed, expectation,
                          fidelity, fock_state, ladder, leakage, matrix_exp, number, partial_trace,
                          quadratures, rotation, squeeze, squeezed_vacuum, tensor, vacuum)


def test_canonical_commutator_away_from_cutoff():
    q, p = quadratures(30)
    comm = q @ p - p @ q
    np.testing.assert_allclose(comm[:-1, :-1], 1j * np.eye(29), atol=1e-12)


def test_ladder_and_number():
    a, ad = ladder(8)
    np.testing.assert_allclose(ad @ a, number(8), atol=1e-14)


@pytest.mark.parametrize("dim", [0, -3, 2.5])
def test_bad_dims_rejected(dim):
    with pytest.raises((InvalidDimension, InvalidInput, TypeError)):
        ladder(dim)


def test_displacement_shifts_quadratures():
    dim = 80
    alpha = 1.2 - 0.5j
    st = OscState(displacement(alpha, dim) @ vacuum(dim).data)
    q, p = quadratures(dim)
    assert expectation(st, q).real == pytest.approx(alpha.real, abs=1e-10)
    assert expectation(st, p).real == pytest.approx(alpha.imag, abs=1e-10)


def test_displacement_block_matches_expm_interior():
    dim, big = 40, 140
    alpha = 0.9 + 0.6j
    exact = displacement_block(alpha, dim)
    ref = displacement(alpha, big)[:dim, :dim]
    np.testing.assert_allclose(exact, ref, atol=1e-12)


def test_displacement_block_longdouble_agrees():
    a = displacement_block(2.0, 60)
    b = displacement_block(2.0, 60, dtype=np.longdouble)
    np.testing.assert_allclose(a, b.astype(complex), atol=1e-13)


def test_squeeze_matches_closed_form_vacuum():
    dim = 120
    z = 0.6 * np.exp(0.3j)
    col = squeeze(z, dim)[:, 0]
    np.testing.assert_allclose(col[:60], squeezed_vacuum(z, dim)[:60], atol=1e-12)


def test_positive_squeeze_compresses_q():
    dim = 100
    st = OscState.normalized(squeezed_vacuum(0.5, dim))
    q, p = quadratures(dim)
    assert expectation(st, q @ q).real == pytest.approx(0.5 * math.exp(-1.0), rel=1e-9)
    assert expectation(st, p @ p).real == pytest.approx(0.5 * math.exp(1.0), rel=1e-9)


def test_unitarity_off_guard_band():
    dim = 90
    for U in (displacement(1 + 1j, dim), squeeze(0.4, dim), rotation(2.0, dim)):
        err = np.linalg.norm((U.conj().T @ U - np.eye(dim))[:, : dim - 5], 2)
        assert err <= 1e-8


def test_truncation_warning_for_large_displacement():
    with pytest.warns(TruncationWarning):
        displacement(6.0, 20)


def test_matrix_exp_rejects_nan():
    with pytest.raises(InvalidInput):
        matrix_exp(np.array([[np.nan, 0], [0, 1]]))


def test_oscstate_validation():
    with pytest.raises(InvalidInput):
        OscState(np.array([1.0, 1.0]))
    with pytest.raises(InvalidInput):
        OscState(np.array([[0.5, 0.3], [0.1, 0.5]]))
    with pytest.raises(InvalidInput):
        OscState(np.diag([1.2, -0.2]))
    with pytest.raises(InvalidInput):
        OscState(np.ones(4) / 2, (2, 2), has_ancilla=False, norm_tol=1e-9).__class__(
            np.ones(6) / math.sqrt(6), (3, 2), has_ancilla=True)


def test_state_is_read_only():
    st = fock_state(1, 4)
    with pytest.raises(ValueError):
        st.data[0] = 1


def test_partial_trace_of_product_state():
    a = OscState.normalized(np.array([1, 1j, 0.5]))
    b = fock_state(2, 4)
    rho = partial_trace(tensor(a, b), [0])
    np.testing.assert_allclose(rho.data, a.density(), atol=1e-14)
    rho_mixed = partial_trace(OscState(tensor(a, b).density(), (3, 4)), [1])
    np.testing.assert_allclose(rho_mixed.data, b.density(), atol=1e-14)


def test_embed_acts_on_one_mode():
    n = number(3)
    op = embed(n, 1, (2, 3))
    st = tensor(fock_state(1, 2), fock_state(2, 3))
    assert expectation(st, op).real == pytest.approx(2.0)


def test_fidelity_pure_and_mixed():
    a = fock_state(0, 3)
    b = OscState.normalized(np.array([1, 1, 0]))
    assert fidelity(a, b) == pytest.approx(0.5)
    assert fidelity(OscState(a.density()), OscState(b.density())) == pytest.approx(0.5, abs=1e-8)
    assert fidelity(a, a) == pytest.approx(1.0)


def test_leakage_counts_top_levels():
    psi = np.zeros(20)
    psi[0], psi[18] = math.sqrt(0.99), math.sqrt(0.01)
    assert leakage(OscState(psi)) == pytest.approx(0.01)


def test_crop_keeps_lower_levels():
    psi = tensor(fock_state(1, 4), fock_state(2, 5)).data
    out = crop(psi, (4, 5), (2, 3))
    assert out.shape == (6,)
    assert abs(out[1 * 3 + 2]) == pytest.approx(1.0)
