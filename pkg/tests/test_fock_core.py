import math

import numpy as np
import pytest
import scipy.linalg
import scipy.sparse.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from tmsv_bell import fock_core as fc
from tmsv_bell import tmsv_state as ts


def basis(d, occ):
    v = np.zeros(d**4, dtype=complex)
    v[np.ravel_multi_index(occ, (d,) * 4)] = 1.0
    return v


# --- truncation spec --------------------------------------------------


def test_truncation_spec_rejects_small_cutoff():
    with pytest.raises(ValueError):
        fc.TruncationSpec(1)


def test_truncation_spec_dim():
    assert fc.TruncationSpec(3).dim == 81


# --- ladder operators -------------------------------------------------


def test_annihilator_kills_vacuum_d2():
    t = fc.TruncationSpec(2)
    a = fc.annihilator(fc.A_PLUS, t)
    assert np.allclose(fc.single_mode_annihilator(2), [[0, 1], [0, 0]])
    assert np.abs(a.matrix @ basis(2, (0, 0, 0, 0))).max() == 0


def test_annihilator_entry_sqrt3():
    a = fc.single_mode_annihilator(4)
    assert a[2, 3] == pytest.approx(math.sqrt(3), abs=1e-12)
    assert np.allclose(np.diag(a, 1), np.sqrt([1, 2, 3]))


def test_single_mode_commutator_edge():
    d = 4
    a = fc.single_mode_annihilator(d)
    comm = a @ a.T - a.T @ a
    assert np.allclose(np.diag(comm)[: d - 1], 1.0)
    assert comm[d - 1, d - 1] == pytest.approx(1 - d)
    assert np.allclose(comm - np.diag(np.diag(comm)), 0)


@pytest.mark.parametrize("mode", fc.MODES)
def test_annihilator_matches_kron_oracle(mode):
    d = 3
    ref = oracles.mode_ops(d)[mode.axis]
    assert np.allclose(fc.annihilator(mode, fc.TruncationSpec(d)).dense_array(), ref)


def test_number_operator_is_diagonal():
    d = 3
    n = fc.number_operator(fc.B_MINUS, fc.TruncationSpec(d)).dense_array()
    occ = fc.all_occupations(d)
    assert np.allclose(n, np.diag(occ[:, 3]))


# --- K_x --------------------------------------------------------------


def test_kx_on_vacuum():
    d = 4
    kx = fc.build_kx(fc.TruncationSpec(d)).matrix
    out = kx @ basis(d, (0, 0, 0, 0))
    expected = basis(d, (1, 0, 1, 0)) + basis(d, (0, 1, 0, 1))
    assert np.allclose(out, expected, atol=0)


def test_kx_vacuum_expectation_zero():
    t = fc.TruncationSpec(4)
    assert fc.expectation(fc.build_kx(t), fc.FourModeState.vacuum(t)) == 0


def test_kx_monomial_coefficients():
    kx = fc.build_kx(fc.TruncationSpec(3))
    assert sorted(c.real for _, c in kx.terms) == [-1, -1, 1, 1]
    assert len(kx.terms) == 4


def test_kx_antihermitian_interior_d5():
    d = 5
    m = fc.build_kx(fc.TruncationSpec(d)).dense_array()
    idx = np.flatnonzero(fc.interior_mask(d))
    block = (m + m.conj().T)[np.ix_(idx, idx)]
    assert np.abs(block).max() == 0


def test_kx_matches_oracle():
    d = 3
    assert np.allclose(fc.build_kx(fc.TruncationSpec(d)).dense_array(), oracles.kx_matrix(d))


# --- K0 ---------------------------------------------------------------


def test_k0_annihilates_vacuum():
    d = 4
    k0 = fc.build_k0(fc.TruncationSpec(d)).matrix
    assert np.abs(k0 @ basis(d, (0, 0, 0, 0))).max() == 0


def test_k0_channel_sum_exact():
    t = fc.TruncationSpec(4)
    diff = fc.build_k0(t).matrix - fc.build_k0_channel(fc.Channel.A, t).matrix - fc.build_k0_channel(fc.Channel.B, t).matrix
    assert abs(diff).max() == 0


def test_k0_hermitian_d4():
    assert fc.hermiticity_error(fc.build_k0(fc.TruncationSpec(4))) <= fc.HERMITIAN_TOL


@pytest.mark.parametrize("channel", ["A", "B"])
def test_k0_channel_matches_oracle(channel):
    d = 3
    op = fc.build_k0_channel(fc.Channel(channel), fc.TruncationSpec(d))
    assert np.allclose(op.dense_array(), oracles.k0_channel_matrix(d, channel))


# --- commutators ------------------------------------------------------


def test_k0_kx_commute_on_interior_d6():
    t = fc.TruncationSpec(6)
    assert fc.commutator_interior_norm(fc.build_k0(t), fc.build_kx(t), t) <= 1e-12


def test_self_commutator_is_zero():
    t = fc.TruncationSpec(4)
    k0 = fc.build_k0(t)
    assert fc.commutator_interior_norm(k0, k0, t) == 0


def test_channel_generator_breaks_symmetry_d6():
    d = 6
    t = fc.TruncationSpec(d)
    measured = fc.commutator_interior_norm(fc.build_k0_channel(fc.Channel.A, t), fc.build_kx(t), t)
    x, y = oracles.k0_channel_matrix(d, "A"), oracles.kx_matrix(d)
    idx = np.flatnonzero(np.all(fc.all_occupations(d) <= d - 2, axis=1))
    ref = np.abs((x @ y - y @ x)[np.ix_(idx, idx)]).max()
    assert measured > 0.1
    assert measured == pytest.approx(ref, rel=1e-12)


def test_commutator_dimension_mismatch():
    with pytest.raises(fc.DimensionMismatchError):
        fc.commutator_interior_norm(
            fc.build_k0(fc.TruncationSpec(3)), fc.build_kx(fc.TruncationSpec(4)), fc.TruncationSpec(3)
        )


def test_operator_algebra_rejects_mixed_cutoffs():
    with pytest.raises(fc.DimensionMismatchError):
        fc.build_k0(fc.TruncationSpec(3)) + fc.build_kx(fc.TruncationSpec(4))


# --- rotations --------------------------------------------------------


def test_rotation_identity():
    assert np.array_equal(fc.rotate_modes(fc.Channel.A, 0.0), np.eye(2))


def test_rotation_quarter_turn():
    r = fc.rotate_modes(fc.Channel.B, math.pi / 2)
    # a+ -> a-, a- -> -a+
    assert np.allclose(r, [[0, 1], [-1, 0]], atol=1e-15)


@pytest.mark.parametrize("channel", list(fc.Channel))
def test_rotation_matches_conjugation(channel):
    assert fc.rotation_conjugation_error(channel, math.pi / 8, fc.TruncationSpec(6)) <= 1e-10


def test_rotation_matches_independent_conjugation():
    d, delta = 4, 0.37
    u = scipy.linalg.expm(1j * delta * oracles.k0_channel_matrix(d, "A"))
    ap, am = oracles.mode_ops(d)[:2]
    closed = fc.rotated_annihilators(fc.Channel.A, delta, fc.TruncationSpec(d))
    occ = fc.all_occupations(d)
    keep = occ[:, 0] + occ[:, 1] <= d - 1
    for k, base in enumerate((ap, am)):
        diff = closed[k].dense_array() - u @ base @ u.conj().T
        assert np.abs(diff[np.ix_(keep, keep)]).max() <= 1e-12


# --- operator algebra -------------------------------------------------


powers_strategy = st.tuples(*[st.tuples(st.integers(0, 2), st.integers(0, 2)) for _ in range(4)])


@settings(max_examples=40, deadline=None)
@given(left=powers_strategy, right=powers_strategy)
def test_product_matches_matrix_product_on_low_levels(left, right):
    # normal ordering is exact in the untruncated algebra; compare on states
    # far enough from the cutoff that no intermediate level is clipped
    d = 6
    x = fc.FourModeOperator.from_terms(d, [(left, 1.0)])
    y = fc.FourModeOperator.from_terms(d, [(right, 1.0)])
    prod = (x @ y).dense_array()
    ref = x.dense_array() @ y.dense_array()
    occ = fc.all_occupations(d)
    cols = np.all(occ <= 1, axis=1)
    assert np.allclose(prod[:, cols], ref[:, cols], atol=1e-10)


@settings(max_examples=25, deadline=None)
@given(powers=powers_strategy, coef=st.complex_numbers(max_magnitude=3, allow_nan=False, allow_infinity=False))
def test_dag_is_conjugate_transpose(powers, coef):
    op = fc.FourModeOperator.from_terms(3, [(powers, coef)])
    assert np.allclose(op.dag().dense_array(), op.dense_array().conj().T)


# --- states ------------------------------------------------------------


def test_state_roundtrip_vector():
    rng = np.random.default_rng(3)
    v = rng.normal(size=81) + 1j * rng.normal(size=81)
    s = fc.FourModeState.from_vector(v, 3)
    assert s.norm == pytest.approx(1.0, abs=1e-14)
    assert np.allclose(s.vector(), v / np.linalg.norm(v))


def test_state_rejects_out_of_range_occupation():
    with pytest.raises(ValueError):
        fc.FourModeState.from_amplitudes(3, [[0, 0, 3, 0]], [1.0])


def test_state_rejects_zero_vector():
    with pytest.raises(ValueError):
        fc.FourModeState.from_vector(np.zeros(16), 2)


def test_state_vector_length_check():
    with pytest.raises(fc.DimensionMismatchError):
        fc.FourModeState.from_vector(np.ones(10), 2)


# --- expectation --------------------------------------------------------


def test_identity_expectation_is_one():
    t = fc.TruncationSpec(6)
    s = ts.build_state_schmidt(0.4, t)
    assert fc.expectation(fc.identity(t), s) == pytest.approx(1.0, abs=1e-10)


def test_k0_charge_vanishes_on_squeezed_state():
    t = fc.TruncationSpec(8)
    s = ts.build_state_schmidt(0.7, t)
    assert abs(fc.expectation(fc.build_k0(t), s)) <= 1e-12


def test_mean_photon_number_zeta1():
    trunc = ts.choose_cutoff(1.0, 1e-10, "shell")
    s = ts.build_state_schmidt(1.0, trunc, "shell")
    val = fc.expectation(fc.number_operator(fc.A_PLUS, trunc), s)
    assert val == pytest.approx(math.sinh(1.0) ** 2, abs=1e-7)
    assert val == pytest.approx(1.38110, abs=1e-5)


def test_expectation_dimension_mismatch():
    s = fc.FourModeState.vacuum(fc.TruncationSpec(3))
    with pytest.raises(fc.DimensionMismatchError):
        fc.expectation(fc.identity(fc.TruncationSpec(4)), s)


def test_expectation_flags_bad_hermitian_promise():
    t = fc.TruncationSpec(3)
    s = fc.FourModeState.from_amplitudes(3, [[0, 0, 0, 0], [1, 0, 0, 0]], [1.0, 1j])
    liar = fc.annihilator(fc.A_PLUS, t).with_flags(hermitian=True)
    with pytest.raises(ArithmeticError):
        fc.expectation(liar, s)


def test_expectation_unknown_backend():
    t = fc.TruncationSpec(3)
    with pytest.raises(ValueError):
        fc.expectation(fc.identity(t), fc.FourModeState.vacuum(t), backend="gpu")


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), powers=powers_strategy)
def test_backends_agree_on_random_states(seed, powers):
    rng = np.random.default_rng(seed)
    d = 3
    v = rng.normal(size=d**4) + 1j * rng.normal(size=d**4)
    s = fc.FourModeState.from_vector(v, d)
    op = fc.FourModeOperator.from_terms(d, [(powers, 1.0 + 0.5j)])
    dense = fc.expectation(op, s, "dense")
    struct = fc.expectation(op, s, "structured")
    assert abs(dense - struct) <= 1e-10


def test_apply_structured_matches_matrix():
    t = fc.TruncationSpec(5)
    s = ts.build_state_schmidt(0.6, t)
    kx = fc.build_kx(t)
    out = fc.apply_structured(kx, s)
    assert np.allclose(out.vector(), kx.matrix @ s.vector(), atol=1e-14)


# --- matrix exponential -------------------------------------------------


def test_expm_scale_zero_is_identity():
    t = fc.TruncationSpec(4)
    s = ts.build_state_schmidt(0.3, t)
    assert fc.expm_apply(fc.build_kx(t), 0.0, s) is s


def test_expm_k0_leaves_state_invariant():
    t = fc.TruncationSpec(8)
    s = ts.build_state_schmidt(0.4, t)
    out = fc.expm_apply(fc.build_k0(t).scale(-1j), 1.3, s)
    assert out.fidelity(s) == pytest.approx(1.0, abs=1e-10)


def test_expm_kx_matches_schmidt_d10():
    t = fc.TruncationSpec(10)
    out = fc.expm_apply(fc.build_kx(t), 0.3, fc.FourModeState.vacuum(t))
    assert out.fidelity(ts.build_state_schmidt(0.3, t)) >= 1 - 1e-8


@pytest.mark.parametrize("scale", [0.2, -0.7, 1.5])
def test_taylor_matches_scipy_expm_multiply(scale):
    d = 4
    g = fc.build_kx(fc.TruncationSpec(d)).matrix
    rng = np.random.default_rng(11)
    v = rng.normal(size=d**4) + 1j * rng.normal(size=d**4)
    ours = fc.expm_multiply_taylor(g, v, scale)
    ref = scipy.sparse.linalg.expm_multiply(scale * g, v)
    assert np.linalg.norm(ours - ref) <= 1e-10 * np.linalg.norm(ref)


def test_taylor_matches_dense_expm_complex_generator():
    d = 3
    g = -1j * oracles.k0_channel_matrix(d, "B")
    v = np.eye(d**4)[:, :5]
    ours = fc.expm_multiply_taylor(g, v, 0.8)
    assert np.allclose(ours, scipy.linalg.expm(0.8 * g) @ v, atol=1e-12)


def test_unitary_evolution_preserves_norm():
    d = 6
    t = fc.TruncationSpec(d)
    s = ts.build_state_schmidt(0.3, t, "shell")
    v = s.vector()
    raw = fc.expm_multiply_taylor(fc.build_k0(t).matrix * -1j, v, 2.1)
    assert abs(np.linalg.norm(raw) - 1.0) <= 1e-10


def test_taylor_nonconvergence_is_reported():
    g = fc.build_kx(fc.TruncationSpec(4)).matrix
    with pytest.raises(fc.ExpmConvergenceError):
        fc.expm_multiply_taylor(g, np.ones(256), 1.0, max_terms=2)


def test_expm_updates_truncation_error():
    t = fc.TruncationSpec(4)
    out = fc.expm_apply(fc.build_kx(t), 0.8, fc.FourModeState.vacuum(t))
    assert out.truncation_error == pytest.approx(out.boundary_mass())
    assert out.truncation_error > 0
