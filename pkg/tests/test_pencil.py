import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from semidae.pencil import (MatrixPencil, NotIndexOne, SingularPencil, check_regularity,
                            decompose_index1, resolvent_norms, verify_decomposition)


def circuit_pencil(L=500.0, C=0.5, r=2.0, g=0.2):
    A = np.diag([L, C, 0.0])
    B = np.array([[0, 1, r], [0, g, -1], [0, 1, r]], dtype=float)
    return MatrixPencil(A, B)


def well_conditioned(rng, n):
    Q1, _ = np.linalg.qr(rng.standard_normal((n, n)))
    Q2, _ = np.linalg.qr(rng.standard_normal((n, n)))
    return Q1 @ np.diag(rng.uniform(1.0, 10.0, n)) @ Q2


def constructed_pencil(rng, n, a):
    """A = S diag(I_a, 0) T, B = S diag(W, I_d) T with known projectors."""
    S, T = well_conditioned(rng, n), well_conditioned(rng, n)
    d = n - a
    W = rng.standard_normal((a, a))
    Ja = np.diag([1.0] * a + [0.0] * d)
    Jd = np.eye(n) - Ja
    BW = np.zeros((n, n))
    BW[:a, :a] = W
    BW[a:, a:] = np.eye(d)
    Ti, Si = np.linalg.inv(T), np.linalg.inv(S)
    oracle = {"P2": Ti @ Jd @ T, "P1": Ti @ Ja @ T, "Q2": S @ Jd @ Si, "Q1": S @ Ja @ Si,
              "G_inv": Ti @ Si}
    return MatrixPencil(S @ Ja @ T, S @ BW @ T), oracle


def test_regularity_examples():
    assert check_regularity(circuit_pencil())
    assert not check_regularity(MatrixPencil([[0.0]], [[0.0]]))
    assert not check_regularity(MatrixPencil([[1.0, 0], [0, 0]], np.zeros((2, 2))))


def test_pencil_shape_validation():
    with pytest.raises(ValueError):
        MatrixPencil(np.eye(2), np.eye(3))
    with pytest.raises(ValueError):
        MatrixPencil(np.ones((2, 3)), np.ones((2, 3)))


def test_circuit_decomposition_numeric():
    dec = decompose_index1(circuit_pencil())
    np.testing.assert_allclose(dec.P1, [[1, 0, 0], [0, 1, 0], [0, -0.5, 0]], atol=1e-12)
    np.testing.assert_allclose(dec.P2, [[0, 0, 0], [0, 0, 0], [0, 0.5, 1]], atol=1e-12)
    np.testing.assert_allclose(dec.Q1, [[1, 0, -1], [0, 1, 0.5], [0, 0, 0]], atol=1e-12)
    np.testing.assert_allclose(dec.Q2, [[0, 0, 1], [0, 0, -0.5], [0, 0, 1]], atol=1e-12)
    np.testing.assert_allclose(dec.G_inv, [[0.002, 0, -0.002], [0, 2, 1], [0, -1, 0]], atol=1e-12)
    assert (dec.a, dec.d) == (2, 1)


def test_invertible_A_gives_trivial_split():
    rng = np.random.default_rng(3)
    B = rng.standard_normal((4, 4))
    dec = decompose_index1(MatrixPencil(np.eye(4), B))
    np.testing.assert_allclose(dec.P1, np.eye(4), atol=1e-12)
    np.testing.assert_allclose(dec.Q1, np.eye(4), atol=1e-12)
    np.testing.assert_allclose(dec.P2, 0, atol=1e-12)
    assert dec.d == 0 and dec.basis_X2.shape == (4, 0)
    np.testing.assert_allclose(dec.G_inv, np.eye(4), atol=1e-12)


def test_nilpotent_pencil_rejected():
    pencil = MatrixPencil([[0.0, 1.0], [0.0, 0.0]], np.eye(2))
    with pytest.raises(NotIndexOne):
        decompose_index1(pencil)
    norms = resolvent_norms(pencil)
    # grows like |lambda|: a factor 100 per radius step
    ratios = np.array(norms[1:]) / np.array(norms[:-1])
    assert np.all(ratios > 50)


def test_singular_pencil_raises():
    with pytest.raises(SingularPencil):
        decompose_index1(MatrixPencil([[1.0, 0], [0, 0]], np.zeros((2, 2))))


def test_verify_passes_and_catches_scaled_projector():
    pencil = circuit_pencil()
    dec = decompose_index1(pencil)
    rep = verify_decomposition(pencil, dec, tol=1e-10)
    assert rep.passed, rep.failed
    from dataclasses import replace
    bad = replace(dec, P1=2 * dec.P1)
    rep_bad = verify_decomposition(pencil, bad, tol=1e-10)
    assert not rep_bad.passed
    assert "P1P1=P1" in rep_bad.failed


def test_constructed_pencils_match_oracle():
    rng = np.random.default_rng(2024)
    for _ in range(100):
        n = int(rng.integers(1, 9))
        a = int(rng.integers(0, n + 1))
        pencil, oracle = constructed_pencil(rng, n, a)
        dec = decompose_index1(pencil)
        for name, M in oracle.items():
            np.testing.assert_allclose(getattr(dec, name), M, atol=1e-8, err_msg=name)
        assert verify_decomposition(pencil, dec).passed


def test_lambda0_independence():
    rng = np.random.default_rng(11)
    for _ in range(20):
        pencil, _ = constructed_pencil(rng, 5, 3)
        d1 = decompose_index1(pencil, lambda0=1.0)
        d2 = decompose_index1(pencil, lambda0=-7.0)
        for name in ("P1", "P2", "Q1", "Q2", "G_inv"):
            np.testing.assert_allclose(getattr(d1, name), getattr(d2, name), atol=1e-9)


def test_explicit_bad_lambda0_rejected():
    # lambda0 = 0 makes lambda0 A + B = B singular here
    pencil = MatrixPencil(np.eye(2), np.zeros((2, 2)))
    with pytest.raises(SingularPencil):
        decompose_index1(pencil, lambda0=0.0)


def test_resolvent_bounded_for_accepted_pencil():
    dec = decompose_index1(circuit_pencil())
    norms = dec.resolvent_bound_report["norms"]
    assert max(norms) / min(norms) <= 10.0


def test_decomposition_is_read_only():
    dec = decompose_index1(circuit_pencil())
    with pytest.raises(ValueError):
        dec.P1[0, 0] = 3.0


def test_to_dict_round_trips_shapes():
    dec = decompose_index1(circuit_pencil())
    d = dec.to_dict()
    assert np.array(d["P1"]).shape == (3, 3)
    assert d["a"] == 2 and d["d"] == 1


@settings(max_examples=50, deadline=None)
@given(st.floats(-2, 3), st.floats(-2, 3), st.floats(-2, 3), st.floats(-2, 3))
def test_circuit_identities_hold_over_parameter_range(lL, lC, lr, lg):
    pencil = circuit_pencil(10 ** lL, 10 ** lC, 10 ** lr, 10 ** lg)
    dec = decompose_index1(pencil)
    assume(np.linalg.cond(dec.G_inv) < 1e6)
    rep = verify_decomposition(pencil, dec)
    assert rep.passed, rep.failed


def test_residuals_track_conditioning_of_G():
    # r = 0.001 drives cond(G) to about 1e9; residuals then sit at rounding level times cond
    pencil = circuit_pencil(50.0, 1.0, 0.001, 1.0)
    dec = decompose_index1(pencil)
    cond = np.linalg.cond(dec.G_inv)
    worst = max(verify_decomposition(pencil, dec).residuals.values())
    assert cond > 1e8
    assert worst < 1e-16 * cond * 10
