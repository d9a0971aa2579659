import math

import numpy as np
import pytest
from scipy.optimize import brentq

from semidae.circuit import CircuitParams, NonlinearitySpec, SourceSpec, build_filter_dae, instability_family, sine_family
from semidae.dae import (NoConvergence, ReducedState, SemilinearDAE, SingularJacobian, check_jacobian,
                         consistent_initialize, constraint_function, manifold_residual, newton_tolerance,
                         reduced_rhs, solve_constraint)

X0_ESCAPE = np.array([2.45, -20.625125, 2.5])


def escape_dae(**backend):
    p = CircuitParams(10, 0.5, 2, 0.2, *instability_family(), SourceSpec("sinusoid", beta=2))
    return build_filter_dae(p, **backend)


def sine_dae(backend="auto"):
    p = CircuitParams(300, 0.5, 2.6, 0.2, *sine_family((0.5, 1.5, 1, 3)),
                      SourceSpec("sinusoid", beta=200, omega=0.5, offset=-0.2))
    return build_filter_dae(p, backend=backend)


def x3_oracle(p, x1, x2, lo=-10.0, hi=10.0):
    """Solve ``x2 + r x3 = psi(x1 - x3) - phi(x3)`` for x3 by bracketing."""
    g = lambda x3: p.psi.value(x1 - x3) - p.phi.value(x3) - x2 - p.r * x3
    return brentq(g, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps)


def test_escape_start_is_consistent():
    dae = escape_dae()
    assert np.linalg.norm(manifold_residual(dae, 0.0, X0_ESCAPE)) <= 1e-12


def test_origin_consistent_for_bounded_families():
    dae = sine_dae()
    assert np.linalg.norm(manifold_residual(dae, 0.0, np.zeros(3))) <= 1e-12


def test_linear_residual_closed_form():
    r = 2.0
    dae = build_filter_dae(CircuitParams(500, 0.5, r, 0.2))
    x = np.array([3.0, 0.1 - r * 0.7, 0.7])
    res = manifold_residual(dae, 0.0, x)
    np.testing.assert_allclose(np.linalg.norm(res), 0.1 * np.linalg.norm([1, -1 / r, 1]), rtol=1e-12)


@pytest.mark.parametrize("backend", ["numpy", "python", "compiled"])
def test_escape_constraint_root(backend):
    dae = escape_dae(backend=backend)
    z, _ = dae.split(X0_ESCAPE)
    u, _ = dae.stage(0.0, z, np.zeros(1))
    x = dae.assemble(z, u)
    np.testing.assert_allclose(x[2], 2.5, atol=1e-10)
    # r u = psi(x1 - x3) - phi(x3) with u = x2/r + x3
    np.testing.assert_allclose(u, [-7.8125625], atol=1e-10)
    np.testing.assert_allclose(2 * u[0], (-0.05) ** 3 - 2.5 ** 3, atol=1e-10)


def test_zero_coupling_gives_zero_u():
    dae = build_filter_dae(CircuitParams(5, 1, 3, 1, source=SourceSpec("sinusoid", beta=4)))
    rng = np.random.default_rng(0)
    for _ in range(5):
        z = rng.normal(size=2)
        u = solve_constraint(dae, 1.3, z, rng.normal(size=1))
        np.testing.assert_allclose(u, 0.0, atol=1e-12)


def test_sine_root_matches_bisection():
    dae = sine_dae("numpy")
    p = dae.params
    x1, x2 = math.pi / 6, 0.5
    x = consistent_initialize(dae, 0.0, [x1, x2, 0.0])
    np.testing.assert_allclose(x[:2], [x1, x2], atol=1e-14)
    np.testing.assert_allclose(x[2], x3_oracle(p, x1, x2), atol=1e-12)


def test_consistent_initialize_examples():
    dae = escape_dae()
    np.testing.assert_allclose(consistent_initialize(dae, 0.0, X0_ESCAPE), X0_ESCAPE, atol=1e-10)
    np.testing.assert_allclose(consistent_initialize(sine_dae(), 0.0, np.zeros(3)), 0.0, atol=1e-14)
    x = consistent_initialize(dae, 0.0, [2.45, -20.625125, 0.0])
    np.testing.assert_allclose(x, X0_ESCAPE, atol=1e-10)
    assert np.linalg.norm(manifold_residual(dae, 0.0, x)) <= newton_tolerance(dae.split(x)[0])


def test_scalar_ode_reduction():
    dae = SemilinearDAE([[1.0]], [[1.0]], lambda t, x: np.zeros(1))
    assert (dae.a, dae.d) == (1, 0)
    assert solve_constraint(dae, 0.0, np.array([2.0])).shape == (0,)
    z = np.array([2.0])
    np.testing.assert_allclose(reduced_rhs(dae, 0.0, z, np.zeros(0)), -z)


def test_equilibrium_has_zero_rhs():
    p = CircuitParams(500, 0.5, 2, 0.2, *sine_family(), SourceSpec("sinusoid", beta=10))
    dae = build_filter_dae(p, backend="numpy")
    np.testing.assert_allclose(reduced_rhs(dae, 0.0, np.zeros(2), np.zeros(1)), 0.0, atol=1e-15)


def explicit_rates(p, t, x):
    x1, x2, x3 = x
    dx1 = (p.source(t) - p.phi0.value(x1) - p.phi.value(x3) - x2 - p.r * x3) / p.L
    dx2 = (x3 - p.g * x2 - p.h.value(x2)) / p.C
    return np.array([dx1, dx2])


@pytest.mark.parametrize("factory", [sine_dae, escape_dae])
def test_reduced_rhs_matches_explicit_ode(factory):
    dae = factory()
    p = dae.params
    rng = np.random.default_rng(7)
    for _ in range(100):
        t = rng.uniform(0, 10)
        x1, x2 = rng.uniform(-1, 1, 2)
        x = consistent_initialize(dae, t, [x1, x2, 0.0])
        z, u = dae.split(x)
        dz = reduced_rhs(dae, t, z, u)
        dx = dae.Pa @ dz
        np.testing.assert_allclose(dx[:2], explicit_rates(p, t, x), rtol=1e-10, atol=1e-10)


def test_round_trip_on_manifold():
    dae = sine_dae()
    rng = np.random.default_rng(1)
    for _ in range(50):
        x = consistent_initialize(dae, 0.0, np.append(rng.uniform(-3, 3, 2), 0.0))
        st = ReducedState.from_state(dae, 0.0, x)
        np.testing.assert_allclose(st.assemble(dae), x, atol=1e-12)


def test_root_unique_from_random_guesses():
    dae = sine_dae("numpy")
    rng = np.random.default_rng(5)
    for _ in range(5):
        z = rng.uniform(-2, 2, 2)
        roots = [solve_constraint(dae, 0.3, z, rng.uniform(-100, 100, 1)) for _ in range(10)]
        assert np.ptp(np.concatenate(roots)) <= 1e-8


def test_jacobian_consistency():
    rng = np.random.default_rng(3)
    dae = sine_dae()
    pts = [(rng.uniform(0, 5), rng.uniform(-2, 2, 3)) for _ in range(20)]
    assert check_jacobian(dae, pts) <= 1e-4
    dae = escape_dae()
    assert check_jacobian(dae, pts) <= 1e-4


def test_fd_jacobian_default():
    f = lambda t, x: np.array([x[0] ** 2 - x[1], np.sin(x[1])])
    dae = SemilinearDAE(np.diag([1.0, 0.0]), np.array([[0.0, 1.0], [0.0, 1.0]]), f)
    x = np.array([0.3, 0.2])
    np.testing.assert_allclose(dae.jac_f(0.0, x), [[0.6, -1.0], [0.0, math.cos(0.2)]], rtol=1e-6)


def test_singular_jacobian_raised():
    # constraint 0 = x2**2 - x2 + 1/4 has a double root at 1/2; dF/du vanishes there
    A = np.diag([1.0, 0.0])
    B = np.array([[1.0, 0.0], [0.0, 1.0]])
    f = lambda t, x: np.array([0.0, x[1] ** 2 + 0.25])
    jac = lambda t, x: np.array([[0.0, 0.0], [0.0, 2 * x[1]]])
    dae = SemilinearDAE(A, B, f, jac)
    sign = dae.Pd[1, 0]
    with pytest.raises(SingularJacobian):
        solve_constraint(dae, 0.0, np.zeros(1), np.array([0.5 / sign]))


def test_no_convergence_without_root():
    # x2 = x2**2 + 1 has no real root
    A = np.diag([1.0, 0.0])
    B = np.eye(2)
    f = lambda t, x: np.array([0.0, x[1] ** 2 + 1.0])
    jac = lambda t, x: np.array([[0.0, 0.0], [0.0, 2 * x[1]]])
    dae = SemilinearDAE(A, B, f, jac)
    with pytest.raises((NoConvergence, SingularJacobian)):
        solve_constraint(dae, 0.0, np.zeros(1), np.array([3.0]))


def test_nonfinite_guess_rejected():
    with pytest.raises(ValueError):
        solve_constraint(sine_dae(), 0.0, np.zeros(2), np.array([np.nan]))


def test_constraint_function_zero_at_solution():
    dae = escape_dae()
    z, u = dae.split(X0_ESCAPE)
    assert np.linalg.norm(constraint_function(dae, 0.0, z, u)) <= 1e-10


def test_nonlinearity_spec_validation():
    with pytest.raises(ValueError):
        NonlinearitySpec("odd_power", 1.0, 0)
    with pytest.raises(ValueError):
        NonlinearitySpec("tanh")
