"""Semilinear DAEs ``d/dt[A x] + B x = f(t, x)`` and their reduced form.

With the index-1 decomposition of ``lam*A + B`` every state splits as
``x = P_a z + P_d u``; the DAE is then equivalent to

    dz/dt = P_a^{-1} G^{-1} [-B P_a z + Q1 f(t, x)]
        0 = P_d^{-1} G^{-1} Q2 f(t, x) - u

and the second line implicitly defines ``u = eta(t, z)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .pencil import MatrixPencil, PencilDecomposition, decompose_index1

__all__ = [
    "ConstraintError",
    "NoConvergence",
    "SingularJacobian",
    "InconsistentInitialValue",
    "SemilinearDAE",
    "ReducedState",
    "newton_tolerance",
    "manifold_residual",
    "constraint_function",
    "constraint_jacobian",
    "phi_operator",
    "solve_constraint",
    "consistent_initialize",
    "reduced_rhs",
    "polish_state",
    "check_jacobian",
]

NEWTON_MAX_ITER = 50
NEWTON_MAX_HALVINGS = 8
NEWTON_RTOL = 1e-10
_JAC_COND_LIMIT = 1e13


class ConstraintError(RuntimeError):
    """The algebraic constraint could not be solved at a point."""


class NoConvergence(ConstraintError):
    pass


class SingularJacobian(ConstraintError):
    pass


class InconsistentInitialValue(ValueError):
    pass


def newton_tolerance(z) -> float:
    return NEWTON_RTOL * (1.0 + float(np.linalg.norm(z)))


def _fd_jacobian(f, t, x, h=1e-7):
    x = np.asarray(x, dtype=float)
    J = np.empty((x.size, x.size))
    for j in range(x.size):
        step = h * max(1.0, abs(x[j]))
        e = np.zeros_like(x)
        e[j] = step
        J[:, j] = (np.asarray(f(t, x + e)) - np.asarray(f(t, x - e))) / (2 * step)
    return J


class SemilinearDAE:
    """A semilinear DAE with a regular index-1 pencil.

    Parameters
    ----------
    A, B : array_like or MatrixPencil
        Pencil matrices; pass ``B=None`` with a :class:`MatrixPencil` as ``A``.
    f : callable
        ``f(t, x) -> ndarray`` of shape ``(n,)``.
    jac_f : callable, optional
        ``jac_f(t, x) -> ndarray`` of shape ``(n, n)``.  Central differences
        are used when omitted.
    dec : PencilDecomposition, optional
        Reuse a precomputed decomposition instead of calling
        :func:`decompose_index1`.
    """

    def __init__(self, A, B, f: Callable, jac_f: Callable | None = None, *,
                 dec: PencilDecomposition | None = None, lambda0: float | None = None):
        pencil = A if isinstance(A, MatrixPencil) and B is None else MatrixPencil(A, B)
        self.pencil = pencil
        self.f = f
        self.jac_f = jac_f if jac_f is not None else (lambda t, x: _fd_jacobian(f, t, x))
        self.dec = dec if dec is not None else decompose_index1(pencil, lambda0=lambda0)

        d = self.dec
        B = pencil.B
        self.Pa, self.Pd = d.basis_X1, d.basis_X2
        self.Ra, self.Rd = d.coords_X1, d.coords_X2
        # Reduced operators: dz/dt = Kz z + Kf f,  F(u) = Nf f - u.
        self.Kz = d.coords_X1 @ d.G_inv @ (-B @ d.basis_X1)
        self.Kf = d.coords_X1 @ d.G_inv @ d.Q1
        self.Nf = d.coords_X2 @ d.G_inv @ d.Q2
        for m in (self.Kz, self.Kf, self.Nf):
            m.setflags(write=False)

    @property
    def n(self) -> int:
        return self.pencil.n

    @property
    def a(self) -> int:
        return self.dec.a

    @property
    def d(self) -> int:
        return self.dec.d

    @property
    def A(self):
        return self.pencil.A

    @property
    def B(self):
        return self.pencil.B

    def split(self, x):
        x = np.asarray(x, dtype=float)
        return self.Ra @ x, self.Rd @ x

    def assemble(self, z, u):
        return self.Pa @ np.asarray(z, dtype=float) + self.Pd @ np.asarray(u, dtype=float)

    def stage(self, t: float, z, u_guess):
        """Solve the constraint at ``(t, z)`` and return ``(u, dz/dt)``."""
        u = solve_constraint(self, t, z, u_guess)
        return u, reduced_rhs(self, t, z, u)

    def derivative_P1x(self, t, x):
        """``d/dt (P1 x) = G^{-1}[-B P1 x + Q1 f(t, x)]`` for a state on the manifold."""
        d = self.dec
        x = np.asarray(x, dtype=float)
        return d.G_inv @ (-self.B @ (d.P1 @ x) + d.Q1 @ np.asarray(self.f(t, x)))


@dataclass(frozen=True)
class ReducedState:
    t: float
    z: np.ndarray
    u: np.ndarray

    def assemble(self, dae: SemilinearDAE):
        return dae.assemble(self.z, self.u)

    @classmethod
    def from_state(cls, dae: SemilinearDAE, t: float, x):
        z, u = dae.split(x)
        return cls(float(t), z, u)


def manifold_residual(dae: SemilinearDAE, t: float, x) -> np.ndarray:
    """``Q2 (B x - f(t, x))``; zero exactly on the consistency manifold."""
    x = np.asarray(x, dtype=float)
    return dae.dec.Q2 @ (dae.B @ x - np.asarray(dae.f(t, x), dtype=float))


def constraint_function(dae: SemilinearDAE, t, z, u) -> np.ndarray:
    x = dae.assemble(z, u)
    return dae.Nf @ np.asarray(dae.f(t, x), dtype=float) - np.asarray(u, dtype=float)


def constraint_jacobian(dae: SemilinearDAE, t, z, u) -> np.ndarray:
    """``dF/du = P_d^{-1} G^{-1} Phi(P_d u) P_d``, written as ``Nf J_f P_d - I``."""
    x = dae.assemble(z, u)
    return dae.Nf @ np.asarray(dae.jac_f(t, x), dtype=float) @ dae.Pd - np.eye(dae.d)


def phi_operator(dae: SemilinearDAE, t, x) -> np.ndarray:
    """``Phi = [d/dx (Q2 f(t, x)) - B] P2`` as an n x n matrix."""
    d = dae.dec
    return (d.Q2 @ np.asarray(dae.jac_f(t, x), dtype=float) - dae.B) @ d.P2


def solve_constraint(dae: SemilinearDAE, t: float, z, u_guess=None, *, tol: float | None = None,
                     max_iter: int = NEWTON_MAX_ITER) -> np.ndarray:
    """Damped Newton solve of ``P_d^{-1} G^{-1} Q2 f(t, P_a z + P_d u) - u = 0`` for ``u``.

    Each Newton step is halved up to 8 times until ``||F||`` decreases.  Once
    the tolerance ``1e-10 (1 + ||z||)`` is met, one further full step is taken
    if it lowers the residual.

    Raises
    ------
    NoConvergence
        The iteration cap is reached.
    SingularJacobian
        ``dF/du`` is numerically singular at an iterate.
    """
    z = np.asarray(z, dtype=float)
    if dae.d == 0:
        return np.zeros(0)
    u = np.zeros(dae.d) if u_guess is None else np.array(u_guess, dtype=float).reshape(dae.d)
    if not np.all(np.isfinite(u)):
        raise ValueError("u_guess must be finite")
    if tol is None:
        tol = newton_tolerance(z)
    xz = dae.Pa @ z

    def F(u):
        return dae.Nf @ np.asarray(dae.f(t, xz + dae.Pd @ u), dtype=float) - u

    def newton_step(u, Fu):
        J = dae.Nf @ np.asarray(dae.jac_f(t, xz + dae.Pd @ u), dtype=float) @ dae.Pd - np.eye(dae.d)
        if not np.all(np.isfinite(J)) or np.linalg.cond(J) > _JAC_COND_LIMIT:
            raise SingularJacobian(f"dF/du singular at t={t}, z={z.tolist()}, u={u.tolist()}")
        return np.linalg.solve(J, Fu)

    Fu = F(u)
    nF = np.linalg.norm(Fu)
    for _ in range(max_iter):
        if nF <= tol:
            step = newton_step(u, Fu)
            u_pol = u - step
            F_pol = F(u_pol)
            if np.linalg.norm(F_pol) < nF:
                u = u_pol
            return u
        step = newton_step(u, Fu)
        lam = 1.0
        for _ in range(NEWTON_MAX_HALVINGS + 1):
            u_try = u - lam * step
            F_try = F(u_try)
            n_try = np.linalg.norm(F_try)
            if np.isfinite(n_try) and n_try < nF:
                break
            lam *= 0.5
        if not np.isfinite(n_try):
            raise NoConvergence(f"non-finite constraint residual at t={t}")
        u, Fu, nF = u_try, F_try, n_try
    if nF <= tol:
        return u
    raise NoConvergence(f"Newton did not converge in {max_iter} iterations (|F|={nF:.3g}, tol={tol:.3g})")


def polish_state(dae: SemilinearDAE, t: float, x, max_iter: int = 3) -> np.ndarray:
    """Newton-correct ``x`` along ``X2`` directly in state coordinates.

    Iterating in ``u`` loses digits when ``P1 x`` and ``P2 x`` nearly cancel;
    correcting ``x`` itself keeps the manifold residual at rounding level.
    """
    x = np.array(x, dtype=float)
    if dae.d == 0:
        return x
    best = np.linalg.norm(manifold_residual(dae, t, x))
    for _ in range(max_iter):
        Fx = dae.Nf @ np.asarray(dae.f(t, x), dtype=float) - dae.Rd @ x
        J = dae.Nf @ np.asarray(dae.jac_f(t, x), dtype=float) @ dae.Pd - np.eye(dae.d)
        try:
            x_new = x - dae.Pd @ np.linalg.solve(J, Fx)
        except np.linalg.LinAlgError:
            break
        r = np.linalg.norm(manifold_residual(dae, t, x_new))
        if not r < best:
            break
        x, best = x_new, r
    return x


def consistent_initialize(dae: SemilinearDAE, t0: float, x0_guess, u_guess=None) -> np.ndarray:
    """Project ``x0_guess`` onto the consistency manifold at ``t0``.

    The differential part ``z0 = P_a^{-1} P1 x0_guess`` is kept and the
    algebraic part is recomputed by :func:`solve_constraint`, starting from
    the guess's own algebraic coordinate unless ``u_guess`` is given.
    """
    z0, u0 = dae.split(x0_guess)
    u = solve_constraint(dae, t0, z0, u0 if u_guess is None else u_guess)
    return polish_state(dae, t0, dae.assemble(z0, u))


def reduced_rhs(dae: SemilinearDAE, t: float, z, u) -> np.ndarray:
    """``P_a^{-1} G^{-1} (-B P_a z + Q1 f(t, P_a z + P_d u))``."""
    z = np.asarray(z, dtype=float)
    x = dae.assemble(z, u)
    return dae.Kz @ z + dae.Kf @ np.asarray(dae.f(t, x), dtype=float)


def check_jacobian(dae: SemilinearDAE, points, h: float = 1e-6) -> float:
    """Largest relative deviation of ``jac_f`` from central differences of ``f``.

    ``points`` is an iterable of ``(t, x)`` pairs.
    """
    worst = 0.0
    for t, x in points:
        J = np.asarray(dae.jac_f(t, x), dtype=float)
        J_fd = _fd_jacobian(dae.f, t, x, h=h)
        worst = max(worst, np.linalg.norm(J - J_fd) / max(1.0, np.linalg.norm(J_fd)))
    return float(worst)
