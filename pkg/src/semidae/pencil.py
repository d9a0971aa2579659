"""Spectral decomposition of regular index-1 matrix pencils ``lam*A + B``.

The decomposition splits ``R^n = X1 + X2`` (``X2 = ker A``) and
``R^n = Y1 + Y2`` with projector pairs ``(P1, P2)`` and ``(Q1, Q2)`` such that
``A Pj = Qj A`` and ``B Pj = Qj B``.  The auxiliary operator
``G = A + B P2`` is invertible exactly when the pencil has index 1.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "PencilError",
    "NotIndexOne",
    "SingularPencil",
    "IllConditioned",
    "MatrixPencil",
    "PencilDecomposition",
    "DecompositionReport",
    "check_regularity",
    "decompose_index1",
    "verify_decomposition",
    "resolvent_norms",
    "LAMBDA0_CANDIDATES",
]


class PencilError(ValueError):
    """Base class for pencil decomposition failures."""


class NotIndexOne(PencilError):
    pass


class SingularPencil(PencilError):
    pass


class IllConditioned(PencilError):
    pass


LAMBDA0_CANDIDATES = (1.0, -1.0, 2.0, -2.0, 10.0, -10.0, 0.5, -0.5, 3.0, -3.0,
                      100.0, -100.0, 0.1, -0.1, 7.0, -7.0, 1000.0, -1000.0)
_COND_LIMIT = 1e12
_RESOLVENT_RADII = (1e2, 1e4, 1e6)
_RESOLVENT_GROWTH_LIMIT = 10.0
# Relative singular-value floor for rank decisions; n*eps alone misjudges
# products of moderately conditioned factors.
_RANK_RTOL_FLOOR = 1e-12


@dataclass(frozen=True)
class MatrixPencil:
    """The pencil ``lam*A + B`` with real square ``A`` and ``B``."""

    A: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        A = np.array(self.A, dtype=float, ndmin=2)
        B = np.array(self.B, dtype=float, ndmin=2)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValueError(f"A must be square, got shape {A.shape}")
        if B.shape != A.shape:
            raise ValueError(f"A and B must have the same shape, got {A.shape} and {B.shape}")
        A.setflags(write=False)
        B.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def scale(self) -> float:
        return max(1.0, np.linalg.norm(self.A, 2), np.linalg.norm(self.B, 2))

    def at(self, lam):
        return lam * self.A + self.B


@dataclass(frozen=True)
class PencilDecomposition:
    """Projectors, subspace bases and ``G^{-1}`` of an index-1 pencil.

    ``basis_X1`` (n x a) and ``basis_X2`` (n x d) have orthonormal columns.
    ``coords_X1`` and ``coords_X2`` are the rows of ``[basis_X1 basis_X2]^{-1}``,
    so ``z = coords_X1 @ x`` and ``u = coords_X2 @ x`` are the coordinates of
    ``P1 x`` and ``P2 x``.
    """

    P1: np.ndarray
    P2: np.ndarray
    Q1: np.ndarray
    Q2: np.ndarray
    G_inv: np.ndarray
    basis_X1: np.ndarray
    basis_X2: np.ndarray
    coords_X1: np.ndarray
    coords_X2: np.ndarray
    lambda0: float
    resolvent_bound_report: dict = field(default_factory=dict)

    @property
    def a(self) -> int:
        return self.basis_X1.shape[1]

    @property
    def d(self) -> int:
        return self.basis_X2.shape[1]

    @property
    def n(self) -> int:
        return self.P1.shape[0]

    def to_dict(self) -> dict:
        keys = ("P1", "P2", "Q1", "Q2", "G_inv", "basis_X1", "basis_X2")
        out = {k: getattr(self, k).tolist() for k in keys}
        out.update(a=self.a, d=self.d, lambda0=self.lambda0,
                   resolvent_bound_report=self.resolvent_bound_report)
        return out


@dataclass(frozen=True)
class DecompositionReport:
    residuals: dict
    tol: float

    @property
    def passed(self) -> bool:
        return all(v <= self.tol for v in self.residuals.values())

    @property
    def failed(self) -> list:
        return [k for k, v in self.residuals.items() if v > self.tol]

    def to_dict(self) -> dict:
        return {"tol": self.tol, "passed": self.passed, "residuals": dict(self.residuals)}


def _rank_tol(s: np.ndarray, n: int) -> float:
    if s.size == 0:
        return 0.0
    return max(n * np.finfo(float).eps, _RANK_RTOL_FLOOR) * s[0]


def _numerical_rank(X: np.ndarray) -> int:
    s = np.linalg.svd(X, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s > _rank_tol(s, X.shape[0])))


def _sign_fix(V: np.ndarray) -> np.ndarray:
    # Deterministic orientation: the largest-magnitude entry of each column is positive.
    if V.size == 0:
        return V
    idx = np.argmax(np.abs(V), axis=0)
    signs = np.sign(V[idx, np.arange(V.shape[1])])
    signs[signs == 0] = 1.0
    return V * signs


def check_regularity(pencil: MatrixPencil, sample_count: int | None = None, seed: int = 0) -> bool:
    """Return True iff ``det(lam*A + B)`` is nonzero at one of the sampled ``lam``.

    ``det`` is a polynomial of degree at most ``n``; ``2n + 1`` samples (the
    default) leave no room for a nonzero polynomial to vanish at all of them.
    Nonsingularity is decided by numerical rank, not by the raw determinant.
    """
    n = pencil.n
    if sample_count is None:
        sample_count = 2 * n + 1
    rng = np.random.default_rng(seed)
    lams = rng.uniform(-10.0, 10.0, size=sample_count)
    return any(_numerical_rank(pencil.at(lam)) == n for lam in lams)


def resolvent_norms(pencil: MatrixPencil, radii=_RESOLVENT_RADII) -> list:
    """Spectral norms of ``(lam*A + B)^{-1}`` at ``lam = rho * s`` for each radius.

    ``s = max(1, ||B|| / sigma_min+(A))`` bounds the finite spectrum, so the
    probe sits in the asymptotic regime even for badly scaled pencils.  A
    singular sample is reported as ``inf``.
    """
    sA = np.linalg.svd(pencil.A, compute_uv=False)
    nz = sA[sA > _rank_tol(sA, pencil.n)] if sA.size and sA[0] > 0 else sA[:0]
    s = max(1.0, np.linalg.norm(pencil.B, 2) / nz[-1]) if nz.size else 1.0
    out = []
    for rho in radii:
        sv = np.linalg.svd(pencil.at(rho * s), compute_uv=False)
        out.append(float(np.inf) if sv[-1] == 0.0 else float(1.0 / sv[-1]))
    return out


def _choose_lambda0(pencil: MatrixPencil) -> float:
    for lam in LAMBDA0_CANDIDATES:
        if np.linalg.cond(pencil.at(lam)) < _COND_LIMIT:
            return lam
    raise SingularPencil("no lambda0 in the candidate list gives a well-conditioned lambda0*A + B")


def decompose_index1(pencil: MatrixPencil, lambda0: float | None = None) -> PencilDecomposition:
    """Decompose an index-1 pencil into its projector pairs and ``G^{-1}``.

    With ``M = (lambda0*A + B)^{-1} A``, the pencil has index 1 iff
    ``ker M = ker M^2``; then ``X2 = ker M = ker A`` and ``X1 = range M``.

    Raises
    ------
    SingularPencil
        No candidate ``lambda0`` makes ``lambda0*A + B`` well conditioned.
    NotIndexOne
        The kernel test fails or the resolvent grows with ``|lam|``.
    IllConditioned
        ``[basis_X1 basis_X2]`` or ``G`` is numerically singular.
    """
    A, B, n = pencil.A, pencil.B, pencil.n
    if lambda0 is None:
        lambda0 = _choose_lambda0(pencil)
    else:
        if np.linalg.cond(pencil.at(lambda0)) >= _COND_LIMIT:
            raise SingularPencil(f"lambda0={lambda0} gives a singular lambda0*A + B")
    L0 = pencil.at(lambda0)
    M = np.linalg.solve(L0, A)

    rank_M = _numerical_rank(M)
    rank_M2 = _numerical_rank(M @ M)
    norms = resolvent_norms(pencil)
    growth = max(norms[1:]) / norms[0] if np.isfinite(norms[0]) and norms[0] > 0 else np.inf
    report = {
        "radii": list(_RESOLVENT_RADII),
        "norms": norms,
        "growth": float(growth),
        "C1_estimate": float(max(norms)),
    }
    if rank_M != rank_M2:
        raise NotIndexOne(f"ker M != ker M^2 (rank M = {rank_M}, rank M^2 = {rank_M2})")
    if not growth <= _RESOLVENT_GROWTH_LIMIT:
        raise NotIndexOne(f"resolvent norm grows with |lambda| (factor {growth:.3g})")

    # ker A and range A from one SVD; X1 = (lambda0 A + B)^{-1} range A.
    U, s, Vt = np.linalg.svd(A)
    a = int(np.sum(s > _rank_tol(s, n))) if s.size and s[0] > 0 else 0
    if a != rank_M:
        raise IllConditioned(f"rank A ({a}) and rank M ({rank_M}) disagree")
    basis_X2 = _sign_fix(Vt[a:].T.copy())
    if a:
        Q, _ = np.linalg.qr(np.linalg.solve(L0, U[:, :a]))
        basis_X1 = _sign_fix(Q)
    else:
        basis_X1 = np.zeros((n, 0))

    T = np.hstack([basis_X1, basis_X2])
    if np.linalg.cond(T) > _COND_LIMIT:
        raise IllConditioned("X1 and X2 are numerically dependent")
    T_inv = np.linalg.inv(T)
    coords_X1, coords_X2 = T_inv[:a], T_inv[a:]
    P2 = basis_X2 @ coords_X2
    P1 = np.eye(n) - P2
    G = A + B @ P2
    if np.linalg.cond(G) > _COND_LIMIT:
        raise IllConditioned("G = A + B P2 is numerically singular")
    G_inv = np.linalg.inv(G)
    # G P1 = A P1 and G P2 = B P2; these forms lose less accuracy than G Pj G^{-1}
    Q2 = B @ P2 @ G_inv
    Q1 = np.eye(n) - Q2

    mats = dict(P1=P1, P2=P2, Q1=Q1, Q2=Q2, G_inv=G_inv, basis_X1=basis_X1,
                basis_X2=basis_X2, coords_X1=coords_X1, coords_X2=coords_X2)
    for m in mats.values():
        m.setflags(write=False)
    return PencilDecomposition(lambda0=float(lambda0), resolvent_bound_report=report, **mats)


def verify_decomposition(pencil: MatrixPencil, dec: PencilDecomposition, tol: float = 1e-10) -> DecompositionReport:
    """Residuals (Frobenius norm) of every identity a decomposition must satisfy.

    Identities involving ``A`` or ``B`` are divided by ``max(1, ||A||, ||B||)``.
    """
    A, B = pencil.A, pencil.B
    P1, P2, Q1, Q2, Gi = dec.P1, dec.P2, dec.Q1, dec.Q2, dec.G_inv
    I = np.eye(pencil.n)
    s = pencil.scale
    nrm = np.linalg.norm

    res = {
        "P1P1=P1": nrm(P1 @ P1 - P1),
        "P2P2=P2": nrm(P2 @ P2 - P2),
        "P1P2=0": nrm(P1 @ P2),
        "P2P1=0": nrm(P2 @ P1),
        "P1+P2=I": nrm(P1 + P2 - I),
        "Q1Q1=Q1": nrm(Q1 @ Q1 - Q1),
        "Q2Q2=Q2": nrm(Q2 @ Q2 - Q2),
        "Q1Q2=0": nrm(Q1 @ Q2),
        "Q2Q1=0": nrm(Q2 @ Q1),
        "Q1+Q2=I": nrm(Q1 + Q2 - I),
        "AP1=Q1A": nrm(A @ P1 - Q1 @ A) / s,
        "AP2=Q2A": nrm(A @ P2 - Q2 @ A) / s,
        "BP1=Q1B": nrm(B @ P1 - Q1 @ B) / s,
        "BP2=Q2B": nrm(B @ P2 - Q2 @ B) / s,
        "AP2=0": nrm(A @ P2) / s,
        "Ginv A P1=P1": nrm(Gi @ A @ P1 - P1) / s,
        "Ginv B P2=P2": nrm(Gi @ B @ P2 - P2) / s,
        "A Ginv Q1=Q1": nrm(A @ Gi @ Q1 - Q1) / s,
        "B Ginv Q2=Q2": nrm(B @ Gi @ Q2 - Q2) / s,
        "Ginv(A+BP2)=I": nrm(Gi @ (A + B @ P2) - I) / s,
        "P1 X1=X1": nrm(P1 @ dec.basis_X1 - dec.basis_X1),
        "P2 X2=X2": nrm(P2 @ dec.basis_X2 - dec.basis_X2),
        "X1 orthonormal": nrm(dec.basis_X1.T @ dec.basis_X1 - np.eye(dec.a)),
        "X2 orthonormal": nrm(dec.basis_X2.T @ dec.basis_X2 - np.eye(dec.d)),
    }
    return DecompositionReport({k: float(v) for k, v in res.items()}, tol)
