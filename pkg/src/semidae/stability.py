"""Sampled checks of sufficient conditions for Lagrange stability and instability.

Each check evaluates a hypothesis at sampled points of the consistency
manifold and reports ``NotFalsified``, ``Falsified`` (with a reproducible
witness) or ``Inconclusive``.  Sampling can refute a hypothesis but never
prove it.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import brentq
from scipy.stats import qmc

from .dae import ConstraintError, SemilinearDAE, constraint_function, constraint_jacobian, polish_state

__all__ = [
    "Verdict",
    "InvalidH",
    "InvalidRegion",
    "ComparisonFunction",
    "GaugeFunction",
    "CertificateEntry",
    "CertificateReport",
    "BoundaryPatch",
    "RegionSpec",
    "BoxSampler",
    "GridSampler",
    "RegionSampler",
    "find_constraint_roots",
    "lift_to_manifold",
    "dissipation_lhs",
    "check_constraint_solvability",
    "check_basis_invertibility",
    "check_stability_inequality",
    "check_boundedness_condition",
    "check_instability_conditions",
    "stability_certificate",
    "instability_certificate",
]

DEFAULT_STARTS = (0.0, 1.0, -1.0, 10.0, -10.0, 100.0, -100.0)


class Verdict(str, Enum):
    NOT_FALSIFIED = "NotFalsified"
    FALSIFIED = "Falsified"
    INCONCLUSIVE = "Inconclusive"


class InvalidH(ValueError):
    pass


class InvalidRegion(ValueError):
    pass


# ----------------------------------------------------------------------------
# comparison and gauge functions


_KINDS = ("linear", "power", "loglinear", "custom")


@dataclass(frozen=True)
class ComparisonFunction:
    """Scalar comparison function ``U(v) > 0`` for ``v > 0``.

    ``alpha=None`` (power kind only) asks the instability check to calibrate
    ``alpha`` from the samples.  Whether ``int^inf dv/U(v)`` diverges is fixed
    by the kind; custom kinds must declare it.
    """

    kind: str
    alpha: float | None = 1.0
    p: float = 1.0
    func: Callable[[float], float] | None = None
    declared_divergence: bool | None = None

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown comparison kind {self.kind!r}")
        if self.alpha is not None and not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if self.alpha is None and self.kind != "power":
            raise ValueError("only power comparison functions can be calibrated")
        if self.kind == "power" and not self.p > 0:
            raise ValueError("power exponent must be positive")
        if self.kind == "custom" and (self.func is None or self.declared_divergence is None):
            raise ValueError("custom comparison functions need func and declared_divergence")

    @classmethod
    def linear(cls, alpha: float = 1.0):
        return cls("linear", alpha)

    @classmethod
    def power(cls, p: float, alpha: float | None = 1.0):
        return cls("power", alpha, p)

    @classmethod
    def loglinear(cls, alpha: float = 1.0):
        return cls("loglinear", alpha)

    @classmethod
    def custom(cls, func, integral_diverges: bool):
        return cls("custom", 1.0, 1.0, func, bool(integral_diverges))

    @property
    def integral_diverges(self) -> bool:
        if self.kind == "custom":
            return bool(self.declared_divergence)
        if self.kind == "power":
            return self.p <= 1.0
        return True

    def with_alpha(self, alpha: float) -> "ComparisonFunction":
        return ComparisonFunction(self.kind, alpha, self.p, self.func, self.declared_divergence)

    def shape(self, v: float) -> float:
        """``U(v) / alpha``."""
        if self.kind == "linear":
            return v
        if self.kind == "power":
            return v ** self.p
        if self.kind == "loglinear":
            return v * math.log(v + 1.0)
        return self.func(v)

    def __call__(self, v: float) -> float:
        if self.alpha is None:
            raise ValueError("alpha has not been calibrated")
        if self.kind == "custom":
            return self.func(v)
        return self.alpha * self.shape(v)

    def to_dict(self):
        return {"kind": self.kind, "alpha": self.alpha, "p": self.p,
                "integral_diverges": self.integral_diverges}


@dataclass(frozen=True)
class GaugeFunction:
    """Time gauge ``k(t)`` with a user-declared property of ``int k dt``.

    ``integral_finite_declared`` is True when ``int^inf k dt < +inf``, False
    when it diverges to ``+inf`` and None when unknown.
    """

    k: Callable[[float], float]
    integral_finite_declared: bool | None = None
    horizon: tuple = (0.0, 100.0)
    label: str = "custom"

    @classmethod
    def constant(cls, c: float, horizon=(0.0, 100.0)):
        return cls(lambda t, c=float(c): c, c <= 0.0, horizon, f"const {c:g}")

    def __call__(self, t: float) -> float:
        return float(self.k(t))

    def probe_continuity(self, count: int = 2001) -> bool:
        ts = np.linspace(*self.horizon, count)
        vals = np.array([self(t) for t in ts])
        return bool(np.all(np.isfinite(vals)))

    def to_dict(self):
        return {"label": self.label, "integral_finite_declared": self.integral_finite_declared,
                "horizon": list(self.horizon)}


# ----------------------------------------------------------------------------
# reports


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, Enum):
        return obj.value
    return obj


@dataclass
class CertificateEntry:
    condition: str
    samples: int
    verdict: Verdict
    worst_margin: float | None = None
    witness: dict | None = None
    details: dict = field(default_factory=dict)
    required: bool = True

    @property
    def passed(self) -> bool:
        return self.verdict is Verdict.NOT_FALSIFIED

    def to_dict(self):
        return _jsonable({
            "condition": self.condition, "samples": self.samples, "passed": self.passed,
            "verdict": self.verdict, "worst_margin": self.worst_margin, "witness": self.witness,
            "details": self.details, "required": self.required,
        })


@dataclass
class CertificateReport:
    title: str
    entries: list = field(default_factory=list)

    @property
    def verdict(self) -> Verdict:
        req = [e for e in self.entries if e.required]
        if any(e.verdict is Verdict.FALSIFIED for e in req):
            return Verdict.FALSIFIED
        if any(e.verdict is Verdict.INCONCLUSIVE for e in req):
            return Verdict.INCONCLUSIVE
        return Verdict.NOT_FALSIFIED

    def entry(self, condition: str) -> CertificateEntry:
        for e in self.entries:
            if e.condition == condition:
                return e
        raise KeyError(condition)

    def extend(self, other: "CertificateReport"):
        self.entries.extend(other.entries)
        return self

    def to_dict(self):
        return {"title": self.title, "verdict": self.verdict.value,
                "entries": [e.to_dict() for e in self.entries]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def summary(self) -> str:
        lines = [f"{self.title}: {self.verdict.value}"]
        for e in self.entries:
            tag = "" if e.required else " (informational)"
            margin = "" if e.worst_margin is None else f", worst margin {e.worst_margin:.6g}"
            lines.append(f"  [{e.verdict.value}] {e.condition}{tag}: {e.samples} samples{margin}")
            if e.witness is not None:
                lines.append(f"      witness: {json.dumps(_jsonable(e.witness), sort_keys=True)}")
        return "\n".join(lines)


# ----------------------------------------------------------------------------
# regions and samplers


@dataclass(frozen=True)
class BoundaryPatch:
    """A piece of a region boundary.

    ``point(s)`` maps ``s in [0, 1]`` to a boundary point ``P1 x``; the region
    lies on the side ``level < 0``, so the flow points inward where
    ``grad(x) . d/dt(P1 x) < 0``.
    """

    name: str
    point: Callable[[float], np.ndarray]
    level: Callable[[np.ndarray], float]
    grad: Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class RegionSpec:
    """A region of ``X1`` given by a membership predicate on ``P1 x``.

    ``interior`` optionally maps points of the open unit cube in ``R^a`` into
    the region, which lets samplers avoid rejection.
    """

    membership: Callable[[np.ndarray], bool]
    boundary_patches: tuple = ()
    excludes_origin: bool = True
    interior: Callable[[np.ndarray], np.ndarray] | None = None
    info: dict = field(default_factory=dict)

    def contains(self, xp1) -> bool:
        return bool(self.membership(np.asarray(xp1, dtype=float)))


def _default_chart(dae):
    return lambda q: dae.Pa @ np.asarray(q, dtype=float)


@dataclass(frozen=True)
class BoxSampler:
    """Scrambled Halton points over ``t_range x [lower, upper]``.

    ``chart`` maps box coordinates to ``P1 x``; the default is
    ``q -> basis_X1 @ q``.  ``accept`` (passed to :meth:`draw`) filters the
    mapped points, drawing more until ``count`` are accepted.
    """

    lower: Sequence[float]
    upper: Sequence[float]
    t_range: tuple = (0.0, 100.0)
    count: int = 10_000
    seed: int = 0
    chart: Callable | None = None

    def draw(self, dae, accept=None, max_rounds: int = 50):
        lo = np.asarray(self.lower, dtype=float)
        hi = np.asarray(self.upper, dtype=float)
        chart = self.chart or _default_chart(dae)
        engine = qmc.Halton(d=1 + lo.size, scramble=True, seed=self.seed)
        out = []
        for _ in range(max_rounds):
            pts = engine.random(self.count)
            for row in pts:
                t = self.t_range[0] + row[0] * (self.t_range[1] - self.t_range[0])
                xp1 = chart(lo + row[1:] * (hi - lo))
                if accept is None or accept(xp1):
                    out.append((float(t), xp1))
                    if len(out) == self.count:
                        return out
        return out


@dataclass(frozen=True)
class GridSampler:
    """Tensor grid over ``t_values x axes[0] x ... x axes[a-1]``."""

    t_values: Sequence[float]
    axes: Sequence[Sequence[float]]
    chart: Callable | None = None

    def draw(self, dae, accept=None):
        chart = self.chart or _default_chart(dae)
        mesh = np.meshgrid(*[np.asarray(a, dtype=float) for a in self.axes], indexing="ij")
        qs = np.stack([m.ravel() for m in mesh], axis=1) if mesh else np.zeros((1, 0))
        out = []
        for t in self.t_values:
            for q in qs:
                xp1 = chart(q)
                if accept is None or accept(xp1):
                    out.append((float(t), xp1))
        return out

    @property
    def count(self):
        return len(self.t_values) * int(np.prod([len(a) for a in self.axes]))


@dataclass(frozen=True)
class RegionSampler:
    """Halton points in ``t_range x region`` through ``region.interior``."""

    region: RegionSpec
    dim: int
    t_range: tuple = (0.0, 100.0)
    count: int = 10_000
    seed: int = 0

    def draw(self, dae, accept=None):
        if self.region.interior is None:
            raise ValueError("region has no interior parameterization")
        engine = qmc.Halton(d=1 + self.dim, scramble=True, seed=self.seed)
        out = []
        for _ in range(50):
            for row in engine.random(self.count):
                t = self.t_range[0] + row[0] * (self.t_range[1] - self.t_range[0])
                xp1 = self.region.interior(row[1:])
                if self.region.contains(xp1) and (accept is None or accept(xp1)):
                    out.append((float(t), xp1))
                    if len(out) == self.count:
                        return out
        return out


# ----------------------------------------------------------------------------
# manifold helpers


def lift_to_manifold(dae: SemilinearDAE, t: float, xp1, starts=DEFAULT_STARTS):
    """Complete ``P1 x`` to a consistent state, trying several Newton starts.

    Returns None when no start converges.
    """
    u = _solve_from_starts(dae, t, dae.Ra @ np.asarray(xp1, dtype=float), starts)
    if u is None:
        return None
    return polish_state(dae, t, dae.assemble(dae.Ra @ np.asarray(xp1, dtype=float), u))


def _solve_from_starts(dae, t, z, starts):
    for s in starts:
        try:
            return dae.stage(t, z, np.full(dae.d, s))[0]
        except ConstraintError:
            continue
    return None


def _batch_F(dae, t, z, grid):
    """Scalar constraint residual on a grid of ``u`` values (``d == 1``).

    Evaluates ``f`` on all columns at once when it accepts an ``(n, N)``
    array, and falls back to a loop otherwise.
    """
    grid = np.asarray(grid, dtype=float)
    X = (dae.Pa @ z)[:, None] + dae.Pd * grid[None, :]
    try:
        Fx = np.asarray(dae.f(t, X), dtype=float)
        if Fx.shape == X.shape:
            return (dae.Nf @ Fx)[0] - grid
    except Exception:
        pass
    return np.array([float(constraint_function(dae, t, z, [u])[0]) for u in grid])


def _batch_dF(dae, t, z, grid):
    """``dF/du`` on a grid of ``u`` values (``d == 1``)."""
    grid = np.asarray(grid, dtype=float)
    X = (dae.Pa @ z)[:, None] + dae.Pd * grid[None, :]
    try:
        J = np.asarray(dae.jac_f(t, X), dtype=float)
        if J.shape == (dae.n, dae.n, grid.size):
            return np.einsum("i,ijk,j->k", dae.Nf[0], J, dae.Pd[:, 0]) - 1.0
    except Exception:
        pass
    return np.array([float(constraint_jacobian(dae, t, z, [u])[0, 0]) for u in grid])


def find_constraint_roots(dae: SemilinearDAE, t: float, z, u_range=(-10.0, 10.0),
                          scan_points: int = 801, starts=DEFAULT_STARTS) -> list:
    """All roots of the scalar constraint ``F(t, z, .)`` found by a sign-change scan.

    Only for ``d == 1``.  Newton roots from ``starts`` supplement the scan, so
    roots outside ``u_range`` are not missed entirely.
    """
    if dae.d != 1:
        raise ValueError("scalar root scan needs d == 1")
    F = lambda u: float(constraint_function(dae, t, z, [u])[0])
    grid = np.linspace(u_range[0], u_range[1], scan_points)
    vals = _batch_F(dae, t, z, grid)
    ok = np.isfinite(vals[:-1]) & np.isfinite(vals[1:])
    roots = list(grid[vals == 0.0])
    for i in np.nonzero(ok & (vals[:-1] * vals[1:] < 0))[0]:
        roots.append(brentq(F, grid[i], grid[i + 1], xtol=1e-14, rtol=4 * np.finfo(float).eps))
    for s in starts:
        try:
            roots.append(float(dae.stage(t, z, np.array([s]))[0][0]))
        except ConstraintError:
            pass
    roots.sort()
    merged = []
    for r in roots:
        if not merged or abs(r - merged[-1]) > 1e-8 * (1.0 + abs(r)):
            merged.append(r)
    return merged


def _validate_H(dae: SemilinearDAE, H):
    H = np.asarray(H, dtype=float)
    if H.shape not in ((dae.n, dae.n), (dae.a, dae.a)):
        raise InvalidH(f"H must be {dae.n}x{dae.n} or {dae.a}x{dae.a}, got {H.shape}")
    if not np.allclose(H, H.T, rtol=1e-12, atol=1e-12 * max(1.0, np.abs(H).max())):
        raise InvalidH("H is not symmetric")
    if np.linalg.eigvalsh(H).min() <= 0:
        raise InvalidH("H is not positive definite")
    return H


def dissipation_lhs(dae: SemilinearDAE, H, t, x):
    """``(H P1 x, G^{-1}[-B P1 x + Q1 f(t, x)])`` and ``v = (H P1 x, P1 x) / 2``.

    An ``a x a`` matrix ``H`` acts on the coordinates ``z`` instead.
    """
    x = np.asarray(x, dtype=float)
    dx = dae.derivative_P1x(t, x)
    if H.shape[0] == dae.n:
        xp1 = dae.dec.P1 @ x
        return float((H @ xp1) @ dx), 0.5 * float((H @ xp1) @ xp1)
    z = dae.Ra @ x
    dz = dae.Ra @ dx
    return float((H @ z) @ dz), 0.5 * float((H @ z) @ z)


def _witness(t, x, **extra):
    w = {"t": float(t), "x": np.asarray(x, dtype=float).tolist()}
    w.update(extra)
    return w


# ----------------------------------------------------------------------------
# checks


def check_constraint_solvability(dae: SemilinearDAE, sampler, starts=DEFAULT_STARTS,
                                 scan_range=(-1e3, 1e3)) -> CertificateEntry:
    """For every sampled ``(t, P1 x)`` look for ``P2 x`` putting the state on the manifold.

    Newton runs from each start; for ``d == 1`` a sign-change scan over
    ``scan_range`` follows.  A point with no root found makes the entry
    ``Inconclusive``: failing to find a root does not prove there is none.
    """
    pts = sampler.draw(dae)
    if dae.d == 0:
        return CertificateEntry("constraint_solvability", len(pts), Verdict.NOT_FALSIFIED,
                                details={"note": "d = 0, no constraint"})
    misses = []
    worst_res = 0.0
    top = max(abs(scan_range[0]), abs(scan_range[1]), 1.0)
    mags = np.logspace(-3, np.log10(top), 200)
    fallback = np.concatenate([-mags[::-1], [0.0], mags])
    fallback = fallback[(fallback >= scan_range[0]) & (fallback <= scan_range[1])]
    for t, xp1 in pts:
        z = dae.Ra @ xp1
        u = _solve_from_starts(dae, t, z, starts)
        if u is None and dae.d == 1:
            F = lambda v: float(constraint_function(dae, t, z, [v])[0])
            vals = _batch_F(dae, t, z, fallback)
            sign = np.nonzero(np.isfinite(vals[:-1]) & np.isfinite(vals[1:]) & (vals[:-1] * vals[1:] <= 0))[0]
            if sign.size:
                i = sign[0]
                u = np.array([brentq(F, fallback[i], fallback[i + 1], xtol=1e-14)])
        if u is None:
            misses.append((t, xp1))
            continue
        worst_res = max(worst_res, float(np.linalg.norm(constraint_function(dae, t, z, u))))
    if misses:
        t, xp1 = misses[0]
        return CertificateEntry(
            "constraint_solvability", len(pts), Verdict.INCONCLUSIVE,
            witness={"t": float(t), "x_p1": np.asarray(xp1).tolist(), "starts": list(starts)},
            details={"points_without_root": len(misses), "max_residual": worst_res})
    return CertificateEntry("constraint_solvability", len(pts), Verdict.NOT_FALSIFIED,
                            details={"max_residual": worst_res})


def check_basis_invertibility(dae: SemilinearDAE, sampler, u_range=(-10.0, 10.0),
                              scan_points: int = 801, hull_samples: int = 16,
                              seed: int = 0, zero_tol: float = 1e-10,
                              mode: str = "hull") -> CertificateEntry:
    """Sample the basis invertibility of ``Phi`` on hulls between constraint roots.

    The test runs on ``dF/du = P_d^{-1} G^{-1} Phi(P_d u) P_d``, which has the
    same singular points as ``Phi`` restricted to ``X2``.  For ``d == 1`` every
    segment between two roots (and every root) is scanned for a zero of
    ``dF/du``.  For ``d > 1`` random vertex sets ``{w^k}`` in each hull give
    the mixed-row matrix ``Lambda`` (row ``k`` taken at ``w^k``); a vanishing
    or sign-changing ``det Lambda`` falsifies.

    ``mode="range"`` (``d == 1`` only) checks the stronger global condition:
    ``dF/du`` must not vanish anywhere on ``u_range``, roots or not.
    """
    if mode not in ("hull", "range"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "range" and dae.d != 1:
        raise ValueError("range mode needs d == 1")
    if dae.d == 0:
        return CertificateEntry("basis_invertibility", 0, Verdict.NOT_FALSIFIED,
                                details={"note": "d = 0, no constraint"})
    pts = sampler.draw(dae)
    rng = np.random.default_rng(seed)
    worst = math.inf
    for t, xp1 in pts:
        z = dae.Ra @ xp1
        if mode == "range":
            jac = lambda u: float(constraint_jacobian(dae, t, z, [u])[0, 0])
            seg = np.linspace(u_range[0], u_range[1], scan_points)
            vals = _batch_dF(dae, t, z, seg)
            worst = min(worst, float(np.abs(vals).min()))
            k = np.nonzero(np.sign(vals[:-1]) * np.sign(vals[1:]) <= 0)[0]
            if k.size:
                a, b = seg[k[0]], seg[k[0] + 1]
                u_star = a if vals[k[0]] == 0 else brentq(jac, a, b, xtol=1e-15)
                return _phi_witness(dae, t, xp1, z, list(u_range), u_star, jac(u_star), len(pts))
        elif dae.d == 1:
            jac = lambda u: float(constraint_jacobian(dae, t, z, [u])[0, 0])
            roots = find_constraint_roots(dae, t, z, u_range, scan_points)
            for i, r1 in enumerate(roots):
                j1 = jac(r1)
                worst = min(worst, abs(j1))
                if abs(j1) <= zero_tol:
                    return _phi_witness(dae, t, xp1, z, [r1, r1], r1, j1, len(pts))
                for r2 in roots[i + 1:]:
                    seg = np.linspace(r1, r2, 257)
                    vals = _batch_dF(dae, t, z, seg)
                    worst = min(worst, float(np.abs(vals).min()))
                    k = np.nonzero(np.sign(vals[:-1]) * np.sign(vals[1:]) <= 0)[0]
                    if k.size:
                        a, b = seg[k[0]], seg[k[0] + 1]
                        u_star = a if vals[k[0]] == 0 else brentq(jac, a, b, xtol=1e-15)
                        return _phi_witness(dae, t, xp1, z, [r1, r2], u_star, jac(u_star), len(pts))
            if not roots:
                continue
        else:
            roots = []
            for s in DEFAULT_STARTS:
                try:
                    u = dae.stage(t, z, np.full(dae.d, s))[0]
                except ConstraintError:
                    continue
                if not any(np.linalg.norm(u - r) <= 1e-8 * (1 + np.linalg.norm(u)) for r in roots):
                    roots.append(u)
            for i, r1 in enumerate(roots):
                for r2 in roots[i:]:
                    dets = []
                    for _ in range(hull_samples):
                        s = rng.uniform(size=dae.d)
                        W = [r1 + sk * (r2 - r1) for sk in s]
                        Lam = np.array([constraint_jacobian(dae, t, z, w)[k] for k, w in enumerate(W)])
                        det = float(np.linalg.det(Lam))
                        dets.append(det)
                        worst = min(worst, abs(det))
                        if abs(det) <= zero_tol or (dets and np.sign(det) != np.sign(dets[0])):
                            return CertificateEntry(
                                "basis_invertibility", len(pts), Verdict.FALSIFIED, abs(det),
                                witness={"t": float(t), "x_p1": np.asarray(xp1).tolist(),
                                         "u_hull": [r1.tolist(), r2.tolist()],
                                         "vertices": [w.tolist() for w in W], "det": det})
    return CertificateEntry("basis_invertibility", len(pts), Verdict.NOT_FALSIFIED,
                            None if worst is math.inf else float(worst),
                            details={"u_range": list(u_range), "mode": mode})


def _phi_witness(dae, t, xp1, z, hull, u_star, value, count):
    x = dae.assemble(z, [u_star])
    return CertificateEntry(
        "basis_invertibility", count, Verdict.FALSIFIED, abs(float(value)),
        witness={"t": float(t), "x_p1": np.asarray(xp1).tolist(), "u_hull": [float(h) for h in hull],
                 "u_star": float(u_star), "dF_du": float(value), "x_star": x.tolist()})


def check_stability_inequality(dae: SemilinearDAE, H, k: GaugeFunction, U: ComparisonFunction,
                               R: float, sampler, require_boundedness: bool = False,
                               accept=None) -> CertificateReport:
    """Sample ``(H P1x, G^{-1}[-B P1x + Q1 f]) <= k(t) U((H P1x, P1x)/2)`` on the manifold.

    Only points with ``||P1 x|| >= R`` are used.  The report also carries the
    analytic divergence of ``int dv/U`` (required) and the declared
    finiteness of ``int k dt`` (required only with ``require_boundedness``).
    """
    H = _validate_H(dae, H)
    if U.alpha is None:
        raise ValueError("stability check needs a fixed alpha")

    def keep(xp1):
        return np.linalg.norm(xp1) >= R and (accept is None or accept(xp1))

    pts = sampler.draw(dae, accept=keep)
    worst, wit, lifted, misses = math.inf, None, 0, 0
    smallest_violating = math.inf
    for t, xp1 in pts:
        x = lift_to_manifold(dae, t, xp1)
        if x is None:
            misses += 1
            continue
        lifted += 1
        lhs, v = dissipation_lhs(dae, H, t, x)
        rhs = k(t) * U(v)
        margin = rhs - lhs
        if margin < 0:
            smallest_violating = min(smallest_violating, float(np.linalg.norm(dae.dec.P1 @ x)))
        if margin < worst:
            worst, wit = margin, _witness(t, x, lhs=lhs, rhs=rhs, v=v)
    tol = 1e-12
    if lifted == 0:
        verdict = Verdict.INCONCLUSIVE
    elif worst < -tol * max(1.0, abs(wit["lhs"])):
        verdict = Verdict.FALSIFIED
    else:
        verdict = Verdict.NOT_FALSIFIED
    ineq = CertificateEntry(
        "stability_inequality", lifted, verdict, None if wit is None else float(worst),
        witness=wit if verdict is Verdict.FALSIFIED else None,
        details={"R": R, "unlifted_points": misses,
                 "smallest_violating_norm_P1x": smallest_violating, "k": k.to_dict(), "U": U.to_dict()})
    comp = CertificateEntry(
        "comparison_integral_diverges", 0,
        Verdict.NOT_FALSIFIED if U.integral_diverges else Verdict.FALSIFIED,
        details={"U": U.to_dict()})
    if k.integral_finite_declared is True:
        kv = Verdict.NOT_FALSIFIED
    elif k.integral_finite_declared is False:
        kv = Verdict.FALSIFIED
    else:
        kv = Verdict.INCONCLUSIVE
    gauge = CertificateEntry("gauge_integral_finite", 0, kv, details={"k": k.to_dict()},
                             required=require_boundedness)
    return CertificateReport("stability inequality", [ineq, comp, gauge])


def check_boundedness_condition(dae: SemilinearDAE, u_tilde, M: float, sampler) -> CertificateEntry:
    """Observed ``sup ||Q2 f(t, P1x + P_d u~)||`` over samples with ``||P1 x|| <= M``.

    The supremum over all ``t >= 0`` is the user's analytic declaration; this
    reports what the probe horizon shows.
    """
    pts = sampler.draw(dae, accept=lambda xp1: np.linalg.norm(xp1) <= M)
    xp2 = dae.Pd @ np.asarray(u_tilde, dtype=float).reshape(dae.d)
    sup = 0.0
    for t, xp1 in pts:
        sup = max(sup, float(np.linalg.norm(dae.dec.Q2 @ np.asarray(dae.f(t, xp1 + xp2)))))
    verdict = Verdict.NOT_FALSIFIED if math.isfinite(sup) else Verdict.FALSIFIED
    return CertificateEntry("boundedness_condition", len(pts), verdict, details={"observed_sup": sup, "M": M},
                            required=False)


def check_instability_conditions(dae: SemilinearDAE, H, k: GaugeFunction, U: ComparisonFunction,
                                 region: RegionSpec, sampler, boundary_samples: int = 500,
                                 t_range=(0.0, 100.0), seed: int = 0) -> CertificateReport:
    """Sample the sufficient conditions for a finite escape time from ``region``.

    Entries: the reversed inequality ``lhs >= k(t) U(v)`` on
    ``L0 & {P1x in region}``, inward flow on every boundary patch, and the
    analytic integral flags (``int dv/U`` finite, ``int k dt`` divergent).
    A power ``U`` with ``alpha=None`` is calibrated as the smallest sampled
    ratio ``lhs / (k(t) v^p)``; the calibration fails if that ratio is not
    positive.
    """
    if not region.excludes_origin or region.contains(np.zeros(dae.n)):
        raise InvalidRegion("the region must exclude P1 x = 0")
    H = _validate_H(dae, H)
    pts = sampler.draw(dae, accept=region.contains)
    evals, misses = [], 0
    for t, xp1 in pts:
        x = lift_to_manifold(dae, t, xp1)
        if x is None:
            misses += 1
            continue
        lhs, v = dissipation_lhs(dae, H, t, x)
        evals.append((t, x, lhs, v, k(t)))

    details = {"unlifted_points": misses}
    if U.alpha is None:
        ratios = [lhs / (kt * U.shape(v)) if kt * U.shape(v) > 0 else -math.inf
                  for t, x, lhs, v, kt in evals]
        i = int(np.argmin(ratios)) if ratios else 0
        alpha = ratios[i] if ratios else -math.inf
        details["calibrated_alpha"] = alpha
        if not alpha > 0:
            t, x, lhs, v, kt = evals[i] if evals else (0.0, np.zeros(dae.n), 0.0, 0.0, 0.0)
            rev = CertificateEntry("reversed_inequality", len(evals), Verdict.FALSIFIED, float(alpha),
                                   witness=_witness(t, x, lhs=lhs, v=v, k=kt), details=details)
            U_used = None
        else:
            U_used = U.with_alpha(alpha)
    else:
        U_used = U
    if U_used is not None:
        worst, wit = math.inf, None
        for t, x, lhs, v, kt in evals:
            margin = lhs - kt * U_used(v)
            if margin < worst:
                worst, wit = margin, _witness(t, x, lhs=lhs, rhs=kt * U_used(v), v=v)
        if not evals:
            verdict = Verdict.INCONCLUSIVE
        elif worst < -1e-9 * max(1.0, abs(wit["lhs"])):
            verdict = Verdict.FALSIFIED
        else:
            verdict = Verdict.NOT_FALSIFIED
        details["U"] = U_used.to_dict()
        rev = CertificateEntry("reversed_inequality", len(evals), verdict,
                               None if wit is None else float(worst),
                               witness=wit if verdict is Verdict.FALSIFIED else None, details=details)

    inv = _check_invariance(dae, region, boundary_samples, t_range, seed)
    comp = CertificateEntry("comparison_integral_converges", 0,
                            Verdict.FALSIFIED if U.integral_diverges else Verdict.NOT_FALSIFIED,
                            details={"U": U.to_dict()})
    if k.integral_finite_declared is False:
        kv = Verdict.NOT_FALSIFIED
    elif k.integral_finite_declared is True:
        kv = Verdict.FALSIFIED
    else:
        kv = Verdict.INCONCLUSIVE
    gauge = CertificateEntry("gauge_integral_diverges", 0, kv, details={"k": k.to_dict()})
    return CertificateReport("instability conditions", [rev, inv, comp, gauge])


def _check_invariance(dae, region, boundary_samples, t_range, seed):
    if not region.boundary_patches:
        return CertificateEntry("region_invariance", 0, Verdict.INCONCLUSIVE,
                                details={"note": "no boundary patches supplied"})
    engine = qmc.Halton(d=2, scramble=True, seed=seed)
    worst, wit, count, misses = math.inf, None, 0, 0
    per_patch = {}
    for patch in region.boundary_patches:
        pw = math.inf
        for s_t, s in engine.random(boundary_samples):
            t = t_range[0] + s_t * (t_range[1] - t_range[0])
            x = lift_to_manifold(dae, t, patch.point(float(s)))
            if x is None:
                misses += 1
                continue
            count += 1
            rate = float(np.asarray(patch.grad(x)) @ dae.derivative_P1x(t, x))
            margin = -rate
            pw = min(pw, margin)
            if margin < worst:
                worst, wit = margin, _witness(t, x, patch=patch.name, level_rate=rate)
        per_patch[patch.name] = pw
    verdict = Verdict.NOT_FALSIFIED if worst > 0 else Verdict.FALSIFIED
    if count == 0:
        verdict = Verdict.INCONCLUSIVE
    return CertificateEntry("region_invariance", count, verdict, float(worst),
                            witness=wit if verdict is Verdict.FALSIFIED else None,
                            details={"per_patch_worst_margin": per_patch, "unlifted_points": misses})


def stability_certificate(dae, H, k, U, R, sampler, require_boundedness=False, **kw) -> CertificateReport:
    """Constraint solvability, basis invertibility and the stability inequality in one report."""
    rep = CertificateReport("Lagrange stability certificate")
    rep.entries.append(check_constraint_solvability(dae, sampler))
    rep.entries.append(check_basis_invertibility(dae, sampler, **kw))
    rep.extend(check_stability_inequality(dae, H, k, U, R, sampler, require_boundedness))
    return rep


def instability_certificate(dae, H, k, U, region, sampler, **kw) -> CertificateReport:
    rep = CertificateReport("Lagrange instability certificate")
    rep.entries.append(check_constraint_solvability(dae, sampler))
    rep.entries.append(check_basis_invertibility(dae, sampler))
    rep.extend(check_instability_conditions(dae, H, k, U, region, sampler, **kw))
    return rep
