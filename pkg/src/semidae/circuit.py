"""Nonlinear radio-filter circuit as a semilinear DAE.

State ``x = (I_L, U_C, I)``.  The model is

    L x1' + x2 + r x3 = e(t) - phi0(x1) - phi(x3)
    C x2' + g x2 - x3 = -h(x2)
           x2 + r x3 = psi(x1 - x3) - phi(x3)
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from .dae import NoConvergence, SemilinearDAE, SingularJacobian, ConstraintError
from .kernels import STATUS_MESSAGES, kernel_class
from .pencil import PencilDecomposition
from .stability import BoundaryPatch, ComparisonFunction, GaugeFunction, RegionSpec

__all__ = [
    "NonlinearitySpec",
    "SourceSpec",
    "CircuitParams",
    "CircuitDAE",
    "UnboundedSource",
    "build_filter_dae",
    "closed_form_decomposition",
    "omega_region",
    "omega_bounds",
    "StabilityPresets",
    "stability_presets",
    "chart_x1x2",
    "chart_ab",
    "power_family",
    "sine_family",
    "instability_family",
]


class UnboundedSource(ValueError):
    pass


_NL_CODES = {"zero": 0, "odd_power": 1, "sine": 2, "neg_square": 3, "square": 4, "cube": 5}


@dataclass(frozen=True)
class NonlinearitySpec:
    """Scalar nonlinearity ``y -> value``.

    ``odd_power`` is ``alpha * y**(2m - 1)`` and ``sine`` is
    ``alpha * sin(y)``; the remaining kinds take no parameters.
    """

    kind: str = "zero"
    alpha: float = 1.0
    m: int = 1

    def __post_init__(self):
        if self.kind not in _NL_CODES:
            raise ValueError(f"unknown nonlinearity kind {self.kind!r}")
        if self.kind == "odd_power" and (int(self.m) != self.m or self.m < 1):
            raise ValueError("odd_power needs an integer m >= 1")
        if not math.isfinite(self.alpha):
            raise ValueError("alpha must be finite")

    @property
    def code(self) -> int:
        return _NL_CODES[self.kind]

    def value(self, y):
        k = self.kind
        if k == "zero":
            return 0.0 * y
        if k == "odd_power":
            return self.alpha * y ** (2 * self.m - 1)
        if k == "sine":
            return self.alpha * np.sin(y)
        if k == "neg_square":
            return -y * y
        if k == "square":
            return y * y
        return y * y * y

    def deriv(self, y):
        k = self.kind
        if k == "zero":
            return 0.0 * y
        if k == "odd_power":
            p = 2 * self.m - 1
            return self.alpha * p * y ** (p - 1)
        if k == "sine":
            return self.alpha * np.cos(y)
        if k == "neg_square":
            return -2.0 * y
        if k == "square":
            return 2.0 * y
        return 3.0 * y * y

    @property
    def bound(self) -> float:
        """``sup |value|``; infinite for the unbounded kinds."""
        if self.kind == "zero":
            return 0.0
        if self.kind == "sine":
            return abs(self.alpha)
        return math.inf


_SRC_CODES = {"zero": 0, "power_decay": 1, "exp_decay": 2, "gaussian": 3, "sinusoid": 4,
              "damped_sinusoid": 5, "power_growth": 6}


@dataclass(frozen=True)
class SourceSpec:
    """Input voltage ``e(t)``.

    ============== ==========================================
    power_decay    ``beta (t + alpha)**(-n)``, ``alpha > 0``
    exp_decay      ``beta exp(-alpha t)``
    gaussian       ``beta exp(-(t - alpha)**2 / sigma**2)``
    sinusoid       ``beta sin(omega t + theta) + offset``
    damped_sinusoid ``beta exp(-alpha t) sin(omega t + theta) + offset``
    power_growth   ``beta (t + alpha)**n``, integer ``n``
    zero           ``0``
    ============== ==========================================
    """

    kind: str = "zero"
    beta: float = 1.0
    alpha: float = 0.0
    n: float = 1
    omega: float = 1.0
    theta: float = 0.0
    sigma: float = 1.0
    offset: float = 0.0

    def __post_init__(self):
        if self.kind not in _SRC_CODES:
            raise ValueError(f"unknown source kind {self.kind!r}")
        if self.kind == "power_decay" and not (self.alpha > 0 and self.n > 0):
            raise ValueError("power_decay needs alpha > 0 and n > 0")
        if self.kind in ("sinusoid", "damped_sinusoid") and not 0.0 <= self.theta <= 2 * math.pi:
            raise ValueError("theta must lie in [0, 2 pi]")
        if self.kind == "gaussian" and self.sigma == 0:
            raise ValueError("gaussian needs sigma != 0")
        if self.kind == "power_growth" and (int(self.n) != self.n or self.n < 0):
            raise ValueError("power_growth needs a non-negative integer n")

    @property
    def code(self) -> int:
        return _SRC_CODES[self.kind]

    @property
    def params(self):
        return (self.beta, self.alpha, float(self.n), self.omega, self.theta, self.sigma, self.offset)

    def __call__(self, t):
        b, a, n = self.beta, self.alpha, self.n
        k = self.kind
        if k == "zero":
            return 0.0 * t
        if k == "power_decay":
            return b * (t + a) ** (-n)
        if k == "exp_decay":
            return b * np.exp(-a * t)
        if k == "gaussian":
            return b * np.exp(-((t - a) / self.sigma) ** 2)
        if k == "sinusoid":
            return b * np.sin(self.omega * t + self.theta) + self.offset
        if k == "damped_sinusoid":
            return b * np.exp(-a * t) * np.sin(self.omega * t + self.theta) + self.offset
        return b * (t + a) ** int(n)

    def sup_abs(self) -> float:
        """``M_e = sup_{t >= 0} |e(t)|`` (``inf`` when unbounded)."""
        b, a, k = abs(self.beta), self.alpha, self.kind
        if k == "zero":
            return 0.0
        if b == 0.0:
            return abs(self.offset) if k in ("sinusoid", "damped_sinusoid") else 0.0
        if k == "power_decay":
            return b * a ** (-self.n)
        if k == "exp_decay":
            return b if a >= 0 else math.inf
        if k == "gaussian":
            return b * math.exp(-((max(a, 0.0) - a) / self.sigma) ** 2)
        if k == "sinusoid":
            if self.omega == 0.0:
                return abs(self.beta * math.sin(self.theta) + self.offset)
            return b + abs(self.offset)
        if k == "damped_sinusoid":
            if a < 0:
                return math.inf
            if a == 0:
                return b + abs(self.offset) if self.omega else abs(self.beta * math.sin(self.theta) + self.offset)
            return self._damped_sup()
        return math.inf if self.n > 0 else b  # power_growth

    def _damped_sup(self) -> float:
        # The envelope decays, so the sup sits within a few decay scales.
        scale = 1.0 / self.alpha
        period = 2 * math.pi / abs(self.omega) if self.omega else scale
        ts = np.linspace(0.0, 40.0 * max(scale, period), 200_001)
        vals = np.abs(self(ts))
        i = int(np.argmax(vals))
        best = float(vals[i])
        if i == 0:
            # A limit approached from the right, or the value at t = 0.
            return max(best, abs(self.offset))
        lo, hi = ts[max(i - 1, 0)], ts[min(i + 1, ts.size - 1)]
        res = minimize_scalar(lambda t: -abs(self(t)), bounds=(lo, hi), method="bounded",
                              options={"xatol": 1e-13})
        return max(best, -float(res.fun), abs(self.offset))

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class CircuitParams:
    L: float
    C: float
    r: float
    g: float
    phi0: NonlinearitySpec = field(default_factory=NonlinearitySpec)
    phi: NonlinearitySpec = field(default_factory=NonlinearitySpec)
    psi: NonlinearitySpec = field(default_factory=NonlinearitySpec)
    h: NonlinearitySpec = field(default_factory=NonlinearitySpec)
    source: SourceSpec = field(default_factory=SourceSpec)

    def __post_init__(self):
        for name in ("L", "C", "r", "g"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be positive and finite, got {v!r}")

    def pencil_matrices(self):
        A = np.diag([self.L, self.C, 0.0])
        B = np.array([[0.0, 1.0, self.r], [0.0, self.g, -1.0], [0.0, 1.0, self.r]])
        return A, B

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "CircuitParams":
        d = dict(d)
        kw = {k: float(d.pop(k)) for k in ("L", "C", "r", "g")}
        for name in ("phi0", "phi", "psi", "h"):
            spec = d.pop(name, {"kind": "zero"})
            kw[name] = NonlinearitySpec(**spec) if isinstance(spec, dict) else spec
        src = d.pop("source", {"kind": "zero"})
        kw["source"] = SourceSpec(**src) if isinstance(src, dict) else src
        if d:
            raise ValueError(f"unknown circuit parameters: {sorted(d)}")
        return cls(**kw)


def power_family(alphas=(1.0, 1.0, 1.0, 1.0), exps=(2, 2, 2, 2)):
    """``(phi0, phi, psi, h)`` as ``alpha_i y**(2 k_i - 1)``."""
    return tuple(NonlinearitySpec("odd_power", float(a), int(m)) for a, m in zip(alphas, exps))


def sine_family(alphas=(1.0, 1.0, 1.0, 1.0), k: int = 2):
    """``phi0 = alpha1 y**(2k - 1)`` and sines with amplitudes ``alpha2..alpha4``."""
    a1, a2, a3, a4 = (float(a) for a in alphas)
    return (NonlinearitySpec("odd_power", a1, int(k)), NonlinearitySpec("sine", a2),
            NonlinearitySpec("sine", a3), NonlinearitySpec("sine", a4))


def instability_family():
    """``phi0 = -y**2``, ``phi = y**3``, ``psi = y**3``, ``h = y**2``."""
    return (NonlinearitySpec("neg_square"), NonlinearitySpec("cube"),
            NonlinearitySpec("cube"), NonlinearitySpec("square"))


class CircuitDAE(SemilinearDAE):
    """Filter DAE whose stage solve runs in a dedicated scalar kernel.

    ``backend="numpy"`` keeps the generic :class:`SemilinearDAE` path.
    """

    def __init__(self, params: CircuitParams, backend: str = "auto", dec=None):
        self.params = params
        p = params
        A, B = p.pencil_matrices()
        n0, n1, n2, n3, src = p.phi0, p.phi, p.psi, p.h, p.source

        def f(t, x):
            x1, x2, x3 = x
            return np.array([src(t) - n0.value(x1) - n1.value(x3), -n3.value(x2),
                             n2.value(x1 - x3) - n1.value(x3)])

        def jac_f(t, x):
            x1, x2, x3 = x
            d0, d1, d2, d3 = n0.deriv(x1), n1.deriv(x3), n2.deriv(x1 - x3), n3.deriv(x2)
            o = 0.0 * x1  # keeps the shape when x holds a batch of columns
            return np.array([[-d0, o, -d1], [o, -d3, o], [d2, o, -d2 - d1]])

        super().__init__(A, B, f, jac_f, dec=dec)
        self.backend = backend
        if backend == "numpy":
            self.kernel = None
        else:
            cls = kernel_class(backend)
            specs = (n0, n1, n2, n3)
            self.kernel = cls(self.Kz.ravel().tolist(), self.Kf.ravel().tolist(),
                              self.Nf.ravel().tolist(), self.Pa.ravel().tolist(),
                              self.Pd.ravel().tolist(), [s.code for s in specs],
                              [s.alpha for s in specs], [s.m for s in specs], src.code, src.params)

    def stage(self, t, z, u_guess):
        if self.kernel is None:
            return super().stage(t, z, u_guess)
        u, dz1, dz2, status = self.kernel.stage(float(t), float(z[0]), float(z[1]), float(u_guess[0]))
        if status:
            exc = SingularJacobian if status == 2 else NoConvergence
            raise exc(f"{STATUS_MESSAGES[status]} at t={t}")
        return np.array([u]), np.array([dz1, dz2])


def build_filter_dae(p: CircuitParams, backend: str = "auto") -> CircuitDAE:
    return CircuitDAE(p, backend=backend)


def closed_form_decomposition(p: CircuitParams) -> PencilDecomposition:
    """Projectors and ``G^{-1}`` of the filter pencil in closed form."""
    L, C, r = p.L, p.C, p.r
    P1 = np.array([[1.0, 0, 0], [0, 1, 0], [0, -1 / r, 0]])
    P2 = np.array([[0.0, 0, 0], [0, 0, 0], [0, 1 / r, 1]])
    Q1 = np.array([[1.0, 0, -1], [0, 1, 1 / r], [0, 0, 0]])
    Q2 = np.array([[0.0, 0, 1], [0, 0, -1 / r], [0, 0, 1]])
    G_inv = np.array([[1 / L, 0, -1 / L],
                      [0, 1 / C, 1 / (C * r)],
                      [0, -1 / (C * r), (C * r - 1) / (C * r * r)]])
    w = np.array([0.0, 1.0, -1.0 / r])
    basis_X1 = np.column_stack([[1.0, 0, 0], w / np.linalg.norm(w)])
    basis_X2 = np.array([[0.0], [0.0], [1.0]])
    T_inv = np.linalg.inv(np.column_stack([basis_X1, basis_X2]))
    mats = dict(P1=P1, P2=P2, Q1=Q1, Q2=Q2, G_inv=G_inv, basis_X1=basis_X1, basis_X2=basis_X2,
                coords_X1=T_inv[:2], coords_X2=T_inv[2:])
    for m in mats.values():
        m.setflags(write=False)
    return PencilDecomposition(**mats, lambda0=float("nan"),
                               resolvent_bound_report={"source": "closed form"})


# ----------------------------------------------------------------------------
# charts, region, presets


def chart_x1x2(p: CircuitParams):
    """``(x1, x2) -> P1 x = (x1, x2, -x2 / r)``."""
    r = p.r
    return lambda q: np.array([q[0], q[1], -q[1] / r])


def chart_ab(p: CircuitParams):
    """``(a, b) -> P1 x = (a, -r b, b)``."""
    r = p.r
    return lambda q: np.array([q[0], -r * q[1], q[1]])


def omega_bounds(p: CircuitParams):
    """``(m1, m2)`` of the escape region; raises UnboundedSource for infinite ``M_e``."""
    Me = p.source.sup_abs()
    if not math.isfinite(Me):
        raise UnboundedSource("the escape region needs a bounded source")
    L, C, r, g = p.L, p.C, p.r, p.g
    m1 = max(1.0 + math.sqrt(Me), (g + 1.0 / r) ** (1.0 / 3.0), 3.0 * C / L,
             math.sqrt(max(L / (3.0 * r * C) - r / 3.0, 0.0)))
    m2 = max(g - 2.0 * C * r / L, 0.0)
    return m1, m2


def omega_region(p: CircuitParams, x1_extent: float = 5.0, x2_extent: float = 200.0) -> RegionSpec:
    """Region ``x1 > m1, x2 < -r x1 - x1**3 - m2`` in the ``(x1, x2)`` plane.

    The boundary patches are truncated to ``x1 in [m1, m1 + x1_extent]`` and
    ``x2 in [bound - x2_extent, bound]``; ``interior`` maps the unit square
    onto the same truncated box.
    """
    m1, m2 = omega_bounds(p)
    r = p.r
    lift = chart_x1x2(p)
    edge = lambda x1: -r * x1 - x1 ** 3 - m2

    def member(xp1):
        x1, x2 = xp1[0], xp1[1]
        return bool(x1 > m1 and x2 < edge(x1))

    patch_x1 = BoundaryPatch(
        "x1 = m1",
        point=lambda s: lift((m1, edge(m1) - s * x2_extent)),
        level=lambda x: m1 - x[0],
        grad=lambda x: np.array([-1.0, 0.0, 0.0]),
    )
    patch_cubic = BoundaryPatch(
        "x2 = -r x1 - x1^3 - m2",
        point=lambda s: lift((m1 + s * x1_extent, edge(m1 + s * x1_extent))),
        level=lambda x: x[1] + r * x[0] + x[0] ** 3 + m2,
        grad=lambda x: np.array([r + 3.0 * x[0] ** 2, 1.0, 0.0]),
    )

    def interior(s):
        x1 = m1 + s[0] * x1_extent
        return lift((x1, edge(x1) - s[1] * x2_extent))

    return RegionSpec(member, (patch_x1, patch_cubic), True, interior,
                      {"m1": m1, "m2": m2, "M_e": p.source.sup_abs()})


@dataclass(frozen=True)
class StabilityPresets:
    H_stability: np.ndarray
    H_instability: np.ndarray
    k_instability: GaugeFunction
    U_instability: ComparisonFunction
    U_stability: ComparisonFunction
    c0: float | None
    c1: float | None
    R: float

    def k_stability(self, source: SourceSpec, horizon=(0.0, 100.0)) -> GaugeFunction:
        """``k(t) = c0 + c1 |e(t)|``; None when the nonlinearities are unbounded."""
        if self.c0 is None:
            return None
        c0, c1 = self.c0, self.c1
        return GaugeFunction(lambda t: c0 + c1 * abs(float(source(t))), None, horizon,
                             f"{c0:.6g} + {c1:.6g}|e(t)|")


def stability_presets(p: CircuitParams, R: float = 1.0) -> StabilityPresets:
    """Lyapunov weights and gauges for the filter.

    With ``H = diag(2L, Cr, Cr^3)`` the quadratic form is
    ``v = L x1^2 + C r x2^2``.  When ``phi, psi, h`` are bounded and
    ``x1 phi0(x1) >= 0`` the left side is at most
    ``2 (K + |e|)(|x1| + |x2|)`` with ``K = sup|phi| + sup|psi| + r sup|h|``,
    which on ``||P1 x|| >= R`` gives the linear bound ``(c0 + c1 |e|) v``.
    """
    L, C, r = p.L, p.C, p.r
    H5 = np.diag([2 * L, C * r, C * r ** 3])
    H6 = np.diag([2 * L, C, C * r ** 2])
    K = p.phi.bound + p.psi.bound + r * p.h.bound
    dissipative_phi0 = (p.phi0.kind == "odd_power" and p.phi0.alpha > 0) or p.phi0.kind == "zero"
    if math.isfinite(K) and dissipative_phi0:
        scale = 2.0 * math.sqrt(2.0) * math.sqrt(1.0 + r ** -2) / (min(L, C * r) * R)
        c0, c1 = scale * K, scale
    else:
        c0 = c1 = None
    return StabilityPresets(
        H_stability=H5, H_instability=H6,
        k_instability=GaugeFunction.constant(1.0),
        U_instability=ComparisonFunction.power(1.5, alpha=None),
        U_stability=ComparisonFunction.linear(1.0),
        c0=c0, c1=c1, R=R)
