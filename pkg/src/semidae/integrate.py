"""Adaptive integration of the reduced system with constraint enforcement.

The differential coordinate ``z`` advances with the Dormand-Prince 5(4)
pair; every stage solves the algebraic constraint for ``u`` (continuing from
the last accepted value), so each stage evaluation is a point of the
consistency manifold.
"""
from __future__ import annotations

import io
import json
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from .dae import (ConstraintError, InconsistentInitialValue, SemilinearDAE, manifold_residual,
                  newton_tolerance, polish_state)

__all__ = [
    "IntegrationOptions",
    "Completed",
    "EscapeDetected",
    "SolverFailure",
    "Trajectory",
    "integrate",
    "max_norm",
    "fit_escape_time",
    "dae_residuals",
    "DESIGN_ORDER",
]

DESIGN_ORDER = 5

# Dormand-Prince 5(4) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_E = _B5 - _B4

_SAFETY = 0.9
_FAC_MIN, _FAC_MAX = 0.2, 5.0
_ESCAPE_WINDOW = 10


@dataclass(frozen=True)
class IntegrationOptions:
    t_end: float
    h_init: float = 1e-3
    h_min: float = 1e-14
    h_max: float = math.inf
    rel_tol: float = 1e-8
    abs_tol: float = 1e-10
    escape_norm: float = 1e6
    record_every: int = 1
    max_steps: int = 2_000_000

    def __post_init__(self):
        if not 0 < self.h_min <= self.h_init <= self.h_max:
            raise ValueError("need 0 < h_min <= h_init <= h_max")
        if not (self.rel_tol > 0 and self.abs_tol > 0):
            raise ValueError("tolerances must be positive")
        if not self.escape_norm > 0:
            raise ValueError("escape_norm must be positive")
        if int(self.record_every) != self.record_every or self.record_every < 1:
            raise ValueError("record_every must be a positive integer")

    def replace(self, **kw) -> "IntegrationOptions":
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d.update(kw)
        return IntegrationOptions(**d)


@dataclass(frozen=True)
class Completed:
    kind = "Completed"

    def to_dict(self):
        return {"kind": self.kind}


@dataclass(frozen=True)
class EscapeDetected:
    """Blow-up detected.

    ``[T_lower, T_upper]`` is the accepted step in which ``||x||`` crossed the
    escape threshold; ``T_estimate`` extrapolates the blow-up time from a fit
    ``||x|| ~ c (T - t)**(-p)``.
    """

    T_estimate: float
    T_lower: float
    T_upper: float
    exponent: float
    fit_residual: float
    trigger: str
    kind = "EscapeDetected"

    def to_dict(self):
        return {"kind": self.kind, "T_estimate": self.T_estimate, "T_lower": self.T_lower,
                "T_upper": self.T_upper, "exponent": self.exponent, "fit_residual": self.fit_residual,
                "trigger": self.trigger}


@dataclass(frozen=True)
class SolverFailure:
    t_fail: float
    reason: str
    kind = "SolverFailure"

    def to_dict(self):
        return {"kind": self.kind, "t_fail": self.t_fail, "reason": self.reason}


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    constraint_residuals: np.ndarray
    dae_residuals: np.ndarray
    step_sizes: np.ndarray
    status: object
    stats: dict = field(default_factory=dict)

    @property
    def norms(self) -> np.ndarray:
        return np.linalg.norm(self.states, axis=1)

    @property
    def escaped(self) -> bool:
        return isinstance(self.status, EscapeDetected)

    @property
    def completed(self) -> bool:
        return isinstance(self.status, Completed)

    def summary(self) -> dict:
        finite = self.dae_residuals[np.isfinite(self.dae_residuals)]
        return {
            "status": self.status.to_dict(),
            "t_final": float(self.times[-1]),
            "max_norm": max_norm(self),
            "final_state": self.states[-1].tolist(),
            "samples": int(self.times.size),
            "max_constraint_residual": float(self.constraint_residuals.max()),
            "max_dae_residual": float(finite.max()) if finite.size else None,
            **self.stats,
        }

    def csv_text(self) -> str:
        n = self.states.shape[1]
        buf = io.StringIO()
        buf.write(",".join(["t", *[f"x{i + 1}" for i in range(n)],
                            "constraint_residual", "dae_residual", "step_size"]) + "\n")
        for i in range(self.times.size):
            row = [self.times[i], *self.states[i], self.constraint_residuals[i],
                   self.dae_residuals[i], self.step_sizes[i]]
            buf.write(",".join(f"{v:.17g}" for v in row) + "\n")
        buf.write("# status " + json.dumps(self.status.to_dict(), sort_keys=True) + "\n")
        return buf.getvalue()

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            fh.write(self.csv_text())


def max_norm(traj: Trajectory) -> float:
    """Largest Euclidean norm over the recorded states."""
    if traj.times.size == 0:
        raise ValueError("empty trajectory")
    return float(traj.norms.max())


def fit_escape_time(ts, norms):
    """Fit ``log||x|| = log c - p log(T - t)`` and return ``(T, p, rms residual)``.

    For fixed ``T`` the fit is linear in ``(log c, p)``; ``T`` itself is found
    by a bounded scalar search on ``log(T - t_last)``.
    """
    ts = np.asarray(ts, dtype=float)
    y = np.log(np.asarray(norms, dtype=float))
    t_last = ts[-1]
    span = max(ts[-1] - ts[0], 1e-300)

    def lsq(s):
        T = t_last + math.exp(s)
        M = np.column_stack([np.ones_like(ts), -np.log(T - ts)])
        coef, *_ = np.linalg.lstsq(M, y, rcond=None)
        res = y - M @ coef
        return float(np.sqrt(np.mean(res ** 2))), coef

    lo, hi = math.log(span * 1e-6), math.log(span * 1e3)
    best = minimize_scalar(lambda s: lsq(s)[0], bounds=(lo, hi), method="bounded",
                           options={"xatol": 1e-10})
    rms, coef = lsq(best.x)
    return float(t_last + math.exp(best.x)), float(coef[1]), rms


def _fd_weights(offsets, order=1):
    """Finite-difference weights for the ``order``-th derivative at offset 0."""
    k = len(offsets)
    scale = max(np.abs(offsets).max(), 1e-300)
    s = np.asarray(offsets) / scale
    V = np.vander(s, k, increasing=True).T
    rhs = np.zeros(k)
    rhs[order] = math.factorial(order)
    return np.linalg.solve(V, rhs) / scale ** order


def dae_residuals(dae: SemilinearDAE, times, states, stencil: int = 7) -> np.ndarray:
    """``||d/dt(A x) + B x - f(t, x)||`` with ``d/dt`` from a ``stencil``-point difference.

    The stencil is centred where possible and one-sided near the ends; with
    7 points its truncation error is of sixth order, below the integrator's
    own error.  Fewer samples than points give NaN.
    """
    times = np.asarray(times, dtype=float)
    N = times.size
    out = np.full(N, np.nan)
    if N < stencil:
        return out
    Ax = states @ dae.A.T
    half = stencil // 2
    for i in range(N):
        lo = min(max(i - half, 0), N - stencil)
        idx = slice(lo, lo + stencil)
        w = _fd_weights(times[idx] - times[i])
        dAx = w @ Ax[idx]
        out[i] = np.linalg.norm(dAx + dae.B @ states[i] - np.asarray(dae.f(times[i], states[i])))
    return out


class _StepFailure(Exception):
    pass


def integrate(dae: SemilinearDAE, t0: float, x0, opts: IntegrationOptions, u_guess=None) -> Trajectory:
    """Integrate from a consistent ``x0`` at ``t0`` up to ``opts.t_end``.

    Constraint solver failures inside a step halve the step; once ``h``
    would drop below ``h_min`` the run ends with :class:`SolverFailure`.
    """
    x0 = np.asarray(x0, dtype=float)
    z, u = dae.split(x0)
    res0 = float(np.linalg.norm(manifold_residual(dae, t0, x0)))
    if res0 > 10 * newton_tolerance(z):
        raise InconsistentInitialValue(f"initial value is off the manifold (residual {res0:.3g})")
    if u_guess is not None:
        u = np.asarray(u_guess, dtype=float).reshape(dae.d)

    t = float(t0)
    try:
        u, k1 = dae.stage(t, z, u)
    except ConstraintError as exc:
        return _finish(dae, [t], [x0], [0.0], SolverFailure(t, f"constraint at t0: {exc}"), {})

    rec_t, rec_x, rec_h = [t], [polish_state(dae, t, dae.assemble(z, u))], [0.0]
    window = deque(maxlen=_ESCAPE_WINDOW + 1)
    window.append((t, float(np.linalg.norm(rec_x[0]))))
    h = min(opts.h_init, opts.h_max)
    accepted = rejected = constraint_retries = 0
    forced_streak = 0
    h_used_min, h_used_max = math.inf, 0.0
    status = Completed()
    direction_end = opts.t_end

    while t < direction_end:
        if accepted >= opts.max_steps:
            status = SolverFailure(t, "maximum number of steps reached")
            break
        last = False
        # absorb a rounding-sized remainder into the final step
        if t + h * (1.0 + 1e-8) >= direction_end:
            h = direction_end - t
            last = True
        forced = h <= opts.h_min
        try:
            z_new, u_new, k7, err = _dp_step(dae, t, z, u, k1, h, opts)
        except _StepFailure as exc:
            constraint_retries += 1
            if h * 0.5 < opts.h_min:
                status = SolverFailure(t, f"constraint solve failed with h at h_min: {exc}")
                break
            h *= 0.5
            continue
        if err > 1.0 and not forced:
            rejected += 1
            h = max(h * max(_FAC_MIN, _SAFETY * err ** (-1 / DESIGN_ORDER)), opts.h_min)
            continue

        forced_streak = forced_streak + 1 if forced else 0
        t_prev = t
        t = direction_end if last else t + h
        z, u, k1 = z_new, u_new, k7
        accepted += 1
        h_used_min, h_used_max = min(h_used_min, h), max(h_used_max, h)
        x = dae.assemble(z, u)
        nx = float(np.linalg.norm(x))
        window.append((t, nx))

        if accepted % opts.record_every == 0 or last or nx >= opts.escape_norm:
            rec_t.append(t)
            rec_x.append(polish_state(dae, t, x))
            rec_h.append(h)

        if nx >= opts.escape_norm:
            trigger = None
            norms = [w[1] for w in window]
            if len(norms) == _ESCAPE_WINDOW + 1 and all(b > a for a, b in zip(norms, norms[1:])):
                trigger = "monotone growth"
            elif forced_streak >= 2:
                trigger = "step size at h_min"
            if trigger is not None:
                ts = [w[0] for w in window][-_ESCAPE_WINDOW:]
                T, p, fres = fit_escape_time(ts, norms[-_ESCAPE_WINDOW:])
                status = EscapeDetected(T, t_prev, t, p, fres, trigger)
                break
        elif forced_streak >= 2:
            status = SolverFailure(t, "step size reached h_min below the escape threshold")
            break

        if not np.all(np.isfinite(x)):
            status = SolverFailure(t, "non-finite state")
            break
        fac = _FAC_MAX if err == 0 else min(_FAC_MAX, max(_FAC_MIN, _SAFETY * err ** (-1 / DESIGN_ORDER)))
        h = min(max(h * fac, opts.h_min), opts.h_max)

    stats = {"accepted_steps": accepted, "rejected_steps": rejected,
             "constraint_retries": constraint_retries,
             "h_min_used": None if accepted == 0 else h_used_min,
             "h_max_used": None if accepted == 0 else h_used_max}
    return _finish(dae, rec_t, rec_x, rec_h, status, stats)


def _dp_step(dae, t, z, u, k1, h, opts):
    ks = [k1]
    u_stage = u
    for i in range(1, 7):
        zi = z + h * sum(a * k for a, k in zip(_A[i], ks) if a != 0.0)
        try:
            u_stage, ki = dae.stage(t + _C[i] * h, zi, u)
        except ConstraintError as exc:
            raise _StepFailure(str(exc)) from exc
        if not np.all(np.isfinite(ki)):
            raise _StepFailure("non-finite stage derivative")
        ks.append(ki)
    z_new = zi  # stage 7 sits at (t + h, z5)
    err_vec = h * sum(e * k for e, k in zip(_E, ks) if e != 0.0)
    scale = opts.abs_tol + opts.rel_tol * np.maximum(np.abs(z), np.abs(z_new))
    err = float(np.sqrt(np.mean((err_vec / scale) ** 2))) if z.size else 0.0
    return z_new, u_stage, ks[6], err


def _finish(dae, rec_t, rec_x, rec_h, status, stats):
    times = np.asarray(rec_t, dtype=float)
    states = np.asarray(rec_x, dtype=float).reshape(times.size, dae.n)
    cres = np.array([np.linalg.norm(manifold_residual(dae, t, x)) for t, x in zip(times, states)])
    return Trajectory(times, states, cres, dae_residuals(dae, times, states),
                      np.asarray(rec_h, dtype=float), status, stats)
