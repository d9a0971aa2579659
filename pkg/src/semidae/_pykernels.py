"""Pure-Python circuit stage kernel.

Mirrors ``_ckernels.pyx`` line by line; used when the compiled module is
unavailable or ``SEMIDAE_FORCE_PYTHON`` is set.
"""
import math

NEWTON_MAX_ITER = 50
NEWTON_MAX_HALVINGS = 8
NEWTON_RTOL = 1e-10

OK, NO_CONVERGENCE, SINGULAR, NONFINITE = 0, 1, 2, 3


def _nl(code, alpha, m, y):
    if code == 0:
        return 0.0, 0.0
    if code == 1:
        p = 2 * m - 1
        return alpha * y ** p, alpha * p * y ** (p - 1)
    if code == 2:
        return alpha * math.sin(y), alpha * math.cos(y)
    if code == 3:
        return -y * y, -2.0 * y
    if code == 4:
        return y * y, 2.0 * y
    return y * y * y, 3.0 * y * y


def _source(code, p, t):
    beta, alpha, n, omega, theta, sigma, offset = p
    if code == 0:
        return 0.0
    if code == 1:
        return beta * (t + alpha) ** (-n)
    if code == 2:
        return beta * math.exp(-alpha * t)
    if code == 3:
        return beta * math.exp(-((t - alpha) / sigma) ** 2)
    if code == 4:
        return beta * math.sin(omega * t + theta) + offset
    if code == 5:
        return beta * math.exp(-alpha * t) * math.sin(omega * t + theta) + offset
    return beta * (t + alpha) ** int(n)


class CircuitKernel:
    """Constraint solve plus reduced right-hand side for the filter circuit.

    Arrays are flattened row-major: ``Kz`` (2x2), ``Kf`` (2x3), ``Nf`` (1x3),
    ``Pa`` (3x2), ``Pd`` (3x1).  ``codes/alphas/ms`` describe
    ``phi0, phi, psi, h`` in that order.
    """

    def __init__(self, Kz, Kf, Nf, Pa, Pd, codes, alphas, ms, src_code, src_params):
        self.Kz = [float(v) for v in Kz]
        self.Kf = [float(v) for v in Kf]
        self.Nf = [float(v) for v in Nf]
        self.Pa = [float(v) for v in Pa]
        self.Pd = [float(v) for v in Pd]
        self.codes = [int(c) for c in codes]
        self.alphas = [float(a) for a in alphas]
        self.ms = [int(m) for m in ms]
        self.src_code = int(src_code)
        self.src = tuple(float(v) for v in src_params)

    def source(self, t):
        return _source(self.src_code, self.src, t)

    def _fjac(self, t, x1, x2, x3, want_jac):
        c, a, m = self.codes, self.alphas, self.ms
        f00, d00 = _nl(c[0], a[0], m[0], x1)
        fph, dph = _nl(c[1], a[1], m[1], x3)
        fps, dps = _nl(c[2], a[2], m[2], x1 - x3)
        fh, dh = _nl(c[3], a[3], m[3], x2)
        e = _source(self.src_code, self.src, t)
        f = (e - f00 - fph, -fh, fps - fph)
        if not want_jac:
            return f, None
        # J_f @ Pd, the only Jacobian product Newton needs
        p1, p2, p3 = self.Pd
        jd = (-d00 * p1 - dph * p3, -dh * p2, dps * (p1 - p3) - dph * p3)
        return f, jd

    def stage(self, t, z1, z2, u):
        Pa, Pd, Nf = self.Pa, self.Pd, self.Nf
        b1 = Pa[0] * z1 + Pa[1] * z2
        b2 = Pa[2] * z1 + Pa[3] * z2
        b3 = Pa[4] * z1 + Pa[5] * z2
        tol = NEWTON_RTOL * (1.0 + math.sqrt(z1 * z1 + z2 * z2))

        def F(u):
            f, _ = self._fjac(t, b1 + Pd[0] * u, b2 + Pd[1] * u, b3 + Pd[2] * u, False)
            return Nf[0] * f[0] + Nf[1] * f[1] + Nf[2] * f[2] - u

        def J(u):
            _, jd = self._fjac(t, b1 + Pd[0] * u, b2 + Pd[1] * u, b3 + Pd[2] * u, True)
            return Nf[0] * jd[0] + Nf[1] * jd[1] + Nf[2] * jd[2] - 1.0

        Fu = F(u)
        nF = abs(Fu)
        status = NO_CONVERGENCE
        for _ in range(NEWTON_MAX_ITER):
            if nF <= tol:
                Ju = J(u)
                if Ju == 0.0 or not math.isfinite(Ju):
                    return u, 0.0, 0.0, SINGULAR
                u_pol = u - Fu / Ju
                if abs(F(u_pol)) < nF:
                    u = u_pol
                status = OK
                break
            Ju = J(u)
            if Ju == 0.0 or not math.isfinite(Ju):
                return u, 0.0, 0.0, SINGULAR
            step = Fu / Ju
            lam = 1.0
            for _ in range(NEWTON_MAX_HALVINGS + 1):
                u_try = u - lam * step
                F_try = F(u_try)
                n_try = abs(F_try)
                if math.isfinite(n_try) and n_try < nF:
                    break
                lam *= 0.5
            if not math.isfinite(n_try):
                return u, 0.0, 0.0, NONFINITE
            u, Fu, nF = u_try, F_try, n_try
        else:
            if nF <= tol:
                status = OK
        if status != OK:
            return u, 0.0, 0.0, status
        f, _ = self._fjac(t, b1 + Pd[0] * u, b2 + Pd[1] * u, b3 + Pd[2] * u, False)
        Kz, Kf = self.Kz, self.Kf
        dz1 = Kz[0] * z1 + Kz[1] * z2 + Kf[0] * f[0] + Kf[1] * f[1] + Kf[2] * f[2]
        dz2 = Kz[2] * z1 + Kz[3] * z2 + Kf[3] * f[0] + Kf[4] * f[1] + Kf[5] * f[2]
        return u, dz1, dz2, OK
