# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled circuit stage kernel; same interface as ``_pykernels``."""
from libc.math cimport sin, cos, exp, pow, fabs, sqrt, isfinite

cdef int NEWTON_MAX_ITER = 50
cdef int NEWTON_MAX_HALVINGS = 8
cdef double NEWTON_RTOL = 1e-10

cdef enum:
    OK = 0
    NO_CONVERGENCE = 1
    SINGULAR = 2
    NONFINITE = 3


cdef inline void _nl(int code, double alpha, int m, double y, double* v, double* dv) noexcept nogil:
    cdef int p
    if code == 0:
        v[0] = 0.0
        dv[0] = 0.0
    elif code == 1:
        p = 2 * m - 1
        v[0] = alpha * pow(y, p)
        dv[0] = alpha * p * pow(y, p - 1)
    elif code == 2:
        v[0] = alpha * sin(y)
        dv[0] = alpha * cos(y)
    elif code == 3:
        v[0] = -y * y
        dv[0] = -2.0 * y
    elif code == 4:
        v[0] = y * y
        dv[0] = 2.0 * y
    else:
        v[0] = y * y * y
        dv[0] = 3.0 * y * y


cdef class CircuitKernel:
    cdef double Kz[4]
    cdef double Kf[6]
    cdef double Nf[3]
    cdef double Pa[6]
    cdef double Pd[3]
    cdef int codes[4]
    cdef double alphas[4]
    cdef int ms[4]
    cdef int src_code
    cdef double src[7]

    def __init__(self, Kz, Kf, Nf, Pa, Pd, codes, alphas, ms, int src_code, src_params):
        cdef int i
        for i in range(4):
            self.Kz[i] = Kz[i]
            self.codes[i] = codes[i]
            self.alphas[i] = alphas[i]
            self.ms[i] = ms[i]
        for i in range(6):
            self.Kf[i] = Kf[i]
            self.Pa[i] = Pa[i]
        for i in range(3):
            self.Nf[i] = Nf[i]
            self.Pd[i] = Pd[i]
        for i in range(7):
            self.src[i] = src_params[i]
        self.src_code = src_code

    cdef double _source(self, double t) noexcept nogil:
        cdef double beta = self.src[0], alpha = self.src[1], n = self.src[2]
        cdef double omega = self.src[3], theta = self.src[4], sigma = self.src[5], off = self.src[6]
        cdef double q
        if self.src_code == 0:
            return 0.0
        if self.src_code == 1:
            return beta * pow(t + alpha, -n)
        if self.src_code == 2:
            return beta * exp(-alpha * t)
        if self.src_code == 3:
            q = (t - alpha) / sigma
            return beta * exp(-q * q)
        if self.src_code == 4:
            return beta * sin(omega * t + theta) + off
        if self.src_code == 5:
            return beta * exp(-alpha * t) * sin(omega * t + theta) + off
        return beta * pow(t + alpha, <int>n)

    def source(self, double t):
        return self._source(t)

    cdef void _f(self, double t, double x1, double x2, double x3, double* f, double* jd, bint want) noexcept nogil:
        cdef double f00, d00, fph, dph, fps, dps, fh, dh
        _nl(self.codes[0], self.alphas[0], self.ms[0], x1, &f00, &d00)
        _nl(self.codes[1], self.alphas[1], self.ms[1], x3, &fph, &dph)
        _nl(self.codes[2], self.alphas[2], self.ms[2], x1 - x3, &fps, &dps)
        _nl(self.codes[3], self.alphas[3], self.ms[3], x2, &fh, &dh)
        f[0] = self._source(t) - f00 - fph
        f[1] = -fh
        f[2] = fps - fph
        if want:
            jd[0] = -d00 * self.Pd[0] - dph * self.Pd[2]
            jd[1] = -dh * self.Pd[1]
            jd[2] = dps * (self.Pd[0] - self.Pd[2]) - dph * self.Pd[2]

    cdef double _F(self, double t, double b1, double b2, double b3, double u) noexcept nogil:
        cdef double f[3]
        cdef double jd[3]
        self._f(t, b1 + self.Pd[0] * u, b2 + self.Pd[1] * u, b3 + self.Pd[2] * u, f, jd, 0)
        return self.Nf[0] * f[0] + self.Nf[1] * f[1] + self.Nf[2] * f[2] - u

    cdef double _J(self, double t, double b1, double b2, double b3, double u) noexcept nogil:
        cdef double f[3]
        cdef double jd[3]
        self._f(t, b1 + self.Pd[0] * u, b2 + self.Pd[1] * u, b3 + self.Pd[2] * u, f, jd, 1)
        return self.Nf[0] * jd[0] + self.Nf[1] * jd[1] + self.Nf[2] * jd[2] - 1.0

    def stage(self, double t, double z1, double z2, double u):
        cdef double b1 = self.Pa[0] * z1 + self.Pa[1] * z2
        cdef double b2 = self.Pa[2] * z1 + self.Pa[3] * z2
        cdef double b3 = self.Pa[4] * z1 + self.Pa[5] * z2
        cdef double tol = NEWTON_RTOL * (1.0 + sqrt(z1 * z1 + z2 * z2))
        cdef double Fu, nF, Ju, step, lam, u_try, F_try, n_try = 0.0, u_pol
        cdef double f[3]
        cdef double jd[3]
        cdef int it, k, status = NO_CONVERGENCE
        cdef double dz1, dz2

        Fu = self._F(t, b1, b2, b3, u)
        nF = fabs(Fu)
        for it in range(NEWTON_MAX_ITER):
            if nF <= tol:
                Ju = self._J(t, b1, b2, b3, u)
                if Ju == 0.0 or not isfinite(Ju):
                    return u, 0.0, 0.0, SINGULAR
                u_pol = u - Fu / Ju
                if fabs(self._F(t, b1, b2, b3, u_pol)) < nF:
                    u = u_pol
                status = OK
                break
            Ju = self._J(t, b1, b2, b3, u)
            if Ju == 0.0 or not isfinite(Ju):
                return u, 0.0, 0.0, SINGULAR
            step = Fu / Ju
            lam = 1.0
            for k in range(NEWTON_MAX_HALVINGS + 1):
                u_try = u - lam * step
                F_try = self._F(t, b1, b2, b3, u_try)
                n_try = fabs(F_try)
                if isfinite(n_try) and n_try < nF:
                    break
                lam *= 0.5
            if not isfinite(n_try):
                return u, 0.0, 0.0, NONFINITE
            u = u_try
            Fu = F_try
            nF = n_try
        else:
            if nF <= tol:
                status = OK
        if status != OK:
            return u, 0.0, 0.0, status
        self._f(t, b1 + self.Pd[0] * u, b2 + self.Pd[1] * u, b3 + self.Pd[2] * u, f, jd, 0)
        dz1 = self.Kz[0] * z1 + self.Kz[1] * z2 + self.Kf[0] * f[0] + self.Kf[1] * f[1] + self.Kf[2] * f[2]
        dz2 = self.Kz[2] * z1 + self.Kz[3] * z2 + self.Kf[3] * f[0] + self.Kf[4] * f[1] + self.Kf[5] * f[2]
        return u, dz1, dz2, OK
