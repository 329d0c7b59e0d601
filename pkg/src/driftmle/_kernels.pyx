# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops. Same signatures as driftmle._fallback."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, log, log1p, exp, sin, cos, pow, fabs, fmin, fmax, isfinite, NAN, M_PI

cnp.import_array()

DEF STACK = 64


def box_muller(const double[::1] u, double[::1] out):
    """Pairs (u[2j], u[2j+1]) -> (out[2j], out[2j+1]); len(u) >= 2*ceil(len(out)/2)."""
    cdef Py_ssize_t n = out.shape[0]
    cdef Py_ssize_t j, npairs = (n + 1) // 2
    cdef double r, th
    with nogil:
        for j in range(npairs):
            r = sqrt(-2.0 * log1p(-u[2 * j]))
            th = 2.0 * M_PI * u[2 * j + 1]
            out[2 * j] = r * cos(th)
            if 2 * j + 1 < n:
                out[2 * j + 1] = r * sin(th)


def linear_recursion(const double[::1] phi, const double[::1] scale,
                     const double[:, ::1] z, double[:, ::1] x):
    """x[:, 0] = 0; x[:, i+1] = phi[i] * x[:, i] + scale[i] * z[:, i]."""
    cdef Py_ssize_t nrow = z.shape[0], nstep = z.shape[1]
    cdef Py_ssize_t r, i
    with nogil:
        for r in range(nrow):
            x[r, 0] = 0.0
            for i in range(nstep):
                x[r, i + 1] = phi[i] * x[r, i] + scale[i] * z[r, i]


cdef inline double run_program(const int[::1] ops, const double[::1] consts,
                               double xv, double* stack) noexcept nogil:
    cdef Py_ssize_t k, sp = 0
    cdef int op
    cdef double a, b
    for k in range(ops.shape[0]):
        op = ops[k]
        if op == 0:
            stack[sp] = consts[k]
            sp += 1
        elif op == 1:
            stack[sp] = xv
            sp += 1
        elif op == 2:
            stack[sp - 1] = -stack[sp - 1]
        elif op >= 8:
            a = stack[sp - 1]
            if op == 8:
                stack[sp - 1] = exp(a)
            elif op == 9:
                stack[sp - 1] = log(a) if a > 0.0 else NAN
            elif op == 10:
                stack[sp - 1] = fabs(a)
            elif op == 11:
                stack[sp - 1] = sin(a)
            elif op == 12:
                stack[sp - 1] = cos(a)
            else:
                b = a
                a = stack[sp - 2]
                sp -= 1
                if op == 13:
                    stack[sp - 1] = b if b < a else a
                else:
                    stack[sp - 1] = b if b > a else a
        else:
            b = stack[sp - 1]
            a = stack[sp - 2]
            sp -= 1
            if op == 3:
                stack[sp - 1] = a + b
            elif op == 4:
                stack[sp - 1] = a - b
            elif op == 5:
                stack[sp - 1] = a * b
            elif op == 6:
                stack[sp - 1] = a / b if b != 0.0 else NAN
            else:
                stack[sp - 1] = pow(a, b)
    return stack[0]


def eval_program(const int[::1] ops, const double[::1] consts, const double[::1] xs):
    cdef Py_ssize_t i, n = xs.shape[0]
    cdef double stack[STACK]
    out = np.empty(n)
    cdef double[::1] o = out
    with nogil:
        for i in range(n):
            o[i] = run_program(ops, consts, xs[i], stack)
    return out


def em_perturbed(double alpha, const double[::1] b, const double[::1] sigma,
                 const double[::1] dt, const double[:, ::1] db,
                 const int[::1] ops, const double[::1] consts,
                 double[:, ::1] y, double limit):
    """Euler-Maruyama for dY = alpha b(t) (Y + r(Y)) dt + sigma(t) dB, Y_0 = 0.

    Returns (valid, bad_point): valid[r] is the number of finite leading nodes
    of row r (nodes after an overflow are NaN); bad_point is the first state
    where r(x) was non-finite, or NaN if none.
    """
    cdef Py_ssize_t nrow = db.shape[0], nstep = db.shape[1]
    cdef Py_ssize_t r, i, j
    cdef double yi, ri, stack[STACK]
    cdef double bad = NAN
    cdef int failed = 0
    valid = np.full(nrow, nstep + 1, dtype=np.int64)
    cdef long long[::1] v = valid
    with nogil:
        for r in range(nrow):
            if failed:
                break
            y[r, 0] = 0.0
            for i in range(nstep):
                yi = y[r, i]
                ri = run_program(ops, consts, yi, stack)
                if not isfinite(ri):
                    bad = yi
                    failed = 1
                    break
                yi = yi + alpha * b[i] * (yi + ri) * dt[i] + sigma[i] * db[r, i]
                if not (fabs(yi) <= limit):
                    v[r] = i + 1
                    for j in range(i + 1, nstep + 1):
                        y[r, j] = NAN
                    break
                y[r, i + 1] = yi
    return valid, bad


def mle_sums(const double[:, ::1] v, const double[:, ::1] x,
             const double[::1] w1, const double[::1] w2,
             double[:, ::1] num, double[:, ::1] den):
    """Prefix sums num[:, k] = sum_{i<k} w1[i] v[:, i] (x[:, i+1] - x[:, i]),
    den[:, k] = sum_{i<k} w2[i] v[:, i]^2."""
    cdef Py_ssize_t nrow = x.shape[0], nstep = x.shape[1] - 1
    cdef Py_ssize_t r, i
    cdef double vi
    with nogil:
        for r in range(nrow):
            num[r, 0] = 0.0
            den[r, 0] = 0.0
            for i in range(nstep):
                vi = v[r, i]
                num[r, i + 1] = num[r, i] + w1[i] * vi * (x[r, i + 1] - x[r, i])
                den[r, i + 1] = den[r, i] + w2[i] * (vi * vi)


def zeta_stats(const double[:, ::1] z, double h):
    """Per row: W = sqrt(h) cumsum(z); returns ((W_1^2 - 1)/2, h sum_{i<n} W_i^2)."""
    cdef Py_ssize_t nrow = z.shape[0], nstep = z.shape[1]
    cdef Py_ssize_t r, i
    cdef double w, acc, sh = sqrt(h)
    num = np.empty(nrow)
    den = np.empty(nrow)
    cdef double[::1] nu = num, de = den
    with nogil:
        for r in range(nrow):
            w = 0.0
            acc = 0.0
            for i in range(nstep):
                acc = acc + w * w
                w = w + sh * z[r, i]
            nu[r] = 0.5 * (w * w - 1.0)
            de[r] = h * acc
    return num, den
