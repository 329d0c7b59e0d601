"""Pure numpy versions of the compiled kernels in ``_kernels.pyx``.

Loops over time are kept in Python and vectorised across replicates, so a
batch of a few hundred paths costs roughly the same as a single one.
"""

import numpy as np

from .expr import OPCODES

_OPNAMES = {v: k for k, v in OPCODES.items()}


def box_muller(u, out):
    n = out.shape[0]
    npairs = (n + 1) // 2
    r = np.sqrt(-2.0 * np.log1p(-u[0:2 * npairs:2]))
    th = 2.0 * np.pi * u[1:2 * npairs:2]
    out[0::2] = r * np.cos(th)
    out[1::2] = (r * np.sin(th))[: n // 2]


def linear_recursion(phi, scale, z, x):
    x[:, 0] = 0.0
    for i in range(z.shape[1]):
        x[:, i + 1] = phi[i] * x[:, i] + scale[i] * z[:, i]


def eval_program(ops, consts, xs):
    xs = np.asarray(xs, dtype=float)
    stack = []
    with np.errstate(all="ignore"):
        for op, c in zip(ops, consts):
            name = _OPNAMES[int(op)]
            if name == "constant":
                stack.append(np.full_like(xs, c))
            elif name == "variable":
                stack.append(xs.copy())
            elif name == "negate":
                stack[-1] = -stack[-1]
            elif name in ("exp", "ln", "abs", "sin", "cos"):
                a = stack[-1]
                if name == "ln":
                    stack[-1] = np.where(a > 0, np.log(np.where(a > 0, a, 1.0)), np.nan)
                else:
                    stack[-1] = {"exp": np.exp, "abs": np.abs, "sin": np.sin, "cos": np.cos}[name](a)
            else:
                b = stack.pop()
                a = stack.pop()
                if name == "add":
                    stack.append(a + b)
                elif name == "subtract":
                    stack.append(a - b)
                elif name == "multiply":
                    stack.append(a * b)
                elif name == "divide":
                    stack.append(np.where(b != 0, a / np.where(b != 0, b, 1.0), np.nan))
                elif name == "power":
                    stack.append(np.power(a, b))
                elif name == "min":
                    stack.append(np.where(b < a, b, a))
                else:
                    stack.append(np.where(b > a, b, a))
    return stack[0]


def em_perturbed(alpha, b, sigma, dt, db, ops, consts, y, limit):
    nrow, nstep = db.shape
    valid = np.full(nrow, nstep + 1, dtype=np.int64)
    active = np.ones(nrow, dtype=bool)
    y[:, 0] = 0.0
    with np.errstate(all="ignore"):
        for i in range(nstep):
            yi = y[:, i]
            ri = eval_program(ops, consts, np.where(active, yi, 0.0))
            badr = active & ~np.isfinite(ri)
            if np.any(badr):
                return valid, float(yi[np.argmax(badr)])
            nxt = yi + alpha * b[i] * (yi + ri) * dt[i] + sigma[i] * db[:, i]
            over = active & ~(np.abs(nxt) <= limit)
            if np.any(over):
                valid[over] = i + 1
                active &= ~over
            y[:, i + 1] = np.where(active, nxt, np.nan)
    return valid, float("nan")


def mle_sums(v, x, w1, w2, num, den):
    num[:, 0] = 0.0
    den[:, 0] = 0.0
    np.cumsum(w1 * v[:, :-1] * np.diff(x, axis=1), axis=1, out=num[:, 1:])
    np.cumsum(w2 * (v[:, :-1] * v[:, :-1]), axis=1, out=den[:, 1:])


def zeta_stats(z, h):
    w = np.cumsum(np.sqrt(h) * z, axis=1)
    acc = np.cumsum(w[:, :-1] ** 2, axis=1)[:, -1] if z.shape[1] > 1 else np.zeros(z.shape[0])
    w1 = w[:, -1]
    return 0.5 * (w1 * w1 - 1.0), h * acc
