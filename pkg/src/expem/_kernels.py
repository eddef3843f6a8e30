"""Compiled inner loops.

Model parameters travel as the tuple produced by
:attr:`expem.model.ModelSpec.kernel_params`:
``(kind, b0, B1, B2, beta, alpha, Sigma, chi, piece_B1, piece_B2)``.
The tuple is unpacked once per call; the per-step helpers take the
fields as plain arguments, which keeps reference-count traffic on the
embedded arrays out of the inner loop.
"""

import math

import numba
import numpy as np

KIND_POLY = 0
KIND_PIECEWISE = 1
KIND_MODULATED = 2

EXPONENT_CAP = 700.0

_jit = numba.njit(cache=True, nogil=True)
_inline = numba.njit(cache=True, nogil=True, inline="always")


@_inline
def _pow(x, a):
    if not x > 0.0:
        return 0.0
    # integer fast paths; generic pow dominates the step cost otherwise
    if a == 1.0:
        return x
    if a == 2.0:
        return x * x
    if a == 3.0:
        return x * x * x
    return x**a


@_inline
def _drift(x, kind, b0, B1, B2, beta, chi, pB1, pB2):
    if kind == KIND_PIECEWISE:
        k = 0
        while k < chi.size and x >= chi[k]:
            k += 1
        return b0 + pB1[k] * x - pB2[k] * _pow(x, beta)
    if kind == KIND_MODULATED:
        m = math.cos(x) + 2.0
        return b0 + B1 * x - B2 * m * m * _pow(x, beta)
    return b0 + B1 * x - B2 * _pow(x, beta)


@_inline
def _step(x, s, dw, kind, b0, B1, B2, beta, alpha, Sigma, chi, pB1, pB2):
    ratio = Sigma * _pow(x, alpha) / x
    expo = ratio * dw + ((_drift(x, kind, b0, B1, B2, beta, chi, pB1, pB2) - b0) / x
                         - 0.5 * ratio * ratio) * s
    capped = expo > EXPONENT_CAP
    if capped:
        expo = EXPONENT_CAP
    return x * math.exp(expo) + b0 * s, capped


@_jit
def drift(x, P):
    kind, b0, B1, B2, beta, alpha, Sigma, chi, pB1, pB2 = P
    return _drift(x, kind, b0, B1, B2, beta, chi, pB1, pB2)


@_jit
def diffusion(x, P):
    return P[6] * _pow(x, P[5])


@_jit
def exp_em_increment(x, s, dw, P):
    """Scheme value a time ``s`` after a node at value ``x`` with Brownian move ``dw``.

    Returns ``(value, capped)``; ``capped`` is set when the exponent hit the cap.
    """
    kind, b0, B1, B2, beta, alpha, Sigma, chi, pB1, pB2 = P
    return _step(x, s, dw, kind, b0, B1, B2, beta, alpha, Sigma, chi, pB1, pB2)


@_jit
def exp_em_paths(x0, dW, h, threshold, stride, P, out, stop, failed):
    """Run the exponential scheme on every row of ``dW``.

    ``out[:, j]`` receives the value at node ``j * stride``.  ``stop[i]`` is
    the first node index whose value exceeds ``threshold`` (-1 if none).
    ``failed[i]`` flags a capped exponent or a non-representable value; the
    path is then frozen at its last good value.
    """
    kind, b0, B1, B2, beta, alpha, Sigma, chi, pB1, pB2 = P
    n_paths, n_steps = dW.shape
    for i in range(n_paths):
        x = x0
        out[i, 0] = x
        st = 0 if x > threshold else -1
        bad = False
        for n in range(n_steps):
            if not bad:
                y, capped = _step(x, h, dW[i, n], kind, b0, B1, B2, beta, alpha, Sigma,
                                  chi, pB1, pB2)
                if capped or not (y > 0.0 and y < math.inf):
                    bad = True
                else:
                    x = y
            if st < 0 and x > threshold:
                st = n + 1
            if (n + 1) % stride == 0:
                out[i, (n + 1) // stride] = x
        stop[i] = st
        failed[i] = bad


@_jit
def exp_em_midpoints(values, dW_first, h_half, P, out):
    """Interpolated scheme at mid-step, from node values and half-step moves."""
    kind, b0, B1, B2, beta, alpha, Sigma, chi, pB1, pB2 = P
    n_paths, n_steps = dW_first.shape
    for i in range(n_paths):
        for n in range(n_steps):
            out[i, n], _ = _step(values[i, n], h_half, dW_first[i, n], kind, b0, B1, B2, beta,
                                 alpha, Sigma, chi, pB1, pB2)


@_jit
def euler_paths(x0, dW, h, tamed, P, out, breach, failed):
    """Classical (or drift-tamed) Euler-Maruyama; rows stop at the first non-positive value."""
    kind, b0, B1, B2, beta, alpha, Sigma, chi, pB1, pB2 = P
    n_paths, n_steps = dW.shape
    for i in range(n_paths):
        x = x0
        out[i, 0] = x
        breach[i] = -1
        failed[i] = False
        for n in range(n_steps):
            if breach[i] >= 0 or failed[i]:
                out[i, n + 1] = np.nan
                continue
            b = _drift(x, kind, b0, B1, B2, beta, chi, pB1, pB2)
            inc = b * h
            if tamed:
                inc = inc / (1.0 + h * abs(b))
            x = x + inc + Sigma * _pow(x, alpha) * dW[i, n]
            if not math.isfinite(x):
                failed[i] = True
                out[i, n + 1] = np.nan
            elif x <= 0.0:
                breach[i] = n + 1
                out[i, n + 1] = x
            else:
                out[i, n + 1] = x
