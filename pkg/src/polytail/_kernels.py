"""Compiled inner loop for gradient descent once every margin sits in the loss tail.

Only closed-form tails are handled here: the poly tail ``(m - shift)^-alpha``
(valid while every margin is at least ``beta``), the logistic loss and the
exponential loss.  Anything else falls back to the numpy path in
:mod:`polytail.trainer`.
"""

import math

import numpy as np
from numba import njit

POLY_TAIL, LOGISTIC, EXPONENTIAL = 0, 1, 2
OK, LEFT_TAIL, NONFINITE, UNDERFLOW = 0, 1, 2, 3

_EPS = np.finfo(np.float64).eps


@njit(cache=True)
def _eval(kind, alpha, shift, m, w, ell, psi):
    total = 0.0
    for i in range(m.size):
        if kind == POLY_TAIL:
            s = m[i] - shift
            e = s ** (-alpha)
            ell[i] = e
            psi[i] = alpha * e / s
        elif kind == LOGISTIC:
            if m[i] > 0:
                q = math.exp(-m[i])
                ell[i] = math.log1p(q)
                psi[i] = q / (1.0 + q)
            else:
                q = math.exp(m[i])
                ell[i] = -m[i] + math.log1p(q)
                psi[i] = 1.0 / (1.0 + q)
        else:
            e = math.exp(-m[i])
            ell[i] = e
            psi[i] = e
        total += w[i] * ell[i]
    return total


@njit(cache=True)
def tail_steps(kind, alpha, beta, k, w, a, m, eta, n_steps, halving):
    """Run up to ``n_steps`` GD steps in place on ``a`` and ``m``.

    Returns ``(steps_done, eta, status)``.  A step whose candidate leaves the
    poly tail is not taken; the caller finishes it on the general path.
    """
    n = m.size
    shift = beta - 1.0
    ell = np.empty(n)
    psi = np.empty(n)
    ell_new = np.empty(n)
    psi_new = np.empty(n)
    step = np.empty(n)
    delta = np.empty(n)
    m_new = np.empty(n)
    loss = _eval(kind, alpha, shift, m, w, ell, psi)
    if not math.isfinite(loss):
        return 0, eta, NONFINITE
    done = 0
    while done < n_steps:
        for i in range(n):
            step[i] = w[i] * psi[i]
        for i in range(n):
            acc = 0.0
            for j in range(n):
                acc += k[i, j] * step[j]
            delta[i] = acc
        while True:
            low = False
            for i in range(n):
                m_new[i] = m[i] + eta * delta[i]
                if kind == POLY_TAIL and m_new[i] < beta:
                    low = True
            if low:
                return done, eta, LEFT_TAIL
            loss_new = _eval(kind, alpha, shift, m_new, w, ell_new, psi_new)
            if not math.isfinite(loss_new):
                if halving:
                    eta *= 0.5
                    if eta < 1e-300:
                        return done, eta, UNDERFLOW
                    continue
                return done, eta, NONFINITE
            if halving and loss_new > loss + 4.0 * _EPS * abs(loss):
                eta *= 0.5
                if eta < 1e-300:
                    return done, eta, UNDERFLOW
                continue
            break
        for i in range(n):
            a[i] += eta * step[i]
            m[i] = m_new[i]
            ell[i] = ell_new[i]
            psi[i] = psi_new[i]
        loss = loss_new
        done += 1
    return done, eta, OK
