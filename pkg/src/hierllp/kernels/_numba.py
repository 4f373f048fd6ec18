"""Numba-compiled twins of the kernels in ``_numpy.py``.

Same contracts and IEEE arithmetic (no fastmath). Elementwise kernels match
the numpy twins bitwise; anything built on summation or matmul (objectives,
accumulated gradients, ISTA iterates) agrees only to roundoff because numpy
sums pairwise and the gemm paths differ.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def soft_threshold(x, lam):
    # fresh C-ordered output: ravel() must be a view for the writes to land
    out = np.empty(x.shape)
    flat_x = x.ravel()
    flat_o = out.ravel()
    for i in range(flat_x.shape[0]):
        v = flat_x[i]
        a = abs(v) - lam
        if a > 0.0:
            flat_o[i] = a if v > 0.0 else -a
        else:
            flat_o[i] = 0.0
    return out


@njit(cache=True)
def soft_threshold_backward(g, out):
    gx = np.zeros(g.shape)
    glam = 0.0
    flat_g = g.ravel()
    flat_o = out.ravel()
    flat_gx = gx.ravel()
    for i in range(flat_g.shape[0]):
        o = flat_o[i]
        if o != 0.0:
            flat_gx[i] = flat_g[i]
            glam -= flat_g[i] * (1.0 if o > 0.0 else -1.0)
    return gx, glam


@njit(cache=True)
def sparsemax(z):
    zs = np.sort(z)[::-1]
    csum = 0.0
    tau = zs[0] - 1.0
    for i in range(zs.shape[0]):
        csum += zs[i]
        if 1.0 + (i + 1) * zs[i] > csum:
            tau = (csum - 1.0) / (i + 1)
    return np.maximum(z - tau, 0.0)


@njit(cache=True)
def sparsemax_backward(g, p):
    n = 0
    tot = 0.0
    for i in range(p.shape[0]):
        if p[i] > 0.0:
            n += 1
            tot += g[i]
    gz = np.zeros(g.shape)
    if n == 0:
        return gz
    mean_g = tot / n
    for i in range(p.shape[0]):
        if p[i] > 0.0:
            gz[i] = g[i] - mean_g
    return gz


@njit(cache=True)
def _st_inplace(X, thr):
    flat = X.ravel()
    for i in range(flat.shape[0]):
        v = flat[i]
        a = abs(v) - thr
        if a > 0.0:
            flat[i] = a if v > 0.0 else -a
        else:
            flat[i] = 0.0


@njit(cache=True)
def ista(D, F, lam, mu, iterations):
    G = D.T @ D
    B = D.T @ F
    Z = np.zeros((D.shape[1], F.shape[1]))
    obj = np.empty(iterations)
    thr = lam / mu
    for it in range(iterations):
        Z = Z - (G @ Z - B) / mu
        _st_inplace(Z, thr)
        R = F - D @ Z
        obj[it] = 0.5 * np.sum(R * R) + lam * np.sum(np.abs(Z))
    return Z, obj


@njit(cache=True)
def normalize_columns(D):
    for j in range(D.shape[1]):
        s = 0.0
        for i in range(D.shape[0]):
            s += D[i, j] * D[i, j]
        n = np.sqrt(s)
        if n > 0.0:
            for i in range(D.shape[0]):
                D[i, j] /= n


@njit(cache=True)
def momentum_step(param, vel, grad, lr, momentum, wd):
    p = param.ravel()
    v = vel.ravel()
    g = grad.ravel()
    for i in range(p.shape[0]):
        v[i] = momentum * v[i] + g[i] + wd * p[i]
        p[i] -= lr * v[i]
