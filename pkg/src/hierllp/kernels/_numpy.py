"""Pure-numpy implementations of the hot numeric kernels.

Reference semantics for the numba twins in ``_numba.py``; selected via the
``HIERLLP_BACKEND`` environment variable (see ``kernels.__init__``).
"""

import numpy as np


def soft_threshold(x: np.ndarray, lam: float) -> np.ndarray:
    """Elementwise shrinkage sign(x) * max(|x| - lam, 0)."""
    return np.sign(x) * np.maximum(np.abs(x) - lam, 0.0)


def soft_threshold_backward(g: np.ndarray, out: np.ndarray):
    """Gradients of soft_threshold given upstream g and the forward output.

    Coordinates exactly at the shrinkage kink (out == 0) get subgradient 0.
    Returns (grad_x, grad_lam).
    """
    active = out != 0.0
    gx = np.where(active, g, 0.0)
    glam = -float(np.sum(g * np.sign(out)))
    return gx, glam


def sparsemax(z: np.ndarray) -> np.ndarray:
    """Euclidean projection of a 1-D logit vector onto the probability simplex.

    Support size is the largest k with 1 + k*z_(k) > sum of the top k sorted
    entries; tau is that prefix mean shifted to unit mass.
    """
    zs = np.sort(z)[::-1]
    csum = 0.0
    tau = zs[0] - 1.0
    for i in range(zs.shape[0]):
        csum += zs[i]
        if 1.0 + (i + 1) * zs[i] > csum:
            tau = (csum - 1.0) / (i + 1)
    return np.maximum(z - tau, 0.0)


def sparsemax_backward(g: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Jacobian-vector product of sparsemax; support taken as p > 0."""
    support = p > 0.0
    n = int(np.sum(support))
    if n == 0:
        return np.zeros_like(g)
    mean_g = float(np.sum(g[support])) / n
    return np.where(support, g - mean_g, 0.0)


def ista(D: np.ndarray, F: np.ndarray, lam: float, mu: float, iterations: int):
    """Plain iterative soft-thresholding on 0.5*||F - D Z||^2 + lam*||Z||_1.

    D is held fixed; stepsize is 1/mu. Returns (Z, per-iteration objective).
    """
    G = D.T @ D
    B = D.T @ F
    Z = np.zeros((D.shape[1], F.shape[1]))
    obj = np.empty(iterations)
    thr = lam / mu
    for it in range(iterations):
        Z = soft_threshold(Z - (G @ Z - B) / mu, thr)
        R = F - D @ Z
        obj[it] = 0.5 * float(np.sum(R * R)) + lam * float(np.sum(np.abs(Z)))
    return Z, obj


def normalize_columns(D: np.ndarray) -> None:
    """Rescale every column of D to unit Euclidean norm, in place."""
    for j in range(D.shape[1]):
        n = np.sqrt(np.sum(D[:, j] * D[:, j]))
        if n > 0.0:
            D[:, j] /= n


def momentum_step(param: np.ndarray, vel: np.ndarray, grad: np.ndarray,
                  lr: float, momentum: float, wd: float) -> None:
    """Fused momentum-SGD update with L2 decay, in place on param and vel."""
    # association order matches the numba twin so backends agree bitwise
    vel *= momentum
    vel += grad
    vel += wd * param
    param -= lr * vel
