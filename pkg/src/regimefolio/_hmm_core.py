"""Numba kernels for the strictly sequential HMM recursions.

Scaling convention: per step t, densities enter as log values; the forward
pass normalizes with per-step constants whose logs accumulate into the exact
per-step predictive log-densities log p(x_t | x_{1:t-1}).
"""

import numpy as np
from numba import njit


@njit(cache=True)
def forward_pass(log_b, pi, A):
    """Scaled forward recursion.

    Returns (alpha, log_c) where alpha[t] is the filtered state distribution
    P(z_t | x_{1:t}) and log_c[t] = log p(x_t | x_{1:t-1}).
    """
    T, K = log_b.shape
    alpha = np.empty((T, K))
    log_c = np.empty(T)

    m = log_b[0].max()
    a = pi * np.exp(log_b[0] - m)
    s = a.sum()
    if s <= 0.0 or not np.isfinite(s):
        log_c[0] = -np.inf
        alpha[0] = 1.0 / K
    else:
        alpha[0] = a / s
        log_c[0] = np.log(s) + m

    for t in range(1, T):
        m = log_b[t].max()
        pred = alpha[t - 1] @ A
        a = pred * np.exp(log_b[t] - m)
        s = a.sum()
        if s <= 0.0 or not np.isfinite(s):
            log_c[t] = -np.inf
            alpha[t] = 1.0 / K
        else:
            alpha[t] = a / s
            log_c[t] = np.log(s) + m
    return alpha, log_c


@njit(cache=True)
def backward_smooth(log_b, A, alpha, log_c):
    """Scaled backward pass fused with posterior statistics.

    Returns (gamma, xi_sum): gamma[t] = P(z_t | x_{1:T}) and xi_sum the sum
    over t of the normalized two-slice posteriors P(z_t, z_{t+1} | x_{1:T}).
    """
    T, K = log_b.shape
    gamma = np.empty((T, K))
    xi_sum = np.zeros((K, K))
    beta = np.ones(K)
    gamma[T - 1] = alpha[T - 1]

    for t in range(T - 2, -1, -1):
        m = log_b[t + 1].max()
        btil = np.exp(log_b[t + 1] - m)
        c = np.exp(log_c[t + 1] - m)
        if c <= 0.0 or not np.isfinite(c):
            c = 1e-300
        w = btil * beta
        # two-slice posterior, normalized per step before accumulating
        xi_t = np.empty((K, K))
        tot = 0.0
        for i in range(K):
            for j in range(K):
                v = alpha[t, i] * A[i, j] * w[j]
                xi_t[i, j] = v
                tot += v
        if tot > 0.0:
            for i in range(K):
                for j in range(K):
                    xi_sum[i, j] += xi_t[i, j] / tot
        beta_new = (A @ w) / c
        g = alpha[t] * beta_new
        gs = g.sum()
        if gs > 0.0:
            gamma[t] = g / gs
        else:
            gamma[t] = alpha[t]
        beta = beta_new
    return gamma, xi_sum
