"""Compiled inner loop for Monte-Carlo statistics around a point.

CROCO evaluates the network on K perturbed copies of every counterfactual at
every iteration, which dominates its run time.  The kernel below walks the
perturbed rows one at a time, so no (rows x hidden) temporaries are ever
materialized, and averages the input gradient in first-hidden-layer space
before a single back-projection per point.

Only reassociation-style fast-math flags are enabled: infinities from
``exp`` overflow must keep their IEEE meaning.
"""
import math

import numpy as np
from numba import njit

_FASTMATH = {"reassoc", "contract", "arcp", "nsz"}


@njit(cache=True, fastmath=_FASTMATH)
def perturbed_statistics(x, eps, weights, biases, w_out, b_out, threshold):
    """Per point ``a``: mean of ``f``, fraction with ``f <= threshold``, mean grad f.

    ``x`` is ``(A, n)``, ``eps`` ``(A, K, n)``; ``weights``/``biases`` hold
    the hidden layers and ``w_out``/``b_out`` the output unit.
    """
    A, K, n = eps.shape
    L = len(weights)
    H0 = weights[0].shape[1]
    mean_p = np.zeros(A)
    below = np.zeros(A)
    grad = np.zeros((A, n))
    width = 0
    for W in weights:
        width = max(width, W.shape[1])
    acts = np.zeros((L, width))
    back = np.zeros(width)
    nxt = np.zeros(width)
    acc = np.zeros(H0)
    for a in range(A):
        acc[:] = 0.0
        sum_p = 0.0
        count = 0.0
        for k in range(K):
            W = weights[0]
            b = biases[0]
            for h in range(H0):
                acts[0, h] = b[h]
            for j in range(n):
                v = x[a, j] + eps[a, k, j]
                for h in range(H0):
                    acts[0, h] += v * W[j, h]
            for h in range(H0):
                acts[0, h] = max(acts[0, h], 0.0)
            for l in range(1, L):
                W = weights[l]
                b = biases[l]
                H = W.shape[1]
                for h in range(H):
                    acts[l, h] = b[h]
                for j in range(W.shape[0]):
                    v = acts[l - 1, j]
                    if v > 0.0:
                        for h in range(H):
                            acts[l, h] += v * W[j, h]
                for h in range(H):
                    acts[l, h] = max(acts[l, h], 0.0)
            HL = weights[L - 1].shape[1]
            z = b_out
            for h in range(HL):
                z += acts[L - 1, h] * w_out[h]
            p = 1.0 / (1.0 + math.exp(-z))
            sum_p += p
            if p <= threshold:
                count += 1.0
            slope = p * (1.0 - p)
            # back-propagate the logit gradient down to the first hidden layer
            for h in range(HL):
                back[h] = w_out[h] if acts[L - 1, h] > 0.0 else 0.0
            for l in range(L - 1, 0, -1):
                W = weights[l]
                for j in range(W.shape[0]):
                    s = 0.0
                    if acts[l - 1, j] > 0.0:
                        for h in range(W.shape[1]):
                            s += W[j, h] * back[h]
                    nxt[j] = s
                for j in range(W.shape[0]):
                    back[j] = nxt[j]
            for h in range(H0):
                acc[h] += slope * back[h]
        mean_p[a] = sum_p / K
        below[a] = count / K
        W = weights[0]
        for j in range(n):
            s = 0.0
            for h in range(H0):
                s += W[j, h] * acc[h]
            grad[a, j] = s / K
    return mean_p, below, grad
