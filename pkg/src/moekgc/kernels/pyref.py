"""Numpy implementation of the hot kernels.

Two fused primitives cover the per-triplet inner loop: the gated neighbor
encoder and the two-layer MLP used by experts, the gate network and the plain
relation learner. The compiled backend in _fast.pyx implements the same
signatures; both accumulate weight gradients in place and return input
gradients.
"""

import numpy as np

BACKEND = "py"


def mlp2_forward(x, W1, b1, W2, b2):
    """y = W2 @ relu(W1 @ x + b1) + b2. Returns (y, z1, h1) for backward."""
    z1 = W1 @ x + b1
    h1 = np.maximum(z1, 0.0)
    y = W2 @ h1 + b2
    return y, z1, h1


def mlp2_backward(dy, x, W1, W2, z1, h1, dW1, db1, dW2, db2):
    dW2 += np.outer(dy, h1)
    db2 += dy
    dz1 = (W2.T @ dy) * (z1 > 0.0)
    dW1 += np.outer(dz1, x)
    db1 += dz1
    return W1.T @ dz1


def encode_forward(e_self, C, W, beta):
    """Gated mean over transformed neighbor tuples, added to the raw embedding.

    C holds one row per neighbor: the neighbor relation embedding concatenated
    with the neighbor entity embedding. Empty C returns the raw embedding.
    Returns (out, U, Cp, g).
    """
    n = C.shape[0]
    if n == 0:
        d = e_self.shape[0]
        empty = np.zeros((0, d))
        return e_self.copy(), empty, empty, np.zeros(0)
    U = C @ W.T
    Cp = np.maximum(U, 0.0)
    a = Cp @ beta
    g = 1.0 / (1.0 + np.exp(-a))
    out = e_self + (g[:, None] * Cp).sum(axis=0) / n
    return out, U, Cp, g


def encode_backward(dout, C, W, beta, U, Cp, g, dW, dbeta):
    """Returns dC; the caller scatters it into embedding grads and adds dout
    to the entity's own embedding grad."""
    n = C.shape[0]
    if n == 0:
        return np.zeros_like(C)
    dg = (Cp @ dout) / n
    da = dg * g * (1.0 - g)
    dCp = (g[:, None] * dout[None, :]) / n + da[:, None] * beta[None, :]
    dU = dCp * (U > 0.0)
    dW += dU.T @ C
    dbeta += Cp.T @ da
    return dU @ W
