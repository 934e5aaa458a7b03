"""Differentiable building blocks with hand-derived backward passes.

Everything operates on float64 numpy arrays. Backward functions either return
the input gradient or accumulate weight gradients into caller-supplied
buffers, so the same blocks serve both the reference kernels and the gradient
checker. Subgradient conventions: relu'(0) = 0, and the l2-norm gradient at
the origin is the zero vector.
"""

import numpy as np

from .errors import ShapeError


def linear_forward(W, x, b=None):
    """y = W @ x (+ b) for W (m, n) and x (n,)."""
    W = np.asarray(W, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if W.ndim != 2 or x.ndim != 1 or W.shape[1] != x.shape[0]:
        raise ShapeError(f"linear: W {W.shape} does not conform with x {x.shape}")
    y = W @ x
    if b is not None:
        b = np.asarray(b, dtype=np.float64)
        if b.shape != (W.shape[0],):
            raise ShapeError(f"linear: bias {b.shape} does not match output ({W.shape[0]},)")
        y = y + b
    return y


def linear_backward(g, W, x, dW=None, db=None):
    """Accumulate dL/dW = g x^T (and dL/db = g) and return dL/dx = W^T g."""
    g = np.asarray(g, dtype=np.float64)
    if g.shape != (W.shape[0],):
        raise ShapeError(f"linear backward: grad {g.shape} does not match output ({W.shape[0]},)")
    if dW is not None:
        dW += np.outer(g, x)
    if db is not None:
        db += g
    return W.T @ g


def relu_forward(x):
    return np.maximum(x, 0.0)


def relu_backward(g, x):
    return np.where(x > 0.0, g, 0.0)


def sigmoid_forward(x):
    # Split by sign to avoid overflow in exp for large |x|.
    out = np.empty_like(np.asarray(x, dtype=np.float64))
    x = np.asarray(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid_backward(g, s):
    """Backward from the forward output s = sigmoid(x)."""
    return g * s * (1.0 - s)


def softmax_forward(z):
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max())
    return e / e.sum()


def softmax_backward(g, s):
    """dL/dz given dL/ds and the forward output s."""
    return s * (g - float(np.dot(g, s)))


def l2_forward(v):
    return float(np.linalg.norm(v))


def l2_backward(g, v, norm):
    """Gradient of g * ||v||; returns the zero vector at the kink v = 0."""
    if norm == 0.0:
        return np.zeros_like(v)
    return (g / norm) * v


def hinge_forward(pos, neg, margin):
    """Sum of max(0, pos_i + margin - neg_i) over paired score lists."""
    pos = np.asarray(pos, dtype=np.float64)
    neg = np.asarray(neg, dtype=np.float64)
    if pos.shape != neg.shape:
        raise ShapeError(f"hinge: {pos.shape} positives vs {neg.shape} negatives")
    terms = pos + margin - neg
    active = terms > 0.0
    return float(terms[active].sum()), active


def hinge_backward(active):
    """d loss / d pos_i = 1 and d loss / d neg_i = -1 on the active set."""
    dpos = active.astype(np.float64)
    return dpos, -dpos
