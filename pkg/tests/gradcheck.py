"""Finite-difference gradient oracle, kept independent of the autodiff path.

All checks run in float64: the forward code is identical, only the leaf
dtype changes. The relative error is normalized by the largest gradient
magnitude so near-zero entries do not blow up the ratio while systematic
errors (sign flips, wrong factors) are still caught at full sensitivity.
"""

import numpy as np

from suitein import tensor as T


def numeric_grad(f, x: np.ndarray, h: float = 1e-3) -> np.ndarray:
    """Central finite differences of the scalar ``f()`` w.r.t. ``x`` in place."""
    grad = np.zeros_like(x)
    flat = x.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * h)
    return grad


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric)) / scale)


def gradcheck(make_loss, leaves, h: float = 1e-3) -> float:
    """Worst relative error between backward() and finite differences.

    ``make_loss`` rebuilds the scalar loss from the live leaf tensors so the
    finite-difference probe exercises the same forward path.
    """
    for leaf in leaves:
        assert leaf.data.dtype == np.float64, "gradcheck expects float64 leaves"
        leaf.grad = None
    loss = make_loss()
    T.backward(loss)
    worst = 0.0
    for leaf in leaves:
        assert leaf.grad is not None, "leaf did not receive a gradient"
        num = numeric_grad(lambda: make_loss().item(), leaf.data, h)
        worst = max(worst, max_relative_error(leaf.grad, num))
    return worst


def leaf(rng: np.random.Generator, *shape, scale: float = 1.0) -> T.Tensor:
    return T.Tensor(rng.standard_normal(shape) * scale, requires_grad=True,
                    dtype=np.float64)
