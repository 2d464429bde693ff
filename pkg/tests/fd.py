"""Central finite-difference oracle shared by the gradient tests."""

import numpy as np

from sawsynth.grad import Tape, Tensor


def numeric_grad(fn, arrays, h=1e-6, points=2):
    """Central differences of scalar ``fn(*arrays)`` w.r.t. each float array.

    ``points=4`` uses the fourth-order stencil, which keeps the oracle's own
    error near 1e-12 for smooth functions with a moderate ``h``.
    """
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        flat = a.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            old = flat[i]

            def at(offset):
                flat[i] = old + offset
                return float(fn(*arrays))

            if points == 4:
                gflat[i] = (at(-2 * h) - 8 * at(-h) + 8 * at(h) - at(2 * h)) / (12 * h)
            else:
                gflat[i] = (at(h) - at(-h)) / (2 * h)
            flat[i] = old
        grads.append(g)
    return grads


def tape_grad(fn, arrays):
    tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    with Tape() as tape:
        out = fn(*tensors)
    tape.backward(out)
    return [t.grad for t in tensors]


def max_rel_error(analytic, numeric, floor=1e-8):
    """Largest per-element relative error over entries with a non-trivial gradient."""
    a = np.asarray(analytic, dtype=float)
    n = np.asarray(numeric, dtype=float)
    scale = np.maximum(np.abs(a), np.abs(n))
    mask = scale > floor
    if not mask.any():
        return float(np.max(np.abs(a - n)))
    return float(np.max(np.abs(a - n)[mask] / scale[mask]))


def check(fn, arrays, h=1e-3, floor=1e-8):
    """Compare tape and fourth-order finite-difference gradients.

    Returns the worst per-element relative error.
    """
    analytic = tape_grad(fn, arrays)
    numeric = numeric_grad(lambda *xs: fn(*[Tensor(x) for x in xs]).data, [a.copy() for a in arrays], h, points=4)
    return max(max_rel_error(a, n, floor) for a, n in zip(analytic, numeric))
