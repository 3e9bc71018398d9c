"""Central-difference gradient checking for the autodiff engine."""

import numpy as np

from ibdetect import autodiff as ad

H = 1e-5


def numeric_grads(build, leaves, h=H):
    """Central differences of the scalar ``build()`` w.r.t. every leaf tensor."""
    out = []
    for leaf in leaves:
        g = np.zeros_like(leaf.values)
        it = np.nditer(leaf.values, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            orig = leaf.values[i]
            leaf.values[i] = orig + h
            with ad.no_grad():
                up = build().item()
            leaf.values[i] = orig - h
            with ad.no_grad():
                down = build().item()
            leaf.values[i] = orig
            g[i] = (up - down) / (2 * h)
        out.append(g)
    return out


def analytic_grads(build, leaves):
    with ad.Tape() as tape:
        loss = build()
    tape.backward(loss, leaves)
    return [leaf.grad.copy() for leaf in leaves]


def relative_error(a, n):
    """Norm-wise relative error; the 1e-6 floor makes all-zero gradients compare absolutely."""
    return float(np.linalg.norm(a - n) / max(np.linalg.norm(a), np.linalg.norm(n), 1e-6))


def max_relative_error(build, leaves, h=H):
    a = analytic_grads(build, leaves)
    n = numeric_grads(build, leaves, h)
    return max(relative_error(x, y) for x, y in zip(a, n))
