"""Shared finite-difference gradient oracle.

The checker perturbs every entry of every input with central differences
(h = 1e-5, float64) and compares against the analytic gradients from one
backward pass.  It is deliberately independent of the autograd engine's
backward machinery: the forward function is re-evaluated from plain numpy
arrays for each perturbation.
"""

import numpy as np

from nrvqa import autograd as ag

H = 1e-5


def fd_gradients(f, arrays, h=H):
    """Central finite-difference gradients of scalar f(*arrays) per entry."""
    grads = []
    for idx in range(len(arrays)):
        base = arrays[idx]
        g = np.zeros_like(base)
        it = np.nditer(base, flags=["multi_index"])
        for _ in it:
            mi = it.multi_index
            bumped = [a.copy() for a in arrays]
            bumped[idx][mi] = base[mi] + h
            up = f(*bumped)
            bumped[idx][mi] = base[mi] - h
            down = f(*bumped)
            g[mi] = (up - down) / (2 * h)
        grads.append(g)
    return grads


def max_rel_err(analytic, numeric):
    scale = np.maximum(1.0, np.abs(numeric))
    return float(np.max(np.abs(analytic - numeric) / scale))


def check_grads(build, arrays, tol=1e-4, h=H):
    """Assert analytic gradients of build(*tensors).item() match FD.

    `build` maps Tensor inputs to a scalar Tensor; `arrays` are the float64
    starting points.  Returns the worst relative error seen.
    """
    tensors = [ag.Tensor(a.copy(), requires_grad=True) for a in arrays]
    loss = build(*tensors)
    ag.backward(loss)
    analytic = [
        t.grad if t.grad is not None else np.zeros_like(t.data) for t in tensors
    ]

    def forward(*raw):
        with ag.no_grad():
            return build(*[ag.Tensor(r) for r in raw]).item()

    numeric = fd_gradients(forward, [a.copy() for a in arrays], h=h)
    worst = max(max_rel_err(a, n) for a, n in zip(analytic, numeric))
    assert worst < tol, f"gradient mismatch: rel err {worst:.3e} >= {tol}"
    return worst


def directional_check(build, params, rng, tol=1e-4, h=H):
    """Directional-derivative check for large parameter sets.

    Compares sum(grad . d) against the central difference of the loss along
    one random direction d -- usable where per-entry FD is too expensive.
    """
    tensors = [ag.Tensor(p.copy(), requires_grad=True) for p in params]
    loss = build(*tensors)
    ag.backward(loss)
    dirs = [rng.standard_normal(p.shape) for p in params]
    analytic = sum(
        float(np.sum((t.grad if t.grad is not None else 0.0) * d))
        for t, d in zip(tensors, dirs)
    )

    def at(eps):
        moved = [p + eps * d for p, d in zip(params, dirs)]
        with ag.no_grad():
            return build(*[ag.Tensor(m) for m in moved]).item()

    numeric = (at(h) - at(-h)) / (2 * h)
    denom = max(1.0, abs(numeric))
    rel = abs(analytic - numeric) / denom
    assert rel < tol, f"directional gradient mismatch: rel err {rel:.3e} >= {tol}"
    return rel
