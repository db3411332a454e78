"""Central finite-difference gradient checking."""
from __future__ import annotations

import numpy as np


def relative_error(analytic, numeric, floor: float = 1e-7):
    """Elementwise ``|a - n| / max(|a|, |n|, floor)``."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def numeric_gradient(f, arr: np.ndarray, indices=None, eps: float = 1e-3):
    """Central differences of scalar ``f()`` w.r.t. entries of ``arr`` (perturbed in place).

    ``indices`` is an iterable of flat indices; all entries when omitted.
    """
    flat = arr.reshape(-1)
    if indices is None:
        indices = range(flat.size)
    out = []
    for i in indices:
        old = flat[i]
        flat[i] = old + eps
        hi = f()
        flat[i] = old - eps
        lo = f()
        flat[i] = old
        out.append((hi - lo) / (2 * eps))
    return np.array(out)


def activation_pattern(net) -> list[np.ndarray]:
    """ReLU masks and pooling argmaxes cached by the last forward pass."""
    from .layers import MaxPool2D, ReLU

    return [l._cache.copy() for l in net.layers if isinstance(l, (ReLU, MaxPool2D))]


def _same_pattern(a, b) -> bool:
    return all(np.array_equal(x, y) for x, y in zip(a, b))


def check_network_gradient(net, x, loss_fn, n_params: int, seed: int = 0,
                           eps: float = 1e-3, start: int | None = None, max_draws: int = 5000):
    """Compare backprop with central differences on sampled parameters.

    ``loss_fn(out) -> (loss, dloss/dout)``; ``start`` is forwarded to
    ``net.backward`` (fused output layers). Parameters are drawn round-robin
    over tensors. A draw whose +/-eps stencil flips any ReLU mask or pooling
    argmax is skipped: the loss is not differentiable across that kink, so
    the finite difference would not estimate the gradient.

    Returns ``(errors, skipped)`` with one relative error per checked parameter.
    """
    rng = np.random.default_rng(seed)
    stop = start if start is not None else None
    out = net.forward(x, stop)
    base = activation_pattern(net)
    _, dout = loss_fn(out)
    net.backward(dout, start=start)
    grads = {k: v.copy() for k, v in net.gradients().items()}
    weights = net.weights()
    names = list(weights)

    def loss_at():
        loss, _ = loss_fn(net.forward(x, stop))
        return loss

    errors, skipped, draws = [], 0, 0
    while len(errors) < n_params and draws < max_draws:
        name = names[draws % len(names)]
        draws += 1
        w = weights[name].reshape(-1)
        i = int(rng.integers(w.size))
        old = w[i]
        patterns = []
        values = []
        for v in (old + eps, old - eps):
            w[i] = v
            values.append(loss_at())
            patterns.append(activation_pattern(net))
        w[i] = old
        if not all(_same_pattern(base, p) for p in patterns):
            skipped += 1
            continue
        numeric = (values[0] - values[1]) / (2 * eps)
        errors.append(float(relative_error(grads[name].reshape(-1)[i], numeric)))
    net.clear()
    return np.array(errors), skipped
