"""Central finite-difference gradient checking shared across test files."""

import numpy as np

from snapgraph.neural import tensor as T


def finite_diff_check(loss_fn, params, eps=1e-6, rtol=1e-5, max_coords=4, rng=None):
    """Compare reverse-mode gradients of a scalar loss against central
    differences on a sample of coordinates per parameter.

    ``loss_fn`` must be a pure function of the parameters' current ``.data``
    (fixed inputs, fixed noise). Returns the worst relative error seen.
    """
    rng = rng or np.random.default_rng(0)
    for p in params:
        p.zero_grad()
    loss = loss_fn()
    T.backward(loss)
    worst = 0.0
    for p in params:
        grad = p.grad if p.grad is not None else np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        n = flat.size
        coords = range(n) if n <= max_coords else sorted(
            rng.choice(n, size=max_coords, replace=False).tolist()
        )
        for i in coords:
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = float(loss_fn().data)
            flat[i] = orig - eps
            f_minus = float(loss_fn().data)
            flat[i] = orig
            fd = (f_plus - f_minus) / (2.0 * eps)
            ad = grad.reshape(-1)[i]
            scale = max(abs(fd), abs(ad), 1.0)
            rel = abs(fd - ad) / scale
            worst = max(worst, rel)
            assert rel < rtol, (
                f"gradient mismatch for {p.name} at flat index {i}: "
                f"analytic {ad}, finite-difference {fd} (rel {rel:.2e})"
            )
    return worst
