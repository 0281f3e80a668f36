"""Shared test oracles: finite differences and brute-force references."""

import numpy as np

from psae.tensor import Tensor, no_grad


def fd_gradient(value_fn, array: np.ndarray, h: float = 1e-4) -> np.ndarray:
    """Central finite differences of a scalar function w.r.t. ``array``.

    ``value_fn`` must re-read ``array`` on every call; the array is perturbed
    in place and restored.
    """
    grad = np.zeros_like(array)
    flat, gflat = array.ravel(), grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = value_fn()
        flat[i] = orig - h
        fm = value_fn()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def check_gradients(build_scalar, arrays, h=1e-4, tol=1e-4):
    """Compare tape gradients of ``build_scalar(*tensors)`` against central
    finite differences for every input array (double precision).

    Returns the worst scale-normalized error across all inputs.
    """
    arrays = [np.asarray(a, dtype=np.float64) for a in arrays]
    tensors = [Tensor(a.copy(), requires_grad=True, dtype=np.float64) for a in arrays]
    out = build_scalar(*tensors)
    out.backward()
    analytic = [np.zeros_like(a) if t.grad is None else t.grad.copy()
                for a, t in zip(arrays, tensors)]

    worst = 0.0
    for k, a in enumerate(arrays):
        def value():
            with no_grad():
                ts = [Tensor(arr, dtype=np.float64) for arr in arrays]
                return build_scalar(*ts).data.item()

        fd = fd_gradient(value, a, h)
        scale = max(np.abs(analytic[k]).max(initial=0.0),
                    np.abs(fd).max(initial=0.0), 1e-8)
        err = np.abs(analytic[k] - fd).max(initial=0.0) / scale
        worst = max(worst, err)
        assert err < tol, f"gradient mismatch for input {k}: {err:.3g} >= {tol}"
    return worst


def random_projection(shape, seed) -> np.ndarray:
    """Fixed random weights turning a tensor output into a scalar probe."""
    return np.random.default_rng(seed).standard_normal(shape)
