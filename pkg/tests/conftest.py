import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def numeric_grad(f, x, h=1e-3, richardson=False):
    """Central-difference gradient of scalar f() w.r.t. array x, perturbed in place."""
    g = np.zeros(x.shape, dtype=np.float64)
    flat, gflat = x.reshape(-1), g.reshape(-1)

    def central(k, s):
        orig = flat[k]
        flat[k] = orig + s
        fp = f()
        flat[k] = orig - s
        fm = f()
        flat[k] = orig
        return (fp - fm) / (2 * s)

    for k in range(flat.size):
        d = central(k, h)
        if richardson:
            d = (4 * central(k, h / 2) - d) / 3
        gflat[k] = d
    return g


def max_rel_error(a, n):
    a, n = np.asarray(a, dtype=np.float64).ravel(), np.asarray(n, dtype=np.float64).ravel()
    return float(np.max(np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)))
