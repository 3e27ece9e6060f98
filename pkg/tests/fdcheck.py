"""Central finite-difference gradient oracle shared by the test suite.

Deliberately independent of the autodiff engine: it only re-evaluates a
scalar-valued function of flat numpy inputs.
"""

import numpy as np


def finite_difference(f, arrays, step=1e-5):
    """Central-difference gradients of scalar ``f(*arrays)`` w.r.t. each array."""
    grads = []
    for which, base in enumerate(arrays):
        g = np.zeros_like(base, dtype=np.float64)
        flat = g.reshape(-1)
        for i in range(base.size):
            bumped = [a.copy() for a in arrays]
            bumped[which].reshape(-1)[i] += step
            hi = float(f(*bumped))
            bumped = [a.copy() for a in arrays]
            bumped[which].reshape(-1)[i] -= step
            lo = float(f(*bumped))
            flat[i] = (hi - lo) / (2.0 * step)
        grads.append(g)
    return grads


def assert_grads_close(analytic, numeric, rel_tol=1e-4, floor=1e-8):
    """Relative comparison with an absolute floor for near-zero entries."""
    for a, n in zip(analytic, numeric):
        denom = np.maximum(np.abs(n), floor)
        rel = np.abs(a - n) / denom
        assert rel.max() < rel_tol, f"gradient mismatch: max rel err {rel.max():.3e}"
