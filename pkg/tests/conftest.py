import numpy as np
import pytest

from momart.tensorcore import evaluate


def finite_diff_grads(store, graph, bindings, names, step=1e-5, loss="loss"):
    """Central-difference gradient oracle over the named parameters."""
    out = {}
    for name in names:
        base = store[name].copy()
        fd = np.zeros_like(base)
        for idx in np.ndindex(base.shape):
            p = base.copy()
            p[idx] += step
            store.replace(name, p)
            lp = np.asarray(evaluate(graph, bindings)[loss]).item()
            p = base.copy()
            p[idx] -= step
            store.replace(name, p)
            lm = np.asarray(evaluate(graph, bindings)[loss]).item()
            fd[idx] = (lp - lm) / (2 * step)
        store.replace(name, base)
        out[name] = fd
    return out


def max_rel_err(a, b, floor=1e-6):
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
