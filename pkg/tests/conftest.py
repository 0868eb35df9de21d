import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def flatten_params(params):
    keys = sorted(params)
    vec = np.concatenate([params[k].ravel() for k in keys])
    return keys, vec


def unflatten_params(keys, vec, template):
    out = {}
    i = 0
    for k in keys:
        size = template[k].size
        out[k] = vec[i : i + size].reshape(template[k].shape).copy()
        i += size
    return out


def numeric_grad(loss_fn, params, h=1e-5):
    """Central finite differences of a scalar loss over every parameter."""
    keys, vec = flatten_params(params)
    grad = np.zeros_like(vec)
    for i in range(vec.size):
        up = vec.copy()
        up[i] += h
        down = vec.copy()
        down[i] -= h
        grad[i] = (
            loss_fn(unflatten_params(keys, up, params))
            - loss_fn(unflatten_params(keys, down, params))
        ) / (2 * h)
    return unflatten_params(keys, grad, params)


def max_rel_error(analytic, numeric, floor=1e-4):
    """Max relative error across all blocks.

    The denominator is floored so that entries smaller than the floor are
    effectively held to an absolute tolerance of rel_tol*floor; central
    differences at h=1e-5 carry ~1e-10 absolute noise, so a 1e-4 floor keeps
    the check meaningful (any real backward bug shows up orders of magnitude
    above it) without tripping on noise in near-zero gradients.
    """
    worst = 0.0
    for k in analytic:
        a = analytic[k].ravel()
        n = numeric[k].ravel()
        if a.size == 0:
            continue
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst
