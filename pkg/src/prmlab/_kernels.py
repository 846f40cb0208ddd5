"""Hot numeric kernels: chain rollouts and minibatch logistic SGD.

Each kernel has a numba ``@njit`` implementation and a pure-numpy fallback.
The backend is chosen once at import: numba when importable, unless the
``PRMLAB_DISABLE_NUMBA`` environment variable is set to a non-empty value
other than ``0``. Rollout outcomes are bit-identical across backends because
both consume the same pre-drawn uniforms in the same layout; SGD results
agree to float rounding (summation order differs).
"""

from __future__ import annotations

import os

import numpy as np

_flag = os.environ.get("PRMLAB_DISABLE_NUMBA", "")
_numba_requested = _flag in ("", "0")

try:  # pragma: no cover - exercised indirectly
    if not _numba_requested:
        raise ImportError("numba disabled via PRMLAB_DISABLE_NUMBA")
    from numba import njit

    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(func):
            return func

        if len(args) == 1 and callable(args[0]):
            return args[0]
        return wrap


BACKEND = "numba" if HAVE_NUMBA else "numpy"


# ---------------------------------------------------------------------------
# Chain rollout: walk fatal-error chains over pre-drawn uniforms
# ---------------------------------------------------------------------------


def _rollout_numpy(rates, fail_u, obs_u, stop_u, match_p, stop_p, start_valid):
    n, r = fail_u.shape
    fail = fail_u < rates[None, :]
    valid = (np.cumsum(fail, axis=1) == 0).astype(np.uint8)
    if not start_valid:
        valid = np.zeros_like(valid)
    matched = obs_u < match_p
    obs = np.where(matched, valid, 1 - valid).astype(np.uint8)
    stops = (stop_u < stop_p) & (valid == 0)
    has_stop = stops.any(axis=1)
    first = np.argmax(stops, axis=1)
    last = np.where(has_stop, first + 1, r).astype(np.int64)
    return valid, obs, last


@njit(cache=True)
def _rollout_numba(rates, fail_u, obs_u, stop_u, match_p, stop_p, start_valid):  # pragma: no cover - jit
    n, r = fail_u.shape
    valid = np.empty((n, r), dtype=np.uint8)
    obs = np.empty((n, r), dtype=np.uint8)
    last = np.empty(n, dtype=np.int64)
    for k in range(n):
        ok = np.uint8(1) if start_valid else np.uint8(0)
        stopped = 0
        for j in range(r):
            if ok == 1 and fail_u[k, j] < rates[j]:
                ok = np.uint8(0)
            valid[k, j] = ok
            if obs_u[k, j] < match_p:
                obs[k, j] = ok
            else:
                obs[k, j] = 1 - ok
            if stopped == 0 and ok == 0 and stop_u[k, j] < stop_p:
                stopped = j + 1
        last[k] = stopped if stopped > 0 else r
    return valid, obs, last


def rollout(rates, fail_u, obs_u, stop_u, match_p, stop_p, start_valid=True):
    """Validity, observations, and emitted lengths for sampled chain suffixes.

    ``rates`` holds the per-step effective error probabilities for the
    remaining steps; ``fail_u`` / ``obs_u`` / ``stop_u`` are (n, remaining)
    uniforms. ``valid[k, j]`` is 1 while chain ``k`` is still error-free after
    the j-th remaining step; once 0 it stays 0. ``obs[k, j]`` equals the
    validity with probability ``match_p``, else its complement. Once invalid,
    a chain stops early with probability ``stop_p`` at each step boundary;
    ``last[k]`` is the number of remaining steps actually emitted.
    """
    rates = np.ascontiguousarray(rates, dtype=np.float64)
    fail_u = np.ascontiguousarray(fail_u, dtype=np.float64)
    obs_u = np.ascontiguousarray(obs_u, dtype=np.float64)
    stop_u = np.ascontiguousarray(stop_u, dtype=np.float64)
    if rates.shape[0] != fail_u.shape[1] or fail_u.shape != obs_u.shape or fail_u.shape != stop_u.shape:
        raise ValueError("rollout input shapes disagree")
    if HAVE_NUMBA:
        return _rollout_numba(rates, fail_u, obs_u, stop_u, float(match_p), float(stop_p), bool(start_valid))
    return _rollout_numpy(rates, fail_u, obs_u, stop_u, float(match_p), float(stop_p), bool(start_valid))


# ---------------------------------------------------------------------------
# Minibatch logistic SGD over one epoch
# ---------------------------------------------------------------------------


def _sgd_epoch_numpy(X, y, w, b_arr, order, lr, l2, batch_size, n_batches):
    n = order.shape[0]
    for t in range(n_batches):
        rows = order[t * batch_size : min((t + 1) * batch_size, n)]
        Xb = X[rows]
        z = Xb @ w + b_arr[0]
        p = np.empty_like(z)
        pos = z >= 0
        p[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
        ez = np.exp(z[~pos])
        p[~pos] = ez / (1.0 + ez)
        diff = p - y[rows]
        inv = 1.0 / rows.shape[0]
        w -= lr * (Xb.T @ diff * inv + l2 * w)
        b_arr[0] -= lr * diff.mean()


@njit(cache=True)
def _sgd_epoch_numba(X, y, w, b_arr, order, lr, l2, batch_size, n_batches):  # pragma: no cover - jit
    n = order.shape[0]
    d = w.shape[0]
    diff = np.empty(batch_size, dtype=np.float64)
    for t in range(n_batches):
        start = t * batch_size
        stop = min(start + batch_size, n)
        size = stop - start
        inv = 1.0 / size
        mean_diff = 0.0
        for k in range(size):
            row = order[start + k]
            z = b_arr[0]
            for j in range(d):
                z += X[row, j] * w[j]
            if z >= 0.0:
                p = 1.0 / (1.0 + np.exp(-z))
            else:
                ez = np.exp(z)
                p = ez / (1.0 + ez)
            diff[k] = p - y[row]
            mean_diff += diff[k]
        for j in range(d):
            g = l2 * w[j]
            acc = 0.0
            for k in range(size):
                acc += X[order[start + k], j] * diff[k]
            w[j] -= lr * (g + acc * inv)
        b_arr[0] -= lr * mean_diff * inv
    return 0


def sgd_epoch(X, y, w, b_arr, order, lr, l2, batch_size, n_batches=None):
    """Run one (possibly partial) epoch of minibatch logistic SGD in place.

    ``order`` is the row visiting order for this epoch; ``n_batches`` caps the
    number of batches processed (for fractional epochs). ``w`` and the
    1-element ``b_arr`` are updated in place.
    """
    order = np.ascontiguousarray(order, dtype=np.int64)
    n = order.shape[0]
    per_epoch = (n + batch_size - 1) // batch_size
    if n_batches is None:
        n_batches = per_epoch
    n_batches = min(int(n_batches), per_epoch)
    if n_batches <= 0:
        return
    if HAVE_NUMBA:
        _sgd_epoch_numba(X, y, w, b_arr, order, float(lr), float(l2), int(batch_size), n_batches)
    else:
        _sgd_epoch_numpy(X, y, w, b_arr, order, float(lr), float(l2), int(batch_size), n_batches)
