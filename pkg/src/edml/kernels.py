"""Hot loop of EDML: the fixed-point solver for parameter islands.

Two interchangeable backends compute the same thing.  The numba backend
compiles a per-island loop; the numpy backend advances all islands of a
family in lock step and freezes each one as it converges.  Set
``EDML_DISABLE_JIT=1`` (or leave numba uninstalled) to use numpy.
"""

from __future__ import annotations

import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover
    numba = None

CONVERGED = 0
MAX_ITERATIONS = 1
ZERO_DENOMINATOR = 2

JIT_AVAILABLE = numba is not None
_DISABLED = os.environ.get("EDML_DISABLE_JIT", "").strip().lower() not in ("", "0", "false", "no")
DEFAULT_BACKEND = "numba" if JIT_AVAILABLE and not _DISABLED else "numpy"


def _solve_islands_py(theta0, lam, weights, psi, n, tol, max_iter, theta, iters, status):
    s_count, b_count, k = lam.shape
    w_total = 0.0
    for b in range(b_count):
        w_total += weights[b]
    neutral = n - w_total
    cur = np.empty(k)
    acc = np.empty(k)
    for s in range(s_count):
        denom = -k + n
        for x in range(k):
            denom += psi[s, x]
            cur[x] = theta0[s, x]
        status[s] = MAX_ITERATIONS
        it = 0
        while it < max_iter:
            it += 1
            for x in range(k):
                acc[x] = 0.0
            bad = False
            for b in range(b_count):
                dot = 0.0
                for x in range(k):
                    dot += lam[s, b, x] * cur[x]
                if dot <= 0.0:
                    bad = True
                    break
                scale = weights[b] / dot
                for x in range(k):
                    acc[x] += scale * lam[s, b, x] * cur[x]
            if bad:
                status[s] = ZERO_DENOMINATOR
                break
            change = 0.0
            for x in range(k):
                new = (psi[s, x] - 1.0 + acc[x] + neutral * cur[x]) / denom
                d = abs(new - cur[x])
                if d > change:
                    change = d
                cur[x] = new
            if change < tol:
                status[s] = CONVERGED
                break
        iters[s] = it
        for x in range(k):
            theta[s, x] = cur[x]


if JIT_AVAILABLE:
    _solve_islands_jit = numba.njit(cache=True, nogil=True)(_solve_islands_py)
else:  # pragma: no cover
    _solve_islands_jit = None


def _solve_islands_numpy(theta0, lam, weights, psi, n, tol, max_iter):
    s_count, _, k = lam.shape
    cur = theta0.copy()
    iters = np.zeros(s_count, dtype=np.int64)
    status = np.full(s_count, MAX_ITERATIONS, dtype=np.int64)
    neutral = n - weights.sum()
    denom = (psi.sum(axis=1) - k + n)[:, None]
    active = np.arange(s_count)
    it = 0
    while active.size and it < max_iter:
        it += 1
        th = cur[active]
        la = lam[active]
        dots = np.einsum("sbk,sk->sb", la, th)
        zero = np.any(dots <= 0.0, axis=1)
        if zero.any():
            status[active[zero]] = ZERO_DENOMINATOR
            iters[active[zero]] = it
            keep = ~zero
            active, th, la, dots = active[keep], th[keep], la[keep], dots[keep]
        acc = np.einsum("sbk,sb->sk", la, weights[None, :] / dots) * th
        new = (psi[active] - 1.0 + acc + neutral * th) / denom[active]
        change = np.max(np.abs(new - th), axis=1)
        cur[active] = new
        iters[active] = it
        done = change < tol
        status[active[done]] = CONVERGED
        active = active[~done]
    return cur, iters, status


def solve_islands(theta0, lam, weights, psi, n, tol, max_iter, backend: str | None = None):
    """Iterate the island update for a stack of islands sharing weights.

    ``theta0`` and ``psi`` have shape (S, K); ``lam`` has shape (S, B, K)
    and ``weights`` shape (B,).  Examples not represented in ``lam`` are
    neutral; they number ``n - weights.sum()``.  Returns the final
    parameters, the number of updates applied to each island, and a
    status code per island.
    """
    backend = backend or DEFAULT_BACKEND
    theta0 = np.ascontiguousarray(theta0, dtype=np.float64)
    lam = np.ascontiguousarray(lam, dtype=np.float64)
    weights = np.ascontiguousarray(weights, dtype=np.float64)
    psi = np.ascontiguousarray(psi, dtype=np.float64)
    if backend == "numpy":
        return _solve_islands_numpy(theta0, lam, weights, psi, float(n), float(tol), int(max_iter))
    if backend == "numba":
        if not JIT_AVAILABLE:
            raise RuntimeError("numba backend requested but numba is not installed")
        fn = _solve_islands_jit
    elif backend == "python":
        fn = _solve_islands_py
    else:
        raise ValueError(f"unknown backend {backend!r}")
    s_count, _, k = lam.shape
    theta = np.empty((s_count, k))
    iters = np.zeros(s_count, dtype=np.int64)
    status = np.zeros(s_count, dtype=np.int64)
    fn(theta0, lam, weights, psi, float(n), float(tol), int(max_iter), theta, iters, status)
    return theta, iters, status


def warmup() -> None:
    """Trigger JIT compilation so it is not charged to a timed run."""
    if DEFAULT_BACKEND == "numba":
        solve_islands(np.full((1, 2), 0.5), np.ones((1, 1, 2)), np.ones(1), np.full((1, 2), 2.0),
                      1.0, 1e-8, 2)
