"""Chunked time-stepping kernels behind the simulators.

One step of every integrator in this package has the same shape: apply an
exact linear flow, then an explicit stochastic update with a polynomial
drift and a polynomial diffusion,

    u   = lin @ x_k
    x_{k+1} = u + drift(u) dt + diffusion(u) @ dW_k.

The kernel advances a whole chunk of paths through all steps, records every
state, and freezes a path as diverged when it leaves the overflow guard or
turns non-finite.  Two interchangeable implementations exist: a compiled
per-path loop (numba) and a vectorized per-step loop (numpy).  Select with
the environment variable ``HOPF_CRITIC_BACKEND`` (``numba`` or ``numpy``);
the default is the compiled backend when numba imports cleanly.

Polynomials arrive packed as flat arrays (component index, exponent rows,
coefficients) so both backends share one data layout.
"""

from __future__ import annotations

import os

import numpy as np

try:
    import numba

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    numba = None
    _HAVE_NUMBA = False

STOP_NONE = 0
STOP_HIT_INNER = 1
STOP_HIT_OUTER = 2
STOP_LEFT_BALL = 3
STOP_DIVERGED = 4

STOP_REASONS = ("none", "hit_inner", "hit_outer", "left_ball", "diverged")


class BackendError(Exception):
    """Unknown or unavailable kernel backend selection."""


def pack_poly(p, dim):
    """Flatten a PolyMap into (components, exponents, coefficients) arrays.

    The term order is the map's canonical order, so packing is
    deterministic.  ``dim`` is the expected input dimension; a zero map
    packs into empty arrays.
    """
    if p.n_in != dim:
        raise ValueError(f"polynomial expects {p.n_in} inputs, kernel has {dim}")
    count = len(p.terms)
    comps = np.zeros(count, dtype=np.int64)
    exps = np.zeros((count, dim), dtype=np.int64)
    coefs = np.zeros(count, dtype=np.float64)
    for t, (comp, exponents, coef) in enumerate(p.terms):
        comps[t] = comp
        exps[t, :] = exponents
        coefs[t] = coef
    return comps, exps, coefs


def active_backend():
    """Resolve the kernel backend from the environment.

    Returns ``"numba"`` or ``"numpy"``.  Raises BackendError for an
    unrecognized value or when numba is requested but not importable.
    """
    choice = os.environ.get("HOPF_CRITIC_BACKEND", "").strip().lower()
    if choice == "":
        return "numba" if _HAVE_NUMBA else "numpy"
    if choice == "numpy":
        return "numpy"
    if choice == "numba":
        if not _HAVE_NUMBA:
            raise BackendError("backend 'numba' requested but numba is not installed")
        return "numba"
    raise BackendError(f"unknown backend {choice!r} (use 'numba' or 'numpy')")


def _chunk_numpy(x0, lin, dcomps, dexps, dcoefs, scomps, sexps, scoefs,
                 dW, dt, guard, states, stop_index, stop_code):
    n_paths, dim = x0.shape
    n_steps = dW.shape[1]
    m = dW.shape[2]
    guard_sq = guard * guard
    x = x0.astype(np.float64).copy()
    states[:, 0, :] = x
    active = np.arange(n_paths)
    for k in range(n_steps):
        if active.size == 0:
            states[:, k + 1, :] = states[:, k, :]
            continue
        xa = x[active]
        u = xa @ lin.T
        drift = np.zeros_like(u)
        for t in range(dcomps.shape[0]):
            val = np.full(u.shape[0], dcoefs[t])
            for j in range(dim):
                for _ in range(dexps[t, j]):
                    val = val * u[:, j]
            drift[:, dcomps[t]] += val
        noise = np.zeros_like(u)
        dWk = dW[active, k, :]
        for t in range(scomps.shape[0]):
            val = np.full(u.shape[0], scoefs[t])
            for j in range(dim):
                for _ in range(sexps[t, j]):
                    val = val * u[:, j]
            row, col = divmod(int(scomps[t]), m)
            noise[:, row] += val * dWk[:, col]
        x_new = u + drift * dt + noise
        finite = np.isfinite(x_new).all(axis=1)
        x_new[~finite] = xa[~finite]
        inside = (x_new * x_new).sum(axis=1) <= guard_sq
        bad = ~(finite & inside)
        x[active] = x_new
        states[:, k + 1, :] = x
        if bad.any():
            hit = active[bad]
            stop_index[hit] = k + 1
            stop_code[hit] = STOP_DIVERGED
            active = active[~bad]
    return states, stop_index, stop_code


if _HAVE_NUMBA:

    @numba.njit(cache=True, nogil=True)
    def _chunk_njit(x0, lin, dcomps, dexps, dcoefs, scomps, sexps, scoefs,
                    dW, dt, guard, states, stop_index, stop_code):
        n_paths, dim = x0.shape
        n_steps = dW.shape[1]
        m = dW.shape[2]
        guard_sq = guard * guard
        u = np.empty(dim)
        drift = np.empty(dim)
        noise = np.empty(dim)
        x = np.empty(dim)
        for b in range(n_paths):
            for i in range(dim):
                x[i] = x0[b, i]
                states[b, 0, i] = x[i]
            for k in range(n_steps):
                for i in range(dim):
                    acc = 0.0
                    for j in range(dim):
                        acc += lin[i, j] * x[j]
                    u[i] = acc
                for i in range(dim):
                    drift[i] = 0.0
                    noise[i] = 0.0
                for t in range(dcomps.shape[0]):
                    val = dcoefs[t]
                    for j in range(dim):
                        for _ in range(dexps[t, j]):
                            val *= u[j]
                    drift[dcomps[t]] += val
                for t in range(scomps.shape[0]):
                    val = scoefs[t]
                    for j in range(dim):
                        for _ in range(sexps[t, j]):
                            val *= u[j]
                    row = scomps[t] // m
                    col = scomps[t] - row * m
                    noise[row] += val * dW[b, k, col]
                norm_sq = 0.0
                ok = True
                for i in range(dim):
                    xi = u[i] + drift[i] * dt + noise[i]
                    if not np.isfinite(xi):
                        ok = False
                        break
                    u[i] = xi
                    norm_sq += xi * xi
                if ok and norm_sq <= guard_sq:
                    for i in range(dim):
                        x[i] = u[i]
                        states[b, k + 1, i] = x[i]
                else:
                    if ok:
                        for i in range(dim):
                            x[i] = u[i]
                    stop_index[b] = k + 1
                    stop_code[b] = STOP_DIVERGED
                    for kk in range(k + 1, n_steps + 1):
                        for i in range(dim):
                            states[b, kk, i] = x[i]
                    break
        return states, stop_index, stop_code


def run_chunk(x0, lin, drift_packed, sigma_packed, dW, dt, guard,
              backend=None):
    """Advance one chunk of paths through every step.

    Parameters
    ----------
    x0 : ndarray, shape (paths, dim)
    lin : ndarray, shape (dim, dim)
        Exact linear flow applied at the start of every step.
    drift_packed, sigma_packed : packed polynomial triples
        Nonlinear drift (dim outputs) and diffusion (dim*m outputs,
        row-major over the dim x m matrix).
    dW : ndarray, shape (paths, steps, m)
        Brownian increments, already scaled to the step size.
    dt : float
    guard : float
        Overflow radius; paths beyond it freeze as diverged.

    Returns
    -------
    (states, stop_index, stop_code)
        ``states``: (paths, steps+1, dim) with frozen tails after stops;
        ``stop_index``: steps for surviving paths, else the freeze index;
        ``stop_code``: STOP_NONE or STOP_DIVERGED.
    """
    x0 = np.ascontiguousarray(x0, dtype=np.float64)
    lin = np.ascontiguousarray(lin, dtype=np.float64)
    dW = np.ascontiguousarray(dW, dtype=np.float64)
    n_paths, dim = x0.shape
    n_steps = dW.shape[1]
    states = np.empty((n_paths, n_steps + 1, dim), dtype=np.float64)
    stop_index = np.full(n_paths, n_steps, dtype=np.int64)
    stop_code = np.zeros(n_paths, dtype=np.int64)
    kernel = _chunk_njit if (backend or active_backend()) == "numba" \
        else _chunk_numpy
    dcomps, dexps, dcoefs = drift_packed
    scomps, sexps, scoefs = sigma_packed
    kernel(x0, lin, dcomps, dexps, dcoefs, scomps, sexps, scoefs,
           dW, float(dt), float(guard), states, stop_index, stop_code)
    return states, stop_index, stop_code
