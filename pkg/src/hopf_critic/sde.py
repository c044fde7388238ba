"""Path simulators for the critical system, its reduction, and its limit.

All integrators share one step shape: an exact linear flow followed by an
Euler-Maruyama update of the polynomial nonlinearity and diffusion (see
``_kernels``).  The module provides task builders describing each system in
that shape:

``em_task``
    Plain Euler-Maruyama on an arbitrary polynomial SDE (identity flow).
``rescaled_task``
    The amplified slow-time critical system.  In rescaled variables the
    drift is ``eps^{-1/2} (Q z, P y)`` plus ``eps^{-3/4} (f, g)`` evaluated
    at ``eps^{1/4} (z, y)``, and the diffusion is ``(sigma_Q, sigma_P)`` at
    the same shrunken point.  The stiff linear part is integrated exactly
    (closed-form rotation for Q, dense matrix exponential for P) so the
    step size need not shrink with eps.
``reduced_task``
    The two-dimensional process on the quadratic center manifold, driven
    by the same noise channels as the full system for pathwise coupling.
``limit_task``
    The limiting radial diffusion, integrated through its nonsingular
    two-dimensional representation ``dZ_i = -Z_i |Z|^2 dt + s dB_i`` whose
    radius has the limit law; the polar drift's ``1/eta`` singularity never
    appears.

Noise is counter-based: each path owns a keyed generator, so increments
are a pure function of (master seed, path index, step) and ensembles are
bit-identical for every worker count.  Each coarse step draws two
half-step Gaussians per channel and sums them, which lets a half-step run
reuse exactly the same Brownian path for discretization-error checks.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from ._kernels import (STOP_DIVERGED, STOP_HIT_INNER, STOP_HIT_OUTER,
                       STOP_NONE, STOP_REASONS, pack_poly, run_chunk)
from .polyfield import PolyMap, stack

CHUNK = 256
GUARD_RADIUS = 1e6

STREAM_GENERIC = 0
STREAM_CRITICAL = 1
STREAM_LIMIT = 2

_MAX_PATH_INDEX = 1 << 48


class SdeError(Exception):
    """Invalid simulation setup."""


class NoiseStream:
    """Keyed Gaussian increment source for one path.

    The stream for ``(master_seed, path_index, stream_class)`` always
    produces the same sequence, independent of how many other streams
    exist or which worker consumes it.  Two fresh streams with equal keys
    yield equal draws, which is how coupled simulations share a Brownian
    path.
    """

    def __init__(self, master_seed, path_index, stream_class=STREAM_GENERIC):
        master_seed = int(master_seed)
        path_index = int(path_index)
        stream_class = int(stream_class)
        if master_seed < 0:
            raise SdeError("master_seed must be nonnegative")
        if not 0 <= path_index < _MAX_PATH_INDEX:
            raise SdeError("path_index out of range")
        if not 0 <= stream_class < (1 << 16):
            raise SdeError("stream_class out of range")
        self.master_seed = master_seed
        self.path_index = path_index
        self.stream_class = stream_class
        key = np.array([master_seed & 0xFFFFFFFFFFFFFFFF,
                        (stream_class << 48) | path_index], dtype=np.uint64)
        self._gen = np.random.Generator(np.random.Philox(key=key))

    def standard_blocks(self, n_blocks, channels):
        """Standard-normal draws of shape (n_blocks, 2, channels).

        Block k holds the two half-step variates of coarse step k; they
        are consumed summed by a coarse run and individually by a
        half-step run, so both runs ride the same Brownian path.
        """
        return self._gen.standard_normal((int(n_blocks), 2, int(channels)))

    def increments(self, n_steps, channels, dt):
        """Brownian increments N(0, dt) per channel for n_steps steps."""
        xi = self.standard_blocks(n_steps, channels)
        return (xi[:, 0, :] + xi[:, 1, :]) * math.sqrt(dt / 2.0)


@dataclass(frozen=True, eq=False)
class SimTask:
    """A simulation in linear-flow plus Euler-Maruyama form.

    Fields
    ------
    dim, m : state and noise-channel dimensions.
    lin : (dim, dim) exact one-step linear flow.
    drift : PolyMap dim -> dim, the nonlinear drift (already scaled).
    diffusion : PolyMap dim -> dim*m, rows stacked row-major.
    x0 : initial state.
    dt, n_steps : step size and step count (T = dt * n_steps).
    refined : when True the task consumes one half-step draw per step
        instead of a summed pair; n_steps must be even.
    stream_class : noise key namespace; coupled tasks share one.
    guard : overflow radius for the diverged stop.
    """

    dim: int
    m: int
    lin: np.ndarray
    drift: PolyMap
    diffusion: PolyMap
    x0: np.ndarray
    dt: float
    n_steps: int
    refined: bool = False
    stream_class: int = STREAM_GENERIC
    guard: float = GUARD_RADIUS

    def __post_init__(self):
        if self.dim < 1 or self.m < 1:
            raise SdeError("dimensions must be positive")
        if self.lin.shape != (self.dim, self.dim):
            raise SdeError("linear flow shape mismatch")
        if self.drift.n_in != self.dim or self.drift.n_out != self.dim:
            raise SdeError("drift dimensions mismatch")
        if self.diffusion.n_in != self.dim \
                or self.diffusion.n_out != self.dim * self.m:
            raise SdeError("diffusion dimensions mismatch")
        if self.x0.shape != (self.dim,) or not np.all(np.isfinite(self.x0)):
            raise SdeError("initial state must be finite of length dim")
        if self.dt <= 0.0 or self.n_steps < 1:
            raise SdeError("dt must be positive and n_steps >= 1")
        if self.refined and self.n_steps % 2:
            raise SdeError("half-step tasks need an even step count")

    @property
    def noise_blocks(self):
        return self.n_steps // 2 if self.refined else self.n_steps

    def grid(self):
        return self.dt * np.arange(self.n_steps + 1)

    def increments_from(self, noise):
        """Scaled Brownian increments (n_steps, m) drawn from a stream."""
        xi = noise.standard_blocks(self.noise_blocks, self.m)
        if self.refined:
            return xi.reshape(self.n_steps, self.m) * math.sqrt(self.dt)
        return (xi[:, 0, :] + xi[:, 1, :]) * math.sqrt(self.dt / 2.0)


@dataclass(frozen=True)
class PathResult:
    """One simulated path on a uniform grid with freeze-after-stop states."""

    grid: np.ndarray
    states: np.ndarray
    stop_index: int
    stop_time: float
    stop_reason: str


@dataclass(frozen=True)
class PathEnsemble:
    """Rectangular bundle of paths sharing a grid and a master seed.

    States after each path's stop time repeat its stopped value, so the
    array stays rectangular.  ``stop_time`` equals the final grid time for
    paths that never stopped.
    """

    grid: np.ndarray
    states: np.ndarray
    stop_index: np.ndarray
    stop_time: np.ndarray
    stop_reason: tuple
    master_seed: int

    @property
    def n_paths(self):
        return self.states.shape[0]

    def norms(self):
        """Euclidean state norm per path and grid point, shape (paths, K+1)."""
        return np.sqrt((self.states * self.states).sum(axis=2))


@dataclass(frozen=True)
class PolarPath:
    """Radius and unwrapped angle of a planar path, stopped at an annulus."""

    grid: np.ndarray
    rho: np.ndarray
    theta: np.ndarray
    stop_index: int
    stop_time: float
    stop_reason: str
    delta: float
    nmax: float


@dataclass(frozen=True)
class PolarEnsemble:
    """Vectorized polar conversion of a planar ensemble."""

    grid: np.ndarray
    rho: np.ndarray
    theta: np.ndarray
    stop_index: np.ndarray
    stop_time: np.ndarray
    stop_reason: tuple
    delta: float
    nmax: float


@dataclass(frozen=True)
class LimitParams:
    """Coefficients of the limiting radial diffusion.

    ``sigma_bar`` is the constant critical-plane diffusion block at the
    origin; the row sums of squares and the cross term determine the
    averaged drift constant and the diffusion ``s``.
    """

    sigma_bar: np.ndarray
    sigma1_sq: float
    sigma2_sq: float
    sigma12: float
    s: float

    def __post_init__(self):
        bar = np.asarray(self.sigma_bar, dtype=float)
        if bar.ndim != 2 or bar.shape[0] != 2:
            raise SdeError("sigma_bar must be a 2 x m matrix")
        s1 = float(np.sum(bar[0] * bar[0]))
        s2 = float(np.sum(bar[1] * bar[1]))
        s12 = float(np.sum(bar[0] * bar[1]))
        scale = max(1.0, abs(s1), abs(s2), abs(s12))
        if max(abs(s1 - self.sigma1_sq), abs(s2 - self.sigma2_sq),
               abs(s12 - self.sigma12)) > 1e-14 * scale:
            raise SdeError("row statistics disagree with sigma_bar")
        if abs(self.s * self.s - (s1 + s2) / 2.0) > 1e-14 * scale:
            raise SdeError("diffusion s disagrees with sigma_bar")

    @classmethod
    def from_sigma_bar(cls, sigma_bar):
        bar = np.asarray(sigma_bar, dtype=float)
        if bar.ndim != 2 or bar.shape[0] != 2:
            raise SdeError("sigma_bar must be a 2 x m matrix")
        s1 = float(np.sum(bar[0] * bar[0]))
        s2 = float(np.sum(bar[1] * bar[1]))
        s12 = float(np.sum(bar[0] * bar[1]))
        return cls(sigma_bar=bar.copy(), sigma1_sq=s1, sigma2_sq=s2,
                   sigma12=s12, s=math.sqrt((s1 + s2) / 2.0))


def _step_count(T, dt):
    n = int(round(T / dt))
    if n < 1 or abs(n * dt - T) > 1e-9 * max(1.0, abs(T)):
        raise SdeError(f"T={T} is not an integral number of dt={dt} steps")
    return n


def _rotation(angle):
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s], [s, c]])


def _check_nonlinear(p, name):
    for _, exps, _ in p.terms:
        if sum(exps) < 2:
            raise SdeError(f"{name} must contain only terms of degree >= 2")


def em_task(drift, diffusion, x0, dt, T, stream_class=STREAM_GENERIC,
            guard=GUARD_RADIUS):
    """Plain Euler-Maruyama task: identity flow, full drift in the update."""
    dim = drift.n_in
    if drift.n_out != dim:
        raise SdeError("drift must map R^dim to itself")
    if diffusion.n_in != dim or diffusion.n_out % dim:
        raise SdeError("diffusion must have dim inputs and dim*m outputs")
    m = diffusion.n_out // dim
    return SimTask(dim=dim, m=m, lin=np.eye(dim), drift=drift,
                   diffusion=diffusion,
                   x0=np.asarray(x0, dtype=float).reshape(dim),
                   dt=float(dt), n_steps=_step_count(T, dt),
                   stream_class=stream_class, guard=guard)


def rescaled_task(f, g, sigma_q, sigma_p, Q, P, eps, z0, y0, dt, T,
                  refined=False, stream_class=STREAM_CRITICAL,
                  guard=GUARD_RADIUS):
    """Amplified slow-time critical system as a SimTask.

    ``f`` and ``g`` are the nonlinear drift blocks in split coordinates
    (degree >= 2 terms only); ``sigma_q`` and ``sigma_p`` the diffusion
    rows.  A term of total degree d in the drift picks up the exact factor
    ``eps^{(d-3)/4}`` and in the diffusion ``eps^{d/4}``, which realizes
    the evaluation at ``eps^{1/4}`` times the state together with the
    outer amplification.  Cubic drift terms and constant diffusion terms
    are therefore copied bitwise, and eps = 1 reproduces the unscaled
    coefficients exactly.
    """
    Q = np.asarray(Q, dtype=float)
    P = np.asarray(P, dtype=float)
    if P.size == 0:
        P = P.reshape(0, 0)
    k = P.shape[0]
    dim = 2 + k
    if not 0.0 < eps <= 1.0:
        raise SdeError("eps must lie in (0, 1]")
    if f.n_in != dim or f.n_out != 2:
        raise SdeError("f must map (z, y) to the critical plane")
    if g.n_out != k or (k and g.n_in != dim):
        raise SdeError("g must map (z, y) to the stable block")
    if sigma_q.n_out % 2:
        raise SdeError("sigma_q must have 2*m outputs")
    m = sigma_q.n_out // 2
    if k and sigma_p.n_out != k * m:
        raise SdeError("sigma_p must have (n-2)*m outputs")
    _check_nonlinear(f, "f")
    if k:
        _check_nonlinear(g, "g")
    lam0 = float(Q[1, 0])
    root = 1.0 / math.sqrt(eps)
    lin = np.zeros((dim, dim))
    lin[:2, :2] = _rotation(root * lam0 * float(dt))
    if k:
        lin[2:, 2:] = expm(root * P * float(dt))
    parts = [f, g] if k else [f]
    drift = stack(parts).graded_scaled(lambda d: eps ** ((d - 3) / 4.0))
    sig_parts = [sigma_q, sigma_p] if k else [sigma_q]
    diffusion = stack(sig_parts).graded_scaled(lambda d: eps ** (d / 4.0))
    x0 = np.concatenate((np.asarray(z0, dtype=float).reshape(2),
                         np.asarray(y0, dtype=float).reshape(k)))
    return SimTask(dim=dim, m=m, lin=lin, drift=drift, diffusion=diffusion,
                   x0=x0, dt=float(dt), n_steps=_step_count(T, dt),
                   refined=refined, stream_class=stream_class, guard=guard)


def reduced_task(reduced, sigma_q, h2, eps, z0, dt, T, refined=False,
                 stream_class=STREAM_CRITICAL, guard=GUARD_RADIUS):
    """Center-manifold 2D process as a SimTask.

    ``reduced`` is the reduced field (rotation plus cubic); its rotation
    block drives the exact flow and its nonlinear part enters the update
    unscaled, exactly as in the amplified equations.  The diffusion is the
    critical-plane block evaluated on the manifold,
    ``sigma_Q(eps^{1/4} u, h2(eps^{1/4} u))``.  Noise lives in the same
    stream class as the full simulation, so equal-keyed streams couple the
    two pathwise.
    """
    if reduced.n_in != 2 or reduced.n_out != 2:
        raise SdeError("reduced field must be planar")
    if not 0.0 < eps <= 1.0:
        raise SdeError("eps must lie in (0, 1]")
    if sigma_q.n_out % 2:
        raise SdeError("sigma_q must have 2*m outputs")
    m = sigma_q.n_out // 2
    k = h2.n_out
    if sigma_q.n_in != 2 + k:
        raise SdeError("sigma_q and h2 disagree on the stable dimension")
    Qr = reduced.jacobian(np.zeros(2))
    lam0 = float(Qr[1, 0])
    if max(abs(Qr[0, 0]), abs(Qr[1, 1]), abs(Qr[0, 1] + lam0)) > 1e-12 \
            or lam0 <= 0.0:
        raise SdeError("reduced field must have a rotation linear part")
    drift_terms = [t for t in reduced.terms if sum(t[1]) >= 2]
    drift = PolyMap(2, 2, drift_terms, max_degree=reduced.max_degree)
    quarter = eps ** 0.25
    inner_parts = [PolyMap.linear(quarter * np.eye(2),
                                  max_degree=sigma_q.max_degree)]
    if k:
        inner_parts.append(h2.graded_scaled(lambda d: eps ** (d / 4.0)))
    inner = stack(inner_parts)
    diffusion = sigma_q.substitute(inner, truncate_at=sigma_q.max_degree)
    root = 1.0 / math.sqrt(eps)
    lin = _rotation(root * lam0 * float(dt))
    return SimTask(dim=2, m=m, lin=lin, drift=drift, diffusion=diffusion,
                   x0=np.asarray(z0, dtype=float).reshape(2), dt=float(dt),
                   n_steps=_step_count(T, dt), refined=refined,
                   stream_class=stream_class, guard=guard)


def limit_task(params, rho0, dt, T, refined=False,
               stream_class=STREAM_LIMIT, guard=GUARD_RADIUS):
    """Limiting radial diffusion via its planar representation.

    Starts at ``(rho0, 0)``; the law of the radius does not depend on the
    starting phase.  ``rho0`` must be positive: the limit statement needs
    a nonzero initial radius, and the origin is rejected rather than
    extrapolated.
    """
    if rho0 <= 0.0:
        raise SdeError("rho0 must be positive")
    cubic = PolyMap(2, 2, [
        (0, (3, 0), -1.0), (0, (1, 2), -1.0),
        (1, (2, 1), -1.0), (1, (0, 3), -1.0)])
    s = float(params.s)
    diffusion = PolyMap(2, 4, [(0, (0, 0), s), (3, (0, 0), s)])
    return SimTask(dim=2, m=2, lin=np.eye(2), drift=cubic,
                   diffusion=diffusion, x0=np.array([float(rho0), 0.0]),
                   dt=float(dt), n_steps=_step_count(T, dt), refined=refined,
                   stream_class=stream_class, guard=guard)


def run_path(task, noise):
    """Integrate a single path of a task with the given noise stream."""
    dW = task.increments_from(noise)[None, :, :]
    states, stop_index, stop_code = run_chunk(
        task.x0[None, :], task.lin,
        pack_poly(task.drift, task.dim),
        pack_poly(task.diffusion, task.dim),
        dW, task.dt, task.guard)
    grid = task.grid()
    idx = int(stop_index[0])
    return PathResult(grid=grid, states=states[0],
                      stop_index=idx, stop_time=float(grid[idx]),
                      stop_reason=STOP_REASONS[int(stop_code[0])])


def euler_maruyama(drift, diffusion, x0, dt, T, noise):
    """One Euler-Maruyama path of dX = drift(X) dt + diffusion(X) dB."""
    return run_path(em_task(drift, diffusion, x0, dt, T), noise)


def simulate_rescaled(f, g, sigma_q, sigma_p, Q, P, eps, z0, y0, dt, T,
                      noise):
    """One path of the amplified slow-time critical system."""
    return run_path(rescaled_task(f, g, sigma_q, sigma_p, Q, P, eps,
                                  z0, y0, dt, T), noise)


def simulate_reduced(reduced, sigma_q, h2, eps, z0, dt, T, noise):
    """One path of the center-manifold 2D process (couple via equal keys)."""
    return run_path(reduced_task(reduced, sigma_q, h2, eps, z0, dt, T),
                    noise)


def simulate_limit(params, rho0, dt, T, noise):
    """One path of the limiting radial diffusion (radius only)."""
    planar = run_path(limit_task(params, rho0, dt, T), noise)
    rho = np.sqrt((planar.states * planar.states).sum(axis=1))
    return PathResult(grid=planar.grid, states=rho[:, None],
                      stop_index=planar.stop_index,
                      stop_time=planar.stop_time,
                      stop_reason=planar.stop_reason)


def _resolve_workers(workers):
    if workers is None:
        env = os.environ.get("HOPF_CRITIC_WORKERS", "").strip()
        workers = int(env) if env else 1
    workers = int(workers)
    if workers < 1:
        raise SdeError("workers must be >= 1")
    return workers


def run_ensemble(task, count, master_seed, workers=None):
    """Simulate ``count`` independent paths of a task.

    Paths are keyed by index, partitioned into fixed-size chunks, and
    written into disjoint slices of preallocated arrays, so the result is
    bit-identical for every worker count.
    """
    count = int(count)
    if count < 1:
        raise SdeError("count must be >= 1")
    workers = _resolve_workers(workers)
    drift_packed = pack_poly(task.drift, task.dim)
    sigma_packed = pack_poly(task.diffusion, task.dim)
    grid = task.grid()
    states = np.empty((count, task.n_steps + 1, task.dim))
    stop_index = np.empty(count, dtype=np.int64)
    stop_code = np.empty(count, dtype=np.int64)

    def work(start):
        end = min(start + CHUNK, count)
        block = end - start
        dW = np.empty((block, task.n_steps, task.m))
        for p in range(start, end):
            stream = NoiseStream(master_seed, p, task.stream_class)
            dW[p - start] = task.increments_from(stream)
        x0 = np.broadcast_to(task.x0, (block, task.dim))
        st, si, sc = run_chunk(x0, task.lin, drift_packed, sigma_packed,
                               dW, task.dt, task.guard)
        states[start:end] = st
        stop_index[start:end] = si
        stop_code[start:end] = sc

    starts = range(0, count, CHUNK)
    if workers == 1:
        for start in starts:
            work(start)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(work, starts))
    return PathEnsemble(
        grid=grid, states=states, stop_index=stop_index,
        stop_time=grid[stop_index],
        stop_reason=tuple(STOP_REASONS[int(c)] for c in stop_code),
        master_seed=int(master_seed))


def to_polar(path2d, delta, nmax):
    """Polar conversion of a planar path with annulus stopping.

    The radius must start strictly inside (delta, nmax).  The angle is
    unwrapped by shortest continuation; after the first grid point whose
    radius leaves the open annulus, radius and angle freeze at that
    point's values.
    """
    states = path2d.states
    if states.ndim != 2 or states.shape[1] != 2:
        raise SdeError("polar conversion needs a planar path")
    if not 0.0 < delta < nmax:
        raise SdeError("barriers must satisfy 0 < delta < nmax")
    rho = np.sqrt((states * states).sum(axis=1))
    if not delta < rho[0] < nmax:
        raise SdeError("initial radius must lie strictly inside the annulus")
    theta = np.unwrap(np.arctan2(states[:, 1], states[:, 0]))
    outside = (rho <= delta) | (rho >= nmax)
    if outside.any():
        s = int(np.argmax(outside))
        reason = "hit_inner" if rho[s] <= delta else "hit_outer"
        rho = rho.copy()
        theta = theta.copy()
        rho[s:] = rho[s]
        theta[s:] = theta[s]
    elif path2d.stop_reason != "none":
        s = path2d.stop_index
        reason = path2d.stop_reason
    else:
        s = len(rho) - 1
        reason = "none"
    return PolarPath(grid=path2d.grid, rho=rho, theta=theta, stop_index=s,
                     stop_time=float(path2d.grid[s]), stop_reason=reason,
                     delta=float(delta), nmax=float(nmax))


def polar_ensemble(ens, delta, nmax, components=(0, 1)):
    """Vectorized polar conversion of an ensemble's planar components.

    ``components`` selects the two state columns forming the plane (the
    critical coordinates sit first by construction).
    """
    if not 0.0 < delta < nmax:
        raise SdeError("barriers must satisfy 0 < delta < nmax")
    z = ens.states[:, :, list(components)]
    rho = np.sqrt((z * z).sum(axis=2))
    if not (np.all(rho[:, 0] > delta) and np.all(rho[:, 0] < nmax)):
        raise SdeError("initial radius must lie strictly inside the annulus")
    theta = np.unwrap(np.arctan2(z[:, :, 1], z[:, :, 0]), axis=1)
    n_paths, n_times = rho.shape
    outside = (rho <= delta) | (rho >= nmax)
    has = outside.any(axis=1)
    first = np.where(has, outside.argmax(axis=1), n_times - 1)
    inherited = np.asarray(ens.stop_index, dtype=np.int64)
    inherited_live = np.array([r != "none" for r in ens.stop_reason])
    eff_inherited = np.where(inherited_live, inherited, n_times - 1)
    stop = np.minimum(np.where(has, first, n_times - 1), eff_inherited)
    cols = np.arange(n_times)[None, :]
    frozen = np.minimum(cols, stop[:, None])
    rows = np.arange(n_paths)[:, None]
    rho = rho[rows, frozen]
    theta = theta[rows, frozen]
    reasons = []
    for i in range(n_paths):
        if has[i] and first[i] <= eff_inherited[i]:
            reasons.append("hit_inner" if rho[i, stop[i]] <= delta
                           else "hit_outer")
        elif inherited_live[i]:
            reasons.append(ens.stop_reason[i])
        else:
            reasons.append("none")
    return PolarEnsemble(grid=ens.grid, rho=rho, theta=theta,
                         stop_index=stop, stop_time=ens.grid[stop],
                         stop_reason=tuple(reasons), delta=float(delta),
                         nmax=float(nmax))
