"""Euler-Maruyama simulation of synchronous / reflection / hybrid couplings.

Two copies of  dX = sigma dB + b(X) dt  are driven by the same Brownian
increments; the reflection coupling flips the noise component along
e = sigma^-1 (X - Y) / |sigma^-1 (X - Y)| for the second copy, which makes
the separation process r_t = |sigma^-1 (X - Y)| a one-dimensional diffusion
dr = 2 dW + (drift difference) dt that can actually hit zero.  The hybrid
coupling steps synchronously while r_t > eta and switches permanently to
reflection at the first passage of eta.

Coupling-time detection on a grid uses three rules per reflection step:
sign change of the projected separation, a small absolute threshold, and a
Brownian-bridge crossing probability exp(-r r' / (2 dt)) for the in-step
minimum (the bridge rule removes the O(sqrt(dt)) barrier-monitoring bias;
for zero drift the detected law is exact).  After merging, Y is set to X
and both move together.

Reproducibility: path i draws from a counter-based Philox stream keyed by
(rng_seed, stream_namespace, i), normals first then per-step uniforms, so
ensembles are bit-identical regardless of chunking or worker count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .drifts import DriftModel

COUPLINGS = ("synchronous", "reflection", "hybrid")

_DEGENERATE_R = 1e-14
_CHUNK_BUDGET_FLOATS = 2.5e7


class DegenerateDirectionError(ValueError):
    """Reflection direction requested at (numerically) zero separation."""


class SimulationDivergedError(RuntimeError):
    def __init__(self, time: float, msg: str = ""):
        super().__init__(msg or f"non-finite state at t = {time:g}")
        self.time = time


@dataclass
class SimConfig:
    dt: float
    horizon: float
    n_paths: int = 1
    rng_seed: int = 0
    coupling: str = "reflection"
    eta: Optional[float] = None          # hybrid switch radius
    merge_threshold: Optional[float] = None  # default 1e-2 sqrt(dt)
    record_stride: int = 1
    bridge_merge: bool = True

    def __post_init__(self):
        if self.dt <= 0 or self.horizon <= 0 or self.dt > self.horizon:
            raise ValueError("need 0 < dt <= horizon")
        if self.n_paths < 1:
            raise ValueError("n_paths must be >= 1")
        if self.coupling not in COUPLINGS:
            raise ValueError(f"coupling must be one of {COUPLINGS}")
        if self.coupling == "hybrid" and (self.eta is None or self.eta <= 0):
            raise ValueError("hybrid coupling needs eta > 0")
        if self.record_stride < 1:
            raise ValueError("record_stride must be >= 1")
        if self.merge_threshold is None:
            self.merge_threshold = 1e-2 * math.sqrt(self.dt)
        if self.merge_threshold <= 0:
            raise ValueError("merge_threshold must be > 0")

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.dt))


def path_stream(rng_seed: int, index: int, namespace: int = 0) -> np.random.Generator:
    """Counter-based stream for one path, independent of scheduling."""
    ss = np.random.SeedSequence(entropy=rng_seed, spawn_key=(namespace, index))
    return np.random.Generator(np.random.Philox(ss))


# ---------------------------------------------------------------------------
# single steps (reference implementations, also used by the tests)


def step_synchronous(model: DriftModel, x, y, dw, dt: float):
    """One shared-noise step: both copies get sigma dw plus their own drift."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    dw = np.asarray(dw, dtype=float)
    sdw = dw @ model.sigma.T
    return (x + sdw + model.drift(x) * dt,
            y + sdw + model.drift(y) * dt)


def step_reflection(model: DriftModel, x, y, dw, dt: float):
    """One reflected step: Y's noise is dw mirrored across e = s_inv(x-y)/|.|."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    dw = np.asarray(dw, dtype=float)
    u = model.sigma_inv @ (x - y)
    r = float(np.linalg.norm(u))
    if r < _DEGENERATE_R:
        raise DegenerateDirectionError(
            f"separation {r:g} below {_DEGENERATE_R:g}; merge first")
    e = u / r
    dw_y = dw - 2.0 * e * float(e @ dw)
    return (x + dw @ model.sigma.T + model.drift(x) * dt,
            y + dw_y @ model.sigma.T + model.drift(y) * dt)


# ---------------------------------------------------------------------------
# ensembles


@dataclass
class CouplingEnsemble:
    """Per-slice snapshots of a batch of coupled pairs plus coupling times."""

    times: np.ndarray            # (m,)
    X: np.ndarray                # (m, n, d)
    Y: np.ndarray                # (m, n, d)
    r: np.ndarray                # (m, n), |sigma^-1 (X - Y)|, 0 after merge
    T: np.ndarray                # (n,) coupling times, +inf if not by horizon
    switch_times: Optional[np.ndarray]  # (n,) hybrid switch times, else None
    config: SimConfig
    x0: np.ndarray
    y0: np.ndarray

    @property
    def n_paths(self) -> int:
        return self.X.shape[1]

    def slice_index(self, t: float) -> int:
        idx = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[idx] - t) > 1e-9 * max(1.0, abs(t)):
            raise KeyError(f"time {t:g} not recorded; slices at stride "
                           f"{self.config.record_stride * self.config.dt:g}")
        return idx

    def coupled_fraction(self, t: float) -> float:
        return float(np.mean(self.T <= t + 1e-12))


@dataclass
class CouplingPath:
    """A single coupled trajectory (thin wrapper over a 1-path ensemble)."""

    times: np.ndarray
    X: np.ndarray                # (m, d)
    Y: np.ndarray
    r: np.ndarray                # (m,)
    T: float                     # +inf if not coupled by the horizon
    regime_switch_time: Optional[float]


def _prepare(model: DriftModel, config: SimConfig, x0, y0):
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    y0 = np.atleast_1d(np.asarray(y0, dtype=float))
    if x0.shape != (model.dim,) or y0.shape != (model.dim,):
        raise ValueError(f"x0, y0 must have shape ({model.dim},)")
    r0 = float(np.linalg.norm(model.sigma_inv @ (x0 - y0)))
    if config.coupling == "reflection" and r0 < _DEGENERATE_R:
        raise ValueError("reflection coupling needs x0 != y0")
    return x0, y0, r0


@np.errstate(over="ignore", invalid="ignore")
def simulate_ensemble(model: DriftModel, config: SimConfig, x0, y0,
                      stream_namespace: int = 0) -> CouplingEnsemble:
    """Independent coupled pairs from (x0, y0) with per-path derived streams.

    Overflow of a diverging path is silenced step-to-step and surfaced as
    SimulationDivergedError at the next recording time.
    """
    x0, y0, r0 = _prepare(model, config, x0, y0)
    d = model.dim
    n_steps = config.n_steps
    stride = config.record_stride
    dt = config.dt
    sqdt = math.sqrt(dt)
    n = config.n_paths
    hybrid = config.coupling == "hybrid"
    eta = config.eta if hybrid else None
    delta_merge = config.merge_threshold

    rec_steps = list(range(0, n_steps + 1, stride))
    if rec_steps[-1] != n_steps:
        rec_steps.append(n_steps)
    rec_index = {k: i for i, k in enumerate(rec_steps)}
    m = len(rec_steps)
    times = np.array(rec_steps, dtype=float) * dt

    X_out = np.empty((m, n, d))
    Y_out = np.empty((m, n, d))
    r_out = np.empty((m, n))
    T = np.full(n, np.inf)
    switch = np.full(n, np.nan) if hybrid else None

    chunk = max(1, min(n, int(_CHUNK_BUDGET_FLOATS / (n_steps * (d + 1) + 1))))
    sig_t = model.sigma.T
    sig_inv_t = model.sigma_inv.T

    for lo in range(0, n, chunk):
        hi = min(lo + chunk, n)
        nn = hi - lo
        normals = np.empty((nn, n_steps, d))
        uniforms = np.empty((nn, n_steps))
        for i in range(nn):
            gen = path_stream(config.rng_seed, lo + i, stream_namespace)
            normals[i] = gen.standard_normal((n_steps, d))
            uniforms[i] = gen.random(n_steps)
        normals *= sqdt

        X = np.tile(x0, (nn, 1))
        Y = np.tile(y0, (nn, 1))
        merged = np.zeros(nn, dtype=bool)
        t_cpl = np.full(nn, np.inf)
        if hybrid:
            refl = np.full(nn, r0 <= eta)
            t_switch = np.where(refl, 0.0, np.nan)
        else:
            refl = np.full(nn, config.coupling == "reflection")
            t_switch = None

        def record(slot):
            X_out[slot, lo:hi] = X
            Y_out[slot, lo:hi] = Y
            u = (X - Y) @ sig_inv_t
            rr = np.linalg.norm(u, axis=1)
            rr[merged] = 0.0
            r_out[slot, lo:hi] = rr

        record(0)
        for k in range(n_steps):
            dw = normals[:, k, :]
            bX = model.drift(X)
            bY = model.drift(Y)
            sdw = dw @ sig_t
            Xn = X + sdw + bX * dt

            u = (X - Y) @ sig_inv_t
            r = np.linalg.norm(u, axis=1)
            act_refl = refl & ~merged
            # evaluating e at numerically zero separation counts as a merge
            tiny = act_refl & (r < _DEGENERATE_R)
            if np.any(tiny):
                merged |= tiny
                t_cpl[tiny & np.isinf(t_cpl)] = k * dt
                act_refl &= ~tiny

            Yn = Y + sdw + bY * dt  # synchronous default
            if np.any(act_refl):
                idx = act_refl
                e = u[idx] / r[idx, None]
                edw = np.sum(e * dw[idx], axis=1)
                dwy = dw[idx] - 2.0 * e * edw[:, None]
                Yn[idx] = Y[idx] + dwy @ sig_t + bY[idx] * dt
                # signed projection of the new separation on the old direction
                db = (bX[idx] - bY[idx]) @ sig_inv_t
                rho = r[idx] + 2.0 * edw + np.sum(e * db, axis=1) * dt
                rn = np.linalg.norm((Xn[idx] - Yn[idx]) @ sig_inv_t, axis=1)
                hit = rho <= 0.0
                hit |= rn <= delta_merge
                if config.bridge_merge:
                    safe = ~hit
                    p_cross = np.exp(-np.clip(r[idx] * rho / (2.0 * dt), 0.0, 700.0))
                    hit |= safe & (uniforms[idx, k] < p_cross)
                sub = np.where(idx)[0][hit]
                if sub.size:
                    merged[sub] = True
                    t_cpl[sub] = (k + 1) * dt
                    Yn[sub] = Xn[sub]

            Yn[merged] = Xn[merged]
            X, Y = Xn, Yn

            if not hybrid:
                # threshold merging also applies to purely synchronous runs
                if config.coupling == "synchronous":
                    rn_all = np.linalg.norm((X - Y) @ sig_inv_t, axis=1)
                    new = ~merged & (rn_all <= delta_merge)
                    if np.any(new):
                        merged |= new
                        t_cpl[new] = (k + 1) * dt
                        Y[new] = X[new]
            else:
                rn_all = np.linalg.norm((X - Y) @ sig_inv_t, axis=1)
                new_merge = ~merged & ~refl & (rn_all <= delta_merge)
                if np.any(new_merge):
                    merged |= new_merge
                    t_cpl[new_merge] = (k + 1) * dt
                    Y[new_merge] = X[new_merge]
                flip = ~refl & ~merged & (rn_all <= eta)
                if np.any(flip):
                    refl |= flip
                    t_switch[flip] = (k + 1) * dt

            if (k + 1) in rec_index:
                if not np.all(np.isfinite(X)) or not np.all(np.isfinite(Y)):
                    raise SimulationDivergedError((k + 1) * dt)
                record(rec_index[k + 1])

        T[lo:hi] = t_cpl
        if hybrid:
            switch[lo:hi] = t_switch

    return CouplingEnsemble(times=times, X=X_out, Y=Y_out, r=r_out, T=T,
                            switch_times=switch, config=config, x0=x0, y0=y0)


def simulate_pair(model: DriftModel, config: SimConfig, x0, y0,
                  stream_namespace: int = 0) -> CouplingPath:
    """Single coupled trajectory; equals path 0 of the matching ensemble."""
    cfg = SimConfig(dt=config.dt, horizon=config.horizon, n_paths=1,
                    rng_seed=config.rng_seed, coupling=config.coupling,
                    eta=config.eta, merge_threshold=config.merge_threshold,
                    record_stride=config.record_stride,
                    bridge_merge=config.bridge_merge)
    ens = simulate_ensemble(model, cfg, x0, y0, stream_namespace)
    sw = None
    if ens.switch_times is not None:
        sw = float(ens.switch_times[0])
        if math.isnan(sw):
            sw = None
    return CouplingPath(times=ens.times, X=ens.X[:, 0, :], Y=ens.Y[:, 0, :],
                        r=ens.r[:, 0], T=float(ens.T[0]), regime_switch_time=sw)


@dataclass
class MarginalEnsemble:
    """Snapshots of independent single trajectories (no coupling)."""

    times: np.ndarray            # (m,)
    X: np.ndarray                # (m, n, d)
    config: SimConfig
    x0: np.ndarray


@np.errstate(over="ignore", invalid="ignore")
def simulate_marginal(model: DriftModel, config: SimConfig, x0,
                      stream_namespace: int = 0) -> MarginalEnsemble:
    """Plain Euler-Maruyama ensemble of the SDE itself, same stream layout."""
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if x0.shape != (model.dim,):
        raise ValueError(f"x0 must have shape ({model.dim},)")
    d = model.dim
    n_steps = config.n_steps
    stride = config.record_stride
    dt = config.dt
    n = config.n_paths

    rec_steps = list(range(0, n_steps + 1, stride))
    if rec_steps[-1] != n_steps:
        rec_steps.append(n_steps)
    rec_index = {k: i for i, k in enumerate(rec_steps)}
    times = np.array(rec_steps, dtype=float) * dt
    X_out = np.empty((len(rec_steps), n, d))

    chunk = max(1, min(n, int(_CHUNK_BUDGET_FLOATS / (n_steps * d + 1))))
    sig_t = model.sigma.T
    for lo in range(0, n, chunk):
        hi = min(lo + chunk, n)
        nn = hi - lo
        normals = np.empty((nn, n_steps, d))
        for i in range(nn):
            gen = path_stream(config.rng_seed, lo + i, stream_namespace)
            normals[i] = gen.standard_normal((n_steps, d))
        normals *= math.sqrt(dt)
        X = np.tile(x0, (nn, 1))
        X_out[0, lo:hi] = X
        for k in range(n_steps):
            X = X + normals[:, k, :] @ sig_t + model.drift(X) * dt
            if (k + 1) in rec_index:
                if not np.all(np.isfinite(X)):
                    raise SimulationDivergedError((k + 1) * dt)
                X_out[rec_index[k + 1], lo:hi] = X
    return MarginalEnsemble(times=times, X=X_out, config=config, x0=x0)


# ---------------------------------------------------------------------------
# ensemble statistics


@dataclass
class DecaySeries:
    """Monte Carlo estimate of E psi(r_t) per recorded slice."""

    times: np.ndarray
    mean: np.ndarray
    se: np.ndarray               # std / sqrt(n), normal approximation
    n_paths: int

    def ci(self, z: float = 1.96):
        return self.mean - z * self.se, self.mean + z * self.se


def expected_psi_decay(ensemble: CouplingEnsemble, aux) -> DecaySeries:
    """Mean of psi(r_t) across paths; merged paths contribute psi(0) = 0."""
    vals = aux(ensemble.r)
    mean = vals.mean(axis=1)
    se = vals.std(axis=1, ddof=1) / math.sqrt(ensemble.n_paths) \
        if ensemble.n_paths > 1 else np.zeros_like(mean)
    return DecaySeries(times=ensemble.times, mean=mean, se=se,
                       n_paths=ensemble.n_paths)
