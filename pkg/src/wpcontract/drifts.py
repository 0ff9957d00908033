"""Drift/diffusion model catalog and dissipativity profiles.

A model is the SDE  dX_t = sigma dB_t + b(X_t) dt  with constant
non-degenerate sigma.  Its dissipativity profile

    kappa(r) = sup { <s_inv(x-y), s_inv(b(x)-b(y))> / (2 |s_inv(x-y)|)
                     over pairs with |s_inv(x-y)| = r },      s_inv = sigma^-1,

is negative at separations where the drift pulls coupled copies together.
Catalog families have closed-form (or 1d-reducible) profiles; arbitrary
drifts get certified lower bounds by sampling.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.optimize import minimize_scalar

FAMILIES = ("linear", "flat_potential", "superconvex", "double_well",
            "piecewise", "custom")

_PIECEWISE_RAMP = 1e-3  # smoothing window for the piecewise drift, in units of L


class UnsupportedConfigurationError(ValueError):
    """Requested analytic reduction is not available for this model."""


class HypothesisViolatedError(ValueError):
    """A stated hypothesis fails on the verification grid."""


class MissingCertificateError(ValueError):
    """Operation needs a dissipativity certificate and none is attached."""


@dataclass(frozen=True)
class DriftModel:
    """Catalog drift with constant diffusion matrix.

    sigma_cond is the two-sided norm-equivalence constant:
    sigma_cond^-1 |z| <= |sigma^-1 z| <= sigma_cond |z| for all z.
    """

    dim: int
    family: str
    params: dict
    sigma: np.ndarray
    sigma_inv: np.ndarray
    sigma_cond: float
    drift_fn: Optional[Callable[[np.ndarray], np.ndarray]] = None

    @property
    def sigma_scalar(self) -> Optional[float]:
        """The scalar s if sigma == s * Id, else None."""
        s = self.sigma[0, 0]
        if np.allclose(self.sigma, s * np.eye(self.dim), rtol=0.0, atol=0.0):
            return float(s)
        return None

    def drift(self, x: np.ndarray) -> np.ndarray:
        """b(x), vectorised over leading axes; x has shape (..., dim)."""
        x = np.asarray(x, dtype=float)
        fam = self.family
        if fam == "linear":
            return -self.params["K"] * x
        if fam == "flat_potential":
            delta = self.params["delta"]
            sq = np.sum(x * x, axis=-1, keepdims=True)
            return -delta * (1.0 + sq) ** (delta / 2.0 - 1.0) * x
        if fam == "superconvex":
            alpha = self.params["alpha"]
            sq = np.sum(x * x, axis=-1, keepdims=True)
            # grad of -|x|^(2 alpha); the power 2 alpha - 2 > 0 so b(0) = 0
            with np.errstate(invalid="ignore"):
                out = -2.0 * alpha * sq ** (alpha - 1.0) * x
            return np.where(sq > 0.0, out, 0.0)
        if fam == "double_well":
            sq = np.sum(x * x, axis=-1, keepdims=True)
            return x - sq * x
        if fam == "piecewise":
            k1, k2, big_l = self.params["K1"], self.params["K2"], self.params["L"]
            w = _PIECEWISE_RAMP * big_l
            nrm = np.sqrt(np.sum(x * x, axis=-1, keepdims=True))
            t = np.clip((nrm - (big_l - w / 2.0)) / w, 0.0, 1.0)
            s = k1 + (-k2 - k1) * t
            return s * x
        if fam == "custom":
            return np.asarray(self.drift_fn(x), dtype=float)
        raise UnsupportedConfigurationError(f"unknown family {fam!r}")


def make_model(family: str, dim: int = 1, sigma=1.0, drift_fn=None,
               **params) -> DriftModel:
    """Construct and validate a DriftModel.

    sigma may be a scalar (meaning sigma * Id) or a (dim, dim) row-major matrix.
    """
    if family not in FAMILIES:
        raise ValueError(f"family must be one of {FAMILIES}, got {family!r}")
    if dim < 1:
        raise ValueError("dimension must be a positive integer")
    if family == "linear" and "K" not in params:
        raise ValueError("linear family needs K")
    if family == "flat_potential":
        delta = params.get("delta")
        if delta is None or not (0.0 < delta < 2.0):
            raise ValueError("flat_potential needs delta in (0, 2)")
    if family == "superconvex":
        alpha = params.get("alpha")
        if alpha is None or not (alpha > 1.0):
            raise ValueError("superconvex needs alpha > 1")
    if family == "piecewise":
        for key in ("K1", "K2", "L"):
            if params.get(key) is None or params[key] <= 0:
                raise ValueError("piecewise needs K1, K2, L > 0")
    if family == "custom" and drift_fn is None:
        raise ValueError("custom family needs drift_fn")

    sig = np.asarray(sigma, dtype=float)
    if sig.ndim == 0:
        sig = float(sig) * np.eye(dim)
    if sig.shape != (dim, dim):
        raise ValueError(f"sigma must be scalar or {(dim, dim)} matrix")
    svals = np.linalg.svd(sig, compute_uv=False)
    if svals[-1] <= 0.0 or not np.all(np.isfinite(svals)):
        raise ValueError("sigma must be non-degenerate")
    sig_inv = np.linalg.inv(sig)
    cond = float(max(svals[0], 1.0 / svals[-1]))
    return DriftModel(dim=dim, family=family, params=dict(params), sigma=sig,
                      sigma_inv=sig_inv, sigma_cond=cond, drift_fn=drift_fn)


def eval_drift(model: DriftModel, x) -> np.ndarray:
    """b(x) at a single point x (shape (dim,) or scalar in 1d)."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (model.dim,):
        raise ValueError(f"x must have shape ({model.dim},)")
    if not np.all(np.isfinite(x)):
        raise ValueError("x must be finite")
    return model.drift(x)


# ---------------------------------------------------------------------------
# analytic profiles


def _flat_potential_kappa_1d(delta: float, m: float) -> float:
    # 1d reduction: sup_w [V'(w + m/2) - V'(w - m/2)] / 2 over the collinear
    # pairs, with V(u) = -(1 + u^2)^(delta/2).  Concavity gives 0 for
    # delta >= 1 (the sup is a limit at infinity).
    if delta >= 1.0:
        return 0.0

    def vprime(u):
        return -delta * u * (1.0 + u * u) ** (delta / 2.0 - 1.0)

    def objective(w):
        return -(vprime(w + m / 2.0) - vprime(w - m / 2.0)) / 2.0

    # V' turns increasing beyond (1-delta)^(-1/2); scan wide, refine locally.
    w_hi = max(10.0 * m, 100.0, 10.0 / math.sqrt(1.0 - delta))
    ws = np.concatenate([np.linspace(0.0, w_hi, 2001),
                         np.geomspace(max(w_hi, 1.0), 1e6, 200)])
    vals = (vprime(ws + m / 2.0) - vprime(ws - m / 2.0)) / 2.0
    k = int(np.argmax(vals))
    lo = ws[max(k - 1, 0)]
    hi = ws[min(k + 1, len(ws) - 1)]
    if hi > lo:
        res = minimize_scalar(objective, bounds=(lo, hi), method="bounded")
        return float(max(vals[k], -res.fun))
    return float(vals[k])


def kappa_analytic(model: DriftModel, r):
    """Closed-form dissipativity profile for catalog families with scalar sigma.

    For sigma = s * Id the profile rescales as kappa_s(r) = kappa_1(s r) / s
    where kappa_1 is the identity-diffusion profile.
    """
    if model.family == "custom":
        raise UnsupportedConfigurationError("custom drifts have no analytic profile")
    s = model.sigma_scalar
    if s is None:
        raise UnsupportedConfigurationError(
            "analytic profile requires sigma = s * Id; use kappa_sampled")

    r_arr = np.asarray(r, dtype=float)
    scalar_input = r_arr.ndim == 0
    r_arr = np.atleast_1d(r_arr)
    if np.any(r_arr <= 0.0):
        raise ValueError("r must be positive")
    m = s * r_arr  # Euclidean separation

    fam = model.family
    if fam == "linear":
        out = -model.params["K"] * m / 2.0
    elif fam == "double_well":
        # sup of <x-y, b(x)-b(y)> at |x-y| = m is m^2 (1 - m^2/4), at y = -x
        out = (m / 2.0) * (1.0 - m * m / 4.0)
    elif fam == "piecewise":
        k1, k2, big_l = model.params["K1"], model.params["K2"], model.params["L"]
        out = np.where(m <= big_l, k1 * m / 2.0, -k2 * m / 2.0)
    elif fam == "superconvex":
        alpha = model.params["alpha"]
        # extremal pair is antipodal: y = -x with |x| = m/2
        out = -alpha * 2.0 ** (2.0 - 2.0 * alpha) * m ** (2.0 * alpha - 1.0)
    elif fam == "flat_potential":
        delta = model.params["delta"]
        out = np.array([_flat_potential_kappa_1d(delta, mi) for mi in m])
    else:  # pragma: no cover
        raise UnsupportedConfigurationError(fam)

    out = out / s
    return float(out[0]) if scalar_input else out


_SAMPLE_CHUNK = 4096


def kappa_sampled(model: DriftModel, r: float, n_samples: int, rng_seed: int,
                  center_scale: float = 10.0) -> float:
    """Monte Carlo lower bound of kappa(r).

    Pairs are drawn as x = z + (r/2) sigma w, y = z - (r/2) sigma w with
    z ~ N(0, center_scale^2 Id) and w uniform on the unit sphere, so
    |sigma^-1 (x - y)| = r exactly.  The estimate is the max over samples,
    hence a lower bound of the true supremum, non-decreasing in n_samples
    for a fixed seed (samples are consumed in fixed chunked order).
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    if r <= 0:
        raise ValueError("r must be positive")
    d = model.dim
    best = -np.inf
    taken = 0
    chunk_index = 0
    while taken < n_samples:
        n = min(_SAMPLE_CHUNK, n_samples - taken)
        rng = np.random.Generator(np.random.Philox(
            np.random.SeedSequence(entropy=rng_seed, spawn_key=(chunk_index,))))
        z = rng.standard_normal((_SAMPLE_CHUNK, d)) * center_scale
        w = rng.standard_normal((_SAMPLE_CHUNK, d))
        z, w = z[:n], w[:n]
        w /= np.linalg.norm(w, axis=1, keepdims=True)
        half = (r / 2.0) * (w @ model.sigma.T)
        db = model.drift(z + half) - model.drift(z - half)
        vals = 0.5 * np.sum(w * (db @ model.sigma_inv.T), axis=1)
        best = max(best, float(np.max(vals)))
        taken += n
        chunk_index += 1
    return best


# ---------------------------------------------------------------------------
# profiles and certificates


@dataclass
class Certificate:
    """Asserts kappa(r) <= -c r^theta for all r >= eta."""

    c: float
    eta: float
    theta: float = 1.0

    def __post_init__(self):
        if self.c <= 0:
            raise ValueError("certificate needs c > 0")
        if self.eta < 0:
            raise ValueError("certificate needs eta >= 0")
        if self.theta < 1:
            raise ValueError("certificate needs theta >= 1")
        if self.theta > 1 and self.eta == 0:
            raise ValueError("theta > 1 certificates need eta > 0")

    def effective_linear(self) -> "Certificate":
        """Linear (theta = 1) certificate implied for r >= eta.

        kappa <= -c r^theta <= -(c eta^(theta-1)) r there, so the slope
        rescales by eta^(theta-1).
        """
        if self.theta == 1.0:
            return self
        return Certificate(c=self.c * self.eta ** (self.theta - 1.0),
                           eta=self.eta, theta=1.0)


@dataclass
class DissipativityProfile:
    """kappa as a callable plus optional certificate metadata."""

    kappa: Callable[[np.ndarray], np.ndarray]
    certificate: Optional[Certificate] = None
    local_sup: Optional[float] = None
    critical_radii: tuple = ()

    def kappa_plus(self, r):
        return np.maximum(self.kappa(np.asarray(r, dtype=float)), 0.0)

    def table(self, grid) -> np.ndarray:
        grid = np.asarray(grid, dtype=float)
        k = self.kappa(grid)
        return np.column_stack([grid, k, np.maximum(k, 0.0)])

    def to_csv(self, path, grid) -> None:
        rows = self.table(grid)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["r", "kappa", "kappa_plus"])
            writer.writerows(rows.tolist())


def profile_from_model(model: DriftModel,
                       certificate: Optional[Certificate] = None) -> DissipativityProfile:
    """Dissipativity profile backed by the analytic catalog formula."""
    def kap(r):
        return kappa_analytic(model, r)

    crit = ()
    s = model.sigma_scalar
    if s is not None:
        if model.family == "double_well":
            crit = (2.0 / (math.sqrt(3.0) * s),)
        elif model.family == "piecewise":
            crit = (model.params["L"] / s,)
    if certificate is None:
        certificate = default_certificate(model)
    return DissipativityProfile(kappa=kap, certificate=certificate,
                                critical_radii=crit)


def default_certificate(model: DriftModel) -> Optional[Certificate]:
    """A sound certificate for catalog families, when one exists."""
    s = model.sigma_scalar
    if s is None:
        return None
    fam = model.family
    if fam == "linear" and model.params["K"] > 0:
        return Certificate(c=model.params["K"] / 2.0, eta=0.0, theta=1.0)
    if fam == "double_well":
        # r/2 - r^3/8 <= -r^3/16 iff r^2 >= 8 (identity diffusion)
        if s == 1.0:
            return Certificate(c=1.0 / 16.0, eta=2.0 * math.sqrt(2.0), theta=3.0)
        prof = DissipativityProfile(kappa=lambda r: kappa_analytic(model, r))
        return fit_certificate(prof, theta=3.0, eta=2.0 * math.sqrt(2.0) / s)
    if fam == "superconvex":
        alpha = model.params["alpha"]
        theta = 2.0 * alpha - 1.0
        prof = DissipativityProfile(kappa=lambda r: kappa_analytic(model, r))
        return fit_certificate(prof, theta=theta, eta=1.0)
    if fam == "piecewise":
        return Certificate(c=model.params["K2"] / 2.0, eta=model.params["L"] / s,
                           theta=1.0)
    return None


def fit_certificate(profile: DissipativityProfile, theta: float, eta: float,
                    r_max: float = 50.0, n_grid: int = 2000) -> Certificate:
    """Largest safe c with kappa(r) <= -c r^theta on [eta, r_max] (grid fit).

    The fitted c is deflated slightly so the certificate re-checks cleanly.
    """
    grid = np.linspace(max(eta, 1e-6), r_max, n_grid)
    ratios = -profile.kappa(grid) / grid ** theta
    c = float(np.min(ratios))
    if c <= 0:
        raise HypothesisViolatedError(
            f"kappa is not dominated by -c r^{theta} on [{eta}, {r_max}]")
    return Certificate(c=c * (1.0 - 1e-9), eta=eta, theta=theta)


@dataclass
class ChainingResult:
    slope: float
    threshold: float
    delta0: float


def chaining_bound(profile: DissipativityProfile, r0: float, c: float,
                   n_grid: int = 10_000) -> ChainingResult:
    """Upgrade a single-point bound kappa(r0) <= -c to a linear certificate.

    With delta0 = sup of kappa over [0, r0], splitting any long segment into
    sub-segments of sigma-length r0 gives kappa(r) <= delta0/2 + c - (c/r0) r,
    hence kappa(r) <= -(c/(2 r0)) r for all r >= r0 (delta0 + 2c) / c.
    The derived linear certificate is recorded on the profile.
    """
    if r0 <= 0 or c <= 0:
        raise ValueError("need r0 > 0 and c > 0")
    k_r0 = float(profile.kappa(np.asarray([r0]))[0])
    if k_r0 > -c + 1e-12:
        raise HypothesisViolatedError(
            f"kappa(r0) = {k_r0:.6g} does not satisfy kappa(r0) <= -{c:.6g}")

    grid = np.concatenate(([r0 * 1e-9], np.linspace(0.0, r0, n_grid)[1:]))
    cand = profile.kappa(grid)
    m = float(np.max(cand))
    for rc in profile.critical_radii:
        if 0.0 < rc <= r0:
            m = max(m, float(profile.kappa(np.asarray([rc]))[0]))
    if not np.isfinite(m):
        raise HypothesisViolatedError("kappa unbounded on [0, r0]")
    delta0 = m + 0.01 * abs(m)  # safety inflation keeps the bound sound

    slope = c / (2.0 * r0)
    threshold = r0 * (delta0 + 2.0 * c) / c
    profile.local_sup = delta0
    profile.certificate = Certificate(c=slope, eta=threshold, theta=1.0)
    return ChainingResult(slope=slope, threshold=threshold, delta0=delta0)


@dataclass
class CertificateReport:
    grid: np.ndarray
    margins: np.ndarray
    passed: bool


def check_certificate(profile: DissipativityProfile, grid,
                      tol: float = 1e-9) -> CertificateReport:
    """Per-point margins kappa(r) + c r^theta on a grid within [eta, inf)."""
    cert = profile.certificate
    if cert is None:
        raise MissingCertificateError("profile has no certificate to check")
    grid = np.asarray(grid, dtype=float)
    if np.any(grid < cert.eta - 1e-12):
        raise ValueError("verification grid must lie in [eta, inf)")
    margins = profile.kappa(grid) + cert.c * grid ** cert.theta
    return CertificateReport(grid=grid, margins=margins,
                             passed=bool(np.all(margins <= tol)))
