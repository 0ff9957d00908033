"""Auxiliary contraction function and explicit rate certificates.

Given a linear dissipativity certificate kappa(r) <= -c r for r >= eta and a
tuning parameter eps in (0, c), the auxiliary function

    psi(r) = int_0^r exp(-int_0^s kstar) { int_s^inf exp(int_0^u [kstar + eps v] dv) du } ds,

    kstar(r) = kappa_plus(r) on (0, eta],   -c r on (eta, inf),

is strictly increasing, behaves linearly near 0, grows like exp(eps r^2/2)
at infinity, and satisfies the differential inequality

    psi''(r) + kappa(r) psi'(r) <= -lam psi(r)

with the explicit rate lam = min{2, 2/eps} / C0(eps)
* exp(-(c/2) eta^2 - int_0^eta kappa_plus).  Under the reflection coupling
this forces E psi(r_t) <= psi(r_0) e^{-lam t}, which converts into
W_p contraction bounds for every p >= 1.

Numerics: beyond max(s, eta) the inner improper integral is exactly Gaussian
and reduces to the complementary error function, so the only quadrature is
over bounded intervals (composite Gauss-Legendre panels).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.integrate import quad
from scipy.interpolate import PchipInterpolator
from scipy.special import erfcx

from .drifts import Certificate, DissipativityProfile, DriftModel
from .quadrature import cumulative_integral, geometric_then_uniform, panel_nodes


class InvalidParameterError(ValueError):
    pass


class GridTooShortError(ValueError):
    pass


def cbar0_constant(eps: float) -> float:
    """min{2, 2/eps}: relates exp(eps r^2/2) to the comparison shape psi2."""
    if eps <= 0:
        raise InvalidParameterError("eps must be positive")
    return min(2.0, 2.0 / eps)


def c0_constant(eps: float, c: float) -> float:
    """Explicit upper comparison constant between psi1 and psi2.

    Max of two closed-form branches; the first dominates the pre-Gaussian
    range r <= 2/sqrt(eps), the second the Gaussian tail.  Diverges as
    eps -> 0+ or eps -> c-.
    """
    if not (0.0 < eps < c):
        raise InvalidParameterError("need 0 < eps < c")
    e2 = math.exp(2.0)
    first = (2.0 * e2 / eps) * (1.0 + 2.0 / math.sqrt(eps)) * math.sqrt(2.0 / (c - eps))
    second = ((2.0 + math.sqrt(eps)) / (eps * (1.0 - math.exp(-2.0)))) * (
        2.0 * math.sqrt(2.0) * e2 / math.sqrt(eps * (c - eps)) + 1.0 / (c - eps))
    return max(first, second)


# ---------------------------------------------------------------------------
# comparison shapes psi1, psi2


def psi2(eps: float, r):
    """(exp(eps r^2/2) - 1) / (r (1 + r)), the two-regime comparison shape."""
    r = np.asarray(r, dtype=float)
    return np.expm1(eps * r * r / 2.0) / (r * (1.0 + r))


def psi1(eps: float, c: float, r) -> np.ndarray:
    """int_0^r e^{c s^2/2} (int_s^inf e^{-(c-eps) u^2/2} du) ds.

    The inner integral is sqrt(pi/(2(c-eps))) erfc(s sqrt((c-eps)/2)); combined
    with the outer exponential via erfcx to keep everything finite:

        integrand(s) = sqrt(pi/(2(c-eps))) e^{eps s^2/2} erfcx(s sqrt((c-eps)/2)).
    """
    if not (0.0 < eps < c):
        raise InvalidParameterError("need 0 < eps < c")
    r = np.atleast_1d(np.asarray(r, dtype=float))
    q = math.sqrt((c - eps) / 2.0)
    amp = math.sqrt(math.pi / (2.0 * (c - eps)))

    def integrand(s):
        return amp * np.exp(eps * s * s / 2.0) * erfcx(q * s)

    out = np.empty_like(r)
    for i, ri in enumerate(r):
        n_panels = max(64, int(4.0 * eps * ri * ri) + 1)
        knots = np.linspace(0.0, ri, n_panels + 1)
        pts, wts = panel_nodes(knots, 16)
        out[i] = float(np.dot(integrand(pts), wts))
    return out


def psi1_psi2_ratio(eps: float, c: float, r) -> np.ndarray:
    """psi1(r)/psi2(r); tends to (2/eps) sqrt(pi/(2(c-eps))) at 0 and
    1/(eps (c-eps)) at infinity."""
    r = np.atleast_1d(np.asarray(r, dtype=float))
    return psi1(eps, c, r) / psi2(eps, r)


def ratio_small_r_limit(eps: float, c: float) -> float:
    return (2.0 / eps) * math.sqrt(math.pi / (2.0 * (c - eps)))


def ratio_large_r_limit(eps: float, c: float) -> float:
    return 1.0 / (eps * (c - eps))


def observed_ratio_bounds(eps: float, c: float, n_grid: int = 400):
    """Numerically observed (inf, sup) of psi1/psi2 over (0, 12/sqrt(eps)].

    The infimum has no closed form; it is reported as an observation, never
    certified.  The supremum must stay below c0_constant.
    """
    rr = np.geomspace(1e-3, 12.0 / math.sqrt(eps), n_grid)
    ratios = psi1_psi2_ratio(eps, c, rr)
    return float(np.min(ratios)), float(np.max(ratios))


# ---------------------------------------------------------------------------
# auxiliary function construction


@dataclass
class AuxiliaryFunction:
    """Tabulated psi, psi', psi'' with the construction parameters.

    psi'' is stored through the construction identity
    psi'' = -kstar psi' - exp(eps r^2/2), which is exact given psi';
    finite differences of the tables are only a cross-check.
    """

    eps: float
    eta: float
    c: float
    grid: np.ndarray
    psi: np.ndarray
    psi_prime: np.ndarray
    psi_double_prime: np.ndarray
    kappa_star: Callable[[np.ndarray], np.ndarray]
    kplus_integral_eta: float
    psi_prime_exact: Callable[[np.ndarray], np.ndarray] = field(repr=False,
                                                               default=None)
    _interp_psi: PchipInterpolator = field(repr=False, default=None)
    _interp_dpsi: PchipInterpolator = field(repr=False, default=None)

    @property
    def r_max(self) -> float:
        return float(self.grid[-1])

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        if np.any(r < 0.0) or np.any(r > self.r_max + 1e-12):
            raise ValueError(f"psi tabulated on [0, {self.r_max:g}] only")
        return self._interp_psi(np.clip(r, 0.0, self.r_max))

    def prime(self, r):
        r = np.asarray(r, dtype=float)
        if np.any(r < 0.0) or np.any(r > self.r_max + 1e-12):
            raise ValueError(f"psi' tabulated on [0, {self.r_max:g}] only")
        return self._interp_dpsi(np.clip(r, 0.0, self.r_max))

    def construction_residual(self) -> np.ndarray:
        """psi'' + kstar psi' + exp(eps r^2/2) on the grid (should vanish)."""
        kst = self.kappa_star(np.maximum(self.grid, self.grid[1] * 1e-3))
        return self.psi_double_prime + kst * self.psi_prime + np.exp(
            self.eps * self.grid ** 2 / 2.0)

    def psi_at(self, r: np.ndarray) -> np.ndarray:
        """Fresh quadrature of psi at arbitrary points (not the interpolant).

        Used to re-verify grid-derived constants on shifted grids.
        """
        pts = np.unique(np.asarray(r, dtype=float))
        if np.any(pts < 0.0):
            raise ValueError("r must be >= 0")
        top = float(pts[-1])
        knots = np.unique(np.concatenate(
            ([0.0], pts, np.linspace(0.0, top, 4097) if top > 0 else [0.0])))
        vals = cumulative_integral(self.psi_prime_exact, knots, n_nodes=16)
        sel = np.searchsorted(knots, pts)
        lookup = dict(zip(pts.tolist(), vals[sel].tolist()))
        return np.array([lookup[float(v)] for v in np.atleast_1d(r)])


def default_r_max(eps: float, eta: float, requested: Optional[float] = None) -> float:
    return max(12.0 / math.sqrt(eps), 4.0 * eta, requested or 0.0)


def build_psi(profile: DissipativityProfile, eps: float,
              r_max: Optional[float] = None, grid_size: int = 4096) -> AuxiliaryFunction:
    """Tabulate the auxiliary function for a linear (theta = 1) certificate.

    The grid is geometric near 0 then uniform out to
    max(12/sqrt(eps), 4 eta, r_max).  For s >= eta the inner improper
    integral has the closed form

        int_s^inf e^{A(u) + eps u^2/2} du
            = e^{A(eta) + c eta^2 / 2} sqrt(pi/(2(c-eps))) erfc(s sqrt((c-eps)/2)),

    with A(u) = int_0^u kstar, so no truncation is involved; only the
    kappa_plus piece on (0, eta] is integrated numerically (open panels,
    tolerating an integrable singularity at 0).
    """
    cert = profile.certificate
    if cert is None:
        raise InvalidParameterError("profile needs a certificate")
    if cert.theta != 1.0:
        raise InvalidParameterError(
            "certificate has theta != 1; rescale first via "
            "Certificate.effective_linear()")
    c, eta = cert.c, cert.eta
    if not (0.0 < eps < c):
        raise InvalidParameterError(f"need 0 < eps < c = {c:g}, got eps = {eps:g}")

    r_top = default_r_max(eps, eta, r_max)
    r_break = min(1.0, r_top / 16.0)
    n_geo = min(grid_size // 8, 512)
    grid = geometric_then_uniform(r_top * 1e-7, r_break, r_top,
                                  n_geo, grid_size - n_geo - 1)

    kplus = profile.kappa_plus

    # cumulative K(s) = int_0^s kappa_plus and G(s) = int_0^s e^{K + eps u^2/2}
    # on a dense sub-grid of [0, eta]
    if eta > 0.0:
        eta_knots = np.unique(np.concatenate([
            geometric_then_uniform(eta * 1e-9, min(eta / 8.0, 1.0), eta, 256, 768),
            grid[grid <= eta]]))
        kcum = cumulative_integral(kplus, eta_knots, n_nodes=16)
        kplus_fn = PchipInterpolator(eta_knots, kcum)
        kplus_eta = float(kcum[-1])

        def inner_growth(u):
            return np.exp(kplus_fn(u) + eps * u * u / 2.0)

        gcum = cumulative_integral(inner_growth, eta_knots, n_nodes=16)
        g_fn = PchipInterpolator(eta_knots, gcum)
        g_eta = float(gcum[-1])
    else:
        kplus_fn = None
        kplus_eta = 0.0
        g_fn = None
        g_eta = 0.0

    q = math.sqrt((c - eps) / 2.0)
    amp = math.sqrt(math.pi / (2.0 * (c - eps)))

    def kappa_plus_cum(s):
        if eta == 0.0:
            return np.zeros_like(s)
        out = np.where(s < eta, kplus_fn(np.minimum(s, eta)), kplus_eta)
        return out

    def psi_prime_fn(s):
        """exp(-A(s)) * int_s^inf exp(A(u) + eps u^2/2) du, vectorised."""
        s = np.asarray(s, dtype=float)
        # tail from max(s, eta): exponents combine to eps*s^2/2 for s >= eta
        above = amp * np.exp(eps * s * s / 2.0) * erfcx(q * s)
        if eta == 0.0:
            return above
        ks = kappa_plus_cum(s)
        tail_eta = amp * math.exp(kplus_eta + eps * eta * eta / 2.0) * erfcx(q * eta)
        mid = np.where(s < eta, g_eta - g_fn(np.minimum(s, eta)), 0.0)
        below = np.exp(-ks) * (mid + tail_eta)
        return np.where(s >= eta, above, below)

    psi_prime = psi_prime_fn(grid)
    psi_vals = cumulative_integral(psi_prime_fn, grid, n_nodes=8)

    def kappa_star(r):
        r = np.asarray(r, dtype=float)
        if eta == 0.0:
            return -c * r
        return np.where(r <= eta, np.maximum(profile.kappa(r), 0.0), -c * r)

    kst = kappa_star(np.maximum(grid, grid[1] * 1e-3))
    psi_dd = -kst * psi_prime - np.exp(eps * grid * grid / 2.0)

    return AuxiliaryFunction(
        eps=eps, eta=eta, c=c, grid=grid, psi=psi_vals, psi_prime=psi_prime,
        psi_double_prime=psi_dd, kappa_star=kappa_star,
        kplus_integral_eta=kplus_eta, psi_prime_exact=psi_prime_fn,
        _interp_psi=PchipInterpolator(grid, psi_vals),
        _interp_dpsi=PchipInterpolator(grid, psi_prime))


# ---------------------------------------------------------------------------
# rate certificate


@dataclass
class RateCertificate:
    """Explicit contraction rate and companion constants.

    lam, C0, Cbar0 come in closed form from (c, eta, eps); C1 (two-sided
    sandwich against r | exp-growth) and C2 (power domination r^p <= C2 psi)
    are measured on the construction grid with a 1% safety inflation.
    c/eta are the effective linear parameters; theta/c_raw remember the
    original power-type certificate when one was rescaled.
    """

    lam: float
    C0: float
    Cbar0: float
    c: float
    eta: float
    eps: float
    kappa_plus_integral: float
    theta: float = 1.0
    c_raw: Optional[float] = None
    C1: Optional[float] = None
    C2: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "lambda": self.lam, "C0": self.C0, "Cbar0": self.Cbar0,
            "c": self.c, "eta": self.eta, "eps": self.eps,
            "theta": self.theta, "c_raw": self.c_raw,
            "kappa_plus_integral": self.kappa_plus_integral,
            "C1": self.C1, "C2": {str(p): v for p, v in self.C2.items()},
        }


def lambda_rate(profile: DissipativityProfile, eps: float,
                c: Optional[float] = None, eta: Optional[float] = None) -> RateCertificate:
    """Contraction rate lam = (Cbar0/C0) exp(-(c/2) eta^2 - int_0^eta kappa_plus).

    Power-type certificates (theta > 1) are first rescaled to the implied
    linear slope c eta^(theta-1).
    """
    cert = profile.certificate
    theta = 1.0
    c_raw = None
    if c is None or eta is None:
        if cert is None:
            raise InvalidParameterError("no certificate and no explicit (c, eta)")
        theta = cert.theta
        c_raw = cert.c
        eff = cert.effective_linear()
        c, eta = eff.c, eff.eta
    if not (0.0 < eps < c):
        raise InvalidParameterError(f"need 0 < eps < c = {c:g}")
    if eta > 0.0:
        kint, _err = quad(lambda s: float(profile.kappa_plus(np.asarray([s]))[0]),
                          0.0, eta, limit=200)
    else:
        kint = 0.0
    c0 = c0_constant(eps, c)
    cbar0 = cbar0_constant(eps)
    lam = (cbar0 / c0) * math.exp(-(c / 2.0) * eta * eta - kint)
    return RateCertificate(lam=lam, C0=c0, Cbar0=cbar0, c=c, eta=eta, eps=eps,
                           kappa_plus_integral=kint, theta=theta, c_raw=c_raw)


@dataclass
class LyapunovReport:
    grid: np.ndarray
    margins: np.ndarray
    passed: bool


def verify_lyapunov_inequality(aux: AuxiliaryFunction, cert: RateCertificate,
                               kappa: Callable, tol: float = 1e-8) -> LyapunovReport:
    """Margins psi'' + kappa psi' + lam psi on the grid; pass if all <= tol."""
    same = (math.isclose(aux.eps, cert.eps, rel_tol=1e-12) and
            math.isclose(aux.eta, cert.eta, rel_tol=1e-12, abs_tol=1e-300) and
            math.isclose(aux.c, cert.c, rel_tol=1e-12))
    if not same:
        raise InvalidParameterError("aux and certificate built from different (eps, eta, c)")
    r = np.maximum(aux.grid, aux.grid[1] * 1e-3)
    margins = aux.psi_double_prime + kappa(r) * aux.psi_prime + cert.lam * aux.psi
    return LyapunovReport(grid=aux.grid, margins=margins,
                          passed=bool(np.all(margins <= tol)))


@dataclass
class SandwichConstants:
    C1: float
    C2: dict


def sandwich_constants(aux: AuxiliaryFunction, p_list=(1.0, 2.0, 4.0),
                       inflation: float = 0.01) -> SandwichConstants:
    """Grid maxima defining C1 and C2(p), inflated for safety.

    C1 bounds psi two-sidedly against g(r) = max(r, exp(eps r^2/2) - 1);
    C2(p) dominates r^p by psi.  Both ratios decay at the Gaussian tail, so
    grid maxima are global once the grid is long enough: r_max >= 8/sqrt(eps)
    and >= p max(1, 2/sqrt(eps)) are enforced.
    """
    eps = aux.eps
    if aux.r_max < 8.0 / math.sqrt(eps) - 1e-9:
        raise GridTooShortError(
            f"r_max = {aux.r_max:g} < 8/sqrt(eps) = {8.0 / math.sqrt(eps):g}")
    r = aux.grid[1:]
    psi = aux.psi[1:]
    g = np.maximum(r, np.expm1(eps * r * r / 2.0))
    c1 = float(np.max(np.maximum(psi / g, g / psi))) * (1.0 + inflation)
    c2 = {}
    for p in p_list:
        if p < 1.0:
            raise InvalidParameterError("p must be >= 1")
        need = p * max(1.0, 2.0 / math.sqrt(eps))
        if aux.r_max < need - 1e-9:
            raise GridTooShortError(
                f"r_max = {aux.r_max:g} too short for p = {p:g} (needs {need:g})")
        c2[float(p)] = float(np.max(r ** p / psi)) * (1.0 + inflation)
    return SandwichConstants(C1=c1, C2=c2)


# ---------------------------------------------------------------------------
# gauges and the W_p bound


def phi_p(p: float, r):
    """Concave C^1 gauge: r^(1/p) below the knot p^(-p/(p-1)), affine above.

    phi_1 is the identity.  Satisfies max(r, r^(1/p)) <= phi_p(r) <= r + r^(1/p).
    """
    if p < 1.0:
        raise InvalidParameterError("p must be >= 1")
    r = np.asarray(r, dtype=float)
    if np.any(r < 0.0):
        raise ValueError("r must be >= 0")
    if p == 1.0:
        return r + 0.0
    knot = p ** (-p / (p - 1.0))
    offset = p ** (-1.0 / (p - 1.0))
    return np.where(r < knot, r ** (1.0 / p), r - knot + offset)


def chaining_prefactor(cert: RateCertificate, model: DriftModel, p: float) -> float:
    """A concrete valid constant for the W_p contraction bound.

    Composes the proof chain: coupling bound + power domination (C2) +
    sandwich linearisation of psi at short range (C1 and the slope of
    exp-growth over [0, r*]) + sigma norm equivalence (C6), then segment
    chaining for separations beyond eta/C6.  Power-type certificates add the
    deterministic-collapse and eta-hitting constants of the hybrid coupling.
    """
    p = float(p)
    if cert.C1 is None or p not in cert.C2:
        raise InvalidParameterError(
            f"certificate lacks C1/C2 for p = {p:g}; run sandwich_constants first")
    c6 = model.sigma_cond
    eps, eta = cert.eps, cert.eta
    ell = eta / c6 if eta > 0.0 else 1.0   # chaining segment length in |x - y|
    r_star = c6 * ell
    m_star = max(1.0, math.expm1(eps * r_star * r_star / 2.0) / r_star)
    c_a = c6 ** ((p + 1.0) / p) * (cert.C1 * cert.C2[p] * m_star) ** (1.0 / p)
    c_b = c_a * (2.0 / ell) ** (1.0 - 1.0 / p)
    out = max(c_a, c_b)
    if cert.theta > 1.0:
        theta, c_raw = cert.theta, cert.c_raw
        t0 = eta ** (1.0 - theta) / (2.0 * c_raw * (theta - 1.0))
        m_eta = max(1.0, math.expm1(eps * eta * eta / 2.0) / eta)
        c_hit = c6 * (cert.C1 * cert.C2[p] * m_eta * eta) ** (1.0 / p) * math.exp(
            cert.lam * t0 / p)
        t_cap = min(t0, 1.0)
        c_sync = c6 * (2.0 * c_raw * (theta - 1.0)) ** (-1.0 / (theta - 1.0)) * \
            t_cap ** (1.0 - 1.0 / (theta - 1.0)) * math.exp(cert.lam * t_cap / p)
        out = max(out, c_hit, c_sync)
    return out


def wp_bound(cert: RateCertificate, model: DriftModel, p: float, t: float,
             x, y, C: Optional[float] = None) -> float:
    """Right-hand side of the W_p contraction bound at time t.

    C e^{-lam t / p} times the separation gauge: |x-y|^{1/p} for |x-y| <= 1,
    |x-y| beyond (capped additionally by 1/min(t,1) for power-type
    certificates).  C defaults to the proof-derived chaining prefactor.
    """
    if C is None:
        C = chaining_prefactor(cert, model, p)
    dist = float(np.linalg.norm(np.atleast_1d(np.asarray(x, dtype=float)) -
                                np.atleast_1d(np.asarray(y, dtype=float))))
    if dist <= 1.0:
        gauge = dist ** (1.0 / p)
    elif cert.theta > 1.0 and t > 0.0:
        gauge = min(dist, 1.0 / min(t, 1.0))
    else:
        gauge = dist
    return C * math.exp(-cert.lam * t / p) * gauge


def build_certificate(profile: DissipativityProfile, eps: Optional[float] = None,
                      p_list=(1.0, 2.0, 4.0), r_max: Optional[float] = None,
                      grid_size: int = 4096):
    """Full pipeline: rescale theta, build psi, rate, sandwich constants.

    eps defaults to c_eff / 2.  Returns (aux, rate_certificate).
    """
    cert = profile.certificate
    if cert is None:
        raise InvalidParameterError("profile needs a certificate")
    eff = cert.effective_linear()
    if eps is None:
        eps = eff.c / 2.0
    work = DissipativityProfile(kappa=profile.kappa, certificate=eff,
                                local_sup=profile.local_sup,
                                critical_radii=profile.critical_radii)
    aux = build_psi(work, eps, r_max=r_max, grid_size=grid_size)
    rate = lambda_rate(profile, eps)
    sand = sandwich_constants(aux, p_list=p_list)
    rate.C1 = sand.C1
    rate.C2 = sand.C2
    return aux, rate
