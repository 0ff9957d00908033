import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wpcontract.drifts import (Certificate, DissipativityProfile,
                               HypothesisViolatedError,
                               MissingCertificateError,
                               UnsupportedConfigurationError, chaining_bound,
                               check_certificate, default_certificate,
                               eval_drift, fit_certificate, kappa_analytic,
                               kappa_sampled, make_model, profile_from_model)


def test_eval_drift_linear():
    m = make_model("linear", dim=2, K=1.0)
    assert np.allclose(eval_drift(m, [2.0, 0.0]), [-2.0, 0.0])


def test_eval_drift_flat_potential_origin():
    m = make_model("flat_potential", delta=1.0)
    assert eval_drift(m, [0.0]) == pytest.approx(0.0)


def test_eval_drift_double_well():
    m = make_model("double_well")
    assert eval_drift(m, [2.0])[0] == pytest.approx(-6.0)
    # wells at +-1 are fixed points
    assert eval_drift(m, [1.0])[0] == 0.0
    assert eval_drift(m, [-1.0])[0] == 0.0


def test_eval_drift_rejects_nonfinite():
    m = make_model("linear", K=1.0)
    with pytest.raises(ValueError):
        eval_drift(m, [np.inf])


def test_model_validation():
    with pytest.raises(ValueError):
        make_model("flat_potential", delta=2.5)
    with pytest.raises(ValueError):
        make_model("superconvex", alpha=1.0)
    with pytest.raises(ValueError):
        make_model("linear", K=1.0, sigma=np.zeros((1, 1)))
    with pytest.raises(ValueError):
        make_model("nope")


def test_sigma_cond_two_sided_bound():
    rng = np.random.default_rng(0)
    sigma = np.array([[2.0, 0.3], [0.0, 0.5]])
    m = make_model("custom", dim=2, sigma=sigma, drift_fn=lambda x: -x)
    z = rng.standard_normal((10_000, 2))
    norms = np.linalg.norm(z, axis=1)
    inv_norms = np.linalg.norm(z @ m.sigma_inv.T, axis=1)
    c6 = m.sigma_cond
    assert np.all(inv_norms <= c6 * norms * (1 + 1e-12))
    assert np.all(inv_norms >= norms / c6 * (1 - 1e-12))


def test_kappa_analytic_linear():
    m = make_model("linear", K=1.0)
    assert kappa_analytic(m, 3.0) == pytest.approx(-1.5, abs=0.0)


def test_kappa_analytic_double_well_extremal_pair():
    m = make_model("double_well")
    r = 2.0 * math.sqrt(2.0)
    assert kappa_analytic(m, r) == pytest.approx(-math.sqrt(2.0), rel=1e-12)
    # cross-check the closed form against a direct 2d maximisation over
    # midpoint m and separation r: value = (r/2)(1 - 3m^2 - r^2/4)
    for rr in (0.5, 1.0, 3.0):
        mids = np.linspace(-3, 3, 2001)
        vals = (rr / 2.0) * (1.0 - 3.0 * mids ** 2 - rr ** 2 / 4.0)
        assert kappa_analytic(m, rr) == pytest.approx(vals.max(), rel=1e-9)


def test_kappa_analytic_flat_potential():
    short = make_model("flat_potential", delta=0.5)
    assert kappa_analytic(short, 100.0) >= 0.0
    zero = make_model("flat_potential", delta=1.5)
    for r in (0.1, 1.0, 10.0):
        assert kappa_analytic(zero, r) == 0.0


def test_kappa_analytic_piecewise_declared_profile():
    m = make_model("piecewise", K1=1.0, K2=2.0, L=3.0)
    assert kappa_analytic(m, 2.0) == pytest.approx(1.0)
    assert kappa_analytic(m, 4.0) == pytest.approx(-4.0)


def test_kappa_analytic_superconvex_against_1d_scan():
    m = make_model("superconvex", alpha=1.5)
    # kappa(r) = -alpha 2^(2-2alpha) r^(2alpha-1) = -0.75 r^2 for alpha = 1.5
    assert kappa_analytic(m, 2.0) == pytest.approx(-3.0, rel=1e-12)
    # direct 1d scan over collinear pairs
    def vprime(u):
        return -3.0 * np.abs(u) ** 2 * np.sign(u)
    for r in (0.5, 2.0):
        y = np.linspace(-10, 10, 40001)
        scan = np.max((vprime(y + r) - vprime(y)) / 2.0)
        assert kappa_analytic(m, r) == pytest.approx(scan, abs=1e-6)


def test_kappa_analytic_scalar_sigma_rescaling():
    # sigma = s Id rescales the profile as kappa_s(r) = kappa_1(s r) / s
    m2 = make_model("double_well", sigma=2.0)
    m1 = make_model("double_well")
    for r in (0.5, 1.0, 2.0):
        assert kappa_analytic(m2, r) == pytest.approx(
            kappa_analytic(m1, 2.0 * r) / 2.0, rel=1e-12)


def test_kappa_analytic_rejects_matrix_sigma_and_custom():
    skew = make_model("custom", dim=2, sigma=np.array([[1.0, 0.5], [0.0, 1.0]]),
                      drift_fn=lambda x: -x)
    with pytest.raises(UnsupportedConfigurationError):
        kappa_analytic(skew, 1.0)
    cust = make_model("custom", dim=1, drift_fn=lambda x: -x)
    with pytest.raises(UnsupportedConfigurationError):
        kappa_analytic(cust, 1.0)


def test_kappa_sampled_linear_constant_value():
    m = make_model("linear", dim=3, K=1.0)
    assert kappa_sampled(m, 2.0, 100, rng_seed=0) == pytest.approx(-1.0, abs=1e-12)
    assert kappa_sampled(m, 2.0, 1, rng_seed=5) == pytest.approx(-1.0, abs=1e-12)


def test_kappa_sampled_double_well_brackets_truth():
    m = make_model("double_well")
    true = 0.375  # (1/2)(1 - 1/4) at r = 1
    est = kappa_sampled(m, 1.0, 100_000, rng_seed=1)
    assert est <= true + 1e-12
    assert est >= true - 1e-3


def test_kappa_sampled_nested_monotone():
    m = make_model("double_well", dim=2)
    for seed in (0, 7, 123):
        small = kappa_sampled(m, 1.5, 1, rng_seed=seed)
        big = kappa_sampled(m, 1.5, 1000, rng_seed=seed)
        assert small <= big


def test_kappa_sampled_nested_across_chunks():
    # chunked sub-streams are max-reduced in order, so nesting survives
    # chunk boundaries (chunk size 4096)
    m = make_model("double_well", dim=2)
    a = kappa_sampled(m, 1.5, 4096, rng_seed=9)
    b = kappa_sampled(m, 1.5, 4096 + 100, rng_seed=9)
    c = kappa_sampled(m, 1.5, 3 * 4096, rng_seed=9)
    assert a <= b <= c


@pytest.mark.parametrize("family,params,r_values", [
    ("linear", {"K": 2.0}, (0.5, 1.0, 4.0)),
    ("double_well", {}, (0.5, 1.0, 2.0, 4.0)),
    ("flat_potential", {"delta": 1.5}, (0.5, 2.0)),
    ("flat_potential", {"delta": 0.7}, (1.0, 5.0)),
    ("superconvex", {"alpha": 1.5}, (0.5, 2.0)),
    # piecewise: the declared profile is the true sup only below L
    ("piecewise", {"K1": 1.0, "K2": 2.0, "L": 3.0}, (0.5, 2.0)),
])
def test_sampled_never_exceeds_analytic(family, params, r_values):
    m = make_model(family, **params)
    for r in r_values:
        assert kappa_sampled(m, r, 2000, rng_seed=3) <= \
            kappa_analytic(m, r) + 1e-12


def test_flat_potential_zero_profile_one_sided():
    # the sup is 0 but attained only in the pair-center limit, so the
    # sampled lower bound is strictly negative; it must never exceed 0
    m = make_model("flat_potential", delta=1.5)
    for r in (0.5, 1.0, 4.0):
        est = kappa_sampled(m, r, 100_000, rng_seed=2)
        assert est <= 1e-6 * (1.0 + r)
        assert est < 0.0


@settings(max_examples=25, deadline=None)
@given(r=st.floats(0.05, 8.0), k=st.floats(0.1, 4.0))
def test_linear_sampled_equals_analytic_everywhere(r, k):
    m = make_model("linear", dim=2, K=k)
    assert kappa_sampled(m, r, 8, rng_seed=11) == pytest.approx(
        kappa_analytic(m, r), abs=1e-10)


# ---------------------------------------------------------------------------
# certificates


def test_chaining_bound_linear_profile():
    prof = DissipativityProfile(kappa=lambda r: -np.asarray(r) / 2.0)
    res = chaining_bound(prof, r0=2.0, c=1.0)
    assert res.slope == pytest.approx(0.25)
    assert res.threshold == pytest.approx(4.0, rel=1e-6)
    # the derived certificate is recorded and re-checks
    assert prof.certificate.c == pytest.approx(0.25)
    report = check_certificate(prof, np.linspace(res.threshold, 50.0, 200))
    assert report.passed


def test_chaining_bound_double_well():
    m = make_model("double_well")
    prof = profile_from_model(m, certificate=None)
    res = chaining_bound(prof, r0=4.0, c=6.0)
    assert res.slope == pytest.approx(0.75)
    # local sup of kappa on [0, 4] sits at r = 2/sqrt(3), value 2/(3 sqrt(3)),
    # and is stored with the 1% safety inflation
    delta0_true = 2.0 / (3.0 * math.sqrt(3.0))
    assert res.delta0 == pytest.approx(delta0_true * 1.01, rel=1e-6)
    assert res.threshold == pytest.approx(4.0 * (res.delta0 + 12.0) / 6.0)
    report = check_certificate(prof, np.linspace(res.threshold, 40.0, 1000))
    assert report.passed


def test_chaining_bound_rejects_bad_hypothesis():
    prof = DissipativityProfile(kappa=lambda r: np.ones_like(np.asarray(r)))
    with pytest.raises(HypothesisViolatedError):
        chaining_bound(prof, r0=1.0, c=1.0)


@settings(max_examples=30, deadline=None)
@given(k=st.floats(0.2, 4.0), r0=st.floats(0.5, 6.0), frac=st.floats(0.1, 1.0))
def test_chaining_certificate_always_recheckable(k, r0, frac):
    # whenever the pointwise hypothesis holds, the derived linear certificate
    # must survive its own re-check on a verification grid
    prof = DissipativityProfile(kappa=lambda r: -k * np.asarray(r) / 2.0)
    c = frac * k * r0 / 2.0
    res = chaining_bound(prof, r0=r0, c=c)
    grid = np.linspace(res.threshold, 10.0 * res.threshold, 300)
    assert check_certificate(prof, grid).passed


@settings(max_examples=20, deadline=None)
@given(r0=st.floats(3.2, 6.0))
def test_chaining_certificate_double_well_family(r0):
    m = make_model("double_well")
    prof = profile_from_model(m, certificate=None)
    c = -float(kappa_analytic(m, r0)) * 0.9
    res = chaining_bound(prof, r0=r0, c=c)
    grid = np.linspace(res.threshold, 10.0 * res.threshold, 300)
    assert check_certificate(prof, grid).passed


def test_check_certificate_linear_boundary_margins():
    m = make_model("linear", K=1.0)
    prof = profile_from_model(m, Certificate(c=0.5, eta=0.0, theta=1.0))
    report = check_certificate(prof, [0.1, 1.0, 10.0])
    assert report.passed
    assert np.allclose(report.margins, 0.0)


def test_check_certificate_double_well():
    m = make_model("double_well")
    prof = profile_from_model(m)  # (c=1/16, eta=2 sqrt 2, theta=3)
    grid = np.linspace(2.0 * math.sqrt(2.0), 20.0, 100)
    assert check_certificate(prof, grid).passed

    bad = profile_from_model(m, Certificate(c=1.0, eta=1.0, theta=3.0))
    report = check_certificate(bad, [1.0])
    assert not report.passed
    assert report.margins[0] == pytest.approx(0.375 + 1.0)


def test_check_certificate_requires_certificate_and_valid_grid():
    prof = DissipativityProfile(kappa=lambda r: -np.asarray(r))
    with pytest.raises(MissingCertificateError):
        check_certificate(prof, [1.0])
    prof.certificate = Certificate(c=1.0, eta=2.0)
    with pytest.raises(ValueError):
        check_certificate(prof, [1.0])  # below eta


def test_fit_certificate_superconvex():
    m = make_model("superconvex", alpha=1.5)
    prof = DissipativityProfile(kappa=lambda r: kappa_analytic(m, r))
    cert = fit_certificate(prof, theta=2.0, eta=1.0)
    assert cert.c == pytest.approx(0.75, rel=1e-6)
    prof.certificate = cert
    assert check_certificate(prof, np.linspace(1.0, 30.0, 200)).passed


def test_default_certificates():
    assert default_certificate(make_model("linear", K=2.0)).c == 1.0
    dw = default_certificate(make_model("double_well"))
    assert (dw.c, dw.theta) == (1.0 / 16.0, 3.0)
    assert dw.eta == pytest.approx(2.0 * math.sqrt(2.0))
    assert default_certificate(make_model("flat_potential", delta=1.5)) is None


def test_profile_table_and_csv(tmp_path):
    prof = profile_from_model(make_model("double_well"))
    grid = np.linspace(0.5, 4.0, 8)
    table = prof.table(grid)
    assert table.shape == (8, 3)
    assert np.all(table[:, 2] == np.maximum(table[:, 1], 0.0))
    path = tmp_path / "profile.csv"
    prof.to_csv(path, grid)
    body = path.read_text().splitlines()
    assert body[0] == "r,kappa,kappa_plus"
    assert len(body) == 9
