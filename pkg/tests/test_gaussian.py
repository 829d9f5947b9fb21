import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, stats

from manistat import gaussian as g
from manistat import spectra
from manistat.errors import (ConfigError, DegenerateDispersionError, DomainError,
                             ExtrapolationError, UnsupportedError)
from manistat.manifolds import Euclidean, Hyperbolic, SpdHermitian, Sphere, geodesic_combine


def _log_radial_profile(n, c, sigma, r):
    # log of exp(-r^2/2s^2) (sinh(cr)/c)^{n-1}, safe for large r
    x = c * r
    log_sinh = x + math.log1p(-math.exp(-2 * x)) - math.log(2.0) if x > 1e-8 else math.log(x)
    return -r * r / (2 * sigma * sigma) + (n - 1) * (log_sinh - math.log(c))


def _radial_z(n, c, sigma):
    # omega_{n-1} * int exp(-r^2/2s^2) (sinh(cr)/c)^{n-1} dr, with the peak factored out
    peak = (n - 1) * c * sigma * sigma + sigma
    top = _log_radial_profile(n, c, sigma, peak)
    f = lambda r: math.exp(_log_radial_profile(n, c, sigma, r) - top) if r > 0 else 0.0
    val, _ = integrate.quad(f, 0, peak + 40 * sigma, points=[peak], epsabs=0, epsrel=1e-13, limit=200)
    return math.exp(g.log_sphere_area(n - 1) + top) * val


def _weyl_z_h2(sigma):
    # Z on H(2) from its eigenvalue integral, a ~ exp(-2|a|^2/s^2) sinh^2(a1 - a2)
    f = lambda a2, a1: math.exp(-2 * (a1 * a1 + a2 * a2) / sigma**2) * math.sinh(a1 - a2) ** 2
    L = 12 * sigma
    val, _ = integrate.dblquad(f, -L, L, -L, L, epsabs=0, epsrel=1e-11)
    return math.exp(spectra.log_omega2(2)) / 2 * val


# ---------------------------------------------------------------- normalising factors


def test_z_euclidean_2d():
    assert g.z_euclidean(2, 1.0) == pytest.approx(2 * math.pi, rel=1e-15)


@pytest.mark.parametrize("n", [1, 2, 3, 5])
def test_z_hyperbolic_flat_limit(n):
    assert g.z_hyperbolic(n, 1e-4, 0.8) == pytest.approx(g.z_euclidean(n, 0.8), rel=1e-6)


def test_z_hyperbolic_matches_radial_quadrature():
    assert g.z_hyperbolic(3, 1.0, 0.7) == pytest.approx(_radial_z(3, 1.0, 0.7), rel=1e-8)


@pytest.mark.parametrize("n,c", [(2, 1.0), (4, 0.5), (6, 2.0)])
@pytest.mark.parametrize("sigma", [0.25, 0.5, 1.0, 2.0])
def test_z_sandwich_on_hyperbolic(n, c, sigma):
    zq = _radial_z(n, c, sigma)
    assert g.z_euclidean(n, sigma) <= zq
    assert zq == pytest.approx(g.z_hyperbolic(n, c, sigma), rel=1e-8)


def test_z_spd_n2_closed_form():
    # (pi/2)^2 (e - 1) = 4.239690...
    assert g.z_spd_hermitian(2, 1.0) == pytest.approx((math.pi / 2) ** 2 * (math.e - 1), rel=1e-14)
    assert g.z_spd_hermitian(2, 1.0) == pytest.approx(4.23969047, abs=1e-8)


def test_z_spd_n1_is_empty_product():
    s = 0.7
    ref = math.exp(spectra.log_omega2(1)) / 2 * math.sqrt(2 * math.pi * s * s)
    assert g.z_spd_hermitian(1, s) == pytest.approx(ref, rel=1e-15)


@pytest.mark.parametrize("sigma", [0.3, 0.8, 1.5])
def test_z_spd_matches_weyl_integral(sigma):
    assert g.z_spd_hermitian(2, sigma) == pytest.approx(_weyl_z_h2(sigma), rel=1e-8)


@pytest.mark.parametrize("N", [1, 2, 3, 5, 8])
def test_z_spd_two_assemblies_agree(N):
    for s in (0.4, 1.0):
        assert g.log_z_spd_hermitian(N, s) == pytest.approx(g.log_z_spd_from_sw(N, s), abs=1e-10)


def test_z_montecarlo_n2_sigma08():
    mc = g.z_montecarlo(2, 2, 0.8, 100_000, seed=1)
    assert mc.normalized
    assert abs(mc.estimate - g.z_spd_hermitian(2, 0.8)) <= 3 * mc.std_err


def test_z_montecarlo_n1_has_no_variance():
    mc = g.z_montecarlo(1, 2, 0.6, 1000, seed=0)
    assert mc.std_err == 0.0
    assert mc.estimate == pytest.approx(g.z_spd_hermitian(1, 0.6), rel=1e-14)


def test_z_montecarlo_error_scales_with_samples():
    a = np.mean([g.z_montecarlo(3, 2, 0.5, 4000, s).std_err for s in range(5)])
    b = np.mean([g.z_montecarlo(3, 2, 0.5, 64000, s).std_err for s in range(5)])
    assert a / b == pytest.approx(4.0, rel=0.25)


def test_z_montecarlo_other_betas_are_unnormalized():
    mc = g.z_montecarlo(2, 1, 0.5, 2000, seed=0)
    assert not mc.normalized
    with pytest.raises(UnsupportedError):
        g.z_montecarlo(2, 3, 0.5, 2000, seed=0)
    with pytest.raises(DomainError):
        g.z_montecarlo(2, 2, 0.5, 10, seed=0)


def test_z_asymptotic_large_t_tail():
    N = 10
    for t in (50.0, 200.0):
        lead = -0.5 * math.log(2 * N / math.pi) + 0.75 + t / 6
        assert abs(g.z_asymptotic(N, t) - lead) < 2.0 / t


def test_trilog_at_inverse_e_matches_series():
    ref = math.fsum(math.exp(-k) / k**3 for k in range(1, 41))
    assert spectra.trilog(math.exp(-1.0)) == pytest.approx(ref, abs=1e-12)


def test_z_asymptotic_gap_shrinks():
    gaps = [abs(g.log_z_spd_hermitian(N, math.sqrt(1.0 / N)) / N**2 - g.z_asymptotic(N, 1.0))
            for N in (8, 16, 32, 64)]
    assert all(a > b for a, b in zip(gaps, gaps[1:]))


# ---------------------------------------------------------------- psi


def test_euclidean_psi_prime():
    for s in (0.3, 1.0, 2.0):
        _, d = g.psi_and_derivative(Euclidean(3), g.eta_of(s))
        assert d == pytest.approx(3 * s * s, rel=1e-14)


@pytest.mark.parametrize("sigma", np.geomspace(0.1, 3.0, 12))
def test_psi_prime_sandwich(sigma):
    # H(2): 4 real dimensions, sectional curvature in [-1/2, 0]
    eta = g.eta_of(sigma)
    lo = g.psi_and_derivative(Euclidean(4), eta)[1]
    mid = g.psi_and_derivative(SpdHermitian(2), eta)[1]
    hi = g.psi_and_derivative(Hyperbolic(4, 1 / math.sqrt(2)), eta)[1]
    assert lo <= mid <= hi


@pytest.mark.parametrize("m", [Euclidean(2), Hyperbolic(3), Hyperbolic(2, 0.5), SpdHermitian(2),
                               SpdHermitian(4)], ids=repr)
@pytest.mark.parametrize("sigma", [0.3, 0.9, 1.7])
def test_psi_prime_matches_finite_difference(m, sigma):
    src = g.ClosedFormPsi(m)
    eta = g.eta_of(sigma)
    h = 1e-5 * abs(eta)
    fd = (src.psi(eta + h) - src.psi(eta - h)) / (2 * h)
    assert src.psi_prime(eta) == pytest.approx(fd, rel=1e-6)


def test_psi_table_matches_closed_form():
    m = Hyperbolic(2)
    src = g.ClosedFormPsi(m)
    tab = g.PsiTable.build(m, src.log_z, 0.05, 3.0)
    for s in np.geomspace(0.06, 2.9, 17):
        e = g.eta_of(s)
        assert tab.psi(e) == pytest.approx(src.psi(e), rel=1e-5)
        assert tab.psi_prime(e) == pytest.approx(src.psi_prime(e), rel=1e-3)


def test_psi_table_json_roundtrip_and_range():
    m = SpdHermitian(2)
    tab = g.PsiTable.build(m, g.ClosedFormPsi(m).log_z, 0.1, 2.0, nodes_per_decade=16)
    back = g.PsiTable.from_json(tab.to_json())
    assert back.manifold == m
    assert np.array_equal(back.sigma_nodes, tab.sigma_nodes)
    e = g.eta_of(0.5)
    assert back.psi(e) == tab.psi(e)
    with pytest.raises(ExtrapolationError):
        tab.psi(g.eta_of(5.0))
    with pytest.raises(ConfigError):
        g.PsiTable.from_json(json.dumps({"sigma_nodes": [1, 2, 3, 4]}))


def test_psi_table_for_sphere_from_quadrature():
    # no closed form on S^2: tabulate Z = 2 pi int exp(-r^2/2s^2) sin r dr
    m = Sphere(2)

    def log_z(s):
        v, _ = integrate.quad(lambda r: math.exp(-r * r / (2 * s * s)) * math.sin(r), 0, math.pi,
                              epsabs=0, epsrel=1e-13)
        return math.log(2 * math.pi * v)

    tab = g.PsiTable.build(m, log_z, 0.1, 1.0, nodes_per_decade=32)
    e = tab.eta_nodes
    assert np.all(np.diff(tab.log_z_nodes) / np.diff(e) > 0)
    with pytest.raises(ConfigError):
        g.log_normalizer(m, 0.5)
    assert g.log_normalizer(m, 0.5, table=tab) == pytest.approx(log_z(0.5), abs=1e-5)


def test_closed_form_psi_is_unavailable_for_compact_spaces():
    with pytest.raises(ConfigError):
        g.ClosedFormPsi(Sphere(2))


def test_inverse_psi_prime_roundtrip():
    src = g.ClosedFormPsi(Hyperbolic(3))
    for s in (0.2, 0.7, 1.9):
        eta = g.eta_of(s)
        assert g.inverse_psi_prime(src, src.psi_prime(eta)) == pytest.approx(eta, rel=1e-10)
    with pytest.raises(ExtrapolationError):
        g.inverse_psi_prime(src, 1e12)


@settings(max_examples=50, deadline=None)
@given(a=st.floats(0.05, 3.0), b=st.floats(0.05, 3.0), w=st.floats(0.05, 0.95))
def test_prop_psi_convex(a, b, w):
    if abs(a - b) < 1e-3:
        return
    for m in (Hyperbolic(2), SpdHermitian(3), Euclidean(2)):
        src = g.ClosedFormPsi(m)
        ea, eb = g.eta_of(a), g.eta_of(b)
        em = w * ea + (1 - w) * eb
        assert src.psi(em) <= w * src.psi(ea) + (1 - w) * src.psi(eb) + 1e-12
        assert (src.psi_prime(ea) - src.psi_prime(eb)) * (ea - eb) > 0


def test_psi_second_divided_differences_positive():
    m = Hyperbolic(3)
    src = g.ClosedFormPsi(m)
    tab = g.PsiTable.build(m, src.log_z, 0.05, 3.0)
    eta = np.linspace(tab.eta_range[0] * 0.999, tab.eta_range[1], 400)
    for f in (src.psi, tab.psi):
        v = np.array([f(e) for e in eta])
        assert np.all(np.diff(np.diff(v) / np.diff(eta)) > 0)


# ---------------------------------------------------------------- density


def test_log_density_at_centre_is_minus_psi():
    m = Hyperbolic(2)
    p = g.GaussianParams(m, m.random_point(np.random.default_rng(0)), 0.6)
    assert g.log_density(p, p.xbar) == pytest.approx(-g.ClosedFormPsi(m).psi(p.eta), rel=1e-14)


def test_log_density_on_h1_is_lognormal_in_log_coordinates():
    # H(1) = positive reals; in u = log x the profile is a normal pdf.  The
    # volume normalisation of H(N) carries a factor 1/2 at N = 1.
    m = SpdHermitian(1)
    s, mu = 0.4, 0.3
    p = g.GaussianParams(m, np.array([[math.exp(mu)]]), s)
    for u in (-0.5, 0.1, 0.3, 1.2):
        val = g.log_density(p, np.array([[math.exp(u)]]))
        assert val == pytest.approx(stats.norm.logpdf(u, mu, s) + math.log(2.0), abs=1e-12)


def test_density_integrates_to_one_on_h2():
    m = Hyperbolic(2)
    o = m.origin()
    p = g.GaussianParams(m, o, 0.5)

    def f(r):
        x = m.exp(o, m.tangent_at_origin(np.array([r, 0.0])))
        return 2 * math.pi * math.sinh(r) * math.exp(g.log_density(p, x))

    val, _ = integrate.quad(f, 0, 12, epsabs=0, epsrel=1e-10, limit=200)
    assert val == pytest.approx(1.0, abs=1e-4)


def test_density_integrates_to_one_on_h2_eigen_coordinates():
    s = 0.6
    assert _weyl_z_h2(s) / g.z_spd_hermitian(2, s) == pytest.approx(1.0, abs=1e-3)


# ---------------------------------------------------------------- sampling


def test_sample_mean_sq_distance_hyperbolic():
    m = Hyperbolic(2)
    rng = np.random.default_rng(0)
    p = g.GaussianParams(m, m.random_point(rng), 0.5)
    x = g.sample(p, rng, size=100_000)
    d2 = np.mean(m.dist(np.broadcast_to(p.xbar, x.shape), x) ** 2)
    assert d2 == pytest.approx(g.psi_prime_hyperbolic(2, 1.0, 0.5), rel=0.02)


def test_sample_radius_law_ks():
    n, c, s = 3, 1.0, 0.8
    r = g.sample_radius(n, c, s, 20_000, np.random.default_rng(1))
    z = _radial_z(n, c, s) / math.exp(g.log_sphere_area(n - 1))
    dens = lambda t: math.exp(_log_radial_profile(n, c, s, t)) / z if t > 0 else 0.0
    cdf = lambda t: integrate.quad(dens, 0, t, epsabs=1e-13)[0]
    grid = np.linspace(0, 6, 601)
    cg = np.array([cdf(t) for t in grid])
    assert stats.kstest(r, lambda t: np.interp(t, grid, cg)).pvalue > 1e-3


def test_sample_mean_sq_distance_spd():
    m = SpdHermitian(2)
    rng = np.random.default_rng(2)
    p = g.GaussianParams(m, m.random_point(rng), 0.6)
    x = g.sample(p, rng, size=20_000)
    d2 = np.mean([m.dist(p.xbar, xi) ** 2 for xi in x[:5000]])
    assert d2 == pytest.approx(g.psi_prime_spd(2, 0.6), rel=0.03)


def test_small_sigma_gives_small_dispersion():
    m = Hyperbolic(3)
    rng = np.random.default_rng(3)
    o = m.origin()
    prev = np.inf
    for s in (0.3, 0.03, 0.003):
        x = g.sample(g.GaussianParams(m, o, s), rng, size=2000)
        d = np.mean(m.dist(np.broadcast_to(o, x.shape), x) ** 2)
        assert d < prev
        prev = d
    assert prev < 1e-4


def test_sample_euclidean_and_unsupported():
    rng = np.random.default_rng(4)
    x = g.sample(g.GaussianParams(Euclidean(2), np.ones(2), 1.0), rng, size=50_000)
    assert np.allclose(x.mean(axis=0), 1.0, atol=0.02)
    with pytest.raises(UnsupportedError):
        g.sample(g.GaussianParams(Sphere(2), np.eye(3)[0], 0.3), rng)


def test_covariance_coefficients():
    N, s = 2, 0.5
    c1, c2 = g.covariance_coefficients(N, s)
    assert c1 == s * s
    # c2 from finite differences of log Z minus the flat trace factor
    rest = lambda e: g.log_z_spd_hermitian(N, g.sigma_of(e)) - g.log_z_euclidean(1, g.sigma_of(e))
    eta = g.eta_of(s)
    h = 1e-5 * abs(eta)
    fd = (rest(eta + h) - rest(eta - h)) / (2 * h) / (N * N - 1)
    assert c2 == pytest.approx(fd, rel=1e-6)


def test_sample_covariance_split():
    N, s = 2, 0.5
    m = SpdHermitian(N)
    x = g.sample(g.GaussianParams(m, m.origin(), s), np.random.default_rng(5), size=100_000)
    lam = np.log(np.linalg.eigvalsh(x))
    tr = lam.sum(axis=1)
    along = np.var(tr / math.sqrt(N))
    traceless = np.mean(np.sum((lam - tr[:, None] / N) ** 2, axis=1)) / (N * N - 1)
    c1, c2 = g.covariance_coefficients(N, s)
    assert along == pytest.approx(c1, rel=0.05)
    assert traceless == pytest.approx(c2, rel=0.05)


# ---------------------------------------------------------------- MLE


def test_mle_single_sample_is_degenerate():
    m = Hyperbolic(2)
    y = m.random_point(np.random.default_rng(6))
    with pytest.raises(DegenerateDispersionError) as exc:
        g.mle(y[None, :], m)
    assert np.allclose(exc.value.location, y)


def test_mle_two_samples_gives_midpoint():
    m = Hyperbolic(3)
    rng = np.random.default_rng(7)
    a, b = m.random_point(rng), m.random_point(rng)
    p = g.mle(np.stack([a, b]), m)
    assert m.dist(p.xbar, geodesic_combine(m, a, b, 0.5)) < 1e-8


def test_mle_recovers_sigma():
    m = Hyperbolic(2)
    rng = np.random.default_rng(8)
    xbar = m.random_point(rng)
    p = g.mle(g.sample(g.GaussianParams(m, xbar, 0.5), rng, size=10_000), m)
    assert 0.48 <= p.sigma <= 0.52
    assert m.dist(p.xbar, xbar) < 0.03


def test_mle_consistency_improves_with_sample_size():
    m = Hyperbolic(2)
    xbar = m.origin()
    errs = []
    for n in (100, 1000, 10_000):
        e_sigma, e_loc = [], []
        for seed in range(20):
            rng = np.random.default_rng(100 + seed)
            p = g.mle(g.sample(g.GaussianParams(m, xbar, 0.5), rng, size=n), m)
            e_sigma.append(abs(p.sigma - 0.5))
            e_loc.append(m.dist(p.xbar, xbar))
        errs.append((np.median(e_sigma), np.median(e_loc)))
    assert errs[0][0] > errs[1][0] > errs[2][0]
    assert errs[0][1] > errs[1][1] > errs[2][1]


# ---------------------------------------------------------------- Theta distributions


def test_duality_ratio_values():
    assert g.duality_ratio(1, 0.8) == pytest.approx(1.0, abs=1e-14)
    assert g.duality_ratio(3, 0.7) == pytest.approx(math.exp(1.96), rel=1e-12)


@pytest.mark.parametrize("N", range(1, 9))
def test_duality_identity(N):
    for s in (0.5, 1.0):
        assert abs(g.log_duality_ratio(N, s) - (N**3 - N) * s * s / 6) <= 1e-10


def test_jacobi_theta_at_one():
    s = 0.5  # sigma = 1, argument sigma^2/2
    ref = math.fsum(math.exp(-m * m * s) for m in range(-50, 51))
    assert g.jacobi_theta(0.0, s) == pytest.approx(ref, abs=1e-12)


@pytest.mark.parametrize("s", [0.05, 0.3, 0.99, 1.0, 2.5])
def test_jacobi_theta_both_series_match_direct_sum(s):
    phi = np.linspace(-4, 4, 33)
    m = np.arange(-60, 61)
    ref = np.array([np.sum(np.exp(-m * m * s) * np.cos(2 * m * p)) for p in phi])
    assert np.allclose(g.jacobi_theta(phi, s), ref, rtol=1e-12, atol=1e-13)


@pytest.mark.parametrize("N,grid", [(1, 64), (2, 64), (3, 32)])
def test_z_theta_matches_phase_integral(N, grid):
    for s in (0.5, 1.0):
        assert g.theta_volume_integral(N, s, grid) == pytest.approx(g.z_theta(N, s), rel=1e-8)


def test_theta_log_density_peaks_at_centre():
    rng = np.random.default_rng(9)
    xbar = g.sample_unitary_haar(3, rng)
    tp = g.ThetaParams(xbar, 0.7)
    top = g.theta_log_density(tp, xbar)
    for _ in range(20):
        assert g.theta_log_density(tp, g.sample_unitary_haar(3, rng)) < top
    with pytest.raises(DomainError):
        g.ThetaParams(xbar, 0.0)
