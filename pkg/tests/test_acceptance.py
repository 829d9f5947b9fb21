"""The twelve acceptance criteria at their stated tolerances.

Each test prints one PASS/FAIL line; the lines are repeated in the terminal
summary. Statistical criteria use fixed seeds.
"""
import math
import os
import subprocess
import sys
import time

import numpy as np
import pytest

from manistat import experiments, gaussian, spectra
from manistat.manifolds import Grassmann

HERE = os.path.dirname(os.path.abspath(__file__))


def test_01_closed_form_z(report):
    t0 = time.perf_counter()
    errs = []
    for s in (0.25, 0.5, 1.0, 2.0):
        ref = (math.pi * s / 2) ** 2 * math.expm1(s * s)
        errs.append(abs(gaussian.z_spd_hermitian(2, s) / ref - 1))
    dt = time.perf_counter() - t0
    ok = max(errs) <= 1e-12 and dt < 1
    assert report(1, "closed-form Z(2, sigma)", ok, f"max rel err {max(errs):.2e}", dt)


def test_02_montecarlo_z(report):
    t0 = time.perf_counter()
    worst = 0.0
    for N in (2, 3, 4):
        for s in (0.5, 1.0):
            mc = gaussian.z_montecarlo(N, 2, s, 100_000, seed=N * 10 + int(4 * s))
            worst = max(worst, abs(mc.estimate - gaussian.z_spd_hermitian(N, s)) / mc.std_err)
    dt = time.perf_counter() - t0
    ok = worst <= 3 and dt < 30
    assert report(2, "Monte Carlo Z within 3 s.e.", ok, f"worst {worst:.2f} s.e.", dt)


def test_03_asymptotic_gap(report):
    t0 = time.perf_counter()
    gaps = []
    for N in (8, 16, 32, 64):
        lz = gaussian.log_z_spd_hermitian(N, math.sqrt(1.0 / N))
        gaps.append(abs(lz / N**2 - gaussian.z_asymptotic(N, 1.0)))
    dt = time.perf_counter() - t0
    ok = all(a > b for a, b in zip(gaps, gaps[1:])) and gaps[-1] <= 0.02 and dt < 5
    assert report(3, "large-N limit at t=1", ok, "gaps " + ", ".join(f"{g:.2e}" for g in gaps), dt)


def test_04_theta_duality(report):
    t0 = time.perf_counter()
    worst = 0.0
    for N in range(1, 9):
        for s in (0.5, 1.0):
            diff = gaussian.log_z_spd_hermitian(N, s) - gaussian.log_z_theta(N, s)
            worst = max(worst, abs(diff - (N**3 - N) * s * s / 6))
    dt = time.perf_counter() - t0
    ok = worst <= 1e-10 and dt < 1
    assert report(4, "theta duality N<=8", ok, f"max abs err {worst:.2e}", dt)


TABLE1 = (0.28, 0.35, 0.41, 0.47, 0.50, 0.57, 0.60, 0.66, 0.70)
TABLE2 = (0.75, 1.00, 1.12, 1.44, 1.73, 1.97, 2.15, 2.54, 2.91)


@pytest.mark.slow
def test_05_bayes_tables(report):
    t0 = time.perf_counter()
    r1 = experiments.bayes_tables(0, sigma2=0.1, tau2=0.1, n_samples=200_000)
    r2 = experiments.bayes_tables(0, sigma2=1.0, tau2=0.5, n_samples=200_000)
    dt = time.perf_counter() - t0
    m1a = [r["m1_bar"] for r in r1]
    m1b = [r["m1_bar"] for r in r2]
    ok1 = all(abs(a - b) <= 0.05 for a, b in zip(m1a, TABLE1)) and all(r["d_mms_map"] <= 0.05 for r in r1)
    ok2 = all(abs(a / b - 1) <= 0.15 for a, b in zip(m1b, TABLE2)) and r2[-1]["d_mms_map"] <= 0.2
    ok = ok1 and ok2 and dt < 600
    detail = ("m1 " + " ".join(f"{v:.3f}" for v in m1a) + f"; max d {max(r['d_mms_map'] for r in r1):.3f}"
              + " | m1 " + " ".join(f"{v:.3f}" for v in m1b) + f"; d(n=10) {r2[-1]['d_mms_map']:.3f}")
    assert report(5, "MAP/MMS tables", ok, detail, dt)


def test_06_gradient_descent_rate(report):
    t0 = time.perf_counter()
    rows = experiments.barycentre_rate(0, dim=3, n_points=50)
    dt = time.perf_counter() - t0
    worst = max(r["sqdist"] / r["bound"] for r in rows if r["bound"] > 0)
    ok = worst <= 1 + 1e-9 and dt < 5
    assert report(6, "descent rate on H^3", ok, f"{len(rows)} iterates, max d^2/bound {worst:.4f}", dt)


def test_07_grassmann_retraction(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    worst = 0.0
    for p, q in ((2, 3), (3, 5)):
        m = Grassmann(p, q)
        for _ in range(1000):
            x = m.random_point(rng)
            v = m.random_tangent(x, rng)
            worst = max(worst, np.linalg.norm(m.exp(x, m.phi(x, v)) - m.retract(x, v)))
    dt = time.perf_counter() - t0
    ok = worst <= 1e-9 and dt < 5
    assert report(7, "Grassmann exp(phi) = retraction", ok, f"max Frobenius gap {worst:.2e}", dt)


@pytest.mark.slow
def test_08_scheme_bounds(report):
    t0 = time.perf_counter()
    bar = experiments.barycentre_bound(0, chains=20, T=10_000)
    pca = experiments.pca(0, seeds_avg=20, T=10_000)
    dt = time.perf_counter() - t0
    rb = max(r["empirical_avg"] / r["bound_rhs"] for r in bar)
    rp = max(r["empirical_avg"] / r["bound_rhs"] for r in pca)
    ok = rb <= 1.1 and rp <= 1.1 and dt < 300
    assert report(8, "scheme bounds", ok, f"max avg/bound: H^2 barycentre {rb:.3f}, Gr(2,3) PCA {rp:.3f}", dt)


def test_09_ar1_moment(report):
    t0 = time.perf_counter()
    rows = experiments.ar1(0)
    dt = time.perf_counter() - t0
    ratios = [r["mean_V"] / r["bound"] for r in rows]
    ok = all(x <= 1.1 for x in ratios) and dt < 120
    assert report(9, "AR(1) stationary moment", ok,
                  ", ".join(f"mu={r['mu']}: {x:.3f} of bound" for r, x in zip(rows, ratios)), dt)


def test_10_clt_covariance(report):
    t0 = time.perf_counter()
    rows = experiments.clt(0)
    dt = time.perf_counter() - t0
    rel = [abs(r["covariance"] / r["exact"] - 1) for r in rows]
    gap = [abs(r["covariance"] - r["V"]) for r in rows]
    V = rows[0]["V"]
    ok = (max(rel) <= 0.05 and all(a > b for a, b in zip(gap, gap[1:])) and V == pytest.approx(0.5, rel=1e-12)
          and dt < 60)
    assert report(10, "CLT covariance", ok,
                  "cov " + ", ".join(f"{r['covariance']:.4f}" for r in rows) + f"; max rel err {max(rel):.3f}", dt)


@pytest.mark.slow
def test_11_equilibrium_spectrum(report):
    t0 = time.perf_counter()
    mass = spectra.equilibrium_mass(1.0)
    (row,) = experiments.spectra_experiment(0, N=50, t=1.0, n_matrices=1000)
    dt = time.perf_counter() - t0
    ok = abs(mass - 1) <= 1e-6 and row["ks_nu_t"] <= 0.05 and row["ks_nu_t"] < row["ks_nu_2t"] and dt < 600
    assert report(11, "equilibrium spectrum", ok,
                  f"mass {mass:.8f}, KS vs nu_1 {row['ks_nu_t']:.4f}, vs nu_2 {row['ks_nu_2t']:.4f}", dt)


PROPERTY_TESTS = [
    "test_manifolds.py::test_hyperbolic_roundtrip_100_pairs",
    "test_manifolds.py::test_transport_is_isometry_100_cases",
    "test_manifolds.py::test_sqdist_grad",
    "test_manifolds.py::test_prop_roundtrip_hadamard",
    "test_manifolds.py::test_prop_transport_isometry",
    "test_manifolds.py::test_prop_phi_contraction",
    "test_manifolds.py::test_prop_outputs_stay_on_manifold",
    "test_gaussian.py::test_psi_prime_matches_finite_difference",
    "test_gaussian.py::test_prop_psi_convex",
    "test_barycentre.py::test_gradient_matches_finite_differences",
    "test_barycentre.py::test_robust_gradient_matches_finite_differences",
    "test_schemes.py::test_prop_mixture_weights_sum_to_one",
    "test_schemes.py::test_mixture_gradient_finite_differences",
]


def test_12_property_suites(report):
    t0 = time.perf_counter()
    ids = [os.path.join(HERE, t) for t in PROPERTY_TESTS]
    proc = subprocess.run([sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider", *ids],
                          capture_output=True, text=True, cwd=HERE)
    dt = time.perf_counter() - t0
    summary = proc.stdout.strip().splitlines()[-1] if proc.stdout.strip() else proc.stderr[-200:]
    ok = proc.returncode == 0 and dt < 120
    assert report(12, "property suites", ok, summary, dt)
