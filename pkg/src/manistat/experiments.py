"""Desk-scale experiment runners shared by the command line and the acceptance suite.

Each runner takes keyword parameters plus a seed and returns a list of row
dicts with a fixed column order.
"""
import math
import os
import tempfile

import numpy as np

from . import bayes, gaussian, schemes, spectra
from .barycentre import GradientDescentConfig, empirical_barycentre, gradient_descent, prop44_step
from .barycentre import empirical_variance, variance_gradient
from .errors import ConfigError
from .manifolds import Euclidean, Grassmann, Hyperbolic, SpdHermitian

# Dimension-free offset d(y, z) between observation and prior barycentre used
# for the MAP/MMS tables; see docs/experiments.md.
BAYES_SEPARATION = 1.5


def atomic_write_text(path, text):
    """Write text to path via a sibling temp file and rename, so readers never see a partial file."""
    path = os.path.abspath(path)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path), prefix=".manistat-", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def bayes_row(n, sigma2, tau2, n_samples, seed, separation=BAYES_SEPARATION, n_chains=200,
              burn_in=None, tune=True):
    """One MAP/MMS table entry on Hyperbolic(n, c=1)."""
    m = Hyperbolic(n, 1.0)
    o = m.origin()
    w = np.zeros(n)
    w[0] = separation
    y = m.exp(o, m.tangent_at_origin(w))
    spec = bayes.PosteriorSpec(m, y, o, math.sqrt(sigma2), math.sqrt(tau2))
    xmap = bayes.map_estimate(spec)

    def ld(x):
        return bayes.posterior_log_density_unnorm(spec, x)

    tau_q = max(spec.sigma, spec.tau) / 2
    if tune:
        tau_q = bayes.tune_proposal(m, ld, xmap, tau_q, n_chains=min(n_chains, 100), seed=seed + 10_000)
    burn = burn_in if burn_in is not None else 200 * n_chains
    cfg = bayes.MhConfig(tau_q, n_samples + burn, burn_in=burn, seed=seed, n_chains=n_chains)
    trace = bayes.mh_sample(m, ld, xmap, cfg)
    m1 = bayes.wasserstein_bound(m, trace, xmap)
    mms = bayes.mms_estimate(m, trace, x0=xmap)
    return {"n_dim": n, "sigma2": sigma2, "tau2": tau2, "m1_bar": m1,
            "d_mms_map": float(m.dist(mms, xmap)), "seed": seed, "n_samples": len(trace),
            "accept_rate": trace.accept_rate, "tau_q": tau_q}


def bayes_tables(seed, dims=tuple(range(2, 11)), sigma2=0.1, tau2=0.1, n_samples=200_000,
                 separation=BAYES_SEPARATION, n_chains=200):
    return [bayes_row(n, sigma2, tau2, n_samples, seed, separation, n_chains) for n in dims]


def zfactor(seed, N=2, sigma=(1.0,), method="closed", samples=100_000):
    Ns = N if isinstance(N, (list, tuple)) else [N]
    rows = []
    for n in Ns:
        for s in sigma:
            if method == "closed":
                lz = gaussian.log_z_spd_hermitian(n, s)
                rows.append({"N": n, "sigma": s, "method": method, "log_z": lz, "z": math.exp(lz),
                             "std_err": 0.0, "seed": seed})
            elif method == "montecarlo":
                mc = gaussian.z_montecarlo(n, 2, s, samples, seed)
                rows.append({"N": n, "sigma": s, "method": method, "log_z": math.log(mc.estimate),
                             "z": mc.estimate, "std_err": mc.std_err, "seed": seed})
            else:
                raise ConfigError(f"unknown zfactor method {method!r}")
    return rows


def _manifold(kind, dim, c=1.0):
    if kind == "hyperbolic":
        return Hyperbolic(dim, c)
    if kind == "spd":
        return SpdHermitian(dim)
    if kind == "euclidean":
        return Euclidean(dim)
    raise ConfigError(f"unknown manifold {kind!r}")


def psi_table(seed, manifold="hyperbolic", dim=2, c=1.0, sigma_min=0.05, sigma_max=3.0,
              nodes_per_decade=64, import_path=None, export_path=None):
    """Tabulated psi at the grid nodes; the table can be loaded from or saved to JSON."""
    if import_path is not None:
        with open(import_path) as fh:
            table = gaussian.PsiTable.from_json(fh.read())
    else:
        m = _manifold(manifold, dim, c)
        src = gaussian.ClosedFormPsi(m)
        table = gaussian.PsiTable.build(m, src.log_z, sigma_min, sigma_max, nodes_per_decade)
    if export_path is not None:
        atomic_write_text(export_path, table.to_json())
    return [{"sigma": float(s), "eta": float(e), "psi": float(table.psi(e)),
             "psi_prime": float(table.psi_prime(e))}
            for s, e in zip(table.sigma_nodes, table.eta_nodes)]


def barycentre_rate(seed, dim=3, n_points=50, scale=1.0, max_iters=300):
    """Fixed-step descent with the strong-convexity step bound; the rate is asserted."""
    m = Hyperbolic(dim)
    rng = np.random.default_rng(seed)
    pts = m.random_point(rng, scale=scale, size=n_points)
    xstar = empirical_barycentre(m, pts, GradientDescentConfig(grad_tol=1e-13))
    x0 = pts[0]
    mu, _ = prop44_step(m, pts, x0, alpha=0.5)
    cfg = GradientDescentConfig(step=mu, max_iters=max_iters, grad_tol=1e-13, strong_convexity=0.5)
    _, tr = gradient_descent(m, lambda y: variance_gradient(m, pts, y), x0, cfg,
                             f=lambda y: empirical_variance(m, pts, y), xstar=xstar)
    d0 = tr.sqdist_to_target[0]
    return [{"seed": seed, "iter": it, "grad_norm": g, "objective": f,
             "sqdist": tr.sqdist_to_target[it], "bound": (1 - 0.5 * mu) ** it * d0, "step": mu}
            for (it, g, f) in tr.rows]


def barycentre_bound(seed, sigma=0.5, n_data=200, chains=20, T=10_000, every=100):
    """Exponential-scheme bound for the barycentre field on H^2, chains run together."""
    m = Hyperbolic(2)
    rng = np.random.default_rng(seed)
    data = gaussian.sample(gaussian.GaussianParams(m, m.origin(), sigma), rng, size=n_data)
    x0 = data[0]
    k = schemes.barycentre_problem_constants(m, data, x0)
    sch = schemes.StepSchedule.constant(k["mu_cap"])
    run = schemes.run_exponential_scheme(schemes.barycentre_field(m, data),
                                         np.repeat(x0[None], chains, axis=0), sch, T, seed + 1)
    avg = schemes.running_average(run.grad_norm_sq[:-1].mean(axis=1), sch)
    bound = schemes.exponential_bound(k["V0"], k["ell"], k["sigma0_sq"], 1.0, sch, T)
    return [{"t": t, "empirical_avg": float(avg[t - 1]), "bound_rhs": float(bound[t - 1]), "mu": k["mu_cap"]}
            for t in range(1, T + 1) if t % every == 0 or t == 1]


def pca(seed, p=2, q=3, spectrum=(1.0, 0.8, 0.5, 0.3, 0.1), seeds_avg=20, T=10_000, mu=None, every=100):
    m = Grassmann(p, q)
    lam = np.asarray(spectrum, dtype=float)
    if lam.size != p + q:
        raise ConfigError(f"spectrum needs {p + q} entries")
    Delta = np.diag(lam)
    sq = np.sqrt(lam)
    field = schemes.pca_field(m, lambda rng: sq * rng.standard_normal(p + q), Delta)
    step = schemes.pca_step_cap(Delta) if mu is None else mu
    sch = schemes.StepSchedule.constant(step)
    x0 = m.random_point(np.random.default_rng(seed))
    acc = np.zeros(T)
    for k in range(seeds_avg):
        run = schemes.run_retraction_scheme(field, x0, sch, T, seed * 1000 + k)
        acc += run.grad_norm_sq[:-1]
    avg = schemes.running_average(acc / seeds_avg, sch)
    m4, m6 = schemes.gaussian_norm_moments(Delta)
    bound = schemes.pca_bound(Delta, p, m4, m6, sch, T)
    return [{"t": t, "empirical_avg": float(avg[t - 1]), "bound_rhs": float(bound[t - 1]), "mu": step}
            for t in range(1, T + 1) if t % every == 0 or t == 1]


def mixture(seed, K=2, n_data=300, T=2000, mu=0.05, spread=2.0, every=100):
    """Constant-step SGD for a K-component Gaussian mixture on H^2."""
    m = Hyperbolic(2)
    rng = np.random.default_rng(seed)
    angles = 2 * np.pi * np.arange(K) / K
    true = np.stack([m.exp(m.origin(), m.tangent_at_origin(spread * np.array([np.cos(a), np.sin(a)])))
                     for a in angles])
    lab = rng.integers(K, size=n_data)
    data = np.stack([gaussian.sample(gaussian.GaussianParams(m, true[k], 1.0), rng) for k in lab])
    x0 = data[rng.choice(n_data, size=K, replace=False)]
    field = schemes.mixture_field(m, x0, data)
    run = schemes.run_exponential_scheme(field, x0, schemes.StepSchedule.constant(mu), T, seed + 1)
    return [{"seed": seed, "t": t, "neg_log_lik": schemes.mixture_neg_log_lik(m, run.iterates[t], data),
             "grad_norm_sq": float(run.grad_norm_sq[t])}
            for t in range(0, T + 1, every)]


def ar1(seed, sigma=0.5, mu=(0.05, 0.1, 0.2), T=4000, chains=200):
    m = Hyperbolic(2)
    P = gaussian.GaussianParams(m, m.origin(), sigma)
    E_star = 0.5 * gaussian.psi_prime_hyperbolic(2, 1.0, sigma)
    rows = []
    for i, u in enumerate(mu):
        run = schemes.ar1_run(m, lambda rng, k: gaussian.sample(P, rng, size=k),
                              np.repeat(m.origin()[None], chains, axis=0), u, T, seed + i)
        v = schemes.stationary_mean_V(m, run, m.origin())
        rows.append({"seed": seed, "mu": u, "mean_V": v, "bound": schemes.ar1_moment_bound(E_star, u)})
    return rows


def clt(seed, s=1.0, mu=(0.1, 0.03, 0.01), T=20_000, chains=2000):
    field = schemes.field_from_linear(-1.0, s)
    spec = schemes.CltSpec(np.array([[-1.0]]), np.array([[s * s]]))
    rep = schemes.clt_check(field, np.zeros(1), np.zeros(1), list(mu), T, seed, spec=spec, n_chains=chains)
    V = float(rep.V[0, 0])
    return [{"seed": seed, "mu": u, "covariance": float(C[0, 0]), "exact": s * s / (2 - u), "V": V}
            for u, C in zip(rep.mu, rep.covariance)]


def spectra_experiment(seed, N=50, t=1.0, n_matrices=1000, n_chains=100):
    rng = np.random.default_rng(seed)
    samples = spectra.sample_spd_spectra(N, t, n_matrices, rng, n_chains=n_chains)
    pooled = np.concatenate([s.eigenvalues for s in samples])
    return [{"seed": seed, "N": N, "t": t, "n_matrices": n_matrices,
             "ks_nu_t": spectra.ks_distance(pooled, t), "ks_nu_2t": spectra.ks_distance(pooled, 2 * t),
             "mass": spectra.equilibrium_mass(t)}]


def barycentre(seed, mode="rate", **kw):
    """mode="rate": fixed-step descent on E_N; mode="scheme": stochastic scheme against its bound."""
    if mode == "rate":
        return barycentre_rate(seed, **kw)
    if mode == "scheme":
        return barycentre_bound(seed, **kw)
    raise ConfigError(f"unknown barycentre mode {mode!r}")


RUNNERS = {
    "zfactor": zfactor,
    "psi-table": psi_table,
    "bayes-tables": bayes_tables,
    "barycentre": barycentre,
    "mixture": mixture,
    "pca": pca,
    "ar1": ar1,
    "clt": clt,
    "spectra": spectra_experiment,
}
