"""Stochastic approximation on manifolds: exponential and retraction schemes.

Vector-model fields may be run on a stack of independent chains at once: the
state is then an array (K, dim) and every sampler receives and returns stacks.
"""
import csv
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import linalg

from .barycentre import VECTOR_KINDS, distances, empirical_barycentre, empirical_variance
from .errors import DomainError, SpectralError, UnsupportedError
from .manifolds import _x_coth_x, curvature_scale, geodesic_combine


# ------------------------------------------------------------ schedules


@dataclass(frozen=True)
class StepSchedule:
    """Step sizes mu_t, t = 1, 2, ...; either constant or an explicit sequence."""

    kind: str
    mu: Optional[float] = None
    values: Optional[tuple] = None
    fn: Optional[Callable] = None

    def __post_init__(self):
        if self.kind == "constant":
            if not (self.mu is not None and self.mu > 0):
                raise DomainError("constant schedule needs mu > 0")
        elif self.kind == "sequence":
            if self.values is None and self.fn is None:
                raise DomainError("sequence schedule needs values or fn")
            if self.values is not None and not all(v > 0 for v in self.values):
                raise DomainError("all step sizes must be > 0")
        else:
            raise DomainError(f"unknown schedule kind {self.kind!r}")

    @classmethod
    def constant(cls, mu):
        return cls("constant", mu=float(mu))

    @classmethod
    def sequence(cls, values=None, fn=None):
        return cls("sequence", values=None if values is None else tuple(float(v) for v in values), fn=fn)

    def __call__(self, t):
        if t < 1:
            raise DomainError("step sizes are indexed from t = 1")
        if self.kind == "constant":
            return self.mu
        if self.values is not None:
            if t > len(self.values):
                raise DomainError(f"schedule has no value at t={t}")
            return self.values[t - 1]
        v = float(self.fn(t))
        if not v > 0:
            raise DomainError(f"non-positive step size at t={t}")
        return v

    def array(self, t0, t1):
        """mu_t for t0 <= t <= t1."""
        if self.kind == "constant":
            return np.full(t1 - t0 + 1, self.mu)
        return np.array([self(t) for t in range(t0, t1 + 1)])

    def to_dict(self):
        if self.kind == "constant":
            return {"kind": "constant", "mu": self.mu}
        if self.values is not None:
            return {"kind": "sequence", "values": list(self.values)}
        return {"kind": "sequence", "fn": getattr(self.fn, "__name__", "callable")}


def weighted_step_moment(schedule, t, p):
    """{mu^p}_t = sum mu_{s+1}^{p+1} / sum mu_{s+1}, s = 1..t."""
    if t < 1:
        raise DomainError("t must be >= 1")
    mu = schedule.array(2, t + 1)
    if schedule.kind == "constant":
        return schedule.mu ** p
    return math.fsum(mu ** (p + 1)) / math.fsum(mu)


# ------------------------------------------------------------ fields and runs


@dataclass(frozen=True)
class RandomField:
    """X_y(x): ``sampler(rng, x)`` draws y and returns X_y(x)."""

    manifold: object
    sampler: Callable
    mean_field: Optional[Callable] = None


@dataclass
class SchemeRun:
    iterates: list
    grad_norm_sq: np.ndarray
    schedule: StepSchedule
    seed: int
    aborted: Optional[str] = None
    lyapunov: Optional[np.ndarray] = None

    def __len__(self):
        return len(self.iterates)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "grad_norm_sq", "V"])
            for t in range(len(self.iterates)):
                g = self.grad_norm_sq[t] if t < len(self.grad_norm_sq) else float("nan")
                v = self.lyapunov[t] if self.lyapunov is not None else float("nan")
                w.writerow([t, f"{g:.17g}", f"{v:.17g}"])


class PowerManifold:
    """M^K for a vector model M: points are (K, dim) stacks, metric summed over rows."""

    def __init__(self, base, K):
        if base.kind not in VECTOR_KINDS:
            raise UnsupportedError("PowerManifold needs a vector model")
        self.base = base
        self.K = int(K)
        self.hadamard = base.hadamard

    @property
    def kind(self):
        return "Power"

    def exp(self, x, v):
        return self.base.exp(x, v)

    def log(self, x, y):
        return self.base.log(x, y)

    def dist(self, x, y):
        return float(np.sqrt(np.sum(self.base.dist(x, y) ** 2)))

    def inner(self, x, u, v):
        return float(np.sum(self.base.inner(x, u, v)))

    def norm(self, x, v):
        return math.sqrt(max(self.inner(x, v, v), 0.0))

    def retract(self, x, v):
        return self.base.retract(x, v)


def _sq_norm(m, x, v):
    """Squared norm of v at x; per chain for stacked states."""
    if m.kind in VECTOR_KINDS:
        return np.asarray(m.inner(x, v, v), dtype=float)
    return float(m.inner(x, v, v))


def _run(field, x0, schedule, T, seed, step, lyapunov=None):
    m = field.manifold
    rng = np.random.default_rng(seed)
    x = np.array(x0, copy=True)
    its = [x]
    gn, lv = [], []
    aborted = None

    def record(x):
        if field.mean_field is not None:
            gn.append(_sq_norm(m, x, field.mean_field(x)))
        if lyapunov is not None:
            lv.append(lyapunov(x))

    record(x)
    for t in range(T):
        v = field.sampler(rng, x)
        if not np.all(np.isfinite(v)):
            aborted = f"non-finite tangent at t={t}"
            break
        x = step(x, schedule(t + 1) * v)
        its.append(x)
        record(x)
    return SchemeRun(iterates=its, grad_norm_sq=np.asarray(gn), schedule=schedule, seed=seed,
                     aborted=aborted, lyapunov=np.asarray(lv) if lyapunov is not None else None)


def run_exponential_scheme(field, x0, schedule, T, seed, lyapunov=None):
    """x_{t+1} = Exp_{x_t}(mu_{t+1} X_{y_{t+1}}(x_t)); iterates x_0 .. x_T."""
    m = field.manifold
    return _run(field, x0, schedule, T, seed, m.exp, lyapunov)


def run_retraction_scheme(field, x0, schedule, T, seed, retraction=None, lyapunov=None):
    """As run_exponential_scheme with Ret in place of Exp."""
    m = field.manifold
    ret = retraction if retraction is not None else m.retract
    return _run(field, x0, schedule, T, seed, ret, lyapunov)


def iterate_weights(schedule, t):
    """P(tau_t = s) proportional to mu_{s+1}, s = 1..t, normalised in extended precision."""
    mu = schedule.array(2, t + 1).astype(np.longdouble)
    return mu / np.sum(mu)


def sample_iterate(run, rng, size=None):
    """Draw tau_t with P(tau_t = s) proportional to mu_{s+1}, s = 1..t.

    Returns (index, iterate), or a pair of lists when ``size`` is given.
    """
    t = len(run) - 1
    if t < 1:
        raise DomainError("run has no iterates after x_0")
    cdf = np.cumsum(iterate_weights(run.schedule, t))
    u = rng.random(1 if size is None else size)
    idx = np.minimum(np.searchsorted(cdf, u, side="right"), t - 1) + 1
    if size is None:
        return int(idx[0]), run.iterates[int(idx[0])]
    return idx, [run.iterates[i] for i in idx]


def running_average(values, schedule):
    """sum_{s<t} mu_{s+1} v_s / sum_{s<t} mu_{s+1}, for t = 1..len(values)."""
    v = np.asarray(values, dtype=float)
    mu = schedule.array(1, len(v))
    return np.cumsum(mu * v) / np.cumsum(mu)


def exponential_bound(V0, ell, sigma0_sq, c, schedule, t_max):
    """Right-hand side of the exponential-scheme bound for t = 1..t_max."""
    mu = schedule.array(1, t_max)
    S1 = np.cumsum(mu)
    S2 = np.cumsum(mu**2)
    return (2.0 / c) * (V0 / S1 + ell * sigma0_sq * S2 / S1)


def retraction_bound(V0, ell, sigma0_sq, c, delta, tau3, grad_V_sup, schedule, t_max):
    mu = schedule.array(1, t_max)
    S1 = np.cumsum(mu)
    S3 = np.cumsum(mu**3)
    extra = (2.0 / c) * delta * tau3 * grad_V_sup * S3 / S1
    return exponential_bound(V0, ell, sigma0_sq, c, schedule, t_max) + extra


# ------------------------------------------------------------ barycentre field


def barycentre_field(m, data):
    """X_y(x) = Log_x(y) with y uniform over ``data``; mean field -grad E_N."""
    data = np.asarray(data, dtype=float)
    N = data.shape[0]

    def sampler(rng, x):
        if x.ndim == 1:
            return m.log(x, data[rng.integers(N)])
        return m.log(x, data[rng.integers(N, size=x.shape[0])])

    def mean(x):
        if x.ndim == 1:
            return np.mean(m.log(np.broadcast_to(x, data.shape), data), axis=0)
        shape = (x.shape[0],) + data.shape
        xs = np.broadcast_to(x[:, None, :], shape)
        return np.mean(m.log(xs, np.broadcast_to(data[None], shape)), axis=1)

    return RandomField(m, sampler, mean)


def barycentre_problem_constants(m, data, x0):
    """Constants (ell, sigma0^2, V0, mu cap) for the barycentre field on a Hadamard M.

    Every iterate stays in the geodesic ball C = B(x*, D) holding x0 and the data,
    since each step moves along a geodesic towards a data point (mu <= 1).  On C,
    Hess E_N <= mean_n c r_n coth(c r_n) with r_n <= D + d(x*, y_n), and the noise
    second moment is at most mean_n (D + d(x*, y_n))^2.
    """
    xstar = empirical_barycentre(m, data)
    r = distances(m, xstar, data)
    D = max(float(r.max()), float(m.dist(xstar, x0)))
    c = curvature_scale(m)
    ell = float(np.mean(_x_coth_x(c * (D + r))))
    sigma0_sq = float(np.mean((D + r) ** 2))
    V0 = empirical_variance(m, data, x0) - empirical_variance(m, data, xstar)
    return {"xstar": xstar, "D": D, "ell": ell, "sigma0_sq": sigma0_sq, "V0": V0,
            "c": 1.0, "mu_cap": 1.0 / (2.0 * ell)}


# ------------------------------------------------------------ mixture


def _logsumexp(a, axis):
    amax = np.max(a, axis=axis, keepdims=True)
    return np.squeeze(amax, axis=axis) + np.log(np.sum(np.exp(a - amax), axis=axis))


def mixture_weights(m, centers, y):
    """omega_k(y) proportional to exp(-d^2(y, x_k)/2), computed in log space."""
    centers = np.asarray(centers, dtype=float)
    y = np.asarray(y, dtype=float)
    K = centers.shape[0]
    if y.ndim == 1:
        d = m.dist(centers, np.broadcast_to(y, centers.shape))
        a = -0.5 * d**2
        return np.exp(a - _logsumexp(a, axis=0))
    d = np.stack([m.dist(np.broadcast_to(centers[k], y.shape), y) for k in range(K)], axis=1)
    a = -0.5 * d**2
    return np.exp(a - _logsumexp(a, axis=1)[:, None])


def mixture_neg_log_lik(m, centers, data):
    """f(x) = -log Z(1) - (1/N) sum log m(y_n | x); Z(1) cancels out of this difference."""
    centers = np.asarray(centers, dtype=float)
    data = np.asarray(data, dtype=float)
    K = centers.shape[0]
    d = np.stack([m.dist(np.broadcast_to(centers[k], data.shape), data) for k in range(K)], axis=1)
    return float(math.log(K) - np.mean(_logsumexp(-0.5 * d**2, axis=1)))


def mixture_gradient(m, centers, data):
    """grad_k f = -(1/N) sum_n omega_k(y_n) Log_{x_k}(y_n)."""
    centers = np.asarray(centers, dtype=float)
    data = np.asarray(data, dtype=float)
    w = mixture_weights(m, centers, data)  # (N, K)
    g = np.empty_like(centers)
    for k in range(centers.shape[0]):
        lg = m.log(np.broadcast_to(centers[k], data.shape), data)
        g[k] = -np.mean(w[:, k:k + 1] * lg, axis=0)
    return g


def mixture_field(m, centers, data):
    """Random field on M^K: y uniform over data, X_k = omega_k(y) Log_{x_k}(y)."""
    data = np.asarray(data, dtype=float)
    K = np.asarray(centers).shape[0]
    pm = PowerManifold(m, K)

    def sampler(rng, x):
        y = data[rng.integers(data.shape[0])]
        w = mixture_weights(m, x, y)
        return w[:, None] * m.log(x, np.broadcast_to(y, x.shape))

    def mean(x):
        return -mixture_gradient(m, x, data)

    return RandomField(pm, sampler, mean)


def mixture_constants(D_C, K, c, log_z1):
    """Upper bounds on f_C, sigma_0 and ell_C over a convex set of diameter D_C."""
    f_C = 0.5 * D_C**2
    sigma0 = K * D_C
    ell = (1 + c * D_C) + (1 + math.exp(log_z1 + 0.5 * D_C)) * D_C**2
    return {"f_C": f_C, "sigma0": sigma0, "ell_C": ell}


# ------------------------------------------------------------ PCA


def pca_tangent(m, x, w):
    """Tangent at x with horizontal lift w (d x p, w perpendicular to range x)."""
    b = m.basis(x)
    return w @ b.T + b @ w.T


def pca_field(m, y_sampler, Delta=None):
    """X_y(x) = [(I - x) y y^T b] on Gr(p, q); mean field (I - x) Delta b = grad tr(x Delta)."""
    I = np.eye(m.d)

    def sampler(rng, x):
        y = np.asarray(y_sampler(rng), dtype=float)
        b = m.basis(x)
        w = (I - x) @ np.outer(y, y @ b)
        return w @ b.T + b @ w.T

    mean = None
    if Delta is not None:
        Delta = np.asarray(Delta, dtype=float)

        def mean(x):
            b = m.basis(x)
            w = (I - x) @ Delta @ b
            return w @ b.T + b @ w.T

    return RandomField(m, sampler, mean)


def gaussian_norm_moments(Delta):
    """E|y|^4 and E|y|^6 for y ~ N(0, Delta)."""
    lam = np.linalg.eigvalsh(np.asarray(Delta, dtype=float))
    t1, t2, t3 = lam.sum(), (lam**2).sum(), (lam**3).sum()
    return t1**2 + 2 * t2, t1**3 + 6 * t1 * t2 + 8 * t3


def pca_bound(Delta, p, m4, m6, schedule, t_max):
    """Bound on the mu-weighted average of |grad f|^2 for the PCA retraction scheme."""
    Delta = np.asarray(Delta, dtype=float)
    op = float(np.linalg.norm(Delta, 2))
    fro = float(np.linalg.norm(Delta))
    return retraction_bound(V0=p * op, ell=2 * op, sigma0_sq=2 * m4, c=1.0, delta=1.0,
                            tau3=math.sqrt(8) * m6, grad_V_sup=fro, schedule=schedule, t_max=t_max)


def pca_step_cap(Delta):
    """mu <= c/(2 ell) with ell = 2 |Delta|_op."""
    return 1.0 / (4.0 * float(np.linalg.norm(np.asarray(Delta, dtype=float), 2)))


# ------------------------------------------------------------ AR(1)


def ar1_run(m, P_sampler, x0, mu, T, seed):
    """x_{t+1} = x_t #_mu y_{t+1} with y ~ P.

    ``P_sampler(rng, size)`` returns a stack of samples.  ``x0`` may be a stack
    of independent chains on the vector models.  mu = 1 is accepted and gives
    x_t = y_t.
    """
    if not (0 < mu <= 1):
        raise DomainError("mu must lie in (0, 1]")
    if not m.hadamard:
        raise UnsupportedError("AR(1) needs a Hadamard manifold")
    rng = np.random.default_rng(seed)
    x = np.array(x0, dtype=float, copy=True)
    k = x.shape[0] if x.ndim == 2 else None
    its = [x]
    for _ in range(T):
        y = P_sampler(rng, 1 if k is None else k)
        y = y[0] if k is None else y
        x = y.copy() if mu == 1 else geodesic_combine(m, x, y, mu)
        its.append(x)
    return SchemeRun(iterates=its, grad_norm_sq=np.empty(0), schedule=StepSchedule.constant(mu), seed=seed)


def stationary_mean_V(m, run, xstar):
    """Time average of d^2(x*, x_t)/2 over the second half of the run (all chains)."""
    its = run.iterates[len(run.iterates) // 2:]
    vals = [0.5 * np.asarray(m.dist(np.broadcast_to(xstar, np.shape(x)), x)) ** 2 for x in its]
    return float(np.mean(vals))


def ar1_moment_bound(E_star, mu):
    """Stationary bound E(x*) mu / (2 - mu) on the mean of V."""
    return E_star * mu / (2.0 - mu)


# ------------------------------------------------------------ CLT


@dataclass(frozen=True)
class CltSpec:
    A: np.ndarray
    Sigma_star: np.ndarray

    def __post_init__(self):
        S = np.atleast_2d(np.asarray(self.Sigma_star, dtype=float))
        if np.linalg.norm(S - S.T) > 1e-10 * (1 + np.linalg.norm(S)):
            raise DomainError("Sigma_star must be symmetric")
        if np.min(np.linalg.eigvalsh(0.5 * (S + S.T))) < -1e-10 * (1 + np.linalg.norm(S)):
            raise DomainError("Sigma_star must be positive semidefinite")


def lyapunov_solve(A, Sigma_star):
    """Stationary covariance V of du = A u dt + Sigma*^{1/2} dW: A V + V A^T + Sigma* = 0.

    A must be Hurwitz; V is then symmetric positive semidefinite.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    S = np.atleast_2d(np.asarray(Sigma_star, dtype=float))
    ev = np.linalg.eigvals(A)
    bad = ev[ev.real >= 0]
    if bad.size:
        raise SpectralError(f"A is not Hurwitz: eigenvalue {bad[0]} has non-negative real part")
    V = linalg.solve_continuous_lyapunov(A, -S)
    return 0.5 * (V + V.T)


def tangent_basis(m, x):
    """Orthonormal basis of T_x M as rows (vector models)."""
    if m.kind == "Euclidean":
        return np.eye(m.n)
    if m.kind == "Hyperbolic":
        L = m.boost(x)
        E = np.zeros((m.n, m.n + 1))
        E[:, 1:] = np.eye(m.n)
        return E @ L.T
    raise UnsupportedError(f"no tangent basis for {m!r}")


def _coords(m, x, basis, v):
    """Coordinates of v in an orthonormal basis of T_x M."""
    return np.stack([np.asarray(m.inner(x, v, e), dtype=float) for e in basis], axis=-1)


def estimate_clt_spec(field, xstar, rng, radius=0.1, n_points=200, n_noise=20000):
    """Least-squares A from the transported mean field near x*, and MC Sigma*."""
    m = field.manifold
    E = tangent_basis(m, xstar)
    n = E.shape[0]
    U = radius * rng.uniform(-1, 1, size=(n_points, n))
    X, Y = [], []
    for u in U:
        v = u @ E
        x = m.exp(xstar, v)
        back = m.transport(x, m.log(x, xstar), field.mean_field(x)) if m.kind != "Euclidean" \
            else field.mean_field(x)
        X.append(u)
        Y.append(_coords(m, xstar, E, back))
    At, *_ = np.linalg.lstsq(np.asarray(X), np.asarray(Y), rcond=None)
    xs = np.broadcast_to(xstar, (n_noise,) + np.shape(xstar))
    e = field.sampler(rng, np.array(xs)) - field.mean_field(xstar)
    c = _coords(m, xstar, E, e)
    Sigma = c.T @ c / n_noise
    return CltSpec(A=At.T, Sigma_star=0.5 * (Sigma + Sigma.T))


def rescaled_covariance(m, run, xstar, mu, burn=0.5):
    """Covariance of u_t = mu^{-1/2} Log_{x*}(x_t) over the post-burn-in segment."""
    E = tangent_basis(m, xstar)
    its = run.iterates[int(len(run.iterates) * burn):]
    us = []
    for x in its:
        x = np.asarray(x)
        xs = np.broadcast_to(xstar, x.shape)
        us.append(_coords(m, xs, E, m.log(xs, x)).reshape(-1, E.shape[0]))
    u = np.concatenate(us, axis=0) / math.sqrt(mu)
    return u.T @ u / u.shape[0]


@dataclass
class CltReport:
    mu: list
    covariance: list
    V: np.ndarray
    frobenius_gap: list
    seed: int

    def to_json(self):
        return json.dumps({
            "mu": self.mu, "seed": self.seed, "V": np.asarray(self.V).tolist(),
            "covariance": [np.asarray(c).tolist() for c in self.covariance],
            "frobenius_gap": self.frobenius_gap,
        })


def clt_check(field, x0, xstar, mu_list, T, seed, spec=None, n_chains=None):
    """Stationary covariance of the rescaled chain against the Lyapunov solution.

    ``n_chains`` independent chains start from x0 and run together.
    """
    m = field.manifold
    rng = np.random.default_rng(seed)
    if spec is None:
        spec = estimate_clt_spec(field, xstar, rng)
    V = lyapunov_solve(spec.A, spec.Sigma_star)
    x_start = np.array(x0, dtype=float) if n_chains is None else np.repeat(
        np.asarray(x0, dtype=float)[None], n_chains, axis=0)
    covs, gaps = [], []
    for i, mu in enumerate(mu_list):
        run = run_exponential_scheme(RandomField(m, field.sampler), x_start, StepSchedule.constant(mu),
                                     T, seed + 1 + i)
        C = rescaled_covariance(m, run, xstar, mu)
        covs.append(C)
        gaps.append(float(np.linalg.norm(C - V)))
    return CltReport(mu=list(mu_list), covariance=covs, V=V, frobenius_gap=gaps, seed=seed)


def field_from_linear(A, s, n=1):
    """Euclidean field X_y(x) = A x + s * y with y standard normal."""
    from .manifolds import Euclidean

    m = Euclidean(n)
    A = np.atleast_2d(np.asarray(A, dtype=float))

    def sampler(rng, x):
        return x @ A.T + s * rng.standard_normal(np.shape(x))

    def mean(x):
        return np.asarray(x) @ A.T

    return RandomField(m, sampler, mean)
