"""Riemannian Gaussian distributions.

Normalising factors are kept in log space throughout.  Closed forms exist
for R^n, H^n(c) and H(N); other spaces go through a PsiTable built from
any log Z evaluator (quadrature, Monte Carlo, ...).
"""
import json
import math
from dataclasses import dataclass

import mpmath as mp
import numpy as np
from scipy import optimize
from scipy.interpolate import PchipInterpolator

from . import spectra
from .errors import (ConfigError, DegenerateDispersionError, DomainError,
                     EnvelopeFailureError, ExtrapolationError, UnsupportedError)
from .manifolds import (Euclidean, Hyperbolic, ManifoldDescriptor, SpdHermitian,
                        from_descriptor, haar_unitary)


def eta_of(sigma):
    return -1.0 / (2.0 * sigma * sigma)


def sigma_of(eta):
    if not eta < 0:
        raise DomainError("natural parameter must be negative")
    return math.sqrt(-1.0 / (2.0 * eta))


@dataclass(frozen=True)
class GaussianParams:
    manifold: object
    xbar: np.ndarray
    sigma: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise DomainError("sigma must be > 0")

    @property
    def eta(self):
        return eta_of(self.sigma)


def log_sphere_area(n_minus_1):
    """log of the area of the unit sphere S^{k} in R^{k+1}."""
    k = n_minus_1 + 1
    return math.log(2.0) + 0.5 * k * math.log(math.pi) - math.lgamma(0.5 * k)


# ------------------------------------------------------------ closed forms


def log_z_euclidean(n, sigma):
    return 0.5 * n * math.log(2 * math.pi * sigma * sigma)


def z_euclidean(n, sigma):
    return math.exp(log_z_euclidean(n, sigma))


def _mills(x):
    # Phi(x) / Phi'(x)
    return mp.ncdf(x) / mp.npdf(x)


def _hyp_terms(n, c, sigma):
    # Working digits for the alternating sum: its terms nearly cancel when
    # sigma c is small.  For large sigma c the first term dominates, and
    # mpmath's unbounded exponent range absorbs the size of the terms.
    sc = sigma * c
    lost = (n - 1) * max(0.0, -math.log10(sc)) if sc > 0 else 0.0
    return int(30 + lost + (n - 1) * math.log10(2))


def log_z_hyperbolic(n, c, sigma):
    """log Z on H^n(c) from the binomial Mills-ratio sum."""
    if n < 1 or not c > 0 or not sigma > 0:
        raise DomainError("need n >= 1, c > 0, sigma > 0")
    with mp.workdps(_hyp_terms(n, c, sigma)):
        s = mp.mpf(0)
        for k in range(n):
            a = (n - 1 - 2 * k) * mp.mpf(c) * sigma
            s += (-1) ** k * mp.binomial(n - 1, k) * _mills(a)
        if s <= 0:
            raise DomainError("binomial sum lost all precision")
        return float(log_sphere_area(n - 1) + mp.log(sigma) - (n - 1) * mp.log(2 * mp.mpf(c)) + mp.log(s))


def z_hyperbolic(n, c, sigma):
    return math.exp(log_z_hyperbolic(n, c, sigma))


def psi_prime_hyperbolic(n, c, sigma):
    """sigma^3 d/dsigma log Z on H^n(c), differentiated term by term."""
    with mp.workdps(_hyp_terms(n, c, sigma)):
        s = mp.mpf(0)
        ds = mp.mpf(0)
        for k in range(n):
            x = (n - 1 - 2 * k) * mp.mpf(c) * sigma
            m = _mills(x)
            w = (-1) ** k * mp.binomial(n - 1, k)
            s += w * m
            ds += w * (m + x * (1 + x * m))
        return float(mp.mpf(sigma) ** 2 * ds / s)


def log_z_spd_hermitian(N, sigma):
    """Closed-form log Z on H(N) (product over q-Pochhammer factors)."""
    if N < 1 or not sigma > 0:
        raise DomainError("need N >= 1, sigma > 0")
    s2 = sigma * sigma
    return math.fsum([
        spectra.log_omega2(N),
        -N * N * math.log(2.0),
        0.5 * N * math.log(2 * math.pi * s2),
        (N**3 - N) * s2 / 6.0,
        spectra.log_qpoch_product(N, sigma),
    ])


def z_spd_hermitian(N, sigma):
    return math.exp(log_z_spd_hermitian(N, sigma))


def log_z_spd_from_sw(N, sigma):
    """Same quantity assembled from Stieltjes-Wigert leading coefficients."""
    return math.fsum([
        spectra.log_omega2(N),
        -N * N * math.log(2.0),
        -math.lgamma(N + 1),
        -0.5 * N**3 * sigma * sigma,
        spectra.log_sw_integral(N, sigma),
    ])


def psi_prime_spd(N, sigma):
    s2 = sigma * sigma
    acc = [N * s2, (N**3 - N) * s2 * s2 / 3.0]
    for n in range(1, N):
        acc.append((N - n) * 2.0 * n * s2 * s2 / math.expm1(n * s2))
    return math.fsum(acc)


def covariance_coefficients(N, sigma):
    """(c1, c2): covariance along the identity direction and per traceless direction on H(N)."""
    if N < 2:
        raise DomainError("covariance split needs N >= 2")
    c1 = sigma * sigma
    c2 = (psi_prime_spd(N, sigma) - c1) / (N * N - 1)
    return c1, c2


@dataclass(frozen=True)
class MonteCarloZ:
    estimate: float
    std_err: float
    normalized: bool
    samples: int


def z_montecarlo(N, beta, sigma, samples, seed):
    """Z(sigma) = (omega_beta / N!) (2 pi sigma^2/4)^{N/2} E[prod sinh^beta |a_i - a_j|], a ~ N(0, sigma^2/4 I)."""
    if beta not in (1, 2, 4):
        raise UnsupportedError("beta must be 1, 2 or 4")
    if samples < 1000:
        raise DomainError("need at least 10^3 samples")
    rng = np.random.default_rng(seed)
    log_pref = 0.5 * N * math.log(2 * math.pi * sigma * sigma / 4.0) - math.lgamma(N + 1)
    normalized = beta == 2
    if normalized:
        log_pref += spectra.log_omega2(N)
    if N == 1:
        return MonteCarloZ(math.exp(log_pref), 0.0, normalized, samples)
    a = rng.normal(0.0, sigma / 2.0, size=(samples, N))
    iu = np.triu_indices(N, 1)
    d = np.abs(a[:, iu[0]] - a[:, iu[1]])
    logw = beta * np.sum(np.log(np.sinh(d)), axis=1)
    shift = logw.max()
    w = np.exp(logw - shift)
    mean = w.mean()
    se = w.std(ddof=1) / math.sqrt(samples)
    scale = math.exp(log_pref + shift)
    return MonteCarloZ(scale * mean, scale * se, normalized, samples)


def z_asymptotic(N, t, normalized=False):
    """Large-N limit of (1/N^2) log Z at fixed t = N sigma^2.

    With ``normalized`` the limit of (1/N^2) log(Z / omega_2(N)) is returned.
    """
    if not t > 0:
        raise DomainError("t must be > 0")
    tail = spectra.trilog_integral_value(t)
    if normalized:
        return -math.log(2.0) + t / 6.0 + tail
    return -0.5 * math.log(2.0 * N / math.pi) + 0.75 + t / 6.0 + tail


# ------------------------------------------------------------ psi


class ClosedFormPsi:
    """psi(eta) = log Z(sigma) with analytic derivative."""

    def __init__(self, manifold):
        if isinstance(manifold, Euclidean):
            n = manifold.n
            self._logz = lambda s: log_z_euclidean(n, s)
            self._dpsi = lambda s: n * s * s
        elif isinstance(manifold, Hyperbolic):
            n, c = manifold.n, manifold.c
            self._logz = lambda s: log_z_hyperbolic(n, c, s)
            self._dpsi = lambda s: psi_prime_hyperbolic(n, c, s)
        elif isinstance(manifold, SpdHermitian):
            N = manifold.N
            self._logz = lambda s: log_z_spd_hermitian(N, s)
            self._dpsi = lambda s: psi_prime_spd(N, s)
        else:
            raise ConfigError(f"no closed-form normalising factor for {manifold!r}; build a PsiTable")
        self.manifold = manifold
        self.eta_range = (eta_of(1e-4), eta_of(1e2))

    def log_z(self, sigma):
        return self._logz(sigma)

    def psi(self, eta):
        return self._logz(sigma_of(eta))

    def psi_prime(self, eta):
        return self._dpsi(sigma_of(eta))


class PsiTable:
    """Interpolated psi(eta) on a geometric sigma grid."""

    def __init__(self, manifold, sigma_nodes, log_z):
        s = np.asarray(sigma_nodes, dtype=float)
        lz = np.asarray(log_z, dtype=float)
        if s.ndim != 1 or s.size < 4 or s.shape != lz.shape or np.any(np.diff(s) <= 0):
            raise ConfigError("sigma_nodes must be ascending with matching log_z values")
        self.manifold = manifold
        self.sigma_nodes = s
        self.log_z_nodes = lz
        self.eta_nodes = -1.0 / (2.0 * s * s)
        # monotone cubic in log(sigma), a smooth reparametrization of eta;
        # psi is far closer to polynomial there than in eta itself
        self._spline = PchipInterpolator(np.log(s), lz)
        self._du = self._spline.derivative()

    def _dspline(self, eta):
        eta = np.asarray(eta, dtype=float)
        # d/deta = sigma^2 d/dlog(sigma)
        return self._du(-0.5 * np.log(-2.0 * eta)) / (-2.0 * eta)

    @classmethod
    def build(cls, manifold, log_z_fn, sigma_min, sigma_max, nodes_per_decade=64, max_repairs=8):
        if not 0 < sigma_min < sigma_max:
            raise ConfigError("need 0 < sigma_min < sigma_max")
        decades = math.log10(sigma_max / sigma_min)
        k = max(4, int(math.ceil(decades * nodes_per_decade)) + 1)
        s = list(np.geomspace(sigma_min, sigma_max, k))
        vals = {x: log_z_fn(x) for x in s}
        for _ in range(max_repairs):
            table = cls(manifold, sorted(vals), [vals[x] for x in sorted(vals)])
            bad = table._nonconvex_intervals()
            if not bad:
                return table
            for lo, hi in bad:
                mid = math.sqrt(lo * hi)
                vals[mid] = log_z_fn(mid)
        return cls(manifold, sorted(vals), [vals[x] for x in sorted(vals)])

    def _nonconvex_intervals(self, sub=8):
        bad = []
        e = self.eta_nodes
        for i in range(len(e) - 1):
            g = np.linspace(e[i], e[i + 1], sub + 1)
            d = self._dspline(g)
            if np.any(np.diff(d) < -1e-12 * np.abs(d).max()):
                bad.append((self.sigma_nodes[i], self.sigma_nodes[i + 1]))
        return bad

    @property
    def eta_range(self):
        return float(self.eta_nodes[0]), float(self.eta_nodes[-1])

    def _check(self, eta):
        lo, hi = self.eta_range
        if not lo <= eta <= hi:
            raise ExtrapolationError(f"eta={eta} outside table range [{lo}, {hi}]")

    def psi(self, eta):
        self._check(eta)
        return float(self._spline(-0.5 * math.log(-2.0 * eta)))

    def psi_prime(self, eta):
        self._check(eta)
        return float(self._dspline(eta))

    def log_z(self, sigma):
        return self.psi(eta_of(sigma))

    def to_json(self):
        return json.dumps({
            "manifold": self.manifold.descriptor.to_dict(),
            "sigma_nodes": [float(x) for x in self.sigma_nodes],
            "log_z": [float(x) for x in self.log_z_nodes],
        })

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        try:
            m = from_descriptor(ManifoldDescriptor.from_dict(d["manifold"]))
            return cls(m, d["sigma_nodes"], d["log_z"])
        except KeyError as exc:
            raise ConfigError(f"psi table missing field {exc}") from None


def psi_source(manifold, table=None):
    if table is not None:
        return table
    return ClosedFormPsi(manifold)


def psi_and_derivative(source, eta):
    if not eta < 0:
        raise DomainError("eta must be negative")
    if not hasattr(source, "psi_prime"):
        source = ClosedFormPsi(source)
    return source.psi(eta), source.psi_prime(eta)


def inverse_psi_prime(source, target, iters=80):
    """Solve psi'(eta) = target by bisection on eta."""
    lo, hi = source.eta_range
    flo, fhi = source.psi_prime(lo), source.psi_prime(hi)
    if not flo <= target <= fhi:
        raise ExtrapolationError(f"dispersion {target} outside [{flo}, {fhi}]")
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if source.psi_prime(mid) < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# ------------------------------------------------------------ density


def log_normalizer(manifold, sigma, table=None):
    try:
        return psi_source(manifold, table).log_z(sigma)
    except ConfigError:
        raise
    except ExtrapolationError as exc:
        raise ConfigError(str(exc)) from None


def log_density(p, x, table=None):
    d = p.manifold.dist(p.xbar, x)
    return -log_normalizer(p.manifold, p.sigma, table) - d * d / (2.0 * p.sigma**2)


# ------------------------------------------------------------ sampling


def _log_sinh(x):
    return x + np.log1p(-np.exp(-2.0 * x)) - math.log(2.0)


class _RadialEnvelope:
    """Tangent-line envelope for the log-concave radial law r^2/2s^2 vs sinh^{n-1}(cr)."""

    def __init__(self, n, c, sigma):
        self.n, self.c, self.sigma = n, c, sigma
        k = n - 1
        s2 = sigma * sigma
        hi = 0.5 * (s2 * k * c + math.sqrt((s2 * k * c) ** 2 + 4 * s2 * k)) * 1.01 + 1e-12
        lo = min(s2 * k * c, hi) * 0.5 + 1e-300
        f = lambda r: -r / s2 + k * c / math.tanh(c * r)
        mode = optimize.brentq(f, max(lo, 1e-300), hi, xtol=1e-14 * hi, maxiter=200)
        curv = 1.0 / s2 + k * c * c / math.sinh(c * mode) ** 2
        sd = 1.0 / math.sqrt(curv)
        pts = [p for p in (mode - sd, mode, mode + sd) if p > 0]
        if len(pts) == 2:
            pts = [0.5 * mode] + pts
        self.t = np.array(pts)
        self.L = self.logp(self.t)
        self.s = self.dlogp(self.t)
        z = [0.0]
        for i in range(len(pts) - 1):
            L0, L1, s0, s1, t0, t1 = self.L[i], self.L[i + 1], self.s[i], self.s[i + 1], self.t[i], self.t[i + 1]
            z.append((L1 - L0 + s0 * t0 - s1 * t1) / (s0 - s1))
        z.append(np.inf)
        self.z = np.array(z)
        ref = self.L.max()
        logm = []
        for i in range(len(pts)):
            a, b = self.z[i], self.z[i + 1]
            la = self.L[i] + self.s[i] * (a - self.t[i]) - ref
            si = self.s[i]
            if np.isinf(b):
                logm.append(la - math.log(-si))
            elif abs(si) < 1e-300:
                logm.append(la + math.log(b - a))
            else:
                logm.append(la + math.log(abs(math.expm1(si * (b - a)) / si)))
        w = np.exp(np.array(logm) - max(logm))
        self.w = w / w.sum()

    def logp(self, r):
        r = np.asarray(r, dtype=float)
        return -r * r / (2 * self.sigma**2) + (self.n - 1) * _log_sinh(self.c * r)

    def dlogp(self, r):
        r = np.asarray(r, dtype=float)
        return -r / self.sigma**2 + (self.n - 1) * self.c / np.tanh(self.c * r)

    def env(self, r, piece):
        return self.L[piece] + self.s[piece] * (r - self.t[piece])

    def draw(self, size, rng):
        piece = rng.choice(len(self.w), size=size, p=self.w)
        u = rng.uniform(size=size)
        a = self.z[piece]
        b = self.z[piece + 1]
        s = self.s[piece]
        width = np.where(np.isinf(b), 0.0, b - a)
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            finite = a + np.log1p(u * np.expm1(s * width)) / s
            flat = a + u * width
            tail = a + np.log1p(-u) / s
        r = np.where(np.isinf(b), tail, np.where(np.abs(s) < 1e-300, flat, finite))
        return r, piece


def sample_radius(n, c, sigma, size, rng, min_accept=1e-3):
    """Geodesic radii of a Gaussian on H^n(c), by rejection from a tangent envelope."""
    if n == 1:
        return np.abs(rng.normal(0.0, sigma, size=size))
    env = _RadialEnvelope(n, c, sigma)
    out = []
    have = 0
    tried = 0
    acc = 0
    while have < size:
        m = max(2 * (size - have), 1024)
        r, piece = env.draw(m, rng)
        ok = (r > 0) & (np.log(rng.uniform(size=m)) < env.logp(r) - env.env(r, piece))
        tried += m
        acc += int(ok.sum())
        if tried >= 10_000 and acc / tried < min_accept:
            raise EnvelopeFailureError(f"rejection acceptance {acc / tried:.2e} below {min_accept}")
        out.append(r[ok])
        have += int(ok.sum())
    return np.concatenate(out)[:size]


def _uniform_directions(n, size, rng):
    g = rng.standard_normal((size, n))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def sample_at_origin(manifold, sigma, size, rng):
    """Draws from P(o, sigma) with o the manifold's origin."""
    if isinstance(manifold, Euclidean):
        return sigma * rng.standard_normal((size, manifold.n))
    if isinstance(manifold, Hyperbolic):
        r = sample_radius(manifold.n, manifold.c, sigma, size, rng)
        w = r[:, None] * _uniform_directions(manifold.n, size, rng)
        o = np.broadcast_to(manifold.origin(), (size, manifold.n + 1))
        return manifold.exp(o, manifold.tangent_at_origin(w))
    if isinstance(manifold, SpdHermitian):
        a, _ = spectra.sample_eigen_coords(manifold.N, sigma, size, rng)
        return spectra.haar_conjugate(a, rng)
    raise UnsupportedError(f"no Gaussian sampler on {manifold!r}")


def sample(p, rng, size=None):
    """Draw from P(xbar, sigma).  Returns one point, or a stack if size is given."""
    k = 1 if size is None else int(size)
    z = sample_at_origin(p.manifold, p.sigma, k, rng)
    m = p.manifold
    if isinstance(m, SpdHermitian):
        sq, _ = m._roots(m.check_point(p.xbar))
        out = sq @ z @ sq
        out = 0.5 * (out + np.swapaxes(out.conj(), -1, -2))
    else:
        out = m.translate(p.xbar, z)
    return out[0] if size is None else out


# ------------------------------------------------------------ MLE


def mle(samples, manifold, table=None, barycentre_kw=None):
    """Maximum-likelihood (xbar, sigma) from a list/stack of samples."""
    from .barycentre import empirical_barycentre

    pts = list(samples) if not isinstance(samples, np.ndarray) else samples
    if len(pts) == 0:
        raise DomainError("mle needs at least one sample")
    xhat = empirical_barycentre(manifold, pts, **(barycentre_kw or {}))
    if isinstance(pts, np.ndarray) and not isinstance(manifold, SpdHermitian):
        d = manifold.dist(xhat, pts)
    else:
        d = np.array([manifold.dist(xhat, y) for y in pts])
    delta = float(np.mean(d * d))
    if delta <= 0.0:
        err = DegenerateDispersionError("all samples coincide; dispersion is zero")
        err.location = xhat
        raise err
    src = psi_source(manifold, table)
    eta = inverse_psi_prime(src, delta)
    return GaussianParams(manifold, xhat, sigma_of(eta))


# ------------------------------------------------------------ Theta distributions on U(N)


@dataclass(frozen=True)
class ThetaParams:
    xbar: np.ndarray
    sigma: float
    truncation_eps: float = 1e-15

    def __post_init__(self):
        if not self.sigma > 0:
            raise DomainError("sigma must be > 0")

    @property
    def q(self):
        return math.exp(-self.sigma**2)


def jacobi_theta(phi, s, eps=1e-15, max_terms=100_000):
    """theta(e^{i phi} | s) = sum_m exp(-m^2 s + 2 i m phi) for s > 0 (real-valued)."""
    if not s > 0:
        raise DomainError("theta series needs s > 0 (q < 1)")
    phi = np.asarray(phi, dtype=float)
    if s >= 1.0:
        acc = np.ones_like(phi)
        for m in range(1, max_terms):
            term = 2.0 * math.exp(-m * m * s)
            acc = acc + term * np.cos(2 * m * phi)
            if term < eps * np.min(np.abs(acc)):
                return acc
        raise DomainError("theta series did not converge")
    # Poisson dual: sqrt(pi/s) sum_k exp(-(phi - pi k)^2 / s)
    base = np.mod(phi, math.pi)
    acc = np.exp(-base * base / s)
    for k in range(1, max_terms):
        t1 = np.exp(-(base - math.pi * k) ** 2 / s)
        t2 = np.exp(-(base + math.pi * k) ** 2 / s)
        acc = acc + t1 + t2
        if np.all(t1 + t2 < eps * acc):
            return math.sqrt(math.pi / s) * acc
    raise DomainError("dual theta series did not converge")


def theta_log_profile(tp, x):
    """log f*(x) = sum_i log[(2 pi sigma^2)^{1/2} theta(e^{i theta_i / 2} | sigma^2/2)].

    theta_i are the eigen-phases of x xbar^H.  The half angle makes each
    factor a wrapped normal of variance sigma^2 in theta_i, the image of the
    Gaussian profile on the flat torus.
    """
    x = np.asarray(x, dtype=complex)
    ph = np.angle(np.linalg.eigvals(x @ np.asarray(tp.xbar).conj().T))
    s2 = tp.sigma**2
    th = jacobi_theta(0.5 * ph, s2 / 2.0, tp.truncation_eps)
    return float(np.sum(0.5 * math.log(2 * math.pi * s2) + np.log(th)))


def log_z_theta(N, sigma):
    """log Z* on U(N), assembled from Rogers-Szego leading coefficients."""
    return math.fsum([
        spectra.log_omega2(N),
        -N * N * math.log(2.0),
        -math.lgamma(N + 1),
        0.5 * N * math.log(2 * math.pi * sigma * sigma),
        spectra.log_rs_integral(N, sigma),
    ])


def z_theta(N, sigma):
    return math.exp(log_z_theta(N, sigma))


def theta_log_density(tp, x):
    N = np.shape(x)[0]
    return theta_log_profile(tp, x) - log_z_theta(N, tp.sigma)


def log_duality_ratio(N, sigma):
    return log_z_spd_hermitian(N, sigma) - log_z_theta(N, sigma)


def duality_ratio(N, sigma):
    return math.exp(log_duality_ratio(N, sigma))


def theta_volume_integral(N, sigma, grid=64):
    """Z* by direct integration of f* against the Weyl measure on eigen-phases.

    Uses omega_2/(2^{N^2} N!) |V(e^{i theta})|^2 prod d theta/(2 pi) on a
    periodic trapezoid grid (spectrally accurate for smooth integrands).
    """
    s2 = sigma * sigma
    th = 2 * math.pi * np.arange(grid) / grid
    prof = 0.5 * math.log(2 * math.pi * s2) + np.log(jacobi_theta(0.5 * th, s2 / 2.0))
    mesh = np.meshgrid(*([th] * N), indexing="ij")
    logf = sum(np.meshgrid(*([prof] * N), indexing="ij"))
    z = np.stack([np.exp(1j * m) for m in mesh], axis=-1)
    vand = np.ones(mesh[0].shape)
    for i in range(N):
        for j in range(i + 1, N):
            vand = vand * np.abs(z[..., i] - z[..., j]) ** 2
    mean = float(np.mean(vand * np.exp(logf)))
    log_pref = spectra.log_omega2(N) - N * N * math.log(2.0) - math.lgamma(N + 1)
    return math.exp(log_pref) * mean


def sample_unitary_haar(N, rng):
    return haar_unitary(N, rng)

