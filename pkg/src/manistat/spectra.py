"""Random-matrix side of the Gaussian ensemble on H(N).

Volume constants, orthogonal-polynomial leading coefficients, the
trilogarithm, the large-N equilibrium density and tools to compare
sampled spectra against it.
"""
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache

import numpy as np
from scipy import integrate
from scipy.interpolate import PchipInterpolator

from .errors import DomainError, NumericalError
from .manifolds import haar_unitary


@dataclass(frozen=True)
class EnsembleParams:
    N: int
    sigma: float

    def __post_init__(self):
        if self.N < 1 or not self.sigma > 0:
            raise DomainError("need N >= 1 and sigma > 0")

    @property
    def t(self):
        return self.N * self.sigma**2

    @property
    def q(self):
        return math.exp(-self.sigma**2)

    @classmethod
    def from_t(cls, N, t):
        return cls(N, math.sqrt(t / N))


@dataclass
class SpectralSample:
    eigenvalues: np.ndarray
    params: EnsembleParams = field(repr=False)

    def __post_init__(self):
        ev = np.sort(np.asarray(self.eigenvalues, dtype=float))
        if ev.size and ev[0] <= 0:
            raise DomainError("eigenvalues must be positive")
        self.eigenvalues = ev


def _fsum(terms):
    return math.fsum(float(t) for t in terms)


# ------------------------------------------------------------ constants


def log_omega2(N):
    """log of (2 pi)^((N^2 - N)/2) / (1! 2! ... (N-1)!)."""
    if N < 1:
        raise DomainError("N must be >= 1")
    return 0.5 * (N * N - N) * math.log(2 * math.pi) - _fsum(math.lgamma(k + 1) for k in range(1, N))


def omega2(N):
    return math.exp(log_omega2(N))


def log_sw_leading_coeff_invsq(n, sigma):
    """log p_nn^{-2} for the orthonormal Stieltjes-Wigert polynomials with weight exp(-log^2 u / 2 sigma^2)."""
    if n < 0:
        raise DomainError("n must be >= 0")
    s2 = sigma * sigma
    return _fsum([0.5 * math.log(2 * math.pi * s2), 0.5 * (2 * n + 1) ** 2 * s2]
                 + [math.log(-math.expm1(-m * s2)) for m in range(1, n + 1)])


def sw_leading_coeff_invsq(n, sigma):
    return math.exp(log_sw_leading_coeff_invsq(n, sigma))


def log_rogers_szego_leading_invsq(n, sigma):
    if n < 0:
        raise DomainError("n must be >= 0")
    s2 = sigma * sigma
    return _fsum(math.log(-math.expm1(-m * s2)) for m in range(1, n + 1))


def rogers_szego_leading_invsq(n, sigma):
    return math.exp(log_rogers_szego_leading_invsq(n, sigma))


def log_sw_integral(N, sigma):
    """log I2 = log N! + sum_n log p_nn^{-2}."""
    return math.lgamma(N + 1) + _fsum(log_sw_leading_coeff_invsq(n, sigma) for n in range(N))


def log_rs_integral(N, sigma):
    return math.lgamma(N + 1) + _fsum(log_rogers_szego_leading_invsq(n, sigma) for n in range(N))


def log_qpoch_product(N, sigma):
    """log prod_{n=1}^{N-1} (1 - q^n)^{N-n}, q = exp(-sigma^2)."""
    s2 = sigma * sigma
    return _fsum((N - n) * math.log(-math.expm1(-n * s2)) for n in range(1, N))


def log_qgamma(x, q, tol=1e-17):
    """log Gamma_q(x) from the infinite-product definition, 0 < q < 1."""
    if not 0 < q < 1:
        raise DomainError("q must lie in (0, 1)")
    lq = math.log(q)
    acc = [(1.0 - x) * math.log1p(-q)]
    k = 0
    while True:
        a = q ** (k + 1)
        b = math.exp((x + k) * lq)
        acc.append(math.log1p(-a) - math.log1p(-b))
        if a < tol and b < tol:
            break
        k += 1
    return _fsum(acc)


# ------------------------------------------------------------ zeta / trilog


@lru_cache(maxsize=None)
def _bernoulli(m):
    """Bernoulli numbers B_0..B_m as Fractions (B_1 = -1/2)."""
    B = [Fraction(1)]
    for n in range(1, m + 1):
        s = sum(math.comb(n + 1, k) * B[k] for k in range(n))
        B.append(-s / (n + 1))
    return tuple(B)


def zeta_negative(m):
    """zeta(-m) for integer m >= 0."""
    B = _bernoulli(m + 1)
    if m == 0:
        return -0.5
    return float(-B[m + 1] / (m + 1))


@lru_cache(maxsize=None)
def zeta3(K=40):
    """zeta(3) from a partial sum with Euler-Maclaurin tail correction."""
    B = _bernoulli(14)
    head = _fsum(1.0 / k**3 for k in range(1, K))
    tail = [1.0 / (2 * K * K), 1.0 / (2 * K**3)]
    for j in range(1, 7):
        tail.append(float(B[2 * j]) * (2 * j + 1) / 2.0 / K ** (2 * j + 2))
    return head + _fsum(tail)


ZETA2 = math.pi**2 / 6


def trilog(x):
    """Li_3(x) for 0 <= x < 1."""
    x = float(x)
    if not 0.0 <= x < 1.0:
        raise DomainError("trilog is implemented on [0, 1)")
    if x <= 0.5:
        terms = []
        k = 1
        xk = x
        while True:
            term = xk / k**3
            terms.append(term)
            # tail bound x^{k+1} / ((k+1)^3 (1 - x))
            if xk * x / ((k + 1) ** 3 * (1 - x)) < 1e-18 * max(terms[0], 1e-300) or xk == 0.0:
                break
            k += 1
            xk *= x
        return _fsum(terms)
    # expansion in mu = log x around the singular point x = 1
    mu = math.log(x)
    terms = [zeta3(), ZETA2 * mu, (1.5 - math.log(-mu)) * mu * mu / 2.0]
    k = 3
    mk = mu**3 / 6.0
    while True:
        z = zeta_negative(k - 3)
        term = z * mk
        terms.append(term)
        if k > 6 and abs(mk) < 1e-20:
            break
        k += 1
        mk *= mu / k
        if k > 60:
            break
    return _fsum(terms)


def trilog_integral_value(t):
    """Closed value of int_0^1 (1 - x) log(1 - e^{-tx}) dx."""
    return -(trilog(math.exp(-t)) - zeta3()) / t**2 - ZETA2 / t


# ------------------------------------------------------------ equilibrium measure


def equilibrium_support(t):
    if not t > 0:
        raise DomainError("t must be > 0")
    c = math.exp(-t)
    r = math.sqrt(-math.expm1(-t))
    return c / (1 + r) ** 2, c / (1 - r) ** 2


def equilibrium_density(t, x):
    a, b = equilibrium_support(t)
    x = np.asarray(x, dtype=float)
    disc = 4.0 * math.exp(t) * x - (x + 1.0) ** 2
    inside = (x >= a) & (x <= b)
    if np.any(inside & (disc < -1e-12 * (x + 1.0) ** 2)):
        raise NumericalError("negative discriminant inside the support")
    xs = np.where(inside, x, 1.0)
    val = np.arctan(np.sqrt(np.clip(disc, 0.0, None)) / (xs + 1.0)) / (math.pi * t * xs)
    return np.where(inside, val, 0.0)


def _phi_integrand(t):
    a, b = equilibrium_support(t)

    def f(phi):
        x = a + (b - a) * (1.0 - np.cos(phi)) / 2.0
        return equilibrium_density(t, x) * (b - a) * np.sin(phi) / 2.0

    return f, a, b


def equilibrium_mass(t):
    f, _, _ = _phi_integrand(t)
    val, _ = integrate.quad(f, 0.0, math.pi, epsabs=1e-13, epsrel=1e-12, limit=200)
    return val


def equilibrium_mean(t):
    f, a, b = _phi_integrand(t)

    def g(phi):
        return f(phi) * (a + (b - a) * (1.0 - np.cos(phi)) / 2.0)

    return integrate.quad(g, 0.0, math.pi, epsabs=1e-13, epsrel=1e-12, limit=200)[0]


def equilibrium_cdf(t, x):
    """CDF of nu_t at scalar x by adaptive quadrature."""
    f, a, b = _phi_integrand(t)
    if x <= a:
        return 0.0
    if x >= b:
        return 1.0
    phi = math.acos(1.0 - 2.0 * (x - a) / (b - a))
    return integrate.quad(f, 0.0, phi, epsabs=1e-13, epsrel=1e-12, limit=200)[0]


@lru_cache(maxsize=32)
def _cdf_table(t, n=4097):
    f, a, b = _phi_integrand(t)
    phi = np.linspace(0.0, math.pi, n)
    cum = integrate.cumulative_simpson(f(phi), x=phi, initial=0.0)
    cum /= cum[-1]
    x = a + (b - a) * (1.0 - np.cos(phi)) / 2.0
    return x, np.maximum.accumulate(cum)


def equilibrium_cdf_vec(t, x):
    """Vectorised CDF via a cumulative rule on a Chebyshev-like grid."""
    xs, cum = _cdf_table(float(t))
    interp = PchipInterpolator(xs, cum)
    x = np.asarray(x, dtype=float)
    return np.where(x <= xs[0], 0.0, np.where(x >= xs[-1], 1.0, interp(np.clip(x, xs[0], xs[-1]))))


def sample_equilibrium(t, size, rng):
    """Inverse-CDF draws from nu_t."""
    xs, cum = _cdf_table(float(t))
    keep = np.concatenate([[True], np.diff(cum) > 0])
    inv = PchipInterpolator(cum[keep], xs[keep])
    return inv(rng.uniform(size=size))


def ks_distance(values, t):
    v = np.sort(np.asarray(values, dtype=float).ravel())
    n = v.size
    F = equilibrium_cdf_vec(t, v)
    i = np.arange(1, n + 1)
    return float(max(np.max(i / n - F), np.max(F - (i - 1) / n)))


def spectral_histogram_distance(samples, t=None):
    """KS distance between the pooled spectrum of the samples and nu_t."""
    if not samples:
        raise DomainError("no samples")
    p0 = samples[0].params
    if any(s.params != p0 for s in samples):
        raise DomainError("samples do not share ensemble parameters")
    pooled = np.concatenate([s.eigenvalues for s in samples])
    return ks_distance(pooled, p0.t if t is None else t)


def spectral_histogram(samples, bins=40):
    """Rows (bin_left, bin_right, empirical_mass, nu_t_mass)."""
    t = samples[0].params.t
    pooled = np.concatenate([s.eigenvalues for s in samples])
    a, b = equilibrium_support(t)
    edges = np.linspace(min(a, pooled.min()), max(b, pooled.max()), bins + 1)
    counts, _ = np.histogram(pooled, edges)
    F = equilibrium_cdf_vec(t, edges)
    return [(edges[i], edges[i + 1], counts[i] / pooled.size, F[i + 1] - F[i]) for i in range(bins)]


# ------------------------------------------------------------ eigen-coordinate sampler


def _log_abs_sinh(d):
    d = np.abs(d)
    return d + np.log1p(-np.exp(-2.0 * d)) - math.log(2.0)


def eigen_log_target(a, sigma):
    """log of exp(-2|a|^2/sigma^2) prod_{i<j} sinh^2|a_i - a_j|, rows of a are chains."""
    a = np.atleast_2d(a)
    diff = a[:, :, None] - a[:, None, :]
    iu = np.triu_indices(a.shape[1], 1)
    return -2.0 * np.sum(a * a, axis=1) / sigma**2 + 2.0 * np.sum(_log_abs_sinh(diff[:, iu[0], iu[1]]), axis=1)


def sample_eigen_coords(N, sigma, n_samples, rng, n_chains=None, burn_in=1000, thin=10, step=None):
    """Metropolis draws of a in R^N from exp(-2|a|^2/sigma^2) prod sinh^2|a_i - a_j|.

    Parallel chains start from GUE eigenvalues with entry variance sigma^2/4
    (the flat limit of the same density).  Each sweep updates every
    coordinate with a Gaussian proposal of scale ``step``.
    Returns an (n_samples, N) array and the acceptance rate.
    """
    if N == 1:
        return rng.normal(0.0, sigma / 2.0, size=(n_samples, 1)), 1.0
    step = sigma / 4.0 if step is None else step
    if n_chains is None:
        n_chains = min(n_samples, 200)
    per_chain = -(-n_samples // n_chains)
    a = np.stack([gue_eigenvalues(N, sigma / 2.0, rng) for _ in range(n_chains)])
    s2 = sigma * sigma
    accepted = 0
    proposed = 0
    out = []
    total_sweeps = burn_in + per_chain * thin
    for sweep in range(total_sweeps):
        for i in range(N):
            ai = a[:, i]
            new = ai + step * rng.standard_normal(n_chains)
            others = np.delete(a, i, axis=1)
            dl = (-2.0 * (new * new - ai * ai) / s2
                  + 2.0 * np.sum(_log_abs_sinh(new[:, None] - others) - _log_abs_sinh(ai[:, None] - others), axis=1))
            acc = np.log(rng.uniform(size=n_chains)) < dl
            a[acc, i] = new[acc]
            if sweep >= burn_in:
                accepted += int(acc.sum())
                proposed += n_chains
        if sweep >= burn_in and (sweep - burn_in + 1) % thin == 0:
            out.append(a.copy())
    draws = np.concatenate(out, axis=0)[:n_samples]
    return draws, accepted / max(proposed, 1)


def gue_eigenvalues(N, scale, rng):
    """Eigenvalues of a GUE matrix whose entries have variance scale^2."""
    g = rng.standard_normal((N, N)) + 1j * rng.standard_normal((N, N))
    h = (g + g.conj().T) / 2.0
    return np.linalg.eigvalsh(h * scale)


def sample_spd_spectra(N, t, n_matrices, rng, **kw):
    """Spectra of Gaussian P(I, sigma) matrices on H(N) with sigma^2 = t/N."""
    params = EnsembleParams.from_t(N, t)
    a, _ = sample_eigen_coords(N, params.sigma, n_matrices, rng, **kw)
    return [SpectralSample(np.exp(2.0 * row), params) for row in a]


def haar_conjugate(a, rng):
    """Matrix s exp(2a) s^H with s Haar on U(N); a stack of rows gives a stack of matrices."""
    a = np.asarray(a, dtype=float)
    s = haar_unitary(a.shape[-1], rng, size=None if a.ndim == 1 else a.shape[0])
    return (s * np.exp(2.0 * a)[..., None, :]) @ np.swapaxes(s.conj(), -1, -2)
