"""Empirical and robust barycentres, gradient descent, Gibbs critical temperatures."""
import csv
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import special

from .errors import DomainError, NoSolutionError, NumericalError, UnsupportedError
from .manifolds import _x_coth_x, curvature_scale, same_manifold  # noqa: F401

VECTOR_KINDS = ("Euclidean", "Hyperbolic", "Sphere")
STALL_ITERS = 20
EPS = np.finfo(float).eps


def as_points(m, points):
    """Stack vector-model points into one array; keep matrix points as a list."""
    if m.kind in VECTOR_KINDS:
        arr = np.asarray(points, dtype=float)
        if arr.ndim == 1:
            arr = arr[None, :]
        return arr
    pts = list(points)
    if not pts:
        raise DomainError("empty point list")
    return pts


def _npoints(pts):
    return pts.shape[0] if isinstance(pts, np.ndarray) else len(pts)


def distances(m, y, points):
    pts = as_points(m, points)
    if isinstance(pts, np.ndarray):
        return np.atleast_1d(m.dist(np.broadcast_to(y, pts.shape), pts))
    return np.array([m.dist(y, p) for p in pts])


def logs(m, y, points):
    pts = as_points(m, points)
    if isinstance(pts, np.ndarray):
        return m.log(np.broadcast_to(y, pts.shape), pts)
    return np.stack([m.log(y, p) for p in pts])


def empirical_variance(m, points, y):
    """E_N(y) = (1/2N) sum d^2(y, x_n)."""
    pts = as_points(m, points)
    if _npoints(pts) == 0:
        raise DomainError("empty point list")
    d = distances(m, y, pts)
    return float(0.5 * np.mean(d * d))


def variance_gradient(m, points, y):
    return -np.mean(logs(m, y, points), axis=0)


# ------------------------------------------------------------ gradient descent


@dataclass
class GradientDescentConfig:
    step: Optional[float] = None  # None selects the backtracking rule
    max_iters: int = 1000
    grad_tol: float = 1e-10
    strong_convexity: Optional[float] = None

    def __post_init__(self):
        if self.step is not None and not self.step > 0:
            raise DomainError("step must be > 0")
        if not self.grad_tol > 0:
            raise DomainError("grad_tol must be > 0")


@dataclass
class DescentTrace:
    rows: list = field(default_factory=list)  # (iter, grad_norm, objective)
    sqdist_to_target: list = field(default_factory=list)
    step: Optional[float] = None
    stalled: bool = False

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iter", "grad_norm", "objective"])
            for it, g, f in self.rows:
                w.writerow([it, f"{g:.17g}", "" if f is None else f"{f:.17g}"])


def gradient_descent(m, f_grad, x0, cfg, f=None, xstar=None, step0=None):
    """Riemannian gradient descent x <- Exp_x(-mu grad f(x)).

    With a fixed ``cfg.step`` the plain scheme runs.  Without one, the step
    starts at ``step0`` (or 1), is halved whenever the objective would
    increase, and may double back up to ``step0`` after each accepted step.
    This needs ``f``.  When ``cfg.strong_convexity`` and ``xstar``
    are both given, the contraction d^2(x_t, x*) <= (1 - mu a)^t d^2(x_0, x*)
    is asserted at every iteration.
    """
    trace = DescentTrace()
    x = np.array(x0, copy=True)
    mu = cfg.step if cfg.step is not None else (step0 if step0 is not None else 1.0)
    mu_max = mu
    if cfg.step is None and f is None:
        raise DomainError("backtracking needs the objective f")
    fx = f(x) if f is not None else None
    d0 = None
    if xstar is not None:
        d0 = m.dist(x, xstar) ** 2
        trace.sqdist_to_target.append(d0)
    alpha = cfg.strong_convexity
    best, since_best = math.inf, 0
    for it in range(cfg.max_iters + 1):
        g = f_grad(x)
        if not np.all(np.isfinite(g)):
            raise NumericalError("non-finite gradient", trace=trace)
        gn = float(m.norm(x, g))
        trace.rows.append((it, gn, fx))
        if gn <= cfg.grad_tol or it == cfg.max_iters:
            break
        if gn < 0.999 * best:
            best, since_best = gn, 0
        else:
            since_best += 1
            if since_best >= STALL_ITERS and gn < 1e-6:
                # the gradient has hit its rounding floor
                trace.stalled = True
                break
        if cfg.step is not None:
            x = m.exp(x, -mu * g)
            fx = f(x) if f is not None else None
        else:
            mu = min(2.0 * mu, mu_max)
            for _ in range(60):
                xn = m.exp(x, -mu * g)
                fn = f(xn)
                # changes below rounding of f cannot be resolved
                if fn <= fx + 64 * EPS * abs(fx):
                    break
                mu *= 0.5
            else:
                # no decrease left at working precision
                trace.stalled = True
                break
            x, fx = xn, fn
        if xstar is not None:
            dt = m.dist(x, xstar) ** 2
            trace.sqdist_to_target.append(dt)
            if alpha is not None:
                bound = (1.0 - mu * alpha) ** (it + 1) * d0 * (1.0 + 1e-9)
                if dt > bound + 1e-300:
                    raise NumericalError(
                        f"contraction bound violated at t={it + 1}: {dt:.3e} > {bound:.3e}", trace=trace)
    trace.step = mu
    return x, trace


def prop44_step(m, points, x0, alpha=0.5):
    """Step size meeting mu <= 1/(max(H', 1) C0) and mu <= 1/alpha for E_N.

    R bounds d(x0, x*) through (alpha/2) d^2 <= f(x0) - f(x*) <= f(x0); G
    bounds |grad| on B(x*, R); H' bounds the Hessian on B(x*, R + G) through
    c r coth(c r) for each data point.
    """
    pts = as_points(m, points)
    c = curvature_scale(m)
    f0 = empirical_variance(m, pts, x0)
    R = math.sqrt(2.0 * f0 / alpha)
    d0 = distances(m, x0, pts)
    G = 2.0 * R + float(d0.max())
    Hp = float(np.mean(_x_coth_x(c * (2.0 * R + G + d0))))
    C0 = float(_x_coth_x(c * R))
    mu = min(1.0, 1.0 / alpha, 1.0 / (max(Hp, 1.0) * C0))
    return mu, {"R": R, "G": G, "H_prime": Hp, "C0": C0}


def _adaptive_step0(m, pts, x0):
    c = curvature_scale(m)
    d = distances(m, x0, pts)
    return 1.0 / max(1.0, float(np.mean(_x_coth_x(c * d))))


def empirical_barycentre(m, points, cfg=None, x0=None, return_trace=False):
    """Global minimiser of E_N on a Hadamard manifold."""
    if not m.hadamard:
        raise UnsupportedError("empirical_barycentre needs a Hadamard manifold")
    pts = as_points(m, points)
    n = _npoints(pts)
    if n == 0:
        raise DomainError("empty point list")
    cfg = cfg or GradientDescentConfig()
    first = pts[0]
    if x0 is None:
        x0 = first
    same = (np.max(distances(m, first, pts)) == 0.0)
    if same:
        x, tr = np.array(first, copy=True), DescentTrace(rows=[(0, 0.0, 0.0)])
    else:
        x, tr = gradient_descent(
            m, lambda y: variance_gradient(m, pts, y), x0, cfg,
            f=lambda y: empirical_variance(m, pts, y),
            step0=_adaptive_step0(m, pts, x0))
    return (x, tr) if return_trace else x


def robust_objective(m, points, y, delta):
    d = distances(m, y, points)
    return float(np.mean(delta * delta * (np.sqrt(1.0 + (d / delta) ** 2) - 1.0)))


def robust_gradient(m, points, y, delta):
    pts = as_points(m, points)
    lg = logs(m, y, pts)
    d = distances(m, y, pts)
    w = 1.0 / np.sqrt(1.0 + (d / delta) ** 2)
    return -np.mean(w.reshape((-1,) + (1,) * (lg.ndim - 1)) * lg, axis=0)


def robust_default_step(m, delta):
    """1/(1 + delta c): inverse of the global Hessian bound of V_x."""
    return 1.0 / (1.0 + delta * curvature_scale(m))


def robust_barycentre(m, points, delta, cfg=None, x0=None, return_trace=False):
    """Minimiser of (1/N) sum V_{x_n}(y), V_x(y) = delta^2 (sqrt(1 + d^2/delta^2) - 1)."""
    if not m.hadamard:
        raise UnsupportedError("robust_barycentre needs a Hadamard manifold")
    if not delta > 0:
        raise DomainError("delta must be > 0")
    pts = as_points(m, points)
    cfg = cfg or GradientDescentConfig()
    first = pts[0]
    if x0 is None:
        x0 = first
    if np.max(distances(m, first, pts)) == 0.0:
        x, tr = np.array(first, copy=True), DescentTrace(rows=[(0, 0.0, 0.0)])
    else:
        c = curvature_scale(m)
        spread = float(np.max(distances(m, x0, pts)))
        step0 = 1.0 / (1.0 + c * min(delta, 2.0 * spread))
        x, tr = gradient_descent(
            m, lambda y: robust_gradient(m, pts, y, delta), x0, cfg,
            f=lambda y: robust_objective(m, pts, y, delta), step0=step0)
    return (x, tr) if return_trace else x


# ------------------------------------------------------------ critical temperatures


@dataclass(frozen=True)
class GibbsTemperatureInputs:
    n: int
    mu_min: float
    mu_max: float
    rho: float
    delta: float
    U_rho: float
    U_delta: float
    diam_M: float
    vol_M: float
    A_M: float
    Ct2delta: float

    def __post_init__(self):
        if not 0 < self.mu_min <= self.mu_max:
            raise DomainError("need 0 < mu_min <= mu_max")
        if self.U_rho < 0 or self.U_delta < 0:
            raise DomainError("potential gaps must be >= 0")
        for name in ("rho", "delta", "diam_M", "vol_M", "A_M", "Ct2delta"):
            if not getattr(self, name) > 0:
                raise DomainError(f"{name} must be > 0")
        if not self.delta < self.diam_M / 2:
            raise DomainError("need delta < diam_M / 2")


def abs_normal_moment(n):
    """A_n = E|X|^n for X ~ N(0, 1)."""
    return math.exp(0.5 * n * math.log(2.0) + math.lgamma((n + 1) / 2.0) - 0.5 * math.log(math.pi))


def sphere_area(k):
    """Area omega_k of the unit sphere S^k in R^{k+1}."""
    m = k + 1
    return 2.0 * math.pi ** (m / 2.0) / math.gamma(m / 2.0)


def beta_n(n):
    return float(special.beta(0.5, n / 2.0))


def ct(c, r):
    """Ct(r) = c r cot(c r)."""
    x = c * r
    return 1.0 if x == 0 else x / math.tan(x)


def gibbs_f(T, m, U, mu_max):
    """f(T, m, rho) = (2/pi)^{1/2} (mu_max/T)^{m/2} exp(-U/T)."""
    return math.sqrt(2.0 / math.pi) * (mu_max / T) ** (m / 2.0) * math.exp(-U / T)


def first_crossing(pred, T_max=None, lo=1e-12, hi=1e12, rel_tol=1e-10, max_iter=200, grid=2000):
    """Infimum of {T in (0, T_max] : pred(T)} for a set that is an interval (a, b).

    Scans a log grid upward until pred first holds, then bisects.  Returns
    None when pred never holds on the scanned range.
    """
    top = hi if T_max is None else T_max
    Ts = np.geomspace(lo, top, grid)
    prev = None
    for T in Ts:
        if pred(float(T)):
            if prev is None:
                return float(T)
            a, b = prev, float(T)
            for _ in range(max_iter):
                mid = math.sqrt(a * b)
                if pred(mid):
                    b = mid
                else:
                    a = mid
                if (b - a) <= rel_tol * b:
                    break
            return b
        prev = float(T)
    return None


def critical_temperatures(inp):
    """Return (T_W, T_delta) for the Gibbs barycentre concentration and uniqueness results."""
    n = inp.n
    A = abs_normal_moment
    C_n = sphere_area(n - 1) * A(n) / (inp.diam_M * inp.vol_M)
    D_n = (2.0 / math.pi) ** (n - 1) * beta_n(n) / (4.0 * inp.diam_M)
    ratio = inp.mu_max / inp.mu_min

    def safe(fn):
        def wrapped(T):
            with np.errstate(over="ignore"):
                try:
                    return fn(T)
                except OverflowError:
                    return False
        return wrapped

    p1 = safe(lambda T: gibbs_f(T, n - 2, inp.U_rho, inp.mu_max) > inp.rho ** (2 - n) * A(n - 1))
    p2 = safe(lambda T: gibbs_f(T, n + 1, inp.U_rho, inp.mu_max) > ratio ** (n / 2.0) * C_n)
    t1 = first_crossing(p1)
    t2 = first_crossing(p2)
    if t1 is None and t2 is None:
        raise NoSolutionError("neither T_W inequality is ever satisfied")
    T_W = min(t for t in (t1, t2) if t is not None)

    def f_delta(T):
        return ((2.0 / math.pi) * (math.pi / 8.0) ** (n - 1) * (inp.mu_max / T) ** (n / 2.0)
                * math.exp(-inp.U_delta / T))

    q1 = safe(lambda T: math.sqrt(2 * math.pi * T / inp.mu_min) > inp.delta**2 * ratio ** (-n / 2.0) * D_n)
    K = inp.Ct2delta / (inp.Ct2delta * inp.vol_M + math.pi * inp.A_M)
    q2 = safe(lambda T: f_delta(T) > K)
    s1 = first_crossing(q1, T_max=T_W)
    s2 = first_crossing(q2, T_max=T_W)
    # an empty set inside (0, T_W] leaves T_W as the binding cap
    T_delta = min(T_W if s1 is None else s1, T_W if s2 is None else s2)
    return T_W, T_delta
