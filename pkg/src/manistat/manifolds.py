"""Geometry primitives for the concrete symmetric spaces.

Points and tangent vectors are plain numpy arrays; every operation goes
through a manifold object that knows how to interpret them.  The vector
models (Euclidean, Hyperbolic, Sphere) broadcast over leading axes, so a
stack of K points has shape (K, ambient_dim).  Matrix models act on one
point at a time.
"""
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .errors import CutLocusError, DomainError, UnsupportedError

TOL = 1e-9
EIG_FLOOR = 1e-14
CUT_MARGIN = 1e-6


@dataclass(frozen=True)
class ManifoldDescriptor:
    kind: str
    params: tuple
    dim: int
    curvature_bounds: tuple

    def to_dict(self):
        return {
            "kind": self.kind,
            "params": list(self.params),
            "dim": self.dim,
            "curvature_bounds": list(self.curvature_bounds),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["kind"], tuple(d["params"]), int(d["dim"]), tuple(d["curvature_bounds"]))


def _sym(a):
    return 0.5 * (a + a.swapaxes(-1, -2).conj())


def _herm_fn(x, fn):
    """Apply a scalar function to a Hermitian matrix through its spectrum."""
    lam, w = np.linalg.eigh(_sym(x))
    return (w * fn(lam)) @ w.conj().T


def _sinhc(x):
    # sinh(x)/x, safe near 0
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < 1e-5
    xs = np.where(small, 1.0, x)
    return np.where(small, 1.0 + x * x / 6.0, np.sinh(xs) / xs)


def _sinc(x):
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < 1e-5
    xs = np.where(small, 1.0, x)
    return np.where(small, 1.0 - x * x / 6.0, np.sin(xs) / xs)


def _x_coth_x(x):
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < 1e-6
    xs = np.where(small, 1.0, x)
    return np.where(small, 1.0 + x * x / 3.0, xs / np.tanh(xs))


class Manifold:
    """Common interface.  Subclasses fill in the geometry."""

    descriptor: ManifoldDescriptor
    hadamard = False

    @property
    def dim(self):
        return self.descriptor.dim

    @property
    def kind(self):
        return self.descriptor.kind

    def __eq__(self, other):
        return isinstance(other, Manifold) and self.descriptor == other.descriptor

    def __hash__(self):
        return hash(self.descriptor)

    def __repr__(self):
        return f"{self.kind}{self.descriptor.params}"

    def norm(self, x, v):
        return np.sqrt(np.maximum(self.inner(x, v, v), 0.0))

    def retract(self, x, v):
        raise UnsupportedError(f"no retraction implemented on {self!r}")

    def phi(self, x, v):
        raise UnsupportedError(f"no phi-map implemented on {self!r}")

    def translate(self, x, z):
        raise UnsupportedError(f"no transitive isometry implemented on {self!r}")

    def zero_tangent(self, x):
        return np.zeros_like(x)


# ---------------------------------------------------------------- Euclidean


class Euclidean(Manifold):
    hadamard = True

    def __init__(self, n):
        if n < 1:
            raise DomainError("dimension must be >= 1")
        self.n = int(n)
        self.descriptor = ManifoldDescriptor("Euclidean", (self.n,), self.n, (0.0, 0.0))

    def _shape(self, a, what="point"):
        a = np.asarray(a, dtype=float)
        if a.shape[-1:] != (self.n,):
            raise DomainError(f"{what} must have trailing dimension {self.n}, got {a.shape}")
        if not np.all(np.isfinite(a)):
            raise DomainError(f"non-finite {what}")
        return a

    def check_point(self, x):
        return self._shape(x)

    def check_tangent(self, x, v):
        return self._shape(v, "tangent")

    def proj_tangent(self, x, v):
        return np.asarray(v, dtype=float)

    def inner(self, x, u, v):
        return np.sum(np.asarray(u) * np.asarray(v), axis=-1)

    def exp(self, x, v):
        return self._shape(x) + self._shape(v, "tangent")

    def log(self, x, y):
        return self._shape(y) - self._shape(x)

    def dist(self, x, y):
        return np.linalg.norm(self._shape(y) - self._shape(x), axis=-1)

    def transport(self, x, v, u):
        return self._shape(u, "tangent")

    def translate(self, x, z):
        return np.asarray(x, dtype=float) + np.asarray(z, dtype=float)

    def origin(self):
        return np.zeros(self.n)

    def random_point(self, rng, scale=1.0, size=None):
        shape = (self.n,) if size is None else (size, self.n)
        return scale * rng.standard_normal(shape)

    def random_tangent(self, x, rng, scale=1.0):
        return scale * rng.standard_normal(np.shape(x))


# ---------------------------------------------------------------- Hyperbolic


class Hyperbolic(Manifold):
    """Hyperboloid model {x : <x,x>_L = -1/c^2, x0 > 0} in R^{n+1}."""

    hadamard = True

    def __init__(self, n, c=1.0):
        if n < 1:
            raise DomainError("dimension must be >= 1")
        if not c > 0:
            raise DomainError("curvature scale c must be > 0")
        self.n = int(n)
        self.c = float(c)
        k = -self.c**2
        self.descriptor = ManifoldDescriptor("Hyperbolic", (self.n, self.c), self.n, (k, k))

    @staticmethod
    def minkowski(u, v):
        return np.sum(u[..., 1:] * v[..., 1:], axis=-1) - u[..., 0] * v[..., 0]

    def _arr(self, a, what):
        a = np.asarray(a, dtype=float)
        if a.shape[-1:] != (self.n + 1,):
            raise DomainError(f"{what} must have trailing dimension {self.n + 1}, got {a.shape}")
        if not np.all(np.isfinite(a)):
            raise DomainError(f"non-finite {what}")
        return a

    def check_point(self, x):
        x = self._arr(x, "point")
        resid = np.abs(self.c**2 * self.minkowski(x, x) + 1.0)
        scale = 1.0 + self.c**2 * x[..., 0] ** 2
        if np.any(x[..., 0] <= 0) or np.any(resid > TOL * scale):
            raise DomainError("point is off the hyperboloid")
        return x

    def check_tangent(self, x, v):
        v = self._arr(v, "tangent")
        resid = np.abs(self.minkowski(x, v)) * self.c
        scale = 1.0 + np.abs(x[..., 0]) * self.c * (1.0 + np.linalg.norm(v, axis=-1))
        if np.any(resid > TOL * scale):
            raise DomainError("vector is not tangent to the hyperboloid")
        return v

    def _reproject(self, x):
        x = np.array(x, dtype=float, copy=True)
        x[..., 0] = np.sqrt(1.0 / self.c**2 + np.sum(x[..., 1:] ** 2, axis=-1))
        return x

    def proj_tangent(self, x, v):
        return v + self.c**2 * self.minkowski(x, v)[..., None] * x

    def inner(self, x, u, v):
        return self.minkowski(u, v)

    @staticmethod
    def _fix_tangent(x, v):
        # Restore exact tangency by resetting v_0 only; the Minkowski projection
        # adds a multiple of x, which amplifies rounding by |x|^2 far from the origin.
        v = np.array(v, dtype=float, copy=True)
        v[..., 0] = np.sum(x[..., 1:] * v[..., 1:], axis=-1) / x[..., 0]
        return v

    def _tangent_norm(self, x, v):
        # |v|^2 = |v_s|^2 - v_0^2 cancels badly far from the origin.  Splitting
        # v_s = a xhat + perp along xhat = x_s/|x_s| gives the cancellation-free
        # form |perp|^2 + (a / (c x_0))^2.
        xs, vs = x[..., 1:], v[..., 1:]
        n = np.linalg.norm(xs, axis=-1, keepdims=True)
        xhat = np.where(n > 0, xs / np.where(n > 0, n, 1.0), 0.0)
        a = np.sum(vs * xhat, axis=-1)
        perp = vs - a[..., None] * xhat
        return np.sqrt(np.sum(perp * perp, axis=-1) + (a / (self.c * x[..., 0])) ** 2)

    def norm(self, x, v):
        return self._tangent_norm(np.asarray(x, dtype=float), np.asarray(v, dtype=float))

    def exp(self, x, v):
        x = self.check_point(x)
        v = self._fix_tangent(x, self.check_tangent(x, v))
        r = self._tangent_norm(x, v)[..., None]
        cr = self.c * r
        return self._reproject(np.cosh(cr) * x + _sinhc(cr) * v)

    def dist(self, x, y):
        x = self.check_point(x)
        y = self.check_point(y)
        d = x - y
        chord = np.sqrt(np.maximum(self.minkowski(d, d), 0.0))
        return (2.0 / self.c) * np.arcsinh(0.5 * self.c * chord)

    def log(self, x, y):
        x = self.check_point(x)
        y = self.check_point(y)
        r = self.dist(x, y)[..., None]
        u = self._fix_tangent(x, y + self.c**2 * self.minkowski(x, y)[..., None] * x)
        return u / _sinhc(self.c * r)

    def transport(self, x, v, u):
        x = self.check_point(x)
        v = self.check_tangent(x, v)
        u = self.check_tangent(x, u)
        y = self.exp(x, v)
        # rotate the component of u along the unit direction e of v; the rest is unchanged
        c = self.c
        r = self._tangent_norm(x, v)[..., None]
        e = np.divide(v, r, out=np.zeros_like(v), where=r > 0)
        a = self.minkowski(e, u)[..., None]
        w = u + a * (c * np.sinh(c * r) * x + (np.cosh(c * r) - 1.0) * e)
        return self._fix_tangent(y, w)

    def boost(self, x):
        """Lorentz matrix mapping the origin to x."""
        X = self.c * np.asarray(x, dtype=float)
        xt = X[1:]
        L = np.empty((self.n + 1, self.n + 1))
        L[0, 0] = X[0]
        L[0, 1:] = xt
        L[1:, 0] = xt
        L[1:, 1:] = np.eye(self.n) + np.outer(xt, xt) / (1.0 + X[0])
        return L

    def translate(self, x, z):
        """Apply the boost taking the origin to x (a single point) to z."""
        x = np.asarray(x, dtype=float)
        z = np.asarray(z, dtype=float)
        if x.ndim == 1:
            return self._reproject(z @ self.boost(x).T)
        # per-row boosts, vectorised
        X = self.c * x
        x0 = X[..., :1]
        xt = X[..., 1:]
        z0 = z[..., :1]
        zt = z[..., 1:]
        dot = np.sum(xt * zt, axis=-1, keepdims=True)
        out0 = x0 * z0 + dot
        outt = xt * z0 + zt + xt * dot / (1.0 + x0)
        return self._reproject(np.concatenate([out0, outt], axis=-1))

    def origin(self):
        o = np.zeros(self.n + 1)
        o[0] = 1.0 / self.c
        return o

    def tangent_at_origin(self, w):
        """Embed R^n coordinates as a tangent vector at the origin."""
        w = np.asarray(w, dtype=float)
        return np.concatenate([np.zeros(w.shape[:-1] + (1,)), w], axis=-1)

    def random_point(self, rng, scale=1.0, size=None):
        shape = (self.n,) if size is None else (size, self.n)
        o = self.origin()
        return self.exp(np.broadcast_to(o, shape[:-1] + (self.n + 1,)),
                        self.tangent_at_origin(scale * rng.standard_normal(shape)))

    def random_tangent(self, x, rng, scale=1.0):
        # isotropic Gaussian at the origin, carried to x by the boost
        x = self.check_point(x)
        z = scale * rng.standard_normal(np.shape(x)[:-1] + (self.n,))
        X = self.c * x
        xt = X[..., 1:]
        a = np.sum(xt * z, axis=-1)[..., None]
        return np.concatenate([a, z + xt * a / (1.0 + X[..., :1])], axis=-1)


# ---------------------------------------------------------------- Sphere


class Sphere(Manifold):
    def __init__(self, n):
        if n < 1:
            raise DomainError("dimension must be >= 1")
        self.n = int(n)
        self.descriptor = ManifoldDescriptor("Sphere", (self.n,), self.n, (1.0, 1.0))

    def _arr(self, a, what):
        a = np.asarray(a, dtype=float)
        if a.shape[-1:] != (self.n + 1,):
            raise DomainError(f"{what} must have trailing dimension {self.n + 1}, got {a.shape}")
        if not np.all(np.isfinite(a)):
            raise DomainError(f"non-finite {what}")
        return a

    def check_point(self, x):
        x = self._arr(x, "point")
        if np.any(np.abs(np.linalg.norm(x, axis=-1) - 1.0) > TOL):
            raise DomainError("point is not on the unit sphere")
        return x

    def check_tangent(self, x, v):
        v = self._arr(v, "tangent")
        if np.any(np.abs(np.sum(x * v, axis=-1)) > TOL * (1.0 + np.linalg.norm(v, axis=-1))):
            raise DomainError("vector is not tangent to the sphere")
        return v

    def proj_tangent(self, x, v):
        return v - np.sum(x * v, axis=-1, keepdims=True) * x

    def inner(self, x, u, v):
        return np.sum(u * v, axis=-1)

    @staticmethod
    def _normalize(x):
        return x / np.linalg.norm(x, axis=-1, keepdims=True)

    def exp(self, x, v):
        x = self.check_point(x)
        v = self.proj_tangent(x, self.check_tangent(x, v))
        r = np.linalg.norm(v, axis=-1, keepdims=True)
        return self._normalize(np.cos(r) * x + _sinc(r) * v)

    def dist(self, x, y):
        x = self.check_point(x)
        y = self.check_point(y)
        cos = np.sum(x * y, axis=-1)
        sin = np.linalg.norm(y - cos[..., None] * x, axis=-1)
        return np.arctan2(sin, cos)

    def log(self, x, y):
        x = self.check_point(x)
        y = self.check_point(y)
        d = self.dist(x, y)
        if np.any(d > np.pi - CUT_MARGIN):
            raise CutLocusError("points are (numerically) antipodal")
        u = self.proj_tangent(x, y)
        return u / _sinc(d)[..., None]

    def transport(self, x, v, u):
        x = self.check_point(x)
        v = self.check_tangent(x, v)
        u = self.check_tangent(x, u)
        y = self.exp(x, v)
        coef = np.sum(y * u, axis=-1) / (1.0 + np.sum(x * y, axis=-1))
        return self.proj_tangent(y, u - coef[..., None] * (x + y))

    def retract(self, x, v):
        x = self.check_point(x)
        v = self.check_tangent(x, v)
        return self._normalize(x + v)

    def phi(self, x, v):
        x = self.check_point(x)
        v = self.check_tangent(x, v)
        r = np.linalg.norm(v, axis=-1, keepdims=True)
        safe = np.where(r > 0, r, 1.0)
        return np.where(r > 0, np.arctan(r) / safe, 1.0) * v

    def translate(self, x, z):
        """Rotation in the plane of (e0, x) taking e0 to x, applied to z."""
        x = np.asarray(x, dtype=float)
        z = np.asarray(z, dtype=float)
        e0 = self.origin()
        if x[0] < -1.0 + 1e-12:
            out = np.array(z, copy=True)
            out[..., 0] *= -1.0
            out[..., 1] *= -1.0 if self.n >= 1 else 1.0
            return out
        s = x + e0
        return z - np.sum(z * s, axis=-1, keepdims=True) / (1.0 + x[0]) * s + 2.0 * z[..., :1] * x

    def origin(self):
        o = np.zeros(self.n + 1)
        o[0] = 1.0
        return o

    def random_point(self, rng, size=None):
        shape = (self.n + 1,) if size is None else (size, self.n + 1)
        return self._normalize(rng.standard_normal(shape))

    def random_tangent(self, x, rng, scale=1.0):
        return scale * self.proj_tangent(x, rng.standard_normal(np.shape(x)))


# ---------------------------------------------------------------- Unitary


class Unitary(Manifold):
    """U(N) with bi-invariant metric <u,v> = s Re tr(u^H v)."""

    def __init__(self, N, metric_scale=0.5):
        if N < 1:
            raise DomainError("N must be >= 1")
        if not metric_scale > 0:
            raise DomainError("metric_scale must be > 0")
        self.N = int(N)
        self.s = float(metric_scale)
        kmax = 1.0 / (2.0 * self.s) if self.N >= 2 else 0.0
        self.descriptor = ManifoldDescriptor(
            "Unitary", (self.N, self.s), self.N * self.N, (0.0, kmax))

    def _arr(self, a, what):
        a = np.asarray(a, dtype=complex)
        if a.shape != (self.N, self.N):
            raise DomainError(f"{what} must be {self.N}x{self.N}, got {a.shape}")
        if not np.all(np.isfinite(a)):
            raise DomainError(f"non-finite {what}")
        return a

    def check_point(self, x):
        x = self._arr(x, "point")
        if np.linalg.norm(x.conj().T @ x - np.eye(self.N)) > TOL:
            raise DomainError("matrix is not unitary")
        return x

    def check_tangent(self, x, v):
        v = self._arr(v, "tangent")
        w = x.conj().T @ v
        if np.linalg.norm(w + w.conj().T) > TOL * (1.0 + np.linalg.norm(v)):
            raise DomainError("x^H v is not skew-Hermitian")
        return v

    def proj_tangent(self, x, v):
        w = x.conj().T @ v
        return x @ (0.5 * (w - w.conj().T))

    def inner(self, x, u, v):
        return self.s * np.real(np.vdot(u, v))

    @staticmethod
    def _skew_eig(w):
        # w skew-Hermitian: w = U diag(i theta) U^H
        theta, U = np.linalg.eigh(-1j * w)
        theta = theta.real
        return theta, U

    def exp(self, x, v):
        x = self.check_point(x)
        v = self.check_tangent(x, v)
        w = x.conj().T @ v
        w = 0.5 * (w - w.conj().T)
        theta, U = self._skew_eig(w)
        return x @ ((U * np.exp(1j * theta)) @ U.conj().T)

    def _log_rel(self, x, y):
        g = x.conj().T @ y
        T, Z = sla.schur(g, output="complex")
        theta = np.angle(np.diag(T))
        if np.any(np.abs(theta) > np.pi - CUT_MARGIN):
            raise CutLocusError("relative rotation has an eigenvalue at -1")
        return theta, Z

    def log(self, x, y):
        x = self.check_point(x)
        y = self.check_point(y)
        theta, Z = self._log_rel(x, y)
        w = (Z * (1j * theta)) @ Z.conj().T
        return x @ (0.5 * (w - w.conj().T))

    def dist(self, x, y):
        x = self.check_point(x)
        y = self.check_point(y)
        g = x.conj().T @ y
        theta = np.angle(np.linalg.eigvals(g))
        return float(np.sqrt(self.s * np.sum(theta**2)))

    def transport(self, x, v, u):
        x = self.check_point(x)
        v = self.check_tangent(x, v)
        u = self.check_tangent(x, u)
        w = x.conj().T @ v
        theta, U = self._skew_eig(0.5 * (w - w.conj().T))
        half = (U * np.exp(0.5j * theta)) @ U.conj().T
        eta = x.conj().T @ u
        return x @ half @ eta @ half

    def retract(self, x, v):
        x = self.check_point(x)
        v = self.check_tangent(x, v)
        a, _, bh = np.linalg.svd(x + v)
        return a @ bh

    def phi(self, x, v):
        x = self.check_point(x)
        v = self.check_tangent(x, v)
        w = x.conj().T @ v
        theta, U = self._skew_eig(0.5 * (w - w.conj().T))
        return x @ ((U * (1j * np.arctan(theta))) @ U.conj().T)

    def translate(self, x, z):
        return np.asarray(x) @ np.asarray(z)

    def origin(self):
        return np.eye(self.N, dtype=complex)

    def random_point(self, rng):
        return haar_unitary(self.N, rng)

    def random_tangent(self, x, rng, scale=1.0):
        g = rng.standard_normal((self.N, self.N)) + 1j * rng.standard_normal((self.N, self.N))
        return scale * self.proj_tangent(x, x @ g)


def haar_unitary(N, rng, size=None):
    """Haar-distributed unitary matrix: QR of a complex Ginibre matrix with phase fix.

    With ``size`` a stack of independent draws is returned.
    """
    shape = (N, N) if size is None else (size, N, N)
    g = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)
    q, r = np.linalg.qr(g)
    d = np.diagonal(r, axis1=-2, axis2=-1)
    return q * (d / np.abs(d))[..., None, :]


# ---------------------------------------------------------------- Grassmann


class Grassmann(Manifold):
    """Gr(p, q): rank-p orthogonal projectors of size d = p + q, metric tr(uv)."""

    def __init__(self, p, q):
        if not (1 <= p <= q):
            raise DomainError("Grassmann requires 1 <= p <= q")
        self.p = int(p)
        self.q = int(q)
        self.d = self.p + self.q
        if self.p >= 2:
            kmax = 1.0
        elif self.q >= 2:
            kmax = 0.5
        else:
            kmax = 0.0
        self.descriptor = ManifoldDescriptor("Grassmann", (self.p, self.q), self.p * self.q, (0.0, kmax))

    def _arr(self, a, what):
        a = np.asarray(a, dtype=float)
        if a.shape != (self.d, self.d):
            raise DomainError(f"{what} must be {self.d}x{self.d}, got {a.shape}")
        if not np.all(np.isfinite(a)):
            raise DomainError(f"non-finite {what}")
        return a

    def check_point(self, x):
        x = self._arr(x, "point")
        if (np.linalg.norm(x - x.T) > TOL or np.linalg.norm(x @ x - x) > TOL
                or abs(np.trace(x) - self.p) > TOL):
            raise DomainError("matrix is not a rank-p orthogonal projector")
        return x

    def check_tangent(self, x, v):
        v = self._arr(v, "tangent")
        scale = 1.0 + np.linalg.norm(v)
        if np.linalg.norm(v - v.T) > TOL * scale or np.linalg.norm(x @ v + v @ x - v) > TOL * scale:
            raise DomainError("matrix is not tangent to the Grassmannian")
        return v

    def proj_tangent(self, x, v):
        s = 0.5 * (v + v.T)
        ix = np.eye(self.d) - x
        return x @ s @ ix + ix @ s @ x

    def inner(self, x, u, v):
        return float(np.sum(u * v))

    def basis(self, x):
        """Orthonormal d x p basis of the range of x."""
        _, w = np.linalg.eigh(0.5 * (x + x.T))
        return w[:, -self.p:]

    @staticmethod
    def projector(b):
        return b @ b.T

    def _split(self, x, v):
        b = self.basis(x)
        w = v @ b
        U, a, St = np.linalg.svd(w, full_matrices=False)
        return b, U, a, St.T

    def exp(self, x, v):
        x = self.check_point(x)
        v = self.check_tangent(x, v)
        b, U, a, S = self._split(x, v)
        nb = (b @ S) * np.cos(a) @ S.T + (U * np.sin(a)) @ S.T
        return self.projector(nb)

    def lift_exp(self, x, v):
        """Orthogonal matrix exp(vx - xv), built from the principal-angle form."""
        b, U, a, S = self._split(x, v)
        B = b @ S
        R = U
        ca = np.cos(a) - 1.0
        sa = np.sin(a)
        return (np.eye(self.d) + (B * ca) @ B.T + (R * ca) @ R.T
                + (R * sa) @ B.T - (B * sa) @ R.T)

    def _angles(self, x, y):
        b = self.basis(x)
        c = self.basis(y)
        U, C, Vt = np.linalg.svd(b.T @ c)
        R = c @ Vt.T - b @ U * C
        sn = np.linalg.norm(R, axis=0)
        theta = np.arctan2(sn, C)
        return b, U, R, sn, theta

    def log(self, x, y):
        x = self.check_point(x)
        y = self.check_point(y)
        b, U, R, sn, theta = self._angles(x, y)
        if np.max(theta) >= np.pi / 2 - CUT_MARGIN:
            raise CutLocusError("a principal angle reaches pi/2")
        w = (R / _sinc(theta)) @ U.T
        w = w - b @ (b.T @ w)
        return w @ b.T + b @ w.T

    def dist(self, x, y):
        x = self.check_point(x)
        y = self.check_point(y)
        theta = self._angles(x, y)[-1]
        return float(np.sqrt(2.0) * np.linalg.norm(theta))

    def transport(self, x, v, u):
        x = self.check_point(x)
        v = self.check_tangent(x, v)
        u = self.check_tangent(x, u)
        E = self.lift_exp(x, v)
        return E @ u @ E.T

    def retract(self, x, v):
        x = self.check_point(x)
        v = self.check_tangent(x, v)
        b = self.basis(x)
        qm, _ = np.linalg.qr(b + v @ b)
        return self.projector(qm)

    def phi(self, x, v):
        x = self.check_point(x)
        v = self.check_tangent(x, v)
        b, U, a, S = self._split(x, v)
        w = (U * np.arctan(a)) @ S.T
        return w @ b.T + b @ w.T

    def translate(self, x, z):
        _, w = np.linalg.eigh(0.5 * (x + x.T))
        Q = w[:, ::-1]  # top-p eigenvectors first
        return Q @ z @ Q.T

    def origin(self):
        o = np.zeros((self.d, self.d))
        o[: self.p, : self.p] = np.eye(self.p)
        return o

    def random_point(self, rng):
        qm, _ = np.linalg.qr(rng.standard_normal((self.d, self.p)))
        return self.projector(qm)

    def random_tangent(self, x, rng, scale=1.0):
        return scale * self.proj_tangent(x, rng.standard_normal((self.d, self.d)))


# ---------------------------------------------------------------- H(N)


class SpdHermitian(Manifold):
    """Hermitian positive-definite N x N matrices, metric Re tr(x^-1 u x^-1 v)."""

    hadamard = True

    def __init__(self, N):
        if N < 1:
            raise DomainError("N must be >= 1")
        self.N = int(N)
        kmin = -0.5 if self.N >= 2 else 0.0
        self.descriptor = ManifoldDescriptor("SpdHermitian", (self.N,), self.N * self.N, (kmin, 0.0))

    def _arr(self, a, what):
        a = np.asarray(a, dtype=complex)
        if a.shape != (self.N, self.N):
            raise DomainError(f"{what} must be {self.N}x{self.N}, got {a.shape}")
        if not np.all(np.isfinite(a)):
            raise DomainError(f"non-finite {what}")
        if np.linalg.norm(a - a.conj().T) > TOL * (1.0 + np.linalg.norm(a)):
            raise DomainError(f"{what} is not Hermitian")
        return _sym(a)

    def _eig(self, x):
        lam, w = np.linalg.eigh(x)
        if lam[0] < EIG_FLOOR:
            raise DomainError(f"matrix is not positive definite (min eigenvalue {lam[0]:.3g})")
        return lam, w

    def check_point(self, x):
        x = self._arr(x, "point")
        self._eig(x)
        return x

    def check_tangent(self, x, v):
        return self._arr(v, "tangent")

    def proj_tangent(self, x, v):
        return _sym(np.asarray(v, dtype=complex))

    def _roots(self, x):
        lam, w = self._eig(x)
        sq = (w * np.sqrt(lam)) @ w.conj().T
        isq = (w / np.sqrt(lam)) @ w.conj().T
        return sq, isq

    def inner(self, x, u, v):
        xi = np.linalg.inv(x)
        return float(np.real(np.trace(xi @ u @ xi @ v)))

    def exp(self, x, v):
        x = self.check_point(x)
        v = self.check_tangent(x, v)
        sq, isq = self._roots(x)
        return _sym(sq @ _herm_fn(isq @ v @ isq, np.exp) @ sq)

    def log(self, x, y):
        x = self.check_point(x)
        y = self.check_point(y)
        sq, isq = self._roots(x)
        m = isq @ y @ isq
        self._eig(_sym(m))
        return _sym(sq @ _herm_fn(m, np.log) @ sq)

    def dist(self, x, y):
        x = self.check_point(x)
        y = self.check_point(y)
        lam = sla.eigh(y, x, eigvals_only=True)
        if lam[0] < EIG_FLOOR:
            raise DomainError("relative eigenvalue below floor")
        return float(np.linalg.norm(np.log(lam)))

    def transport(self, x, v, u):
        x = self.check_point(x)
        v = self.check_tangent(x, v)
        u = self.check_tangent(x, u)
        sq, isq = self._roots(x)
        E = sq @ _herm_fn(isq @ v @ isq, lambda t: np.exp(0.5 * t)) @ isq
        return _sym(E @ u @ E.conj().T)

    def translate(self, x, z):
        sq, _ = self._roots(self.check_point(x))
        return _sym(sq @ np.asarray(z, dtype=complex) @ sq)

    def origin(self):
        return np.eye(self.N, dtype=complex)

    def random_point(self, rng, scale=1.0):
        return self.exp(self.origin(), self.random_tangent(self.origin(), rng, scale))

    def random_tangent(self, x, rng, scale=1.0):
        g = rng.standard_normal((self.N, self.N)) + 1j * rng.standard_normal((self.N, self.N))
        h = 0.5 * (g + g.conj().T)
        sq, _ = self._roots(x)
        return scale * _sym(sq @ h @ sq) / np.sqrt(self.N)


# ---------------------------------------------------------------- helpers


_KINDS = {
    "Euclidean": Euclidean,
    "Hyperbolic": Hyperbolic,
    "Sphere": Sphere,
    "Unitary": Unitary,
    "Grassmann": Grassmann,
    "SpdHermitian": SpdHermitian,
}


def from_descriptor(desc):
    if isinstance(desc, dict):
        desc = ManifoldDescriptor.from_dict(desc)
    try:
        cls = _KINDS[desc.kind]
    except KeyError:
        raise DomainError(f"unknown manifold kind {desc.kind!r}") from None
    return cls(*desc.params)


def same_manifold(m1, m2):
    if m1 != m2:
        raise DomainError(f"descriptor mismatch: {m1!r} vs {m2!r}")


def geodesic_combine(m, x, y, t):
    """x #_t y = Exp_x(t Log_x(y))."""
    return m.exp(x, t * m.log(x, y))


def sqdist_grad(m, x, y):
    """Gradient at y of d^2(x, .)/2."""
    return -m.log(y, x)


def sqdist_hessian_bounds(m, x, y):
    """Bounds (lo, hi) on Hess d^2(x,.)/2 at y on a Hadamard manifold."""
    if not m.hadamard:
        raise UnsupportedError(f"Hessian bounds need a Hadamard manifold, got {m!r}")
    c = np.sqrt(-m.descriptor.curvature_bounds[0])
    r = m.dist(x, y)
    return 1.0, float(_x_coth_x(c * r))


def curvature_scale(m):
    """c = sqrt(-kappa_min) for a Hadamard manifold."""
    return float(np.sqrt(max(-m.descriptor.curvature_bounds[0], 0.0)))


def point_to_json(m, x):
    a = np.asarray(x)
    flat = a.reshape(-1)
    return {
        "manifold": m.descriptor.to_dict(),
        "shape": list(a.shape),
        "coords": [[float(z.real), float(z.imag)] for z in flat.astype(complex)],
    }


def point_from_json(d):
    m = from_descriptor(d["manifold"])
    vals = np.array([complex(re, im) for re, im in d["coords"]])
    if m.kind in ("Unitary", "SpdHermitian"):
        arr = vals
    else:
        arr = vals.real
    return m, arr.reshape(d["shape"])
