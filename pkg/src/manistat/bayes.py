"""MAP and MMS estimation for a Gaussian likelihood with a Gaussian prior."""
import logging
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import gaussian
from .barycentre import VECTOR_KINDS, distances, empirical_barycentre
from .errors import DomainError
from .manifolds import geodesic_combine

log = logging.getLogger(__name__)

STUCK_STEPS = 10_000


@dataclass(frozen=True)
class PosteriorSpec:
    manifold: object
    y: np.ndarray
    z: np.ndarray
    sigma: float
    tau: float

    def __post_init__(self):
        if not (self.sigma > 0 and self.tau > 0):
            raise DomainError("sigma and tau must be > 0")

    @property
    def rho(self):
        s2, t2 = self.sigma**2, self.tau**2
        return t2 / (s2 + t2)

    @property
    def h(self):
        return 1.0 / self.sigma**2 + 1.0 / self.tau**2

    def swapped(self):
        """Same posterior with the roles of (y, sigma) and (z, tau) exchanged."""
        return PosteriorSpec(self.manifold, self.z, self.y, self.tau, self.sigma)


def map_estimate(spec):
    """Posterior mode z #_rho y."""
    return geodesic_combine(spec.manifold, spec.z, spec.y, spec.rho)


def posterior_log_density_unnorm(spec, x):
    m = spec.manifold
    if m.kind in VECTOR_KINDS:
        x = np.asarray(x, dtype=float)
        dy = m.dist(np.broadcast_to(spec.y, x.shape), x)
        dz = m.dist(x, np.broadcast_to(spec.z, x.shape))
    else:
        dy, dz = m.dist(spec.y, x), m.dist(x, spec.z)
    return -dy**2 / (2 * spec.sigma**2) - dz**2 / (2 * spec.tau**2)


def posterior_log_density_rearranged(spec, x):
    """-h (rho f_y + (1 - rho) f_z) with f_p = d^2(p, x)/2."""
    m = spec.manifold
    fy = 0.5 * m.dist(spec.y, x) ** 2
    fz = 0.5 * m.dist(x, spec.z) ** 2
    return -spec.h * (spec.rho * fy + (1 - spec.rho) * fz)


@dataclass
class MhConfig:
    proposal_tau_q: float
    n_samples: int
    burn_in: Optional[int] = None  # default: 10% of n_samples
    seed: int = 0
    n_chains: int = 1

    def __post_init__(self):
        if self.burn_in is None:
            self.burn_in = self.n_samples // 10
        if not self.proposal_tau_q > 0:
            raise DomainError("proposal_tau_q must be > 0")
        if not (self.n_samples > self.burn_in >= 0):
            raise DomainError("need n_samples > burn_in >= 0")
        if self.n_chains < 1 or self.n_samples % self.n_chains or self.burn_in % self.n_chains:
            raise DomainError("n_chains must divide n_samples and burn_in")

    @classmethod
    def for_posterior(cls, spec, n_samples, **kw):
        return cls(proposal_tau_q=max(spec.sigma, spec.tau) / 2, n_samples=n_samples, **kw)


@dataclass(frozen=True)
class ChainTrace:
    states: object  # stacked array for vector models, list otherwise
    accept_rate: float
    seed: int
    warnings: tuple = field(default=())

    def __len__(self):
        return len(self.states)


def _propose(m, x, tau_q, rng):
    """Isotropic Gaussian proposals centred at each row of x."""
    k = x.shape[0] if m.kind in VECTOR_KINDS else 1
    z = gaussian.sample_at_origin(m, tau_q, k, rng)
    if m.kind in VECTOR_KINDS:
        return m.translate(x, z)
    return m.translate(x, z[0])


def mh_sample(manifold, log_density, x0, cfg):
    """Isotropic Metropolis-Hastings with Gaussian proposals.

    Runs ``cfg.n_chains`` independent chains from x0; each contributes
    (n_samples - burn_in)/n_chains post-burn-in states.  On the vector models
    the chains advance together and ``log_density`` must accept a stack.
    States are returned chain-major.
    """
    rng = np.random.default_rng(cfg.seed)
    K = cfg.n_chains
    L, b = cfg.n_samples // K, cfg.burn_in // K
    notes = []
    if manifold.kind in VECTOR_KINDS:
        x = np.repeat(np.asarray(x0, dtype=float)[None, :], K, axis=0)
        lp = np.asarray(log_density(x), dtype=float)
        if not np.all(np.isfinite(lp)):
            raise DomainError("log_density is not finite at x0")
        out = np.empty((L - b, K, x.shape[1]))
        acc = 0
        run = np.zeros(K, dtype=int)
        for t in range(L):
            prop = _propose(manifold, x, cfg.proposal_tau_q, rng)
            lq = np.asarray(log_density(prop), dtype=float)
            ok = np.log(rng.random(K)) < lq - lp
            x = np.where(ok[:, None], prop, x)
            lp = np.where(ok, lq, lp)
            acc += int(ok.sum())
            run = np.where(ok, 0, run + 1)
            if np.any(run == STUCK_STEPS):
                notes.append(f"chain stuck for {STUCK_STEPS} steps at step {t}")
            if t >= b:
                out[t - b] = x
        states = out.transpose(1, 0, 2).reshape(-1, x.shape[1])
        rate = acc / (K * L)
    else:
        states, acc = [], 0
        for _ in range(K):
            x = np.array(x0, copy=True)
            lp = float(log_density(x))
            if not np.isfinite(lp):
                raise DomainError("log_density is not finite at x0")
            run = 0
            for t in range(L):
                prop = _propose(manifold, x, cfg.proposal_tau_q, rng)
                lq = float(log_density(prop))
                if np.log(rng.random()) < lq - lp:
                    x, lp, run = prop, lq, 0
                    acc += 1
                else:
                    run += 1
                    if run == STUCK_STEPS:
                        notes.append(f"chain stuck for {STUCK_STEPS} steps at step {t}")
                if t >= b:
                    states.append(x)
        rate = acc / (K * L)
    for n in notes:
        warnings.warn(n, RuntimeWarning, stacklevel=2)
    log.debug("mh_sample: %d states, acceptance %.3f", len(states), rate)
    return ChainTrace(states=states, accept_rate=rate, seed=cfg.seed, warnings=tuple(notes))


def mh_posterior(spec, cfg, x0=None):
    x0 = map_estimate(spec) if x0 is None else x0
    return mh_sample(spec.manifold, lambda x: posterior_log_density_unnorm(spec, x), x0, cfg)


def mms_estimate(manifold, trace, cfg=None, x0=None):
    """Empirical barycentre of the chain states."""
    if len(trace) == 0:
        raise DomainError("empty trace")
    return empirical_barycentre(manifold, trace.states, cfg=cfg, x0=x0)


def wasserstein_bound(manifold, trace, map_point):
    """m1 = mean distance from map_point to the chain states."""
    if len(trace) == 0:
        raise DomainError("empty trace")
    return float(np.mean(distances(manifold, map_point, trace.states)))



def tune_proposal(manifold, log_density, x0, tau_q, target=0.3, n_chains=100,
                  pilot_steps=200, rounds=8, seed=0):
    """Rescale tau_q over short pilot runs until acceptance is near ``target``.

    The pilots are discarded, so the final chain is an ordinary fixed-kernel
    Metropolis-Hastings chain.
    """
    for k in range(rounds):
        cfg = MhConfig(proposal_tau_q=tau_q, n_samples=n_chains * pilot_steps, burn_in=0,
                       seed=seed + k, n_chains=n_chains)
        rate = mh_sample(manifold, log_density, x0, cfg).accept_rate
        if abs(rate - target) < 0.05:
            break
        tau_q *= float(np.clip(np.exp(2.0 * (rate - target)), 0.25, 2.0)) if rate > 0 else 0.25
    return tau_q
