"""Spatial correlation kernels and the Gaussian-process linear algebra.

Correlation matrices are immutable after construction: the Cholesky factor
(of the jittered matrix) is cached and shared by every solve.  Distances
are Euclidean on raw coordinates.

The ``exchangeable`` family is the no-spatial-information baseline: every
pair of sites is perfectly correlated, which the samplers exploit
structurally by carrying one shared latent scalar per factor column.
"""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular
from scipy.spatial.distance import cdist
from scipy.special import gammaln, kv

__all__ = [
    "EXPONENTIAL",
    "MATERN",
    "EXCHANGEABLE",
    "FactorizationError",
    "Location",
    "KernelSpec",
    "CorrelationMatrix",
    "as_coords",
    "pairwise_distances",
    "cross_distances",
    "correlation",
    "build_correlation",
    "build_correlation_from_distances",
    "gp_conditional",
    "gp_conditional_many",
]

EXPONENTIAL = "exponential"
MATERN = "matern"
EXCHANGEABLE = "exchangeable"

JITTERS = (1e-8, 1e-7, 1e-6, 1e-5, 1e-4)


class FactorizationError(RuntimeError):
    """Correlation matrix could not be factorized even at the largest jitter."""


@dataclass(frozen=True)
class Location:
    """A named planar site."""

    id: str
    x: float
    y: float

    @property
    def coords(self):
        return np.array([self.x, self.y])


@dataclass(frozen=True)
class KernelSpec:
    """Correlation family with its range phi and (Matern only) smoothness kappa."""

    family: str
    phi: float | None = None
    kappa: float | None = None

    def __post_init__(self):
        if self.family not in (EXPONENTIAL, MATERN, EXCHANGEABLE):
            raise ValueError(f"unknown kernel family: {self.family!r}")
        if self.family == EXCHANGEABLE:
            return
        if self.phi is None or not self.phi > 0:
            raise ValueError(f"range parameter must be positive, got {self.phi}")
        if self.family == MATERN and (self.kappa is None or not self.kappa > 0):
            raise ValueError(f"smoothness must be positive, got {self.kappa}")

    @property
    def param_names(self):
        if self.family == EXPONENTIAL:
            return ("phi",)
        if self.family == MATERN:
            return ("phi", "kappa")
        return ()

    @property
    def params(self):
        return np.array([getattr(self, name) for name in self.param_names])

    def with_params(self, values):
        """New spec with the positional parameters replaced."""
        values = np.asarray(values, dtype=float)
        kwargs = dict(zip(self.param_names, values.tolist()))
        return KernelSpec(self.family, **{"phi": self.phi, "kappa": self.kappa, **kwargs})


def as_coords(locations):
    """Coerce a list of Location (or an (n, 2) array) to an (n, 2) float array."""
    if isinstance(locations, np.ndarray):
        coords = np.asarray(locations, dtype=float)
    else:
        coords = np.array([[loc.x, loc.y] for loc in locations], dtype=float)
    if coords.ndim != 2 or coords.shape[1] != 2:
        raise ValueError(f"expected (n, 2) coordinates, got shape {coords.shape}")
    if not np.isfinite(coords).all():
        raise ValueError("coordinates must be finite")
    return coords


def pairwise_distances(locations):
    coords = as_coords(locations)
    return cdist(coords, coords)


def cross_distances(new, locations):
    return cdist(as_coords(new), as_coords(locations))


def correlation(d, spec):
    """Correlation at distance(s) ``d`` under ``spec``; vectorized over d."""
    d = np.asarray(d, dtype=float)
    if (d < 0).any():
        raise ValueError("distances must be nonnegative")
    if spec.family == EXCHANGEABLE:
        return np.ones_like(d)[()]
    if spec.family == EXPONENTIAL:
        return np.exp(-d / spec.phi)[()]
    # Matern: {2^{kappa-1} Gamma(kappa)}^{-1} (d/phi)^kappa K_kappa(d/phi),
    # continued to 1 at d = 0
    x = d / spec.phi
    out = np.ones_like(x)
    pos = x > 0
    xp = x[pos]
    kap = spec.kappa
    log_norm = (1.0 - kap) * np.log(2.0) - gammaln(kap)
    with np.errstate(invalid="ignore", over="ignore"):
        val = np.exp(log_norm + kap * np.log(xp)) * kv(kap, xp)
    out[pos] = np.where(np.isfinite(val), val, 0.0)  # kv underflow at large x
    return out[()]


class CorrelationMatrix:
    """An n x n spatial correlation matrix with a cached Cholesky factor.

    The factor is of ``Q + jitter * I`` where the jitter escalates from 1e-8
    by decades up to 1e-4 before construction fails; ``Q`` itself keeps an
    exact unit diagonal.
    """

    def __init__(self, Q, lower, jitter):
        self.Q = Q
        self.lower = lower  # L with L L^T = Q + jitter I
        self.jitter = jitter
        self._inv = None
        self._solve_ones = None

    @property
    def n(self):
        return self.Q.shape[0]

    def solve(self, b):
        """Q^{-1} b (using the jittered factor)."""
        return cho_solve((self.lower, True), np.asarray(b, dtype=float))

    @property
    def inv(self):
        if self._inv is None:
            self._inv = self.solve(np.eye(self.n))
        return self._inv

    @property
    def solve_ones(self):
        """Cached Q^{-1} 1."""
        if self._solve_ones is None:
            self._solve_ones = self.solve(np.ones(self.n))
        return self._solve_ones

    def logdet(self):
        return 2.0 * np.sum(np.log(np.diag(self.lower)))

    def sample_field(self, mu, tau, rng, size=1):
        """Draw ``size`` columns from N(mu 1, tau^{-1} Q)."""
        noise = rng.standard_normal((self.n, size))
        return mu + (self.lower @ noise) / np.sqrt(tau)


def _factorize(Q):
    for jitter in JITTERS:
        try:
            lower = cholesky(Q + jitter * np.eye(Q.shape[0]), lower=True)
            return lower, jitter
        except np.linalg.LinAlgError:
            continue
        except ValueError:
            continue
    raise FactorizationError(
        f"Cholesky failed for n={Q.shape[0]} even at jitter {JITTERS[-1]:g}"
    )


def build_correlation_from_distances(D, spec):
    """Correlation matrix from a precomputed symmetric distance matrix."""
    Q = correlation(D, spec)
    Q = np.asarray(Q, dtype=float)
    Q = 0.5 * (Q + Q.T)
    np.fill_diagonal(Q, 1.0)
    lower, jitter = _factorize(Q)
    return CorrelationMatrix(Q, lower, jitter)


def build_correlation(locations, spec):
    """Correlation matrix over the pairwise Euclidean distances of ``locations``."""
    coords = as_coords(locations)
    if coords.shape[0] < 1:
        raise ValueError("need at least one location")
    return build_correlation_from_distances(cdist(coords, coords), spec)


def gp_conditional(s, locations, u_k, mu, tau, spec, corr=None):
    """Mean and variance of the latent field at a new site given ``u_k``.

    mean = mu + C(s) Q^{-1} (u_k - mu 1)
    var  = (1 - C(s) Q^{-1} C(s)^T) / tau, clamped at 0
    """
    mean, var = gp_conditional_many(
        np.atleast_2d(as_coords_single(s)), locations, u_k, mu, tau, spec, corr
    )
    return float(mean[0]), float(var[0])


def as_coords_single(s):
    if isinstance(s, Location):
        return s.coords
    s = np.asarray(s, dtype=float)
    if s.shape != (2,):
        raise ValueError(f"expected a single (2,) coordinate, got shape {s.shape}")
    return s


def gp_conditional_many(new, locations, u_k, mu, tau, spec, corr=None):
    """Vectorized ``gp_conditional`` over an (m, 2) array of new sites."""
    u_k = np.asarray(u_k, dtype=float)
    coords = as_coords(locations)
    if u_k.shape != (coords.shape[0],):
        raise ValueError("u_k length must match the number of locations")
    new = as_coords(new)
    if spec.family == EXCHANGEABLE:
        # one shared latent value: a new site interpolates it exactly
        return np.full(new.shape[0], u_k[0]), np.zeros(new.shape[0])
    if corr is None:
        corr = build_correlation(coords, spec)
    C = correlation(cdist(new, coords), spec)  # (m, n)
    sol = corr.solve(C.T)  # (n, m)
    mean = mu + C @ corr.solve(u_k - mu)
    var = (1.0 - np.einsum("mn,nm->m", C, sol)) / tau
    return mean, np.maximum(var, 0.0)
