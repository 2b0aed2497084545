"""Seeded sampling and normal-moment helpers.

Every random draw in the package goes through :class:`RngState`, an immutable
(seed, stream) pair.  A fresh ``numpy.random.Generator`` is built from it on
demand, so the same state always reproduces the same sequence regardless of
what ran before it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import NonFiniteIntegrand, NotPositiveSemiDefinite

_MASK64 = (1 << 64) - 1
PSD_TOL = 1e-10


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


@dataclass(frozen=True)
class RngState:
    """Immutable handle on a reproducible random stream."""

    seed: int
    stream: int = 0

    def __post_init__(self):
        for name in ("seed", "stream"):
            v = getattr(self, name)
            if not (0 <= int(v) <= _MASK64):
                raise ValueError(f"{name} must be a 64-bit unsigned integer, got {v}")

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=int(self.seed), spawn_key=(int(self.stream),))
        return np.random.Generator(np.random.PCG64(ss))

    def spawn(self, *keys: int) -> "RngState":
        """Derive a child stream; deterministic in (self, keys)."""
        s = self.stream
        for key in keys:
            s = _splitmix64(s ^ _splitmix64(int(key) & _MASK64))
        return RngState(self.seed, s)

    def to_json(self):
        return {"seed": int(self.seed), "stream": int(self.stream)}

    @classmethod
    def from_json(cls, obj) -> "RngState":
        if isinstance(obj, dict):
            return cls(int(obj["seed"]), int(obj.get("stream", 0)))
        return cls(int(obj))


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, RngState):
        return rng.generator()
    if isinstance(rng, (int, np.integer)):
        return np.random.default_rng(int(rng))
    raise TypeError(f"expected RngState or numpy Generator, got {type(rng).__name__}")


def as_covariance(entries, dim: int | None = None) -> np.ndarray:
    """Validate a covariance matrix: square, finite and exactly symmetric."""
    cov = np.atleast_2d(np.asarray(entries, dtype=float))
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise ValueError(f"covariance must be square, got shape {cov.shape}")
    if dim is not None and cov.shape[0] != dim:
        raise ValueError(f"covariance has dim {cov.shape[0]}, expected {dim}")
    if not np.all(np.isfinite(cov)):
        raise ValueError("covariance has non-finite entries")
    if not np.array_equal(cov, cov.T):
        raise ValueError("covariance must be symmetric")
    return cov


def cholesky(cov) -> np.ndarray:
    """Lower-triangular factor of a positive semi-definite matrix.

    Unlike ``numpy.linalg.cholesky`` this accepts singular (e.g. all-zero)
    matrices: a pivot within ``PSD_TOL`` of zero gives a zero column.
    """
    a = as_covariance(cov)
    d = a.shape[0]
    L = np.zeros_like(a)
    scale = max(1.0, float(np.max(np.abs(np.diag(a)))))
    for j in range(d):
        pivot = a[j, j] - L[j, :j] @ L[j, :j]
        if pivot < -PSD_TOL * scale:
            raise NotPositiveSemiDefinite(f"pivot {pivot:.3g} at index {j}")
        if pivot <= PSD_TOL * scale:
            # semi-definite direction; the rest of the column must vanish too
            resid = a[j + 1:, j] - L[j + 1:, :j] @ L[j, :j]
            if np.any(np.abs(resid) > math.sqrt(PSD_TOL) * scale):
                raise NotPositiveSemiDefinite(f"zero pivot with non-zero column at index {j}")
            continue
        L[j, j] = math.sqrt(pivot)
        L[j + 1:, j] = (a[j + 1:, j] - L[j + 1:, :j] @ L[j, :j]) / L[j, j]
    return L


def mvn_sample(mean, cov, count: int, rng) -> np.ndarray:
    """``count`` i.i.d. rows from N(mean, cov)."""
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    L = cholesky(cov)
    if L.shape[0] != mean.shape[0]:
        raise ValueError(f"mean has length {mean.shape[0]}, covariance dim {L.shape[0]}")
    z = as_generator(rng).standard_normal((int(count), mean.shape[0]))
    return mean + z @ L.T


def double_factorial(m: int) -> int:
    if m < -1:
        raise ValueError("double factorial defined for m >= -1")
    out = 1
    while m > 1:
        out *= m
        m -= 2
    return out


def normal_central_moment(order: int, sigma: float) -> float:
    """E[e^order] for e ~ N(0, sigma^2)."""
    if order < 0:
        raise ValueError("order must be non-negative")
    if order % 2:
        return 0.0
    return sigma ** order * double_factorial(order - 1)


@lru_cache(maxsize=32)
def _hermite_e(nodes: int):
    x, w = np.polynomial.hermite_e.hermegauss(nodes)
    return x, w / math.sqrt(2.0 * math.pi)


def gauss_hermite_expectation(g, mu, sigma2, nodes: int = 40):
    """E[g(W)] for W ~ N(mu, sigma2) by probabilists' Gauss-Hermite quadrature.

    ``mu`` may be an array; ``g`` must then be vectorised.  Exact for
    polynomials of degree <= 2*nodes - 1.
    """
    if nodes < 2:
        raise ValueError("need at least 2 quadrature nodes")
    x, w = _hermite_e(int(nodes))
    mu = np.asarray(mu, dtype=float)
    pts = mu[..., None] + math.sqrt(sigma2) * x
    with np.errstate(all="ignore"):  # non-finite values are reported below
        vals = np.asarray(g(pts), dtype=float)
    if not np.all(np.isfinite(vals)):
        raise NonFiniteIntegrand("integrand is not finite at a quadrature node")
    out = vals @ w
    return float(out) if out.ndim == 0 else out
