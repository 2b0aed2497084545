"""Closed-form variance results for replicate averaging, each with a Monte Carlo oracle.

All oracles draw from their own seeded stream; they never call the formula
they are checking.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .randmath import as_generator, normal_central_moment


@dataclass(frozen=True)
class VarianceReport:
    analytic: float
    monte_carlo: float
    mc_standard_error: float
    draws: int

    def __post_init__(self):
        if self.draws > 1 and not self.mc_standard_error > 0:
            raise ValueError("Monte Carlo standard error must be positive")

    @property
    def z(self) -> float:
        """Standardised discrepancy between the MC estimate and the formula."""
        return (self.monte_carlo - self.analytic) / self.mc_standard_error

    def within(self, n_se: float = 3.0) -> bool:
        return abs(self.monte_carlo - self.analytic) <= n_se * self.mc_standard_error


def sample_variance_with_se(x) -> tuple:
    """Sample variance and its large-sample SE, sqrt((m4 - s^4) / N)."""
    x = np.asarray(x, dtype=float).ravel()
    if x.size < 2:
        raise ValueError("need at least two draws")
    d = x - x.mean()
    d2 = d * d
    s2 = float(d2.sum()) / (x.size - 1)
    m4 = float(np.mean(d2 * d2))
    return s2, math.sqrt(max(m4 - s2 * s2, 0.0) / x.size)


def _mean_of_draws(gen, k: int, draws: int, sd: float, f=None) -> np.ndarray:
    """Mean over k independent N(0, sd^2) draws (optionally mapped by f), k arrays at a time."""
    acc = np.zeros(draws)
    for _ in range(k):
        e = gen.standard_normal(draws) * sd
        acc += e if f is None else f(e)
    return acc / k


# ---------------------------------------------------------------------------
# averaging under additive and multiplicative error


def averaged_error_variance(sigma2: float, k: int) -> float:
    """Error variance of the mean of k replicates with additive error."""
    if sigma2 <= 0 or k < 1:
        raise ValueError("sigma2 must be positive and k >= 1")
    return sigma2 / k


def mc_averaged_error_variance(sigma2: float, k: int, draws: int, rng) -> VarianceReport:
    gen = as_generator(rng)
    v, se = sample_variance_with_se(_mean_of_draws(gen, k, draws, math.sqrt(sigma2)))
    return VarianceReport(averaged_error_variance(sigma2, k), v, se, draws)


def _lognormal_root(target: float) -> float:
    # s solving (e^s - 1) e^s = target, via t = e^s = (1 + sqrt(1 + 4 target)) / 2
    return math.log1p(2.0 * target / (1.0 + math.sqrt(1.0 + 4.0 * target)))


def equivalent_lognormal_variance(sigma2: float, k: int) -> float:
    """Variance of a single lognormal error matching the mean of k lognormal errors.

    Solves (e^s - 1) e^s = (e^{sigma2} - 1) e^{sigma2} / k for s.  At k = 1
    this returns sigma2 itself.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if sigma2 < 0:
        raise ValueError("sigma2 must be non-negative")
    if sigma2 == 0:
        return 0.0
    return _lognormal_root(math.expm1(sigma2) * math.exp(sigma2) / k)


def equivalent_lognormal_variance_printed(sigma2: float, k: int) -> float:
    """The literal parenthesisation log(sqrt((k - 4e^s + 4e^{2s}) / k) / 2 + 1).

    Kept for side-by-side display only; it does not reduce to sigma2 at k = 1.
    """
    e = math.exp(sigma2)
    return math.log(0.5 * math.sqrt((k - 4.0 * e + 4.0 * e * e) / k) + 1.0)


def mc_equivalent_lognormal_variance(sigma2: float, k: int, draws: int, rng) -> VarianceReport:
    """Simulate the mean of k lognormal errors, match its variance and invert.

    The SE is carried through the inversion by the delta method.
    """
    gen = as_generator(rng)
    v, se_v = sample_variance_with_se(_mean_of_draws(gen, k, draws, math.sqrt(sigma2), np.exp))
    s = _lognormal_root(v)
    # d s / d v = 1 / (t sqrt(1 + 4v)) with t = e^s
    se = se_v / (math.exp(s) * math.sqrt(1.0 + 4.0 * v))
    return VarianceReport(equivalent_lognormal_variance(sigma2, k), s, se, draws)


# ---------------------------------------------------------------------------
# conditional variance and the sample-size / replicate trade-off


def conditional_truth_variance(sigma_V2: float, sigma_X2: float, k: int) -> float:
    """var(X | mean of k replicates) for Gaussian X and Gaussian replicate error."""
    if sigma_V2 <= 0 or sigma_X2 <= 0 or k < 1:
        raise ValueError("variances must be positive and k >= 1")
    return sigma_V2 * sigma_X2 / (sigma_V2 + k * sigma_X2)


def mc_conditional_truth_variance(sigma_V2: float, sigma_X2: float, k: int, draws: int,
                                  rng) -> VarianceReport:
    """Residual variance of X after its best linear predictor from the replicate mean.

    For jointly Gaussian variables that residual variance is the conditional
    variance, so the oracle never uses the closed form.
    """
    gen = as_generator(rng)
    x = gen.standard_normal(draws) * math.sqrt(sigma_X2)
    xbar = x + _mean_of_draws(gen, k, draws, math.sqrt(sigma_V2))
    xc, mc = x - x.mean(), xbar - xbar.mean()
    slope = float(xc @ mc) / float(mc @ mc)
    resid = xc - slope * mc
    v, se = sample_variance_with_se(resid)
    v *= (draws - 1) / (draws - 2)  # one extra degree of freedom for the slope
    return VarianceReport(conditional_truth_variance(sigma_V2, sigma_X2, k), v, se, draws)


@dataclass(frozen=True)
class TradeoffInputs:
    sigma_Y2: float
    sigma_V2: float
    sigma_X2: float
    C1: float
    C2: float
    delta: float
    n: int
    k: int

    def __post_init__(self):
        if min(self.sigma_Y2, self.sigma_V2, self.sigma_X2) <= 0:
            raise ConfigError("variances must be positive")
        if self.C1 < 0 or self.C2 < 0:
            raise ConfigError("C1 and C2 must be non-negative")
        if not 0 <= self.delta < 1:
            raise ConfigError("delta must lie in [0, 1)")
        if self.n < 1 or self.k < 1:
            raise ConfigError("n and k must be positive")


def prediction_floor(inputs: TradeoffInputs) -> float:
    """sigma_Y^2 + C1 / k + C2 / n^(1 - delta)."""
    return inputs.sigma_Y2 + inputs.C1 / inputs.k + inputs.C2 / inputs.n ** (1.0 - inputs.delta)


# ---------------------------------------------------------------------------
# transform of the average vs average of the transform

TRANSFORMS = {
    "identity": lambda x: x,
    "square": np.square,
    "cube": lambda x: x ** 3,
    "exp": np.exp,
}


def transform_derivatives(f: str, omega: float, order: int) -> list:
    """f^(r)(omega) for r = 1..order."""
    if f == "exp":
        return [math.exp(omega)] * order
    power = {"identity": 1, "square": 2, "cube": 3}.get(f)
    if power is None:
        raise ConfigError(f"unknown transform {f!r}; choose from {sorted(TRANSFORMS)}")
    out = []
    for r in range(1, order + 1):
        out.append(0.0 if r > power else math.perm(power, r) * omega ** (power - r))
    return out


def _closed_form(f: str, omega: float, sigma: float, k: int) -> tuple:
    """Exact (transform-of-average, average-of-transform) variances."""
    if f == "exp":
        def v(s2):
            return math.exp(2 * omega) * (math.exp(2 * s2) - math.exp(s2))
        return v(sigma ** 2 / k), v(sigma ** 2) / k
    d = transform_derivatives(f, omega, 3)
    return (taylor_variance(d, sigma, k, "transform_of_average"),
            taylor_variance(d, sigma, k, "average_of_transform"))


def lemma1_check(f: str, omega: float, sigma: float, k: int, draws: int, rng):
    """Monte Carlo comparison of var f(omega + mean error) and mean of var f(omega + error).

    Returns (transform-of-average report, average-of-transform report, holds),
    where ``holds`` allows a 3-SE slack on the combined standard error.  The
    two estimates use independent streams.
    """
    if f not in TRANSFORMS:
        raise ConfigError(f"unknown transform {f!r}; choose from {sorted(TRANSFORMS)}")
    if k < 2:
        raise ConfigError("k must be >= 2")
    if draws < 100_000:
        raise ConfigError("draws must be >= 1e5")
    if sigma <= 0:
        raise ConfigError("sigma must be positive")
    fn = TRANSFORMS[f]
    gen = as_generator(rng)
    g1, g2 = gen.spawn(2)
    toa, aot = _closed_form(f, omega, sigma, k)
    v1, se1 = sample_variance_with_se(fn(omega + _mean_of_draws(g1, k, draws, sigma)))
    v2, se2 = sample_variance_with_se(_mean_of_draws(g2, k, draws, sigma, lambda e: fn(omega + e)))
    first = VarianceReport(toa, v1, se1, draws)
    second = VarianceReport(aot, v2, se2, draws)
    holds = v1 <= v2 + 3.0 * math.hypot(se1, se2)
    return first, second, holds


def strict_gap(first: VarianceReport, second: VarianceReport, n_se: float = 3.0) -> bool:
    """True when the second variance exceeds the first by more than ``n_se`` combined SEs."""
    return second.monte_carlo - first.monte_carlo > n_se * math.hypot(first.mc_standard_error,
                                                                      second.mc_standard_error)


def taylor_variance(f_derivatives, sigma: float, k: int, mode: str, truncation: int | None = None) -> float:
    """Truncated Taylor-series variance of f applied around omega.

    ``f_derivatives[r-1]`` is f^(r)(omega).  With c_r = f^(r) / r!, the sum is
    sum_{r,r'} c_r c_r' [m(r + r') - m(r) m(r')], where m are central normal
    moments.  ``transform_of_average`` uses the mean error (sd sigma/sqrt(k));
    ``average_of_transform`` uses a single error (sd sigma) and divides by k.
    """
    d = [float(x) for x in f_derivatives]
    R = len(d) if truncation is None else int(truncation)
    if R < 1 or R > len(d):
        raise ValueError("truncation must be between 1 and the number of derivatives")
    if not all(math.isfinite(x) for x in d[:R]):
        raise ValueError("derivatives must be finite")
    if mode == "transform_of_average":
        sd, scale = sigma / math.sqrt(k), 1.0
    elif mode == "average_of_transform":
        sd, scale = sigma, 1.0 / k
    else:
        raise ValueError(f"unknown mode {mode!r}")
    c = [d[r - 1] / math.factorial(r) for r in range(1, R + 1)]
    m = [normal_central_moment(j, sd) for j in range(2 * R + 1)]
    total = 0.0
    for i in range(1, R + 1):
        for j in range(1, R + 1):
            total += c[i - 1] * c[j - 1] * (m[i + j] - m[i] * m[j])
    return scale * total
