"""Synthetic replicate-measurement data for the three simulation designs.

Surrogates are generated on the additive (Box-Cox transformed) scale,
``X*_{l,j} = beta_0l + u_l + eps_lj``.  The inverse-Box-Cox image of the same
draws is available through :meth:`Dataset.observed_view`; which one an
experiment consumes is an experiment setting.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, DomainError, NonPositiveTruth, UnknownScenario
from .randmath import RngState, as_covariance, as_generator, gauss_hermite_expectation, mvn_sample

OUTCOME_FORMS = ("linear", "ratio", "sim3-nonlinear")
MAX_REDRAWS = 100

SIGMA_U = [[20.0, 15.5], [15.5, 25.5]]
SIGMA_EPS = [[38.0, 20.5], [20.5, 34.5]]
SIGMA_Z = [
    [1.28, 0.21, -0.07, 0.32],
    [0.21, 1.98, 1.28, 0.34],
    [-0.07, 1.28, 1.91, 1.22],
    [0.32, 0.34, 1.22, 1.20],
]


# ---------------------------------------------------------------------------
# Box-Cox


def box_cox(x, lam):
    """(x**lam - 1)/lam, or log(x) at lam == 0."""
    x = np.asarray(x, dtype=float)
    if np.any(~(x > 0)):
        raise DomainError("Box-Cox requires strictly positive input")
    out = np.log(x) if lam == 0 else np.expm1(lam * np.log(x)) / lam
    return float(out) if out.ndim == 0 else out


def inverse_box_cox(w, lam):
    w = np.asarray(w, dtype=float)
    if lam == 0:
        out = np.exp(w)
    else:
        lw = lam * w
        if np.any(~(lw > -1.0)):
            raise DomainError("inverse Box-Cox requires lam*w + 1 > 0")
        out = np.exp(np.log1p(lw) / lam)
    return float(out) if out.ndim == 0 else out


def _inverse_box_cox_clamped(w, lam):
    # continuous extension used inside expectations: (lam*w+1)_+^(1/lam)
    if lam == 0:
        return np.exp(w)
    lw = np.maximum(lam * w, -1.0)
    with np.errstate(divide="ignore", over="ignore"):
        return np.exp(np.log1p(lw) / lam)


def true_usual_intake(eta, lam, sigma_eps2: float, nodes: int = 40):
    """E[f^{-1}(eta + eps)], eps ~ N(0, sigma_eps2): the per-person usual intake.

    ``lam=None`` means f is the identity and the answer is ``eta``.  Below the
    Box-Cox support (lam*w + 1 <= 0, lam > 0) the integrand is taken as 0,
    its continuous limit.
    """
    if lam is None:
        eta = np.asarray(eta, dtype=float)
        return float(eta) if eta.ndim == 0 else eta.copy()
    if sigma_eps2 == 0:
        return inverse_box_cox(eta, lam)
    return gauss_hermite_expectation(lambda w: _inverse_box_cox_clamped(w, lam), eta, sigma_eps2, nodes)


# ---------------------------------------------------------------------------
# containers


@dataclass
class ScenarioSpec:
    n: int
    k: int
    p: int
    q: int
    sigma_Y2: float
    alpha: tuple
    beta: np.ndarray  # p x (1 + q); column 0 holds the intercepts beta_0l
    Sigma_u: np.ndarray
    Sigma_eps: np.ndarray
    lam: float | None = None
    Sigma_Z: np.ndarray | None = None
    outcome_form: str = "linear"
    link: str = "identity"
    seed: RngState = field(default_factory=lambda: RngState(0))
    missing_fraction: float = 0.0  # share of individuals with day 2 unobserved

    def __post_init__(self):
        self.n, self.k, self.p, self.q = int(self.n), int(self.k), int(self.p), int(self.q)
        self.alpha = tuple(float(a) for a in self.alpha)
        self.beta = np.atleast_2d(np.asarray(self.beta, dtype=float))
        self.Sigma_u = as_covariance(self.Sigma_u, self.p)
        self.Sigma_eps = as_covariance(self.Sigma_eps, self.p)
        if self.Sigma_Z is not None:
            self.Sigma_Z = as_covariance(self.Sigma_Z, self.q)
        if not isinstance(self.seed, RngState):
            self.seed = RngState.from_json(self.seed)
        if self.n < 1 or self.k < 1:
            raise ConfigError("n and k must be >= 1")
        if self.sigma_Y2 < 0:
            raise ConfigError("sigma_Y2 must be non-negative")
        if self.beta.shape != (self.p, 1 + self.q):
            raise ConfigError(f"beta must be {self.p} x {1 + self.q}, got {self.beta.shape}")
        if self.outcome_form not in OUTCOME_FORMS:
            raise ConfigError(f"unknown outcome_form {self.outcome_form!r}")
        if self.link != "identity":
            raise ConfigError(f"unsupported link {self.link!r}")
        if self.outcome_form == "ratio" and self.p != 2:
            raise ConfigError("ratio outcome requires p = 2")
        if not 0 <= self.missing_fraction < 1:
            raise ConfigError("missing_fraction must be in [0, 1)")

    @property
    def beta0(self) -> np.ndarray:
        return self.beta[:, 0]

    def with_(self, **changes) -> "ScenarioSpec":
        return replace(self, **changes)

    def to_json(self) -> dict:
        return {
            "n": self.n,
            "k": self.k,
            "p": self.p,
            "q": self.q,
            "sigma_Y2": self.sigma_Y2,
            "alpha": list(self.alpha),
            "beta": self.beta.tolist(),
            "Sigma_u": self.Sigma_u.tolist(),
            "Sigma_eps": self.Sigma_eps.tolist(),
            "lambda": self.lam,
            "Sigma_Z": None if self.Sigma_Z is None else self.Sigma_Z.tolist(),
            "outcome_form": self.outcome_form,
            "link": self.link,
            "seed": self.seed.to_json(),
            "missing_fraction": self.missing_fraction,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ScenarioSpec":
        obj = dict(obj)
        if "lambda" in obj:
            obj["lam"] = obj.pop("lambda")
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(obj) - known
        if unknown:
            raise ConfigError(f"unknown ScenarioSpec field(s): {sorted(unknown)}")
        try:
            return cls(**obj)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid ScenarioSpec: {exc}") from exc

    @classmethod
    def load(cls, path) -> "ScenarioSpec":
        try:
            return cls.from_json(json.loads(Path(path).read_text()))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from exc

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_json(), indent=2) + "\n")


@dataclass
class Dataset:
    """Outcomes, error-free covariates and replicate surrogates.

    ``X_star`` has shape (n, p, k); unobserved replicates hold NaN and are
    flagged False in ``present``.
    """

    Y: np.ndarray
    Z: np.ndarray
    X_star: np.ndarray
    present: np.ndarray
    X_true: np.ndarray | None = None
    lam: float | None = None
    x_names: list = None
    z_names: list = None
    z_kinds: list = None
    scale: str = "additive"
    redraws: int = 0
    had_second_day: np.ndarray | None = None  # set by second-day imputation
    z_levels: dict = field(default_factory=dict)  # categorical code -> level names

    def __post_init__(self):
        n = self.Y.shape[0]
        if self.Z.ndim != 2 or self.Z.shape[0] != n:
            raise ValueError("Z must be n x q")
        if self.X_star.ndim != 3 or self.X_star.shape[0] != n:
            raise ValueError("X_star must be n x p x k")
        if self.present.shape != (n, self.k):
            raise ValueError("present mask must be n x k")
        if n and not self.present[:, 0].all():
            raise ValueError("day 1 must be observed for every individual")
        if self.X_true is not None and self.X_true.shape != (n, self.p):
            raise ValueError("X_true must be n x p")
        if self.x_names is None:
            self.x_names = [f"X{l + 1}" for l in range(self.p)]
        if self.z_names is None:
            self.z_names = [f"Z{j + 1}" for j in range(self.q)]
        if self.z_kinds is None:
            self.z_kinds = ["continuous"] * self.q

    @property
    def n(self) -> int:
        return self.Y.shape[0]

    @property
    def p(self) -> int:
        return self.X_star.shape[1]

    @property
    def k(self) -> int:
        return self.X_star.shape[2]

    @property
    def q(self) -> int:
        return self.Z.shape[1]

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows)
        return replace(
            self,
            Y=self.Y[rows],
            Z=self.Z[rows],
            X_star=self.X_star[rows],
            present=self.present[rows],
            X_true=None if self.X_true is None else self.X_true[rows],
            had_second_day=None if self.had_second_day is None else self.had_second_day[rows],
        )

    def observed_view(self) -> "Dataset":
        """Surrogates mapped through the inverse Box-Cox (identity when lam is None)."""
        if self.scale == "observed" or self.lam is None:
            return replace(self, scale="observed")
        xs = np.full_like(self.X_star, np.nan)
        ok = ~np.isnan(self.X_star)
        xs[ok] = inverse_box_cox(self.X_star[ok], self.lam)
        return replace(self, X_star=xs, scale="observed")

    def view(self, scale: str) -> "Dataset":
        if scale == "additive":
            if self.scale != "additive":
                raise ValueError("dataset already on observed scale")
            return self
        if scale == "observed":
            return self.observed_view()
        raise ConfigError(f"unknown surrogate scale {scale!r}")


# ---------------------------------------------------------------------------
# generators


def _missing_mask(spec: ScenarioSpec, gen: np.random.Generator) -> np.ndarray:
    present = np.ones((spec.n, spec.k), dtype=bool)
    if spec.missing_fraction > 0 and spec.k >= 2:
        drop = gen.random(spec.n) < spec.missing_fraction
        present[drop, 1:] = False
    return present


def _redraw(bad_fn, draw_fn, n, what):
    """Redraw rows flagged by ``bad_fn`` until none remain (bounded)."""
    state = draw_fn(np.arange(n), None)
    redraws = 0
    for _ in range(MAX_REDRAWS):
        bad = np.flatnonzero(bad_fn(state))
        if bad.size == 0:
            return state, redraws
        redraws += bad.size
        state = draw_fn(bad, state)
    raise what(f"non-positive values persisted after {MAX_REDRAWS} redraws")


def generate_ratio_scenario(spec: ScenarioSpec, rng=None) -> Dataset:
    """Two error-prone components, outcome alpha0 + alpha1 * X1 / X2 + e."""
    if spec.outcome_form != "ratio" or spec.p != 2 or spec.q != 0:
        raise ConfigError("ratio scenario needs outcome_form='ratio', p=2, q=0")
    gen = as_generator(spec.seed if rng is None else rng)
    n, k, p = spec.n, spec.k, spec.p
    lam = spec.lam

    def draw(rows, state):
        u = mvn_sample(np.zeros(p), spec.Sigma_u, rows.size, gen)
        eps = mvn_sample(np.zeros(p), spec.Sigma_eps, rows.size * k, gen)
        w = (spec.beta0 + u)[:, :, None] + eps.reshape(rows.size, k, p).transpose(0, 2, 1)
        if state is None:
            return u, w
        state[0][rows], state[1][rows] = u, w
        return state

    def bad(state):
        _, w = state
        out = np.any(w <= 0, axis=(1, 2))
        if lam is not None and lam < 0:
            out |= np.any(lam * w + 1 <= 0, axis=(1, 2))
        return out

    (u, X_star), redraws = _redraw(bad, draw, n, DomainError)
    eta = spec.beta0 + u
    X_true = np.column_stack(
        [true_usual_intake(eta[:, l], lam, spec.Sigma_eps[l, l]) for l in range(p)]
    )
    if np.any(X_true[:, 1] <= 0):
        raise DomainError("non-positive ratio denominator in usual intake")
    e = gen.standard_normal(n) * math.sqrt(spec.sigma_Y2)
    a0, a1 = spec.alpha[:2]
    Y = a0 + a1 * X_true[:, 0] / X_true[:, 1] + e
    present = _missing_mask(spec, gen)
    X_star[~np.broadcast_to(present[:, None, :], X_star.shape)] = np.nan
    return Dataset(Y=Y, Z=np.zeros((n, 0)), X_star=X_star, present=present,
                   X_true=X_true, lam=lam, redraws=redraws)


def sim3_outcome(alpha, X, Z) -> np.ndarray:
    """Seven-term nonlinear mean function plus the Z3 shift (no noise)."""
    a = alpha
    x1, x2 = X[:, 0], X[:, 1]
    return (a[0] + a[1] * x1 + a[2] * x2 + a[3] * x1 / x2 + a[4] * np.log(x1)
            + a[5] * np.log(x2) + a[6] * np.sqrt(x1 * x2) + Z[:, 2])


def generate_sim3_scenario(spec: ScenarioSpec, rng=None) -> Dataset:
    if spec.outcome_form != "sim3-nonlinear" or spec.p != 2 or spec.q != 4 or spec.Sigma_Z is None:
        raise ConfigError("sim3 scenario needs outcome_form='sim3-nonlinear', p=2, q=4, Sigma_Z")
    gen = as_generator(spec.seed if rng is None else rng)
    n, k, p = spec.n, spec.k, spec.p
    Z = mvn_sample(np.zeros(spec.q), spec.Sigma_Z, n, gen)
    design = np.column_stack([np.ones(n), Z])

    def draw(rows, state):
        X = design[rows] @ spec.beta.T + mvn_sample(np.zeros(p), spec.Sigma_u, rows.size, gen)
        eps = mvn_sample(np.zeros(p), spec.Sigma_eps, rows.size * k, gen)
        xs = X[:, :, None] + eps.reshape(rows.size, k, p).transpose(0, 2, 1)
        if state is None:
            return X, xs
        state[0][rows], state[1][rows] = X, xs
        return state

    def bad(state):
        X, xs = state
        return np.any(X <= 0, axis=1) | np.any(xs <= 0, axis=(1, 2))

    (X, X_star), redraws = _redraw(bad, draw, n, NonPositiveTruth)
    e = gen.standard_normal(n) * math.sqrt(spec.sigma_Y2)
    Y = sim3_outcome(spec.alpha, X, Z) + e
    present = _missing_mask(spec, gen)
    X_star[~np.broadcast_to(present[:, None, :], X_star.shape)] = np.nan
    return Dataset(Y=Y, Z=Z, X_star=X_star, present=present, X_true=X, lam=None, redraws=redraws)


def generate_linear_scenario(spec: ScenarioSpec, rng=None) -> Dataset:
    """Classical additive model with a linear outcome (Z optional)."""
    gen = as_generator(spec.seed if rng is None else rng)
    n, k, p, q = spec.n, spec.k, spec.p, spec.q
    Z = mvn_sample(np.zeros(q), spec.Sigma_Z, n, gen) if q else np.zeros((n, 0))
    design = np.column_stack([np.ones(n), Z])
    u = mvn_sample(np.zeros(p), spec.Sigma_u, n, gen)
    eta = design @ spec.beta.T + u
    eps = mvn_sample(np.zeros(p), spec.Sigma_eps, n * k, gen).reshape(n, k, p).transpose(0, 2, 1)
    X_star = eta[:, :, None] + eps
    X_true = np.column_stack(
        [true_usual_intake(eta[:, l], spec.lam, spec.Sigma_eps[l, l]) for l in range(p)]
    )
    alpha = np.asarray(spec.alpha)
    if alpha.size != 1 + p + q:
        raise ConfigError(f"linear outcome needs {1 + p + q} alpha values, got {alpha.size}")
    Y = alpha[0] + X_true @ alpha[1:1 + p] + Z @ alpha[1 + p:]
    Y = Y + gen.standard_normal(n) * math.sqrt(spec.sigma_Y2)
    present = _missing_mask(spec, gen)
    X_star[~np.broadcast_to(present[:, None, :], X_star.shape)] = np.nan
    return Dataset(Y=Y, Z=Z, X_star=X_star, present=present, X_true=X_true, lam=spec.lam)


def generate(spec: ScenarioSpec, rng=None) -> Dataset:
    if spec.outcome_form == "ratio":
        return generate_ratio_scenario(spec, rng)
    if spec.outcome_form == "sim3-nonlinear":
        return generate_sim3_scenario(spec, rng)
    return generate_linear_scenario(spec, rng)


# ---------------------------------------------------------------------------
# reference parameterisations

SIM1_DAYS = (2, 4, 6, 8, 10)
SIM2_BUDGETS = (12000, 60000, 120000)

_SIM3 = {
    1: dict(alpha=(350, 2, -1, 3, 2, 1, -4),
            beta=[[100, 2, 0, -1, 0.5], [100, 0, 2, 1, -0.5]]),
    2: dict(alpha=(350, 1, -1, 50, 25, 25, -1),
            beta=[[50, 2, 0, -1, 0.5], [50, 0, 2, 1, -0.5]]),
}


def _ratio_spec(n, k, lam, seed) -> ScenarioSpec:
    return ScenarioSpec(
        n=n, k=k, p=2, q=0, sigma_Y2=1.0, alpha=(98.5, 4.0), beta=[[36.0], [27.5]],
        Sigma_u=SIGMA_U, Sigma_eps=SIGMA_EPS, lam=lam, outcome_form="ratio", seed=RngState(seed),
    )


def make_paper_spec(which: str, *, days: int | None = None, budget: int | None = None,
                    scenario: int | None = None, seed: int = 0) -> ScenarioSpec:
    """Parameter sets of the three reference simulation designs.

    >>> make_paper_spec("sim2", budget=60000, days=10).n
    6000
    """
    if which == "sim1":
        if days not in SIM1_DAYS:
            raise UnknownScenario(f"sim1 days must be one of {SIM1_DAYS}, got {days}")
        return _ratio_spec(12000, days, 0.35, seed)
    if which == "sim2":
        if days not in SIM1_DAYS or budget not in SIM2_BUDGETS:
            raise UnknownScenario(f"sim2 needs days in {SIM1_DAYS} and budget in {SIM2_BUDGETS}")
        return _ratio_spec(budget // days, days, 0.5, seed)
    if which == "sim3":
        if scenario not in _SIM3:
            raise UnknownScenario(f"sim3 scenario must be 1 or 2, got {scenario}")
        return ScenarioSpec(
            n=40000, k=2, p=2, q=4, sigma_Y2=1.0, Sigma_u=SIGMA_U, Sigma_eps=SIGMA_EPS,
            Sigma_Z=SIGMA_Z, outcome_form="sim3-nonlinear", seed=RngState(seed), **_SIM3[scenario],
        )
    raise UnknownScenario(f"unknown scenario preset {which!r}")
