"""Replicate-preparation pipelines, standardisation, imputation and splitting."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .datagen import Dataset, box_cox
from .errors import ConfigError, Degenerate, DomainError, MissingNotImputed, StratumTooSmall
from .randmath import as_generator

LAMBDA_BOUNDS = (-3.0, 3.0)
GOLDEN_TOL = 1e-5
PIPELINE_KINDS = ("average", "concatenate", "transformed_average")


@dataclass
class DesignMatrix:
    """Prepared predictors with per-column metadata.

    ``column_meta`` entries are dicts with at least ``name`` and ``term``;
    columns sharing a ``term`` are selected or dropped together.
    """

    values: np.ndarray
    column_meta: list
    standardization: tuple | None = None  # (means, sds), sample sd
    strata: np.ndarray | None = None  # per-row replicate-presence pattern id

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2:
            raise ValueError("design values must be 2-d")
        if len(self.column_meta) != self.values.shape[1]:
            raise ValueError("one column_meta entry per column required")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("design matrix has non-finite entries")

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def cols(self) -> int:
        return self.values.shape[1]

    @property
    def names(self) -> list:
        return [m["name"] for m in self.column_meta]

    def take_rows(self, rows) -> "DesignMatrix":
        return replace(self, values=self.values[rows],
                       strata=None if self.strata is None else self.strata[rows])

    def take_columns(self, cols) -> "DesignMatrix":
        cols = list(cols)
        std = None
        if self.standardization is not None:
            std = (self.standardization[0][cols], self.standardization[1][cols])
        return replace(self, values=self.values[:, cols],
                       column_meta=[self.column_meta[c] for c in cols], standardization=std)


def hstack(*dms: DesignMatrix) -> DesignMatrix:
    dms = [d for d in dms if d is not None]
    strata = next((d.strata for d in dms if d.strata is not None), None)
    return DesignMatrix(np.hstack([d.values for d in dms]),
                        [m for d in dms for m in d.column_meta], strata=strata)


def presence_strata(ds: Dataset) -> np.ndarray:
    """Integer id of each row's replicate-presence pattern."""
    weights = 1 << np.arange(ds.k)
    return ds.present.astype(np.int64) @ weights


def _meta(name, source, pipeline, day, term=None):
    return {"name": name, "source": source, "pipeline": pipeline, "day": day, "term": term or name}


# ---------------------------------------------------------------------------
# pipelines


def _masked(ds: Dataset) -> np.ndarray:
    mask = np.broadcast_to(ds.present[:, None, :], ds.X_star.shape)
    return np.where(mask, ds.X_star, np.nan)


def average_replicates(ds: Dataset) -> DesignMatrix:
    xs = _masked(ds)
    values = np.nanmean(xs, axis=2)
    meta = [_meta(f"{x}_avg", x, "average", "avg") for x in ds.x_names]
    return DesignMatrix(values, meta, strata=presence_strata(ds))


def concatenate_replicates(ds: Dataset) -> DesignMatrix:
    if not ds.present.all() or np.isnan(ds.X_star).any():
        raise MissingNotImputed("absent replicates must be imputed before concatenation")
    n, p, k = ds.X_star.shape
    values = ds.X_star.reshape(n, p * k)  # component-major: (1,1), (1,2), ..., (2,1), ...
    meta = [_meta(f"{x}_d{j + 1}", x, "concatenate", j + 1) for x in ds.x_names for j in range(k)]
    return DesignMatrix(values.copy(), meta, strata=presence_strata(ds))


def box_cox_profile_loglik(x, lam: float) -> float:
    """Gaussian profile log-likelihood of box_cox(x, lam), up to a constant."""
    logx = np.log(x)
    # rescale by the geometric mean; shifts the profile by a lam-free constant
    logx = logx - logx.mean()
    y = logx if lam == 0 else np.expm1(lam * logx) / lam
    var = y.var()
    if var <= 0:
        return -math.inf
    return -0.5 * x.size * math.log(var) + (lam - 1.0) * logx.sum()


def fit_box_cox_lambda(column, bounds=LAMBDA_BOUNDS, tol: float = GOLDEN_TOL) -> float:
    """Maximum-likelihood Box-Cox parameter by golden-section search."""
    x = np.asarray(column, dtype=float).ravel()
    x = x[~np.isnan(x)]
    if np.any(x <= 0):
        raise DomainError("Box-Cox fit needs strictly positive values")
    if np.unique(x).size < 10:
        raise Degenerate("Box-Cox fit needs at least 10 distinct values")
    invphi = (math.sqrt(5) - 1) / 2
    a, b = bounds
    c, d = b - invphi * (b - a), a + invphi * (b - a)
    fc, fd = box_cox_profile_loglik(x, c), box_cox_profile_loglik(x, d)
    while b - a > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = box_cox_profile_loglik(x, c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = box_cox_profile_loglik(x, d)
    return (a + b) / 2


def transformed_average(ds: Dataset, pipeline: "Pipeline") -> DesignMatrix:
    """Box-Cox each observed day with its component's lambda, then average.

    With ``pipeline.lambdas == "fit"`` the lambdas are estimated from ``ds``;
    use :meth:`Pipeline.fit` on training data to freeze them for a test set.
    """
    lambdas = pipeline.lambdas
    if lambdas == "fit" or lambdas is None:
        lambdas = pipeline.fit(ds).lambdas
    if len(lambdas) != ds.p:
        raise ConfigError(f"need {ds.p} lambdas, got {len(lambdas)}")
    xs = _masked(ds)
    cols = []
    for l, lam in enumerate(lambdas):
        obs = xs[:, l, :]
        ok = ~np.isnan(obs)
        t = np.full_like(obs, np.nan)
        t[ok] = box_cox(obs[ok], lam)
        cols.append(np.nanmean(t, axis=1))
    meta = [dict(_meta(f"{x}_bcavg", x, "transformed_average", "avg"), **{"lambda": float(lam)})
            for x, lam in zip(ds.x_names, lambdas)]
    return DesignMatrix(np.column_stack(cols), meta, strata=presence_strata(ds))


@dataclass(frozen=True)
class Pipeline:
    kind: str
    lambdas: object = None  # None, "fit", or a per-component list

    def __post_init__(self):
        if self.kind not in PIPELINE_KINDS:
            raise ConfigError(f"unknown pipeline kind {self.kind!r}")
        if self.kind == "transformed_average" and self.lambdas is None:
            object.__setattr__(self, "lambdas", "fit")
        if isinstance(self.lambdas, list):
            object.__setattr__(self, "lambdas", tuple(float(v) for v in self.lambdas))

    @property
    def label(self) -> str:
        return self.kind

    def fit(self, train: Dataset) -> "Pipeline":
        """Resolve fitted parameters on training data."""
        if self.kind != "transformed_average" or self.lambdas != "fit":
            return self
        xs = _masked(train)
        lams = tuple(fit_box_cox_lambda(xs[:, l, :]) for l in range(train.p))
        return Pipeline(self.kind, lams)

    def apply(self, ds: Dataset) -> DesignMatrix:
        if self.kind == "average":
            return average_replicates(ds)
        if self.kind == "concatenate":
            return concatenate_replicates(ds)
        return transformed_average(ds, self)

    def to_json(self) -> dict:
        lam = list(self.lambdas) if isinstance(self.lambdas, tuple) else self.lambdas
        return {"kind": self.kind, "lambdas": lam}

    @classmethod
    def from_json(cls, obj) -> "Pipeline":
        if isinstance(obj, str):
            return cls(obj)
        return cls(obj["kind"], obj.get("lambdas"))


# ---------------------------------------------------------------------------
# standardisation / imputation / splitting


def standardize(dm: DesignMatrix, params=None) -> DesignMatrix:
    """Centre and scale columns; ``params=(means, sds)`` reuses a fit.

    Fitting uses the sample (n-1) standard deviation.  Constant columns get
    sd 1 so they map to zero instead of NaN.
    """
    if params is None:
        if dm.rows < 2:
            raise ValueError("standardisation needs at least 2 rows")
        means = dm.values.mean(axis=0)
        sds = dm.values.std(axis=0, ddof=1)
        sds = np.where(sds > 0, sds, 1.0)
    else:
        means, sds = (np.asarray(v, dtype=float) for v in params)
        if means.shape != (dm.cols,) or sds.shape != (dm.cols,):
            raise ValueError("standardisation parameters do not match design width")
    return replace(dm, values=(dm.values - means) / sds, standardization=(means, sds))


def impute_missing_second_day(ds: Dataset) -> Dataset:
    """Copy day 1 into a missing day 2 and record ``had_second_day``."""
    if ds.k != 2:
        raise ConfigError("second-day imputation applies to k = 2 designs")
    had = ds.present[:, 1].copy()
    xs = ds.X_star.copy()
    xs[~had, :, 1] = xs[~had, :, 0]
    return replace(ds, X_star=xs, present=np.ones_like(ds.present), had_second_day=had)


def had_second_day_column(ds: Dataset) -> DesignMatrix:
    had = ds.had_second_day
    if had is None:
        had = ds.present[:, 1] if ds.k >= 2 else np.zeros(ds.n, dtype=bool)
    meta = [_meta("had_second_day", "indicator", "indicator", None)]
    return DesignMatrix(had.astype(float)[:, None], meta)


def stratified_split(ds: Dataset, test_fraction: float, rng):
    """Split rows so every replicate-presence stratum is divided in proportion."""
    if not 0 < test_fraction < 1:
        raise ValueError("test_fraction must be in (0, 1)")
    gen = as_generator(rng)
    strata = presence_strata(ds)
    test_rows = []
    for s in np.unique(strata):
        rows = np.flatnonzero(strata == s)
        if rows.size < 2:
            raise StratumTooSmall(f"stratum {s} has {rows.size} row(s)")
        n_test = int(math.floor(test_fraction * rows.size + 0.5))
        test_rows.append(gen.permutation(rows)[:n_test])
    test = np.sort(np.concatenate(test_rows))
    train = np.setdiff1d(np.arange(ds.n), test)
    return ds.subset(train), ds.subset(test)
