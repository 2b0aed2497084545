"""Two-day replicate analysis: split, impute, prepare, fit six models, compare MSE.

Rows of the output table:
NN-averaged, NN-concatenated, LR-averaged, LR-concatenated,
LR-backward(optimal), LR-backward(parsimonious).
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

from .datagen import Dataset
from .errors import ConfigError
from .experiments import ModelSpec, mse, score_designs
from .ingest import encode_categoricals
from .linreg import (backward_select, expand_interactions, fit_ols, match_interactions,
                     parsimony_select, predict_linear, subset_columns)
from .prepare import (DesignMatrix, Pipeline, average_replicates, concatenate_replicates,
                      had_second_day_column, hstack, impute_missing_second_day,
                      presence_strata, standardize, stratified_split)
from .randmath import RngState

ROW_NAMES = ("NN-averaged", "NN-concatenated", "LR-averaged", "LR-concatenated",
             "LR-backward(optimal)", "LR-backward(parsimonious)")


@dataclass
class AnalysisConfig:
    test_fraction: float = 0.2
    seed: int = 0
    folds: int = 10
    tolerance: float = 0.01
    max_order: int = 3
    network: ModelSpec = field(default_factory=lambda: ModelSpec("mlp"))

    def __post_init__(self):
        if not isinstance(self.network, ModelSpec):
            self.network = ModelSpec.from_json({"type": "mlp", **self.network})
        if self.network.type != "mlp":
            raise ConfigError("analysis network must be an mlp model")
        if not 0 < self.test_fraction < 1:
            raise ConfigError("test_fraction must be in (0, 1)")
        if self.max_order not in (2, 3):
            raise ConfigError("max_order must be 2 or 3")

    @classmethod
    def from_json(cls, obj: dict) -> "AnalysisConfig":
        unknown = set(obj) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown analysis config field(s): {sorted(unknown)}")
        return cls(**obj)

    @classmethod
    def load(cls, path) -> "AnalysisConfig":
        try:
            return cls.from_json(json.loads(Path(path).read_text()))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from exc


@dataclass
class AnalysisResult:
    rows: list  # dicts: model, train_mse, test_mse, terms
    full_size: int
    full_cv_rmse: float
    optimal_size: int
    optimal_cv_rmse: float
    parsimonious_size: int
    parsimonious_cv_rmse: float
    lambdas: tuple
    n_train: int
    n_test: int

    def row(self, name: str) -> dict:
        return next(r for r in self.rows if r["model"] == name)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["model", "train_mse", "test_mse", "terms"])
        for r in self.rows:
            w.writerow([r["model"], repr(r["train_mse"]), repr(r["test_mse"]), r["terms"]])
        return buf.getvalue()


def _design(ds: Dataset, base: DesignMatrix, indicator: bool = False) -> DesignMatrix:
    # the day-count indicator enters only the selected regression
    dm = hstack(base, encode_categoricals(ds), had_second_day_column(ds) if indicator else None)
    return DesignMatrix(dm.values, dm.column_meta, strata=presence_strata(ds))


def run_analysis(ds: Dataset, config: AnalysisConfig = AnalysisConfig()) -> AnalysisResult:
    """Fit the six-model menu on a two-day dataset with a possibly missing second day."""
    if ds.k != 2:
        raise ConfigError(f"analysis expects exactly two days per component, got {ds.k}")
    root = RngState(config.seed)
    train_raw, test_raw = stratified_split(ds, config.test_fraction, root.spawn(0))
    train, test = impute_missing_second_day(train_raw), impute_missing_second_day(test_raw)
    ytr, yte = train.Y, test.Y

    rows = []
    plain = {"averaged": average_replicates, "concatenated": concatenate_replicates}
    designs = {}
    for label, prep in plain.items():
        # averaging the imputed pair returns day 1 for single-day rows
        tr = standardize(_design(train, prep(train)))
        te = standardize(_design(test, prep(test)), tr.standardization)
        designs[label] = (tr, te)
    for i, (label, (tr, te)) in enumerate(designs.items()):
        seed = root.spawn(1, i)
        a, b = score_designs(tr, ytr, te, yte, config.network, seed)
        rows.append({"model": f"NN-{label}", "train_mse": a, "test_mse": b, "terms": tr.cols})
    for label, (tr, te) in designs.items():
        m = fit_ols(tr, ytr)
        rows.append({"model": f"LR-{label}", "train_mse": mse(predict_linear(m, tr), ytr),
                     "test_mse": mse(predict_linear(m, te), yte), "terms": tr.cols})

    # per-component Box-Cox on observed days, averaged, then interactions
    pipe = Pipeline("transformed_average").fit(train_raw)
    tr_main = standardize(_design(train, pipe.apply(train_raw), indicator=True))
    te_main = standardize(_design(test, pipe.apply(test_raw), indicator=True), tr_main.standardization)
    tr_full = expand_interactions(tr_main, config.max_order)
    te_full = match_interactions(tr_full, te_main)
    sel_rng = root.spawn(2)
    _, path = backward_select(tr_full, ytr, rng=sel_rng.generator(), folds=config.folds)
    full_cv = path.steps[0][2]
    best = path.best
    parsimonious = parsimony_select(path, config.tolerance)
    cv_at = {size: cv for _, size, cv in path.steps}
    for name, size in (("optimal", best[1]), ("parsimonious", parsimonious)):
        cols = subset_columns(tr_full, path, size)
        tr, te = tr_full.take_columns(cols), te_full.take_columns(cols)
        m = fit_ols(tr, ytr)
        rows.append({"model": f"LR-backward({name})", "train_mse": mse(predict_linear(m, tr), ytr),
                     "test_mse": mse(predict_linear(m, te), yte), "terms": size})
    return AnalysisResult(rows, len(path.steps) - 1, full_cv, best[1], best[2], parsimonious,
                          cv_at[parsimonious], tuple(pipe.lambdas), train.n, test.n)
