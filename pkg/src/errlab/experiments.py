"""Grid runner for (scenario x preparation x model x replication) experiments."""
from __future__ import annotations

import csv
import json
import logging
import math
import os
import time
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .datagen import Dataset, ScenarioSpec, generate, make_paper_spec
from .errors import ConfigError, Diverged, IndivisibleBudget, LengthMismatch, PartialFailure
from .linreg import fit_ols, predict_linear
from .neuralnet import Architecture, TrainConfig, init_network, predict_nn, train
from .prepare import DesignMatrix, Pipeline, hstack, standardize
from .randmath import RngState

log = logging.getLogger(__name__)

RESULT_HEADER = ["scenario", "days", "n", "preparation", "model", "rep",
                 "train_mse", "test_mse", "seed", "wall_ms", "failed"]
AGGREGATE_HEADER = ["scenario", "days", "n", "preparation", "model", "reps", "failures",
                    "train_mean", "train_sd", "train_se", "test_mean", "test_sd", "test_se"]


def mse(predictions, targets) -> float:
    p = np.asarray(predictions, dtype=float).ravel()
    t = np.asarray(targets, dtype=float).ravel()
    if p.shape != t.shape or p.size == 0:
        raise LengthMismatch(f"cannot compare {p.size} predictions with {t.size} targets")
    d = p - t
    return float(d @ d) / d.size


def overfit_gap(train_mse: float, test_mse: float) -> float:
    return test_mse - train_mse


# ---------------------------------------------------------------------------
# preparations and models


@dataclass(frozen=True)
class Preparation:
    """How surrogates become predictors: a pipeline (or the truth) plus extras."""

    kind: str  # average | concatenate | transformed_average | truth
    lambdas: object = None
    log_terms: bool = False

    def __post_init__(self):
        if self.kind != "truth":
            Pipeline(self.kind, self.lambdas)  # validates

    @property
    def label(self) -> str:
        return self.kind + ("+log" if self.log_terms else "")

    @property
    def pipeline(self) -> Pipeline | None:
        return None if self.kind == "truth" else Pipeline(self.kind, self.lambdas)

    def to_json(self) -> dict:
        out = {"kind": self.kind}
        if self.lambdas is not None:
            out["lambdas"] = list(self.lambdas) if isinstance(self.lambdas, (list, tuple)) else self.lambdas
        if self.log_terms:
            out["log_terms"] = True
        return out

    @classmethod
    def from_json(cls, obj) -> "Preparation":
        if isinstance(obj, str):
            return cls(obj)
        lam = obj.get("lambdas")
        return cls(obj["kind"], tuple(lam) if isinstance(lam, list) else lam, bool(obj.get("log_terms", False)))


@dataclass(frozen=True)
class ModelSpec:
    type: str  # ols | mlp
    hidden: tuple = (64, 32)
    activation: str = "relu"
    learning_rate: float = 0.001
    batch_size: int = 32
    max_epochs: int = 500
    patience: int = 20
    validation_fraction: float = 0.1
    label: str | None = None

    def __post_init__(self):
        if self.type not in ("ols", "mlp"):
            raise ConfigError(f"unknown model type {self.type!r}")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))

    @property
    def name(self) -> str:
        if self.label:
            return self.label
        return "lr" if self.type == "ols" else "nn"

    def train_config(self, seed: RngState) -> TrainConfig:
        return TrainConfig(self.learning_rate, self.batch_size, self.max_epochs, self.patience,
                           self.validation_fraction, seed)

    def to_json(self) -> dict:
        if self.type == "ols":
            return {"type": "ols"} | ({"label": self.label} if self.label else {})
        return {k: (list(v) if isinstance(v, tuple) else v)
                for k, v in self.__dict__.items() if v is not None}

    @classmethod
    def from_json(cls, obj) -> "ModelSpec":
        if isinstance(obj, str):
            return cls(obj)
        return cls(**obj)


def _stable_key(text: str) -> int:
    return zlib.crc32(text.encode())


def build_features(ds: Dataset, prep: Preparation, fitted: Pipeline | None) -> DesignMatrix:
    if prep.kind == "truth":
        if ds.X_true is None:
            raise ConfigError("truth preparation needs a dataset with X_true")
        meta = [{"name": f"{x}_true", "term": f"{x}_true", "source": x} for x in ds.x_names]
        base = DesignMatrix(ds.X_true, meta)
    else:
        base = fitted.apply(ds)
    parts = [base]
    if prep.log_terms:
        if np.any(base.values <= 0):
            raise ConfigError("log terms need positive predictors")
        meta = [{"name": f"log({m['name']})", "term": f"log({m['name']})"} for m in base.column_meta]
        parts.append(DesignMatrix(np.log(base.values), meta))
    if ds.q:
        parts.append(DesignMatrix(ds.Z, [{"name": z, "term": z} for z in ds.z_names]))
    return hstack(*parts)


def fit_and_score(train_ds: Dataset, test_ds: Dataset, prep: Preparation, model: ModelSpec,
                  seed: RngState) -> tuple:
    """Fit preparation + model on ``train_ds``; return (train MSE, test MSE)."""
    fitted = None if prep.kind == "truth" else prep.pipeline.fit(train_ds)
    Xtr = build_features(train_ds, prep, fitted)
    Xte = build_features(test_ds, prep, fitted)
    return score_designs(Xtr, train_ds.Y, Xte, test_ds.Y, model, seed)


def score_designs(Xtr: DesignMatrix, ytr, Xte: DesignMatrix, yte, model: ModelSpec,
                  seed: RngState) -> tuple:
    """Fit ``model`` on prepared designs; return (train MSE, test MSE).

    The network sees standardised inputs and outcome (train statistics);
    its predictions are mapped back before scoring.
    """
    if model.type == "ols":
        m = fit_ols(Xtr, ytr)
        return mse(predict_linear(m, Xtr), ytr), mse(predict_linear(m, Xte), yte)
    Str = standardize(Xtr)
    Ste = standardize(Xte, Str.standardization)
    y_mu, y_sd = float(np.mean(ytr)), float(np.std(ytr, ddof=1)) or 1.0
    arch = Architecture.regression(Str.cols, model.hidden, model.activation)
    net = init_network(arch, seed.spawn(0))
    net, _ = train(net, Str.values, (ytr - y_mu) / y_sd, model.train_config(seed.spawn(1)))
    pred_tr = predict_nn(net, Str) * y_sd + y_mu
    pred_te = predict_nn(net, Ste) * y_sd + y_mu
    return mse(pred_tr, ytr), mse(pred_te, yte)


# ---------------------------------------------------------------------------
# configuration


@dataclass
class ExperimentConfig:
    scenario: ScenarioSpec
    preparations: list
    models: list
    replications: int = 20
    days: list = None  # grid over k; None keeps the scenario's k
    n: int | None = None  # overrides scenario n
    test_n: int | None = None  # default: the cell's training n
    name: str = "experiment"
    seed: int = 0
    surrogate_view: str = "additive"
    output_path: str | None = None
    record_wall_time: bool = False
    workers: int = 1

    def __post_init__(self):
        if not self.preparations or not self.models:
            raise ConfigError("need at least one preparation and one model")
        if self.replications < 1:
            raise ConfigError("replications must be >= 1")
        if self.surrogate_view not in ("additive", "observed"):
            raise ConfigError("surrogate_view must be 'additive' or 'observed'")
        self.preparations = [p if isinstance(p, Preparation) else Preparation.from_json(p)
                             for p in self.preparations]
        self.models = [m if isinstance(m, ModelSpec) else ModelSpec.from_json(m) for m in self.models]
        if self.days is None:
            self.days = [self.scenario.k]

    def cell_specs(self):
        """(days, n) pairs in grid order."""
        n = self.n or self.scenario.n
        return [(int(d), int(n)) for d in self.days]

    @classmethod
    def from_json(cls, obj: dict) -> "ExperimentConfig":
        obj = dict(obj)
        scen = obj.pop("scenario")
        if isinstance(scen, dict) and "paper" in scen:
            tag = dict(scen)
            which = tag.pop("paper")
            tag.setdefault("days", (obj.get("days") or [2])[0] if which != "sim3" else None)
            if which == "sim2":
                tag.setdefault("budget", 60000)
            scen = make_paper_spec(which, **{k: v for k, v in tag.items() if v is not None})
        elif isinstance(scen, dict):
            scen = ScenarioSpec.from_json(scen)
        else:
            raise ConfigError("scenario must be a ScenarioSpec object or {\"paper\": ...}")
        known = set(cls.__dataclass_fields__)
        unknown = set(obj) - known
        if unknown:
            raise ConfigError(f"unknown experiment config field(s): {sorted(unknown)}")
        try:
            return cls(scenario=scen, **obj)
        except TypeError as exc:
            raise ConfigError(f"invalid experiment config: {exc}") from exc

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            obj = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
        return cls.from_json(obj)

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "scenario": self.scenario.to_json(),
            "days": list(self.days),
            "n": self.n,
            "test_n": self.test_n,
            "preparations": [p.to_json() for p in self.preparations],
            "models": [m.to_json() for m in self.models],
            "replications": self.replications,
            "seed": self.seed,
            "surrogate_view": self.surrogate_view,
            "output_path": self.output_path,
            "record_wall_time": self.record_wall_time,
            "workers": self.workers,
        }


def effective_seed(config_seed: int) -> int:
    """``ERRLAB_SEED`` (decimal uint64) overrides the config seed when set."""
    env = os.environ.get("ERRLAB_SEED")
    if env is None or env == "":
        return int(config_seed)
    try:
        value = int(env)
    except ValueError as exc:
        raise ConfigError(f"ERRLAB_SEED must be a decimal integer, got {env!r}") from exc
    if not 0 <= value < 2 ** 64:
        raise ConfigError("ERRLAB_SEED must fit in 64 unsigned bits")
    return value


# ---------------------------------------------------------------------------
# running


def replication_state(seed: int, days: int, n: int, rep: int) -> RngState:
    return RngState(seed).spawn(days, n, rep)


def make_datasets(spec: ScenarioSpec, state: RngState, test_n: int | None, view: str):
    train_ds = generate(spec, state.spawn(0))
    test_ds = generate(spec.with_(n=test_n or spec.n), state.spawn(1))
    return train_ds.view(view), test_ds.view(view)


def run_cell(spec: ScenarioSpec, prep: Preparation, model: ModelSpec, state: RngState,
             test_n: int | None = None, view: str = "additive", scenario_id: str = "custom",
             rep: int = 0, record_wall_time: bool = True) -> dict:
    """One replication of one grid cell, from data generation to MSEs."""
    train_ds, test_ds = make_datasets(spec, state, test_n, view)
    return _score_row(train_ds, test_ds, spec, prep, model, state, scenario_id, rep, record_wall_time)


def _score_row(train_ds, test_ds, spec, prep, model, state, scenario_id, rep, record_wall_time):
    t0 = time.perf_counter()
    model_seed = state.spawn(2, _stable_key(prep.label), _stable_key(model.name))
    row = {"scenario": scenario_id, "days": spec.k, "n": spec.n, "preparation": prep.label,
           "model": model.name, "rep": rep, "seed": state.stream, "failed": 0}
    try:
        row["train_mse"], row["test_mse"] = fit_and_score(train_ds, test_ds, prep, model, model_seed)
    except Diverged as exc:
        log.warning("diverged: %s/%s days=%s rep=%s: %s", prep.label, model.name, spec.k, rep, exc)
        row["train_mse"] = row["test_mse"] = math.nan
        row["failed"] = 1
    row["wall_ms"] = int(round((time.perf_counter() - t0) * 1000)) if record_wall_time else 0
    return row


def _run_group(config: ExperimentConfig, seed: int, days: int, n: int, rep: int) -> list:
    spec = config.scenario.with_(k=days, n=n)
    state = replication_state(seed, days, n, rep)
    train_ds, test_ds = make_datasets(spec, state, config.test_n, config.surrogate_view)
    return [_score_row(train_ds, test_ds, spec, prep, model, state, config.name, rep,
                       config.record_wall_time)
            for prep in config.preparations for model in config.models]


@dataclass
class ResultTable:
    rows: list = field(default_factory=list)

    def __post_init__(self):
        keys = [(r["scenario"], r["days"], r["n"], r["preparation"], r["model"], r["rep"]) for r in self.rows]
        if len(set(keys)) != len(keys):
            raise ValueError("duplicate (cell, replication) rows")
        for r in self.rows:
            if not r["failed"] and not (r["train_mse"] >= 0 and r["test_mse"] >= 0
                                        and math.isfinite(r["train_mse"]) and math.isfinite(r["test_mse"])):
                raise ValueError(f"invalid MSE in row {r}")

    @property
    def failed_cells(self) -> list:
        return sorted({(r["days"], r["n"], r["preparation"], r["model"]) for r in self.rows if r["failed"]})

    def aggregate(self) -> list:
        cells: dict = {}
        for r in self.rows:
            cells.setdefault((r["scenario"], r["days"], r["n"], r["preparation"], r["model"]), []).append(r)
        out = []
        for key, rows in cells.items():
            ok = sorted((r for r in rows if not r["failed"]), key=lambda r: r["rep"])
            agg = dict(zip(AGGREGATE_HEADER[:5], key))
            agg["reps"] = len(ok)
            agg["failures"] = len(rows) - len(ok)
            for part in ("train", "test"):
                v = np.array([r[f"{part}_mse"] for r in ok])
                mean = float(v.mean()) if v.size else math.nan
                sd = float(v.std(ddof=1)) if v.size > 1 else math.nan
                agg[f"{part}_mean"], agg[f"{part}_sd"] = mean, sd
                agg[f"{part}_se"] = sd / math.sqrt(v.size) if v.size > 1 else math.nan
            out.append(agg)
        return out

    def cell(self, preparation: str, model: str, days: int | None = None) -> dict:
        for a in self.aggregate():
            if a["preparation"] == preparation and a["model"] == model and (days is None or a["days"] == days):
                return a
        raise KeyError((preparation, model, days))

    # persistence ---------------------------------------------------------

    def write_csv(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(RESULT_HEADER)
            for r in self.rows:
                w.writerow([_fmt(r[h]) for h in RESULT_HEADER])

    def write_aggregate_csv(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(AGGREGATE_HEADER)
            for a in self.aggregate():
                w.writerow([_fmt(a[h]) for h in AGGREGATE_HEADER])

    @classmethod
    def read_csv(cls, path) -> "ResultTable":
        from .errors import MalformedResults

        try:
            with open(path, newline="") as fh:
                reader = csv.DictReader(fh)
                if reader.fieldnames != RESULT_HEADER:
                    raise MalformedResults(f"{path}: header must be {','.join(RESULT_HEADER)}")
                rows = []
                for i, raw in enumerate(reader, start=2):
                    rows.append({
                        "scenario": raw["scenario"], "days": int(raw["days"]), "n": int(raw["n"]),
                        "preparation": raw["preparation"], "model": raw["model"], "rep": int(raw["rep"]),
                        "train_mse": float(raw["train_mse"] or "nan"),
                        "test_mse": float(raw["test_mse"] or "nan"),
                        "seed": int(raw["seed"]), "wall_ms": int(raw["wall_ms"]), "failed": int(raw["failed"]),
                    })
        except (ValueError, KeyError) as exc:
            raise MalformedResults(f"{path}: {exc}") from exc
        return cls(rows)


def _fmt(v) -> str:
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return str(v)


def aggregate_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + "_aggregate" + path.suffix)


def config_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + "_config.json")


def _persist(table: "ResultTable", config: ExperimentConfig, seed: int):
    table.write_csv(config.output_path)
    table.write_aggregate_csv(aggregate_path(config.output_path))
    # architecture and training settings travel with the results
    obj = config.to_json() | {"seed": seed}
    config_path(config.output_path).write_text(json.dumps(obj, indent=2) + "\n")


def run_experiment(config: ExperimentConfig, seed: int | None = None, write: bool = True) -> ResultTable:
    """Run every cell and replication; persist rows and aggregates.

    Raises :class:`PartialFailure` (after writing) if any replication diverged.
    """
    seed = effective_seed(config.seed) if seed is None else seed
    groups = [(d, n, rep) for d, n in config.cell_specs() for rep in range(config.replications)]
    if config.workers > 1:
        from joblib import Parallel, delayed

        chunks = Parallel(n_jobs=config.workers)(delayed(_run_group)(config, seed, *g) for g in groups)
    else:
        chunks = [_run_group(config, seed, *g) for g in groups]
    order = {(p.label, m.name): i for i, (p, m) in
             enumerate((p, m) for p in config.preparations for m in config.models)}
    rows = [r for chunk in chunks for r in chunk]
    dpos = {d: i for i, d in enumerate(config.days)}
    rows.sort(key=lambda r: (dpos[r["days"]], r["n"], order[(r["preparation"], r["model"])], r["rep"]))
    table = ResultTable(rows)
    if write and config.output_path:
        _persist(table, config, seed)
    if table.failed_cells:
        raise PartialFailure(table.failed_cells, table)
    return table


def budget_grid(budget: int, days) -> list:
    bad = [d for d in days if budget % d]
    if bad:
        raise IndivisibleBudget(f"budget {budget} is not divisible by days {bad}")
    return [(int(d), budget // int(d)) for d in days]


def run_budget_tradeoff(budget: int, days, config: ExperimentConfig, seed: int | None = None,
                        write: bool = True) -> ResultTable:
    """Fixed total observations: n = budget / days for each days value."""
    grid = budget_grid(budget, days)
    seed = effective_seed(config.seed) if seed is None else seed
    rows, failures = [], []
    for d, n in grid:
        sub = ExperimentConfig(**{**config.__dict__, "days": [d], "n": n, "output_path": None})
        try:
            table = run_experiment(sub, seed=seed, write=False)
        except PartialFailure as exc:
            table = exc.table
            failures += exc.failed_cells
        rows += table.rows
    table = ResultTable(rows)
    if write and config.output_path:
        _persist(table, config, seed)
    if failures:
        raise PartialFailure(failures, table)
    return table
