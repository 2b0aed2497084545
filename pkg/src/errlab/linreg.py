"""Ordinary least squares, interaction expansion and CV-driven backward selection."""
from __future__ import annotations

import csv
import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import RankDeficient, WidthMismatch
from .prepare import DesignMatrix
from .randmath import as_generator

RANK_TOL = 1e-10


@dataclass
class LinearModel:
    coefficients: np.ndarray  # intercept first
    column_meta: list
    term_groups: dict = field(default_factory=dict)

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=float)
        if self.coefficients.shape != (len(self.column_meta) + 1,):
            raise ValueError("coefficient count must equal design width + 1")
        if not np.all(np.isfinite(self.coefficients)):
            raise ValueError("non-finite coefficients")

    @property
    def intercept(self) -> float:
        return float(self.coefficients[0])

    @property
    def size(self) -> int:
        return len(self.term_groups)

    def to_json(self) -> dict:
        return {
            "coefficients": self.coefficients.tolist(),
            "column_meta": self.column_meta,
            "term_groups": {k: list(v) for k, v in self.term_groups.items()},
        }

    @classmethod
    def from_json(cls, obj) -> "LinearModel":
        return cls(obj["coefficients"], obj["column_meta"],
                   {k: tuple(v) for k, v in obj.get("term_groups", {}).items()})

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2)


def _lstsq_qr(X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Least squares for a design that already carries its intercept column."""
    Q, R, piv = scipy.linalg.qr(X, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    if diag.size == 0:
        return np.zeros(0)
    tol = RANK_TOL * diag[0] * max(X.shape)
    rank = int(np.sum(diag > tol))
    if rank < X.shape[1]:
        raise RankDeficient(sorted(int(c) - 1 for c in piv[rank:]))
    beta = np.empty(X.shape[1])
    beta[piv] = scipy.linalg.solve_triangular(R, Q.T @ y)
    return beta


def fit_ols(dm: DesignMatrix, y) -> LinearModel:
    """OLS with intercept via pivoted QR.

    ``RankDeficient.columns`` lists offending design columns (-1 = intercept).
    """
    y = np.asarray(y, dtype=float)
    if y.shape != (dm.rows,):
        raise WidthMismatch("outcome length must equal design rows")
    if dm.rows <= dm.cols + 1:
        raise RankDeficient(range(dm.cols), "need more rows than coefficients")
    X = np.column_stack([np.ones(dm.rows), dm.values])
    beta = _lstsq_qr(X, y)
    return LinearModel(beta, list(dm.column_meta), term_groups(dm))


def predict_linear(model: LinearModel, dm: DesignMatrix) -> np.ndarray:
    if dm.cols != len(model.column_meta):
        raise WidthMismatch(f"model expects {len(model.column_meta)} columns, got {dm.cols}")
    return model.coefficients[0] + dm.values @ model.coefficients[1:]


def term_groups(dm: DesignMatrix) -> dict:
    """Ordered mapping term name -> tuple of column indices."""
    groups: dict = {}
    for j, meta in enumerate(dm.column_meta):
        groups.setdefault(meta.get("term", meta["name"]), []).append(j)
    return {k: tuple(v) for k, v in groups.items()}


def expand_interactions(dm: DesignMatrix, max_order: int = 3) -> DesignMatrix:
    """Append all identifiable 2- and (optionally) 3-way products of distinct terms.

    Products that are identically zero, constant, or exact copies of an
    earlier column cannot be estimated and are dropped; an interaction whose
    columns are all dropped is not created.
    """
    if max_order not in (2, 3):
        raise ValueError("max_order must be 2 or 3")
    groups = term_groups(dm)
    names = list(groups)
    cols = [dm.values[:, j] for j in range(dm.cols)]
    meta = [dict(m) for m in dm.column_meta]
    seen = {c.tobytes() for c in cols}
    for order in range(2, max_order + 1):
        for combo in itertools.combinations(names, order):
            term = ":".join(combo)
            for idx in itertools.product(*(groups[t] for t in combo)):
                prod = np.prod([dm.values[:, j] for j in idx], axis=0)
                if np.ptp(prod) == 0:
                    continue
                key = prod.tobytes()
                if key in seen:
                    continue
                seen.add(key)
                cols.append(prod)
                meta.append({"name": ":".join(dm.column_meta[j]["name"] for j in idx),
                             "term": term, "order": order})
    values = np.column_stack(cols) if cols else np.zeros((dm.rows, 0))
    return DesignMatrix(values, meta, strata=dm.strata)


def match_interactions(template: DesignMatrix, base: DesignMatrix) -> DesignMatrix:
    """Rebuild ``template``'s expanded columns from ``base`` by column name.

    Used to give a test design exactly the columns kept on the training data.
    """
    pos = {m["name"]: j for j, m in enumerate(base.column_meta)}
    cols = []
    for meta in template.column_meta:
        parts = meta["name"].split(":") if meta.get("order") else [meta["name"]]
        missing = [p for p in parts if p not in pos]
        if missing:
            raise WidthMismatch(f"base design lacks column(s) {missing}")
        cols.append(np.prod([base.values[:, pos[p]] for p in parts], axis=0))
    values = np.column_stack(cols) if cols else np.zeros((base.rows, 0))
    return DesignMatrix(values, [dict(m) for m in template.column_meta], strata=base.strata)


# ---------------------------------------------------------------------------
# cross-validation


def fold_assignment(n: int, folds: int, rng, strata=None) -> np.ndarray:
    """Fold id per row; stratified by ``strata`` when provided."""
    if n < folds:
        raise ValueError(f"need at least {folds} rows for {folds}-fold CV")
    gen = as_generator(rng)
    out = np.empty(n, dtype=np.int64)
    if strata is None:
        strata = np.zeros(n, dtype=np.int64)
    offset = 0
    for s in np.unique(strata):
        rows = gen.permutation(np.flatnonzero(strata == s))
        out[rows] = (np.arange(rows.size) + offset) % folds
        offset += rows.size
    return out


def _columns_for(groups: dict, subset) -> list:
    return sorted(c for t in subset for c in groups[t])


def kfold_cv_rmse(dm: DesignMatrix, y, term_subset=None, folds: int = 10, rng=0) -> float:
    """Mean held-out RMSE of OLS restricted to ``term_subset`` (None = all terms)."""
    y = np.asarray(y, dtype=float)
    groups = term_groups(dm)
    subset = list(groups) if term_subset is None else list(term_subset)
    cols = _columns_for(groups, subset)
    fold = fold_assignment(dm.rows, folds, rng, dm.strata)
    X = np.column_stack([np.ones(dm.rows), dm.values[:, cols]])
    scores = []
    for f in range(folds):
        test = fold == f
        beta = _lstsq_qr(X[~test], y[~test])
        resid = y[test] - X[test] @ beta
        scores.append(math.sqrt(np.mean(resid ** 2)))
    return float(np.mean(scores))


class _FoldCache:
    """Per-fold Gram matrices so candidate subsets are scored without refitting X."""

    def __init__(self, X: np.ndarray, y: np.ndarray, fold: np.ndarray, folds: int):
        # centre/scale for conditioning; OLS predictions are invariant to this
        mu, sd = X.mean(axis=0), X.std(axis=0)
        sd[sd == 0] = 1.0
        Xs = np.column_stack([np.ones(X.shape[0]), (X - mu) / sd])
        self.parts = []
        for f in range(folds):
            test = fold == f
            Xt, yt = Xs[~test], y[~test]
            self.parts.append((Xt.T @ Xt, Xt.T @ yt, Xs[test], y[test]))

    def score(self, cols) -> float:
        idx = np.concatenate([[0], np.asarray(cols, dtype=np.int64) + 1])
        out = []
        for G, b, Xv, yv in self.parts:
            Gs = G[np.ix_(idx, idx)]
            try:
                c, low = scipy.linalg.cho_factor(Gs, check_finite=False)
            except np.linalg.LinAlgError:
                return math.inf
            d = np.abs(np.diag(c))
            if d.min() <= math.sqrt(RANK_TOL) * d.max():
                return math.inf
            beta = scipy.linalg.cho_solve((c, low), b[idx], check_finite=False)
            resid = yv - Xv[:, idx] @ beta
            out.append(math.sqrt(np.mean(resid ** 2)))
        return float(np.mean(out))


@dataclass
class SelectionPath:
    steps: list = field(default_factory=list)  # (term removed or None, size, cv_rmse)

    def __post_init__(self):
        sizes = [s[1] for s in self.steps]
        if any(b >= a for a, b in zip(sizes, sizes[1:])):
            raise ValueError("model sizes must strictly decrease along the path")

    @property
    def best(self):
        return min(self.steps, key=lambda s: (s[2], s[1]))

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "term", "size", "cv_rmse"])
            for i, (term, size, score) in enumerate(self.steps):
                w.writerow([i, term or "", size, repr(float(score))])


def backward_select(dm: DesignMatrix, y, rng=0, folds: int = 10):
    """Greedy backward elimination on CV-RMSE down to the intercept-only model.

    Returns the OLS fit of the path's best subset and the full path.  Ties
    remove the later term; rank-deficient candidates score +inf.
    """
    y = np.asarray(y, dtype=float)
    groups = term_groups(dm)
    order = list(groups)
    fold = fold_assignment(dm.rows, folds, rng, dm.strata)
    cache = _FoldCache(dm.values, y, fold, folds)
    current = list(order)
    steps = [(None, len(current), cache.score(_columns_for(groups, current)))]
    subsets = {len(current): list(current)}
    while current:
        best = None
        for i, term in enumerate(current):
            trial = current[:i] + current[i + 1:]
            s = cache.score(_columns_for(groups, trial))
            # <= so later terms win ties
            if best is None or s <= best[0]:
                best = (s, term)
        current.remove(best[1])
        steps.append((best[1], len(current), best[0]))
        subsets[len(current)] = list(current)
    path = SelectionPath(steps)
    chosen = subsets[path.best[1]]
    model = fit_ols(dm.take_columns(_columns_for(groups, chosen)), y)
    return model, path


def parsimony_select(path: SelectionPath, tolerance: float = 0.01) -> int:
    """Smallest model size whose CV-RMSE is within ``tolerance`` of the path minimum."""
    if not path.steps:
        raise ValueError("empty selection path")
    floor = min(s[2] for s in path.steps)
    return min(s[1] for s in path.steps if s[2] <= floor + tolerance)


def subset_columns(dm: DesignMatrix, path: SelectionPath, size: int) -> list:
    """Column indices of the path's model with ``size`` terms."""
    groups = term_groups(dm)
    current = list(groups)
    for term, n_terms, _ in path.steps[1:]:
        if len(current) == size:
            break
        current.remove(term)
    if len(current) != size:
        raise ValueError(f"no model of size {size} on this path")
    return _columns_for(groups, current)
