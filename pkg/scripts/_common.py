"""Shared helpers for the experiment scripts."""
from __future__ import annotations

import argparse
import logging
import time
from pathlib import Path

from errlab.experiments import ExperimentConfig
from errlab.report import render_report

ROOT = Path(__file__).resolve().parents[1]


def parser(description: str, default_config: str) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(description=description)
    p.add_argument("--config", default=str(ROOT / "configs" / default_config))
    p.add_argument("--replications", type=int, help="override replications")
    p.add_argument("--n", type=int, help="override training sample size")
    p.add_argument("--workers", type=int, help="parallel workers (needs joblib)")
    p.add_argument("--out", help="results CSV (default: config output_path)")
    return p


def load(args) -> ExperimentConfig:
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    cfg = ExperimentConfig.load(args.config)
    for key in ("replications", "n", "workers"):
        if getattr(args, key):
            setattr(cfg, key, getattr(args, key))
    cfg.output_path = args.out or str(ROOT / cfg.output_path)
    return cfg


def finish(cfg: ExperimentConfig, table, started: float):
    svg = Path(cfg.output_path).with_suffix(".svg")
    render_report(cfg.output_path, svg, cfg.name)
    print(f"{len(table.rows)} rows in {time.time() - started:.0f} s -> {cfg.output_path}, {svg}")
    for a in table.aggregate():
        print(f"days={a['days']:>2} n={a['n']:>6} {a['model']:>3} {a['preparation']:<20} "
              f"train {a['train_mean']:8.3f}  test {a['test_mean']:8.3f} +/- {a['test_se']:.3f}")
