"""Simulate a two-day table with a missing second day and run the six-model analysis."""
import argparse
from pathlib import Path

from errlab.cli import main

ROOT = Path(__file__).resolve().parents[1]

if __name__ == "__main__":
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--workdir", default=str(ROOT / "results" / "analysis_demo"))
    args = p.parse_args()
    work = Path(args.workdir)
    rc = main(["simulate", "--spec", str(ROOT / "configs" / "sim1_two_day.json"), "--out", str(work)])
    if rc == 0:
        rc = main(["analyze", "--data", str(work / "data.csv"), "--schema", str(work / "schema.json"),
                   "--config", str(ROOT / "configs" / "analysis.json"), "--out", str(work / "table.csv")])
    raise SystemExit(rc)
