"""Nonlinear outcome with error-free covariates: truth vs averaged surrogates, with and without logs.

    python3 scripts/run_sim3.py                                   # scenario 2, n=10000, 20 reps
    python3 scripts/run_sim3.py --config configs/sim3_desk_s1.json
"""
import time

from _common import load, parser

from errlab.experiments import run_experiment

if __name__ == "__main__":
    args = parser(__doc__.splitlines()[0], "sim3_desk_s2.json").parse_args()
    cfg = load(args)
    t0 = time.time()
    table = run_experiment(cfg)
    print(f"{len(table.rows)} rows in {time.time() - t0:.0f} s -> {cfg.output_path}")
    for a in table.aggregate():
        print(f"{a['model']:>3} {a['preparation']:<12} train {a['train_mean']:9.3f}  "
              f"test {a['test_mean']:9.3f} +/- {a['test_se']:.3f}")
