"""Replicate averaging vs concatenation vs Box-Cox averaging across days of data.

    python3 scripts/run_sim1.py                      # desk scale (n=3000, 20 reps)
    python3 scripts/run_sim1.py --config configs/sim1_full.json
"""
import time

from _common import finish, load, parser

from errlab.experiments import run_experiment

if __name__ == "__main__":
    args = parser(__doc__.splitlines()[0], "sim1_desk.json").parse_args()
    cfg = load(args)
    t0 = time.time()
    finish(cfg, run_experiment(cfg), t0)
