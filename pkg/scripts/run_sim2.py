"""Fixed measurement budget: more days per person against more people.

    python3 scripts/run_sim2.py --budget 60000
"""
import time

from _common import finish, load, parser

from errlab.experiments import run_budget_tradeoff

if __name__ == "__main__":
    p = parser(__doc__.splitlines()[0], "sim2_tradeoff.json")
    p.add_argument("--budget", type=int, default=60000, help="total observations (n x days)")
    args = p.parse_args()
    cfg = load(args)
    cfg.scenario = cfg.scenario.with_(n=args.budget // cfg.days[0], k=cfg.days[0])
    t0 = time.time()
    finish(cfg, run_budget_tradeoff(args.budget, cfg.days, cfg), t0)
