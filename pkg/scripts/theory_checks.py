"""Print analytic variance results next to their Monte Carlo estimates."""
import argparse

from errlab import theory
from errlab.randmath import RngState

if __name__ == "__main__":
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--draws", type=int, default=1_000_000)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()
    root = RngState(args.seed)

    print("sigma2  k  sigma2/k  reduced  reduced_mc  se")
    for i, (s2, k) in enumerate([(0.25, 2), (1.0, 2), (1.0, 5), (4.0, 10)]):
        r = theory.mc_equivalent_lognormal_variance(s2, k, args.draws, root.spawn(0, i))
        print(f"{s2:6.2f} {k:2d} {s2 / k:9.4f} {r.analytic:8.4f} {r.monte_carlo:11.4f} {r.mc_standard_error:.4f}")

    print("\nsigma_V2 sigma_X2  k  var(X|mean)  mc  se")
    for i, (v, x, k) in enumerate([(38, 20, 1), (38, 20, 10), (1, 1, 2)]):
        r = theory.mc_conditional_truth_variance(v, x, k, args.draws, root.spawn(1, i))
        print(f"{v:8} {x:8} {k:2d} {r.analytic:11.4f} {r.monte_carlo:8.4f} {r.mc_standard_error:.4f}")

    print("\nf        omega sigma  k  var f(mean)  mean var f  holds")
    for i, (f, om, sg, k) in enumerate([("exp", 0, 0.5, 5), ("square", 1, 1, 2), ("cube", 1, 0.5, 3),
                                        ("identity", 0, 1, 4)]):
        a, b, holds = theory.lemma1_check(f, om, sg, k, args.draws, root.spawn(2, i))
        print(f"{f:8} {om:5} {sg:5} {k:2d} {a.monte_carlo:11.4f} {b.monte_carlo:11.4f}  {holds}")
