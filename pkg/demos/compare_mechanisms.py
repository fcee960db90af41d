"""Run MLHCA, a clock auction and random value queries on one toy instance.

    python demos/compare_mechanisms.py [seed]
"""
import sys

from auctionlab import MechanismConfig, ToyDomainParams, run_cca, run_mlhca, run_random_vq, sample_toy_instance


def show(out):
    print(f"{out.mechanism:>10}: efficiency {out.efficiency:.4f}, revenue {out.revenue:.2f}, "
          f"queries per bidder {list(out.queries)}")


def main(seed: int = 0):
    inst = sample_toy_instance(ToyDomainParams(n=4, m=8), seed)
    alloc, w = inst.optimum
    print(f"{inst.label}: optimal welfare {w:.3f}")
    hybrid = run_mlhca(inst, MechanismConfig(seed=seed))
    for out in (hybrid, run_cca(inst, 20, supplementary="raised"), run_random_vq(inst, 20, seed)):
        show(out)
    print("\nMLHCA trace")
    for r in hybrid.trace:
        print(f"  {r.index:>2} {r.phase:<15} inferred {r.inferred_scw:8.3f} true {r.true_scw:8.3f}"
              f" efficiency {r.efficiency:.4f}{'  clearing' if r.clearing else ''}")


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 0)
