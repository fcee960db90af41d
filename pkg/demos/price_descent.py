"""Fit value models on clock reports and search for clearing prices.

Prints the descent trace of the W objective for a small toy market.
"""
from auctionlab import BidderReports, ToyDomainParams, sample_toy_instance
from auctionlab.lab import clock_reports
from auctionlab.mvnn import MvnnArch
from auctionlab.pricing import initial_prices, ml_next_price
from auctionlab.training import ADAM_PRESET, mixed_train


def main():
    inst = sample_toy_instance(ToyDomainParams(n=3, m=5, interest=1.0, synergy_density=0.0), 2)
    arch = MvnnArch(inst.caps, (16,))
    models = []
    for i in range(inst.n):
        reports = BidderReports(dq=clock_reports(inst, 40, i).dq)
        models.append(mixed_train(reports, arch, ADAM_PRESET).model)
    p, trace = ml_next_price(models, initial_prices(inst.oracles))
    for step in trace[:: max(1, len(trace) // 10)]:
        print(f"step {step.step:>3}  W {step.w:9.4f}  over-demand {list(step.over_demand)}")
    demands = [inst.demand(i, p) for i in range(inst.n)]
    print("final prices", [round(v, 3) for v in p])
    print("true demands", demands)


if __name__ == "__main__":
    main()
