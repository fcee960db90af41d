"""Replay the hand-built instances where demand or value queries alone go wrong."""
from auctionlab.lab import run_verify


def main():
    for check in run_verify():
        print(f"{'PASS' if check.passed else 'FAIL'} {check.name:<12} {check.detail}")


if __name__ == "__main__":
    main()
