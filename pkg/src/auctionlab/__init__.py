"""Simulation toolkit for iterative combinatorial auctions that mix demand
and value queries, with monotone neural value models."""
from .auctions import (AuctionOutcome, MechanismConfig, run_cca, run_mlcca, run_mlhca,
                       run_random_vq)
from .core import (AuctionLabError, BidderReports, DemandReport, EnumerationTooLargeError,
                   ExactOracleUnavailableError, InvalidInputError, NoFeasibleQueryError,
                   ValueReport)
from .lab import efficiency_loss, learning_metrics, relative_revenue
from .valuations import Instance, ToyDomainParams, make_pathological, sample_toy_instance

__version__ = "0.1.0"

__all__ = [
    "AuctionLabError", "AuctionOutcome", "BidderReports", "DemandReport",
    "EnumerationTooLargeError", "ExactOracleUnavailableError", "Instance", "InvalidInputError",
    "MechanismConfig", "NoFeasibleQueryError", "ToyDomainParams", "ValueReport",
    "efficiency_loss", "learning_metrics", "make_pathological", "relative_revenue", "run_cca",
    "run_mlcca", "run_mlhca", "run_random_vq", "sample_toy_instance",
]
