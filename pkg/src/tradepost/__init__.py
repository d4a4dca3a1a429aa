"""Trading-post market games and CES welfare maximization for bandwidth allocation."""

from .core import TOL_FEAS, Allocation, Instance, Rho, ces_welfare, utilities, utility
from .equilibrium import (
    TOL_EQ,
    DeviationWitness,
    NeReport,
    NotAnEquilibrium,
    PceReport,
    construct_atp_rho_equilibrium,
    deviation_sweep,
    pce_to_tp,
    scale_curves,
    tp_to_pce,
    transform_bids,
    verify_pce,
    verify_tp_ne,
)
from .maxmin import (
    PenaltyState,
    ReportMatrix,
    check_strategyproof_m1,
    demo_bad_ne_m1,
    demo_m2_truthful_ne,
    demo_not_strategyproof_ces,
    five_by_seven_instance,
    mechanism1,
    mechanism2,
    truthful_best_utility,
)
from .solver import (
    TOL_DUAL,
    TOL_KKT,
    NonConvergence,
    SolveResult,
    maxmin_gamma,
    solve_ces,
    solve_maxmin,
)
from .trading_post import (
    TOL_BID,
    Bid,
    BidMatrix,
    CurveFamily,
    InfeasibleBid,
    PowerCurve,
    atp_allocate,
    best_response,
    bid_cost,
)

__version__ = "0.1.0"

__all__ = [
    "Allocation",
    "Bid",
    "BidMatrix",
    "CurveFamily",
    "DeviationWitness",
    "Instance",
    "InfeasibleBid",
    "NeReport",
    "NonConvergence",
    "NotAnEquilibrium",
    "PceReport",
    "PenaltyState",
    "PowerCurve",
    "ReportMatrix",
    "Rho",
    "SolveResult",
    "TOL_BID",
    "TOL_DUAL",
    "TOL_EQ",
    "TOL_FEAS",
    "TOL_KKT",
    "atp_allocate",
    "best_response",
    "bid_cost",
    "ces_welfare",
    "check_strategyproof_m1",
    "construct_atp_rho_equilibrium",
    "demo_bad_ne_m1",
    "demo_m2_truthful_ne",
    "demo_not_strategyproof_ces",
    "deviation_sweep",
    "five_by_seven_instance",
    "maxmin_gamma",
    "mechanism1",
    "mechanism2",
    "pce_to_tp",
    "scale_curves",
    "solve_ces",
    "solve_maxmin",
    "tp_to_pce",
    "transform_bids",
    "truthful_best_utility",
    "utilities",
    "utility",
    "verify_pce",
    "verify_tp_ne",
]
