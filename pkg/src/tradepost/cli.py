"""Batch command-line front end.

Exit codes: 0 success, 2 parse/usage error, 3 solver failure, 4 verification
failed in assert mode.
"""
from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass, field
from pathlib import Path
import numpy as np

from . import files
from .core import Instance, Rho, ces_welfare, utilities
from .equilibrium import (
    TOL_EQ,
    construct_atp_rho_equilibrium,
    pce_to_tp,
    tp_to_pce,
    verify_pce,
    verify_tp_ne,
)
from .maxmin import (
    check_strategyproof_m1,
    demo_bad_ne_m1,
    demo_m2_truthful_ne,
    demo_not_strategyproof_ces,
)
from .solver import TOL_KKT, NonConvergence, solve_ces, solve_maxmin
from .trading_post import Bid, BidMatrix, CurveFamily, PowerCurve, atp_allocate, best_response

EXIT_OK = 0
EXIT_PARSE = 2
EXIT_SOLVER = 3
EXIT_VERIFY = 4

DEFAULT_SEED = 1234567
MIN_TOL = 1e-12


@dataclass(frozen=True)
class RunConfig:
    command: str
    instance: str | None = None
    rho: Rho | None = None
    curves: str | None = None
    bids: str | None = None
    allocation: str | None = None
    seed: int = DEFAULT_SEED
    tol_eq: float = TOL_EQ
    tol_kkt: float = TOL_KKT
    output: str | None = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.tol_eq < MIN_TOL or self.tol_kkt < MIN_TOL:
            raise ValueError(f"tolerance overrides must be >= {MIN_TOL}")


def _tolerances(cfg: RunConfig) -> dict:
    return {"tol_eq": cfg.tol_eq, "tol_kkt": cfg.tol_kkt}


def _emit(cfg: RunConfig, payload: dict) -> None:
    payload = dict(payload)
    payload["tolerances"] = _tolerances(cfg)
    text = files.dumps(payload)
    if cfg.output:
        Path(cfg.output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _matrix(x: np.ndarray) -> list[list[float]]:
    return [[float(v) for v in row] for row in x]


def cmd_solve(cfg: RunConfig) -> int:
    inst = files.load_instance(cfg.instance)
    assert cfg.rho is not None
    if cfg.rho.is_maxmin:
        res = solve_maxmin(inst)
    else:
        res = solve_ces(inst, cfg.rho, tol_kkt=cfg.tol_kkt)
    _emit(
        cfg,
        {
            "command": "solve",
            "rho": str(cfg.rho),
            "utilities": [float(v) for v in res.u_star],
            "allocation": _matrix(res.x_star.x),
            "duals": [float(v) for v in res.q],
            "objective": res.objective,
            "kkt_residual": res.kkt_residual,
        },
    )
    return EXIT_OK


def cmd_equilibrium(cfg: RunConfig) -> int:
    inst = files.load_instance(cfg.instance)
    assert cfg.rho is not None and cfg.rho.is_finite
    res = solve_ces(inst, cfg.rho, tol_kkt=cfg.tol_kkt)
    bids, alloc = construct_atp_rho_equilibrium(inst, cfg.rho, tol=cfg.tol_eq, solve=res)
    unit = CurveFamily.atp(cfg.rho.value, inst.m)
    report = verify_tp_ne(inst, unit, bids, tol=cfg.tol_eq)
    welfare = ces_welfare(cfg.rho, utilities(inst, alloc))
    _emit(
        cfg,
        {
            "command": "equilibrium",
            "rho": str(cfg.rho),
            "bids": bids.to_lists(),
            "allocation": _matrix(alloc.x),
            "is_ne": report.is_ne,
            "welfare": welfare,
            "optimum": res.objective,
            "welfare_gap": abs(welfare - res.objective) / max(1.0, abs(res.objective)),
        },
    )
    return EXIT_OK


def cmd_verify(cfg: RunConfig) -> int:
    inst = files.load_instance(cfg.instance)
    family = files.parse_curve_spec(cfg.curves, inst.m)
    if cfg.bids is not None:
        bids = files.load_bids(cfg.bids)
        report = verify_tp_ne(inst, family, bids, tol=cfg.tol_eq)
        ok = report.is_ne
        payload = {
            "command": "verify",
            "mode": "trading_post",
            "is_ne": report.is_ne,
            "violated_condition": report.violated_condition,
        }
    else:
        alloc = files.load_allocation(cfg.allocation)
        report = verify_pce(inst, family, alloc, tol=cfg.tol_eq)
        ok = report.is_pce
        payload = {
            "command": "verify",
            "mode": "price_curves",
            "is_pce": report.is_pce,
            "violated_condition": report.violated_condition,
        }
    _emit(cfg, payload)
    if cfg.extra.get("assert_mode") and not ok:
        return EXIT_VERIFY
    return EXIT_OK


def cmd_reduce(cfg: RunConfig) -> int:
    inst = files.load_instance(cfg.instance)
    direction = cfg.extra["direction"]
    if direction == "tp2pc":
        family = files.parse_curve_spec(cfg.curves, inst.m)
        bids = files.load_bids(cfg.bids)
        alloc, g = tp_to_pce(inst, family, bids, tol=cfg.tol_eq)
        payload = {
            "command": "reduce",
            "direction": direction,
            "allocation": _matrix(alloc.x),
            "price_curves": files.curves_to_lists(g),
        }
    else:
        g = files.parse_curve_spec(cfg.curves, inst.m)
        alloc = files.load_allocation(cfg.allocation)
        h_degree = cfg.extra.get("h_degree") or 1.0
        f, bids = pce_to_tp(inst, g, alloc, PowerCurve(1.0, h_degree), tol=cfg.tol_eq)
        payload = {
            "command": "reduce",
            "direction": direction,
            "constraint_curves": files.curves_to_lists(f),
            "bids": bids.to_lists(),
        }
    _emit(cfg, payload)
    return EXIT_OK


def _random_feasible_bids(inst: Instance, f: CurveFamily, rng: np.random.Generator) -> BidMatrix:
    rows = []
    degrees = f.degrees
    for i in range(inst.n):
        amounts = np.zeros(inst.m)
        for j in inst.desired[i]:
            amounts[j] = rng.uniform(0.05, 1.0)
        cost = f.cost_rows(amounts[None, :])[0]
        budget = rng.uniform(0.5, 1.0)
        row = []
        for j in range(inst.m):
            if amounts[j] > 0:
                scaled = amounts[j] * (budget / cost) ** (1.0 / degrees[j])
                row.append(Bid.positive(scaled))
            else:
                row.append(Bid.zero())
        rows.append(row)
    return BidMatrix.from_rows(rows)


def cmd_dynamics(cfg: RunConfig) -> int:
    inst = files.load_instance(cfg.instance)
    assert cfg.rho is not None and cfg.rho.is_finite
    family = CurveFamily.atp(cfg.rho.value, inst.m)
    rng = np.random.default_rng(cfg.seed)
    bids = _random_feasible_bids(inst, family, rng)
    rounds = cfg.extra.get("rounds", 50)
    move_tol = cfg.extra.get("move_tol", 1e-9)
    trajectory = []
    converged = False
    for _ in range(rounds):
        moved = 0.0
        for i in range(inst.n):
            before = float(utilities(inst, atp_allocate(inst, family, bids))[i])
            row, after = best_response(inst, family, bids, i)
            bids = bids.replace_row(i, row)
            moved = max(moved, after - before)
        welfare = ces_welfare(cfg.rho, utilities(inst, atp_allocate(inst, family, bids)))
        trajectory.append(welfare)
        if moved <= move_tol:
            converged = True
            break
    report = verify_tp_ne(inst, family, bids, tol=cfg.tol_eq)
    res = solve_ces(inst, cfg.rho, tol_kkt=cfg.tol_kkt)
    _emit(
        cfg,
        {
            "command": "dynamics",
            "rho": str(cfg.rho),
            "seed": cfg.seed,
            "rounds_run": len(trajectory),
            "converged": converged,
            "welfare_per_round": trajectory,
            "is_ne": report.is_ne,
            "final_bids": bids.to_lists(),
            "optimum": res.objective,
        },
    )
    return EXIT_OK


def cmd_demos(cfg: RunConfig) -> int:
    topic = cfg.extra["topic"]
    if topic == "not-strategyproof":
        assert cfg.rho is not None
        report = demo_not_strategyproof_ces(cfg.rho, tol=cfg.tol_eq)
    elif topic == "bad-ne":
        report = demo_bad_ne_m1(cfg.extra["n"], tol=cfg.tol_eq)
    elif topic == "m2-truthful":
        inst = files.load_instance(cfg.instance)
        report = demo_m2_truthful_ne(
            list(inst.supplies),
            [sorted(r) for r in inst.desired],
            rng=np.random.default_rng(cfg.seed),
            tol=cfg.tol_eq,
        )
    else:  # strategyproof-m1
        inst = files.load_instance(cfg.instance)
        witnesses = {}
        for i in range(inst.n):
            found = check_strategyproof_m1(
                inst.m, list(inst.supplies), [sorted(r) for r in inst.desired], i, tol=cfg.tol_eq
            )
            if found is not None:
                witnesses[str(i)] = found
        report = {"beneficial_deviations": witnesses, "strategyproof": not witnesses}
    payload = {"command": f"demos {topic}"}
    payload.update(report)
    _emit(cfg, payload)
    return EXIT_OK


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tradepost", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, instance=True):
        if instance:
            p.add_argument("instance", help="instance JSON file")
        p.add_argument("-o", "--output", default=None, help="report file (default: stdout)")
        p.add_argument("--seed", type=int, default=DEFAULT_SEED)
        p.add_argument("--tol-eq", type=float, default=TOL_EQ)
        p.add_argument("--tol-kkt", type=float, default=TOL_KKT)

    p = sub.add_parser("solve", help="maximize welfare; report utilities, duals, residual")
    p.add_argument("--rho", required=True, help="-inf, a real < 1, or 1")
    common(p)

    p = sub.add_parser("equilibrium", help="construct and verify an optimal bid profile")
    p.add_argument("--rho", required=True, help="a real < 1")
    common(p)

    p = sub.add_parser("verify", help="verify a bid profile or priced allocation")
    p.add_argument("--curves", required=True, help="atp_rho:<v>, linear, or file:<path>")
    p.add_argument("--bids", default=None, help="bids JSON (trading-post mode)")
    p.add_argument("--allocation", default=None, help="allocation JSON (price-curve mode)")
    p.add_argument("--assert", dest="assert_mode", action="store_true", help="exit 4 on failure")
    common(p)

    p = sub.add_parser("reduce", help="convert between bid profiles and priced allocations")
    p.add_argument("--direction", choices=("tp2pc", "pc2tp"), required=True)
    p.add_argument("--curves", required=True)
    p.add_argument("--bids", default=None)
    p.add_argument("--allocation", default=None)
    p.add_argument("--h-degree", type=float, default=None, help="fallback curve degree (pc2tp)")
    common(p)

    p = sub.add_parser("dynamics", help="iterated best response from a seeded random profile")
    p.add_argument("--rho", required=True, help="a real < 1")
    p.add_argument("--rounds", type=int, default=50)
    p.add_argument("--move-tol", type=float, default=1e-9)
    common(p)

    p = sub.add_parser("demos", help="run a built-in demonstration")
    p.add_argument("topic", choices=("not-strategyproof", "bad-ne", "m2-truthful", "strategyproof-m1"))
    p.add_argument("--rho", default=None, help="for not-strategyproof: -inf excluded, 1 allowed")
    p.add_argument("--n", type=int, default=3, help="for bad-ne")
    p.add_argument("--instance", default=None, help="for m2-truthful / strategyproof-m1")
    p.add_argument("-o", "--output", default=None)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--tol-eq", type=float, default=TOL_EQ)
    p.add_argument("--tol-kkt", type=float, default=TOL_KKT)

    return parser


def _parse_rho(text: str, *, allow_one: bool, allow_maxmin: bool = True) -> Rho:
    try:
        rho = Rho.parse(text)
    except ValueError as exc:
        raise files.ParseError(f"bad rho {text!r}: {exc}") from exc
    if rho.is_one and not allow_one:
        raise files.ParseError("rho = 1 is accepted only by 'solve' and 'demos'")
    if rho.is_maxmin and not allow_maxmin:
        raise files.ParseError("rho = -inf is not valid for this command")
    return rho


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_PARSE if exc.code not in (0, None) else EXIT_OK

    try:
        command = args.command
        if command == "solve":
            cfg = RunConfig(
                command,
                instance=args.instance,
                rho=_parse_rho(args.rho, allow_one=True),
                seed=args.seed,
                tol_eq=args.tol_eq,
                tol_kkt=args.tol_kkt,
                output=args.output,
            )
            return cmd_solve(cfg)
        if command == "equilibrium":
            cfg = RunConfig(
                command,
                instance=args.instance,
                rho=_parse_rho(args.rho, allow_one=False, allow_maxmin=False),
                seed=args.seed,
                tol_eq=args.tol_eq,
                tol_kkt=args.tol_kkt,
                output=args.output,
            )
            return cmd_equilibrium(cfg)
        if command == "verify":
            if (args.bids is None) == (args.allocation is None):
                raise files.ParseError("verify needs exactly one of --bids or --allocation")
            cfg = RunConfig(
                command,
                instance=args.instance,
                curves=args.curves,
                bids=args.bids,
                allocation=args.allocation,
                seed=args.seed,
                tol_eq=args.tol_eq,
                tol_kkt=args.tol_kkt,
                output=args.output,
                extra={"assert_mode": args.assert_mode},
            )
            return cmd_verify(cfg)
        if command == "reduce":
            if args.direction == "tp2pc" and args.bids is None:
                raise files.ParseError("reduce tp2pc needs --bids")
            if args.direction == "pc2tp" and args.allocation is None:
                raise files.ParseError("reduce pc2tp needs --allocation")
            cfg = RunConfig(
                command,
                instance=args.instance,
                curves=args.curves,
                bids=args.bids,
                allocation=args.allocation,
                seed=args.seed,
                tol_eq=args.tol_eq,
                tol_kkt=args.tol_kkt,
                output=args.output,
                extra={"direction": args.direction, "h_degree": args.h_degree},
            )
            return cmd_reduce(cfg)
        if command == "dynamics":
            cfg = RunConfig(
                command,
                instance=args.instance,
                rho=_parse_rho(args.rho, allow_one=False, allow_maxmin=False),
                seed=args.seed,
                tol_eq=args.tol_eq,
                tol_kkt=args.tol_kkt,
                output=args.output,
                extra={"rounds": args.rounds, "move_tol": args.move_tol},
            )
            return cmd_dynamics(cfg)
        if command == "demos":
            if args.topic in ("m2-truthful", "strategyproof-m1") and args.instance is None:
                raise files.ParseError(f"demos {args.topic} needs --instance")
            if args.topic == "not-strategyproof" and args.rho is None:
                raise files.ParseError("demos not-strategyproof needs --rho")
            rho = _parse_rho(args.rho, allow_one=True) if args.rho is not None else None
            if rho is not None and rho.is_maxmin and args.topic == "not-strategyproof":
                raise files.ParseError("demos not-strategyproof needs rho > -inf")
            cfg = RunConfig(
                command,
                instance=args.instance,
                rho=rho,
                seed=args.seed,
                tol_eq=args.tol_eq,
                tol_kkt=args.tol_kkt,
                output=args.output,
                extra={"topic": args.topic, "n": args.n},
            )
            return cmd_demos(cfg)
        raise files.ParseError(f"unknown command {command!r}")
    except files.ParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except NonConvergence as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (ValueError, IndexError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE


def entry() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    entry()
