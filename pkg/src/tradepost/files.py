"""JSON file formats for instances, bids, allocations, and curve families."""
from __future__ import annotations

import json
from pathlib import Path
from typing import Any

import numpy as np

from .core import Allocation, Instance
from .trading_post import BidMatrix, CurveFamily, PowerCurve


class ParseError(ValueError):
    """An input file could not be parsed; message carries location detail."""


def _load_json(path: str | Path) -> Any:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc


def load_instance(path: str | Path) -> Instance:
    """Read ``{"supplies": [...], "agents": [{"desired": [...]}, ...]}``."""
    data = _load_json(path)
    if not isinstance(data, dict):
        raise ParseError(f"{path}: top level must be an object")
    supplies = data.get("supplies")
    agents = data.get("agents")
    if not isinstance(supplies, list) or not supplies:
        raise ParseError(f"{path}: field 'supplies' must be a nonempty array")
    if not isinstance(agents, list) or not agents:
        raise ParseError(f"{path}: field 'agents' must be a nonempty array")
    desired = []
    for i, agent in enumerate(agents):
        if not isinstance(agent, dict) or "desired" not in agent:
            raise ParseError(f"{path}: agents[{i}] must be an object with field 'desired'")
        goods = agent["desired"]
        if not isinstance(goods, list):
            raise ParseError(f"{path}: agents[{i}].desired must be an array of good indices")
        desired.append(goods)
    try:
        return Instance(supplies, desired)
    except (TypeError, ValueError) as exc:
        raise ParseError(f"{path}: {exc}") from exc


def save_instance(inst: Instance, path: str | Path) -> None:
    payload = {
        "supplies": list(inst.supplies),
        "agents": [{"desired": sorted(r)} for r in inst.desired],
    }
    Path(path).write_text(dumps(payload), encoding="utf-8")


def load_bids(path: str | Path) -> BidMatrix:
    """Read an n-by-m array whose cells are numbers or the string "beta"."""
    data = _load_json(path)
    if not isinstance(data, list) or not data or not all(isinstance(r, list) for r in data):
        raise ParseError(f"{path}: bids must be a nonempty 2-D array")
    try:
        return BidMatrix.from_lists(data)
    except (TypeError, ValueError) as exc:
        raise ParseError(f"{path}: {exc}") from exc


def save_bids(bids: BidMatrix, path: str | Path) -> None:
    Path(path).write_text(dumps(bids.to_lists()), encoding="utf-8")


def load_allocation(path: str | Path) -> Allocation:
    data = _load_json(path)
    try:
        return Allocation(np.asarray(data, dtype=float))
    except (TypeError, ValueError) as exc:
        raise ParseError(f"{path}: {exc}") from exc


def load_curves(path: str | Path) -> CurveFamily:
    """Read ``[[coeff, degree], ...]``, one pair per good."""
    data = _load_json(path)
    if not isinstance(data, list) or not data:
        raise ParseError(f"{path}: curves must be a nonempty array of [coeff, degree] pairs")
    curves = []
    for j, pair in enumerate(data):
        if not isinstance(pair, list) or len(pair) != 2:
            raise ParseError(f"{path}: curves[{j}] must be a [coeff, degree] pair")
        try:
            curves.append(PowerCurve(float(pair[0]), float(pair[1])))
        except (TypeError, ValueError) as exc:
            raise ParseError(f"{path}: curves[{j}]: {exc}") from exc
    return CurveFamily(curves)


def curves_to_lists(f: CurveFamily) -> list[list[float]]:
    return [[c.coeff, c.degree] for c in f]


def parse_curve_spec(spec: str, m: int) -> CurveFamily:
    """Parse ``atp_rho:<rho>``, ``linear``, or ``file:<path>``."""
    spec = spec.strip()
    if spec == "linear":
        return CurveFamily.linear(m)
    if spec.startswith("atp_rho:"):
        try:
            rho_value = float(spec.split(":", 1)[1])
        except ValueError as exc:
            raise ParseError(f"curve spec {spec!r}: bad rho value") from exc
        if rho_value >= 1:
            raise ParseError(f"curve spec {spec!r}: rho must be < 1")
        return CurveFamily.atp(rho_value, m)
    if spec.startswith("file:"):
        family = load_curves(spec.split(":", 1)[1])
        if family.m != m:
            raise ParseError(f"curve file has {family.m} goods, instance has {m}")
        return family
    raise ParseError(f"unknown curve spec {spec!r} (expected atp_rho:<v>, linear, or file:<path>)")


def dumps(payload: Any) -> str:
    """Deterministic JSON: sorted keys, fixed layout, trailing newline."""
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"
