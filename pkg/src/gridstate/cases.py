"""Network case model: buses, branches, parsing and validation.

A case file is JSON with three top-level entries::

    {
      "base_mva": 100.0,
      "buses":    [{"id", "kind", "p_load_mw", "q_load_mvar",
                    "gs_mw", "bs_mvar", "v_setpoint", "base_kv"}, ...],
      "branches": [{"from", "to", "r_pu", "x_pu", "b_pu",
                    "tap", "shift_rad", "status"}, ...]
    }

Loads are net demand per bus (local generation already subtracted), so a
voltage-controlled bus with a generator carries a negative ``p_load_mw``.
``v_setpoint`` is required for Slack/PV buses and may be ``null`` for PQ
buses.  Branch impedances are per unit on ``base_mva``; ``shift_rad`` is the
phase shift of the from-side transformer.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from .errors import CaseFormatError, CaseValidationError


class BusKind(str, Enum):
    SLACK = "Slack"
    PV = "PV"
    PQ = "PQ"


class BranchStatus(str, Enum):
    IN = "In"
    OUT = "Out"


@dataclass(frozen=True)
class Bus:
    """Single network node.

    Attributes:
        id: External bus number (any positive int, unique within a case).
        kind: Slack, PV or PQ role in the power flow.
        p_load_mw: Net real demand in MW (negative for net generation).
        q_load_mvar: Net reactive demand in MVAr (ignored at PV/Slack buses).
        gs_mw: Shunt conductance as MW consumed at 1.0 pu voltage.
        bs_mvar: Shunt susceptance as MVAr injected at 1.0 pu voltage.
        v_setpoint: Voltage magnitude target, required unless kind is PQ.
        base_kv: Nominal voltage level, informational only.
    """

    id: int
    kind: BusKind
    p_load_mw: float = 0.0
    q_load_mvar: float = 0.0
    gs_mw: float = 0.0
    bs_mvar: float = 0.0
    v_setpoint: float | None = None
    base_kv: float = 0.0

    def __post_init__(self):
        if self.kind != BusKind.PQ and self.v_setpoint is None:
            raise CaseValidationError(f"bus {self.id}: {self.kind.value} bus needs v_setpoint")
        if self.v_setpoint is not None and self.v_setpoint <= 0:
            raise CaseValidationError(f"bus {self.id}: v_setpoint must be positive")


@dataclass(frozen=True)
class Branch:
    """Branch (line or transformer) in the pi model.

    ``tap`` is the off-nominal turns ratio on the from side (1.0 for lines)
    and ``b_pu`` the total line charging susceptance, split equally between
    both ends.
    """

    from_bus: int
    to_bus: int
    r_pu: float
    x_pu: float
    b_pu: float = 0.0
    tap: float = 1.0
    shift_rad: float = 0.0
    status: BranchStatus = BranchStatus.IN

    def __post_init__(self):
        if self.from_bus == self.to_bus:
            raise CaseValidationError(f"branch {self.from_bus}-{self.to_bus}: endpoints coincide")
        if self.r_pu < 0:
            raise CaseValidationError(f"branch {self.from_bus}-{self.to_bus}: negative resistance")
        if self.tap <= 0:
            raise CaseValidationError(f"branch {self.from_bus}-{self.to_bus}: tap must be positive")

    @property
    def in_service(self) -> bool:
        return self.status == BranchStatus.IN


@dataclass(frozen=True)
class NetworkCase:
    """Validated network: bus list, branch list and the id -> position map.

    ``internal_index`` maps external bus ids to dense 0-based indices in file
    order; every array in the package is aligned with that ordering.
    """

    base_mva: float
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    internal_index: dict[int, int] = field(compare=False)

    @property
    def n_buses(self) -> int:
        return len(self.buses)

    @property
    def slack_index(self) -> int:
        for i, bus in enumerate(self.buses):
            if bus.kind == BusKind.SLACK:
                return i
        raise CaseValidationError("case has no slack bus")

    def bus_position(self, bus_id: int) -> int:
        try:
            return self.internal_index[bus_id]
        except KeyError:
            raise CaseValidationError(f"unknown bus id {bus_id}") from None

    def branch_position(self, from_bus: int, to_bus: int) -> int:
        """Position of the first in-service branch joining the two endpoints, as given."""
        for i, br in enumerate(self.branches):
            if br.in_service and br.from_bus == from_bus and br.to_bus == to_bus:
                return i
        raise CaseValidationError(f"no in-service branch {from_bus}-{to_bus}")


def make_case(base_mva: float, buses: list[Bus], branches: list[Branch]) -> NetworkCase:
    """Assemble and validate a NetworkCase from already-typed parts."""
    if base_mva <= 0:
        raise CaseValidationError("base_mva must be positive")
    index: dict[int, int] = {}
    for pos, bus in enumerate(buses):
        if bus.id in index:
            raise CaseValidationError(f"duplicate bus id {bus.id}")
        index[bus.id] = pos
    slacks = [b.id for b in buses if b.kind == BusKind.SLACK]
    if len(slacks) != 1:
        raise CaseValidationError(f"expected exactly one slack bus, found {len(slacks)}")
    for br in branches:
        for end in (br.from_bus, br.to_bus):
            if end not in index:
                raise CaseValidationError(f"branch {br.from_bus}-{br.to_bus}: unknown endpoint {end}")
    _require_connected(buses, branches, index)
    return NetworkCase(float(base_mva), tuple(buses), tuple(branches), index)


def _require_connected(buses, branches, index) -> None:
    """Reject cases whose in-service graph does not reach every bus."""
    n = len(buses)
    if n == 0:
        raise CaseValidationError("case has no buses")
    adjacency: list[list[int]] = [[] for _ in range(n)]
    for br in branches:
        if not br.in_service:
            continue
        f, t = index[br.from_bus], index[br.to_bus]
        adjacency[f].append(t)
        adjacency[t].append(f)
    seen = {0}
    stack = [0]
    while stack:
        for nxt in adjacency[stack.pop()]:
            if nxt not in seen:
                seen.add(nxt)
                stack.append(nxt)
    if len(seen) != n:
        missing = sorted(buses[i].id for i in range(n) if i not in seen)
        raise CaseValidationError(f"network is not connected; unreachable buses {missing}")


_BUS_FIELDS = ("id", "kind", "p_load_mw", "q_load_mvar", "gs_mw", "bs_mvar", "v_setpoint", "base_kv")
_BRANCH_FIELDS = ("from", "to", "r_pu", "x_pu", "b_pu", "tap", "shift_rad", "status")


def parse_case(source: str | Path) -> NetworkCase:
    """Parse a JSON case file (or a JSON string) into a validated NetworkCase.

    Syntax problems raise CaseFormatError with a location; semantic problems
    (duplicate ids, missing slack, dangling branch endpoints, disconnected
    topology) raise CaseValidationError.
    """
    path: str | None = None
    text = str(source)
    if isinstance(source, Path) or (len(text) < 4096 and not text.lstrip().startswith("{")):
        path = str(source)
        try:
            text = Path(source).read_text()
        except OSError as exc:
            raise CaseFormatError(f"cannot read case file: {exc}", path=path) from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CaseFormatError(exc.msg, path=path, location=f"line {exc.lineno} col {exc.colno}") from exc
    return case_from_dict(raw, path=path)


def case_from_dict(raw: dict, path: str | None = None) -> NetworkCase:
    """Build a case from parsed JSON data, reporting the offending record on errors."""
    if not isinstance(raw, dict):
        raise CaseFormatError("top level must be an object", path=path)
    for key in ("base_mva", "buses", "branches"):
        if key not in raw:
            raise CaseFormatError(f"missing top-level field '{key}'", path=path)
    buses = []
    for i, rec in enumerate(raw["buses"]):
        loc = f"buses[{i}]"
        _require_fields(rec, _BUS_FIELDS, path, loc)
        try:
            kind = BusKind(rec["kind"])
        except ValueError:
            raise CaseFormatError(f"unknown bus kind {rec['kind']!r}", path=path, location=loc) from None
        buses.append(Bus(
            id=_as_int(rec["id"], path, loc, "id"),
            kind=kind,
            p_load_mw=_as_float(rec["p_load_mw"], path, loc, "p_load_mw"),
            q_load_mvar=_as_float(rec["q_load_mvar"], path, loc, "q_load_mvar"),
            gs_mw=_as_float(rec["gs_mw"], path, loc, "gs_mw"),
            bs_mvar=_as_float(rec["bs_mvar"], path, loc, "bs_mvar"),
            v_setpoint=None if rec["v_setpoint"] is None
            else _as_float(rec["v_setpoint"], path, loc, "v_setpoint"),
            base_kv=_as_float(rec["base_kv"], path, loc, "base_kv"),
        ))
    branches = []
    for i, rec in enumerate(raw["branches"]):
        loc = f"branches[{i}]"
        _require_fields(rec, _BRANCH_FIELDS, path, loc)
        try:
            status = BranchStatus(rec["status"])
        except ValueError:
            raise CaseFormatError(f"unknown branch status {rec['status']!r}", path=path, location=loc) from None
        branches.append(Branch(
            from_bus=_as_int(rec["from"], path, loc, "from"),
            to_bus=_as_int(rec["to"], path, loc, "to"),
            r_pu=_as_float(rec["r_pu"], path, loc, "r_pu"),
            x_pu=_as_float(rec["x_pu"], path, loc, "x_pu"),
            b_pu=_as_float(rec["b_pu"], path, loc, "b_pu"),
            tap=_as_float(rec["tap"], path, loc, "tap"),
            shift_rad=_as_float(rec["shift_rad"], path, loc, "shift_rad"),
            status=status,
        ))
    return make_case(_as_float(raw["base_mva"], path, "top level", "base_mva"), buses, branches)


def case_to_dict(case: NetworkCase) -> dict:
    """Inverse of case_from_dict; parse(serialize(case)) round-trips exactly."""
    return {
        "base_mva": case.base_mva,
        "buses": [{
            "id": b.id,
            "kind": b.kind.value,
            "p_load_mw": b.p_load_mw,
            "q_load_mvar": b.q_load_mvar,
            "gs_mw": b.gs_mw,
            "bs_mvar": b.bs_mvar,
            "v_setpoint": b.v_setpoint,
            "base_kv": b.base_kv,
        } for b in case.buses],
        "branches": [{
            "from": br.from_bus,
            "to": br.to_bus,
            "r_pu": br.r_pu,
            "x_pu": br.x_pu,
            "b_pu": br.b_pu,
            "tap": br.tap,
            "shift_rad": br.shift_rad,
            "status": br.status.value,
        } for br in case.branches],
    }


def serialize_case(case: NetworkCase, path: str | Path | None = None) -> str:
    """Render a case back to JSON; writes to ``path`` when given."""
    text = json.dumps(case_to_dict(case), indent=1) + "\n"
    if path is not None:
        Path(path).write_text(text)
    return text


def load_bundled_case(name: str) -> NetworkCase:
    """Load one of the case fixtures shipped with the package.

    Available names: ieee14, ieee30, ieee57, ieee118, radial69.
    """
    here = Path(__file__).parent / "data" / f"{name}.json"
    if not here.exists():
        available = sorted(p.stem for p in (Path(__file__).parent / "data").glob("*.json"))
        raise CaseFormatError(f"no bundled case named {name!r}; available: {available}")
    return parse_case(here)


def _require_fields(rec, fields, path, loc):
    if not isinstance(rec, dict):
        raise CaseFormatError("record must be an object", path=path, location=loc)
    for f in fields:
        if f not in rec:
            raise CaseFormatError(f"missing field '{f}'", path=path, location=loc)


def _as_float(value, path, loc, name) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise CaseFormatError(f"field '{name}' must be a number, got {value!r}", path=path, location=loc)
    return float(value)


def _as_int(value, path, loc, name) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise CaseFormatError(f"field '{name}' must be an integer, got {value!r}", path=path, location=loc)
    return value
