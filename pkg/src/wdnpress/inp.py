"""Reading and writing the EPANET INP text format (steady-state subset).

Values are converted to SI when read and back to the model's declared flow
unit system when written, so ``parse_inp(serialize_inp(m))`` reproduces ``m``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path

from .errors import DuplicateId, MalformedLine, MissingRequiredSection, UnknownNodeReference
from .network import (
    DemandCategory,
    FlowUnits,
    HeadlossFormula,
    Junction,
    LinkStatus,
    NetworkModel,
    Pipe,
    Pump,
    Reservoir,
    Tank,
    Valve,
    ValveKind,
)

SUPPORTED_SECTIONS = (
    "TITLE", "JUNCTIONS", "RESERVOIRS", "TANKS", "PIPES", "PUMPS", "VALVES",
    "DEMANDS", "PATTERNS", "CURVES", "STATUS", "OPTIONS", "COORDINATES",
)

# cubic metres per second per flow unit
FLOW_TO_SI = {
    FlowUnits.CFS: 0.3048**3,
    FlowUnits.GPM: 3.785411784e-3 / 60.0,
    FlowUnits.MGD: 3785.411784 / 86400.0,
    FlowUnits.IMGD: 4546.09 / 86400.0,
    FlowUnits.AFD: 1233.48183754752 / 86400.0,
    FlowUnits.LPS: 1e-3,
    FlowUnits.LPM: 1e-3 / 60.0,
    FlowUnits.MLD: 1e3 / 86400.0,
    FlowUnits.CMH: 1.0 / 3600.0,
    FlowUnits.CMD: 1.0 / 86400.0,
}

FT = 0.3048
INCH = 0.0254
PSI_TO_M = 6894.757293168 / (1000.0 * 9.80665)
HP_TO_KW = 0.745699872


class UnsupportedSectionWarning(UserWarning):
    pass


@dataclass(frozen=True)
class _Units:
    """Multipliers from file units to SI for one flow-unit system."""

    flow: float
    length: float
    diameter: float
    dw_roughness: float
    volume: float
    pressure: float
    power: float

    @classmethod
    def of(cls, flow_units: FlowUnits) -> _Units:
        if flow_units.is_us:
            return cls(FLOW_TO_SI[flow_units], FT, INCH, FT * 1e-3, FT**3, PSI_TO_M, HP_TO_KW)
        return cls(FLOW_TO_SI[flow_units], 1.0, 1e-3, 1e-3, 1.0, 1.0, 1.0)


@dataclass
class _Line:
    lineno: int
    tokens: list[str]
    raw: str


_STATUS_WORDS = {"OPEN": LinkStatus.OPEN, "CLOSED": LinkStatus.CLOSED, "CV": LinkStatus.CV}


def _split_sections(text: str) -> tuple[dict[str, list[_Line]], list[str]]:
    sections: dict[str, list[_Line]] = {}
    order: list[str] = []
    current: str | None = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        body = raw.split(";", 1)[0].strip()
        if not body:
            continue
        if body.startswith("["):
            end = body.find("]")
            if end < 0:
                raise MalformedLine(lineno, "unterminated section header", raw)
            current = body[1:end].strip().upper()
            if current == "END":
                break
            if current not in sections:
                sections[current] = []
                order.append(current)
            continue
        if current is None:
            raise MalformedLine(lineno, "data before the first section header", raw)
        sections[current].append(_Line(lineno, body.split(), raw))
    return sections, order


def _num(line: _Line, i: int, what: str) -> float:
    try:
        return float(line.tokens[i])
    except (IndexError, ValueError):
        raise MalformedLine(line.lineno, f"expected numeric {what} in field {i + 1}", line.raw) from None


def _arity(line: _Line, lo: int, hi: int | None = None) -> None:
    n = len(line.tokens)
    if n < lo or (hi is not None and n > hi):
        expected = f"{lo}" if hi == lo else f"{lo}..{hi}" if hi is not None else f">= {lo}"
        raise MalformedLine(line.lineno, f"expected {expected} fields, got {n}", line.raw)


def _parse_options(lines: list[_Line], model: NetworkModel) -> None:
    for line in lines:
        words = [t.upper() for t in line.tokens]
        key = words[0]
        if key == "UNITS":
            _arity(line, 2, 2)
            try:
                model.flow_units = FlowUnits(words[1])
            except ValueError:
                raise MalformedLine(line.lineno, f"unknown flow units {line.tokens[1]!r}", line.raw) from None
        elif key == "HEADLOSS":
            _arity(line, 2, 2)
            try:
                model.headloss = HeadlossFormula(words[1])
            except ValueError:
                raise MalformedLine(line.lineno, f"unsupported headloss formula {line.tokens[1]!r}", line.raw) from None
        elif key == "PATTERN":
            _arity(line, 2, 2)
            model.default_pattern = line.tokens[1]
        elif words[:2] == ["DEMAND", "MULTIPLIER"]:
            _arity(line, 3, 3)
            model.demand_multiplier = _num(line, 2, "demand multiplier")
        elif key == "VISCOSITY":
            _arity(line, 2, 2)
            model.viscosity = _num(line, 1, "viscosity")
        else:
            if words[:2] == ["DEMAND", "MODEL"] and len(words) > 2 and words[2] == "PDA":
                model.warnings.append(f"line {line.lineno}: pressure-driven demand requested; solving demand-driven")
            model.extra_options.append(" ".join(line.tokens))


def parse_inp(text: str, name: str = "") -> NetworkModel:
    """Parse INP text into an SI :class:`NetworkModel`.

    Unsupported sections are skipped; each non-empty one leaves a message in
    ``model.warnings`` and its raw lines in ``model.unsupported``.
    """
    sections, order = _split_sections(text)
    if "JUNCTIONS" not in sections:
        raise MissingRequiredSection("JUNCTIONS")
    if "RESERVOIRS" not in sections and "TANKS" not in sections:
        raise MissingRequiredSection("RESERVOIRS or TANKS")
    if "PIPES" not in sections:
        raise MissingRequiredSection("PIPES")

    model = NetworkModel(name=name)
    _parse_options(sections.get("OPTIONS", []), model)
    u = _Units.of(model.flow_units)

    for sec in order:
        if sec not in SUPPORTED_SECTIONS and sections[sec]:
            model.warnings.append(f"skipped unsupported section [{sec}] ({len(sections[sec])} lines)")
            model.unsupported[sec] = [ln.raw for ln in sections[sec]]

    model.title = [ln.raw.split(";", 1)[0].strip() for ln in sections.get("TITLE", [])]

    node_ids: set[str] = set()

    def claim_node(nid: str) -> None:
        if nid in node_ids:
            raise DuplicateId(nid, "node")
        node_ids.add(nid)

    for line in sections.get("JUNCTIONS", []):
        _arity(line, 2, 4)
        claim_node(line.tokens[0])
        demand = _num(line, 2, "demand") * u.flow if len(line.tokens) > 2 else 0.0
        pattern = line.tokens[3] if len(line.tokens) > 3 else None
        model.junctions.append(Junction(line.tokens[0], _num(line, 1, "elevation") * u.length, [DemandCategory(demand, pattern)]))

    for line in sections.get("RESERVOIRS", []):
        _arity(line, 2, 3)
        claim_node(line.tokens[0])
        pattern = line.tokens[2] if len(line.tokens) > 2 else None
        model.reservoirs.append(Reservoir(line.tokens[0], _num(line, 1, "head") * u.length, pattern))

    for line in sections.get("TANKS", []):
        _arity(line, 6, 9)
        claim_node(line.tokens[0])
        t = line.tokens
        vol_curve = t[7] if len(t) > 7 and t[7] != "*" else None
        model.tanks.append(
            Tank(
                t[0],
                elevation=_num(line, 1, "elevation") * u.length,
                init_level=_num(line, 2, "initial level") * u.length,
                min_level=_num(line, 3, "minimum level") * u.length,
                max_level=_num(line, 4, "maximum level") * u.length,
                diameter=_num(line, 5, "diameter") * u.length,
                min_volume=(_num(line, 6, "minimum volume") if len(t) > 6 else 0.0) * u.volume,
                volume_curve=vol_curve,
            )
        )

    link_ids: set[str] = set()

    def claim_link(line: _Line) -> tuple[str, str, str]:
        lid, a, b = line.tokens[:3]
        if lid in link_ids:
            raise DuplicateId(lid, "link")
        link_ids.add(lid)
        for end in (a, b):
            if end not in node_ids:
                raise UnknownNodeReference(end, lid)
        return lid, a, b

    dw = model.headloss == HeadlossFormula.DARCY_WEISBACH
    for line in sections.get("PIPES", []):
        _arity(line, 6, 8)
        lid, a, b = claim_link(line)
        status = LinkStatus.OPEN
        minor = 0.0
        extra = line.tokens[6:]
        if extra and extra[-1].upper() in _STATUS_WORDS:
            status = _STATUS_WORDS[extra[-1].upper()]
            extra = extra[:-1]
        if len(extra) > 1:
            raise MalformedLine(line.lineno, "unexpected trailing fields", line.raw)
        if extra:
            minor = _num(line, 6, "minor loss")
        model.pipes.append(
            Pipe(
                lid, a, b,
                length=_num(line, 3, "length") * u.length,
                diameter=_num(line, 4, "diameter") * u.diameter,
                roughness=_num(line, 5, "roughness") * (u.dw_roughness if dw else 1.0),
                minor_loss=minor,
                status=status,
            )
        )

    for line in sections.get("PUMPS", []):
        _arity(line, 4)
        lid, a, b = claim_link(line)
        pump = Pump(lid, a, b)
        rest = line.tokens[3:]
        if len(rest) % 2:
            raise MalformedLine(line.lineno, "pump parameters must be keyword/value pairs", line.raw)
        for key, value in zip(rest[::2], rest[1::2]):
            k = key.upper()
            if k == "HEAD":
                pump.curve = value
            elif k == "POWER":
                pump.power = _num(_Line(line.lineno, [value], line.raw), 0, "power") * u.power
            elif k == "SPEED":
                pump.speed = _num(_Line(line.lineno, [value], line.raw), 0, "speed")
            elif k == "PATTERN":
                pump.pattern = value
            else:
                raise MalformedLine(line.lineno, f"unknown pump keyword {key!r}", line.raw)
        model.pumps.append(pump)

    for line in sections.get("VALVES", []):
        _arity(line, 6, 7)
        lid, a, b = claim_link(line)
        try:
            kind = ValveKind(line.tokens[4].upper())
        except ValueError:
            raise MalformedLine(line.lineno, f"unknown valve type {line.tokens[4]!r}", line.raw) from None
        model.valves.append(
            Valve(
                lid, a, b,
                diameter=_num(line, 3, "diameter") * u.diameter,
                kind=kind,
                setting=_valve_setting_in(line, kind, u),
                minor_loss=_num(line, 6, "minor loss") if len(line.tokens) > 6 else 0.0,
            )
        )

    junctions = {j.id: j for j in model.junctions}
    replaced: set[str] = set()
    for line in sections.get("DEMANDS", []):
        _arity(line, 2, 3)
        jid = line.tokens[0]
        if jid not in junctions:
            raise UnknownNodeReference(jid)
        if jid not in replaced:
            junctions[jid].demands = []
            replaced.add(jid)
        pattern = line.tokens[2] if len(line.tokens) > 2 else None
        junctions[jid].demands.append(DemandCategory(_num(line, 1, "demand") * u.flow, pattern))

    for line in sections.get("PATTERNS", []):
        _arity(line, 1)
        values = [_num(line, i, "multiplier") for i in range(1, len(line.tokens))]
        model.patterns.setdefault(line.tokens[0], []).extend(values)

    raw_curves: dict[str, list[tuple[float, float]]] = {}
    for line in sections.get("CURVES", []):
        _arity(line, 3, 3)
        raw_curves.setdefault(line.tokens[0], []).append((_num(line, 1, "x"), _num(line, 2, "y")))
    head_curves = _head_curve_ids(model)
    for cid, points in raw_curves.items():
        if cid in head_curves:
            points = [(x * u.flow, y * u.length) for x, y in points]
        model.curves[cid] = points

    links = {link.id: link for link in model.links()}
    for line in sections.get("STATUS", []):
        _arity(line, 2, 2)
        link = links.get(line.tokens[0])
        if link is None:
            raise MalformedLine(line.lineno, f"status for unknown link {line.tokens[0]!r}", line.raw)
        _apply_status(line, link, u)

    for line in sections.get("COORDINATES", []):
        _arity(line, 3, 3)
        nid = line.tokens[0]
        if nid not in node_ids:
            model.warnings.append(f"line {line.lineno}: coordinates for unknown node {nid!r} ignored")
            continue
        model.coordinates[nid] = (_num(line, 1, "x"), _num(line, 2, "y"))

    return model


def _valve_setting_in(line: _Line, kind: ValveKind, u: _Units) -> float:
    if kind == ValveKind.GPV:
        # the setting of a general-purpose valve is a curve id; it has no role here
        return 0.0
    value = _num(line, 5, "setting")
    if kind in (ValveKind.PRV, ValveKind.PSV, ValveKind.PBV):
        return value * u.pressure
    if kind == ValveKind.FCV:
        return value * u.flow
    return value


def _valve_setting_out(valve: Valve, u: _Units) -> float:
    if valve.kind in (ValveKind.PRV, ValveKind.PSV, ValveKind.PBV):
        return valve.setting / u.pressure
    if valve.kind == ValveKind.FCV:
        return valve.setting / u.flow
    return valve.setting


def _apply_status(line: _Line, link, u: _Units) -> None:
    word = line.tokens[1].upper()
    if word in ("OPEN", "CLOSED"):
        link.status = _STATUS_WORDS[word]
        return
    if word == "ACTIVE":
        link.status = LinkStatus.OPEN
        return
    value = _num(line, 1, "status setting")
    if isinstance(link, Pump):
        if value == 0.0:
            link.status = LinkStatus.CLOSED
        else:
            link.speed = value
            link.status = LinkStatus.OPEN
    elif isinstance(link, Valve):
        link.setting = value * (u.pressure if link.kind in (ValveKind.PRV, ValveKind.PSV, ValveKind.PBV) else 1.0)
    else:
        raise MalformedLine(line.lineno, "numeric status is not valid for a pipe", line.raw)


def _head_curve_ids(model: NetworkModel) -> set[str]:
    return {p.curve for p in model.pumps if p.curve is not None}


def read_inp(path: str | Path) -> NetworkModel:
    path = Path(path)
    return parse_inp(path.read_text(encoding="utf-8"), name=path.stem)


# --- writing -----------------------------------------------------------------


def _f(x: float) -> str:
    return repr(float(x))


def serialize_inp(model: NetworkModel) -> str:
    """Write ``model`` as INP text in its own flow-unit system.

    Sections that were skipped at parse time cannot be reproduced; each one
    emits an :class:`UnsupportedSectionWarning`.
    """
    for sec in model.unsupported:
        warnings.warn(f"section [{sec}] omitted from output", UnsupportedSectionWarning, stacklevel=2)

    u = _Units.of(model.flow_units)
    dw = model.headloss == HeadlossFormula.DARCY_WEISBACH
    out: list[str] = []

    def section(name: str, rows: list[str]) -> None:
        out.append(f"[{name}]")
        out.extend(rows)
        out.append("")

    section("TITLE", list(model.title))

    rows = []
    multi = []
    for j in model.junctions:
        fields = [j.id, _f(j.elevation / u.length)]
        if j.demands:
            first = j.demands[0]
            fields.append(_f(first.base / u.flow))
            if first.pattern is not None:
                fields.append(first.pattern)
        rows.append(" ".join(fields))
        if len(j.demands) > 1:
            multi.append(j)
    section("JUNCTIONS", rows)

    section(
        "RESERVOIRS",
        [" ".join([r.id, _f(r.head / u.length)] + ([r.pattern] if r.pattern else [])) for r in model.reservoirs],
    )

    rows = []
    for t in model.tanks:
        fields = [t.id] + [_f(v / u.length) for v in (t.elevation, t.init_level, t.min_level, t.max_level, t.diameter)]
        fields.append(_f(t.min_volume / u.volume))
        if t.volume_curve:
            fields.append(t.volume_curve)
        rows.append(" ".join(fields))
    section("TANKS", rows)

    section(
        "PIPES",
        [
            " ".join(
                [
                    p.id, p.start, p.end,
                    _f(p.length / u.length),
                    _f(p.diameter / u.diameter),
                    _f(p.roughness / (u.dw_roughness if dw else 1.0)),
                    _f(p.minor_loss),
                    p.status.value,
                ]
            )
            for p in model.pipes
        ],
    )

    rows = []
    for p in model.pumps:
        fields = [p.id, p.start, p.end]
        if p.curve is not None:
            fields += ["HEAD", p.curve]
        if p.power is not None:
            fields += ["POWER", _f(p.power / u.power)]
        if p.speed != 1.0:
            fields += ["SPEED", _f(p.speed)]
        if p.pattern is not None:
            fields += ["PATTERN", p.pattern]
        rows.append(" ".join(fields))
    section("PUMPS", rows)

    section(
        "VALVES",
        [
            " ".join(
                [
                    v.id, v.start, v.end,
                    _f(v.diameter / u.diameter),
                    v.kind.value,
                    _f(_valve_setting_out(v, u)),
                    _f(v.minor_loss),
                ]
            )
            for v in model.valves
        ],
    )

    rows = []
    for j in multi:
        for cat in j.demands:
            rows.append(" ".join([j.id, _f(cat.base / u.flow)] + ([cat.pattern] if cat.pattern is not None else [])))
    section("DEMANDS", rows)

    rows = [f"{p.id} Closed" for p in model.pumps if p.status == LinkStatus.CLOSED]
    rows += [f"{v.id} Closed" for v in model.valves if v.status == LinkStatus.CLOSED]
    section("STATUS", rows)

    rows = []
    for pid, values in model.patterns.items():
        for k in range(0, len(values), 6):
            rows.append(" ".join([pid] + [_f(v) for v in values[k : k + 6]]))
        if not values:
            rows.append(pid)
    section("PATTERNS", rows)

    head_curves = _head_curve_ids(model)
    rows = []
    for cid, points in model.curves.items():
        for x, y in points:
            if cid in head_curves:
                x, y = x / u.flow, y / u.length
            rows.append(f"{cid} {_f(x)} {_f(y)}")
    section("CURVES", rows)

    rows = [f"UNITS {model.flow_units.value}", f"HEADLOSS {model.headloss.value}"]
    if model.default_pattern is not None:
        rows.append(f"PATTERN {model.default_pattern}")
    rows.append(f"DEMAND MULTIPLIER {_f(model.demand_multiplier)}")
    rows.append(f"VISCOSITY {_f(model.viscosity)}")
    rows += model.extra_options
    section("OPTIONS", rows)

    section("COORDINATES", [f"{nid} {_f(x)} {_f(y)}" for nid, (x, y) in model.coordinates.items()])

    out.append("[END]")
    return "\n".join(out) + "\n"
