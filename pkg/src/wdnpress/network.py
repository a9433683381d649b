"""In-memory network model, validation, and the graph view used downstream.

All quantities are SI: metres, cubic metres per second. Conversion from the
file's unit system happens once, in :mod:`wdnpress.inp`.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterator

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .errors import InvalidModel


class FlowUnits(str, Enum):
    CFS = "CFS"
    GPM = "GPM"
    MGD = "MGD"
    IMGD = "IMGD"
    AFD = "AFD"
    LPS = "LPS"
    LPM = "LPM"
    MLD = "MLD"
    CMH = "CMH"
    CMD = "CMD"

    @property
    def is_us(self) -> bool:
        return self in (FlowUnits.CFS, FlowUnits.GPM, FlowUnits.MGD, FlowUnits.IMGD, FlowUnits.AFD)


class HeadlossFormula(str, Enum):
    HAZEN_WILLIAMS = "H-W"
    DARCY_WEISBACH = "D-W"


class LinkStatus(str, Enum):
    OPEN = "Open"
    CLOSED = "Closed"
    CV = "CV"  # pipe fitted with a check valve


class ValveKind(str, Enum):
    PRV = "PRV"
    PSV = "PSV"
    PBV = "PBV"
    FCV = "FCV"
    TCV = "TCV"
    GPV = "GPV"


class NodeKind(int, Enum):
    JUNCTION = 0
    RESERVOIR = 1
    TANK = 2


class LinkKind(int, Enum):
    PIPE = 0
    PUMP = 1
    VALVE = 2


@dataclass
class DemandCategory:
    base: float
    pattern: str | None = None


@dataclass
class Junction:
    id: str
    elevation: float
    demands: list[DemandCategory] = field(default_factory=list)

    @property
    def base_demand(self) -> float:
        return sum(d.base for d in self.demands)

    @property
    def pattern_name(self) -> str | None:
        return self.demands[0].pattern if self.demands else None


@dataclass
class Reservoir:
    id: str
    head: float
    pattern: str | None = None


@dataclass
class Tank:
    id: str
    elevation: float
    init_level: float
    min_level: float
    max_level: float
    diameter: float
    min_volume: float = 0.0
    volume_curve: str | None = None

    @property
    def head(self) -> float:
        return self.elevation + self.init_level


@dataclass
class Pipe:
    id: str
    start: str
    end: str
    length: float
    diameter: float
    roughness: float
    minor_loss: float = 0.0
    status: LinkStatus = LinkStatus.OPEN


@dataclass
class Pump:
    id: str
    start: str
    end: str
    curve: str | None = None
    speed: float = 1.0
    pattern: str | None = None
    power: float | None = None
    status: LinkStatus = LinkStatus.OPEN


@dataclass
class Valve:
    id: str
    start: str
    end: str
    diameter: float
    kind: ValveKind
    setting: float
    minor_loss: float = 0.0
    status: LinkStatus = LinkStatus.OPEN


Link = Pipe | Pump | Valve


@dataclass
class NetworkModel:
    junctions: list[Junction] = field(default_factory=list)
    reservoirs: list[Reservoir] = field(default_factory=list)
    tanks: list[Tank] = field(default_factory=list)
    pipes: list[Pipe] = field(default_factory=list)
    pumps: list[Pump] = field(default_factory=list)
    valves: list[Valve] = field(default_factory=list)
    patterns: dict[str, list[float]] = field(default_factory=dict)
    curves: dict[str, list[tuple[float, float]]] = field(default_factory=dict)
    flow_units: FlowUnits = FlowUnits.LPS
    headloss: HeadlossFormula = HeadlossFormula.HAZEN_WILLIAMS
    default_pattern: str | None = None
    demand_multiplier: float = 1.0
    viscosity: float = 1.0  # relative to water at 20 C
    extra_options: list[str] = field(default_factory=list)
    coordinates: dict[str, tuple[float, float]] = field(default_factory=dict)
    title: list[str] = field(default_factory=list)
    name: str = ""
    # bookkeeping that is not part of the network itself
    warnings: list[str] = field(default_factory=list, compare=False)
    unsupported: dict[str, list[str]] = field(default_factory=dict, compare=False)

    # -- identifiers and ordering ---------------------------------------------

    def node_ids(self) -> list[str]:
        """Canonical node order: junctions, then reservoirs, then tanks, each in file order."""
        return (
            [j.id for j in self.junctions]
            + [r.id for r in self.reservoirs]
            + [t.id for t in self.tanks]
        )

    def links(self) -> Iterator[Link]:
        yield from self.pipes
        yield from self.pumps
        yield from self.valves

    def link_ids(self) -> list[str]:
        return [link.id for link in self.links()]

    def node_index(self) -> dict[str, int]:
        return {nid: i for i, nid in enumerate(self.node_ids())}

    @property
    def n_nodes(self) -> int:
        return len(self.junctions) + len(self.reservoirs) + len(self.tanks)

    @property
    def n_links(self) -> int:
        return len(self.pipes) + len(self.pumps) + len(self.valves)

    def node_elevations(self) -> np.ndarray:
        """Elevation per node in canonical order; reservoirs use their base head."""
        return np.array(
            [j.elevation for j in self.junctions]
            + [r.head for r in self.reservoirs]
            + [t.elevation for t in self.tanks],
            dtype=np.float64,
        )

    def fixed_heads(self) -> np.ndarray:
        """Base head of every fixed-head node (reservoirs, then tanks at initial level)."""
        return np.array([r.head for r in self.reservoirs] + [t.head for t in self.tanks], dtype=np.float64)

    def pattern_for(self, name: str | None) -> list[float] | None:
        key = name if name is not None else self.default_pattern
        if key is None:
            key = "1"
        return self.patterns.get(key)

    def base_demands(self) -> np.ndarray:
        """Total base demand per junction (all categories, demand multiplier applied)."""
        return np.array([j.base_demand for j in self.junctions], dtype=np.float64) * self.demand_multiplier

    def pattern_demands(self, step: int) -> np.ndarray:
        """Per-junction demand at pattern step ``step`` (wraps around each pattern's length)."""
        out = np.zeros(len(self.junctions))
        for i, j in enumerate(self.junctions):
            total = 0.0
            for cat in j.demands:
                pat = self.pattern_for(cat.pattern)
                mult = pat[step % len(pat)] if pat else 1.0
                total += cat.base * mult
            out[i] = total
        return out * self.demand_multiplier


# --- validation --------------------------------------------------------------


@dataclass
class Violation:
    code: str
    message: str
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"code": self.code, "message": self.message, **({"details": self.details} if self.details else {})}


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)

    def __bool__(self) -> bool:
        return bool(self.violations)

    def __len__(self) -> int:
        return len(self.violations)

    @property
    def ok(self) -> bool:
        return not self.violations

    def codes(self) -> list[str]:
        return [v.code for v in self.violations]

    def add(self, code: str, message: str, **details) -> None:
        self.violations.append(Violation(code, message, details))

    def to_jsonl(self) -> str:
        return "".join(json.dumps(v.to_dict(), sort_keys=True) + "\n" for v in self.violations)

    def to_json(self) -> dict:
        return {"ok": self.ok, "violations": [v.to_dict() for v in self.violations]}


def _open_links(model: NetworkModel) -> list[Link]:
    return [link for link in model.links() if link.status != LinkStatus.CLOSED]


def validate(model: NetworkModel) -> ValidationReport:
    """Check the model invariants; every problem becomes a report entry."""
    report = ValidationReport()

    seen: set[str] = set()
    for nid in model.node_ids():
        if nid in seen:
            report.add("DuplicateId", f"node id {nid!r} used more than once", id=nid, kind="node")
        seen.add(nid)
    seen_links: set[str] = set()
    for lid in model.link_ids():
        if lid in seen_links:
            report.add("DuplicateId", f"link id {lid!r} used more than once", id=lid, kind="link")
        seen_links.add(lid)

    nodes = set(model.node_ids())
    dangling = False
    for link in model.links():
        for end in (link.start, link.end):
            if end not in nodes:
                report.add("UnknownNodeReference", f"link {link.id!r} references missing node {end!r}", link=link.id, node=end)
                dangling = True

    if not model.reservoirs and not model.tanks:
        report.add("NoFixedHeadNode", "network has no reservoir or tank")

    for j in model.junctions:
        if not math.isfinite(j.elevation):
            report.add("NonFiniteElevation", f"junction {j.id!r}", node=j.id)
        for cat in j.demands:
            if cat.base < 0:
                report.add("NegativeDemand", f"junction {j.id!r} has base demand {cat.base}", node=j.id, demand=cat.base)
    for r in model.reservoirs:
        if not math.isfinite(r.head):
            report.add("NonFiniteHead", f"reservoir {r.id!r}", node=r.id)
    for t in model.tanks:
        if not (t.min_level <= t.init_level <= t.max_level):
            report.add("TankLevelOrder", f"tank {t.id!r} needs min <= init <= max", node=t.id)
    for p in model.pipes:
        for attr in ("length", "diameter", "roughness"):
            value = getattr(p, attr)
            if not value > 0:
                report.add(f"NonPositive{attr.capitalize()}", f"pipe {p.id!r} has {attr} {value}", link=p.id)
    for pump in model.pumps:
        if pump.curve is None:
            report.add("MissingPumpCurve", f"pump {pump.id!r} has no head curve (constant-power pumps are unsupported)", link=pump.id)
        elif pump.curve not in model.curves:
            report.add("UnknownCurve", f"pump {pump.id!r} references missing curve {pump.curve!r}", link=pump.id, curve=pump.curve)
        if not pump.speed > 0:
            report.add("NonPositiveSpeed", f"pump {pump.id!r} has speed {pump.speed}", link=pump.id)
    for v in model.valves:
        if not v.diameter > 0:
            report.add("NonPositiveDiameter", f"valve {v.id!r} has diameter {v.diameter}", link=v.id)

    if not dangling and model.n_nodes:
        sizes = component_sizes(model)
        if len(sizes) > 1:
            report.add(
                "Disconnected",
                f"open-link graph has {len(sizes)} components",
                component_sizes=sizes,
            )
    return report


def component_sizes(model: NetworkModel) -> list[int]:
    """Sizes of the connected components after removing closed links, largest first."""
    index = model.node_index()
    links = _open_links(model)
    rows = [index[link.start] for link in links]
    cols = [index[link.end] for link in links]
    n = model.n_nodes
    adj = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    _, labels = connected_components(adj, directed=False)
    return sorted(np.bincount(labels).tolist(), reverse=True)


# --- graph view --------------------------------------------------------------

EDGE_ATTR_CHANNELS = ("length", "diameter", "roughness", "is_pipe", "is_pump", "is_valve")


@dataclass(frozen=True)
class GraphTopology:
    """Directed-arc view of a network: each link contributes both orientations.

    Arc ``2k`` runs start->end of link ``k`` and arc ``2k+1`` the reverse, with
    links ordered pipes, pumps, valves.
    """

    node_ids: tuple[str, ...]
    node_kind: np.ndarray  # (N,) int64, NodeKind values
    edge_index: np.ndarray  # (2, 2L) int64, rows = (source, target)
    edge_attr: np.ndarray  # (2L, 6) float64, see EDGE_ATTR_CHANNELS
    node_static: np.ndarray  # (N, 1) float64, elevation

    @property
    def n_nodes(self) -> int:
        return len(self.node_ids)

    @property
    def n_arcs(self) -> int:
        return self.edge_index.shape[1]

    @property
    def fixed_head(self) -> np.ndarray:
        return self.node_kind != NodeKind.JUNCTION

    @property
    def junction_mask(self) -> np.ndarray:
        return self.node_kind == NodeKind.JUNCTION

    def same_as(self, other: GraphTopology) -> bool:
        return (
            self.node_ids == other.node_ids
            and np.array_equal(self.node_kind, other.node_kind)
            and np.array_equal(self.edge_index, other.edge_index)
            and np.array_equal(self.edge_attr, other.edge_attr)
            and np.array_equal(self.node_static, other.node_static)
        )


def to_graph(model: NetworkModel) -> GraphTopology:
    report = validate(model)
    if report:
        raise InvalidModel(report)
    index = model.node_index()
    kinds = (
        [NodeKind.JUNCTION] * len(model.junctions)
        + [NodeKind.RESERVOIR] * len(model.reservoirs)
        + [NodeKind.TANK] * len(model.tanks)
    )
    src, dst, attrs = [], [], []
    for link in model.links():
        if isinstance(link, Pipe):
            row = [link.length, link.diameter, link.roughness, 1.0, 0.0, 0.0]
        elif isinstance(link, Pump):
            row = [0.0, 0.0, 0.0, 0.0, 1.0, 0.0]
        else:
            row = [0.0, 0.0, 0.0, 0.0, 0.0, 1.0]
        u, v = index[link.start], index[link.end]
        src += [u, v]
        dst += [v, u]
        attrs += [row, row]
    return GraphTopology(
        node_ids=tuple(model.node_ids()),
        node_kind=np.array([int(k) for k in kinds], dtype=np.int64),
        edge_index=np.array([src, dst], dtype=np.int64).reshape(2, -1),
        edge_attr=np.array(attrs, dtype=np.float64).reshape(-1, len(EDGE_ATTR_CHANNELS)),
        node_static=model.node_elevations().reshape(-1, 1),
    )


# --- structural comparison ---------------------------------------------------


def _close(a, b, rtol: float) -> bool:
    if isinstance(a, float) or isinstance(b, float):
        if isinstance(a, (int, float)) and isinstance(b, (int, float)):
            return math.isclose(float(a), float(b), rel_tol=rtol, abs_tol=0.0)
        return False
    if isinstance(a, Enum) or isinstance(b, Enum):
        return a == b
    if dataclasses.is_dataclass(a) and dataclasses.is_dataclass(b):
        if type(a) is not type(b):
            return False
        return all(
            _close(getattr(a, f.name), getattr(b, f.name), rtol)
            for f in dataclasses.fields(a)
            if f.compare
        )
    if isinstance(a, dict) and isinstance(b, dict):
        return a.keys() == b.keys() and all(_close(a[k], b[k], rtol) for k in a)
    if isinstance(a, (list, tuple)) and isinstance(b, (list, tuple)):
        return len(a) == len(b) and all(_close(x, y, rtol) for x, y in zip(a, b))
    return a == b


def structurally_equal(a: NetworkModel, b: NetworkModel, rtol: float = 1e-9) -> bool:
    """Field-wise equality with a relative tolerance on floats.

    Warnings and the raw text of skipped sections are bookkeeping, not
    structure, and are ignored.
    """
    return _close(a, b, rtol)
