"""Demand-driven steady-state hydraulics by Newton iteration on nodal heads.

The iteration is the global gradient scheme: each step linearises every
open link's headloss law around its current flow, eliminates the flows, and
solves a symmetric positive-definite system for the junction heads. Links
whose headloss slope collapses near zero flow use a slope floor taken at
``q_min``; once such a link settles below ``q_min`` its flow is read off the
exact inverse headloss law instead of the floored linearisation.

Check valves and pumps are switched closed when they would carry reverse flow
and reopened when the heads allow forward flow again, repeating the Newton
solve until the statuses stop changing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import curve_fit
from scipy.sparse import coo_matrix, csr_matrix
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import splu

from .errors import BadPumpCurve, ClosedLink, InvalidModel, NonPositiveGeometry, NotConverged, SingularSystem
from .network import HeadlossFormula, LinkStatus, NetworkModel, Pipe, Pump, Valve, validate

G = 9.80665
HW_COEFF = 10.667
HW_EXP = 1.852
WATER_VISCOSITY = 1.0e-6  # m2/s at about 20 C
RE_LAMINAR = 2000.0
RE_TURBULENT = 4000.0


@dataclass
class SolverConfig:
    tol_flow: float = 1e-6  # m3/s
    tol_head: float = 1e-4  # m
    max_iterations: int = 200
    q_min: float = 1e-8  # m3/s
    initial_flow: float = 1e-3  # m3/s
    valve_resistance: float = 1e-3  # m per m3/s, linear loss of a fully open valve
    max_status_checks: int = 10
    # absolute slope floor (m per m3/s); keeps 1/slope small enough that rounding
    # in metre-scale heads cannot leak into the flow update
    min_slope: float = 1e-6

    def __post_init__(self):
        for name in ("tol_flow", "tol_head", "q_min", "initial_flow", "valve_resistance", "min_slope"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class ControlSettings:
    """Boundary conditions for one solve, aligned with the model's element order."""

    demands: np.ndarray  # per junction, m3/s
    reservoir_heads: np.ndarray  # per reservoir, m
    pump_speeds: np.ndarray  # per pump, relative
    link_status: dict[str, LinkStatus] = field(default_factory=dict)

    @classmethod
    def base(cls, model: NetworkModel) -> ControlSettings:
        return cls(
            demands=model.base_demands(),
            reservoir_heads=np.array([r.head for r in model.reservoirs], dtype=np.float64),
            pump_speeds=np.array([p.speed for p in model.pumps], dtype=np.float64),
        )

    def vector(self) -> np.ndarray:
        return np.concatenate([self.demands, self.reservoir_heads, self.pump_speeds]).astype(np.float64)

    def scaled(self, demand_scale: float) -> ControlSettings:
        return replace(self, demands=self.demands * demand_scale)

    def to_dict(self) -> dict:
        return {
            "demands": self.demands.tolist(),
            "reservoir_heads": self.reservoir_heads.tolist(),
            "pump_speeds": self.pump_speeds.tolist(),
            "link_status": {k: v.value for k, v in self.link_status.items()},
        }

    @classmethod
    def from_dict(cls, model: NetworkModel, data: dict) -> ControlSettings:
        base = cls.base(model)
        out = cls(
            demands=np.asarray(data.get("demands", base.demands), dtype=np.float64),
            reservoir_heads=np.asarray(data.get("reservoir_heads", base.reservoir_heads), dtype=np.float64),
            pump_speeds=np.asarray(data.get("pump_speeds", base.pump_speeds), dtype=np.float64),
            link_status={k: LinkStatus(v) for k, v in data.get("link_status", {}).items()},
        )
        if out.demands.shape != base.demands.shape:
            raise ValueError(f"expected {base.demands.size} junction demands, got {out.demands.size}")
        if out.reservoir_heads.shape != base.reservoir_heads.shape:
            raise ValueError(f"expected {base.reservoir_heads.size} reservoir heads")
        if out.pump_speeds.shape != base.pump_speeds.shape:
            raise ValueError(f"expected {base.pump_speeds.size} pump speeds")
        return out


@dataclass
class HydraulicState:
    node_ids: list[str]
    link_ids: list[str]
    head: np.ndarray
    pressure: np.ndarray
    flow: np.ndarray
    link_open: np.ndarray  # effective status after check-valve and pump switching
    demand: np.ndarray  # junction demands the state was solved for
    pump_speeds: np.ndarray
    converged: bool
    iterations: int
    max_nodal_residual: float
    max_energy_residual: float

    def to_json(self) -> dict:
        return {
            "converged": self.converged,
            "iterations": self.iterations,
            "max_nodal_residual": self.max_nodal_residual,
            "max_energy_residual": self.max_energy_residual,
            "nodes": {
                nid: {"head": float(h), "pressure": float(p)}
                for nid, h, p in zip(self.node_ids, self.head, self.pressure)
            },
            "links": {
                lid: {"flow": float(q), "open": bool(o)}
                for lid, q, o in zip(self.link_ids, self.flow, self.link_open)
            },
        }


# --- headloss laws -------------------------------------------------------------


def headloss_coefficient(pipe: Pipe, formula: HeadlossFormula) -> float:
    """Resistance ``r`` of a pipe.

    Hazen-Williams: ``h = r |q|^0.852 q`` with ``r = 10.667 C^-1.852 D^-4.871 L``.
    Darcy-Weisbach: the geometric factor ``8 L / (pi^2 g D^5)``, to be multiplied
    by the friction factor.
    """
    if not (pipe.length > 0 and pipe.diameter > 0 and pipe.roughness > 0):
        raise NonPositiveGeometry(f"pipe {pipe.id!r} needs positive length, diameter and roughness")
    if formula == HeadlossFormula.HAZEN_WILLIAMS:
        return HW_COEFF * pipe.roughness**-HW_EXP * pipe.diameter**-4.871 * pipe.length
    return 8.0 * pipe.length / (math.pi**2 * G * pipe.diameter**5)


def minor_loss_coefficient(k: float, diameter: float) -> float:
    return k * 8.0 / (math.pi**2 * G * diameter**4)


def friction_factor(reynolds: np.ndarray, rel_roughness: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Darcy friction factor and its derivative with respect to the Reynolds number.

    Laminar ``64/Re`` below 2000, Swamee-Jain above 4000, linear blend between.
    ``reynolds`` must be positive.
    """
    re = np.asarray(reynolds, dtype=np.float64)
    eps = np.broadcast_to(np.asarray(rel_roughness, dtype=np.float64), re.shape)

    def swamee_jain(r):
        a = eps / 3.7 + 5.74 * r**-0.9
        lg = np.log10(a)
        f = 0.25 / lg**2
        da = -0.9 * 5.74 * r**-1.9
        df = -0.5 / lg**3 * da / (a * np.log(10.0))
        return f, df

    f_lam = 64.0 / re
    df_lam = -64.0 / re**2
    f_tur, df_tur = swamee_jain(np.maximum(re, 1.0))
    t = np.clip((re - RE_LAMINAR) / (RE_TURBULENT - RE_LAMINAR), 0.0, 1.0)
    dt = np.where((re > RE_LAMINAR) & (re < RE_TURBULENT), 1.0 / (RE_TURBULENT - RE_LAMINAR), 0.0)
    f = (1 - t) * f_lam + t * f_tur
    df = (1 - t) * df_lam + t * df_tur + dt * (f_tur - f_lam)
    return f, df


@dataclass(frozen=True)
class PumpCurve:
    """Head gain ``h0 - c q^m`` at nominal speed."""

    h0: float
    c: float
    m: float

    def gain(self, q: float, speed: float = 1.0) -> float:
        return speed**2 * self.h0 - self.c * speed ** (2 - self.m) * abs(q) ** (self.m - 1) * q


def fit_pump_curve(points: list[tuple[float, float]]) -> PumpCurve:
    """Fit the power-law pump curve through the tabulated (flow, head) points.

    One point uses the rated-point convention (shutoff 4/3 of rated head,
    exponent 2). With a zero-flow point, the shutoff head is that point and the
    rest are fitted by log-linear regression (exact for three points). Other
    curves are fitted by nonlinear least squares.
    """
    if not points:
        raise BadPumpCurve("empty pump curve")
    pts = sorted(points)
    qs = np.array([p[0] for p in pts], dtype=np.float64)
    hs = np.array([p[1] for p in pts], dtype=np.float64)
    if len(pts) == 1:
        q1, h1 = pts[0]
        if not (q1 > 0 and h1 > 0):
            raise BadPumpCurve("single-point curve needs positive flow and head")
        h0 = 4.0 / 3.0 * h1
        return PumpCurve(h0, (h0 - h1) / q1**2, 2.0)
    if np.any(np.diff(qs) <= 0) or np.any(np.diff(hs) >= 0):
        raise BadPumpCurve("pump curve must have increasing flows and strictly decreasing heads")
    if qs[0] == 0.0:
        h0 = hs[0]
        lq, ldh = np.log(qs[1:]), np.log(h0 - hs[1:])
        if len(lq) == 1:
            m = 2.0
            c = float(np.exp(ldh[0] - m * lq[0]))
        else:
            m, logc = np.polyfit(lq, ldh, 1)
            c = float(np.exp(logc))
        curve = PumpCurve(float(h0), c, float(m))
    else:
        try:
            guess = (hs[0] * 4 / 3, (hs[0] / 3) / qs[0] ** 2, 2.0)
            (h0, c, m), _ = curve_fit(
                lambda q, h0, c, m: h0 - c * q**m, qs, hs, p0=guess,
                bounds=([0, 0, 1.0], [np.inf, np.inf, 4.0]), maxfev=10000,
            )
        except (RuntimeError, ValueError) as exc:
            raise BadPumpCurve(f"cannot fit pump curve: {exc}") from None
        curve = PumpCurve(float(h0), float(c), float(m))
    if not (curve.h0 > 0 and curve.c > 0 and curve.m > 0) or not all(map(math.isfinite, (curve.h0, curve.c, curve.m))):
        raise BadPumpCurve(f"degenerate pump curve fit {curve}")
    return curve


def link_headloss(
    model: NetworkModel,
    link: Pipe | Pump | Valve,
    q: float,
    pump_speed: float | None = None,
    cfg: SolverConfig | None = None,
) -> tuple[float, float]:
    """Headloss ``H_start - H_end`` across an open link carrying flow ``q``, and its slope.

    Pumps report the negative of their head gain. The slope is floored at its
    value for ``|q| = q_min`` so Newton never sees a zero derivative.
    """
    cfg = cfg or SolverConfig()
    if link.status == LinkStatus.CLOSED:
        raise ClosedLink(link.id)

    def law(x: float) -> tuple[float, float]:
        ax = abs(x)
        if isinstance(link, Pipe):
            r = headloss_coefficient(link, model.headloss)
            km = minor_loss_coefficient(link.minor_loss, link.diameter)
            if model.headloss == HeadlossFormula.HAZEN_WILLIAMS:
                h = r * ax ** (HW_EXP - 1) * x + km * ax * x
                dh = HW_EXP * r * ax ** (HW_EXP - 1) + 2 * km * ax
                return h, dh
            nu = WATER_VISCOSITY * model.viscosity
            lam = 16.0 * math.pi * link.diameter * nu  # 64/Re * q|q| == lam * q
            if ax == 0.0:
                return 0.0, r * lam
            re = 4.0 * ax / (math.pi * link.diameter * nu)
            f, df_dre = friction_factor(np.array([re]), np.array([link.roughness / link.diameter]))
            f, df_dre = float(f[0]), float(df_dre[0])
            h = r * f * ax * x + km * ax * x
            dh = r * (2 * f * ax + df_dre * (re / ax) * ax * ax) + 2 * km * ax
            return h, dh
        if isinstance(link, Pump):
            curve = fit_pump_curve(model.curves[link.curve])
            w = link.speed if pump_speed is None else pump_speed
            h = -(w**2) * curve.h0 + curve.c * w ** (2 - curve.m) * ax ** (curve.m - 1) * x
            dh = curve.c * curve.m * w ** (2 - curve.m) * ax ** (curve.m - 1)
            return h, dh
        km = minor_loss_coefficient(link.minor_loss, link.diameter)
        return km * ax * x + cfg.valve_resistance * x, 2 * km * ax + cfg.valve_resistance

    h, dh = law(q)
    _, dh_floor = law(cfg.q_min)
    return h, max(dh, dh_floor)


# --- compiled network --------------------------------------------------------

_PIPE_HW, _PIPE_DW, _PUMP, _VALVE = 0, 1, 2, 3


class HydraulicSolver:
    """A network prepared for repeated solves under different controls."""

    def __init__(self, model: NetworkModel, cfg: SolverConfig | None = None):
        report = validate(model)
        if report:
            raise InvalidModel(report)
        self.model = model
        self.cfg = cfg or SolverConfig()
        index = model.node_index()
        self.node_ids = model.node_ids()
        self.link_ids = model.link_ids()
        self.n_junctions = len(model.junctions)
        self.n_nodes = model.n_nodes
        self.elevation = model.node_elevations()
        links = list(model.links())
        n = len(links)
        self.start = np.array([index[l.start] for l in links], dtype=np.int64)
        self.end = np.array([index[l.end] for l in links], dtype=np.int64)
        self.kind = np.empty(n, dtype=np.int64)
        self.r = np.zeros(n)  # friction resistance or geometric factor
        self.km = np.zeros(n)  # minor-loss coefficient (h = km q|q|)
        self.diameter = np.ones(n)
        self.rel_rough = np.zeros(n)
        self.pump_h0 = np.zeros(n)
        self.pump_c = np.zeros(n)
        self.pump_m = np.full(n, 2.0)
        self.pump_slot = np.full(n, -1, dtype=np.int64)
        self.is_cv = np.zeros(n, dtype=bool)
        self.base_open = np.ones(n, dtype=bool)
        self.nu = WATER_VISCOSITY * model.viscosity
        curves: dict[str, PumpCurve] = {}
        pump_no = 0
        for k, link in enumerate(links):
            self.base_open[k] = link.status != LinkStatus.CLOSED
            if isinstance(link, Pipe):
                dw = model.headloss == HeadlossFormula.DARCY_WEISBACH
                self.kind[k] = _PIPE_DW if dw else _PIPE_HW
                self.r[k] = headloss_coefficient(link, model.headloss)
                self.km[k] = minor_loss_coefficient(link.minor_loss, link.diameter)
                self.diameter[k] = link.diameter
                self.rel_rough[k] = link.roughness / link.diameter
                self.is_cv[k] = link.status == LinkStatus.CV
            elif isinstance(link, Pump):
                self.kind[k] = _PUMP
                if link.curve not in curves:
                    curves[link.curve] = fit_pump_curve(model.curves[link.curve])
                curve = curves[link.curve]
                self.pump_h0[k], self.pump_c[k], self.pump_m[k] = curve.h0, curve.c, curve.m
                self.pump_slot[k] = pump_no
                pump_no += 1
            else:
                self.kind[k] = _VALVE
                self.km[k] = minor_loss_coefficient(link.minor_loss, link.diameter)
                self.diameter[k] = link.diameter
        self.is_pump = self.kind == _PUMP
        self.pump_links = np.flatnonzero(self.is_pump)
        self.n_links = n
        self.junction_of = {lid: k for k, lid in enumerate(self.link_ids)}

    # -- vectorised headloss --------------------------------------------------

    def _law(self, q: np.ndarray, speed: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Headloss and its slope for every link (pumps as negative gain)."""
        aq = np.abs(q)
        h = self.km * aq * q
        dh = 2.0 * self.km * aq
        hw = self.kind == _PIPE_HW
        if hw.any():
            t = self.r[hw] * aq[hw] ** (HW_EXP - 1)
            h[hw] += t * q[hw]
            dh[hw] += HW_EXP * t
        dw = self.kind == _PIPE_DW
        if dw.any():
            r, d, qa, qs = self.r[dw], self.diameter[dw], aq[dw], q[dw]
            lam = 16.0 * np.pi * d * self.nu
            re = 4.0 * qa / (np.pi * d * self.nu)
            safe = re > 0
            f, df = friction_factor(np.where(safe, re, 1.0), self.rel_rough[dw])
            h_dw = np.where(safe, r * f * qa * qs, 0.0)
            dh_dw = np.where(safe, r * (2 * f * qa + df * re * qa), r * lam)
            h[dw] += h_dw
            dh[dw] += dh_dw
        pm = self.is_pump
        if pm.any():
            w, c, m = speed, self.pump_c[pm], self.pump_m[pm]
            t = c * w ** (2 - m) * aq[pm] ** (m - 1)
            h[pm] += -(w**2) * self.pump_h0[pm] + t * q[pm]
            dh[pm] += m * t
        vv = self.kind == _VALVE
        h[vv] += self.cfg.valve_resistance * q[vv]
        dh[vv] += self.cfg.valve_resistance
        return h, dh

    def _slope_floor(self, speed: np.ndarray) -> np.ndarray:
        _, dh = self._law(np.full(self.n_links, self.cfg.q_min), speed)
        return np.maximum(dh, self.cfg.min_slope)

    def _invert(self, dh_target: np.ndarray, idx: np.ndarray, speed: np.ndarray) -> np.ndarray:
        """Flow through links ``idx`` that produces headloss ``dh_target`` (small-flow regime)."""
        out = np.empty(len(idx))
        for n, k in enumerate(idx):
            target = dh_target[n]
            kind = self.kind[k]
            if kind == _PIPE_HW and self.km[k] == 0.0:
                out[n] = np.sign(target) * (abs(target) / self.r[k]) ** (1.0 / HW_EXP)
            elif kind == _PUMP:
                w = speed[self.pump_slot[k]]
                s = target + w**2 * self.pump_h0[k]
                coef = self.pump_c[k] * w ** (2 - self.pump_m[k])
                out[n] = np.sign(s) * (abs(s) / coef) ** (1.0 / self.pump_m[k])
            elif kind == _VALVE:
                a, b = self.km[k], self.cfg.valve_resistance
                x = abs(target)
                root = x / b if a == 0.0 else (-b + math.sqrt(b * b + 4 * a * x)) / (2 * a)
                out[n] = math.copysign(root, target)
            else:
                out[n] = self._bisect(k, target, speed)
        return out

    def _bisect(self, k: int, target: float, speed: np.ndarray) -> float:
        lo, hi = -1.0, 1.0
        one = np.zeros(self.n_links)

        def h_of(x):
            one[k] = x
            return self._law(one, speed)[0][k]

        while h_of(hi) < target:
            hi *= 2.0
        while h_of(lo) > target:
            lo *= 2.0
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if h_of(mid) < target:
                lo = mid
            else:
                hi = mid
            if hi - lo <= 1e-15 * max(1.0, abs(mid)):
                break
        return 0.5 * (lo + hi)

    # -- solve ----------------------------------------------------------------

    def solve(self, controls: ControlSettings | None = None) -> HydraulicState:
        controls = controls if controls is not None else ControlSettings.base(self.model)
        cfg = self.cfg
        d = np.asarray(controls.demands, dtype=np.float64)
        speed = np.asarray(controls.pump_speeds, dtype=np.float64)
        if d.shape != (self.n_junctions,):
            raise ValueError("demand vector does not match the junction count")
        if np.any(d < 0):
            raise ValueError("junction demands must be non-negative")
        if np.any(speed <= 0):
            raise ValueError("pump speeds must be positive")

        fixed = np.concatenate([np.asarray(controls.reservoir_heads, dtype=np.float64), self.model.fixed_heads()[len(self.model.reservoirs):]])
        user_open = self.base_open.copy()
        for lid, status in controls.link_status.items():
            user_open[self.junction_of[lid]] = status != LinkStatus.CLOSED
        switched_closed = np.zeros(self.n_links, dtype=bool)

        q = np.full(self.n_links, cfg.initial_flow)
        heads = np.concatenate([np.zeros(self.n_junctions), fixed])
        floor = self._slope_floor(speed)
        total_iters = 0
        state = None
        for _check in range(cfg.max_status_checks + 1):
            active = user_open & ~switched_closed
            q = np.where(active, np.where(q == 0.0, cfg.initial_flow, q), 0.0)
            heads, q, iters, mass, energy, ok = self._newton(active, q, heads, d, fixed, speed, floor)
            total_iters += iters
            state = self._state(heads, q, active, d, speed, ok, total_iters, mass, energy)
            if not ok:
                raise NotConverged(state)
            changed = self._switch(active, user_open, switched_closed, q, heads, speed)
            if not changed:
                return state
        state.converged = False
        raise NotConverged(state)

    def _switch(self, active, user_open, switched_closed, q, heads, speed) -> bool:
        """Update check-valve and pump statuses; True when anything changed."""
        tol_q, tol_h = self.cfg.tol_flow, self.cfg.tol_head
        changed = False
        dh = heads[self.start] - heads[self.end]
        for k in np.flatnonzero(user_open & (self.is_cv | self.is_pump)):
            if active[k] and q[k] < -tol_q:
                switched_closed[k] = True
                changed = True
            elif not active[k]:
                if self.is_cv[k]:
                    reopen = dh[k] > tol_h
                else:
                    w = speed[self.pump_slot[k]]
                    reopen = -dh[k] < w**2 * self.pump_h0[k] - tol_h
                if reopen:
                    switched_closed[k] = False
                    changed = True
        return changed

    def _newton(self, active, q, heads, d, fixed, speed, floor):
        cfg = self.cfg
        nj = self.n_junctions
        idx = np.flatnonzero(active)
        s, e = self.start[idx], self.end[idx]
        self._check_reachable(idx)
        # incidence restricted to junctions: net inflow at node = sum(B q)
        cols = np.concatenate([idx, idx])
        rows = np.concatenate([s, e])
        vals = np.concatenate([-np.ones(len(idx)), np.ones(len(idx))])
        keep = rows < nj
        b_j = csr_matrix((vals[keep], (rows[keep], cols[keep])), shape=(nj, self.n_links))
        ss, ee = s < nj, e < nj
        heads = heads.copy()
        heads[nj:] = fixed
        mass = energy = np.inf
        for it in range(1, cfg.max_iterations + 1):
            h, g = self._law(q, speed)
            g = np.maximum(g, floor)
            y = np.zeros(self.n_links)
            y[idx] = q[idx] - h[idx] / g[idx]
            c = 1.0 / g[idx]
            # fixed-head contribution of each link, pushed to its junction ends
            hf_s = np.where(ss, 0.0, heads[s])
            hf_e = np.where(ee, 0.0, heads[e])
            flux = c * (hf_e - hf_s)  # c * (B_F^T H_F) per link
            rhs = b_j @ y - d
            np.add.at(rhs, s[ss], flux[ss])
            np.add.at(rhs, e[ee], -flux[ee])
            both = ss & ee
            a_rows = np.concatenate([s[ss], e[ee], s[both], e[both]])
            a_cols = np.concatenate([s[ss], e[ee], e[both], s[both]])
            a_vals = np.concatenate([c[ss], c[ee], -c[both], -c[both]])
            a = coo_matrix((a_vals, (a_rows, a_cols)), shape=(nj, nj)).tocsc()
            try:
                lu = splu(a, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0, options={"SymmetricMode": True})
                hj = lu.solve(rhs)
            except RuntimeError as exc:
                raise SingularSystem(str(exc)) from None
            if not np.all(np.isfinite(hj)):
                raise SingularSystem("non-finite heads from the nodal solve")
            heads[:nj] = hj
            dH = heads[s] - heads[e]
            q_new = q.copy()
            q_new[idx] = q[idx] - (h[idx] - dH) / g[idx]
            small = np.abs(q_new[idx]) < cfg.q_min
            if small.any():
                links_small = idx[small]
                exact = self._invert(dH[small], links_small, speed)
                take = np.abs(exact) < cfg.q_min
                q_new[links_small[take]] = exact[take]
            step = float(np.max(np.abs(q_new - q))) if len(idx) else 0.0
            q = q_new
            h, _ = self._law(q, speed)
            mass = float(np.max(np.abs(b_j @ q - d))) if nj else 0.0
            energy = float(np.max(np.abs(h[idx] - (heads[s] - heads[e])))) if len(idx) else 0.0
            # residuals alone tolerate slow loop circulations on near-flat links,
            # so the flow step must also have settled
            if mass <= cfg.tol_flow and energy <= cfg.tol_head and step <= cfg.tol_flow:
                return heads, q, it, mass, energy, True
        return heads, q, cfg.max_iterations, mass, energy, False

    def _check_reachable(self, idx: np.ndarray) -> None:
        n = self.n_nodes
        adj = coo_matrix((np.ones(len(idx)), (self.start[idx], self.end[idx])), shape=(n, n))
        ncomp, labels = connected_components(adj, directed=False)
        fed = np.zeros(ncomp, dtype=bool)
        fed[labels[self.n_junctions:]] = True
        stranded = np.flatnonzero(~fed[labels[: self.n_junctions]])
        if stranded.size:
            names = [self.node_ids[i] for i in stranded[:5]]
            raise SingularSystem(f"{stranded.size} junction(s) cut off from every fixed-head node, e.g. {names}")

    def _state(self, heads, q, active, d, speed, ok, iters, mass, energy) -> HydraulicState:
        return HydraulicState(
            node_ids=self.node_ids,
            link_ids=self.link_ids,
            head=heads.copy(),
            pressure=heads - self.elevation,
            flow=np.where(active, q, 0.0),
            link_open=active.copy(),
            demand=d.copy(),
            pump_speeds=speed.copy(),
            converged=ok,
            iterations=iters,
            max_nodal_residual=mass,
            max_energy_residual=energy,
        )


def solve_steady_state(
    model: NetworkModel,
    controls: ControlSettings | None = None,
    cfg: SolverConfig | None = None,
) -> HydraulicState:
    return HydraulicSolver(model, cfg).solve(controls)


# --- independent balance check -------------------------------------------------


@dataclass
class BalanceReport:
    mass_residual: dict[str, float]  # per junction, m3/s
    energy_residual: dict[str, float]  # per open link, m
    max_mass_residual: float
    max_energy_residual: float

    def ok(self, cfg: SolverConfig | None = None) -> bool:
        cfg = cfg or SolverConfig()
        return self.max_mass_residual <= cfg.tol_flow and self.max_energy_residual <= cfg.tol_head


def check_balance(model: NetworkModel, state: HydraulicState, cfg: SolverConfig | None = None) -> BalanceReport:
    """Recompute mass and energy residuals of ``state`` link by link.

    Uses the scalar :func:`link_headloss` rather than the solver's vectorised
    kernels. Residuals are signed: ``inflow - outflow - demand`` per junction
    and ``(H_start - H_end) - headloss(q)`` per open link.
    """
    cfg = cfg or SolverConfig()
    heads = dict(zip(state.node_ids, state.head))
    inflow = {j.id: 0.0 for j in model.junctions}
    energy: dict[str, float] = {}
    pump_no = 0
    for k, link in enumerate(model.links()):
        q = float(state.flow[k])
        if link.start in inflow:
            inflow[link.start] -= q
        if link.end in inflow:
            inflow[link.end] += q
        speed = None
        if isinstance(link, Pump):
            speed = float(state.pump_speeds[pump_no])
            pump_no += 1
        if state.link_open[k]:
            probe = link if link.status != LinkStatus.CLOSED else replace(link, status=LinkStatus.OPEN)
            h, _ = link_headloss(model, probe, q, pump_speed=speed, cfg=cfg)
            energy[link.id] = (heads[link.start] - heads[link.end]) - h
    mass = {j.id: inflow[j.id] - float(state.demand[i]) for i, j in enumerate(model.junctions)}
    return BalanceReport(
        mass_residual=mass,
        energy_residual=energy,
        max_mass_residual=max((abs(v) for v in mass.values()), default=0.0),
        max_energy_residual=max((abs(v) for v in energy.values()), default=0.0),
    )
