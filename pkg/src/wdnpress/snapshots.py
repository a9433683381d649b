"""Randomized and pattern-driven snapshot generation, plus a shift diagnostic.

Randomized snapshots draw every control independently per snapshot, with no
temporal structure. Realistic test sets walk a 24-step demand pattern and add
Gaussian noise to demands and reservoir heads before each solve. Both route
each snapshot through its own sub-seed keyed by (index, attempt), so the
output does not depend on how the work is scheduled across processes.
"""

from __future__ import annotations

import math
import os
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import ks_2samp

from .errors import GenerationStalled, NotConverged, SingularSystem, TopologyMismatch
from .hydraulics import ControlSettings, HydraulicSolver, HydraulicState, SolverConfig
from .network import NetworkModel, to_graph
from .store import SnapshotDataset, finalize_manifest

STALL_WINDOW = 50
MAX_ATTEMPTS = 25

# hourly demand multipliers: night trough, morning and evening peaks; rescaled to mean 1
_DIURNAL = [
    0.45, 0.38, 0.35, 0.36, 0.45, 0.70, 1.15, 1.55, 1.50, 1.30, 1.15, 1.10,
    1.12, 1.05, 0.98, 0.98, 1.05, 1.25, 1.50, 1.60, 1.40, 1.10, 0.80, 0.58,
]
DIURNAL_TEMPLATE = [v * len(_DIURNAL) / sum(_DIURNAL) for v in _DIURNAL]


@dataclass
class SamplingConfig:
    demand_range: tuple[float, float] = (0.2, 2.0)  # multipliers of base demand
    head_delta: float = 5.0  # m, reservoir head perturbation half-width
    speed_range: tuple[float, float] = (0.8, 1.2)
    independent: bool = True
    seed: int = 0

    def __post_init__(self):
        self.demand_range = tuple(float(x) for x in self.demand_range)
        self.speed_range = tuple(float(x) for x in self.speed_range)
        lo, hi = self.demand_range
        if not (0.0 <= lo <= hi):
            raise ValueError("demand range must satisfy 0 <= lo <= hi")
        if not (0.0 < self.speed_range[0] <= self.speed_range[1]):
            raise ValueError("speed range must satisfy 0 < lo <= hi")
        if self.head_delta < 0:
            raise ValueError("head_delta must be >= 0")
        if not self.independent:
            raise ValueError("only independent snapshot sampling is supported")


@dataclass
class NoiseConfig:
    sigma_demand: float = 0.05  # relative
    sigma_head: float = 0.0  # m
    seed: int = 0

    def __post_init__(self):
        if self.sigma_demand < 0 or self.sigma_head < 0:
            raise ValueError("noise levels must be >= 0")


@dataclass
class PatternConfig:
    timesteps: int = 24
    step_hours: float = 1.0
    source: str = "auto"  # auto | file | template
    multipliers: list[float] | None = field(default=None)  # explicit override for every junction

    def __post_init__(self):
        if self.timesteps < 1:
            raise ValueError("timesteps must be >= 1")
        if self.source not in ("auto", "file", "template"):
            raise ValueError(f"unknown pattern source {self.source!r}")
        if self.multipliers is not None and (not self.multipliers or min(self.multipliers) < 0):
            raise ValueError("pattern multipliers must be non-empty and >= 0")


# --- sampling ----------------------------------------------------------------


def snapshot_rng(seed: int, index: int, attempt: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index, attempt)))


def sample_controls(model: NetworkModel, cfg: SamplingConfig, rng: np.random.Generator) -> ControlSettings:
    base = ControlSettings.base(model)
    lo, hi = cfg.demand_range
    demands = base.demands * rng.uniform(lo, hi, size=base.demands.size)
    heads = base.reservoir_heads + rng.uniform(-cfg.head_delta, cfg.head_delta, size=base.reservoir_heads.size)
    speeds = rng.uniform(cfg.speed_range[0], cfg.speed_range[1], size=base.pump_speeds.size)
    return ControlSettings(demands=demands, reservoir_heads=heads, pump_speeds=speeds)


# --- worker plumbing -----------------------------------------------------------

_WORKER: dict = {}


def _init_worker(model: NetworkModel, solver_cfg: SolverConfig) -> None:
    _WORKER["solver"] = HydraulicSolver(model, solver_cfg)


def _solve_with_retries(solver: HydraulicSolver, draw, index: int) -> tuple[HydraulicState | None, ControlSettings | None, int]:
    """Draw and solve until convergence; returns (state, controls, failed attempts)."""
    for attempt in range(MAX_ATTEMPTS):
        controls = draw(index, attempt)
        try:
            return solver.solve(controls), controls, attempt
        except (NotConverged, SingularSystem):
            continue
    return None, None, MAX_ATTEMPTS


def _random_draw(model: NetworkModel, cfg: SamplingConfig):
    def draw(index: int, attempt: int) -> ControlSettings:
        return sample_controls(model, cfg, snapshot_rng(cfg.seed, index, attempt))

    return draw


def _realistic_draw(model: NetworkModel, pattern: np.ndarray, noise: NoiseConfig):
    base = ControlSettings.base(model)

    def draw(index: int, attempt: int) -> ControlSettings:
        rng = snapshot_rng(noise.seed, index, attempt)
        eps = rng.standard_normal(pattern.shape[1]) * noise.sigma_demand
        demands = pattern[index] * np.maximum(1.0 + eps, 0.0)
        heads = base.reservoir_heads + rng.standard_normal(base.reservoir_heads.size) * noise.sigma_head
        return ControlSettings(demands=demands, reservoir_heads=heads, pump_speeds=base.pump_speeds.copy())

    return draw


def _run_chunk(args) -> list[tuple[int, np.ndarray, np.ndarray, np.ndarray, np.ndarray, int]]:
    kind, payload, indices = args
    solver: HydraulicSolver = _WORKER["solver"]
    draw = _random_draw(solver.model, payload) if kind == "random" else _realistic_draw(solver.model, *payload)
    out = []
    nj = solver.n_junctions
    for i in indices:
        state, controls, failed = _solve_with_retries(solver, draw, i)
        if state is None:
            out.append((i, None, None, None, None, failed))
            continue
        demand = np.zeros(solver.n_nodes)
        demand[:nj] = state.demand
        out.append((i, state.pressure, state.head, demand, controls.vector(), failed))
    return out


def _generate(model: NetworkModel, kind: str, payload, count: int, solver_cfg: SolverConfig, workers: int):
    workers = max(1, int(workers))
    chunk = max(1, min(64, math.ceil(count / (workers * 4))))
    jobs = [(kind, payload, list(range(s, min(s + chunk, count)))) for s in range(0, count, chunk)]
    if workers == 1:
        _init_worker(model, solver_cfg)
        results = [r for job in jobs for r in _run_chunk(job)]
    else:
        with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker, initargs=(model, solver_cfg)) as pool:
            results = [r for part in pool.map(_run_chunk, jobs) for r in part]
    results.sort(key=lambda r: r[0])

    failed = np.array([r[5] for r in results], dtype=np.int64)
    for start in range(0, count, STALL_WINDOW):
        window = failed[start : start + STALL_WINDOW]
        attempts = window.sum() + np.count_nonzero(window < MAX_ATTEMPTS)
        if window.sum() > 0.5 * attempts:
            raise GenerationStalled(
                f"{int(window.sum())} of {int(attempts)} solves failed for snapshots "
                f"{start}..{start + window.size - 1}; sampling ranges look infeasible"
            )
    if np.any(failed >= MAX_ATTEMPTS):
        raise GenerationStalled(f"snapshot {int(np.argmax(failed >= MAX_ATTEMPTS))} never converged")
    pressures = np.stack([r[1] for r in results])
    heads = np.stack([r[2] for r in results])
    demands = np.stack([r[3] for r in results])
    controls = np.stack([r[4] for r in results])
    return pressures, heads, demands, controls, int(failed.sum())


def generate_snapshots(
    model: NetworkModel,
    cfg: SamplingConfig,
    count: int,
    solver_cfg: SolverConfig | None = None,
    workers: int = 1,
) -> SnapshotDataset:
    """``count`` independent randomized snapshots; failed solves are redrawn."""
    if count < 1:
        raise ValueError("count must be >= 1")
    solver_cfg = solver_cfg or SolverConfig()
    topology = to_graph(model)
    pressures, heads, demands, controls, resampled = _generate(model, "random", cfg, count, solver_cfg, workers)
    ds = SnapshotDataset(
        topology, pressures, demands, heads, controls,
        manifest={
            "network": model.name,
            "realistic": False,
            "generator": {"mode": "random", "sampling": asdict(cfg)},
            "solver": solver_cfg.to_dict(),
            "resampled": resampled,
        },
    )
    finalize_manifest(ds, cfg.seed)
    return ds


# --- demand patterns -----------------------------------------------------------


def _pattern_timestep_hours(model: NetworkModel) -> float:
    for line in model.unsupported.get("TIMES", []):
        body = line.split(";")[0].strip()
        m = re.match(r"pattern\s+timestep\s+(\S+)(?:\s+(\S+))?", body, flags=re.IGNORECASE)
        if not m:
            continue
        value, unit = m.group(1), (m.group(2) or "").lower()
        if ":" in value:
            parts = [float(x) for x in value.split(":")]
            return parts[0] + parts[1] / 60 + (parts[2] / 3600 if len(parts) > 2 else 0.0)
        scale = {"sec": 1 / 3600, "min": 1 / 60, "day": 24.0}.get(unit[:3], 1.0)
        return float(value) * scale
    return 1.0


def pattern_demands(model: NetworkModel, cfg: PatternConfig) -> tuple[np.ndarray, str]:
    """(T, junctions) demand matrix before noise, and the source actually used."""
    base = model.base_demands()
    t_hours = np.arange(cfg.timesteps) * cfg.step_hours
    if cfg.multipliers is not None:
        mult = np.asarray(cfg.multipliers, dtype=np.float64)
        return base[None, :] * mult[np.arange(cfg.timesteps) % mult.size][:, None], "explicit"
    source = cfg.source
    if source == "auto":
        source = "file" if model.patterns else "template"
    if source == "template":
        tmpl = np.asarray(DIURNAL_TEMPLATE)
        idx = np.floor(t_hours).astype(np.int64) % tmpl.size
        return base[None, :] * tmpl[idx][:, None], "template"
    step = _pattern_timestep_hours(model)
    rows = [model.pattern_demands(int(math.floor(h / step + 1e-9))) for h in t_hours]
    return np.stack(rows), "file"


def generate_realistic_testset(
    model: NetworkModel,
    pattern_cfg: PatternConfig,
    noise_cfg: NoiseConfig,
    solver_cfg: SolverConfig | None = None,
    workers: int = 1,
) -> SnapshotDataset:
    """One snapshot per pattern step, with demand and head noise drawn before each solve."""
    solver_cfg = solver_cfg or SolverConfig()
    topology = to_graph(model)
    pattern, source = pattern_demands(model, pattern_cfg)
    pressures, heads, demands, controls, resampled = _generate(
        model, "realistic", (pattern, noise_cfg), pattern_cfg.timesteps, solver_cfg, workers
    )
    ds = SnapshotDataset(
        topology, pressures, demands, heads, controls,
        manifest={
            "network": model.name,
            "realistic": True,
            "generator": {
                "mode": "realistic",
                "pattern": dict(asdict(pattern_cfg), resolved_source=source),
                "noise": asdict(noise_cfg),
            },
            "solver": solver_cfg.to_dict(),
            "resampled": resampled,
        },
    )
    finalize_manifest(ds, noise_cfg.seed)
    return ds


# --- distribution shift ------------------------------------------------------------


@dataclass
class ShiftReport:
    bin_edges: np.ndarray
    density_a: np.ndarray
    density_b: np.ndarray
    ks_statistic: float
    ks_pvalue: float
    mean_a: float
    mean_b: float
    var_a: float
    var_b: float

    def to_json(self) -> dict:
        return {
            "bin_edges": self.bin_edges.tolist(),
            "density_a": self.density_a.tolist(),
            "density_b": self.density_b.tolist(),
            "ks_statistic": self.ks_statistic,
            "ks_pvalue": self.ks_pvalue,
            "mean_a": self.mean_a,
            "mean_b": self.mean_b,
            "var_a": self.var_a,
            "var_b": self.var_b,
        }


def pooled_pressures(ds: SnapshotDataset) -> np.ndarray:
    """Junction pressures of every snapshot, flattened."""
    return ds.pressures[:, ds.topology.junction_mask].ravel()


def distribution_report(a: SnapshotDataset, b: SnapshotDataset, bins: int = 100) -> ShiftReport:
    if not a.topology.same_as(b.topology):
        raise TopologyMismatch("datasets describe different networks")
    pa, pb = pooled_pressures(a), pooled_pressures(b)
    lo, hi = float(min(pa.min(), pb.min())), float(max(pa.max(), pb.max()))
    if hi <= lo:
        hi = lo + 1.0
    edges = np.linspace(lo, hi, bins + 1)
    da, _ = np.histogram(pa, bins=edges, density=True)
    db, _ = np.histogram(pb, bins=edges, density=True)
    ks = ks_2samp(pa, pb)
    return ShiftReport(
        bin_edges=edges,
        density_a=da,
        density_b=db,
        ks_statistic=float(ks.statistic),
        ks_pvalue=float(ks.pvalue),
        mean_a=float(pa.mean()),
        mean_b=float(pb.mean()),
        var_a=float(pa.var()),
        var_b=float(pb.var()),
    )


def default_workers() -> int:
    return max(1, (os.cpu_count() or 1))
