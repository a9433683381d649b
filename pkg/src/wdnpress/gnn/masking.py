"""Random sensor placement and feature construction.

Features per node: normalized observed pressure (0 where hidden), the sensor
bit, and normalized elevation. Fixed-head nodes are always sensors and never
scored; a fresh set of junction sensors is drawn for every sample.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import RatioOutOfRange
from .model import GraphPlan


def n_sensors_for(ratio: float, n_junctions: int) -> int:
    """Junction sensors at masking ratio ``ratio``: (1 - ratio) * n rounded half up."""
    if not (0.0 < ratio < 1.0):
        raise RatioOutOfRange(f"masking ratio must lie strictly between 0 and 1, got {ratio}")
    # the small epsilon keeps products like 0.05 * 10 = 0.49999... from rounding down
    return int(math.floor((1.0 - ratio) * n_junctions + 0.5 + 1e-9))


def _check_support(ratio: float, plan: GraphPlan) -> int:
    nj = int(plan.junction_mask.sum())
    k = n_sensors_for(ratio, nj)
    if k >= nj:
        raise RatioOutOfRange(f"ratio {ratio} leaves no masked junction among {nj}")
    if k == 0 and plan.junction_mask.all():
        raise RatioOutOfRange(f"ratio {ratio} leaves no observed node")
    return k


def normalize_pressure(p: np.ndarray, norm: dict) -> np.ndarray:
    return (p - norm["pressure_min"]) / (norm["pressure_max"] - norm["pressure_min"])


def denormalize_pressure(p: np.ndarray, norm: dict) -> np.ndarray:
    return p * (norm["pressure_max"] - norm["pressure_min"]) + norm["pressure_min"]


def normalize_elevation(z: np.ndarray, norm: dict, scale: str = "range") -> np.ndarray:
    """Elevation feature; ``scale="pressure"`` divides by the pressure range instead of the elevation range."""
    span = norm["pressure_max"] - norm["pressure_min"] if scale == "pressure" else norm["elevation_max"] - norm["elevation_min"]
    return (z - norm["elevation_min"]) / span


@dataclass
class MaskedSample:
    features: np.ndarray  # (N, 3)
    sensors: np.ndarray  # (N,) bool
    target: np.ndarray  # (N,) normalized pressure
    loss_mask: np.ndarray  # (N,) bool, hidden junctions

    @property
    def mask(self) -> np.ndarray:
        return self.sensors


def draw_sensors(plan: GraphPlan, k: int, rng: np.random.Generator) -> np.ndarray:
    sensors = ~plan.junction_mask
    junctions = np.flatnonzero(plan.junction_mask)
    sensors = sensors.copy()
    sensors[rng.choice(junctions, size=k, replace=False)] = True
    return sensors


def features_for(
    pressures: np.ndarray, sensors: np.ndarray, plan: GraphPlan, norm: dict, elevation_scale: str = "range"
) -> np.ndarray:
    """Feature tensor (B, N, 3) for pressures (B, N) and sensor masks (B, N)."""
    target = normalize_pressure(pressures, norm)
    x = np.empty(pressures.shape + (3,))
    x[..., 0] = np.where(sensors, target, 0.0)
    x[..., 1] = sensors
    x[..., 2] = normalize_elevation(plan.elevation, norm, elevation_scale)
    return x


def make_batch(
    pressures: np.ndarray,
    plan: GraphPlan,
    norm: dict,
    ratio: float,
    rng: np.random.Generator,
    elevation_scale: str = "range",
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Masked features, normalized targets, loss mask and sensor mask for a stack of snapshots."""
    k = _check_support(ratio, plan)
    pressures = np.atleast_2d(pressures)
    sensors = np.stack([draw_sensors(plan, k, rng) for _ in range(pressures.shape[0])])
    x = features_for(pressures, sensors, plan, norm, elevation_scale)
    target = normalize_pressure(pressures, norm)
    loss_mask = ~sensors & plan.junction_mask
    return x, target, loss_mask, sensors


def mask_sample(
    pressures: np.ndarray,
    plan: GraphPlan,
    norm: dict,
    ratio: float,
    rng: np.random.Generator,
    elevation_scale: str = "range",
) -> MaskedSample:
    x, target, loss_mask, sensors = make_batch(pressures[None], plan, norm, ratio, rng, elevation_scale)
    return MaskedSample(x[0], sensors[0], target[0], loss_mask[0])
