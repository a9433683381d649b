"""Harmonic interpolation: a non-learned reference estimator.

Hidden node values solve the weighted graph Laplacian system with sensor
values held fixed. Pipe weights are inverse lengths; pumps and valves weigh 1.
"""

from __future__ import annotations

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.linalg import spsolve

from .errors import NoSensors
from .gnn.masking import MaskedSample
from .gnn.model import GraphPlan
from .network import GraphTopology


def laplacian(topology: GraphTopology) -> csr_matrix:
    src, dst = topology.edge_index
    length = topology.edge_attr[:, 0]
    w = np.where(length > 0, 1.0 / np.where(length > 0, length, 1.0), 1.0)
    n = topology.n_nodes
    # each physical link appears as two arcs, so the arc list is already symmetric
    adj = csr_matrix((w, (src, dst)), shape=(n, n))
    deg = np.asarray(adj.sum(axis=1)).ravel()
    return (csr_matrix((deg, (np.arange(n), np.arange(n))), shape=(n, n)) - adj).tocsr()


def harmonic_fill(lap: csr_matrix, values: np.ndarray, sensors: np.ndarray) -> np.ndarray:
    """Harmonic extension of ``values[sensors]`` to the other nodes."""
    if not sensors.any():
        raise NoSensors("harmonic interpolation needs at least one sensor")
    out = np.asarray(values, dtype=np.float64).copy()
    hidden = ~sensors
    if not hidden.any():
        return out
    luu = lap[hidden][:, hidden].tocsc()
    lus = lap[hidden][:, sensors]
    rhs = -(lus @ out[sensors])
    sol = spsolve(luu, rhs)
    out[hidden] = np.atleast_1d(sol)
    return out


def baseline_interpolate(topology: GraphTopology, sample: MaskedSample) -> np.ndarray:
    """Per-node predictions from the sample's observed channel (same units as that channel)."""
    return harmonic_fill(laplacian(topology), sample.features[:, 0], sample.sensors)


def baseline_predict(topology: GraphTopology, plan: GraphPlan, x: np.ndarray, norm: dict, quantity: str = "pressure") -> np.ndarray:
    """Batched predictions in normalized pressure units from feature tensors (B, N, 3).

    ``quantity="head"`` interpolates total head (pressure plus elevation)
    instead and converts back; offered as a stronger reference.
    """
    lap = laplacian(topology)
    sensors = x[..., 1] > 0.5
    out = np.empty(x.shape[:2])
    scale = norm["pressure_max"] - norm["pressure_min"]
    elev = (plan.elevation / scale) if quantity == "head" else 0.0
    for b in range(x.shape[0]):
        vals = x[b, :, 0] + elev
        out[b] = harmonic_fill(lap, vals, sensors[b]) - elev
    return out
