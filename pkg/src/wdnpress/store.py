"""Snapshot datasets in memory and on disk.

On disk a dataset is a directory holding ``manifest.json`` and one raw
little-endian, row-major binary file per array. Rows are written in blocks of
``CHUNK_ROWS`` snapshots. The manifest carries every config and seed that
produced the data, the array shapes and dtypes, and min/max normalization
statistics taken from the training split only. It holds no timestamps, so
regenerating with the same inputs gives byte-identical directories.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .errors import EmptyDataset, SchemaMismatch
from .network import GraphTopology

FORMAT = "wdnpress-snapshots"
FORMAT_VERSION = 1
CHUNK_ROWS = 1024
TRAIN_FRACTION = 0.9

_ARRAYS = {
    "pressures": "f64",
    "demands": "f64",
    "heads": "f64",
    "controls": "f64",
    "edge_index": "i64",
    "edge_attr": "f64",
    "node_static": "f64",
    "node_kind": "i64",
}
_DTYPES = {"f64": np.dtype("<f8"), "i64": np.dtype("<i8")}


def split_indices(n: int, seed: int, train_fraction: float = TRAIN_FRACTION) -> tuple[np.ndarray, np.ndarray]:
    """Seeded shuffle of ``range(n)`` cut into train and validation index sets.

    Both parts are non-empty whenever ``n >= 2``.
    """
    if n < 1:
        raise EmptyDataset("no snapshots to split")
    order = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0x5A17,))).permutation(n)
    n_train = int(round(train_fraction * n))
    if n >= 2:
        n_train = min(max(n_train, 1), n - 1)
    else:
        n_train = 1
    return np.sort(order[:n_train]), np.sort(order[n_train:])


@dataclass
class SnapshotDataset:
    topology: GraphTopology
    pressures: np.ndarray  # (S, N) m
    demands: np.ndarray  # (S, N) m3/s, zero at fixed-head nodes
    heads: np.ndarray  # (S, N) m
    controls: np.ndarray  # (S, C) sampled control vectors
    manifest: dict = field(default_factory=dict)

    def __post_init__(self):
        s, n = self.pressures.shape
        if n != self.topology.n_nodes:
            raise SchemaMismatch(f"pressure columns {n} != topology nodes {self.topology.n_nodes}")
        for name in ("demands", "heads"):
            if getattr(self, name).shape != (s, n):
                raise SchemaMismatch(f"{name} has shape {getattr(self, name).shape}, expected {(s, n)}")
        if self.controls.shape[0] != s:
            raise SchemaMismatch("controls rows do not match snapshot count")

    def __len__(self) -> int:
        return self.pressures.shape[0]

    @property
    def name(self) -> str:
        return self.manifest.get("network", "")

    @property
    def split_seed(self) -> int:
        return int(self.manifest.get("split", {}).get("seed", 0))

    def split(self) -> tuple[np.ndarray, np.ndarray]:
        info = self.manifest.get("split", {})
        return split_indices(len(self), int(info.get("seed", 0)), float(info.get("train_fraction", TRAIN_FRACTION)))

    @property
    def normalization(self) -> dict:
        return self.manifest["normalization"]

    def subset(self, rows: np.ndarray) -> SnapshotDataset:
        """Rows ``rows`` as a new dataset that keeps this dataset's normalization."""
        rows = np.asarray(rows, dtype=np.int64)
        manifest = dict(self.manifest, n_snapshots=int(rows.size), subset_of=self.name)
        return SnapshotDataset(
            self.topology, self.pressures[rows], self.demands[rows], self.heads[rows], self.controls[rows], manifest
        )


def normalization_stats(pressures: np.ndarray, topology: GraphTopology, rows: np.ndarray) -> dict:
    """Min/max of junction pressures over ``rows`` and of node elevations."""
    junctions = topology.junction_mask
    p = pressures[np.asarray(rows)][:, junctions]
    elev = topology.node_static[:, 0]
    p_min, p_max = float(p.min()), float(p.max())
    if p_max - p_min < 1e-9:
        p_max = p_min + 1.0
    e_min, e_max = float(elev.min()), float(elev.max())
    if e_max - e_min < 1e-9:
        e_max = e_min + 1.0
    return {"pressure_min": p_min, "pressure_max": p_max, "elevation_min": e_min, "elevation_max": e_max}


def finalize_manifest(ds: SnapshotDataset, split_seed: int) -> None:
    """Fill split, normalization and shape bookkeeping in ``ds.manifest``."""
    train, val = split_indices(len(ds), split_seed)
    ds.manifest["split"] = {
        "seed": int(split_seed),
        "train_fraction": TRAIN_FRACTION,
        "n_train": int(train.size),
        "n_val": int(val.size),
    }
    ds.manifest["normalization"] = normalization_stats(ds.pressures, ds.topology, train)
    ds.manifest["n_snapshots"] = len(ds)
    ds.manifest["n_nodes"] = ds.topology.n_nodes
    ds.manifest["node_ids"] = list(ds.topology.node_ids)
    ds.manifest.setdefault("tool_version", __version__)


def _arrays_of(ds: SnapshotDataset) -> dict[str, np.ndarray]:
    t = ds.topology
    return {
        "pressures": ds.pressures,
        "demands": ds.demands,
        "heads": ds.heads,
        "controls": ds.controls,
        "edge_index": t.edge_index,
        "edge_attr": t.edge_attr,
        "node_static": t.node_static,
        "node_kind": t.node_kind,
    }


def save_dataset(ds: SnapshotDataset, directory: str | Path) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = dict(ds.manifest)
    manifest["format"] = FORMAT
    manifest["format_version"] = FORMAT_VERSION
    manifest["chunk_rows"] = CHUNK_ROWS
    manifest["arrays"] = {}
    for name, arr in _arrays_of(ds).items():
        kind = _ARRAYS[name]
        fname = f"{name}.{kind}"
        data = np.ascontiguousarray(arr, dtype=_DTYPES[kind])
        with open(directory / fname, "wb") as fh:
            for start in range(0, max(data.shape[0], 1), CHUNK_ROWS):
                fh.write(data[start : start + CHUNK_ROWS].tobytes(order="C"))
        manifest["arrays"][name] = {"file": fname, "dtype": _DTYPES[kind].str, "shape": list(data.shape)}
    text = json.dumps(manifest, indent=2, sort_keys=True)
    (directory / "manifest.json").write_text(text + "\n", encoding="utf-8")
    return directory


def load_dataset(directory: str | Path) -> SnapshotDataset:
    directory = Path(directory)
    path = directory / "manifest.json"
    if not path.exists():
        raise EmptyDataset(f"{directory} holds no manifest.json")
    manifest = json.loads(path.read_text(encoding="utf-8"))
    if manifest.get("format") != FORMAT:
        raise SchemaMismatch(f"{directory} is not a snapshot dataset")
    if manifest.get("format_version") != FORMAT_VERSION:
        raise SchemaMismatch(f"unsupported dataset format version {manifest.get('format_version')}")
    arrays = {}
    for name, info in manifest["arrays"].items():
        raw = np.fromfile(directory / info["file"], dtype=np.dtype(info["dtype"]))
        arrays[name] = raw.reshape(info["shape"])
    if arrays["pressures"].shape[0] == 0:
        raise EmptyDataset(f"{directory} holds zero snapshots")
    topology = GraphTopology(
        node_ids=tuple(manifest["node_ids"]),
        node_kind=arrays["node_kind"].astype(np.int64),
        edge_index=arrays["edge_index"].astype(np.int64),
        edge_attr=arrays["edge_attr"].astype(np.float64),
        node_static=arrays["node_static"].astype(np.float64),
    )
    for key in ("arrays", "format", "format_version", "chunk_rows"):
        manifest.pop(key, None)
    return SnapshotDataset(
        topology,
        arrays["pressures"].astype(np.float64),
        arrays["demands"].astype(np.float64),
        arrays["heads"].astype(np.float64),
        arrays["controls"].astype(np.float64),
        manifest,
    )
