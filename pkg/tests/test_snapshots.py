"""Snapshot sampling, generation, the dataset store and the shift diagnostic."""

from __future__ import annotations

import hashlib
import json

import numpy as np
import pytest

from conftest import two_node_inp
from wdnpress.errors import EmptyDataset, GenerationStalled, SchemaMismatch, TopologyMismatch
from wdnpress.hydraulics import ControlSettings, SolverConfig, check_balance, solve_steady_state
from wdnpress.inp import parse_inp
from wdnpress.snapshots import (
    DIURNAL_TEMPLATE,
    NoiseConfig,
    PatternConfig,
    SamplingConfig,
    distribution_report,
    generate_realistic_testset,
    generate_snapshots,
    pattern_demands,
    sample_controls,
    snapshot_rng,
)
from wdnpress.store import load_dataset, save_dataset, split_indices

DEGENERATE = SamplingConfig(demand_range=(1.0, 1.0), head_delta=0.0, speed_range=(1.0, 1.0), seed=3)


def _digest(directory) -> dict[str, str]:
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(directory.iterdir())}


class TestSampleControls:
    def test_degenerate_equals_base(self, anytown) -> None:
        c = sample_controls(anytown, DEGENERATE, snapshot_rng(0, 0))
        base = ControlSettings.base(anytown)
        np.testing.assert_array_equal(c.demands, base.demands)
        np.testing.assert_array_equal(c.reservoir_heads, base.reservoir_heads)
        np.testing.assert_array_equal(c.pump_speeds, base.pump_speeds)

    def test_seeded(self, anytown) -> None:
        cfg = SamplingConfig(seed=11)
        a = sample_controls(anytown, cfg, snapshot_rng(11, 4))
        b = sample_controls(anytown, cfg, snapshot_rng(11, 4))
        np.testing.assert_array_equal(a.vector(), b.vector())

    def test_law_of_large_numbers(self, anytown) -> None:
        cfg = SamplingConfig(demand_range=(0.5, 1.5))
        rng = np.random.default_rng(0)
        base = ControlSettings.base(anytown).demands
        draws = np.stack([sample_controls(anytown, cfg, rng).demands for _ in range(10_000)])
        nz = base > 0
        assert np.all(np.abs(draws.mean(axis=0)[nz] / base[nz] - 1.0) < 0.01)

    def test_ranges_respected(self, anytown) -> None:
        cfg = SamplingConfig(seed=2)
        base = ControlSettings.base(anytown)
        for i in range(200):
            c = sample_controls(anytown, cfg, snapshot_rng(2, i))
            assert np.all(c.demands >= 0.2 * base.demands - 1e-15) and np.all(c.demands <= 2.0 * base.demands + 1e-15)
            assert np.all(np.abs(c.reservoir_heads - base.reservoir_heads) <= 5.0)
            assert np.all((c.pump_speeds >= 0.8) & (c.pump_speeds <= 1.2))

    @pytest.mark.parametrize(
        "kwargs", [dict(demand_range=(-0.1, 1.0)), dict(demand_range=(2.0, 1.0)), dict(speed_range=(0.0, 1.0)), dict(head_delta=-1)]
    )
    def test_invalid_config(self, kwargs) -> None:
        with pytest.raises(ValueError):
            SamplingConfig(**kwargs)


class TestGenerate:
    def test_single_degenerate(self, anytown) -> None:
        ds = generate_snapshots(anytown, DEGENERATE, 1)
        ref = solve_steady_state(anytown)
        np.testing.assert_array_equal(ds.pressures[0], ref.pressure)
        np.testing.assert_array_equal(ds.heads[0], ref.head)

    def test_all_balanced(self, anytown) -> None:
        ds = generate_snapshots(anytown, SamplingConfig(seed=5), 60)
        for row in range(len(ds)):
            c = ControlSettings(
                demands=ds.demands[row, : len(anytown.junctions)],
                reservoir_heads=ds.controls[row, len(anytown.junctions) : len(anytown.junctions) + 3],
                pump_speeds=ds.controls[row, -1:],
            )
            state = solve_steady_state(anytown, c)
            np.testing.assert_array_equal(state.pressure, ds.pressures[row])
            report = check_balance(anytown, state)
            assert report.max_mass_residual <= 1e-6 and report.max_energy_residual <= 1e-4

    def test_workers_do_not_change_output(self, anytown) -> None:
        cfg = SamplingConfig(seed=9)
        one = generate_snapshots(anytown, cfg, 40, workers=1)
        many = generate_snapshots(anytown, cfg, 40, workers=3)
        assert one.pressures.tobytes() == many.pressures.tobytes()
        assert one.controls.tobytes() == many.controls.tobytes()

    def test_stalls_on_infeasible(self, anytown) -> None:
        with pytest.raises(GenerationStalled):
            generate_snapshots(anytown, SamplingConfig(seed=1), 5, solver_cfg=SolverConfig(max_iterations=1))

    def test_manifest_bounds(self, anytown) -> None:
        ds = generate_snapshots(anytown, SamplingConfig(seed=4), 50)
        train, _ = ds.split()
        norm = ds.normalization
        p = ds.pressures[train][:, ds.topology.junction_mask]
        assert norm["pressure_min"] == p.min() and norm["pressure_max"] == p.max()
        assert ds.manifest["solver"]["tol_flow"] == 1e-6


class TestRealistic:
    def test_flat_noiseless_equals_base(self, anytown) -> None:
        ds = generate_realistic_testset(anytown, PatternConfig(timesteps=4, multipliers=[1.0]), NoiseConfig(0.0, 0.0))
        ref = solve_steady_state(anytown)
        for row in ds.pressures:
            np.testing.assert_array_equal(row, ref.pressure)
        assert ds.manifest["realistic"] is True

    def test_noiseless_matches_pattern_solves(self, ltown) -> None:
        cfg = PatternConfig(timesteps=6)
        ds = generate_realistic_testset(ltown, cfg, NoiseConfig(0.0, 0.0))
        demand, source = pattern_demands(ltown, cfg)
        assert source == "file"
        for t in (0, 5):
            c = ControlSettings.base(ltown)
            c.demands = demand[t]
            np.testing.assert_array_equal(solve_steady_state(ltown, c).pressure, ds.pressures[t])

    def test_template_monotone_single_source(self) -> None:
        model = parse_inp(two_node_inp(demand_lps=40.0))
        ds = generate_realistic_testset(model, PatternConfig(source="template"), NoiseConfig(0.0, 0.0))
        mult = np.asarray(DIURNAL_TEMPLATE)
        order = np.argsort(mult)
        assert np.all(np.diff(ds.pressures[order, 0]) <= 0)

    def test_template_mean_one(self) -> None:
        assert np.mean(DIURNAL_TEMPLATE) == pytest.approx(1.0, abs=1e-12)
        assert len(DIURNAL_TEMPLATE) == 24 and min(DIURNAL_TEMPLATE) >= 0

    def test_noise_clamps_demands(self, anytown) -> None:
        ds = generate_realistic_testset(anytown, PatternConfig(timesteps=8), NoiseConfig(sigma_demand=3.0, seed=1))
        assert np.all(ds.demands >= 0)

    def test_noise_seeded(self, anytown) -> None:
        a = generate_realistic_testset(anytown, PatternConfig(), NoiseConfig(0.05, 0.5, seed=2))
        b = generate_realistic_testset(anytown, PatternConfig(), NoiseConfig(0.05, 0.5, seed=2))
        assert a.pressures.tobytes() == b.pressures.tobytes()


class TestStore:
    def test_round_trip(self, anytown, tmp_path) -> None:
        ds = generate_snapshots(anytown, SamplingConfig(seed=2), 30)
        save_dataset(ds, tmp_path / "d")
        back = load_dataset(tmp_path / "d")
        assert back.pressures.tobytes() == ds.pressures.tobytes()
        assert back.topology.same_as(ds.topology)
        assert back.manifest["normalization"] == ds.manifest["normalization"]

    def test_layout(self, anytown, tmp_path) -> None:
        ds = generate_snapshots(anytown, SamplingConfig(seed=2), 3)
        save_dataset(ds, tmp_path)
        names = {p.name for p in tmp_path.iterdir()}
        for f in ("manifest.json", "pressures.f64", "demands.f64", "heads.f64", "edge_index.i64", "edge_attr.f64", "node_static.f64"):
            assert f in names
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        assert manifest["chunk_rows"] == 1024
        assert manifest["arrays"]["pressures"]["shape"] == [3, 22]
        raw = np.fromfile(tmp_path / "pressures.f64", dtype="<f8").reshape(3, 22)
        np.testing.assert_array_equal(raw, ds.pressures)

    def test_byte_identical_rewrite(self, anytown, tmp_path) -> None:
        cfg = SamplingConfig(seed=7)
        save_dataset(generate_snapshots(anytown, cfg, 20), tmp_path / "a")
        save_dataset(generate_snapshots(anytown, cfg, 20, workers=2), tmp_path / "b")
        assert _digest(tmp_path / "a") == _digest(tmp_path / "b")

    def test_empty_dir(self, tmp_path) -> None:
        with pytest.raises(EmptyDataset):
            load_dataset(tmp_path)

    def test_wrong_format(self, tmp_path) -> None:
        (tmp_path / "manifest.json").write_text('{"format": "other"}')
        with pytest.raises(SchemaMismatch):
            load_dataset(tmp_path)

    def test_split(self) -> None:
        train, val = split_indices(100, 3)
        assert len(train) == 90 and len(val) == 10
        assert set(train).isdisjoint(val) and set(train) | set(val) == set(range(100))
        t2, _ = split_indices(2, 0)
        assert len(t2) == 1


class TestShift:
    def test_self_is_zero(self, anytown) -> None:
        ds = generate_snapshots(anytown, SamplingConfig(seed=1), 20)
        rep = distribution_report(ds, ds)
        assert rep.ks_statistic == 0.0
        widths = np.diff(rep.bin_edges)
        assert np.sum(rep.density_a * widths) == pytest.approx(1.0)
        assert len(rep.bin_edges) == 101

    def test_halves_small(self, anytown) -> None:
        ds = generate_snapshots(anytown, SamplingConfig(seed=1), 1000)
        rep = distribution_report(ds.subset(np.arange(500)), ds.subset(np.arange(500, 1000)))
        assert rep.ks_statistic < 0.05

    def test_topology_mismatch(self, anytown, ltown) -> None:
        a = generate_snapshots(anytown, DEGENERATE, 1)
        b = generate_realistic_testset(ltown, PatternConfig(timesteps=1), NoiseConfig(0, 0))
        with pytest.raises(TopologyMismatch):
            distribution_report(a, b)
