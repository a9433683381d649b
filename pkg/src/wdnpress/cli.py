"""Command-line entry point: ``wdnpress <command> ...``.

Every command prints exactly one JSON document on stdout; progress and
diagnostics go to stderr. Exit codes: 0 success, 1 domain error, 2 usage or
I/O error, 3 the solver did not converge but a state was still produced.

Commands that write artifacts also write ``run_manifest.json`` next to them.
It echoes every parsed flag, the seeds, sha256 hashes of the inputs and the
artifact list, so ``wdnpress replay`` can rebuild the same artifacts.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .benchmarks import BUNDLED, network_path
from .errors import DuplicateId, NotConverged, ParseError, UnknownNodeReference, WDNError
from .gnn.checkpoint import load_weights, save_weights
from .gnn.model import ACTIVATIONS, ELEVATION_SCALES, ModelConfig
from .hydraulics import ControlSettings, SolverConfig, solve_steady_state
from .inp import parse_inp
from .network import ValidationReport, validate
from .snapshots import (
    NoiseConfig,
    PatternConfig,
    SamplingConfig,
    distribution_report,
    generate_realistic_testset,
    generate_snapshots,
)
from .store import load_dataset, save_dataset
from .training import TrainConfig, evaluate, evaluate_baseline, fine_tune, pretrain_multi, train

log = logging.getLogger("wdnpress")

DATA_DIR_ENV = "WDNPRESS_DATA_DIR"
MANIFEST_NAME = "run_manifest.json"

EXIT_OK, EXIT_DOMAIN, EXIT_USAGE, EXIT_NOT_CONVERGED = 0, 1, 2, 3


class UsageError(Exception):
    """Bad flags or unusable inputs; maps to exit code 2."""


@dataclass
class RunManifest:
    command: str
    args: dict
    config: dict
    seeds: dict
    inputs: dict[str, str]  # path -> sha256
    artifacts: list[str]
    started: str
    finished: str = ""
    tool_version: str = __version__
    timing: dict = field(default_factory=dict)

    def write(self, directory: Path) -> Path:
        path = directory / MANIFEST_NAME
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path

    @classmethod
    def read(cls, path: str | Path) -> RunManifest:
        path = Path(path)
        if path.is_dir():
            path = path / MANIFEST_NAME
        return cls(**json.loads(path.read_text(encoding="utf-8")))


# --- helpers -----------------------------------------------------------------------


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def sha256_of(path: str | Path) -> str:
    """Hash of a file, or of every file in a directory (names included, run manifest excluded)."""
    path = Path(path)
    h = hashlib.sha256()
    if path.is_dir():
        for child in sorted(p for p in path.rglob("*") if p.is_file() and p.name != MANIFEST_NAME):
            h.update(child.relative_to(path).as_posix().encode("utf-8") + b"\0")
            h.update(child.read_bytes())
    else:
        h.update(path.read_bytes())
    return h.hexdigest()


def _network_file(spec: str) -> Path:
    path = Path(spec)
    if path.is_file():
        return path
    if spec in BUNDLED:
        return network_path(spec)
    raise FileNotFoundError(f"{spec}: no such file or bundled network ({', '.join(BUNDLED)})")


def _read_network(spec: str):
    path = _network_file(spec)
    name = spec if spec in BUNDLED and not Path(spec).is_file() else path.stem
    return parse_inp(path.read_text(encoding="utf-8"), name=name), path


def _dataset(path: str):
    if not Path(path).is_dir():
        raise FileNotFoundError(f"{path}: dataset directory not found")
    return load_dataset(path)


def _default_out(stem: str) -> Path:
    return Path(os.environ.get(DATA_DIR_ENV, "wdnpress-data")) / stem


def _out_dir(args: argparse.Namespace, stem: str) -> Path:
    out = Path(args.out) if args.out else _default_out(stem)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _echo(args: argparse.Namespace) -> dict:
    return {k: v for k, v in vars(args).items() if k != "handler"}


def _finish(args: argparse.Namespace, out: Path, config: dict, seeds: dict, inputs: list[Path], started: str, timing=None) -> None:
    artifacts = sorted(p.relative_to(out).as_posix() for p in out.rglob("*") if p.is_file() and p.name != MANIFEST_NAME)
    RunManifest(
        command=args.command,
        args=_echo(args),
        config=config,
        seeds=seeds,
        inputs={str(Path(p).resolve()): sha256_of(p) for p in inputs},
        artifacts=artifacts,
        started=started,
        finished=_now(),
        timing=timing or {},
    ).write(out)


def _solver_config(args: argparse.Namespace) -> SolverConfig:
    return SolverConfig(tol_flow=args.tol_flow, tol_head=args.tol_head, max_iterations=args.max_iterations)


def _model_config(args: argparse.Namespace) -> ModelConfig:
    return ModelConfig(
        blocks=args.blocks,
        heads=args.heads,
        hidden=args.hidden,
        decoder_width=args.decoder_width,
        use_edge_attr=args.edge_attr,
        activation=args.activation,
        elevation_scale=args.elevation_scale,
    )


def _train_config(args: argparse.Namespace) -> TrainConfig:
    return TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        lr=args.lr,
        optimizer=args.optimizer,
        ratio=args.ratio,
        seed=args.seed,
        patience=args.patience,
        loss=args.loss,
        val_trials=args.val_trials,
    )


def _history_json(history) -> dict:
    data = history.to_json()
    data.pop("wall_time")
    data.pop("throughput")
    return data


# --- commands ----------------------------------------------------------------------


def cmd_validate(args: argparse.Namespace) -> tuple[dict, int]:
    path = _network_file(args.network)
    try:
        model = parse_inp(path.read_text(encoding="utf-8"), name=path.stem)
        report = validate(model)
    except (UnknownNodeReference, DuplicateId) as exc:
        # broken references are model problems, not syntax problems
        report = ValidationReport()
        report.add(type(exc).__name__, str(exc))
    return {"network": args.network, **report.to_json()}, (EXIT_OK if report.ok else EXIT_DOMAIN)


def cmd_simulate(args: argparse.Namespace) -> tuple[dict, int]:
    started = _now()
    model, path = _read_network(args.network)
    inputs = [path]
    controls = ControlSettings.base(model)
    if args.controls:
        controls = ControlSettings.from_dict(model, json.loads(Path(args.controls).read_text(encoding="utf-8")))
        inputs.append(Path(args.controls))
    if args.demand_scale is not None:
        if args.demand_scale < 0:
            raise UsageError("--demand-scale must be >= 0")
        controls = controls.scaled(args.demand_scale)
    code = EXIT_OK
    try:
        state = solve_steady_state(model, controls, _solver_config(args))
    except NotConverged as exc:
        state, code = exc.state, EXIT_NOT_CONVERGED
        log.warning("%s", exc)
    doc = state.to_json()
    if args.out:
        out = _out_dir(args, "")
        _write_json(out / "state.json", doc)
        _finish(args, out, {"solver": _solver_config(args).to_dict()}, {}, inputs, started)
    return doc, code


def cmd_generate(args: argparse.Namespace) -> tuple[dict, int]:
    started = _now()
    model, path = _read_network(args.network)
    solver = _solver_config(args)
    if args.mode == "random":
        cfg = SamplingConfig(
            demand_range=(args.demand_min, args.demand_max),
            head_delta=args.head_delta,
            speed_range=(args.speed_min, args.speed_max),
            seed=args.seed,
        )
        ds = generate_snapshots(model, cfg, args.count, solver, workers=args.workers)
        config = {"sampling": asdict(cfg)}
    else:
        pattern = PatternConfig(timesteps=args.timesteps, step_hours=args.step_hours, source=args.pattern_source)
        noise = NoiseConfig(sigma_demand=args.sigma_demand, sigma_head=args.sigma_head, seed=args.seed)
        ds = generate_realistic_testset(model, pattern, noise, solver, workers=args.workers)
        config = {"pattern": asdict(pattern), "noise": asdict(noise)}
    out = _out_dir(args, f"{model.name}-{args.mode}-s{args.seed}")
    save_dataset(ds, out)
    _finish(args, out, config | {"solver": solver.to_dict()}, {"seed": args.seed}, [path], started)
    return {
        "out": str(out),
        "network": model.name,
        "mode": args.mode,
        "n_snapshots": len(ds),
        "n_nodes": ds.topology.n_nodes,
        "resampled": ds.manifest["resampled"],
        "normalization": ds.normalization,
    }, EXIT_OK


def _log_epoch(message: str) -> None:
    log.info("%s", message)


def _train_outputs(args, out: Path, weights, history, config: dict, inputs: list[Path], started: str, provenance: dict) -> dict:
    save_weights(out / "weights.bin", weights, provenance)
    _write_json(out / "history.json", _history_json(history))
    timing = {"epoch_seconds": history.wall_time, "samples_per_second": history.throughput}
    _finish(args, out, config, {"seed": args.seed}, inputs, started, timing)
    return {
        "out": str(out),
        "weights": str(out / "weights.bin"),
        "epochs_run": history.epochs_run,
        "best_epoch": history.best_epoch,
        "initial_val_mae": history.initial_val_mae,
        "best_val_mae": history.best_val_mae,
        "stopped_early": history.stopped_early,
    }


def cmd_train(args: argparse.Namespace) -> tuple[dict, int]:
    started = _now()
    ds = _dataset(args.dataset)
    cfg, mcfg = _train_config(args), _model_config(args)
    weights, history = train(ds, cfg, mcfg, log=_log_epoch)
    out = _out_dir(args, f"train-{ds.name}-s{args.seed}")
    prov = {"command": "train", "datasets": [ds.name], "train": cfg.to_dict(), "input_sha256": [sha256_of(args.dataset)]}
    config = {"train": cfg.to_dict(), "model": mcfg.to_dict()}
    return _train_outputs(args, out, weights, history, config, [Path(args.dataset)], started, prov), EXIT_OK


def cmd_pretrain(args: argparse.Namespace) -> tuple[dict, int]:
    started = _now()
    datasets = [_dataset(p) for p in args.datasets]
    cfg, mcfg = _train_config(args), _model_config(args)
    weights, history = pretrain_multi(datasets, cfg, mcfg, log=_log_epoch)
    out = _out_dir(args, f"pretrain-{'+'.join(d.name for d in datasets)}-s{args.seed}")
    prov = {
        "command": "pretrain",
        "datasets": [d.name for d in datasets],
        "train": cfg.to_dict(),
        "input_sha256": [sha256_of(p) for p in args.datasets],
    }
    config = {"train": cfg.to_dict(), "model": mcfg.to_dict()}
    inputs = [Path(p) for p in args.datasets]
    return _train_outputs(args, out, weights, history, config, inputs, started, prov), EXIT_OK


def cmd_finetune(args: argparse.Namespace) -> tuple[dict, int]:
    started = _now()
    init, parent = load_weights(args.weights)
    ds = _dataset(args.dataset)
    cfg = _train_config(args)
    weights, history = fine_tune(init, ds, cfg, log=_log_epoch)
    out = _out_dir(args, f"finetune-{ds.name}-s{args.seed}")
    prov = {
        "command": "finetune",
        "datasets": [ds.name],
        "train": cfg.to_dict(),
        "parent": parent,
        "input_sha256": [sha256_of(args.weights), sha256_of(args.dataset)],
    }
    config = {"train": cfg.to_dict(), "model": init.config.to_dict()}
    inputs = [Path(args.weights), Path(args.dataset)]
    return _train_outputs(args, out, weights, history, config, inputs, started, prov), EXIT_OK


def cmd_evaluate(args: argparse.Namespace) -> tuple[dict, int]:
    started = _now()
    if (args.weights is None) == (args.baseline is None):
        raise UsageError("give exactly one of --weights or --baseline")
    ds = _dataset(args.dataset)
    inputs = [Path(args.dataset)]
    norm = None
    if args.norm_from:
        norm = _dataset(args.norm_from).normalization
        inputs.append(Path(args.norm_from))
    if args.weights:
        weights, _ = load_weights(args.weights)
        inputs.append(Path(args.weights))
        metrics = evaluate(weights, ds, args.ratio, args.seed, args.trials, norm)
    else:
        metrics = evaluate_baseline(ds, args.ratio, args.seed, args.trials, norm, quantity=args.baseline)
    doc = metrics.to_json(per_node=args.per_node)
    if args.out:
        out = _out_dir(args, "")
        _write_json(out / "metrics.json", metrics.to_json(per_node=True))
        (out / "node_errors.csv").write_text(metrics.node_csv(), encoding="utf-8")
        config = {"ratio": args.ratio, "trials": args.trials, "norm": norm or ds.normalization}
        _finish(args, out, config, {"mask_seed": args.seed}, inputs, started)
    return doc, EXIT_OK


def cmd_report(args: argparse.Namespace) -> tuple[dict, int]:
    started = _now()
    a, b = _dataset(args.dataset_a), _dataset(args.dataset_b)
    shift = distribution_report(a, b, bins=args.bins)
    rows = []
    for path in args.metrics:
        m = json.loads(Path(path).read_text(encoding="utf-8"))
        rows.append({"source": str(path), **{k: m.get(k) for k in ("dataset", "masking_ratio", "trials", "mae", "mape")}})
    doc = {"shift": shift.to_json(), "metrics": rows}
    if args.out:
        out = _out_dir(args, "")
        _write_json(out / "shift.json", shift.to_json())
        lines = ["bin_lo,bin_hi,density_a,density_b"]
        lines += [
            f"{lo!r},{hi!r},{da!r},{db!r}"
            for lo, hi, da, db in zip(
                shift.bin_edges[:-1].tolist(), shift.bin_edges[1:].tolist(), shift.density_a.tolist(), shift.density_b.tolist()
            )
        ]
        (out / "histogram.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
        table = ["source,dataset,masking_ratio,trials,mae,mape"]
        table += [",".join("" if r[k] is None else str(r[k]) for k in ("source", "dataset", "masking_ratio", "trials", "mae", "mape")) for r in rows]
        (out / "metrics.csv").write_text("\n".join(table) + "\n", encoding="utf-8")
        inputs = [Path(args.dataset_a), Path(args.dataset_b)] + [Path(p) for p in args.metrics]
        _finish(args, out, {"bins": args.bins}, {}, inputs, started)
    return doc, EXIT_OK


def cmd_replay(args: argparse.Namespace) -> tuple[dict, int]:
    manifest = RunManifest.read(args.manifest)
    for path, digest in manifest.inputs.items():
        if not Path(path).exists():
            raise FileNotFoundError(f"replay input {path} is missing")
        if sha256_of(path) != digest:
            raise UsageError(f"replay input {path} changed since the recorded run")
    echoed = dict(manifest.args)
    echoed["out"] = args.out
    if args.workers is not None:
        if "workers" not in echoed:
            raise UsageError(f"{manifest.command} takes no --workers flag")
        echoed["workers"] = args.workers
    handler = COMMANDS[manifest.command]
    return handler(argparse.Namespace(**echoed))


COMMANDS = {
    "validate": cmd_validate,
    "simulate": cmd_simulate,
    "generate": cmd_generate,
    "train": cmd_train,
    "pretrain": cmd_pretrain,
    "finetune": cmd_finetune,
    "evaluate": cmd_evaluate,
    "report": cmd_report,
    "replay": cmd_replay,
}


# --- argument parsing --------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        raise UsageError(f"{self.prog}: {message}")


def _add_solver_flags(p: argparse.ArgumentParser) -> None:
    d = SolverConfig()
    p.add_argument("--tol-flow", type=float, default=d.tol_flow, help="mass balance tolerance, m3/s")
    p.add_argument("--tol-head", type=float, default=d.tol_head, help="energy balance tolerance, m")
    p.add_argument("--max-iterations", type=int, default=d.max_iterations)


def _add_train_flags(p: argparse.ArgumentParser, model: bool = True) -> None:
    d = TrainConfig()
    p.add_argument("--epochs", type=int, default=d.epochs)
    p.add_argument("--batch-size", type=int, default=d.batch_size)
    p.add_argument("--lr", type=float, default=d.lr)
    p.add_argument("--optimizer", choices=("adam", "sgd"), default=d.optimizer)
    p.add_argument("--ratio", type=float, default=d.ratio, help="masking ratio: fraction of junctions hidden")
    p.add_argument("--seed", type=int, default=d.seed)
    p.add_argument("--patience", type=int, default=d.patience)
    p.add_argument("--loss", choices=("mae", "mse"), default=d.loss)
    p.add_argument("--val-trials", type=int, default=d.val_trials)
    p.add_argument("--out", help=f"output directory (default under ${DATA_DIR_ENV})")
    if model:
        m = ModelConfig()
        p.add_argument("--blocks", type=int, default=m.blocks)
        p.add_argument("--heads", type=int, default=m.heads)
        p.add_argument("--hidden", type=int, default=m.hidden)
        p.add_argument("--decoder-width", type=int, default=m.decoder_width)
        p.add_argument("--edge-attr", action="store_true", help="add link attributes to the attention logits")
        p.add_argument("--activation", choices=ACTIVATIONS, default=m.activation)
        p.add_argument(
            "--elevation-scale", choices=ELEVATION_SCALES, default=m.elevation_scale,
            help="divide elevation by its own range or by the pressure range (head-consistent features)",
        )


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="wdnpress", description="Pressure estimation in water distribution networks.")
    parser.add_argument("--version", action="version", version=f"wdnpress {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="progress messages on stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("validate", help="check an INP file")
    p.add_argument("network", help="INP path or bundled network name")

    p = sub.add_parser("simulate", help="steady-state hydraulic solve")
    p.add_argument("network")
    p.add_argument("--controls", help="JSON file with demands, reservoir_heads, pump_speeds, link_status")
    p.add_argument("--demand-scale", type=float, help="multiply every junction demand")
    p.add_argument("--out")
    _add_solver_flags(p)

    p = sub.add_parser("generate", help="write a snapshot dataset")
    p.add_argument("network")
    p.add_argument("--mode", choices=("random", "realistic"), default="random")
    p.add_argument("--count", type=int, default=1000, help="snapshots in random mode")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    s = SamplingConfig()
    p.add_argument("--demand-min", type=float, default=s.demand_range[0])
    p.add_argument("--demand-max", type=float, default=s.demand_range[1])
    p.add_argument("--head-delta", type=float, default=s.head_delta)
    p.add_argument("--speed-min", type=float, default=s.speed_range[0])
    p.add_argument("--speed-max", type=float, default=s.speed_range[1])
    pc, nc = PatternConfig(), NoiseConfig()
    p.add_argument("--timesteps", type=int, default=pc.timesteps)
    p.add_argument("--step-hours", type=float, default=pc.step_hours)
    p.add_argument("--pattern-source", choices=("auto", "file", "template"), default=pc.source)
    p.add_argument("--sigma-demand", type=float, default=nc.sigma_demand)
    p.add_argument("--sigma-head", type=float, default=nc.sigma_head)
    p.add_argument("--out")
    _add_solver_flags(p)

    p = sub.add_parser("train", help="train on one dataset")
    p.add_argument("dataset")
    _add_train_flags(p)

    p = sub.add_parser("pretrain", help="train one model on several networks")
    p.add_argument("datasets", nargs="+")
    _add_train_flags(p)

    p = sub.add_parser("finetune", help="continue training pretrained weights on a target dataset")
    p.add_argument("weights")
    p.add_argument("dataset")
    _add_train_flags(p, model=False)

    p = sub.add_parser("evaluate", help="MAE and MAPE over masked junctions")
    p.add_argument("dataset")
    p.add_argument("--weights")
    p.add_argument("--baseline", choices=("pressure", "head"), help="score harmonic interpolation instead")
    p.add_argument("--ratio", type=float, default=0.95)
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--seed", type=int, default=0, help="mask seed")
    p.add_argument("--norm-from", help="dataset whose normalization the weights were trained with")
    p.add_argument("--per-node", action="store_true")
    p.add_argument("--out")

    p = sub.add_parser("report", help="distribution shift between two datasets plus metric tables")
    p.add_argument("dataset_a")
    p.add_argument("dataset_b")
    p.add_argument("--bins", type=int, default=100)
    p.add_argument("--metrics", nargs="*", default=[], help="metrics.json files to tabulate")
    p.add_argument("--out")

    p = sub.add_parser("replay", help="re-run a command from its run manifest")
    p.add_argument("manifest", help="run_manifest.json or the directory holding it")
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, help="override generator workers")
    return parser


def _emit(doc: dict) -> None:
    sys.stdout.write(json.dumps(doc, sort_keys=True, default=_jsonable) + "\n")
    sys.stdout.flush()


def _jsonable(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"{type(obj).__name__} is not JSON serializable")


def _error(exc: BaseException, code: int) -> int:
    print(f"wdnpress: {type(exc).__name__}: {exc}", file=sys.stderr)
    _emit({"error": type(exc).__name__, "message": str(exc)})
    return code


def _configure_logging(verbose: bool) -> None:
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(message)s"))
    log.handlers[:] = [handler]
    log.setLevel(logging.INFO if verbose else logging.WARNING)
    log.propagate = False


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        return _error(exc, EXIT_USAGE)
    _configure_logging(args.verbose)
    try:
        doc, code = COMMANDS[args.command](args)
    except (UsageError, ParseError, OSError, ValueError, json.JSONDecodeError) as exc:
        return _error(exc, EXIT_USAGE)
    except WDNError as exc:
        return _error(exc, EXIT_DOMAIN)
    _emit(doc)
    return code


if __name__ == "__main__":
    sys.exit(main())
