"""Training loops, evaluation in mH2O, and multi-network pretraining.

Every optimisation step takes a batch of snapshots from one network, draws a
fresh sensor set for each, and updates the weights with Adam on the masked
loss. Validation uses fixed seeded masks so epochs are comparable, and the
best weights seen (the starting weights included) are returned.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import DivergedTraining, EmptyDataset, SchemaMismatch
from .gnn.masking import denormalize_pressure, make_batch
from .gnn.model import GraphPlan, ModelConfig, ModelWeights, backward, forward, init_weights, masked_loss
from .store import SnapshotDataset

MAPE_EPS = 1.0  # mH2O floor on the MAPE denominator
EVAL_BATCH = 256


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 32
    lr: float = 1e-3
    optimizer: str = "adam"
    ratio: float = 0.95
    seed: int = 0
    patience: int = 15
    clip_norm: float = 1.0
    loss: str = "mae"
    val_trials: int = 1
    finetune_lr_scale: float = 0.1

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.patience < 1 or self.val_trials < 1:
            raise ValueError("epochs >= 0, batch_size, patience and val_trials >= 1 required")
        if not (self.lr > 0 and self.clip_norm > 0 and self.finetune_lr_scale > 0):
            raise ValueError("lr, clip_norm and finetune_lr_scale must be positive")
        if not (0.0 < self.ratio < 1.0):
            raise ValueError("ratio must lie strictly between 0 and 1")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.loss not in ("mae", "mse"):
            raise ValueError(f"unknown loss {self.loss!r}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Metrics:
    mae: float  # mH2O
    mape: float  # percent
    ratio: float
    dataset: str
    trials: int
    trial_mae: list[float]
    trial_mape: list[float]
    node_ids: list[str]
    node_mae: np.ndarray  # mean absolute error per node over every time it was hidden (nan if never)
    n_scored: int

    def to_json(self, per_node: bool = False) -> dict:
        out = {
            "mae": self.mae,
            "mape": self.mape,
            "masking_ratio": self.ratio,
            "dataset": self.dataset,
            "trials": self.trials,
            "trial_mae": self.trial_mae,
            "trial_mape": self.trial_mape,
            "n_scored": self.n_scored,
        }
        if per_node:
            out["node_mae"] = {n: (None if np.isnan(v) else float(v)) for n, v in zip(self.node_ids, self.node_mae)}
        return out

    def node_csv(self) -> str:
        rows = ["node_id,mae_mH2O"]
        rows += [f"{n},{'' if np.isnan(v) else repr(float(v))}" for n, v in zip(self.node_ids, self.node_mae)]
        return "\n".join(rows) + "\n"


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_mae: list[float] = field(default_factory=list)
    val_mape: list[float] = field(default_factory=list)
    wall_time: list[float] = field(default_factory=list)
    throughput: list[float] = field(default_factory=list)
    initial_val_mae: float = float("nan")
    best_epoch: int = 0  # 0 means the starting weights were never beaten
    stopped_early: bool = False

    @property
    def epochs_run(self) -> int:
        return len(self.train_loss)

    @property
    def best_val_mae(self) -> float:
        return min([self.initial_val_mae] + self.val_mae)

    def trajectory(self) -> tuple:
        """Everything except timing, which is the only part allowed to vary between runs."""
        return (tuple(self.train_loss), tuple(self.val_mae), tuple(self.val_mape), self.best_epoch, self.stopped_early)

    def to_json(self) -> dict:
        return asdict(self) | {"epochs_run": self.epochs_run, "best_val_mae": self.best_val_mae}


# --- optimisers ---------------------------------------------------------------


class Adam:
    def __init__(self, params: dict[str, np.ndarray], lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for k in sorted(params):
            g = grads[k]
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            params[k] -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


class SGD:
    def __init__(self, params: dict[str, np.ndarray], lr: float):
        self.lr = lr

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        for k in sorted(params):
            params[k] -= self.lr * grads[k]


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float) -> float:
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
    if norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


# --- evaluation ----------------------------------------------------------------


def _check_schema(weights: ModelWeights) -> None:
    if weights.config.in_features != 3:
        raise SchemaMismatch(f"model expects {weights.config.in_features} input features, datasets provide 3")


def trial_rng(mask_seed: int, trial: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(mask_seed, spawn_key=(0x3A5C, trial)))


def trial_batches(
    ds: SnapshotDataset, plan: GraphPlan, norm: dict, ratio: float, rng: np.random.Generator, rows=None, elevation_scale: str = "range"
):
    """Yield (rows, features, targets, loss mask) for one mask trial over ``rows``."""
    rows = np.arange(len(ds)) if rows is None else np.asarray(rows)
    for start in range(0, rows.size, EVAL_BATCH):
        idx = rows[start : start + EVAL_BATCH]
        x, target, loss_mask, _ = make_batch(ds.pressures[idx], plan, norm, ratio, rng, elevation_scale)
        yield idx, x, target, loss_mask


def _score(pred_p: np.ndarray, true_p: np.ndarray, loss_mask: np.ndarray):
    err = np.abs(pred_p - true_p)
    ape = err / np.maximum(np.abs(true_p), MAPE_EPS)
    return err[loss_mask], ape[loss_mask], np.where(loss_mask, err, 0.0).sum(axis=0), loss_mask.sum(axis=0)


def _evaluate_with(
    predict, ds: SnapshotDataset, ratio: float, mask_seed: int, trials: int, norm: dict | None, rows=None, elevation_scale: str = "range"
) -> Metrics:
    if len(ds) == 0:
        raise EmptyDataset("nothing to evaluate")
    norm = norm or ds.normalization
    plan = GraphPlan.from_topology(ds.topology)
    trial_mae, trial_mape = [], []
    node_err = np.zeros(plan.n_nodes)
    node_cnt = np.zeros(plan.n_nodes)
    n_scored = 0
    for t in range(trials):
        rng = trial_rng(mask_seed, t)
        errs, apes = [], []
        for idx, x, target, loss_mask in trial_batches(ds, plan, norm, ratio, rng, rows, elevation_scale):
            pred = predict(plan, x)
            e, a, ne, nc = _score(denormalize_pressure(pred, norm), ds.pressures[idx], loss_mask)
            errs.append(e)
            apes.append(a)
            node_err += ne
            node_cnt += nc
        errs, apes = np.concatenate(errs), np.concatenate(apes)
        n_scored += errs.size
        trial_mae.append(float(errs.mean()))
        trial_mape.append(float(100.0 * apes.mean()))
    with np.errstate(invalid="ignore", divide="ignore"):
        node_mae = np.where(node_cnt > 0, node_err / np.maximum(node_cnt, 1), np.nan)
    return Metrics(
        mae=float(np.mean(trial_mae)),
        mape=float(np.mean(trial_mape)),
        ratio=ratio,
        dataset=ds.name,
        trials=trials,
        trial_mae=trial_mae,
        trial_mape=trial_mape,
        node_ids=list(ds.topology.node_ids),
        node_mae=node_mae,
        n_scored=n_scored,
    )


def evaluate(
    weights: ModelWeights,
    ds: SnapshotDataset,
    ratio: float = 0.95,
    mask_seed: int = 0,
    trials: int = 10,
    norm: dict | None = None,
    rows=None,
) -> Metrics:
    """MAE and MAPE in mH2O over hidden junctions, averaged over ``trials`` mask draws.

    ``norm`` must be the normalization the model was trained with; it
    defaults to the dataset's own manifest statistics.
    """
    _check_schema(weights)
    predict = lambda plan, x: forward(weights, plan, x)[0]  # noqa: E731
    return _evaluate_with(predict, ds, ratio, mask_seed, trials, norm, rows, weights.config.elevation_scale)


def evaluate_baseline(ds: SnapshotDataset, ratio: float = 0.95, mask_seed: int = 0, trials: int = 10, norm: dict | None = None, rows=None, quantity: str = "pressure") -> Metrics:
    """The harmonic interpolator scored on exactly the masks :func:`evaluate` draws."""
    from .baseline import baseline_predict

    def predict(plan, x):
        return baseline_predict(ds.topology, plan, x, norm or ds.normalization, quantity=quantity)

    return _evaluate_with(predict, ds, ratio, mask_seed, trials, norm, rows)


# --- training ---------------------------------------------------------------------


@dataclass
class _Source:
    ds: SnapshotDataset
    plan: GraphPlan
    norm: dict
    train_rows: np.ndarray
    val_rows: np.ndarray


def _sources(datasets: list[SnapshotDataset]) -> list[_Source]:
    out = []
    for ds in datasets:
        if len(ds) < 2:
            raise EmptyDataset(f"dataset {ds.name!r} needs at least 2 snapshots, has {len(ds)}")
        train, val = ds.split()
        out.append(_Source(ds, GraphPlan.from_topology(ds.topology), ds.normalization, train, val))
    return out


def _validate(weights: ModelWeights, sources: list[_Source], cfg: TrainConfig) -> tuple[float, float]:
    maes, mapes = [], []
    for k, s in enumerate(sources):
        m = evaluate(weights, s.ds, cfg.ratio, mask_seed=cfg.seed + 7919 * (k + 1), trials=cfg.val_trials, norm=s.norm, rows=s.val_rows)
        maes.append(m.mae)
        mapes.append(m.mape)
    return float(np.mean(maes)), float(np.mean(mapes))


def _fit(
    datasets: list[SnapshotDataset],
    cfg: TrainConfig,
    model_config: ModelConfig,
    init: ModelWeights | None = None,
    lr: float | None = None,
    log=None,
) -> tuple[ModelWeights, TrainHistory]:
    if not datasets:
        raise EmptyDataset("no datasets given")
    sources = _sources(datasets)
    weights = init.copy() if init is not None else init_weights(model_config, cfg.seed)
    weights.check()
    _check_schema(weights)
    lr = cfg.lr if lr is None else lr
    opt = Adam(weights.params, lr) if cfg.optimizer == "adam" else SGD(weights.params, lr)
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(0x7EA1,)))

    history = TrainHistory()
    best = weights.copy()
    best_mae, _ = _validate(weights, sources, cfg)
    history.initial_val_mae = best_mae
    stale = 0
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        batches = []
        for k, s in enumerate(sources):
            order = rng.permutation(s.train_rows)
            batches += [(k, order[i : i + cfg.batch_size]) for i in range(0, order.size, cfg.batch_size)]
        if len(sources) > 1:
            batches = [batches[i] for i in rng.permutation(len(batches))]
        total, seen = 0.0, 0
        for k, rows in batches:
            s = sources[k]
            x, target, loss_mask, _ = make_batch(s.ds.pressures[rows], s.plan, s.norm, cfg.ratio, rng, weights.config.elevation_scale)
            pred, cache = forward(weights, s.plan, x)
            loss, dpred = masked_loss(pred, target, loss_mask, cfg.loss)
            if not np.isfinite(loss):
                raise DivergedTraining(f"loss became {loss} in epoch {epoch}")
            grads = backward(weights, s.plan, cache, dpred)
            clip_gradients(grads, cfg.clip_norm)
            opt.step(weights.params, grads)
            if not weights.all_finite():
                raise DivergedTraining(f"weights became non-finite in epoch {epoch}")
            total += loss * rows.size
            seen += rows.size
        val_mae, val_mape = _validate(weights, sources, cfg)
        elapsed = time.perf_counter() - t0
        history.train_loss.append(total / max(seen, 1))
        history.val_mae.append(val_mae)
        history.val_mape.append(val_mape)
        history.wall_time.append(elapsed)
        history.throughput.append(seen / elapsed if elapsed > 0 else float("inf"))
        if log is not None:
            log(f"epoch {epoch}: train {history.train_loss[-1]:.5f} val MAE {val_mae:.4f} mH2O")
        if val_mae < best_mae:
            best_mae, best, stale = val_mae, weights.copy(), 0
            history.best_epoch = epoch
        else:
            stale += 1
            if stale >= cfg.patience:
                history.stopped_early = True
                break
    return best, history


def train(ds: SnapshotDataset, cfg: TrainConfig, model_config: ModelConfig | None = None, log=None) -> tuple[ModelWeights, TrainHistory]:
    """Train on one dataset; returns the best-validation weights and the history."""
    return _fit([ds], cfg, model_config or ModelConfig(), log=log)


def pretrain_multi(
    datasets: list[SnapshotDataset], cfg: TrainConfig, model_config: ModelConfig | None = None, log=None
) -> tuple[ModelWeights, TrainHistory]:
    """One weight set over several networks; steps draw networks in proportion to their size."""
    return _fit(list(datasets), cfg, model_config or ModelConfig(), log=log)


def fine_tune(weights: ModelWeights, ds: SnapshotDataset, cfg: TrainConfig, log=None) -> tuple[ModelWeights, TrainHistory]:
    """Continue training on ``ds`` at ``lr * finetune_lr_scale``; never returns worse validation weights."""
    return _fit([ds], cfg, weights.config, init=weights, lr=cfg.lr * cfg.finetune_lr_scale, log=log)
