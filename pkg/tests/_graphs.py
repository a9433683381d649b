"""Small synthetic graphs shared by the model and training tests."""

from __future__ import annotations

import numpy as np

from wdnpress.gnn.model import GraphPlan, ModelConfig, ModelWeights, backward, forward, init_weights, masked_loss
from wdnpress.network import GraphTopology


def random_topology(n: int, rng: np.random.Generator, n_fixed: int = 1, extra: int = 2) -> GraphTopology:
    edges = {(int(rng.integers(0, v)), v) for v in range(1, n)}
    for _ in range(extra):
        a, b = rng.choice(n, 2, replace=False)
        edges.add((int(min(a, b)), int(max(a, b))))
    src, dst, attr = [], [], []
    for a, b in sorted(edges):
        row = list(rng.uniform(0.1, 1.0, 3)) + [1.0, 0.0, 0.0]
        src += [a, b]
        dst += [b, a]
        attr += [row, row]
    kind = np.zeros(n, dtype=np.int64)
    kind[n - n_fixed :] = 1
    return GraphTopology(
        node_ids=tuple(f"n{i}" for i in range(n)),
        node_kind=kind,
        edge_index=np.array([src, dst], dtype=np.int64),
        edge_attr=np.array(attr),
        node_static=rng.uniform(0, 50, (n, 1)),
    )


def path_topology(n: int) -> GraphTopology:
    src = sum(([i, i + 1] for i in range(n - 1)), [])
    dst = sum(([i + 1, i] for i in range(n - 1)), [])
    kind = np.zeros(n, dtype=np.int64)
    return GraphTopology(
        node_ids=tuple(str(i) for i in range(n)),
        node_kind=kind,
        edge_index=np.array([src, dst], dtype=np.int64).reshape(2, -1),
        edge_attr=np.tile([1.0, 0.3, 100.0, 1.0, 0.0, 0.0], (len(src), 1)),
        node_static=np.zeros((n, 1)),
    )


def perturbed(cfg: ModelConfig, seed: int, scale: float = 0.3) -> ModelWeights:
    rng = np.random.default_rng(seed + 1000)
    w = init_weights(cfg, seed)
    for k in w.params:
        w.params[k] = w.params[k] + rng.normal(0.0, scale, w.params[k].shape)
    return w


def fd_check(w: ModelWeights, plan: GraphPlan, x, target, mask, step: float = 1e-5) -> float:
    """Worst relative gap between analytic and central-difference gradients of the masked loss.

    Entries where both gradients are below 1e-8 are at the rounding level of
    the difference quotient (about 1e-11 here); for those the absolute gap
    must stay below 1e-9 instead, and a breach is returned as a gap of 1.
    """
    out, cache = forward(w, plan, x)
    _, d = masked_loss(out, target, mask)
    grads = backward(w, plan, cache, d)
    worst = 0.0
    for name, arr in w.params.items():
        for idx in np.ndindex(arr.shape):
            orig = arr[idx]
            arr[idx] = orig + step
            lp, _ = masked_loss(forward(w, plan, x)[0], target, mask)
            arr[idx] = orig - step
            lm, _ = masked_loss(forward(w, plan, x)[0], target, mask)
            arr[idx] = orig
            fd = (lp - lm) / (2 * step)
            an = grads[name][idx]
            scale = max(abs(fd), abs(an))
            if scale > 1e-8:
                worst = max(worst, abs(fd - an) / scale)
            elif abs(fd - an) > 1e-9:
                worst = 1.0
    return worst
