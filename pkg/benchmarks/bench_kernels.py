"""Compare the compiled and numpy attention kernels on a bundled network.

    python3 benchmarks/bench_kernels.py --network ltown --batch 32 --repeat 5

Prints one JSON document: best-of-``repeat`` seconds per training step
(forward plus backward) for each available backend, and the speed-up.
"""

from __future__ import annotations

import argparse
import json
import timeit

import numpy as np

from wdnpress.benchmarks import load_network
from wdnpress.gnn import kernels
from wdnpress.gnn.kernels import backend_module
from wdnpress.gnn.model import GraphPlan, ModelConfig, backward, forward, init_weights, masked_loss
from wdnpress.network import to_graph


def step_time(name: str, plan: GraphPlan, weights, x, target, mask, repeat: int) -> float:
    kern = backend_module(name)

    def step() -> None:
        out, cache = forward(weights, plan, x, kern)
        _, d = masked_loss(out, target, mask)
        backward(weights, plan, cache, d, kern)

    step()  # warm-up
    return min(timeit.repeat(step, number=1, repeat=repeat))


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--network", default="ltown")
    parser.add_argument("--batch", type=int, default=32)
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--edge-attr", action="store_true")
    args = parser.parse_args()

    plan = GraphPlan.from_topology(to_graph(load_network(args.network)))
    weights = init_weights(ModelConfig(use_edge_attr=args.edge_attr), 0)
    rng = np.random.default_rng(0)
    x = rng.uniform(size=(args.batch, plan.n_nodes, 3))
    target = rng.uniform(size=(args.batch, plan.n_nodes))
    mask = rng.uniform(size=target.shape) < 0.95

    backends = ["python"] + (["cython"] if kernels.BACKEND == "cython" else [])
    times = {b: step_time(b, plan, weights, x, target, mask, args.repeat) for b in backends}
    result = {
        "network": args.network,
        "nodes": plan.n_nodes,
        "arcs_with_self_loops": int(plan.src.size),
        "batch": args.batch,
        "seconds_per_step": times,
    }
    if "cython" in times:
        result["speedup"] = times["python"] / times["cython"]
    print(json.dumps(result, indent=2))


if __name__ == "__main__":
    main()
