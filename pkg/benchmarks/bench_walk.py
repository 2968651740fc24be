"""Compiled vs pure-Python walk kernels.

    python3 benchmarks/bench_walk.py [--entities 5000] [--repeat 3]

Times corpus generation on a synthetic joint graph and SRP sampling on a
power-law KG with both backends, checks the outputs are identical, and
prints one row per kernel.
"""

import argparse
import time

import numpy as np

from skipwalk.kg import PriorAlignment, add_reverse_relations, build_joint_graph
from skipwalk.srp import SrpConfig, random_pagerank_sample
from skipwalk.synthetic import coupled_power_law
from skipwalk.walker import WalkConfig, generate_corpus, kernel


def best_of(fn, repeat):
    times, out = [], None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--entities", type=int, default=5000)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    try:
        kernel("cython")
    except ImportError:
        raise SystemExit("compiled kernel not built; run `pip install -e . --no-build-isolation`")

    n = args.entities
    kg1, kg2, pairs = coupled_power_law(n, 20, 6.0, seed=args.seed)
    prior = pairs[np.random.default_rng(args.seed).permutation(n)[: int(0.3 * n)]]
    g = build_joint_graph(add_reverse_relations(kg1), add_reverse_relations(kg2), PriorAlignment(prior))
    wc = WalkConfig(length=15, walks_per_entity=2, seed=args.seed)
    scfg = SrpConfig(target_entities=max(n // 7, 10), seed=args.seed)

    cases = [
        ("walk corpus", lambda b: generate_corpus(g, wc, backend=b), lambda c: c.shape[0] * 15),
        ("srp sample", lambda b: random_pagerank_sample(kg1, scfg, backend=b), len),
    ]
    print(f"joint graph: {g.n_entities} entities, {g.n_edges} edges")
    print(f"{'kernel':<12} {'python s':>10} {'cython s':>10} {'speedup':>8} {'items':>9} {'same':>5}")
    for name, run, count in cases:
        tp, a = best_of(lambda: run("python"), args.repeat)
        tc, b = best_of(lambda: run("cython"), args.repeat)
        same = np.array_equal(a, b)
        print(f"{name:<12} {tp:>10.3f} {tc:>10.4f} {tp / tc:>7.1f}x {count(b):>9d} {str(same):>5}")


if __name__ == "__main__":
    main()
