"""Compare the compiled kernels with their numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--nodes 2708] [--repeat 5]

Prints one line per kernel with the best-of-N wall time of each backend.
"""
import argparse
import timeit

import numpy as np

from rgrl import _pykernels
from rgrl.datasets import cora_like
from rgrl.diffusion import ppr_topk
from rgrl.loss import normalize_rows

try:
    from rgrl import _ckernels
except ImportError:
    _ckernels = None


def best(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--nodes", type=int, default=2708)
    parser.add_argument("--dim", type=int, default=128)
    parser.add_argument("--k-local", type=int, default=4)
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args(argv)
    if _ckernels is None:
        raise SystemExit("compiled extension not built; run `pip install -e . --no-build-isolation`")

    g = cora_like(0, num_nodes=args.nodes)
    anchors = ppr_topk(g, 0.15, args.k_local).ids
    rng = np.random.default_rng(0)
    zn = normalize_rows(rng.standard_normal((args.nodes, args.dim)))[0]
    hn = normalize_rows(rng.standard_normal((args.nodes, args.dim)))[0]

    cases = {
        "local_kl": lambda impl: impl.local_kl(zn, hn, anchors, 0.1, 1.0),
        "khop_pairs": lambda impl: impl.khop_pairs(g.indptr, g.indices, g.num_nodes, 2, 3),
    }
    print(f"nodes={args.nodes} edges={g.num_edges} dim={args.dim} k_local={args.k_local}")
    print(f"{'kernel':<12}{'cython_ms':>12}{'numpy_ms':>12}{'speedup':>10}")
    for name, run in cases.items():
        fast = best(lambda: run(_ckernels), args.repeat)
        slow = best(lambda: run(_pykernels), args.repeat)
        print(f"{name:<12}{fast * 1e3:>12.2f}{slow * 1e3:>12.2f}{slow / fast:>9.1f}x")


if __name__ == "__main__":
    main()
