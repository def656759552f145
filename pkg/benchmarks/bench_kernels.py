"""Time the compiled kernels against the numpy fallback.

Usage::

    python benchmarks/bench_kernels.py [--size 64] [--coils 4] [--repeat 5]
"""

import argparse
import sys
import timeit

import numpy as np

from nlrspirit.kernels import available_backends
from nlrspirit.patches import reference_lattice


def workloads(size, seed):
    rng = np.random.default_rng(seed)
    img = rng.standard_normal((size, size)) + 1j * rng.standard_normal((size, size))
    lat = reference_lattice(size, 6, 5)
    rr, cc = (a.ravel() for a in np.meshgrid(lat, lat, indexing="ij"))
    order = rng.permutation(size * size)

    def match(b):
        return b.block_match_coil(img, rr, cc, 6, 40, 43)

    members = available_backends()["python"].block_match_coil(img, rr, cc, 6, 40, 43)
    groups = rng.standard_normal((len(rr), 36, 43)) + 0j

    def scatter(b):
        out = np.zeros((size, size), dtype=complex)
        cnt = np.zeros((size, size))
        b.scatter_add_coil(groups, members, 6, out, cnt)

    def darts(b):
        return b.poisson_darts(order // size, order % size, 1.6, size, size)

    return {"block_match": match, "scatter_add": scatter, "poisson_darts": darts}


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size", type=int, default=64)
    ap.add_argument("--coils", type=int, default=4, help="block matching is repeated per coil")
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    backends = available_backends()
    if "cython" not in backends:
        print("compiled extension not available; timing the numpy fallback only", file=sys.stderr)
    jobs = workloads(args.size, args.seed)
    names = sorted(backends)
    print(f"{'kernel':<15}" + "".join(f"{n + ' [ms]':>16}" for n in names) + f"{'speedup':>10}")
    for kernel, fn in jobs.items():
        per = kernel == "block_match" and args.coils or 1
        times = {}
        for name in names:
            b = backends[name]
            times[name] = per * min(timeit.repeat(lambda: fn(b), number=1, repeat=args.repeat)) * 1e3
        speed = times["python"] / times["cython"] if "cython" in times else float("nan")
        print(f"{kernel:<15}" + "".join(f"{times[n]:>16.2f}" for n in names) + f"{speed:>9.1f}x")


if __name__ == "__main__":
    main()
