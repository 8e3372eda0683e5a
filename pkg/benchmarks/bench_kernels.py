"""Time the numba kernels against the pure-numpy fallback.

Each backend runs in its own interpreter because the choice is made once at
import time from BMCD_DISABLE_NUMBA. The child prints wall times and a digest
of the posterior draws, so the parent can also confirm the two backends walked
the same chain.

    python benchmarks/bench_kernels.py --iterations 20000
"""
import argparse
import hashlib
import json
import os
import subprocess
import sys
import time


def child(args):
    import numpy as np

    from bmcd import _backend
    from bmcd.datagen import SimulationSpec, simulate
    from bmcd.mallows import PartitionTable
    from bmcd.sampler import ChainConfig, run_chain

    _, _, W = simulate(SimulationSpec.scaled(seed=args.seed))
    table = PartitionTable.build(W.shape[1])
    cfg = ChainConfig(n_clusters=3, iter_max=args.iterations, burn_in=args.iterations // 2, thinning=100,
                      augmentation_proposal=args.mode, seed=args.seed)
    # first call compiles (numba) or warms caches (numpy); time the second
    t0 = time.perf_counter()
    run_chain(W, ChainConfig(n_clusters=3, iter_max=200, burn_in=100, thinning=100,
                             augmentation_proposal=args.mode, seed=0), table)
    warm = time.perf_counter() - t0
    t0 = time.perf_counter()
    S = run_chain(W, cfg, table)
    wall = time.perf_counter() - t0
    # integer state must match exactly; alpha may differ in the last ulp (libm vs LLVM exp/log)
    h = hashlib.sha256()
    for a in (S.rhos, S.z, S.rank_counts):
        h.update(np.ascontiguousarray(a).tobytes())
    print(json.dumps(dict(numba=_backend.USE_NUMBA, warmup=warm, wall=wall,
                          per_iter_us=1e6 * wall / args.iterations, digest=h.hexdigest(), alphas=S.alphas.ravel().tolist())))


def run_backend(disable, args):
    env = dict(os.environ, BMCD_DISABLE_NUMBA="1" if disable else "0")
    cmd = [sys.executable, __file__, "--child", "--iterations", str(args.iterations), "--seed", str(args.seed),
           "--mode", args.mode]
    out = subprocess.run(cmd, env=env, capture_output=True, text=True, check=True)
    return json.loads(out.stdout.strip().splitlines()[-1])


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--iterations", type=int, default=20_000)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--mode", default="swap", choices=["swap", "two-part-leap-shift"])
    p.add_argument("--child", action="store_true", help=argparse.SUPPRESS)
    args = p.parse_args()
    if args.child:
        child(args)
        return
    nb = run_backend(False, args)
    np_ = run_backend(True, args)
    print(f"scaled simulation (N=300, n=20, C=3), {args.iterations} iterations, {args.mode} augmentation")
    for name, r in (("numba", nb), ("numpy", np_)):
        print(f"  {name:6s} warm-up {r['warmup']:7.2f} s   chain {r['wall']:8.2f} s   {r['per_iter_us']:8.1f} us/iter")
    gap = max((abs(a - b) for a, b in zip(nb["alphas"], np_["alphas"])), default=0.0)
    print(f"  speed-up {np_['wall'] / nb['wall']:.1f}x, identical integer draws: {nb['digest'] == np_['digest']}, "
          f"max alpha difference {gap:.1e}")


if __name__ == "__main__":
    main()
