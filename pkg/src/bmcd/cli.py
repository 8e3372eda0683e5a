"""Command-line pipeline: simulate -> select-clusters -> fit -> recommend -> evaluate -> calibrate.

A data directory holds ``clicks.csv`` and ``manifest.json`` plus ``truth.csv``
(simulated rankings) or ``heldout.csv`` (held-out clicks). Every later stage
writes into ``<data>/<method>/``.

Seeds: the master seed is ``seed`` from the config (or ``--seed``). Replicate r
of ``simulate`` uses ``replicate_seed(master, r)``; every other stage uses
``derive_seed(master, stage name)``. Both hash the pair with numpy's SeedSequence.
"""
from __future__ import annotations

import argparse
import logging
import sys
import warnings
import zlib
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import io
from ._backend import backend_name, set_threads
from .config import ConfigError, load_config
from .exceptions import BMCDError, ParameterError, StageDependencyError

logger = logging.getLogger("bmcd")

EXIT_CONFIG = 2
EXIT_MISSING = 3
EXIT_INPUT = 4


def derive_seed(master, tag):
    return int(np.random.SeedSequence([int(master), zlib.crc32(tag.encode())]).generate_state(1)[0])


def parse_c_range(text):
    a, sep, b = text.partition("..")
    try:
        lo, hi = (int(a), int(b)) if sep else (int(a), int(a))
    except ValueError:
        raise ConfigError("--c-range", f"expected A..B, got {text!r}") from None
    if lo < 1 or hi < lo:
        raise ConfigError("--c-range", f"empty range {text!r}")
    return list(range(lo, hi + 1))


def _load_data(data_dir):
    data_dir = Path(data_dir)
    man = io.read_manifest(data_dir / "manifest.json")
    shape = (int(man["n_users"]), int(man["n_items"]))
    return io.read_clicks(data_dir / "clicks.csv", shape), man


def _truth(data_dir, W, k):
    from .metrics import GroundTruth

    data_dir = Path(data_dir)
    if (data_dir / "truth.csv").exists():
        return GroundTruth.from_rankings(io.read_truth(data_dir / "truth.csv"), W.sum(axis=1), k)
    if (data_dir / "heldout.csv").exists():
        return GroundTruth.from_holdout(io.read_heldout(data_dir / "heldout.csv", W.shape), train_clicked=W)
    raise StageDependencyError(f"no truth.csv or heldout.csv in {data_dir}")


# --- commands ---------------------------------------------------------------


def cmd_simulate(args, cfg):
    from .datagen import replicate_seed, simulate

    out = Path(args.out) if args.out else cfg.output_root()
    R_total = args.replicates or cfg.sim.replicates
    dirs = []
    for r in range(R_total):
        seed = replicate_seed(cfg.seed, r)
        spec = cfg.sim.spec(seed)
        spec.validate()
        d = out / f"rep_{r:03d}" if R_total > 1 else out
        R, labels, W = simulate(spec)
        io.write_clicks(d / "clicks.csv", W)
        io.write_truth(d / "truth.csv", R)
        io.write_labels(d / "labels.csv", labels)
        io.write_manifest(d / "manifest.json", "simulate", asdict(cfg.sim), seed,
                          dict(n_users=W.shape[0], n_items=W.shape[1], replicate=r, note=spec.note,
                               master_seed=cfg.seed))
        dirs.append(d)
        print(f"replicate {r}: {d} users={W.shape[0]} items={W.shape[1]} mean clicks={W.sum(1).mean():.3f}")
    return 0


def cmd_split(args, cfg):
    from .datagen import split_holdout

    W, man = _load_data(args.data)
    spec = replace(cfg.split, seed=derive_seed(cfg.seed, "split"))
    with warnings.catch_warnings(record=True):
        warnings.simplefilter("always")
        sp = split_holdout(W, spec)
    out = Path(args.out)
    io.write_clicks(out / "clicks.csv", sp.train)
    io.write_heldout(out / "heldout.csv", sp.heldout)
    io.write_rows(out / "users.csv", ["user_id", "source_user_id"], enumerate(sp.users))
    io.write_manifest(out / "manifest.json", "split", asdict(spec), spec.seed,
                      dict(n_users=sp.train.shape[0], n_items=sp.train.shape[1], excluded=sp.n_excluded))
    print(f"kept {sp.users.size} users, excluded {sp.n_excluded}")
    return 0


def _table(cfg, n):
    from .mallows import PartitionTable

    return PartitionTable.build(n, method=cfg.partition, mc_samples=cfg.mc_samples,
                                seed=derive_seed(cfg.seed, "partition"))


def cmd_select(args, cfg):
    from .sampler import kmeans_select, mwcd, run_chain

    W, _ = _load_data(args.data)
    cs = parse_c_range(args.c_range)
    if args.method == "kmeans":
        if cs[-1] > W.shape[0]:
            raise ConfigError("--c-range", f"C={cs[-1]} exceeds the number of users {W.shape[0]}")
        curve = kmeans_select(W, cs, seed=derive_seed(cfg.seed, "kmeans"))
        label = "wcss"
    else:
        table = _table(cfg, W.shape[1])
        curve = {}
        for C in cs:
            chain = replace(cfg.chain, n_clusters=C, iter_max=cfg.select.iter_max, burn_in=cfg.select.burn_in,
                            thinning=cfg.select.thinning, seed=derive_seed(cfg.seed, f"select-{C}"),
                            threads=cfg.threads)
            curve[C] = mwcd(run_chain(W, chain, table))
            print(f"C={C} mwcd={curve[C]:.3f}", flush=True)
        label = "mwcd"
    io.write_rows(Path(args.data) / f"select_{args.method}.csv", ["n_clusters", label], sorted(curve.items()))
    for C, v in sorted(curve.items()):
        print(f"{C}\t{v!r}")
    if args.method == "mwcd":
        print(f"chosen C={min(curve, key=lambda c: (curve[c], c))}")
    return 0


def cmd_fit_bmcd(args, cfg):
    from .sampler import run_chain

    W, _ = _load_data(args.data)
    chain = replace(cfg.chain, seed=derive_seed(cfg.seed, "bmcd"), threads=cfg.threads)
    if args.clusters:
        chain = replace(chain, n_clusters=args.clusters)
    chain.validate(W.shape[1])
    table = _table(cfg, W.shape[1])
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        samples = run_chain(W, chain, table)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    out = Path(args.data) / "bmcd"
    samples.save(out / "posterior.npz")
    io.write_diagnostics(out / "diagnostics.csv", samples)
    io.write_partition_table(out / "partition_table.csv", table)
    io.write_manifest(out / "manifest.json", "fit-bmcd", asdict(chain), chain.seed,
                      dict(stats=samples.stats, n_samples=samples.n_samples, partition=cfg.partition))
    print(f"stored {samples.n_samples} samples; acceptance rho={samples.stats['rho_accepted']}/"
          f"{samples.stats['rho_proposed']} alpha={samples.stats['alpha_accepted']}/"
          f"{samples.stats['alpha_proposed']} latent={samples.stats['r_tilde_accepted']}/"
          f"{samples.stats['r_tilde_proposed']}")
    return 0


def cmd_fit_cf(args, cfg):
    from .cf import cross_validate, fit_als

    W, _ = _load_data(args.data)
    X = W.astype(np.float64)
    cf = replace(cfg.cf, seed=derive_seed(cfg.seed, "cf"))
    out = Path(args.data) / "cf"
    cv_rows = []
    if cfg.cv.enabled and not args.no_cv:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            res = cross_validate(X, folds=cfg.cv.folds, k=cfg.eval.k, n_hide=cfg.cv.n_hide,
                                 min_retained=cfg.cv.min_retained, base=cf, seed=derive_seed(cfg.seed, "cv"))
        cf = res.best
        cv_rows = res.table()
        io.write_rows(out / "cv.csv", ["beta", "theta", "L", "mean_accuracy"], cv_rows)
    model, losses = fit_als(X, cf)
    io.write_factors(out, model)
    io.write_rows(out / "loss.csv", ["half_sweep", "loss"], enumerate(losses, 1))
    io.write_manifest(out / "manifest.json", "fit-cf", asdict(cf), cf.seed, dict(final_loss=float(losses[-1])))
    print(f"beta={cf.beta} theta={cf.theta} L={cf.L} final loss={losses[-1]:.6f}")
    return 0


def _recommend(data_dir, method, k):
    from .cf import recommend_top_k_cf
    from .recommend import compute_tpp, recommend_popular, recommend_top_k
    from .sampler import PosteriorSamples

    W, _ = _load_data(data_dir)
    d = Path(data_dir)
    if method == "bmcd":
        samples = PosteriorSamples.load(d / "bmcd" / "posterior.npz")
        return recommend_top_k(compute_tpp(samples, W, k)), W
    if method == "cf":
        model = io.read_factors(io.require(d / "cf"))
        return recommend_top_k_cf(model, W, k), W
    return recommend_popular(W, k), W


def _rec_path(data_dir, method, k):
    return Path(data_dir) / method / f"recommendations_k{k}.csv"


def cmd_recommend(args, cfg):
    k = args.k or cfg.eval.k
    recs, _ = _recommend(args.data, args.method, k)
    io.write_recommendations(_rec_path(args.data, args.method, k), recs)
    print(f"{len(recs)} recommendations for {recs.n_users} users")
    return 0


def cmd_evaluate(args, cfg):
    from .metrics import evaluate

    k = args.k or cfg.eval.k
    W, _ = _load_data(args.data)
    recs = io.read_recommendations(_rec_path(args.data, args.method, k))
    truth = _truth(args.data, W, k)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        record = evaluate(recs, truth, W, cfg.popular_cutoff(W.shape[1]))
    record = dict(method=args.method, k=k, **record)
    out = Path(args.data) / args.method
    io.write_metrics(out / f"metrics_k{k}.json", record, out / f"metrics_k{k}.csv")
    for key, v in record.items():
        print(f"{key}\t{'NA' if v is None else v}")
    return 0


def cmd_calibrate(args, cfg):
    from .recommend import calibration_bins, cutoff_sweep

    k = args.k or cfg.eval.k
    W, _ = _load_data(args.data)
    recs = io.read_recommendations(_rec_path(args.data, args.method, k))
    hits = _truth(args.data, W, k).hits(recs)
    table = calibration_bins(recs, hits, cfg.eval.bin_width)
    rows = cutoff_sweep(recs, hits, cfg.eval.thresholds)
    out = Path(args.data) / args.method
    io.write_calibration(out / f"calibration_k{k}.csv", table)
    io.write_cutoff(out / f"cutoff_k{k}.csv", rows)
    for t, m, acc in rows:
        print(f"threshold={t:.2f} n={m} accuracy={'NA' if acc != acc else f'{acc:.4f}'}")
    return 0


COMMANDS = {
    "simulate": cmd_simulate,
    "split": cmd_split,
    "select-clusters": cmd_select,
    "fit-bmcd": cmd_fit_bmcd,
    "fit-cf": cmd_fit_cf,
    "recommend": cmd_recommend,
    "evaluate": cmd_evaluate,
    "calibrate": cmd_calibrate,
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value config file")
    common.add_argument("--seed", type=int, help="override the master seed")
    common.add_argument("--threads", type=int, help="worker threads (1 = deterministic mode)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="bmcd", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="simulate click data from a Mallows mixture")
    s.add_argument("--out", help="output directory (default: $BMCD_OUTPUT_ROOT or ./bmcd_out)")
    s.add_argument("--replicates", type=int)

    s = sub.add_parser("split", parents=[common], help="hold out clicks per user")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)

    s = sub.add_parser("select-clusters", parents=[common], help="MWCD or K-means curve over C")
    s.add_argument("--data", required=True)
    s.add_argument("--method", choices=("mwcd", "kmeans"), default="mwcd")
    s.add_argument("--c-range", required=True, help="A..B")

    s = sub.add_parser("fit-bmcd", parents=[common], help="run the MCMC")
    s.add_argument("--data", required=True)
    s.add_argument("--clusters", type=int)

    s = sub.add_parser("fit-cf", parents=[common], help="fit the ALS baseline")
    s.add_argument("--data", required=True)
    s.add_argument("--no-cv", action="store_true", help="skip the grid search")

    for name in ("recommend", "evaluate", "calibrate"):
        s = sub.add_parser(name, parents=[common])
        s.add_argument("--data", required=True)
        s.add_argument("--method", choices=("bmcd", "cf", "popular"), default="bmcd")
        s.add_argument("--k", type=int)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = replace(cfg, seed=args.seed)
        if args.threads is not None:
            cfg = replace(cfg, threads=args.threads)
        cfg.validate()
        if cfg.threads > 1:
            set_threads(cfg.threads)
        logger.debug("backend: %s", backend_name())
        return COMMANDS[args.command](args, cfg)
    except StageDependencyError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (ConfigError, ParameterError) as exc:
        print(f"error: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (BMCDError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
