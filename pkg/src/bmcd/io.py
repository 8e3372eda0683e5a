"""CSV/JSON/NPZ formats of the pipeline.

All text files are UTF-8 with LF line endings; floats are written with
``repr`` so they parse back to the same value, and undefined values are
written as ``NA`` (CSV) or ``null`` (JSON). Ids are 0-based integers.
"""
from __future__ import annotations

import csv
import hashlib
import io as _io
import json
import math
import zipfile
from pathlib import Path

import numpy as np

from .exceptions import InputError, StageDependencyError
from .recommend import CalibrationTable, RecommendationList

NA = "NA"


def _fmt(x):
    if x is None:
        return NA
    if isinstance(x, str):
        return x
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    return NA if math.isnan(x) else repr(x)


def _num(s, kind=float):
    if s == NA:
        return math.nan if kind is float else None
    return kind(s)


def require(path):
    path = Path(path)
    if not path.exists():
        raise StageDependencyError(f"missing input {path}; run the stage that produces it first")
    return path


def write_rows(path, header, rows, comment=None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        if comment is not None:
            f.write(f"# {comment}\n")
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def read_rows(path, header=None):
    """(comment or None, header, rows as lists of strings)."""
    with open(require(path), encoding="utf-8", newline="") as f:
        text = f.read()
    lines = text.split("\n")
    comment = None
    if lines and lines[0].startswith("# "):
        comment = lines[0][2:]
        lines = lines[1:]
    rows = list(csv.reader([ln for ln in lines if ln]))
    if not rows:
        raise InputError(f"{path} is empty")
    got = rows[0]
    if header is not None and list(got) != list(header):
        raise InputError(f"{path}: expected header {','.join(header)}, found {','.join(got)}")
    return comment, got, rows[1:]


def parse_comment(comment):
    """``key=value key=value`` -> dict of strings."""
    out = {}
    for tok in (comment or "").split():
        k, _, v = tok.partition("=")
        out[k] = v
    return out


# --- clicks and truth -------------------------------------------------------


def write_clicks(path, W):
    W = np.asarray(W, bool)
    u, i = np.nonzero(W)
    write_rows(path, ["user_id", "item_id"], zip(u, i))


def read_pairs(path, shape=None):
    _, _, rows = read_rows(path, ["user_id", "item_id"])
    a = np.array(rows, dtype=np.int64).reshape(-1, 2)
    if shape is None:
        if a.size == 0:
            raise InputError(f"{path} has no rows and no shape was given")
        shape = (int(a[:, 0].max()) + 1, int(a[:, 1].max()) + 1)
    W = np.zeros(shape, bool)
    if a.size and (a.min() < 0 or a[:, 0].max() >= shape[0] or a[:, 1].max() >= shape[1]):
        raise InputError(f"{path}: ids outside {shape}")
    W[a[:, 0], a[:, 1]] = True
    return W


read_clicks = read_pairs
write_heldout = write_clicks
read_heldout = read_pairs


def write_truth(path, R):
    R = np.asarray(R, np.int64)
    N, n = R.shape
    write_rows(path, ["user_id", "item_id", "rank"],
               ((j, i, R[j, i]) for j in range(N) for i in range(n)))


def read_truth(path):
    _, _, rows = read_rows(path, ["user_id", "item_id", "rank"])
    a = np.array(rows, dtype=np.int64).reshape(-1, 3)
    N, n = int(a[:, 0].max()) + 1, int(a[:, 1].max()) + 1
    R = np.zeros((N, n), np.int64)
    R[a[:, 0], a[:, 1]] = a[:, 2]
    return R


def write_labels(path, labels):
    write_rows(path, ["user_id", "cluster"], enumerate(np.asarray(labels)))


def read_labels(path):
    _, _, rows = read_rows(path, ["user_id", "cluster"])
    return np.array([int(r[1]) for r in rows], np.int64)


# --- recommendations, calibration, cutoffs ----------------------------------

REC_HEADER = ["user_id", "rank_in_list", "item_id", "tpp"]


def write_recommendations(path, recs):
    comment = f"n_users={recs.n_users} k={recs.k}"
    write_rows(path, REC_HEADER, zip(recs.user, recs.position, recs.item, recs.score), comment)


def read_recommendations(path):
    comment, _, rows = read_rows(path, REC_HEADER)
    meta = parse_comment(comment)
    a = np.array([[int(r[0]), int(r[1]), int(r[2])] for r in rows], np.int64).reshape(-1, 3)
    score = np.array([float(r[3]) for r in rows], np.float64)
    return RecommendationList(a[:, 0], a[:, 1], a[:, 2], score, int(meta["n_users"]), int(meta["k"]))


CAL_HEADER = ["bin_low", "bin_high", "mean_tpp", "hit_rate", "count"]


def write_calibration(path, table):
    write_rows(path, CAL_HEADER, zip(table.bin_low, table.bin_high, table.mean_tpp, table.hit_rate,
                                     table.count))


def read_calibration(path):
    _, _, rows = read_rows(path, CAL_HEADER)
    cols = list(zip(*rows)) if rows else [()] * 5
    f = [np.array([float(v) for v in c]) for c in cols[:4]]
    return CalibrationTable(*f, np.array([int(v) for v in cols[4]], np.int64))


CUTOFF_HEADER = ["threshold", "n_recommendations", "accuracy"]


def write_cutoff(path, rows):
    write_rows(path, CUTOFF_HEADER, rows)


def read_cutoff(path):
    _, _, rows = read_rows(path, CUTOFF_HEADER)
    return [(float(r[0]), int(r[1]), _num(r[2])) for r in rows]


# --- partition table --------------------------------------------------------


def write_partition_table(path, table):
    comment = f"n={table.n} method={table.method} mc_samples={table.mc_samples}"
    write_rows(path, ["alpha", "log_z"], zip(table.alpha_grid, table.log_z), comment)


def read_partition_table(path):
    from .mallows import PartitionTable

    comment, _, rows = read_rows(path, ["alpha", "log_z"])
    meta = parse_comment(comment)
    grid = np.array([float(r[0]) for r in rows])
    log_z = np.array([float(r[1]) for r in rows])
    return PartitionTable(int(meta["n"]), grid, log_z, meta["method"], int(meta["mc_samples"]))


# --- chain diagnostics ------------------------------------------------------


def diagnostics_header(C):
    return (["iteration"] + [f"alpha_{c}" for c in range(C)] + ["wcd"]
            + [f"size_{c}" for c in range(C)] + ["acc_rho", "acc_alpha", "acc_r_tilde", "log_post"])


def write_diagnostics(path, samples):
    C = samples.n_clusters
    rows = ([it] + list(a) + [w] + list(sz) + list(acc) + [lp]
            for it, a, w, sz, acc, lp in zip(samples.iterations, samples.alphas, samples.wcd,
                                              samples.cluster_sizes, samples.acceptance, samples.log_post))
    write_rows(path, diagnostics_header(C), rows)


def read_diagnostics(path):
    _, header, rows = read_rows(path)
    out = {h: [] for h in header}
    for r in rows:
        for h, v in zip(header, r):
            out[h].append(v)
    kinds = {h: (int if h == "iteration" or h == "wcd" or h.startswith("size_") else float) for h in header}
    return {h: np.array([_num(v, kinds[h]) for v in vals]) for h, vals in out.items()}


# --- factor model -----------------------------------------------------------


def write_factors(directory, model):
    directory = Path(directory)
    comment = f"L={model.L} beta={model.beta!r} theta={model.theta!r}"
    header = ["id"] + [f"f{l}" for l in range(model.L)]
    write_rows(directory / "user_factors.csv", header, ([j] + list(r) for j, r in enumerate(model.U)), comment)
    write_rows(directory / "item_factors.csv", header, ([i] + list(r) for i, r in enumerate(model.V)), comment)


def read_factors(directory):
    from .cf import FactorModel

    directory = Path(directory)
    mats = []
    meta = {}
    for name in ("user_factors.csv", "item_factors.csv"):
        comment, _, rows = read_rows(directory / name)
        meta = parse_comment(comment)
        L = int(meta["L"])
        mats.append(np.array([[float(v) for v in r[1:]] for r in rows]).reshape(-1, L))
    return FactorModel(mats[0], mats[1], float(meta["beta"]), float(meta["theta"]))


# --- metrics ----------------------------------------------------------------


def write_metrics(path_json, record, path_csv=None):
    path_json = Path(path_json)
    path_json.parent.mkdir(parents=True, exist_ok=True)
    clean = {k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in record.items()}
    path_json.write_text(json.dumps(clean, indent=2, sort_keys=False) + "\n", encoding="utf-8")
    if path_csv is not None:
        write_rows(path_csv, list(clean), [list(clean.values())])


def read_metrics(path_json):
    return json.loads(require(path_json).read_text(encoding="utf-8"))


# --- manifest and arrays ----------------------------------------------------


def canonical_json(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=_json_default)


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, (np.ndarray, tuple)):
        return list(o)
    raise TypeError(f"not serialisable: {type(o)}")


def config_hash(obj):
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()


def write_manifest(path, stage, config, seed, extra=None):
    from . import __version__

    body = dict(stage=stage, version=__version__, seed=int(seed), config_hash=config_hash(config),
                config=json.loads(canonical_json(config)))
    if extra:
        body.update(json.loads(canonical_json(extra)))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(body, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return body


def read_manifest(path):
    return json.loads(require(path).read_text(encoding="utf-8"))


_EPOCH = (1980, 1, 1, 0, 0, 0)


def save_npz(path, arrays):
    """Like ``numpy.savez_compressed`` but with fixed zip timestamps (byte-stable)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        for name in sorted(arrays):
            buf = _io.BytesIO()
            np.lib.format.write_array(buf, np.asarray(arrays[name]), allow_pickle=False)
            info = zipfile.ZipInfo(name + ".npy", date_time=_EPOCH)
            info.compress_type = zipfile.ZIP_DEFLATED
            info.external_attr = 0o644 << 16
            zf.writestr(info, buf.getvalue())


def load_npz(path):
    with np.load(require(path), allow_pickle=False) as f:
        return {k: f[k] for k in f.files}
