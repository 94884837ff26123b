"""``etnet`` command line: synth, train, score, cluster, eval, attribute, export-latent.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
Every output file is fully computed before anything is written, so a failed
command leaves no partial outputs behind.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import data as dt
from . import metrics, tasks
from .config import FORMAT_VERSION, ConfigError, RunConfig, load_config, resolve_seed
from .model import IncompatibleFileError, build_model, dumps, load
from .numerics import NumericError
from .tasks import UsageError
from .training import TrainingDiverged, train

log = logging.getLogger("etnet")


# --------------------------------------------------------------------------
# output helpers


def _csv_text(header: list[str], rows) -> str:
    buf = io.StringIO()
    buf.write(f"{dt.CSV_MARKER} {FORMAT_VERSION}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def _json_text(doc: dict) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _commit(out_dir: Path, files: dict[str, str]) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, text in files.items():
        tmp = out_dir / f".{name}.tmp"
        tmp.write_text(text)
        tmp.replace(out_dir / name)
    for name in files:
        log.info("wrote %s", out_dir / name)


def _windows_to_csv(windows, ids) -> str:
    width = max((len(w) for w in windows), default=0)
    rows = [[wid] + [repr(float(v)) for v in w] for wid, w in zip(ids, windows)]
    return _csv_text(["window_id"] + [f"x{i}" for i in range(width)], rows)


def _require_file(path: str | None, what: str) -> Path:
    if path is None:
        raise UsageError(f"no {what} given")
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{what} not found: {path}")
    return p


def _read_windows(path: Path, cfg: RunConfig) -> tuple[np.ndarray, list[str]]:
    series = dt.load_windows(path, cfg.data.window_len, cfg.data.bin_len)
    if not series:
        raise UsageError(f"{path} holds no windows")
    lengths = {len(s) for s in series}
    if len(lengths) != 1:
        raise UsageError(f"{path}: windows differ in length {sorted(lengths)}")
    return np.array([s.values for s in series]), dt.load_window_ids(path)


def _out_dir(args, cfg: RunConfig) -> Path:
    return Path(args.out or cfg.out_dir or ".")


# --------------------------------------------------------------------------
# synthetic suites


def synthesize(cfg: RunConfig, seed: int) -> dict[str, tuple[np.ndarray, np.ndarray, list[str]]]:
    """Train and test sets for the configured protocol as ``{name: (windows, labels, kinds)}``."""
    s = cfg.synth
    train_rng, test_rng = (np.random.default_rng(q) for q in np.random.SeedSequence([seed, 7]).spawn(2))
    train_set = dt.wave_copies(s.copies, s.length, s.period, s.awgn_sigma, train_rng, random_phase=s.random_phase, phase_jitter=s.phase_jitter)
    if cfg.task == "anomaly":
        if s.contamination > 0 and len(train_set):
            train_set = dt.contaminate(train_set, s.contamination, train_rng, s.anomaly_types)
        else:
            train_set = dt.Dataset(train_set.windows, np.zeros(len(train_set), dtype=int), train_set.kinds)
        test_set = dt.anomaly_test_set(
            s.test_normals, s.test_anomalies_per_type, s.length, s.period, s.awgn_sigma, test_rng, s.anomaly_types
        )
    else:
        test_set = dt.wave_copies(s.test_copies, s.length, s.period, s.awgn_sigma, test_rng, random_phase=s.random_phase, phase_jitter=s.phase_jitter)
    return {
        "train": (train_set.windows, train_set.labels, train_set.kinds),
        "test": (test_set.windows, test_set.labels, test_set.kinds),
    }


def cmd_synth(args, cfg: RunConfig, seed: int) -> None:
    sets = synthesize(cfg, seed)
    files = {}
    for name, (windows, labels, kinds) in sets.items():
        ids = [f"{name}-{i:05d}" for i in range(len(windows))]
        files[f"{name}.csv"] = _windows_to_csv(windows, ids)
        files[f"{name}_truth.csv"] = _csv_text(
            ["window_id", "label", "kind"], [[i, int(l), k] for i, l, k in zip(ids, labels, kinds)]
        )
    manifest = {
        "format_version": FORMAT_VERSION,
        "kind": "etnet-synth-manifest",
        "seed": seed,
        "task": cfg.task,
        "synth": cfg.synth.model_dump(),
        "files": sorted(files),
        "counts": {name: int(len(v[0])) for name, v in sets.items()},
    }
    files["manifest.json"] = _json_text(manifest)
    _commit(_out_dir(args, cfg), files)


# --------------------------------------------------------------------------
# training and inference


def cmd_train(args, cfg: RunConfig, seed: int) -> None:
    path = _require_file(args.data or cfg.data.train, "training data file")
    windows, _ = _read_windows(path, cfg)
    tcfg = cfg.train_config(seed)
    if len(windows) < tcfg.gmm_k:
        raise UsageError(f"need at least gmm_k={tcfg.gmm_k} training windows, got {len(windows)}")
    model = build_model(tcfg, windows)
    model.extra.update({"training_data": path.name, "n_windows": int(len(windows))})
    model, reports = train(model, windows, tcfg)
    log_rows = [[r.epoch, r.branch, repr(r.recon_loss), repr(r.energy_loss), repr(r.total)] for r in reports]
    _commit(
        _out_dir(args, cfg),
        {
            "model.json": dumps(model),
            "train_log.csv": _csv_text(["epoch", "branch", "reconLoss", "energyLoss", "total"], log_rows),
        },
    )


def _model_and_data(args, cfg: RunConfig):
    model_path = _require_file(args.model, "model file")
    data_path = _require_file(args.data or cfg.data.test, "data file")
    model = load(model_path)
    windows, ids = _read_windows(data_path, cfg)
    return model, windows, ids


def cmd_score(args, cfg: RunConfig, seed: int) -> None:
    model, windows, ids = _model_and_data(args, cfg)
    s = tasks.branch_energies(model, windows)
    rows = [[i, repr(float(a)), repr(float(b)), repr(float(y))] for i, a, b, y in zip(ids, s.e_w, s.e_d, s.y)]
    _commit(_out_dir(args, cfg), {"scores.csv": _csv_text(["window_id", "E_W", "E_D", "y"], rows)})


def cmd_cluster(args, cfg: RunConfig, seed: int) -> None:
    model, windows, ids = _model_and_data(args, cfg)
    emb = tasks.embed(model, windows)
    labels, branches = tasks.pick_label(emb.gamma_w, emb.gamma_d)
    rows = [[i, b, int(l)] for i, b, l in zip(ids, branches, labels)]
    _commit(_out_dir(args, cfg), {"labels.csv": _csv_text(["window_id", "branch", "label"], rows)})


def cmd_export_latent(args, cfg: RunConfig, seed: int) -> None:
    model, windows, ids = _model_and_data(args, cfg)
    emb = tasks.embed(model, windows)
    dim = emb.z_w.shape[1]
    header = ["window_id"] + [f"w{i}" for i in range(dim)] + [f"d{i}" for i in range(dim)]
    rows = [[i] + [repr(float(v)) for v in row] for i, row in zip(ids, emb.joint)]
    _commit(_out_dir(args, cfg), {"latent.csv": _csv_text(header, rows)})


def cmd_attribute(args, cfg: RunConfig, seed: int) -> None:
    model, windows, ids = _model_and_data(args, cfg)
    if args.id is None:
        raise UsageError("attribute needs --id of the anomalous window")
    if args.id not in ids:
        raise UsageError(f"window id {args.id!r} not found in {args.data or cfg.data.test}")
    train_path = _require_file(args.train or cfg.data.train, "training data file")
    train_windows, train_ids = _read_windows(train_path, cfg)
    x_a = windows[ids.index(args.id)]
    n_points = args.points or cfg.attribution_points
    res = tasks.attribute(model, x_a, train_windows, n_points)
    z_cnt = res.z_center
    doc = {
        "format_version": FORMAT_VERSION,
        "anomaly_id": args.id,
        "branch": res.branch,
        "alphas": [float(a) for a in res.alphas],
        "reference_ids": [train_ids[i] for i in res.indices],
        "distances_to_center": [float(np.linalg.norm(z - z_cnt)) for z in res.latents],
        "score": float(tasks.anomaly_score(model, x_a)),
        "threshold": tasks.decision_threshold(model, train_windows, cfg.threshold_quantile),
    }
    _commit(_out_dir(args, cfg), {"attribution.json": _json_text(doc)})


# --------------------------------------------------------------------------
# evaluation


def cmd_eval(args, cfg: RunConfig, seed: int) -> None:
    pred_path = _require_file(args.data, "scores or labels file")
    truth_path = _require_file(args.truth or cfg.data.truth, "truth file")
    pred = dt.read_table(pred_path)
    truth = {row["window_id"]: row for row in dt.read_table(truth_path)}
    missing = [r["window_id"] for r in pred if r["window_id"] not in truth]
    if missing:
        raise UsageError(f"{len(missing)} window ids have no truth row, e.g. {missing[0]!r}")
    if not pred:
        raise UsageError(f"{pred_path} holds no rows")
    truth_labels = [int(truth[r["window_id"]]["label"]) for r in pred]
    if "y" in pred[0]:
        metric = "auc"
        value = metrics.auc([float(r["y"]) for r in pred], truth_labels)
    elif "label" in pred[0]:
        metric = "nmi"
        value = metrics.nmi([int(r["label"]) for r in pred], truth_labels)
    else:
        raise UsageError(f"{pred_path} has neither a 'y' nor a 'label' column")
    doc = {
        "format_version": FORMAT_VERSION,
        "metric": metric,
        "value": value,
        "n": len(pred),
        "config": {"predictions": pred_path.name, "truth": truth_path.name, "task": cfg.task},
    }
    _commit(_out_dir(args, cfg), {"metrics.json": _json_text(doc)})


# --------------------------------------------------------------------------
# entry point

COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "score": cmd_score,
    "cluster": cmd_cluster,
    "eval": cmd_eval,
    "attribute": cmd_attribute,
    "export-latent": cmd_export_latent,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run configuration JSON")
    common.add_argument("--seed", type=int, help="overrides the config seed and $ETNET_SEED")
    common.add_argument("--out", help="output directory")
    common.add_argument("--model", help="model JSON written by train")
    common.add_argument("--data", help="input CSV (windows, or scores/labels for eval)")
    common.add_argument("--quiet", action="store_true", help="only report errors")
    parser = argparse.ArgumentParser(prog="etnet", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common])
        if name == "eval":
            p.add_argument("--truth", help="truth CSV with window_id,label")
        if name == "attribute":
            p.add_argument("--id", help="window id of the anomaly to explain")
            p.add_argument("--train", help="training windows CSV")
            p.add_argument("--points", type=int, help="interpolation points on the reference line")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.ERROR if args.quiet else logging.INFO, format="%(levelname)s %(message)s", force=True
    )
    logging.getLogger("etnet.training").setLevel(logging.WARNING)
    try:
        cfg = load_config(args.config)
        seed = resolve_seed(args.seed, cfg)
        COMMANDS[args.command](args, cfg, seed)
    except (ConfigError, UsageError, IncompatibleFileError, dt.DataFormatError) as exc:
        log.error("%s", exc)
        return 2
    except (TrainingDiverged, NumericError, OSError) as exc:
        log.error("%s", exc)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
