"""Command-line surface: generate, convert, train, predict, evaluate,
bench, render.

Exit codes: 0 success, 1 internal error, 2 usage/contract error. Every
run that produces files also writes a manifest.json with config snapshot,
seed, and sha256 checksums.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from datetime import datetime, timedelta, timezone

import numpy as np

from . import __version__, baselines, cnn, datagen, evalbench, training
from . import traffic_image as ti
from .numerics import Rng


class UsageError(Exception):
    pass


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(out_dir, command, config, seed, files):
    manifest = {
        "tool_version": __version__,
        "command": command,
        "config": config,
        "seed": seed,
        "files": {os.path.relpath(p, out_dir): _sha256(p) for p in sorted(files)},
    }
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return path


def _read_matrices(data_dir):
    """All matrix CSVs in a directory, sorted by filename. Returns
    (list of TimeSpaceMatrix, v_max)."""
    names = sorted(n for n in os.listdir(data_dir)
                   if n.endswith(".csv") and not n.startswith("records"))
    if not names:
        raise UsageError(f"no matrix CSVs found in {data_dir}")
    matrices, vmaxes = [], set()
    for n in names:
        m, v = ti.read_matrix_csv(os.path.join(data_dir, n))
        matrices.append(m)
        vmaxes.add(v)
    if len(vmaxes) != 1:
        raise UsageError(f"inconsistent vmax across matrix CSVs in {data_dir}: {vmaxes}")
    return matrices, vmaxes.pop()


# --- subcommands ----------------------------------------------------------------

def cmd_generate(args):
    if args.config:
        with open(args.config) as f:
            cfg = datagen.config_from_text(f.read())
    else:
        cfg = datagen.SyntheticNetworkConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    os.makedirs(args.out, exist_ok=True)
    matrices = datagen.generate(cfg)
    rng = Rng(cfg.seed)
    files = []
    for day, m in enumerate(matrices):
        records = datagen.emit_gps(m, args.records_per_cell, args.jitter,
                                   rng.spawn(1000 + day), day_index=day,
                                   skip_missing=True)
        path = os.path.join(args.out, f"records_{m.day_label}.csv")
        ti.write_records_csv(path, records)
        files.append(path)
    cfg_path = os.path.join(args.out, "generator.cfg")
    with open(cfg_path, "w") as f:
        f.write(datagen.config_to_text(cfg))
    files.append(cfg_path)
    _write_manifest(args.out, "generate", datagen.config_to_text(cfg).split("\n"),
                    cfg.seed, files)
    print(f"generated {len(matrices)} days of records in {args.out}")
    return 0


def cmd_convert(args):
    names = sorted(n for n in os.listdir(args.in_dir)
                   if n.startswith("records") and n.endswith(".csv"))
    if not names:
        raise UsageError(f"no record CSVs found in {args.in_dir}")
    os.makedirs(args.out, exist_ok=True)
    matrices = []
    all_ids = None
    for n in names:
        records = ti.read_records_csv(os.path.join(args.in_dir, n))
        day = min(r[1] for r in records).replace(hour=0, minute=0, second=0, microsecond=0)
        if all_ids is None:
            all_ids = sorted({r[0] for r in records})
        series, rejected = ti.aggregate(records, args.interval, day,
                                        day + timedelta(days=1), section_ids=all_ids)
        if rejected:
            print(f"warning: {len(rejected)} rejected records in {n}", file=sys.stderr)
        series = ti.impute(series)
        label = n[len("records_"):-len(".csv")]
        matrices.append(ti.build_matrix(series, all_ids, label))
    v_max = args.vmax if args.vmax else ti.default_vmax(matrices)
    files = []
    for m in matrices:
        ti.normalize(m, v_max)   # contract check only; CSVs store km/h
        path = os.path.join(args.out, f"matrix_{m.day_label}.csv")
        ti.write_matrix_csv(path, m, v_max)
        files.append(path)
    _write_manifest(args.out, "convert", {"vmax": v_max, "interval": args.interval},
                    0, files)
    print(f"converted {len(matrices)} days (vmax={v_max:g}) into {args.out}")
    return 0


def _parse_model(model_id):
    if model_id not in evalbench.ALL_MODELS:
        raise UsageError(f"unknown model {model_id!r}; valid: {', '.join(evalbench.ALL_MODELS)}")
    return model_id


def _task_spec(task_id, q):
    if task_id not in ti.TASK_PRESETS:
        raise UsageError(f"invalid task {task_id}; valid tasks are 1-4")
    return ti.TaskSpec.preset(task_id, q)


def cmd_train(args):
    model_id = _parse_model(args.model)
    if model_id in ("ols", "knn", "rf"):
        raise UsageError("train handles gradient models (cnn-depth-1..4, mlp); "
                         "use bench for the statistical baselines")
    matrices, v_max = _read_matrices(args.data)
    task = _task_spec(args.task, matrices[0].q)
    grids = [(m.day_label, ti.normalize(m, v_max)) for m in matrices]
    fit_grids, val_grids = evalbench.split_days(grids, args.val_fraction)
    train_s, val_s = [], []
    for label, g in fit_grids:
        train_s.extend(ti.make_samples(g, task, label))
    for label, g in val_grids:
        val_s.extend(ti.make_samples(g, task, label))

    if model_id == "mlp":
        net = baselines.mlp_build(task.q, task.t_in, task.t_out,
                                  args.hidden, seed=args.seed)
    else:
        depth = int(model_id.rsplit("-", 1)[1])
        net = cnn.build_preset(depth, task.q, task.t_in, task.t_out,
                               divisor=args.divisor, seed=args.seed)
    tc = training.TrainConfig(learning_rate=args.lr, batch_size=args.batch,
                              max_epochs=args.epochs, patience=args.patience,
                              seed=args.seed)
    net, report = training.train(net, train_s, val_s, tc, v_max=v_max)
    net.meta["v_max"] = v_max
    net.meta["task"] = args.task
    cnn.save_network(args.out, net)
    report.to_csv(args.out + ".report.csv")
    print(f"trained {model_id} task {args.task}: best epoch {report.best_epoch}, "
          f"val MSE {report.val_mse[report.best_epoch - 1] * v_max ** 2:.3f} km/h^2")
    return 0


def cmd_predict(args):
    net = cnn.load_network(args.model)
    v_max = float(net.meta["v_max"])
    q, t_in = net.meta["q"], net.meta["t_in"]
    t_out = net.meta["t_out"]
    matrices, data_vmax = _read_matrices(args.data)
    if abs(data_vmax - v_max) > 1e-9:
        raise UsageError(f"model vmax {v_max:g} does not match data vmax {data_vmax:g}")
    os.makedirs(args.out, exist_ok=True)
    files = []
    for m in matrices:
        if m.q != q:
            raise UsageError(f"matrix {m.day_label} has {m.q} sections, model expects {q}")
        grid = ti.normalize(m, v_max)
        task = ti.TaskSpec(t_in, t_out, q)
        samples = ti.make_samples(grid, task, m.day_label)
        x = np.stack([s.input for s in samples])
        preds = np.concatenate([net.forward_batch(x[i:i + 256])[0]
                                for i in range(0, len(x), 256)])
        # stitch: each target column takes the freshest window's prediction
        stitched = np.zeros((q, m.n - t_in))
        for i, s in enumerate(samples):
            block = preds[i].reshape(q, t_out)
            stitched[:, i:i + t_out] = block
        out_m = ti.TimeSpaceMatrix(np.maximum(stitched * v_max, 0.0),
                                   m.section_order, m.day_label, m.interval_minutes)
        path = os.path.join(args.out, f"pred_{m.day_label}.csv")
        ti.write_matrix_csv(path, out_m, v_max)
        files.append(path)
    _write_manifest(args.out, "predict", {"model": os.path.basename(args.model)},
                    int(net.meta.get("seed", 0)), files)
    print(f"wrote {len(files)} prediction matrices to {args.out}")
    return 0


def cmd_evaluate(args):
    preds, pv = _read_matrices(args.pred)
    truths, tv = _read_matrices(args.truth)
    by_label = {m.day_label.replace("pred_", ""): m for m in preds}
    pairs = []
    for t in truths:
        key = t.day_label
        if key in by_label:
            pairs.append((by_label[key], t))
    if not pairs:
        raise UsageError("no prediction/truth day labels match")
    yh, yt = [], []
    for p, t in pairs:
        n = min(p.n, t.n)   # right-align: predictions cover the day's tail
        yh.append(p.grid[:, -n:] if p.n >= t.n else p.grid)
        yt.append(t.grid[:, -n:])
    yh = np.concatenate([a.ravel() for a in yh])
    yt = np.concatenate([a.ravel() for a in yt])
    mse_kmh2 = training.mse(yh, yt)
    acc = evalbench.accuracy(yh, yt)
    print(f"mse_kmh2={mse_kmh2!r} accuracy={acc!r} days={len(pairs)}")
    if args.out:
        with open(args.out, "w") as f:
            f.write("mse_kmh2,accuracy,days\n")
            f.write(f"{mse_kmh2!r},{acc!r},{len(pairs)}\n")
    return 0


def cmd_bench(args):
    matrices, v_max = _read_matrices(args.data)
    tasks = sorted({int(t) for t in args.tasks.split(",")})
    for t in tasks:
        if t not in ti.TASK_PRESETS:
            raise UsageError(f"invalid task {t}; valid tasks are 1-4")
    models = [_parse_model(m) for m in args.models.split(",")]
    n_test = args.test_days or max(1, round(0.2 * len(matrices)))
    if n_test >= len(matrices):
        raise UsageError(f"test split of {n_test} days leaves no training days")
    grids = [(m.day_label, ti.normalize(m, v_max)) for m in matrices]
    train_grids, test_grids = grids[:-n_test], grids[-n_test:]
    cfg = evalbench.BenchConfig(divisor=args.divisor)
    cfg.train_config.max_epochs = args.epochs
    results = evalbench.run_benchmark(train_grids, test_grids, tasks, models,
                                      v_max, cfg, seed=args.seed)
    os.makedirs(args.out, exist_ok=True)
    files = []
    for name, text in [("report.csv", evalbench.results_to_csv(results)),
                       ("timings.csv", evalbench.results_to_csv(results, include_timing=True)),
                       ("mse.txt", evalbench.results_table(results, "mse_kmh2")),
                       ("accuracy.txt", evalbench.results_table(results, "accuracy"))]:
        path = os.path.join(args.out, name)
        with open(path, "w") as f:
            f.write(text)
        files.append(path)
    # timings vary run to run; the manifest covers the deterministic report
    _write_manifest(args.out, "bench",
                    {"tasks": tasks, "models": models, "test_days": n_test,
                     "divisor": args.divisor, "epochs": args.epochs},
                    args.seed, [f for f in files if not f.endswith("timings.csv")])
    print(evalbench.results_table(results, "mse_kmh2"))
    return 0


def cmd_render(args):
    m, v_max = ti.read_matrix_csv(args.matrix)
    if args.vmax:
        v_max = args.vmax
    ti.write_pgm(args.out, m, v_max)
    print(f"wrote {args.out} ({m.q}x{m.n}, vmax={v_max:g})")
    return 0


# --- argument parsing -------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="trafficnet",
                                description="image-based network traffic speed forecasting")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="synthetic dataset -> speed-record CSVs")
    g.add_argument("--config", help="key=value generator config file")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, default=None)
    g.add_argument("--records-per-cell", type=int, default=2)
    g.add_argument("--jitter", type=float, default=1.0, help="per-record speed jitter sd, km/h")
    g.set_defaults(func=cmd_generate)

    c = sub.add_parser("convert", help="record CSVs -> imputed matrix CSVs")
    c.add_argument("--in", dest="in_dir", required=True)
    c.add_argument("--out", required=True)
    c.add_argument("--vmax", type=float, default=None)
    c.add_argument("--interval", type=float, default=2.0)
    c.set_defaults(func=cmd_convert)

    t = sub.add_parser("train", help="train a gradient model on matrix CSVs")
    t.add_argument("--data", required=True)
    t.add_argument("--model", default="cnn-depth-4")
    t.add_argument("--task", type=int, default=2)
    t.add_argument("--divisor", type=int, default=8)
    t.add_argument("--hidden", type=int, default=128, help="mlp hidden units")
    t.add_argument("--out", required=True)
    t.add_argument("--seed", type=int, default=42)
    t.add_argument("--lr", type=float, default=0.1)
    t.add_argument("--batch", type=int, default=64)
    t.add_argument("--epochs", type=int, default=100)
    t.add_argument("--patience", type=int, default=10)
    t.add_argument("--val-fraction", type=float, default=0.15)
    t.set_defaults(func=cmd_train)

    pr = sub.add_parser("predict", help="model + matrix CSVs -> prediction CSVs")
    pr.add_argument("--model", required=True)
    pr.add_argument("--data", required=True)
    pr.add_argument("--out", required=True)
    pr.set_defaults(func=cmd_predict)

    e = sub.add_parser("evaluate", help="MSE + accuracy of prediction CSVs vs truth")
    e.add_argument("--pred", required=True)
    e.add_argument("--truth", required=True)
    e.add_argument("--out", default=None)
    e.set_defaults(func=cmd_evaluate)

    b = sub.add_parser("bench", help="full model/task comparison tables")
    b.add_argument("--data", required=True)
    b.add_argument("--tasks", default="1,2,3,4")
    b.add_argument("--models", default="cnn-depth-4,ols,knn,rf,mlp")
    b.add_argument("--out", required=True)
    b.add_argument("--seed", type=int, default=42)
    b.add_argument("--divisor", type=int, default=8)
    b.add_argument("--epochs", type=int, default=100)
    b.add_argument("--test-days", type=int, default=None)
    b.set_defaults(func=cmd_bench)

    r = sub.add_parser("render", help="matrix CSV -> PGM heatmap")
    r.add_argument("--matrix", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--vmax", type=float, default=None)
    r.set_defaults(func=cmd_render)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # internal error, still one line for users
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
