"""Model-agnostic evaluation: MSE in km/h^2, three-class traffic-state
accuracy, and the Tasks 1-4 benchmark harness with wall-time reporting."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import baselines, cnn, training
from .traffic_image import TaskSpec, make_samples

HEAVY, MODERATE, FREE = "heavy", "moderate", "free"


@dataclass
class EvalResult:
    model: str
    task: int
    mse_kmh2: float
    accuracy: float
    train_seconds: float
    predict_seconds: float


def classify_speed(v: float) -> str:
    """Traffic state bins: heavy (0, 20], moderate (20, 40], free (> 40)."""
    if v < 0:
        raise ValueError(f"negative speed {v}")
    if v <= 20:
        return HEAVY
    if v <= 40:
        return MODERATE
    return FREE


def _classify_array(v: np.ndarray) -> np.ndarray:
    return np.digitize(v, [20.0, 40.0], right=True)


def accuracy(yhat, y) -> float:
    """Fraction of cells whose predicted and true traffic states agree.

    Inputs are denormalized km/h; predictions are clamped at 0 before
    classification.
    """
    yhat = np.asarray(yhat, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if yhat.shape != y.shape:
        raise ValueError(f"shape mismatch: {yhat.shape} vs {y.shape}")
    if (y < 0).any():
        raise ValueError("ground truth contains negative speeds")
    return float(np.mean(_classify_array(np.maximum(yhat, 0.0)) == _classify_array(y)))


def evaluate_predictions(yhat_norm, y_norm, v_max: float):
    """(MSE km/h^2, class accuracy) from normalized prediction/target arrays."""
    mse_norm = training.mse(np.asarray(yhat_norm).ravel(), np.asarray(y_norm).ravel())
    acc = accuracy(np.asarray(yhat_norm) * v_max, np.asarray(y_norm) * v_max)
    return mse_norm * v_max ** 2, acc


ALL_MODELS = ["cnn-depth-1", "cnn-depth-2", "cnn-depth-3", "cnn-depth-4",
              "ols", "knn", "rf", "mlp"]


@dataclass
class BenchConfig:
    divisor: int = 8
    train_config: training.TrainConfig = None
    val_fraction: float = 0.15
    knn_k: int = 10
    forest: baselines.ForestConfig = None
    mlp_hidden: int = 128

    def __post_init__(self):
        if self.train_config is None:
            self.train_config = training.TrainConfig(
                learning_rate=0.1, momentum=0.9, batch_size=64,
                max_epochs=100, patience=10)
        if self.forest is None:
            self.forest = baselines.ForestConfig()


def split_days(grids, val_fraction: float):
    """Last ceil(fraction) of training days become the validation carve-out."""
    n_val = max(1, int(round(len(grids) * val_fraction)))
    if n_val >= len(grids):
        raise ValueError("not enough days for a validation carve-out")
    return grids[:-n_val], grids[-n_val:]


def _samples_for(grids, task: TaskSpec):
    out = []
    for label, grid in grids:
        out.extend(make_samples(grid, task, label))
    return out


def _fit_predict(model_id, task_id, task, train_s, val_s, test_s, cfg: BenchConfig, seed):
    xt = np.stack([s.input for s in test_s])
    yt = np.stack([s.target for s in test_s])
    t0 = time.perf_counter()
    if model_id.startswith("cnn-depth-") or model_id == "mlp":
        if model_id == "mlp":
            net = baselines.mlp_build(task.q, task.t_in, task.t_out,
                                      cfg.mlp_hidden, seed=seed)
        else:
            depth = int(model_id.rsplit("-", 1)[1])
            net = cnn.build_preset(depth, task.q, task.t_in, task.t_out,
                                   divisor=cfg.divisor, seed=seed)
        tc = training.TrainConfig(**{**cfg.train_config.__dict__, "seed": seed})
        net, _report = training.train(net, train_s, val_s, tc)
        train_sec = time.perf_counter() - t0
        t1 = time.perf_counter()
        preds = np.concatenate([net.forward_batch(xt[i:i + 256])[0]
                                for i in range(0, len(xt), 256)])
    else:
        fit_s = train_s + val_s   # non-iterative models use all training days
        if model_id == "ols":
            model = baselines.OlsModel.fit(fit_s, task.q, task.t_out)
        elif model_id == "knn":
            model = baselines.KnnModel.fit(fit_s, task.q, task.t_out, cfg.knn_k)
        elif model_id == "rf":
            fc = baselines.ForestConfig(**{**cfg.forest.__dict__, "seed": seed})
            model = baselines.ForestModel.fit(fit_s, task.q, task.t_out, fc)
        else:
            raise ValueError(f"unknown model id {model_id!r}; valid: {ALL_MODELS}")
        train_sec = time.perf_counter() - t0
        t1 = time.perf_counter()
        preds = model.predict_samples(test_s)
    predict_sec = time.perf_counter() - t1
    return preds, yt, train_sec, predict_sec


def run_benchmark(train_grids, test_grids, tasks, models, v_max: float,
                  cfg: BenchConfig = None, seed: int = 42):
    """Train each model per task on the train split, score on the test split.

    train_grids/test_grids: lists of (day_label, normalized [q, N] grid).
    Returns EvalResults ordered by (task, model id) for stable output.
    """
    cfg = cfg or BenchConfig()
    for m in models:
        if m not in ALL_MODELS:
            raise ValueError(f"unknown model id {m!r}; valid: {ALL_MODELS}")
    q = train_grids[0][1].shape[0]
    results = []
    for task_id in sorted(tasks):
        task = TaskSpec.preset(task_id, q)
        fit_grids, val_grids = split_days(train_grids, cfg.val_fraction)
        train_s = _samples_for(fit_grids, task)
        val_s = _samples_for(val_grids, task)
        test_s = _samples_for(test_grids, task)
        for model_id in sorted(models):
            preds, yt, train_sec, predict_sec = _fit_predict(
                model_id, task_id, task, train_s, val_s, test_s, cfg, seed)
            mse_kmh2, acc = evaluate_predictions(preds, yt, v_max)
            results.append(EvalResult(model_id, task_id, mse_kmh2, acc,
                                      train_sec, predict_sec))
    return results


def results_to_csv(results, include_timing: bool = False) -> str:
    """Report CSV. Wall times go to a separate file so the metric report
    stays byte-identical across reruns."""
    if include_timing:
        lines = ["model,task,train_seconds,predict_seconds"]
        for r in results:
            lines.append(f"{r.model},{r.task},{r.train_seconds:.3f},{r.predict_seconds:.3f}")
    else:
        lines = ["model,task,mse_kmh2,accuracy"]
        for r in results:
            lines.append(f"{r.model},{r.task},{r.mse_kmh2!r},{r.accuracy!r}")
    return "\n".join(lines) + "\n"


def results_table(results, metric: str = "mse_kmh2") -> str:
    """Aligned text table: rows = models, columns = tasks."""
    tasks = sorted({r.task for r in results})
    models = sorted({r.model for r in results})
    cell = {(r.model, r.task): getattr(r, metric) for r in results}
    widths = [max(len("model"), max(len(m) for m in models))]
    header = ["model"] + [f"task{t}" for t in tasks]
    rows = [header]
    for m in models:
        rows.append([m] + [f"{cell.get((m, t), float('nan')):.3f}" for t in tasks])
    widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
    return "\n".join("  ".join(v.ljust(w) for v, w in zip(r, widths)) for r in rows) + "\n"
