"""MSE objective, backpropagation training with momentum SGD, early
stopping with best-checkpoint restore, and a finite-difference gradient
checker."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .cnn import Network
from .numerics import Rng


class TrainingDiverged(RuntimeError):
    pass


def mse(yhat, y) -> float:
    """(1/n) sum of squared errors."""
    yhat = np.asarray(yhat, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if yhat.shape != y.shape:
        raise ValueError(f"length mismatch: {yhat.shape} vs {y.shape}")
    if yhat.size == 0:
        raise ValueError("mse of empty vectors")
    return float(np.mean((yhat - y) ** 2))


def backward(net: Network, caches, yhat, y):
    """Exact per-sample MSE gradients for every parameter tensor.

    caches must come from the matching forward call on the same network.
    Returns {layer index: {param name: gradient}}.
    """
    yhat = np.asarray(yhat, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if yhat.shape != y.shape:
        raise ValueError("prediction/target length mismatch")
    n = yhat.size
    dout = (2.0 / n) * (yhat - y)
    return net.backward_batch(dout[None], caches)


@dataclass
class TrainConfig:
    learning_rate: float = 1e-2
    momentum: float = 0.9
    batch_size: int = 32
    max_epochs: int = 100
    patience: int = 5
    min_delta: float = 0.0
    seed: int = 42

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise ValueError("batch_size, max_epochs, patience must be positive")
        if self.min_delta < 0:
            raise ValueError("min_delta must be non-negative")


@dataclass
class TrainReport:
    train_mse: list = field(default_factory=list)   # normalized scale
    val_mse: list = field(default_factory=list)
    epoch_seconds: list = field(default_factory=list)
    stopped_epoch: int = 0
    best_epoch: int = 0
    v_max: float = 1.0

    def to_csv(self, path):
        with open(path, "w") as f:
            f.write("epoch,train_mse_norm,val_mse_norm,train_mse_kmh2,val_mse_kmh2,seconds\n")
            s = self.v_max ** 2
            for e, (tr, va, sec) in enumerate(zip(self.train_mse, self.val_mse,
                                                  self.epoch_seconds), start=1):
                f.write(f"{e},{tr!r},{va!r},{tr * s!r},{va * s!r},{sec:.3f}\n")


class EarlyStopper:
    """Patience-based stopping on a validation loss trace.

    A loss counts as improvement only if it beats the best seen by more
    than min_delta; after `patience` consecutive non-improving epochs the
    trace is stopped.
    """

    def __init__(self, patience: int, min_delta: float = 0.0):
        self.patience = patience
        self.min_delta = min_delta
        self.best = np.inf
        self.best_epoch = 0
        self.bad_epochs = 0
        self.epoch = 0

    def update(self, val_loss: float) -> bool:
        """Record one epoch's validation loss; returns True to stop."""
        self.epoch += 1
        if self.best - val_loss > self.min_delta:
            self.best = val_loss
            self.best_epoch = self.epoch
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
        return self.bad_epochs >= self.patience


def _stack_samples(samples):
    x = np.stack([np.asarray(s.input, dtype=np.float64) for s in samples])
    y = np.stack([np.asarray(s.target, dtype=np.float64) for s in samples])
    return x, y


def _eval_mse(net: Network, x, y, chunk: int = 256) -> float:
    total = 0.0
    with np.errstate(over="ignore"):
        for i in range(0, len(x), chunk):
            yhat, _ = net.forward_batch(x[i:i + chunk])
            total += float(np.sum((yhat - y[i:i + chunk]) ** 2))
    return total / (len(x) * y.shape[1])


def train(net: Network, train_samples, val_samples, config: TrainConfig,
          v_max: float = 1.0, val_mse_fn=None):
    """Minibatch SGD with momentum and early stopping.

    One epoch is one seeded-shuffled full pass; gradients are averaged over
    the batch. After each epoch the validation MSE is scored and the best
    parameter state checkpointed; the returned network carries the
    best-epoch parameters. val_mse_fn, when given, replaces the validation
    scoring (testing hook for stubbed loss traces).

    Returns (net, TrainReport); net is mutated in place.
    """
    if not train_samples or (not val_samples and val_mse_fn is None):
        raise ValueError("train and validation sets must be non-empty")
    xt, yt = _stack_samples(train_samples)
    if val_mse_fn is None:
        xv, yv = _stack_samples(val_samples)
        val_mse_fn = lambda n: _eval_mse(n, xv, yv)

    rng = Rng(config.seed)
    velocity = {(i, name): np.zeros_like(arr) for i, name, arr in net.parameters()}
    stopper = EarlyStopper(config.patience, config.min_delta)
    report = TrainReport(v_max=v_max)
    best_state = net.get_state()
    out_dim = yt.shape[1]

    for epoch in range(1, config.max_epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(len(xt))
        sq_sum = 0.0
        for start in range(0, len(order), config.batch_size):
            idx = order[start:start + config.batch_size]
            xb, yb = xt[idx], yt[idx]
            yhat, caches = net.forward_batch(xb)
            err = yhat - yb
            with np.errstate(over="ignore"):
                sq_sum += float(np.sum(err ** 2))
            # mean over the batch of per-sample MSE gradients
            dout = (2.0 / (out_dim * len(idx))) * err
            grads = net.backward_batch(dout, caches)
            for i, name, arr in net.parameters():
                g = grads[i][name]
                v = velocity[(i, name)]
                v *= config.momentum
                v -= config.learning_rate * g
                arr += v
        train_mse = sq_sum / (len(xt) * out_dim)
        if not np.isfinite(train_mse):
            raise TrainingDiverged(
                f"train MSE became non-finite at epoch {epoch}; lower the learning rate")
        val_mse = float(val_mse_fn(net))
        report.train_mse.append(train_mse)
        report.val_mse.append(val_mse)
        report.epoch_seconds.append(time.perf_counter() - t0)
        stop = stopper.update(val_mse)
        if stopper.best_epoch == epoch:
            best_state = net.get_state()
        report.stopped_epoch = epoch
        if stop:
            break

    report.best_epoch = stopper.best_epoch
    net.set_state(best_state)
    return net, report


@dataclass
class GradCheckReport:
    passed: bool
    max_rel_err: float
    worst: tuple  # (layer index, param name, flat index)
    checked: int


def grad_check(net: Network, sample, eps: float = 1e-5,
               tolerance: float = 1e-4, max_params: int = 2000) -> GradCheckReport:
    """Compare analytic gradients against central finite differences.

    Checks every parameter when the network has at most max_params of
    them, otherwise a deterministic evenly-spaced subsample. Near-zero
    pairs (|analytic - numeric| < 1e-8) pass via the absolute fallback.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    x = np.asarray(sample.input, dtype=np.float64)
    y = np.asarray(sample.target, dtype=np.float64)

    yhat, caches = net.forward(x)
    grads = backward(net, caches, yhat, y)

    def loss():
        out, _ = net.forward(x)
        return mse(out, y)

    entries = []  # (layer, name, arr, analytic grad)
    total = 0
    for i, name, arr in net.parameters():
        entries.append((i, name, arr, grads[i][name]))
        total += arr.size

    if total <= max_params:
        picks = [(e, j) for e in range(len(entries)) for j in range(entries[e][2].size)]
    else:
        flat_ids = np.linspace(0, total - 1, max_params).astype(int)
        bounds = np.cumsum([0] + [e[2].size for e in entries])
        picks = []
        for fid in flat_ids:
            e = int(np.searchsorted(bounds, fid, side="right") - 1)
            picks.append((e, int(fid - bounds[e])))

    max_err = 0.0
    worst = (None, None, None)
    for e, j in picks:
        i, name, arr, g = entries[e]
        flat = arr.reshape(-1)
        orig = flat[j]
        flat[j] = orig + eps
        lp = loss()
        flat[j] = orig - eps
        lm = loss()
        flat[j] = orig
        numeric = (lp - lm) / (2 * eps)
        analytic = g.reshape(-1)[j]
        diff = abs(analytic - numeric)
        err = 0.0 if diff < 1e-8 else diff / max(abs(analytic), abs(numeric))
        if err > max_err:
            max_err = err
            worst = (i, name, j)
    return GradCheckReport(max_err < tolerance, max_err, worst, len(picks))
