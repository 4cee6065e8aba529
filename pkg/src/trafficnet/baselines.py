"""Per-section statistical baselines: OLS, k-nearest-neighbors, random
forest, and a fully connected MLP.

OLS/KNN/RF see only a section's own recent speeds (no cross-section
signal); the MLP is network-wide, built from the dense layers of the CNN
stack and trained with the training module.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cnn import DenseLayer, FlattenLayer, Network, ReluLayer
from .numerics import Rng


@dataclass
class SectionDataset:
    """Per-section supervised rows: features [q, M, t_in], targets [q, M, t_out]."""
    features: np.ndarray
    targets: np.ndarray

    @property
    def q(self):
        return self.features.shape[0]


def section_dataset(samples, q: int, t_out: int) -> SectionDataset:
    """Split network samples into independent per-section rows."""
    x = np.stack([np.asarray(s.input, dtype=np.float64)[0] for s in samples])   # [M, q, t_in]
    y = np.stack([np.asarray(s.target, dtype=np.float64).reshape(q, t_out) for s in samples])
    return SectionDataset(x.transpose(1, 0, 2).copy(), y.transpose(1, 0, 2).copy())


# --- ordinary least squares --------------------------------------------------

def ols_fit(dataset: SectionDataset, jitter: float = 1e-8):
    """Per-section linear heads via normal equations with ridge jitter.

    Returns weights [q, t_out, t_in+1]; column 0 is the intercept.
    """
    q, m, t_in = dataset.features.shape
    if m < t_in + 1:
        raise ValueError(f"need at least t_in+1={t_in + 1} rows, got {m}")
    out = np.empty((q, dataset.targets.shape[2], t_in + 1))
    for s in range(q):
        x1 = np.hstack([np.ones((m, 1)), dataset.features[s]])
        a = x1.T @ x1 + jitter * np.eye(t_in + 1)
        try:
            w = np.linalg.solve(a, x1.T @ dataset.targets[s])
        except np.linalg.LinAlgError:
            raise ValueError(f"degenerate design matrix for section {s}")
        out[s] = w.T
    return out


def ols_predict(weights, features):
    """features [q, M, t_in] -> predictions [q, M, t_out]."""
    q, m, _ = features.shape
    x1 = np.concatenate([np.ones((q, m, 1)), features], axis=2)
    return np.einsum("qmf,qof->qmo", x1, weights)


# --- k nearest neighbors ------------------------------------------------------

def knn_predict(train_features, train_targets, query, k: int = 10):
    """Mean target of the k nearest training rows (Euclidean distance).

    Distance ties break toward the lower row index. train_features [M, t_in],
    train_targets [M, t_out], query [t_in] or [B, t_in].
    """
    if len(train_features) < k:
        raise ValueError(f"need at least k={k} training rows, got {len(train_features)}")
    query = np.asarray(query, dtype=np.float64)
    single = query.ndim == 1
    query = np.atleast_2d(query)
    d2 = ((train_features[None, :, :] - query[:, None, :]) ** 2).sum(axis=2)
    nearest = np.argsort(d2, axis=1, kind="stable")[:, :k]
    preds = train_targets[nearest].mean(axis=1)
    return preds[0] if single else preds


# --- random forest ------------------------------------------------------------

@dataclass
class ForestConfig:
    n_trees: int = 10
    max_depth: int = 12
    min_leaf: int = 5
    feature_subsample: float = 1.0 / 3.0
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1 or self.max_depth < 0 or self.min_leaf < 1:
            raise ValueError("invalid forest configuration")
        if not 0 < self.feature_subsample <= 1:
            raise ValueError("feature_subsample must be in (0, 1]")


class Tree:
    """Flat-array regression tree; feature[i] == -1 marks a leaf."""

    def __init__(self):
        self.feature = []
        self.threshold = []
        self.left = []
        self.right = []
        self.value = []

    def _add(self, feature, threshold, value):
        self.feature.append(feature)
        self.threshold.append(threshold)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(value)
        return len(self.feature) - 1

    def predict(self, row):
        i = 0
        while self.feature[i] >= 0:
            i = self.left[i] if row[self.feature[i]] <= self.threshold[i] else self.right[i]
        return self.value[i]


def _best_split(x, y, feat_ids, min_leaf):
    """Greedy variance-reduction split; returns (feature, threshold) or None."""
    m = len(x)
    best = None
    best_score = np.inf
    for f in feat_ids:
        order = np.argsort(x[:, f], kind="stable")
        xs = x[order, f]
        ys = y[order]
        csum = np.cumsum(ys, axis=0)
        csq = np.cumsum((ys ** 2).sum(axis=1))
        total_sum = csum[-1]
        total_sq = csq[-1]
        for i in range(min_leaf, m - min_leaf + 1):
            if xs[i - 1] == xs[i]:
                continue
            # within-child sum of squared deviations, summed over outputs
            ls = csum[i - 1]
            score = (csq[i - 1] - (ls @ ls) / i) + \
                    ((total_sq - csq[i - 1]) - ((total_sum - ls) @ (total_sum - ls)) / (m - i))
            if score < best_score - 1e-15:
                best_score = score
                best = (f, 0.5 * (xs[i - 1] + xs[i]))
    return best


def _grow(tree: Tree, x, y, cfg: ForestConfig, rng: Rng, depth: int) -> int:
    mean = y.mean(axis=0)
    if depth >= cfg.max_depth or len(x) < 2 * cfg.min_leaf or np.allclose(y, y[0]):
        return tree._add(-1, 0.0, mean)
    n_feat = max(1, int(round(x.shape[1] * cfg.feature_subsample)))
    feat_ids = rng.permutation(x.shape[1])[:n_feat]
    split = _best_split(x, y, feat_ids, cfg.min_leaf)
    if split is None:
        return tree._add(-1, 0.0, mean)
    f, thr = split
    node = tree._add(f, thr, mean)
    mask = x[:, f] <= thr
    tree.left[node] = _grow(tree, x[mask], y[mask], cfg, rng, depth + 1)
    tree.right[node] = _grow(tree, x[~mask], y[~mask], cfg, rng, depth + 1)
    return node


def forest_fit(features, targets, cfg: ForestConfig, rng: Rng = None):
    """Fit one forest on [M, t_in] features and [M, t_out] targets.

    Each tree sees a seeded bootstrap resample; splits greedily minimize
    summed target variance over a random feature subset.
    """
    if len(features) == 0:
        raise ValueError("empty dataset")
    if rng is None:
        rng = Rng(cfg.seed)
    trees = []
    for _ in range(cfg.n_trees):
        idx = rng.integers(0, len(features), len(features))
        tree = Tree()
        _grow(tree, features[idx], targets[idx], cfg, rng, 0)
        trees.append(tree)
    return trees


def forest_predict(trees, query):
    """Mean over trees; query [t_in] or [B, t_in]."""
    query = np.asarray(query, dtype=np.float64)
    single = query.ndim == 1
    query = np.atleast_2d(query)
    out = np.stack([[t.predict(row) for t in trees] for row in query]).mean(axis=1)
    return out[0] if single else out


# --- MLP ----------------------------------------------------------------------

def mlp_build(q: int, t_in: int, t_out: int, hidden_units: int,
              n_hidden: int = 3, seed: int = 0) -> Network:
    """Network-wide fully connected model: Flatten -> (Dense -> ReLU) x n -> Dense."""
    if hidden_units < 1 or n_hidden < 1:
        raise ValueError("hidden_units and n_hidden must be >= 1")
    rng = Rng(seed)
    layers = [FlattenLayer()]
    dim = q * t_in
    for _ in range(n_hidden):
        layers += [DenseLayer(dim, hidden_units, rng), ReluLayer()]
        dim = hidden_units
    layers.append(DenseLayer(dim, q * t_out, rng))
    meta = {"kind": "mlp", "q": q, "t_in": t_in, "t_out": t_out,
            "hidden_units": hidden_units, "n_hidden": n_hidden}
    return Network(layers, (1, q, t_in), meta)


# --- model wrappers with a common predict-on-samples surface -------------------

class OlsModel:
    def __init__(self, weights):
        self.weights = weights

    @classmethod
    def fit(cls, samples, q, t_out):
        return cls(ols_fit(section_dataset(samples, q, t_out)))

    def predict_samples(self, samples):
        q, t_out = self.weights.shape[0], self.weights.shape[1]
        ds = section_dataset(samples, q, t_out)
        return ols_predict(self.weights, ds.features).transpose(1, 0, 2).reshape(len(samples), -1)

    def save(self, path, meta=None):
        from .modelio import write_container
        write_container(path, "OLS1", dict(meta or {}), {"weights": self.weights})


class KnnModel:
    def __init__(self, features, targets, k=10):
        self.features = features    # [q, M, t_in]
        self.targets = targets
        self.k = k

    @classmethod
    def fit(cls, samples, q, t_out, k=10):
        ds = section_dataset(samples, q, t_out)
        return cls(ds.features, ds.targets, k)

    def predict_samples(self, samples):
        q, _, t_out = self.targets.shape
        ds = section_dataset(samples, q, t_out)
        preds = np.stack([
            knn_predict(self.features[s], self.targets[s], ds.features[s], self.k)
            for s in range(q)
        ])
        return preds.transpose(1, 0, 2).reshape(len(samples), -1)

    def save(self, path, meta=None):
        from .modelio import write_container
        m = {"k": self.k}
        m.update(meta or {})
        write_container(path, "KNN1", m,
                        {"features": self.features, "targets": self.targets})


class ForestModel:
    def __init__(self, forests, t_out):
        self.forests = forests      # one list of trees per section
        self.t_out = t_out

    @classmethod
    def fit(cls, samples, q, t_out, cfg: ForestConfig = None):
        cfg = cfg or ForestConfig()
        ds = section_dataset(samples, q, t_out)
        forests = [forest_fit(ds.features[s], ds.targets[s], cfg, Rng(cfg.seed).spawn(s))
                   for s in range(q)]
        return cls(forests, t_out)

    def predict_samples(self, samples):
        q = len(self.forests)
        ds = section_dataset(samples, q, self.t_out)
        preds = np.stack([forest_predict(self.forests[s], ds.features[s])
                          for s in range(q)])
        return preds.transpose(1, 0, 2).reshape(len(samples), -1)

    def save(self, path, meta=None):
        from .modelio import write_container
        tensors = {}
        for s, trees in enumerate(self.forests):
            for t, tree in enumerate(trees):
                p = f"sec{s}.tree{t}"
                tensors[f"{p}.feature"] = np.asarray(tree.feature, dtype=np.float64)
                tensors[f"{p}.threshold"] = np.asarray(tree.threshold)
                tensors[f"{p}.left"] = np.asarray(tree.left, dtype=np.float64)
                tensors[f"{p}.right"] = np.asarray(tree.right, dtype=np.float64)
                tensors[f"{p}.value"] = np.stack(tree.value)
        m = {"q": len(self.forests), "n_trees": len(self.forests[0]), "t_out": self.t_out}
        m.update(meta or {})
        write_container(path, "RF1", m, tensors)


def load_baseline(path):
    """Load any baseline container written by the save methods above."""
    from .modelio import read_container
    tag, meta, tensors = read_container(path)
    if tag == "OLS1":
        return OlsModel(tensors["weights"])
    if tag == "KNN1":
        return KnnModel(tensors["features"], tensors["targets"], int(meta["k"]))
    if tag == "RF1":
        forests = []
        for s in range(int(meta["q"])):
            trees = []
            for t in range(int(meta["n_trees"])):
                p = f"sec{s}.tree{t}"
                tree = Tree()
                tree.feature = [int(v) for v in tensors[f"{p}.feature"]]
                tree.threshold = list(tensors[f"{p}.threshold"])
                tree.left = [int(v) for v in tensors[f"{p}.left"]]
                tree.right = [int(v) for v in tensors[f"{p}.right"]]
                tree.value = list(tensors[f"{p}.value"])
                trees.append(tree)
            forests.append(trees)
        return ForestModel(forests, int(meta["t_out"]))
    raise ValueError(f"not a baseline container: tag {tag}")
