import numpy as np
import pytest

from trafficnet import baselines, cnn
from trafficnet.numerics import Rng
from trafficnet.traffic_image import Sample


def planted_linear_dataset(rng, q=2, m=40, t_in=4, t_out=3):
    x = rng.uniform(0, 1, (q, m, t_in))
    w = rng.uniform(-1, 1, (q, t_out, t_in))
    b = rng.uniform(-1, 1, (q, t_out))
    y = np.einsum("qmi,qoi->qmo", x, w) + b[:, None, :]
    return baselines.SectionDataset(x, y), w, b


class TestOls:
    def test_recovers_planted_model(self):
        ds, w, b = planted_linear_dataset(Rng(1))
        fitted = baselines.ols_fit(ds)
        assert np.abs(fitted[:, :, 0] - b).max() < 1e-6
        assert np.abs(fitted[:, :, 1:] - w).max() < 1e-6

    def test_constant_signal(self):
        x = Rng(2).uniform(0, 1, (1, 30, 3))
        y = np.full((1, 30, 2), 0.7)
        fitted = baselines.ols_fit(baselines.SectionDataset(x, y))
        assert np.abs(fitted[0, :, 0] - 0.7).max() < 1e-6
        assert np.abs(fitted[0, :, 1:]).max() < 1e-6

    def test_underdetermined_errors(self):
        ds = baselines.SectionDataset(np.zeros((1, 1, 2)), np.zeros((1, 1, 1)))
        with pytest.raises(ValueError):
            baselines.ols_fit(ds)

    def test_residuals_orthogonal_to_features(self):
        rng = Rng(3)
        x = rng.uniform(0, 1, (1, 50, 4))
        y = rng.uniform(0, 1, (1, 50, 2))
        ds = baselines.SectionDataset(x, y)
        fitted = baselines.ols_fit(ds)
        resid = y - baselines.ols_predict(fitted, x)
        x1 = np.hstack([np.ones((50, 1)), x[0]])
        assert np.abs(x1.T @ resid[0]).max() < 1e-6

    def test_local_optimality_spot_check(self):
        rng = Rng(4)
        x = rng.uniform(0, 1, (1, 40, 3))
        y = rng.uniform(0, 1, (1, 40, 2))
        ds = baselines.SectionDataset(x, y)
        fitted = baselines.ols_fit(ds)
        base_mse = np.mean((baselines.ols_predict(fitted, x) - y) ** 2)
        for o in range(2):
            for f in range(4):
                for delta in (1e-3, -1e-3):
                    w2 = fitted.copy()
                    w2[0, o, f] += delta
                    assert np.mean((baselines.ols_predict(w2, x) - y) ** 2) >= base_mse - 1e-15


class TestKnn:
    def test_exact_match_k1(self):
        rng = Rng(5)
        x = rng.uniform(0, 1, (20, 4))
        y = rng.uniform(0, 1, (20, 2))
        for i in range(20):
            assert np.array_equal(baselines.knn_predict(x, y, x[i], k=1), y[i])

    def test_k_equals_all_rows(self):
        rng = Rng(6)
        x = rng.uniform(0, 1, (12, 3))
        y = rng.uniform(0, 1, (12, 2))
        out = baselines.knn_predict(x, y, rng.uniform(0, 1, (3,)), k=12)
        assert np.allclose(out, y.mean(axis=0))

    def test_matches_brute_force_oracle(self):
        rng = Rng(7)
        x = rng.uniform(0, 1, (50, 5))
        y = rng.uniform(0, 1, (50, 3))
        for _ in range(10):
            q = rng.uniform(0, 1, (5,))
            # oracle: sort all distances, average the 10 nearest targets
            d = np.sqrt(((x - q) ** 2).sum(axis=1))
            idx = sorted(range(50), key=lambda i: (d[i], i))[:10]
            expected = y[idx].mean(axis=0)
            assert np.array_equal(baselines.knn_predict(x, y, q, k=10), expected)

    def test_tie_breaks_to_lower_row(self):
        x = np.array([[0.0], [1.0], [1.0]])
        y = np.array([[10.0], [20.0], [30.0]])
        assert baselines.knn_predict(x, y, np.array([1.0]), k=1)[0] == 20.0

    def test_too_few_rows_errors(self):
        with pytest.raises(ValueError):
            baselines.knn_predict(np.zeros((3, 2)), np.zeros((3, 1)), np.zeros(2), k=10)


class TestForest:
    def test_single_distinct_row(self):
        x = np.tile([[1.0, 2.0]], (8, 1))
        y = np.tile([[5.0, 6.0]], (8, 1))
        trees = baselines.forest_fit(x, y, baselines.ForestConfig(seed=1))
        out = baselines.forest_predict(trees, np.array([9.0, 9.0]))
        assert np.array_equal(out, [5.0, 6.0])

    def test_max_depth_zero_predicts_global_mean(self):
        rng = Rng(8)
        x = rng.uniform(0, 1, (30, 3))
        y = np.full((30, 2), 0.4)  # constant target: every bootstrap mean equals it
        cfg = baselines.ForestConfig(max_depth=0, seed=2)
        trees = baselines.forest_fit(x, y, cfg)
        out = baselines.forest_predict(trees, x[:5])
        assert np.allclose(out, 0.4)

    def test_learns_piecewise_constant_signal(self):
        rng = Rng(9)
        x = rng.uniform(0, 1, (200, 2))
        x[:, 0] = np.where(x[:, 0] > 0.5, x[:, 0] + 0.1, x[:, 0] - 0.1)  # margin at the cut
        y = np.where(x[:, 0:1] > 0.5, 3.0, -1.0)
        cfg = baselines.ForestConfig(max_depth=6, min_leaf=2,
                                     feature_subsample=1.0, seed=3)
        trees = baselines.forest_fit(x, y, cfg)
        preds = baselines.forest_predict(trees, x)
        train_mse = np.mean((preds - y) ** 2)
        assert train_mse < 1e-3 * y.var()

    def test_deterministic_given_seed(self):
        rng = Rng(10)
        x = rng.uniform(0, 1, (60, 4))
        y = rng.uniform(0, 1, (60, 2))
        q = rng.uniform(0, 1, (5, 4))
        a = baselines.forest_predict(baselines.forest_fit(x, y, baselines.ForestConfig(seed=4)), q)
        b = baselines.forest_predict(baselines.forest_fit(x, y, baselines.ForestConfig(seed=4)), q)
        assert np.array_equal(a, b)

    def test_empty_dataset_errors(self):
        with pytest.raises(ValueError):
            baselines.forest_fit(np.zeros((0, 2)), np.zeros((0, 1)), baselines.ForestConfig())


class TestMlp:
    def test_reference_configuration_dims(self):
        net = baselines.mlp_build(236, 20, 5, 1000)
        dense = [l for l in net.layers if isinstance(l, cnn.DenseLayer)]
        assert [(d.in_dim, d.out_dim) for d in dense] == \
            [(4720, 1000), (1000, 1000), (1000, 1000), (1000, 1180)]

    def test_overfit_smoke_h64(self):
        from trafficnet import training
        rng = Rng(11)
        samples = [Sample(rng.uniform(0, 1, (1, 3, 4)), rng.uniform(0, 1, (6,)))
                   for _ in range(5)]
        net = baselines.mlp_build(3, 4, 2, 64, seed=12)
        cfg = training.TrainConfig(learning_rate=0.05, batch_size=5,
                                   max_epochs=500, patience=500)
        _, rep = training.train(net, samples, samples, cfg)
        assert min(rep.train_mse) < 1e-2

    def test_zero_weights_constant_output(self):
        net = baselines.mlp_build(3, 4, 2, 8)
        for _, _, arr in net.parameters():
            arr[...] = 0.0
        net.layers[-1].bias[...] = 0.25
        y, _ = net.forward(Rng(13).uniform(0, 1, (1, 3, 4)))
        assert np.all(y == 0.25)


class TestSampleSchema:
    def test_section_dataset_row_count(self):
        rng = Rng(14)
        samples = [Sample(rng.uniform(0, 1, (1, 3, 4)), rng.uniform(0, 1, (6,)))
                   for _ in range(7)]
        ds = baselines.section_dataset(samples, 3, 2)
        assert ds.features.shape == (3, 7, 4)
        assert ds.targets.shape == (3, 7, 2)

    def test_model_wrappers_share_schema(self):
        rng = Rng(15)
        samples = [Sample(rng.uniform(0, 1, (1, 2, 3)), rng.uniform(0, 1, (4,)))
                   for _ in range(25)]
        for model in (baselines.OlsModel.fit(samples, 2, 2),
                      baselines.KnnModel.fit(samples, 2, 2, k=5),
                      baselines.ForestModel.fit(samples, 2, 2,
                                                baselines.ForestConfig(seed=5))):
            preds = model.predict_samples(samples)
            assert preds.shape == (25, 4)


class TestSerialization:
    def test_roundtrips(self, tmp_path):
        rng = Rng(16)
        samples = [Sample(rng.uniform(0, 1, (1, 2, 3)), rng.uniform(0, 1, (4,)))
                   for _ in range(25)]
        query = samples[:3]
        for name, model in [("ols", baselines.OlsModel.fit(samples, 2, 2)),
                            ("knn", baselines.KnnModel.fit(samples, 2, 2, k=5)),
                            ("rf", baselines.ForestModel.fit(samples, 2, 2,
                                                             baselines.ForestConfig(seed=6)))]:
            path = tmp_path / f"{name}.bin"
            model.save(path)
            loaded = baselines.load_baseline(path)
            assert np.array_equal(model.predict_samples(query),
                                  loaded.predict_samples(query))
