import numpy as np
import pytest

from trafficnet import datagen, evalbench, traffic_image as ti
from trafficnet.numerics import Rng


class TestClassifySpeed:
    def test_reference_bins(self):
        assert evalbench.classify_speed(10) == "heavy"
        assert evalbench.classify_speed(55) == "free"
        assert evalbench.classify_speed(30) == "moderate"

    def test_boundaries_half_open_above(self):
        assert evalbench.classify_speed(0) == "heavy"
        assert evalbench.classify_speed(20) == "heavy"
        assert evalbench.classify_speed(40) == "moderate"
        assert evalbench.classify_speed(40.0001) == "free"

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            evalbench.classify_speed(-1)


class TestAccuracy:
    def test_perfect(self):
        y = np.array([10.0, 30.0, 50.0])
        assert evalbench.accuracy(y, y) == 1.0

    def test_all_wrong(self):
        assert evalbench.accuracy([10.0, 30.0, 50.0], [30.0, 50.0, 10.0]) == 0.0

    def test_two_of_three(self):
        assert evalbench.accuracy([15.0, 35.0, 50.0], [10.0, 45.0, 55.0]) == pytest.approx(2 / 3)

    def test_negative_predictions_clamped(self):
        assert evalbench.accuracy([-5.0], [10.0]) == 1.0

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            evalbench.accuracy([1.0], [1.0, 2.0])

    def test_classify_array_agrees_with_scalar(self):
        vals = np.array([0.0, 5.0, 20.0, 20.5, 40.0, 40.5, 100.0])
        names = ["heavy", "moderate", "free"]
        for v, code in zip(vals, evalbench._classify_array(vals)):
            assert names[code] == evalbench.classify_speed(v)


class TestEvaluatePredictions:
    def test_model_agnostic_and_denorm_consistent(self):
        from trafficnet import training
        rng = Rng(1)
        yh = rng.uniform(0, 1, (10, 6))
        y = rng.uniform(0, 1, (10, 6))
        a = evalbench.evaluate_predictions(yh, y, 80.0)
        b = evalbench.evaluate_predictions(yh.copy(), y.copy(), 80.0)
        assert a == b
        assert a[0] == pytest.approx(training.mse(yh.ravel(), y.ravel()) * 80.0 ** 2)


def tiny_dataset(seed=42, days=5, q=6):
    cfg = datagen.SyntheticNetworkConfig(q=q, days=days, bottlenecks=[(3, 0.7)],
                                         noise_sd=1.0, missing_rate=0.0, seed=seed)
    mats = datagen.generate(cfg)
    v_max = ti.default_vmax(mats)
    grids = [(m.day_label, ti.normalize(m, v_max)) for m in mats]
    return grids, v_max


class TestRunBenchmark:
    def test_single_model_single_row(self):
        grids, v_max = tiny_dataset()
        cfg = evalbench.BenchConfig()
        cfg.train_config.max_epochs = 2
        res = evalbench.run_benchmark(grids[:4], grids[4:], [1], ["cnn-depth-1"],
                                      v_max, cfg)
        assert len(res) == 1
        assert res[0].model == "cnn-depth-1" and res[0].task == 1
        assert res[0].mse_kmh2 >= 0 and 0 <= res[0].accuracy <= 1

    def test_unknown_model_rejected(self):
        grids, v_max = tiny_dataset()
        with pytest.raises(ValueError):
            evalbench.run_benchmark(grids[:4], grids[4:], [1], ["svm"], v_max)

    def test_knn_memorization(self):
        # test windows identical to training windows -> exact recall
        grids, v_max = tiny_dataset(seed=3, days=2)
        same = [grids[0], grids[0]]
        res = evalbench.run_benchmark(same, [grids[0]], [1], ["knn"], v_max,
                                      evalbench.BenchConfig(knn_k=1))
        assert res[0].mse_kmh2 == pytest.approx(0.0, abs=1e-18)
        assert res[0].accuracy == 1.0

    def test_deterministic(self):
        grids, v_max = tiny_dataset()
        cfg = evalbench.BenchConfig()
        cfg.train_config.max_epochs = 2
        runs = [evalbench.run_benchmark(grids[:4], grids[4:], [1],
                                        ["cnn-depth-1", "ols"], v_max, cfg, seed=7)
                for _ in range(2)]
        for a, b in zip(*runs):
            assert (a.model, a.task, a.mse_kmh2, a.accuracy) == \
                (b.model, b.task, b.mse_kmh2, b.accuracy)


class TestReports:
    def _results(self):
        return [evalbench.EvalResult("ols", 1, 25.5, 0.91, 1.2, 0.1),
                evalbench.EvalResult("knn", 1, 51.7, 0.90, 0.4, 2.0)]

    def test_csv_excludes_timing_by_default(self):
        text = evalbench.results_to_csv(self._results())
        assert text.splitlines()[0] == "model,task,mse_kmh2,accuracy"
        assert "1.2" not in text

    def test_timing_csv(self):
        text = evalbench.results_to_csv(self._results(), include_timing=True)
        assert "train_seconds" in text.splitlines()[0]

    def test_table_layout(self):
        table = evalbench.results_table(self._results())
        lines = table.splitlines()
        assert lines[0].split() == ["model", "task1"]
        assert lines[1].startswith("knn")
        assert lines[2].startswith("ols")


def test_split_days():
    grids = [(f"d{i}", np.zeros((2, 30))) for i in range(10)]
    train, val = evalbench.split_days(grids, 0.15)
    assert len(train) == 8 and len(val) == 2
    with pytest.raises(ValueError):
        evalbench.split_days(grids[:1], 0.9)
