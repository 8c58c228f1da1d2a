import json

import numpy as np
import pytest

from distill_tsad.augment import AugmentSpec
from distill_tsad.core import Config, DataError, TimeSeriesDataset, WindowBatch, make_rng


class TestMakeRng:
    def test_same_seed_same_stream(self):
        a = make_rng(0).random(100)
        b = make_rng(0).random(100)
        np.testing.assert_array_equal(a, b)

    def test_different_seeds_differ(self):
        a = make_rng(0).random(100)
        b = make_rng(1).random(100)
        assert not np.array_equal(a, b)

    def test_spawned_children_are_deterministic(self):
        a = [g.random(10) for g in make_rng(7).spawn(3)]
        b = [g.random(10) for g in make_rng(7).spawn(3)]
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x, y)


class TestConfig:
    def test_json_round_trip_defaults(self):
        cfg = Config()
        again = Config.from_json(cfg.to_json())
        assert again == cfg

    def test_json_round_trip_custom(self):
        cfg = Config(
            window_size=64, patch_size=16, patch_stride=8, feature_dim=32,
            student_layers=2, teacher_layers=4, prototype_count=8, head_count=4,
            learning_rate=3e-4, batch_size=16, epochs=7, patience=3,
            contrastive_weight=0.25,
            augmentation=AugmentSpec(kinds=("scale",), segment_fraction=(0.1, 0.9),
                                     jitter_sigma=0.2, warp_knots=6),
            threshold_quantile=0.95, seed=42,
        )
        again = Config.from_json(cfg.to_json())
        assert again == cfg

    def test_json_field_names_are_pinned(self):
        keys = set(json.loads(Config().to_json()))
        assert keys == {
            "window_size", "patch_size", "patch_stride", "feature_dim",
            "student_layers", "teacher_layers", "prototype_count", "head_count",
            "learning_rate", "batch_size", "epochs", "patience",
            "contrastive_weight", "augmentation", "threshold_quantile", "seed",
        }
        aug_keys = set(json.loads(Config().to_json())["augmentation"])
        assert aug_keys == {"kinds", "segment_fraction", "jitter_sigma",
                            "scale_range", "warp_knots"}

    def test_defaults_match_published_values(self):
        cfg = Config()
        assert cfg.window_size == 32
        assert cfg.patch_size == 8
        assert cfg.head_count == 8
        assert cfg.prototype_count == 32
        assert cfg.learning_rate == pytest.approx(1e-4)
        assert cfg.contrastive_weight == pytest.approx(0.1)
        assert cfg.batch_size == 128
        assert cfg.epochs == 100
        assert cfg.patience == 10
        assert cfg.teacher_layers == 6

    @pytest.mark.parametrize("field,value", [
        ("threshold_quantile", 0.0),
        ("threshold_quantile", 1.0),
        ("contrastive_weight", -0.1),
        ("epochs", 0),
        ("prototype_count", 0),
        ("learning_rate", 0.0),
    ])
    def test_rejects_bad_values(self, field, value):
        with pytest.raises(ValueError):
            Config(**{field: value})

    def test_patch_count_drops_remainder(self):
        assert Config(window_size=32, patch_size=8, patch_stride=8).patch_count == 4
        assert Config(window_size=10, patch_size=8, patch_stride=8).patch_count == 1


class TestTimeSeriesDataset:
    def test_rejects_nan(self):
        values = np.array([[0.0, np.nan, 1.0]])
        with pytest.raises(DataError):
            TimeSeriesDataset(values=values)

    def test_rejects_label_length_mismatch(self):
        with pytest.raises(DataError):
            TimeSeriesDataset(values=np.zeros((1, 5)), labels=np.zeros(4))

    def test_rejects_nonbinary_labels(self):
        with pytest.raises(DataError):
            TimeSeriesDataset(values=np.zeros((1, 3)), labels=np.array([0, 2, 1]))

    def test_promotes_1d_values(self):
        ds = TimeSeriesDataset(values=np.arange(5.0))
        assert ds.channels == 1 and ds.length == 5


class TestWindowBatch:
    def test_rejects_bad_stride(self):
        with pytest.raises(DataError):
            WindowBatch(windows=np.zeros((1, 1, 4)), starts=np.array([0]), stride=0)

    def test_rejects_start_count_mismatch(self):
        with pytest.raises(DataError):
            WindowBatch(windows=np.zeros((2, 1, 4)), starts=np.array([0]), stride=1)
