import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from distill_tsad.core import DataError, TimeSeriesDataset, make_rng
from distill_tsad.preprocess import (
    STD_EPS,
    instance_normalize,
    normalize_with,
    patch,
    window,
)


def _series(values, labels=None):
    return TimeSeriesDataset(values=np.asarray(values, dtype=np.float32), labels=labels)


class TestWindow:
    def test_non_overlapping_excludes_overrun(self):
        batch = window(_series(np.arange(10)[None]), size=4, stride=4)
        np.testing.assert_array_equal(batch.starts, [0, 4])

    def test_stride_one_count(self):
        batch = window(_series(np.arange(10)[None]), size=4, stride=1)
        assert batch.count == 7
        np.testing.assert_array_equal(batch.starts, np.arange(7))

    def test_window_equal_to_series(self):
        values = np.arange(4, dtype=np.float32)[None]
        batch = window(_series(values), size=4, stride=1)
        assert batch.count == 1
        np.testing.assert_array_equal(batch.windows[0], values)

    def test_too_long_window_raises(self):
        with pytest.raises(DataError, match="window longer than series"):
            window(_series(np.zeros((1, 3))), size=4, stride=1)

    def test_windows_are_exact_slices(self):
        rng = make_rng(0)
        values = rng.standard_normal((3, 50)).astype(np.float32)
        batch = window(_series(values), size=8, stride=3)
        for start, win in zip(batch.starts, batch.windows):
            np.testing.assert_array_equal(win, values[:, start : start + 8])

    def test_window_label_is_or_of_point_labels(self):
        labels = np.zeros(20, dtype=np.int64)
        labels[9] = 1
        batch = window(_series(np.zeros((1, 20)), labels=labels), size=5, stride=5)
        np.testing.assert_array_equal(batch.labels, [0, 1, 0, 0])

    @given(st.integers(1, 40), st.integers(1, 15), st.integers(1, 10))
    @settings(max_examples=60, deadline=None)
    def test_start_arithmetic_property(self, length, size, stride):
        if size > length:
            return
        batch = window(_series(np.zeros((1, length))), size=size, stride=stride)
        starts = batch.starts
        assert starts[0] == 0
        assert all(s + size <= length for s in starts)
        assert all(b - a == stride for a, b in zip(starts, starts[1:]))
        # the next start would overrun
        assert starts[-1] + stride + size > length


class TestInstanceNormalize:
    def test_constant_channel_maps_to_zero(self):
        out, stats = instance_normalize(np.ones((1, 4), dtype=np.float32))
        np.testing.assert_array_equal(out, np.zeros((1, 4)))
        assert stats.std[0] >= STD_EPS

    def test_two_point_channel(self):
        out, stats = instance_normalize(np.array([[0.0, 2.0]], dtype=np.float32))
        # mean 1, population std 1
        np.testing.assert_allclose(out, [[-1.0, 1.0]], atol=1e-7)
        assert stats.mean[0] == pytest.approx(1.0)
        assert stats.std[0] == pytest.approx(1.0)

    def test_output_stats_on_random_input(self):
        rng = make_rng(1)
        win = rng.standard_normal((5, 64)).astype(np.float32) * 3 + 2
        out, _ = instance_normalize(win)
        mean = out.mean(axis=1, dtype=np.float64)
        std = out.std(axis=1, dtype=np.float64)
        assert np.abs(mean).max() <= 1e-6
        assert np.abs(std - 1).max() <= 1e-5

    def test_denormalization_inverts(self):
        rng = make_rng(2)
        win = (rng.standard_normal((3, 32)) * 5 + 10).astype(np.float32)
        out, stats = instance_normalize(win)
        back = out * stats.std[:, None] + stats.mean[:, None]
        np.testing.assert_allclose(back, win, rtol=1e-5)

    def test_torch_path_matches_numpy(self):
        rng = make_rng(3)
        win = rng.standard_normal((2, 16)).astype(np.float32)
        out_np, stats_np = instance_normalize(win)
        out_t, stats_t = instance_normalize(torch.from_numpy(win))
        np.testing.assert_allclose(out_t.numpy(), out_np, atol=1e-5)
        np.testing.assert_allclose(stats_t.mean.numpy(), stats_np.mean, atol=1e-5)
        np.testing.assert_allclose(stats_t.std.numpy(), stats_np.std, atol=1e-5)


class TestNormalizeWith:
    def test_identity_stats(self):
        win = make_rng(0).standard_normal((2, 8)).astype(np.float32)
        _, stats = instance_normalize(np.zeros((2, 8), dtype=np.float32) + [[0.0]] * 2)
        stats.mean = np.zeros(2)
        stats.std = np.ones(2)
        np.testing.assert_allclose(normalize_with(win, stats), win, atol=1e-7)

    def test_matches_instance_normalize_on_same_window(self):
        win = make_rng(4).standard_normal((3, 16)).astype(np.float32)
        out, stats = instance_normalize(win)
        np.testing.assert_allclose(normalize_with(win, stats), out, atol=1e-7)

    def test_inversion_oracle(self):
        rng = make_rng(5)
        prototype = rng.standard_normal((2, 12)).astype(np.float32)
        reference = (rng.standard_normal((2, 12)) * 4 - 1).astype(np.float32)
        _, stats = instance_normalize(reference)
        out = normalize_with(prototype, stats)
        back = out * stats.std[:, None] + stats.mean[:, None]
        np.testing.assert_allclose(back, prototype, atol=1e-6)


class TestPatch:
    def test_default_patch_count(self):
        seq = patch(np.zeros((1, 32), dtype=np.float32), size=8, stride=8)
        assert seq.n == 4

    def test_identity_patch(self):
        win = make_rng(0).standard_normal((1, 8)).astype(np.float32)
        seq = patch(win, size=8, stride=8)
        assert seq.n == 1
        np.testing.assert_array_equal(seq.patches[0, 0], win[0])

    def test_remainder_dropped(self):
        win = np.arange(10, dtype=np.float32)[None]
        seq = patch(win, size=8, stride=8)
        assert seq.n == 1
        np.testing.assert_array_equal(seq.patches[0, 0], np.arange(8))

    def test_patch_longer_than_window_raises(self):
        with pytest.raises(DataError):
            patch(np.zeros((1, 4), dtype=np.float32), size=5, stride=1)

    def test_non_overlapping_patches_reassemble_exactly(self):
        rng = make_rng(6)
        win = rng.standard_normal((3, 30)).astype(np.float32)
        normalized, _ = instance_normalize(win)
        seq = patch(normalized, size=7, stride=7)
        rebuilt = seq.patches.reshape(3, -1)
        np.testing.assert_array_equal(rebuilt, normalized[:, : seq.n * 7])

    def test_torch_patches_match_numpy(self):
        win = make_rng(7).standard_normal((2, 20)).astype(np.float32)
        np_patches = patch(win, size=6, stride=4).patches
        t_patches = patch(torch.from_numpy(win), size=6, stride=4).patches
        np.testing.assert_array_equal(t_patches.numpy(), np_patches)
