import json
import math

import numpy as np
import pytest
import torch

import distill_tsad.training as train_mod
from distill_tsad.core import Config, NumericError, DataError, make_rng
from distill_tsad.data_io import synth_pair
from distill_tsad.preprocess import window
from distill_tsad.training import (

    Strategy,
    build_state,
    contrastive_loss,
    hsc_loss,
    kd_loss,
    load_checkpoint,
    named_tensors,
    save_checkpoint,
    total_loss,
    train,
)
from oracles import central_difference_grad, relative_error


def desk_config(**overrides):
    base = dict(window_size=16, patch_size=4, patch_stride=4, feature_dim=8,
                student_layers=1, teacher_layers=1, prototype_count=4,
                head_count=2, batch_size=8, epochs=3, patience=10,
                learning_rate=1e-3, seed=0)
    base.update(overrides)
    return Config(**base)


def sine_batch(length=400, window_size=16, seed=0):
    spec = {"base": "sine", "length": length, "channels": 1, "anomalies": [],
            "train_end": length - 1}
    train_ds, _ = synth_pair(spec, seed)
    return window(train_ds, window_size, window_size)


def hsc_oracle(z, c, y):
    """Closed-form reference in float64."""
    d2 = float(np.sum((np.asarray(z, dtype=np.float64) - np.asarray(c, dtype=np.float64)) ** 2))
    ell = math.exp(-d2)
    return -(1 - y) * math.log(max(ell, 1e-12)) - y * math.log(max(1 - ell, 1e-12))


class TestHscLoss:
    def test_zero_distance_normal(self):
        z = np.ones(4, dtype=np.float32)
        assert float(hsc_loss(z, z, 0)) == 0.0

    def test_log_two_distance_anomalous(self):
        z = np.zeros(4, dtype=np.float32)
        c = np.zeros(4, dtype=np.float32)
        c[0] = math.sqrt(math.log(2.0))
        assert float(hsc_loss(z, c, 1)) == pytest.approx(math.log(2.0), rel=1e-6)

    def test_normal_branch_is_squared_distance(self):
        z = np.zeros(3, dtype=np.float32)
        c = np.array([1.0, 1.0, 1.0], dtype=np.float32)
        assert float(hsc_loss(z, c, 0)) == pytest.approx(3.0, rel=1e-6)

    def test_matches_oracle_on_random_inputs(self):
        rng = make_rng(0)
        for _ in range(100):
            z = rng.uniform(-0.5, 0.5, size=6).astype(np.float32)
            c = rng.uniform(-0.5, 0.5, size=6).astype(np.float32)
            y = int(rng.integers(2))
            expected = hsc_oracle(z, c, y)
            got = float(hsc_loss(z, c, y))
            assert got == pytest.approx(expected, rel=1e-6, abs=1e-9)

    def test_batched_matches_singles(self):
        rng = make_rng(1)
        z = rng.standard_normal((5, 4)).astype(np.float32)
        c = rng.standard_normal((5, 4)).astype(np.float32)
        y = np.array([0, 1, 0, 1, 1])
        batched = hsc_loss(z, c, y).numpy()
        singles = [float(hsc_loss(z[i], c[i], int(y[i]))) for i in range(5)]
        np.testing.assert_allclose(batched, singles, rtol=1e-12)


class TestKdLoss:
    def test_collapsed_normals_log_two_anomalies(self):
        rng = make_rng(2)
        z = rng.standard_normal((3, 4)).astype(np.float32)
        za = np.zeros((3, 4), dtype=np.float32)
        ca = np.zeros((3, 4), dtype=np.float32)
        ca[:, 0] = math.sqrt(math.log(2.0))
        value = float(kd_loss(z, z, za, ca))
        assert value == pytest.approx(math.log(2.0), rel=1e-6)

    def test_identity_with_hsc_terms(self):
        rng = make_rng(3)
        n = 8
        z = rng.uniform(-0.5, 0.5, (n, 6)).astype(np.float32)
        c = rng.uniform(-0.5, 0.5, (n, 6)).astype(np.float32)
        za = rng.uniform(-0.5, 0.5, (n, 6)).astype(np.float32)
        ca = rng.uniform(-0.5, 0.5, (n, 6)).astype(np.float32)
        direct = float(kd_loss(z, c, za, ca))
        per_term = np.mean([
            float(hsc_loss(z[i], c[i], 0)) + float(hsc_loss(za[i], ca[i], 1))
            for i in range(n)
        ])
        assert direct == pytest.approx(per_term, abs=1e-7)

    def test_far_augmented_pairs_vanish(self):
        z = np.zeros((2, 5), dtype=np.float32)
        c = np.ones((2, 5), dtype=np.float32) * 0.3
        za = np.zeros((2, 5), dtype=np.float32)
        ca = np.zeros((2, 5), dtype=np.float32)
        ca[:, 0] = math.sqrt(20.0)
        value = float(kd_loss(z, c, za, ca))
        pull = 5 * 0.3 ** 2
        assert value == pytest.approx(pull + math.exp(-20.0), rel=1e-4)


class TestContrastiveLoss:
    def test_self_similarity(self):
        c = make_rng(4).standard_normal((6, 8)).astype(np.float32)
        assert float(contrastive_loss(c, c)) == pytest.approx(-1.0, abs=1e-6)

    def test_orthogonal(self):
        c = np.eye(4, dtype=np.float32)[:2]
        ca = np.eye(4, dtype=np.float32)[2:]
        assert float(contrastive_loss(c, ca)) == pytest.approx(0.0, abs=1e-12)

    def test_antipodal(self):
        c = make_rng(5).standard_normal((3, 8)).astype(np.float32)
        assert float(contrastive_loss(c, -c)) == pytest.approx(1.0, abs=1e-6)

    def test_range_and_rescaling_invariance(self):
        rng = make_rng(6)
        c = rng.standard_normal((10, 4)).astype(np.float32)
        ca = rng.standard_normal((10, 4)).astype(np.float32)
        value = float(contrastive_loss(c, ca))
        assert -1.0 <= value <= 1.0
        scales = rng.uniform(0.1, 10.0, size=(10, 1)).astype(np.float32)
        rescaled = float(contrastive_loss(c * scales, ca))
        assert rescaled == pytest.approx(value, abs=1e-6)


class TestTotalLoss:
    def test_zero_weight(self):
        assert float(total_loss(torch.tensor(2.0), torch.tensor(5.0), 0.0)) == 2.0

    def test_published_weight(self):
        assert float(total_loss(torch.tensor(1.0), torch.tensor(-1.0), 0.1)) == pytest.approx(0.9)

    def test_unit_weight(self):
        assert float(total_loss(torch.tensor(0.0), torch.tensor(0.5), 1.0)) == pytest.approx(0.5)


class TestStrategyComposition:
    def _states_and_batch(self):
        config = desk_config()
        batch = sine_batch()
        originals = batch.windows[:8]
        rng = make_rng(1)
        from distill_tsad.augment import augment_batch
        augmented, _ = augment_batch(originals, config.augmentation, rng)
        return config, originals, augmented

    def _losses(self, config, strategy, originals, augmented):
        state = build_state(config, 1, originals, strategy=strategy, d_model=8)
        with torch.no_grad():
            total, kd, ce = train_mod._batch_losses(
                state, originals, None if strategy is Strategy.NONAUG else augmented
            )
        return state, total, kd, ce

    def test_nonaug_reduces_to_pull_term(self):
        config, originals, augmented = self._states_and_batch()
        state, total, kd, ce = self._losses(config, Strategy.NONAUG, originals, augmented)
        with torch.no_grad():
            z = state.student(originals, state.pool)
            c = state.teacher(originals)
        expected = float(train_mod.squared_distance(z, c).mean())
        assert ce is None
        assert float(total) == pytest.approx(expected, rel=1e-6)

    def test_no_contrastive_drops_ce(self):
        config, originals, augmented = self._states_and_batch()
        _, total, kd, ce = self._losses(config, Strategy.NO_CONTRASTIVE, originals, augmented)
        assert ce is None
        assert float(total) == pytest.approx(float(kd), rel=1e-12)

    def test_full_combines_kd_and_ce(self):
        config, originals, augmented = self._states_and_batch()
        _, total, kd, ce = self._losses(config, Strategy.FULL, originals, augmented)
        assert ce is not None
        assert float(total) == pytest.approx(
            float(kd) + config.contrastive_weight * float(ce), rel=1e-10
        )

    def test_student_contrastive_adds_push_apart_term(self):
        config, originals, augmented = self._states_and_batch()
        state, total, kd, ce = self._losses(config, Strategy.STUDENT_CONTRASTIVE,
                                            originals, augmented)
        with torch.no_grad():
            z = state.student(originals, state.pool)
            za = state.student(augmented, state.pool)
            push = -float(contrastive_loss(z, za))    # mean cosine similarity
        expected = float(kd) + config.contrastive_weight * float(ce) \
            + config.contrastive_weight * push
        assert float(total) == pytest.approx(expected, rel=1e-9)

    def test_strategy_parsing(self):
        assert Strategy.parse("full") is Strategy.FULL
        assert Strategy.parse("NonAug") is Strategy.NONAUG
        assert Strategy.parse("noct") is Strategy.NO_CONTRASTIVE
        assert Strategy.parse("w_c_s") is Strategy.STUDENT_CONTRASTIVE
        with pytest.raises(ValueError):
            Strategy.parse("bogus")


class TestTrainingLoop:
    def test_loss_decreases_on_sine_data(self, tmp_path):
        log_path = tmp_path / "log.jsonl"
        config = desk_config(epochs=15, learning_rate=3e-3)
        state = train(sine_batch(), config, strategy="nonaug", d_model=8,
                      log_path=log_path)
        records = [json.loads(line) for line in log_path.read_text().splitlines()]
        assert records[-1]["loss_total"] < records[0]["loss_total"]
        assert state.best_loss <= records[0]["loss_total"]

    def test_nonaug_log_has_no_contrastive_component(self, tmp_path):
        log_path = tmp_path / "log.jsonl"
        train(sine_batch(), desk_config(epochs=2), strategy="nonaug", d_model=8,
              log_path=log_path)
        records = [json.loads(line) for line in log_path.read_text().splitlines()]
        assert records and all("loss_ce" not in r for r in records)

    def test_full_log_has_contrastive_component(self, tmp_path):
        log_path = tmp_path / "log.jsonl"
        train(sine_batch(), desk_config(epochs=2), strategy="full", d_model=8,
              log_path=log_path)
        records = [json.loads(line) for line in log_path.read_text().splitlines()]
        assert records and all("loss_ce" in r for r in records)

    def test_frozen_tensors_bit_identical_after_training(self):
        config = desk_config(epochs=4)
        batch = sine_batch()
        state = build_state(config, 1, batch.windows, d_model=8)
        before = {name: p.detach().numpy().copy()
                  for name, p in state.frozen_parameters().items()}
        assert before, "expected frozen tensors"
        train_mod.fit(state, batch, make_rng(1), make_rng(2))
        after = state.frozen_parameters()
        for name, initial in before.items():
            np.testing.assert_array_equal(
                after[name].detach().numpy(), initial,
                err_msg=f"frozen tensor {name} changed",
            )

    def test_training_is_bit_reproducible(self):
        config = desk_config(epochs=2, seed=5)
        a = train(sine_batch(), config, d_model=8)
        b = train(sine_batch(), config, d_model=8)
        for name, pa in named_tensors(a).items():
            np.testing.assert_array_equal(pa.detach().numpy(),
                                          named_tensors(b)[name].detach().numpy(),
                                          err_msg=name)

    def test_early_stopping_on_flat_loss(self):
        config = desk_config(epochs=50, patience=2, learning_rate=1e-30)
        state = train(sine_batch(), config, strategy="nonaug", d_model=8)
        assert state.epoch <= 4                       # 1 best epoch + 2 stalls

    def test_nan_loss_aborts_with_diagnostics(self, monkeypatch):
        def poisoned(state, originals, augmented):
            bad = torch.tensor(float("nan"), requires_grad=True)
            return bad, bad, None

        monkeypatch.setattr(train_mod, "_batch_losses", poisoned)
        with pytest.raises(NumericError, match="step 0"):
            train(sine_batch(), desk_config(), d_model=8)

    def test_empty_batch_rejected(self):
        batch = sine_batch()
        batch.windows = batch.windows[:0]
        batch.starts = batch.starts[:0]
        with pytest.raises(ValueError):
            train(batch, desk_config(), d_model=8)


class TestCheckpoint:
    def test_save_load_save_byte_identical(self, tmp_path):
        state = train(sine_batch(), desk_config(epochs=2), d_model=8)
        p1, p2 = tmp_path / "a.ntc", tmp_path / "b.ntc"
        save_checkpoint(state, p1)
        save_checkpoint(load_checkpoint(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()
        assert (tmp_path / "a.ntc.json").read_bytes() == (tmp_path / "b.ntc.json").read_bytes()

    def test_load_with_wrong_dimension_fails_with_shape_error(self, tmp_path):
        state = train(sine_batch(), desk_config(epochs=1), d_model=8)
        path = tmp_path / "ckpt.ntc"
        save_checkpoint(state, path)
        sidecar = json.loads((tmp_path / "ckpt.ntc.json").read_text())
        sidecar["config"]["feature_dim"] = 16
        (tmp_path / "ckpt.ntc.json").write_text(json.dumps(sidecar))
        with pytest.raises(DataError, match="shape"):
            load_checkpoint(path)

    def test_loaded_state_matches_in_memory(self, tmp_path):
        state = train(sine_batch(), desk_config(epochs=2), d_model=8)
        path = tmp_path / "ckpt.ntc"
        save_checkpoint(state, path)
        loaded = load_checkpoint(path)
        windows = sine_batch().windows[:4]
        z1 = state.student(windows, state.pool).detach().numpy()
        z2 = loaded.student(windows, loaded.pool).detach().numpy()
        np.testing.assert_array_equal(z1, z2)
        c1 = state.teacher(windows).detach().numpy()
        c2 = loaded.teacher(windows).detach().numpy()
        np.testing.assert_array_equal(c1, c2)
        assert loaded.strategy is state.strategy
        assert loaded.epoch == state.epoch
        assert loaded.best_loss == state.best_loss


class TestGradientSpotCheck:
    def test_analytic_gradients_match_finite_differences(self):
        config = desk_config(seed=11)
        batch = sine_batch(seed=11)
        originals = batch.windows[:2]
        from distill_tsad.augment import augment_batch
        augmented, _ = augment_batch(originals, config.augmentation, make_rng(12))
        state = build_state(config, 1, batch.windows, d_model=8)

        def loss_fn():
            with torch.no_grad():
                total, _, _ = train_mod._batch_losses(state, originals, augmented)
            return float(total)

        total, _, _ = train_mod._batch_losses(state, originals, augmented)
        state.optimizer.zero_grad()
        total.backward()

        for name in ("student/head.bias", "teacher/backbone.blocks.0.norm1.scale"):
            param = named_tensors(state)[name]
            fd = central_difference_grad(loss_fn, param, h=1e-3)
            analytic = param.grad.numpy()
            err = relative_error(fd, analytic)
            assert err.max() <= 1e-2, f"{name}: max rel err {err.max():.3g}"
