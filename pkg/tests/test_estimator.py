"""Tests for the numpy gaze regressor: layers, training, persistence."""

import numpy as np
import numpy.testing as npt
import pytest

from gazebench import estimator as est
from gazebench.errors import (
    TrainingDivergedError,
    ValidationError,
    WeightsCorruptError,
    WeightsHashError,
    WeightsVersionError,
)


class TestFeatures:
    def test_canvas_pooling_shape_and_range(self):
        canvas = np.random.default_rng(0).integers(0, 256, (85, 390)).astype(np.uint8)
        x = est.canvas_to_input(canvas)
        assert x.shape == (1, 17, 78)
        assert x.min() >= 0.0 and x.max() <= 1.0

    def test_single_bright_pixel(self):
        # one 255 pixel in a 5x5 cell: 255 / 25 / 255 = 0.04
        canvas = np.zeros((85, 390), dtype=np.uint8)
        canvas[7, 12] = 255
        x = est.canvas_to_input(canvas)
        assert x[0, 1, 2] == pytest.approx(0.04, abs=1e-12)
        assert np.count_nonzero(x) == 1

    def test_uniform_canvas(self):
        canvas = np.full((85, 390), 255, dtype=np.uint8)
        npt.assert_allclose(est.canvas_to_input(canvas), 1.0)

    def test_wrong_shape_rejected(self):
        with pytest.raises(ValidationError):
            est.canvas_to_input(np.zeros((84, 390), dtype=np.uint8))

    def test_landmark_features(self):
        lm = {n: np.array([39.0, 8.5]) for n in
              ("outer_left", "inner_left", "iris_left",
               "outer_right", "inner_right", "iris_right")}
        f = est.landmark_features(lm, border_fraction=0.25)
        assert f.shape == (13,)
        npt.assert_allclose(f[:12:2], 0.1)
        npt.assert_allclose(f[1:12:2], 0.1)
        assert f[12] == 0.25

    def test_landmark_features_missing_key(self):
        with pytest.raises(ValidationError):
            est.landmark_features({"outer_left": (0, 0)}, 0.0)

    def test_target_normalization_round_trip(self):
        pts = np.array([[0.0, 0.0], [400.0, 300.0], [200.0, 150.0], [37.0, 251.0]])
        n = est.normalize_points(pts, 400.0, 300.0)
        npt.assert_allclose(n[0], [-1.0, -1.0])
        npt.assert_allclose(n[1], [1.0, 1.0])
        npt.assert_allclose(n[2], [0.0, 0.0])
        npt.assert_allclose(est.denormalize_points(n, 400.0, 300.0), pts, atol=1e-12)


class TestConv:
    def test_output_sizes_along_stack(self):
        rng = np.random.default_rng(0)
        c = est.Conv2D(1, 8, 2, rng)
        assert c.out_hw(17, 78) == (9, 39)
        assert c.out_hw(9, 39) == (5, 20)

    def test_forward_shape(self):
        rng = np.random.default_rng(0)
        conv = est.Conv2D(1, 8, 2, rng)
        y = conv.forward(np.zeros((3, 1, 17, 78)))
        assert y.shape == (3, 8, 9, 39)

    def test_matches_naive_convolution(self):
        rng = np.random.default_rng(1)
        conv = est.Conv2D(2, 3, 1, rng)
        x = rng.normal(size=(1, 2, 5, 6))
        y = conv.forward(x)
        xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
        for o in range(3):
            for i in range(5):
                for j in range(6):
                    want = np.sum(xp[0, :, i:i + 3, j:j + 3] * conv.w[o]) + conv.b[o]
                    assert y[0, o, i, j] == pytest.approx(want, abs=1e-12)

    def test_stride_two_picks_even_positions(self):
        rng = np.random.default_rng(2)
        c1 = est.Conv2D(1, 2, 1, rng)
        c2 = est.Conv2D(1, 2, 2, np.random.default_rng(2))
        # same seed, same weights
        npt.assert_array_equal(c1.w, c2.w)
        x = np.random.default_rng(3).normal(size=(1, 1, 7, 7))
        full = c1.forward(x)
        strided = c2.forward(x)
        # pad is symmetric here (out 4, total pad 2), so strided output
        # subsamples the stride-1 output at even indices
        npt.assert_allclose(strided, full[:, :, ::2, ::2], atol=1e-12)


class TestModelShapes:
    def test_default_image_arch(self):
        m = est.build_model(est.default_image_arch(), seed=0)
        out = m.forward(np.zeros((4, 1, 17, 78)))
        assert out.shape == (4, 2)

    def test_vector_arch(self):
        m = est.build_model(est.default_vector_arch(13), seed=0)
        out = m.forward(np.zeros((5, 13)))
        assert out.shape == (5, 2)

    def test_residual_arch(self):
        arch = est.ArchSpec(input_shape=(1, 17, 78), residual_blocks=2)
        m = est.build_model(arch, seed=0)
        assert m.forward(np.zeros((2, 1, 17, 78))).shape == (2, 2)

    def test_param_names(self):
        m = est.build_model(est.default_image_arch(), seed=0)
        names = [n for n, _, _ in m.params()]
        assert names == ["conv0.w", "conv0.b", "conv1.w", "conv1.b",
                         "fc0.w", "fc0.b", "fc1.w", "fc1.b", "fc2.w", "fc2.b"]

    def test_param_count(self):
        # conv0 1->8: 8*1*9+8 = 80; conv1 8->16: 16*8*9+16 = 1168
        # fc 16->64: 1088; 64->32: 2080; 32->2: 66
        m = est.build_model(est.default_image_arch(), seed=0)
        assert m.n_params() == 80 + 1168 + 1088 + 2080 + 66

    def test_same_seed_same_weights(self):
        a = est.build_model(est.default_image_arch(), seed=9)
        b = est.build_model(est.default_image_arch(), seed=9)
        c = est.build_model(est.default_image_arch(), seed=10)
        for (_, pa, _), (_, pb, _), (_, pc, _) in zip(a.params(), b.params(), c.params()):
            npt.assert_array_equal(pa, pb)
        assert any(np.any(pa != pc) for (_, pa, _), (_, pc, _)
                   in zip(a.params(), c.params()))

    def test_he_init_scale(self):
        m = est.build_model(est.default_image_arch(), seed=0)
        fc0 = dict((n, p) for n, p, _ in m.params())["fc1.w"]
        # fan_in 64: std should be near sqrt(2/64) = 0.177
        assert 0.1 < fc0.std() < 0.28

    def test_bad_input_shape_rejected(self):
        m = est.build_model(est.default_image_arch(), seed=0)
        with pytest.raises(ValidationError):
            m.forward(np.zeros((2, 1, 17, 77)))

    def test_identity_head_is_affine(self):
        arch = est.ArchSpec(input_shape=(5,), fc_sizes=(7,), fc_activation="identity")
        m = est.build_model(arch, seed=1)
        rng = np.random.default_rng(0)
        x0, d = rng.normal(size=(2, 5))
        # affine map: increments are linear in the input increment
        lhs = m.forward((x0 + d)[None]) - m.forward(x0[None])
        rhs = m.forward((x0 + 2 * d)[None]) - m.forward((x0 + d)[None])
        npt.assert_allclose(lhs, rhs, atol=1e-9)

    def test_copy_independent(self):
        m = est.build_model(est.default_vector_arch(4), seed=0)
        c = m.copy()
        x = np.ones((1, 4))
        npt.assert_array_equal(m.forward(x), c.forward(x))
        next(p for n, p, _ in c.params() if n == "fc0.w")[...] += 1.0
        assert np.any(m.forward(x) != c.forward(x))


class TestGradients:
    def test_mse_oracle(self):
        loss, d = est.mse_loss(np.array([[1.0, 2.0]]), np.array([[0.0, 0.0]]))
        assert loss == pytest.approx(2.5)
        npt.assert_allclose(d, [[1.0, 2.0]])

    def test_grad_check_image_model(self):
        arch = est.ArchSpec(input_shape=(1, 10, 14), conv_channels=(3, 4),
                            fc_sizes=(8,))
        m = est.build_model(arch, seed=3)
        rng = np.random.default_rng(4)
        x = rng.normal(0.5, 0.2, size=(6, 1, 10, 14))
        y = rng.uniform(-1, 1, size=(6, 2))
        assert est.grad_check(m, x, y, samples_per_tensor=6) < 1e-4

    def test_grad_check_vector_model(self):
        m = est.build_model(est.default_vector_arch(9), seed=5)
        rng = np.random.default_rng(6)
        x = rng.normal(size=(8, 9))
        y = rng.uniform(-1, 1, size=(8, 2))
        assert est.grad_check(m, x, y, samples_per_tensor=8) < 1e-4

    def test_grad_check_residual_model(self):
        arch = est.ArchSpec(input_shape=(1, 8, 8), conv_channels=(4,),
                            residual_blocks=1, fc_sizes=(6,))
        m = est.build_model(arch, seed=7)
        rng = np.random.default_rng(8)
        # zero-initialized biases put dead ReLU patches exactly on the
        # kink, where finite differences rightly disagree; nudge off it
        for name, p, _ in m.params():
            if name.endswith(".b"):
                p += rng.uniform(0.01, 0.05, size=p.shape)
        x = rng.normal(0.4, 0.3, size=(4, 1, 8, 8))
        y = rng.uniform(-1, 1, size=(4, 2))
        assert est.grad_check(m, x, y, samples_per_tensor=6) < 1e-4

    def test_grad_check_linear_model_tight(self):
        # no kinks anywhere: finite differences are nearly exact
        arch = est.ArchSpec(input_shape=(6,), fc_sizes=(5,), fc_activation="identity")
        m = est.build_model(arch, seed=9)
        rng = np.random.default_rng(10)
        x = rng.normal(size=(10, 6))
        y = rng.normal(size=(10, 2))
        assert est.grad_check(m, x, y, samples_per_tensor=10) < 1e-7


class TestTraining:
    def linear_task(self, n=64, seed=0):
        rng = np.random.default_rng(seed)
        x = rng.uniform(-1, 1, size=(n, 4))
        w = np.array([[0.5, -0.3, 0.2, 0.1], [-0.2, 0.4, -0.1, 0.3]])
        y = x @ w.T + np.array([0.05, -0.05])
        return x, y

    def test_loss_decreases(self):
        x, y = self.linear_task()
        m = est.build_model(est.default_vector_arch(4), seed=0)
        res = est.train(m, x, y, est.Hyperparams(epochs=60, batch_size=16), seed=1)
        assert res.history[-1] < 0.1 * res.history[0]
        assert res.epochs_run == 60
        assert len(res.history) == 60

    def test_training_deterministic(self):
        x, y = self.linear_task()
        ma = est.build_model(est.default_vector_arch(4), seed=0)
        mb = est.build_model(est.default_vector_arch(4), seed=0)
        ra = est.train(ma, x, y, est.Hyperparams(epochs=10), seed=2)
        rb = est.train(mb, x, y, est.Hyperparams(epochs=10), seed=2)
        assert ra.history == rb.history
        for (_, pa, _), (_, pb, _) in zip(ma.params(), mb.params()):
            npt.assert_array_equal(pa, pb)

    def test_shuffle_seed_matters(self):
        x, y = self.linear_task()
        ma = est.build_model(est.default_vector_arch(4), seed=0)
        mb = est.build_model(est.default_vector_arch(4), seed=0)
        est.train(ma, x, y, est.Hyperparams(epochs=5), seed=2)
        est.train(mb, x, y, est.Hyperparams(epochs=5), seed=3)
        assert any(np.any(pa != pb) for (_, pa, _), (_, pb, _)
                   in zip(ma.params(), mb.params()))

    def test_zero_epochs_leaves_model_untouched(self):
        x, y = self.linear_task()
        m = est.build_model(est.default_vector_arch(4), seed=0)
        before = [p.copy() for _, p, _ in m.params()]
        res = est.train(m, x, y, est.Hyperparams(epochs=0), seed=0)
        for b, (_, p, _) in zip(before, m.params()):
            npt.assert_array_equal(b, p)
        assert res.epochs_run == 0 and res.history == []
        assert np.isfinite(res.final_loss)

    @pytest.mark.filterwarnings("ignore:overflow")
    def test_divergence_raises_with_epoch(self):
        x, y = self.linear_task()
        m = est.build_model(est.default_vector_arch(4), seed=0)
        with pytest.raises(TrainingDivergedError) as ei:
            est.train(m, x, y, est.Hyperparams(learning_rate=1e6, epochs=50), seed=0)
        assert ei.value.epoch >= 0

    def test_provenance_updated(self):
        x, y = self.linear_task()
        m = est.build_model(est.default_vector_arch(4), seed=0)
        assert m.provenance == "random"
        est.train(m, x, y, est.Hyperparams(epochs=1), seed=0, provenance="pretrained:U")
        assert m.provenance == "pretrained:U"

    def test_momentum_step_oracle(self):
        # single weight, loss (w*1 - 0)^2: check two hand-computed steps
        arch = est.ArchSpec(input_shape=(1,), fc_sizes=(), out_dim=1,
                            fc_activation="identity")
        m = est.build_model(arch, seed=0)
        (name, p, _), (bname, b, _) = m.params()
        p[...] = 1.0
        b[...] = 0.0
        x = np.array([[1.0]])
        y = np.array([[0.0]])
        hyper = est.Hyperparams(learning_rate=0.1, momentum=0.9, epochs=2, batch_size=1)

        # manual: g_w = 2w (and g_b = 2w with this x), v = 0.9v - 0.1g
        w, bv = 1.0, 0.0
        vw, vb = 0.0, 0.0
        for _ in range(2):
            pred = w + bv
            gw, gb = 2 * pred, 2 * pred
            vw = 0.9 * vw - 0.1 * gw
            vb = 0.9 * vb - 0.1 * gb
            w += vw
            bv += vb
        est.train(m, x, y, hyper, seed=0)
        assert p[0, 0] == pytest.approx(w, abs=1e-12)
        assert b[0] == pytest.approx(bv, abs=1e-12)

    def test_anneal_rate_schedule(self):
        h = est.Hyperparams(learning_rate=0.1, epochs=5,
                            final_learning_rate=0.02)
        assert h.rate_at(0) == pytest.approx(0.1)
        assert h.rate_at(4) == pytest.approx(0.02)
        assert h.rate_at(2) == pytest.approx(0.06)
        # flat without a final rate
        flat = est.Hyperparams(learning_rate=0.1, epochs=5)
        assert all(flat.rate_at(e) == 0.1 for e in range(5))

    def test_anneal_to_same_rate_is_identity(self):
        x, y = self.linear_task()
        ma = est.build_model(est.default_vector_arch(4), seed=0)
        mb = est.build_model(est.default_vector_arch(4), seed=0)
        est.train(ma, x, y, est.Hyperparams(epochs=10), seed=2)
        est.train(mb, x, y, est.Hyperparams(epochs=10, final_learning_rate=1e-2),
                  seed=2)
        for (_, pa, _), (_, pb, _) in zip(ma.params(), mb.params()):
            npt.assert_array_equal(pa, pb)

    def test_anneal_step_oracle(self):
        # same single-weight setup as the momentum oracle, but the second
        # epoch runs at the annealed-to rate
        arch = est.ArchSpec(input_shape=(1,), fc_sizes=(), out_dim=1,
                            fc_activation="identity")
        m = est.build_model(arch, seed=0)
        (_, p, _), (_, b, _) = m.params()
        p[...] = 1.0
        b[...] = 0.0
        x = np.array([[1.0]])
        y = np.array([[0.0]])
        hyper = est.Hyperparams(learning_rate=0.1, momentum=0.9, epochs=2,
                                batch_size=1, final_learning_rate=0.05)

        w, bv = 1.0, 0.0
        vw, vb = 0.0, 0.0
        for rate in (0.1, 0.05):
            pred = w + bv
            gw, gb = 2 * pred, 2 * pred
            vw = 0.9 * vw - rate * gw
            vb = 0.9 * vb - rate * gb
            w += vw
            bv += vb
        est.train(m, x, y, hyper, seed=0)
        assert p[0, 0] == pytest.approx(w, abs=1e-12)
        assert b[0] == pytest.approx(bv, abs=1e-12)

    def test_fine_tune_hyperparams(self):
        h = est.fine_tune_hyperparams(epochs=50)
        assert h.learning_rate == pytest.approx(1e-3)
        assert h.epochs == 50

    def test_hyperparams_validation(self):
        with pytest.raises(ValidationError):
            est.Hyperparams(learning_rate=0.0)
        with pytest.raises(ValidationError):
            est.Hyperparams(momentum=1.0)
        with pytest.raises(ValidationError):
            est.Hyperparams(epochs=-1)
        with pytest.raises(ValidationError):
            est.Hyperparams(batch_size=0)
        with pytest.raises(ValidationError):
            est.Hyperparams(learning_rate=1e-3, final_learning_rate=1e-2)
        with pytest.raises(ValidationError):
            est.Hyperparams(final_learning_rate=0.0)

    def test_empty_training_set_rejected(self):
        m = est.build_model(est.default_vector_arch(4), seed=0)
        with pytest.raises(ValidationError):
            est.train(m, np.zeros((0, 4)), np.zeros((0, 2)), est.Hyperparams(epochs=1))

    def test_predict_batched_equals_forward(self):
        m = est.build_model(est.default_vector_arch(4), seed=0)
        x = np.random.default_rng(0).normal(size=(23, 4))
        npt.assert_allclose(m.predict(x, batch_size=7), m.forward(x), atol=1e-12)


class TestRidge:
    def test_recovers_linear_map(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(50, 6))
        w_true = rng.normal(size=(2, 6))
        b_true = np.array([0.3, -0.7])
        y = x @ w_true.T + b_true
        w, b = est.ridge_fit(x, y, lam=1e-9)
        npt.assert_allclose(w, w_true, atol=1e-6)
        npt.assert_allclose(b, b_true, atol=1e-6)
        npt.assert_allclose(est.ridge_predict(x, w, b), y, atol=1e-6)

    def test_intercept_not_shrunk(self):
        # constant target: heavy regularization must not pull b toward 0
        x = np.random.default_rng(1).normal(size=(40, 3))
        y = np.full((40, 2), 5.0)
        _, b = est.ridge_fit(x, y, lam=1e3)
        npt.assert_allclose(b, [5.0, 5.0], atol=0.2)


class TestPersistence:
    def trained_model(self):
        rng = np.random.default_rng(0)
        m = est.build_model(est.ArchSpec(input_shape=(1, 10, 14), conv_channels=(3,),
                                         fc_sizes=(6,)), seed=1)
        x = rng.normal(size=(8, 1, 10, 14))
        y = rng.uniform(-1, 1, size=(8, 2))
        est.train(m, x, y, est.Hyperparams(epochs=2), seed=0, provenance="pretrained:U")
        return m, x

    def test_round_trip_exact(self, tmp_path):
        m, x = self.trained_model()
        p = tmp_path / "w.json"
        est.save_weights(m, p)
        back = est.load_weights(p)
        npt.assert_array_equal(back.forward(x), m.forward(x))
        assert back.provenance == "pretrained:U"
        assert back.arch == m.arch

    def test_expect_arch_mismatch(self, tmp_path):
        m, _ = self.trained_model()
        p = tmp_path / "w.json"
        est.save_weights(m, p)
        with pytest.raises(WeightsHashError):
            est.load_weights(p, expect_arch=est.default_image_arch())

    def test_expect_arch_match_ok(self, tmp_path):
        m, _ = self.trained_model()
        p = tmp_path / "w.json"
        est.save_weights(m, p)
        est.load_weights(p, expect_arch=m.arch)

    def test_version_error(self, tmp_path):
        import json
        m, _ = self.trained_model()
        p = tmp_path / "w.json"
        est.save_weights(m, p)
        payload = json.loads(p.read_text())
        payload["format_version"] = 99
        p.write_text(json.dumps(payload))
        with pytest.raises(WeightsVersionError):
            est.load_weights(p)

    def test_corrupt_json(self, tmp_path):
        p = tmp_path / "w.json"
        p.write_text("{not json")
        with pytest.raises(WeightsCorruptError):
            est.load_weights(p)

    def test_missing_tensor(self, tmp_path):
        import json
        m, _ = self.trained_model()
        p = tmp_path / "w.json"
        est.save_weights(m, p)
        payload = json.loads(p.read_text())
        del payload["layers"]["fc0.w"]
        p.write_text(json.dumps(payload))
        with pytest.raises(WeightsCorruptError):
            est.load_weights(p)

    def test_tampered_arch_hash(self, tmp_path):
        import json
        m, _ = self.trained_model()
        p = tmp_path / "w.json"
        est.save_weights(m, p)
        payload = json.loads(p.read_text())
        payload["arch"]["fc_sizes"] = [12]
        p.write_text(json.dumps(payload))
        with pytest.raises(WeightsCorruptError):
            est.load_weights(p)

    def test_file_bytes_deterministic(self, tmp_path):
        m, _ = self.trained_model()
        pa, pb = tmp_path / "a.json", tmp_path / "b.json"
        est.save_weights(m, pa)
        est.save_weights(m, pb)
        assert pa.read_bytes() == pb.read_bytes()
