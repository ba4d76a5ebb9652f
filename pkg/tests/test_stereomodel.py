"""Descriptors, score volume, softmax regression, gradients, Adam, pretrain."""

import math

import numpy as np
import pytest
from scipy import ndimage

from conftest import fd_gradients, one_object_cfg, random_features, random_state, rel_err
from touchstereo.fileio import load_pfm
from touchstereo.scenegen import MAT_DIFFUSE, SceneConfig, generate_scene
from touchstereo.stereomodel import (
    SENTINEL_SCORE,
    AdamOptimizer,
    ModelState,
    PretrainConfig,
    adam_step,
    dense_smooth_l1_loss,
    descriptor_map,
    diffuse_epe,
    entropy_of,
    export_probability_volume,
    extract_descriptor,
    forward_pixels,
    forward_volume,
    grad_scores_from_entropy,
    init_model_state,
    load_model_state,
    make_hypotheses,
    predict_disparity,
    pretrain,
    save_model_state,
    score_volume,
    softmax_over_hypotheses,
    validate_hypotheses,
    view_features,
    volume_backward,
)


class TestDescriptors:
    def test_constant_patch_is_zero_vector(self):
        img = np.full((9, 9), 0.37)
        d = extract_descriptor(img, 4, 4, 2)
        np.testing.assert_array_equal(d, 0.0)

    def test_unit_norm(self):
        rng = np.random.default_rng(0)
        img = rng.uniform(size=(9, 9))
        d = extract_descriptor(img, 4, 4, 2)
        assert abs(np.linalg.norm(d) - 1.0) < 1e-12

    def test_hand_computed_3x3(self):
        img = np.zeros((5, 5))
        img[1:4, 1:4] = np.array([[1.0, 2.0, 3.0],
                                  [4.0, 5.0, 6.0],
                                  [7.0, 8.0, 9.0]])
        d = extract_descriptor(img, 2, 2, 1)
        raw = np.arange(1.0, 10.0) - 5.0
        np.testing.assert_allclose(d, raw / np.linalg.norm(raw), atol=1e-12)

    def test_batch_matches_single(self):
        rng = np.random.default_rng(1)
        img = rng.uniform(size=(7, 8))
        feats = descriptor_map(img, 2)
        for v in range(7):
            for u in range(8):
                np.testing.assert_allclose(
                    feats[v, u], extract_descriptor(img, u, v, 2), atol=1e-12)

    def test_edge_clamped(self):
        rng = np.random.default_rng(2)
        img = rng.uniform(size=(6, 6))
        d = extract_descriptor(img, 0, 0, 2)  # fully clamped corner
        assert np.isfinite(d).all()

    def test_out_of_bounds_pixel_rejected(self):
        with pytest.raises(ValueError):
            extract_descriptor(np.zeros((4, 4)), 9, 0, 1)


class TestHypotheses:
    def test_make_inclusive_integer_grid(self):
        h = make_hypotheses(12.0, 96.0)
        assert h[0] == 12.0 and h[-1] == 96.0 and len(h) == 85

    def test_validate_rejects_bad(self):
        with pytest.raises(ValueError):
            validate_hypotheses(np.array([5.0]))
        with pytest.raises(ValueError):
            validate_hypotheses(np.array([5.0, 4.0]))


class TestScoreVolume:
    def test_identity_embedding_peaks_at_gt(self, diffuse_scene, hyps_wide):
        s = diffuse_scene
        state = ModelState(np.eye(25), 1.0, "init", 2, True)
        scores = score_volume(s, state, hyps_wide)
        interior = ndimage.binary_erosion(s.material == MAT_DIFFUSE, iterations=4)
        vs, us = np.nonzero(interior)
        best = hyps_wide[np.argmax(scores[vs, us], axis=1)]
        np.testing.assert_array_equal(best, s.gt_disparity[vs, us])

    def test_larger_tau_shrinks_scores(self, diffuse_scene, hyps_wide):
        feats = view_features(diffuse_scene, 2)
        s1 = forward_volume(feats, ModelState(np.eye(25), 1.0), hyps_wide)
        s2 = forward_volume(feats, ModelState(np.eye(25), 2.0), hyps_wide)
        np.testing.assert_allclose(
            np.where(s1.valid, s1.scores, 0.0),
            2.0 * np.where(s2.valid, s2.scores, 0.0), atol=1e-9)

    def test_out_of_range_shift_is_sentinel(self, diffuse_scene, hyps_wide):
        state = ModelState(np.eye(25), 1.0)
        scores = score_volume(diffuse_scene, state, hyps_wide)
        # at u=0 every hypothesis d>0 is invalid
        assert np.all(scores[:, 0, :] == SENTINEL_SCORE)
        # u=20, d=48 invalid; d=10 valid
        assert scores[5, 20, -1] == SENTINEL_SCORE
        assert scores[5, 20, 0] != SENTINEL_SCORE

    def test_brightness_offset_invariance(self):
        rng = np.random.default_rng(3)
        img_l = 0.2 + 0.4 * rng.uniform(size=(12, 20))
        img_r = 0.2 + 0.4 * rng.uniform(size=(12, 20))
        from touchstereo.scenegen import CameraRig, SceneSample
        rig = CameraRig(250, 0.05, 20, 12, 2.0, 6.0)
        base = dict(gt_disparity=np.full((12, 20), 4.0),
                    material=np.zeros((12, 20), np.uint8), rig=rig,
                    scene_id=0, view_id=0)
        hyps = make_hypotheses(2.0, 6.0)
        state = random_state(np.random.default_rng(4))
        a = SceneSample(left=img_l, right=img_r, **base)
        b = SceneSample(left=img_l + 0.3, right=img_r + 0.3, **base)
        fa = forward_volume(view_features(a, 2), state, hyps)
        fb = forward_volume(view_features(b, 2), state, hyps)
        np.testing.assert_allclose(fa.scores, fb.scores, atol=1e-9)
        np.testing.assert_allclose(fa.pred, fb.pred, atol=1e-9)


class TestSoftmaxAndPredict:
    def test_equal_scores_uniform(self):
        p = softmax_over_hypotheses(np.zeros((2, 3, 8)))
        np.testing.assert_allclose(p, 1.0 / 8.0)

    def test_dominant_score(self):
        s = np.zeros(10)
        s[4] = 20.0
        p = softmax_over_hypotheses(s)
        assert p[4] > 0.999

    def test_sentinel_underflows(self):
        s = np.array([0.0, SENTINEL_SCORE])
        p = softmax_over_hypotheses(s)
        assert p[1] < 1e-300

    def test_rows_sum_to_one_random(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            s = rng.normal(scale=30.0, size=(4, 5, 9))
            s[rng.uniform(size=s.shape) < 0.1] = SENTINEL_SCORE
            p = softmax_over_hypotheses(s)
            assert np.all(p >= 0)
            np.testing.assert_allclose(p.sum(axis=-1), 1.0, atol=1e-6)

    def test_predict_one_hot(self):
        hyps = make_hypotheses(12.0, 96.0)
        p = np.zeros(len(hyps))
        p[np.flatnonzero(hyps == 40.0)[0]] = 1.0
        assert predict_disparity(p, hyps) == 40.0

    def test_predict_uniform_mean(self):
        hyps = make_hypotheses(12.0, 96.0)
        p = np.full(len(hyps), 1.0 / len(hyps))
        assert abs(predict_disparity(p, hyps) - 54.0) < 1e-12

    def test_predict_two_mode_midpoint(self):
        hyps = make_hypotheses(12.0, 96.0)
        p = np.zeros(len(hyps))
        p[hyps == 20.0] = 0.5
        p[hyps == 40.0] = 0.5
        assert abs(predict_disparity(p, hyps) - 30.0) < 1e-12

    def test_predict_within_hull_random(self):
        rng = np.random.default_rng(6)
        hyps = make_hypotheses(8.0, 40.0)
        for _ in range(100):
            s = rng.normal(scale=20.0, size=(3, 4, len(hyps)))
            p = softmax_over_hypotheses(s)
            pred = predict_disparity(p, hyps)
            assert np.all(pred >= hyps[0] - 1e-9)
            assert np.all(pred <= hyps[-1] + 1e-9)


class TestGradients:
    def test_dense_loss_matches_finite_differences(self):
        hyps = make_hypotheses(3.0, 10.0)
        for seed in (0, 1, 2):
            rng = np.random.default_rng(seed)
            feats = random_features(rng)
            state = random_state(rng)
            gt = rng.uniform(4.0, 9.0, size=(16, 16))
            mask = np.ones((16, 16), dtype=bool)
            _, dw, dtau = dense_smooth_l1_loss(state, feats, hyps, gt, mask)
            fd_w, fd_tau = fd_gradients(
                lambda st: dense_smooth_l1_loss(st, feats, hyps, gt, mask)[0],
                state)
            assert rel_err(dw, fd_w) < 1e-4
            assert rel_err(np.array([dtau]), np.array([fd_tau])) < 1e-4

    def test_zero_loss_configuration_zero_gradient(self):
        rng = np.random.default_rng(7)
        feats = random_features(rng)
        state = random_state(rng)
        hyps = make_hypotheses(3.0, 10.0)
        fwd = forward_volume(feats, state, hyps)
        gt = fwd.pred.copy()  # zero residual, inside the quadratic zone
        loss, dw, dtau = dense_smooth_l1_loss(state, feats, hyps, gt,
                                              np.ones_like(gt, dtype=bool))
        assert loss == 0.0
        np.testing.assert_array_equal(dw, 0.0)
        assert dtau == 0.0

    def test_entropy_gradient_saturated_pixel(self):
        # a near-one-hot pixel has vanishing entropy gradient
        rng = np.random.default_rng(8)
        feats = random_features(rng)
        hyps = make_hypotheses(3.0, 10.0)
        state = random_state(rng, tau=0.002)  # very sharp softmax
        pf = forward_pixels(feats, state, hyps, np.array([12]), np.array([8]))
        h_pix = entropy_of(pf.probs)
        assert h_pix[0] < 1e-6
        g = grad_scores_from_entropy(pf.probs, h_pix)
        from touchstereo.stereomodel import pixel_backward
        dw, dtau = pixel_backward(state, pf, g)
        assert np.max(np.abs(dw)) < 1e-6
        assert abs(dtau) < 1e-6

    def test_pixel_and_volume_paths_agree(self):
        rng = np.random.default_rng(9)
        feats = random_features(rng)
        state = random_state(rng)
        hyps = make_hypotheses(3.0, 10.0)
        fwd = forward_volume(feats, state, hyps)
        us = np.array([3, 7, 12, 15])
        vs = np.array([2, 9, 0, 14])
        pf = forward_pixels(feats, state, hyps, us, vs)
        np.testing.assert_allclose(pf.scores, fwd.scores[vs, us], atol=1e-9)
        np.testing.assert_allclose(pf.pred, fwd.pred[vs, us], atol=1e-12)


class TestAdam:
    def test_zero_gradient_no_change(self):
        p = np.array([1.0, -2.0])
        out, m, v = adam_step(p, np.zeros(2), np.zeros(2), np.zeros(2), 1, 0.1)
        np.testing.assert_array_equal(out, p)

    def test_first_step_magnitude(self):
        out, _, _ = adam_step(np.array([0.0]), np.array([1.0]), np.zeros(1),
                              np.zeros(1), 1, 0.05)
        assert abs(out[0] + 0.05 / (1.0 + 1e-8)) < 1e-12

    def test_two_steps_hand_traced(self):
        lr, b1, b2, eps = 0.1, 0.9, 0.999, 1e-8
        g1, g2 = 1.0, -0.5
        # step 1
        m = (1 - b1) * g1
        v = (1 - b2) * g1 * g1
        p = 0.0 - lr * (m / (1 - b1)) / (math.sqrt(v / (1 - b2)) + eps)
        # step 2
        m = b1 * m + (1 - b1) * g2
        v = b2 * v + (1 - b2) * g2 * g2
        p = p - lr * (m / (1 - b1**2)) / (math.sqrt(v / (1 - b2**2)) + eps)

        opt = AdamOptimizer({"x": np.array([0.0])}, lr=lr)
        params = {"x": np.array([0.0])}
        params = opt.step(params, {"x": np.array([g1])})
        params = opt.step(params, {"x": np.array([g2])})
        assert abs(params["x"][0] - p) < 1e-12


def tiny_diffuse_cfg(**kw):
    base = dict(width=64, height=48, disparity_min=4.0, disparity_max=16.0,
                background_disparity_min=5, background_disparity_max=6,
                object_disparity_min=9, object_disparity_max=14,
                object_min_halfsize=6, object_max_halfsize=9,
                n_diffuse=1, n_transparent=0,
                bg_texture_scale=8.0, diffuse_texture_scale=5.0)
    base.update(kw)
    return SceneConfig(**base)


class TestPretrain:
    def test_rejects_transparent_training_scenes(self):
        s = generate_scene(2, one_object_cfg("transparent"))
        cfg = PretrainConfig(max_epochs=1)
        with pytest.raises(ValueError):
            pretrain(init_model_state(cfg), [s], [s],
                     make_hypotheses(10.0, 48.0), cfg)

    def test_zero_lr_keeps_state(self):
        cfg_sc = tiny_diffuse_cfg()
        train = [generate_scene(0, cfg_sc)]
        cfg = PretrainConfig(lr=0.0, max_epochs=2, target_val_epe=0.0)
        init = init_model_state(cfg)
        hyps = make_hypotheses(4.0, 16.0)
        state, diag = pretrain(init, train, train, hyps, cfg)
        np.testing.assert_array_equal(state.w, init.w)
        assert state.tau == init.tau
        assert state.role == "pretrained"
        assert not diag["target_met"]

    def test_training_improves_validation_epe(self):
        cfg_sc = tiny_diffuse_cfg()
        train = [generate_scene(i, cfg_sc) for i in range(3)]
        val = [generate_scene(10, cfg_sc)]
        hyps = make_hypotheses(4.0, 16.0)
        cfg = PretrainConfig(lr=0.02, max_epochs=15, target_val_epe=0.0, seed=0)
        init = init_model_state(cfg)
        epe0 = diffuse_epe(init, val, hyps)
        state, diag = pretrain(init, train, val, hyps, cfg)
        assert diag["val_epe"] < epe0
        assert diag["epochs"] == 15

    def test_deterministic(self):
        cfg_sc = tiny_diffuse_cfg()
        train = [generate_scene(0, cfg_sc)]
        hyps = make_hypotheses(4.0, 16.0)
        cfg = PretrainConfig(lr=0.01, max_epochs=3, target_val_epe=0.0)
        s1, _ = pretrain(init_model_state(cfg), train, train, hyps, cfg)
        s2, _ = pretrain(init_model_state(cfg), train, train, hyps, cfg)
        assert s1.w.tobytes() == s2.w.tobytes()
        assert s1.tau == s2.tau


class TestSerialization:
    def test_roundtrip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(10)
        state = ModelState(rng.standard_normal((8, 25)), 0.0731234567890123,
                           "pretrained", 2, True)
        p = tmp_path / "model.bin"
        save_model_state(p, state)
        back = load_model_state(p)
        assert back.w.tobytes() == state.w.tobytes()
        assert back.tau == state.tau
        assert back.role == state.role
        assert back.patch_radius == state.patch_radius
        assert back.normalize == state.normalize
        assert (tmp_path / "model.bin.txt").exists()

    def test_rejects_garbage(self, tmp_path):
        p = tmp_path / "bad.bin"
        p.write_bytes(b"NOPE" + b"\x00" * 64)
        with pytest.raises(ValueError):
            load_model_state(p)

    def test_probability_volume_export(self, tmp_path):
        rng = np.random.default_rng(11)
        hyps = make_hypotheses(3.0, 6.0)
        probs = softmax_over_hypotheses(rng.normal(size=(4, 5, len(hyps))))
        paths = export_probability_volume(tmp_path / "vol", probs, hyps)
        assert len(paths) == len(hyps)
        first = load_pfm(paths[0])
        np.testing.assert_allclose(first, probs[:, :, 0].astype(np.float32))
