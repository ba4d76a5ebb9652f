"""Probe oracle: noise bound, determinism, batch semantics."""

import numpy as np
import pytest

from touchstereo.probesim import (
    ProbeConfig,
    ProbeResult,
    load_probes_csv,
    probe,
    probe_batch,
    save_probes_csv,
)
from touchstereo.scenegen import CameraRig, SceneSample, disparity_to_depth
from touchstereo.selector import Touch


def make_sample(nan_hole=False):
    rig = CameraRig(250.0, 0.05, 64, 48, 8.0, 40.0)
    gt = np.full((48, 64), 20.0)
    gt[10:20, 30:40] = 32.0
    if nan_hole:
        gt[5, 5] = np.nan
    img = np.zeros((48, 64))
    return SceneSample(left=img, right=img, gt_disparity=gt,
                       material=np.zeros((48, 64), np.uint8), rig=rig,
                       scene_id=3, view_id=1)


class TestProbe:
    def test_no_noise_returns_exact_gt(self):
        s = make_sample()
        r = probe(s, Touch(3, 1, 35, 15), ProbeConfig(noise_model="none"))
        assert r.success
        assert r.measured_depth_m == disparity_to_depth(32.0, s.rig)
        assert abs(r.derived_disparity_px - 32.0) < 1e-12

    @pytest.mark.parametrize("model", ["truncated_normal", "uniform"])
    def test_noise_bound_holds(self, model):
        s = make_sample()
        cfg = ProbeConfig(noise_model=model, noise_sigma_m=0.002,
                          noise_bound_m=0.003, seed=7)
        gt_depth = disparity_to_depth(20.0, s.rig)
        worst = 0.0
        for u in range(40, 60):
            for v in range(0, 48):
                r = probe(s, Touch(3, 1, u, v), cfg)
                worst = max(worst, abs(r.measured_depth_m - gt_depth)
                            if s.gt_disparity[v, u] == 20.0 else worst)
        assert worst <= 0.003

    def test_seed_replay_bit_exact(self):
        s = make_sample()
        cfg = ProbeConfig(seed=11)
        t = Touch(3, 1, 10, 10)
        assert probe(s, t, cfg).measured_depth_m == probe(s, t, cfg).measured_depth_m

    def test_different_touches_different_noise(self):
        s = make_sample()
        cfg = ProbeConfig(seed=11)
        a = probe(s, Touch(3, 1, 10, 10), cfg)
        b = probe(s, Touch(3, 1, 11, 10), cfg)
        assert a.measured_depth_m != b.measured_depth_m

    def test_invalid_pixel_fails(self):
        s = make_sample(nan_hole=True)
        r = probe(s, Touch(3, 1, 5, 5), ProbeConfig())
        assert not r.success
        assert np.isnan(r.measured_depth_m)


class TestProbeBatch:
    def test_empty(self):
        res, stats = probe_batch({}, [], ProbeConfig())
        assert res == [] and stats.attempted == 0

    def test_order_preserving_and_counts(self):
        s = make_sample(nan_hole=True)
        by_view = {(3, 1): s}
        touches = [Touch(3, 1, 35, 15), Touch(3, 1, 5, 5), Touch(3, 1, 2, 2)]
        res, stats = probe_batch(by_view, touches, ProbeConfig(noise_model="none"))
        assert [r.touch for r in res] == touches
        assert stats.attempted == 3 and stats.succeeded == 2 and stats.failed == 1
        assert not res[1].success

    def test_missing_view_raises(self):
        with pytest.raises(KeyError):
            probe_batch({}, [Touch(9, 9, 0, 0)], ProbeConfig())

    def test_csv_roundtrip(self, tmp_path):
        s = make_sample(nan_hole=True)
        touches = [Touch(3, 1, 35, 15), Touch(3, 1, 5, 5)]
        res, _ = probe_batch({(3, 1): s}, touches, ProbeConfig(seed=5))
        p = tmp_path / "probes.csv"
        save_probes_csv(p, res)
        back = load_probes_csv(p)
        assert len(back) == 2
        assert back[0].touch == res[0].touch
        assert back[0].measured_depth_m == res[0].measured_depth_m
        assert back[0].derived_disparity_px == res[0].derived_disparity_px
        assert back[1].success is False
