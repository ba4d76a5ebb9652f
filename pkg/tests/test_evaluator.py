"""Metric fixtures (hand-computed), split bookkeeping, table emitters."""

import json

import numpy as np
import pytest

from touchstereo.evaluator import (
    ComparisonTable,
    MetricReport,
    abs_depth_err,
    bad1,
    compare,
    delta105,
    depth_error_stats,
    epe,
    frac_gt_4mm,
    report,
    report_views,
)
from touchstereo.scenegen import (
    MAT_BACKGROUND,
    MAT_BOUNDARY,
    MAT_DIFFUSE,
    MAT_TRANSPARENT,
    CameraRig,
    SceneSample,
)

RIG = CameraRig(250.0, 0.05, 64, 48, 8.0, 40.0)


def sample_with(gt, material=None):
    h, w = gt.shape
    if material is None:
        material = np.zeros((h, w), np.uint8)
    img = np.zeros((h, w))
    return SceneSample(left=img, right=img, gt_disparity=gt, material=material,
                       rig=RIG, scene_id=0, view_id=0)


class TestDisparityMetrics:
    def test_epe_zero_when_equal(self):
        gt = np.full((4, 4), 20.0)
        assert epe(gt, gt) == 0.0

    def test_epe_uniform_offset(self):
        gt = np.full((4, 4), 20.0)
        assert epe(gt + 1.0, gt) == 1.0

    def test_epe_two_pixel_hand_mean(self):
        gt = np.array([[20.0, 20.0]])
        pred = np.array([[21.0, 23.0]])
        assert epe(pred, gt) == 2.0

    def test_bad1_all_small(self):
        gt = np.full((3, 3), 20.0)
        assert bad1(gt + 0.5, gt) == 0.0

    def test_bad1_boundary_strict(self):
        gt = np.full((3, 3), 20.0)
        assert bad1(gt + 1.0, gt) == 0.0

    def test_bad1_half(self):
        gt = np.full((1, 4), 20.0)
        pred = gt.copy()
        pred[0, :2] += 2.0
        assert bad1(pred, gt) == 0.5

    def test_nan_gt_excluded(self):
        gt = np.array([[20.0, np.nan]])
        pred = np.array([[21.0, 99.0]])
        assert epe(pred, gt) == 1.0


class TestDepthMetrics:
    def test_perfect_prediction(self):
        gt = np.full((2, 2), 25.0)
        a, f4, d = depth_error_stats(gt, gt, RIG)
        assert (a, f4, d) == (0.0, 0.0, 1.0)

    def test_one_5mm_error_of_two(self):
        # build disparities from target depths: d = f*b/z
        fb = RIG.focal_px * RIG.baseline_m
        z_gt = np.array([[0.5, 0.5]])
        z_pred = np.array([[0.5, 0.505]])  # 0 and 5 mm errors
        gt = fb / z_gt
        pred = fb / z_pred
        a, f4, d = depth_error_stats(pred, gt, RIG)
        assert abs(a - 2.5) < 1e-9
        assert f4 == 0.5
        assert frac_gt_4mm(pred, gt, RIG) == 0.5

    def test_delta105_uniform_49_relative(self):
        fb = RIG.focal_px * RIG.baseline_m
        z_gt = np.full((3, 3), 0.6)
        z_pred = z_gt * 1.049
        d = delta105(fb / z_pred, fb / z_gt, RIG)
        assert d == 1.0

    def test_delta105_strict_boundary(self):
        fb = RIG.focal_px * RIG.baseline_m
        z_gt = np.full((2, 2), 0.6)
        z_pred = z_gt * 1.05  # exactly 5%: not counted
        assert delta105(fb / z_pred, fb / z_gt, RIG) == 0.0

    def test_4mm_threshold_is_strict_above(self):
        fb = RIG.focal_px * RIG.baseline_m
        z_gt = np.full((2, 2), 0.5)
        below = z_gt + 0.00399
        above = z_gt + 0.00401
        assert frac_gt_4mm(fb / below, fb / z_gt, RIG) == 0.0
        assert frac_gt_4mm(fb / above, fb / z_gt, RIG) == 1.0
        assert abs(abs_depth_err(fb / below, fb / z_gt, RIG) - 3.99) < 1e-6


class TestReport:
    def make_scene(self):
        gt = np.full((10, 10), 20.0)
        mat = np.full((10, 10), MAT_BACKGROUND, np.uint8)
        mat[2:5, 2:5] = MAT_DIFFUSE
        mat[6:9, 6:9] = MAT_TRANSPARENT
        mat[0, :] = MAT_BOUNDARY
        gt[2:5, 2:5] = 30.0
        gt[6:9, 6:9] = 28.0
        return sample_with(gt, mat)

    def test_split_counts_partition(self):
        s = self.make_scene()
        rep = report(s.gt_disparity + 1.0, s)
        counts = {name: sums.count for name, sums in rep.class_depth.items()}
        assert sum(counts.values()) == rep.metrics("All")["pixel_count"]
        assert rep.metrics("Trans")["pixel_count"] == 9
        assert rep.metrics("Diffuse")["pixel_count"] == 9

    def test_boundary_exclusion_flag(self):
        s = self.make_scene()
        full = report(s.gt_disparity, s, include_boundary=True)
        trimmed = report(s.gt_disparity, s, include_boundary=False)
        assert (full.metrics("All")["pixel_count"]
                - trimmed.metrics("All")["pixel_count"]) == 10

    def test_merge_matches_joint_computation(self):
        s = self.make_scene()
        rng = np.random.default_rng(3)
        pred = s.gt_disparity + rng.normal(scale=2.0, size=s.gt_disparity.shape)
        top = sample_with(s.gt_disparity[:5].copy(), s.material[:5].copy())
        bot = sample_with(s.gt_disparity[5:].copy(), s.material[5:].copy())
        merged = report_views([pred[:5], pred[5:]], [top, bot])
        joint = report(pred, s)
        for split in ("All", "Trans", "Diffuse"):
            a, b = merged.metrics(split), joint.metrics(split)
            for k in a:
                np.testing.assert_allclose(a[k], b[k], atol=1e-12)

    def test_per_class_error_map(self):
        s = self.make_scene()
        pred = s.gt_disparity.copy()
        pred[s.material == MAT_TRANSPARENT] += 2.0
        rep = report(pred, s)
        per_class = rep.class_abs_depth_err()
        assert per_class["transparent"] > 0
        assert per_class["diffuse"] == 0.0
        assert set(per_class) == {"background", "diffuse", "transparent",
                                  "boundary"}


class TestCompare:
    def test_identical_preds_identical_rows(self):
        s = TestReport().make_scene()
        r1 = report(s.gt_disparity + 0.5, s)
        r2 = report(s.gt_disparity + 0.5, s)
        table = compare({"a": r1, "b": r2})
        csv_text = table.to_csv()
        lines = csv_text.strip().split("\n")
        assert lines[1].split(",", 1)[1] == lines[2].split(",", 1)[1]

    def test_json_schema_and_text_render(self):
        s = TestReport().make_scene()
        table = compare([("only", report(s.gt_disparity, s))])
        payload = json.loads(table.to_json())
        assert payload["schema_version"] == 1
        assert payload["rows"][0]["label"] == "only"
        text = table.to_text()
        assert "All EPE" in text and "only" in text
