"""Simulated visual-tactile depth probing.

Stands in for the robot: a probe at pixel (u, v) returns the ground-truth
depth there corrupted by bounded relocation noise (hard-clipped, so every
draw respects the bound), then converted back to a disparity label.
Draws are pure functions of (seed, touch) so collected labels replay
exactly.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .scenegen import SceneSample, depth_to_disparity, disparity_to_depth
from .selector import Touch

NOISE_MODELS = ("none", "truncated_normal", "uniform")


@dataclass(frozen=True)
class ProbeConfig:
    noise_model: str = "truncated_normal"
    noise_sigma_m: float = 0.001
    noise_bound_m: float = 0.003
    seed: int = 0

    def __post_init__(self):
        if self.noise_model not in NOISE_MODELS:
            raise ValueError(f"unknown noise model {self.noise_model!r}")
        if self.noise_sigma_m < 0 or self.noise_bound_m < 0:
            raise ValueError("noise parameters must be nonnegative")


@dataclass(frozen=True)
class ProbeResult:
    touch: Touch
    measured_depth_m: float
    derived_disparity_px: float
    success: bool


@dataclass
class ProbeStats:
    attempted: int = 0
    succeeded: int = 0

    @property
    def failed(self) -> int:
        return self.attempted - self.succeeded


def _noise_draw(cfg: ProbeConfig, touch: Touch) -> float:
    if cfg.noise_model == "none":
        return 0.0
    rng = np.random.default_rng(np.random.SeedSequence(
        [547, cfg.seed, touch.scene_id, touch.view_id, touch.u, touch.v]))
    if cfg.noise_model == "uniform":
        return float(rng.uniform(-cfg.noise_bound_m, cfg.noise_bound_m))
    eta = float(rng.normal(0.0, cfg.noise_sigma_m)) if cfg.noise_sigma_m > 0 else 0.0
    return float(np.clip(eta, -cfg.noise_bound_m, cfg.noise_bound_m))


def probe(sample: SceneSample, touch: Touch, cfg: ProbeConfig) -> ProbeResult:
    """One touch; fails (success=False) on an invalid-disparity pixel."""
    gt_d = sample.gt_disparity[touch.v, touch.u]
    if not np.isfinite(gt_d) or gt_d <= 0:
        return ProbeResult(touch, float("nan"), float("nan"), False)
    gt_depth = disparity_to_depth(float(gt_d), sample.rig)
    depth = gt_depth + _noise_draw(cfg, touch)
    # keep the recovered |measured - gt| inside the hard bound at float
    # precision (the sum can overshoot the clipped draw by an ulp)
    while abs(depth - gt_depth) > cfg.noise_bound_m:
        depth = math.nextafter(depth, gt_depth)
    return ProbeResult(touch, depth, depth_to_disparity(depth, sample.rig), True)


def probe_batch(samples_by_view: dict, touches, cfg: ProbeConfig):
    """Probe every touch in order; failures are reported, never dropped.

    samples_by_view maps (scene_id, view_id) -> SceneSample.  Returns
    (results, stats); stats carries the touch budget spent.
    """
    results = []
    stats = ProbeStats()
    for t in touches:
        key = (t.scene_id, t.view_id)
        if key not in samples_by_view:
            raise KeyError(f"no sample for touch at scene {t.scene_id} "
                           f"view {t.view_id}")
        r = probe(samples_by_view[key], t, cfg)
        stats.attempted += 1
        stats.succeeded += int(r.success)
        results.append(r)
    return results, stats


def save_probes_csv(path, results) -> None:
    with open(path, "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(["scene_id", "view_id", "u", "v", "measured_depth_m",
                     "derived_disparity_px", "success"])
        for r in results:
            wr.writerow([r.touch.scene_id, r.touch.view_id, r.touch.u, r.touch.v,
                         repr(r.measured_depth_m), repr(r.derived_disparity_px),
                         int(r.success)])


def load_probes_csv(path):
    out = []
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            t = Touch(int(row["scene_id"]), int(row["view_id"]),
                      int(row["u"]), int(row["v"]))
            out.append(ProbeResult(t, float(row["measured_depth_m"]),
                                   float(row["derived_disparity_px"]),
                                   bool(int(row["success"]))))
    return out
