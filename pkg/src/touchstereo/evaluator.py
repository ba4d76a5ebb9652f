"""Disparity and depth metrics with material splits and comparison tables.

Metrics: EPE (mean absolute disparity error, px), Bad1 (fraction with
disparity error strictly > 1 px), absolute depth error (mm), fraction
with depth error strictly > 4 mm, and delta_1.05 (fraction with relative
depth error strictly < 5%).  Depth figures share one disparity-to-depth
conversion path.  Splits: All (every valid-GT pixel), Trans, Diffuse;
per-class absolute depth error covers every material label.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from .scenegen import (
    MAT_BACKGROUND,
    MAT_BOUNDARY,
    MAT_DIFFUSE,
    MAT_TRANSPARENT,
    CameraRig,
    SceneSample,
    disparity_to_depth,
)

SCHEMA_VERSION = 1

CLASS_NAMES = {
    MAT_BACKGROUND: "background",
    MAT_DIFFUSE: "diffuse",
    MAT_TRANSPARENT: "transparent",
    MAT_BOUNDARY: "boundary",
}

METRIC_COLUMNS = ("epe_px", "bad1_frac", "abs_depth_err_mm", "frac_gt_4mm",
                  "delta105_frac", "pixel_count")


def _valid(gt, mask):
    ok = np.isfinite(np.asarray(gt, dtype=np.float64))
    if mask is not None:
        ok &= np.asarray(mask, dtype=bool)
    return ok


def epe(pred, gt, mask=None) -> float:
    """Mean absolute disparity error over valid-GT pixels in mask."""
    ok = _valid(gt, mask)
    if not ok.any():
        return float("nan")
    return float(np.abs(np.asarray(pred) - np.asarray(gt))[ok].mean())


def bad1(pred, gt, mask=None) -> float:
    """Fraction of pixels with disparity error strictly greater than 1."""
    ok = _valid(gt, mask)
    if not ok.any():
        return float("nan")
    return float((np.abs(np.asarray(pred) - np.asarray(gt))[ok] > 1.0).mean())


def depth_error_stats(pred, gt, rig: CameraRig, mask=None):
    """(mean abs depth error mm, fraction > 4 mm, delta_1.05) from one
    shared disparity-to-depth conversion."""
    ok = _valid(gt, mask)
    if not ok.any():
        return float("nan"), float("nan"), float("nan")
    zp = disparity_to_depth(np.asarray(pred, dtype=np.float64)[ok], rig)
    zg = disparity_to_depth(np.asarray(gt, dtype=np.float64)[ok], rig)
    err_mm = np.abs(zp - zg) * 1000.0
    return (float(err_mm.mean()), float((err_mm > 4.0).mean()),
            float((np.abs(zp - zg) / zg < 0.05).mean()))


def abs_depth_err(pred, gt, rig, mask=None) -> float:
    return depth_error_stats(pred, gt, rig, mask)[0]


def frac_gt_4mm(pred, gt, rig, mask=None) -> float:
    return depth_error_stats(pred, gt, rig, mask)[1]


def delta105(pred, gt, rig, mask=None) -> float:
    return depth_error_stats(pred, gt, rig, mask)[2]


@dataclass
class SplitSums:
    """Exact per-split accumulators so reports merge without drift."""

    count: int = 0
    abs_disp_err: float = 0.0
    bad1_count: int = 0
    abs_depth_err_mm: float = 0.0
    gt4_count: int = 0
    d105_count: int = 0

    def add(self, pred, gt, rig, ok):
        n = int(ok.sum())
        if n == 0:
            return
        d_err = np.abs(pred - gt)[ok]
        zp = disparity_to_depth(pred[ok], rig)
        zg = disparity_to_depth(gt[ok], rig)
        z_err = np.abs(zp - zg)
        self.count += n
        self.abs_disp_err += float(d_err.sum())
        self.bad1_count += int((d_err > 1.0).sum())
        self.abs_depth_err_mm += float(z_err.sum() * 1000.0)
        self.gt4_count += int((z_err * 1000.0 > 4.0).sum())
        self.d105_count += int((z_err / zg < 0.05).sum())

    def merge(self, other: "SplitSums"):
        self.count += other.count
        self.abs_disp_err += other.abs_disp_err
        self.bad1_count += other.bad1_count
        self.abs_depth_err_mm += other.abs_depth_err_mm
        self.gt4_count += other.gt4_count
        self.d105_count += other.d105_count

    def metrics(self) -> dict:
        if self.count == 0:
            nan = float("nan")
            return dict(zip(METRIC_COLUMNS, (nan, nan, nan, nan, nan, 0)))
        return {
            "epe_px": self.abs_disp_err / self.count,
            "bad1_frac": self.bad1_count / self.count,
            "abs_depth_err_mm": self.abs_depth_err_mm / self.count,
            "frac_gt_4mm": self.gt4_count / self.count,
            "delta105_frac": self.d105_count / self.count,
            "pixel_count": self.count,
        }


@dataclass
class MetricReport:
    """Per-split metric sums for one or more evaluated views."""

    splits: dict = field(default_factory=dict)        # name -> SplitSums
    class_depth: dict = field(default_factory=dict)   # class -> SplitSums
    n_views: int = 0

    def metrics(self, split: str) -> dict:
        return self.splits[split].metrics()

    def class_abs_depth_err(self) -> dict:
        return {name: sums.metrics()["abs_depth_err_mm"]
                for name, sums in self.class_depth.items()}

    def merge(self, other: "MetricReport") -> "MetricReport":
        for name, sums in other.splits.items():
            self.splits.setdefault(name, SplitSums()).merge(sums)
        for name, sums in other.class_depth.items():
            self.class_depth.setdefault(name, SplitSums()).merge(sums)
        self.n_views += other.n_views
        return self


def report(pred: np.ndarray, sample: SceneSample,
           include_boundary: bool = True) -> MetricReport:
    """Metrics for one view; boundary pixels stay in All unless excluded."""
    gt = sample.gt_disparity
    valid = np.isfinite(gt)
    pred = np.asarray(pred, dtype=np.float64)
    rep = MetricReport(n_views=1)
    all_mask = valid.copy()
    if not include_boundary:
        all_mask &= sample.material != MAT_BOUNDARY
    for name, mask in (
            ("All", all_mask),
            ("Trans", valid & (sample.material == MAT_TRANSPARENT)),
            ("Diffuse", valid & (sample.material == MAT_DIFFUSE))):
        sums = SplitSums()
        sums.add(pred, gt, sample.rig, mask)
        rep.splits[name] = sums
    for code, name in CLASS_NAMES.items():
        sums = SplitSums()
        sums.add(pred, gt, sample.rig, valid & (sample.material == code))
        rep.class_depth[name] = sums
    return rep


def report_views(preds, samples, include_boundary: bool = True) -> MetricReport:
    total = MetricReport()
    for pred, sample in zip(preds, samples):
        total.merge(report(pred, sample, include_boundary))
    return total


# ---------------------------------------------------------------------------
# comparison tables
# ---------------------------------------------------------------------------

@dataclass
class ComparisonTable:
    """Rows of labeled reports rendered as CSV / JSON / aligned text."""

    rows: list  # (label, MetricReport)
    splits: tuple = ("All", "Trans", "Diffuse")

    def to_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        header = ["label"]
        for sp in self.splits:
            header += [f"{sp}.{m}" for m in METRIC_COLUMNS]
        wr.writerow(header)
        for label, rep in self.rows:
            row = [label]
            for sp in self.splits:
                m = rep.metrics(sp)
                row += [repr(m[c]) if c != "pixel_count" else m[c]
                        for c in METRIC_COLUMNS]
            wr.writerow(row)
        return buf.getvalue()

    def to_json(self) -> str:
        payload = {"schema_version": SCHEMA_VERSION, "rows": []}
        for label, rep in self.rows:
            entry = {"label": label,
                     "splits": {sp: rep.metrics(sp) for sp in self.splits},
                     "class_abs_depth_err_mm": rep.class_abs_depth_err()}
            payload["rows"].append(entry)
        return json.dumps(payload, sort_keys=True, indent=2)

    def to_text(self) -> str:
        cols = ["label"]
        for sp in self.splits:
            cols += [f"{sp} EPE", f"{sp} Bad1", f"{sp} AbsZ(mm)", f"{sp} >4mm",
                     f"{sp} d1.05"]
        lines = []
        body = []
        for label, rep in self.rows:
            row = [label]
            for sp in self.splits:
                m = rep.metrics(sp)
                row += [f"{m['epe_px']:.3f}", f"{m['bad1_frac']:.3f}",
                        f"{m['abs_depth_err_mm']:.3f}", f"{m['frac_gt_4mm']:.3f}",
                        f"{m['delta105_frac']:.3f}"]
            body.append(row)
        widths = [max(len(c), *(len(r[i]) for r in body)) if body else len(c)
                  for i, c in enumerate(cols)]
        lines.append("  ".join(c.rjust(w) for c, w in zip(cols, widths)))
        lines.append("  ".join("-" * w for w in widths))
        for row in body:
            lines.append("  ".join(c.rjust(w) for c, w in zip(row, widths)))
        return "\n".join(lines) + "\n"


def compare(reports_by_label) -> ComparisonTable:
    """reports_by_label: mapping or (label, report) iterable, order kept."""
    if hasattr(reports_by_label, "items"):
        rows = list(reports_by_label.items())
    else:
        rows = list(reports_by_label)
    return ComparisonTable(rows=rows)
