"""Matplotlib figures rendered next to the delimited report files."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_PNG_META = {"Software": "touchstereo"}


def _save(fig, path):
    fig.savefig(path, dpi=110, bbox_inches="tight", metadata=_PNG_META)
    plt.close(fig)


def save_scene_panel(path, sample, pred, confidence=None) -> None:
    """Left image, GT/predicted disparity, error, confidence, materials."""
    err = np.abs(pred - sample.gt_disparity)
    panels = [
        ("left image", sample.left, "gray", None),
        ("GT disparity", sample.gt_disparity, "viridis", None),
        ("predicted disparity", pred, "viridis", None),
        ("abs disparity error", err, "magma", None),
    ]
    if confidence is not None:
        panels.append(("confidence", confidence, "cividis", (0.0, 1.0)))
    panels.append(("material labels", sample.material, "tab20b", None))
    ncols = 3
    nrows = (len(panels) + ncols - 1) // ncols
    fig, axes = plt.subplots(nrows, ncols, figsize=(4 * ncols, 3 * nrows))
    axes = np.atleast_1d(axes).ravel()
    dlo, dhi = sample.rig.disparity_min, sample.rig.disparity_max
    for ax, (title, data, cmap, clim) in zip(axes, panels):
        if "disparity" in title and "error" not in title:
            im = ax.imshow(data, cmap=cmap, vmin=dlo, vmax=dhi)
        elif clim is not None:
            im = ax.imshow(data, cmap=cmap, vmin=clim[0], vmax=clim[1])
        else:
            im = ax.imshow(data, cmap=cmap)
        ax.set_title(title, fontsize=9)
        ax.set_xticks([])
        ax.set_yticks([])
        fig.colorbar(im, ax=ax, fraction=0.04)
    for ax in axes[len(panels):]:
        ax.axis("off")
    _save(fig, path)


def save_map(path, data, title, cmap="viridis") -> None:
    fig, ax = plt.subplots(figsize=(5, 4))
    im = ax.imshow(data, cmap=cmap)
    ax.set_title(title, fontsize=10)
    ax.set_xticks([])
    ax.set_yticks([])
    fig.colorbar(im, ax=ax, fraction=0.046)
    _save(fig, path)


def save_metric_bars(path, table, metric="epe_px",
                     splits=("All", "Trans")) -> None:
    """Grouped bars of one metric per comparison-table row."""
    labels = [label for label, _ in table.rows]
    x = np.arange(len(labels), dtype=float)
    width = 0.8 / len(splits)
    fig, ax = plt.subplots(figsize=(1.6 + 1.1 * len(labels), 3.4))
    for si, split in enumerate(splits):
        vals = [rep.metrics(split)[metric] for _, rep in table.rows]
        ax.bar(x + si * width, vals, width, label=split)
    ax.set_xticks(x + width * (len(splits) - 1) / 2)
    ax.set_xticklabels(labels, rotation=20, ha="right", fontsize=8)
    ax.set_ylabel(metric)
    ax.legend(fontsize=8)
    ax.spines["top"].set_visible(False)
    ax.spines["right"].set_visible(False)
    _save(fig, path)


def save_aggregate_bars(path, rows, metric_label="Trans EPE (px)") -> None:
    """Mean +/- std bars; rows = [(label, mean, std), ...]."""
    labels = [r[0] for r in rows]
    means = [r[1] for r in rows]
    stds = [r[2] for r in rows]
    x = np.arange(len(labels), dtype=float)
    fig, ax = plt.subplots(figsize=(1.6 + 1.1 * len(labels), 3.4))
    ax.bar(x, means, 0.6, yerr=stds, capsize=3)
    ax.set_xticks(x)
    ax.set_xticklabels(labels, rotation=20, ha="right", fontsize=8)
    ax.set_ylabel(metric_label)
    ax.spines["top"].set_visible(False)
    ax.spines["right"].set_visible(False)
    _save(fig, path)
