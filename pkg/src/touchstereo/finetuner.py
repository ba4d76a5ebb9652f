"""Stage 2: finetune the pretrained model on probed sparse labels.

Each successful probe becomes a patch label: the measured depth is
converted to disparity once, then blended with the pretrained model's
prediction over a (2p+1)^2 patch using a Gaussian weight centered at the
touch (weight 1 at the center, decaying outward, so the target
interpolates from the measurement toward the pretrained prior).  The
tactile loss is smooth-L1 against these targets; a regularization loss
anchors the prediction to the pretrained one wherever the pretrained
model was confident (pseudo-label mask), suppressing catastrophic
forgetting.  Both maps are frozen at entry.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .scenegen import SceneSample
from .selector import SelectionConfig, confidence_map
from .probesim import ProbeResult
from .stereomodel import (
    AdamOptimizer,
    FeatureCache,
    ModelState,
    _params_of,
    _state_from,
    forward_volume,
    grad_scores_from_pred,
    smooth_l1,
    smooth_l1_grad,
    validate_hypotheses,
    volume_backward,
)

TACTILE_MODES = ("patch", "pixel")


class FinetuneError(RuntimeError):
    pass


class FinetuneDivergence(FinetuneError):
    def __init__(self, message, log_rows):
        super().__init__(message)
        self.log_rows = log_rows


@dataclass(frozen=True)
class FinetuneConfig:
    lambda_t: float = 1.0
    lambda_r: float = 100.0
    patch_radius: int = 7
    sigma_t: float = 12.0
    c2: float = 0.9999
    lr: float = 2e-5
    epochs: int = 10
    beta: float = 1.0
    tactile_mode: str = "patch"
    divergence_factor: float = 10.0

    def __post_init__(self):
        if self.patch_radius < 0:
            raise ValueError("patch_radius must be >= 0")
        if self.sigma_t <= 0:
            raise ValueError("sigma_t must be positive")
        if not 0 < self.c2 < 1:
            raise ValueError("c2 must be in (0, 1)")
        if self.tactile_mode not in TACTILE_MODES:
            raise ValueError(f"unknown tactile_mode {self.tactile_mode!r}")


@dataclass
class TactileLabel:
    """Gaussian-refined patch targets for one successful probe."""

    scene_id: int
    view_id: int
    u: int
    v: int
    label_disparity: float
    us: np.ndarray       # flattened patch columns (border-clipped)
    vs: np.ndarray
    weights: np.ndarray  # Gaussian weight per patch pixel, 1 at the center
    targets: np.ndarray  # refined disparity per patch pixel
    center_index: int


def gaussian_patch_weight(du, dv, sigma_t: float):
    """exp(-((du^2 + dv^2) / (2 sigma_t^2)))."""
    du = np.asarray(du, dtype=np.float64)
    dv = np.asarray(dv, dtype=np.float64)
    return np.exp(-(du**2 + dv**2) / (2.0 * sigma_t**2))


def build_tactile_label(probe: ProbeResult, pretrained_pred: np.ndarray,
                        cfg: FinetuneConfig) -> TactileLabel:
    """Blend the probed disparity with the pretrained prediction over the
    patch; weights cached for inspection.  Rejects failed probes."""
    if not probe.success:
        raise ValueError(f"cannot build a label from a failed probe at "
                         f"({probe.touch.u}, {probe.touch.v})")
    h, w = pretrained_pred.shape
    u, v = probe.touch.u, probe.touch.v
    p = cfg.patch_radius
    us = np.arange(max(0, u - p), min(w, u + p + 1))
    vs = np.arange(max(0, v - p), min(h, v + p + 1))
    uu, vv = np.meshgrid(us, vs)
    uu = uu.ravel()
    vv = vv.ravel()
    g = gaussian_patch_weight(uu - u, vv - v, cfg.sigma_t)
    prior = pretrained_pred[vv, uu]
    targets = g * probe.derived_disparity_px + (1.0 - g) * prior
    center = int(np.flatnonzero((uu == u) & (vv == v))[0])
    return TactileLabel(scene_id=probe.touch.scene_id,
                        view_id=probe.touch.view_id, u=u, v=v,
                        label_disparity=probe.derived_disparity_px,
                        us=uu, vs=vv, weights=g, targets=targets,
                        center_index=center)


def tactile_loss(pred: np.ndarray, labels, cfg: FinetuneConfig):
    """Mean smooth-L1 over all contributing patch pixels (repeats from
    overlapping patches count separately).  Pixel mode restricts each
    label to its center pixel.  Returns (loss, dL/dpred map)."""
    if not labels:
        raise ValueError("tactile loss needs at least one label")
    total = 0.0
    count = 0
    grad = np.zeros_like(pred)
    for lab in labels:
        if cfg.tactile_mode == "pixel":
            us = lab.us[lab.center_index : lab.center_index + 1]
            vs = lab.vs[lab.center_index : lab.center_index + 1]
            targets = lab.targets[lab.center_index : lab.center_index + 1]
        else:
            us, vs, targets = lab.us, lab.vs, lab.targets
        r = pred[vs, us] - targets
        total += float(smooth_l1(r, cfg.beta).sum())
        np.add.at(grad, (vs, us), smooth_l1_grad(r, cfg.beta))
        count += len(us)
    return total / count, grad / count


def pseudo_mask(pretrained_confidence: np.ndarray, c2: float) -> np.ndarray:
    """1 exactly where the pretrained confidence >= c2 (inclusive)."""
    return np.asarray(pretrained_confidence) >= c2


def regularization_loss(pred: np.ndarray, pretrained_pred: np.ndarray,
                        mask: np.ndarray, cfg: FinetuneConfig):
    """Mean smooth-L1 to the pretrained prediction over the pseudo mask;
    zero (with zero gradient) if the mask is empty."""
    mask = np.asarray(mask, dtype=bool)
    count = int(mask.sum())
    grad = np.zeros_like(pred)
    if count == 0:
        return 0.0, grad
    r = np.where(mask, pred - pretrained_pred, 0.0)
    loss = float(smooth_l1(r[mask], cfg.beta).mean())
    grad = np.where(mask, smooth_l1_grad(r, cfg.beta), 0.0) / count
    return loss, grad


@dataclass
class _ViewContext:
    sample: SceneSample
    labels: list
    anchor_pred: np.ndarray
    mp: np.ndarray


def finetune(pretrained: ModelState, labels, samples, hyps,
             cfg: FinetuneConfig, selection_cfg: SelectionConfig | None = None,
             cache: FeatureCache | None = None):
    """Adam over lambda_T * tactile + lambda_R * regularization.

    One step per view per epoch for cfg.epochs; the pretrained prediction
    and pseudo mask are computed once at entry and frozen.  Aborts with
    FinetuneDivergence when the epoch loss exceeds divergence_factor times
    the initial epoch loss.  Returns (finetuned state, log rows).
    """
    if pretrained.role != "pretrained":
        raise ValueError(f"finetune expects a pretrained model, got role "
                         f"{pretrained.role!r}")
    if not labels:
        raise ValueError("finetuning without touches is undefined")
    validate_hypotheses(hyps)
    sel = selection_cfg or SelectionConfig()
    cache = cache or FeatureCache()

    by_view = {}
    for lab in labels:
        by_view.setdefault((lab.scene_id, lab.view_id), []).append(lab)
    contexts = []
    for s in samples:
        feats = cache.get(s, pretrained)
        fwd = forward_volume(feats, pretrained, hyps)
        conf = confidence_map(fwd.probs, fwd.pred, hyps, sel.epsilon)
        contexts.append(_ViewContext(
            sample=s, labels=by_view.get((s.scene_id, s.view_id), []),
            anchor_pred=fwd.pred.copy(), mp=pseudo_mask(conf, cfg.c2)))

    params = _params_of(pretrained)
    opt = AdamOptimizer(params, lr=cfg.lr)
    log_rows = []
    initial_epoch_loss = None
    for epoch in range(cfg.epochs):
        sums = np.zeros(3)  # tactile, regularization, combined
        for ctx in contexts:
            state = _state_from(params, pretrained, "finetuned")
            feats = cache.get(ctx.sample, state)
            fwd = forward_volume(feats, state, hyps)
            dl_dpred = np.zeros_like(fwd.pred)
            l_t = 0.0
            if ctx.labels and cfg.lambda_t != 0.0:
                l_t, g_t = tactile_loss(fwd.pred, ctx.labels, cfg)
                dl_dpred += cfg.lambda_t * g_t
            l_r = 0.0
            if cfg.lambda_r != 0.0:
                l_r, g_r = regularization_loss(fwd.pred, ctx.anchor_pred,
                                               ctx.mp, cfg)
                dl_dpred += cfg.lambda_r * g_r
            combined = cfg.lambda_t * l_t + cfg.lambda_r * l_r
            g = grad_scores_from_pred(fwd.probs, fwd.pred, hyps, dl_dpred)
            dw, dtau = volume_backward(feats, state, hyps, fwd, g)
            params = opt.step(params, {"w": dw,
                                       "log_tau": np.array(dtau * state.tau)})
            sums += (l_t, l_r, combined)
        means = sums / max(len(contexts), 1)
        log_rows.append((epoch, means[0], means[1], means[2]))
        if initial_epoch_loss is None:
            initial_epoch_loss = means[2]
        elif (initial_epoch_loss > 0
              and means[2] > cfg.divergence_factor * initial_epoch_loss):
            raise FinetuneDivergence(
                f"epoch {epoch} loss {means[2]:.6g} exceeds "
                f"{cfg.divergence_factor}x the initial {initial_epoch_loss:.6g}",
                log_rows)
    return _state_from(params, pretrained, "finetuned"), log_rows


def save_training_log_csv(path, log_rows) -> None:
    with open(path, "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(["epoch", "tactile_loss", "regularization_loss",
                     "combined_loss"])
        for epoch, lt, lr_, lc in log_rows:
            wr.writerow([epoch, repr(float(lt)), repr(float(lr_)),
                         repr(float(lc))])
