"""Touch-point selection (Stage 1).

Utility-driven path: per-pixel confidence (probability mass within a
neighborhood of the predicted disparity), binarized into an unconfident
mask, Gaussian-smoothed, then greedily argmaxed one touch at a time while
an entropy-minimizing surrogate tune after each touch turns off regions
the new touch already explains.  Baseline strategies (random, raw lowest
confidence with spacing, oracle object centers) share the same candidate
rules and budget.
"""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .scenegen import MAT_BOUNDARY, MAT_DIFFUSE, MAT_TRANSPARENT, SceneSample
from .stereomodel import (
    AdamOptimizer,
    FeatureCache,
    ModelState,
    _params_of,
    _state_from,
    entropy_of,
    forward_pixels,
    forward_volume,
    grad_scores_from_entropy,
    grad_scores_from_pred,
    pixel_backward,
    validate_hypotheses,
)


class SelectionError(ValueError):
    pass


@dataclass(frozen=True)
class SelectionConfig:
    """Stage-1 knobs; defaults follow the published tuning."""

    epsilon: float = 5.0
    c1: float = 0.999
    c1_mode: str = "fixed"              # fixed | diffuse_percentile
    c1_percentile: float = 80.0
    sigma_u: float = 6.5
    lambda_l2: float = 0.01
    surrogate_lr: float = 1e-5
    surrogate_tol: float = 1e-6
    surrogate_max_steps: int = 200
    n_per_view: int = 5
    min_spacing: float = 20.0
    boundary_exclusion: bool = True
    margin_exclusion: bool = True

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if not 0 < self.c1 < 1:
            raise ValueError("c1 must be in (0, 1)")
        if self.sigma_u <= 0:
            raise ValueError("sigma_u must be positive")
        if self.n_per_view < 1:
            raise ValueError("n_per_view must be >= 1")
        if self.c1_mode not in ("fixed", "diffuse_percentile"):
            raise ValueError(f"unknown c1_mode {self.c1_mode!r}")


@dataclass(frozen=True)
class Touch:
    scene_id: int
    view_id: int
    u: int
    v: int


def confidence_map(probs: np.ndarray, pred: np.ndarray, hyps: np.ndarray,
                   epsilon: float) -> np.ndarray:
    """Probability mass strictly within epsilon of the predicted disparity."""
    hyps = np.asarray(hyps, dtype=np.float64)
    near = np.abs(hyps - np.asarray(pred)[..., None]) < epsilon
    return np.sum(np.asarray(probs) * near, axis=-1)


def unconfident_mask(conf: np.ndarray, c1: float) -> np.ndarray:
    """1 where confidence <= c1 (inclusive), else 0."""
    return (np.asarray(conf) <= c1).astype(np.float64)


def gaussian_kernel_1d(sigma: float) -> np.ndarray:
    """Normalized 1D Gaussian taps truncated at |x| <= 3 sigma."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    radius = int(math.floor(3.0 * sigma))
    xs = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (xs / sigma) ** 2)
    return k / k.sum()


def smooth_mask(mask: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian convolution, zero-padded at the edges."""
    k = gaussian_kernel_1d(sigma)
    out = ndimage.convolve1d(np.asarray(mask, dtype=np.float64), k, axis=0,
                             mode="constant", cval=0.0)
    return ndimage.convolve1d(out, k, axis=1, mode="constant", cval=0.0)


def view_smoothed_mask(state: ModelState, feats, hyps, cfg: SelectionConfig,
                       c1: float):
    """Confidence -> binarized mask -> smoothed mask for one view."""
    fwd = forward_volume(feats, state, hyps)
    conf = confidence_map(fwd.probs, fwd.pred, hyps, cfg.epsilon)
    return smooth_mask(unconfident_mask(conf, c1), cfg.sigma_u), conf


def surrogate_utility(state: ModelState, samples, hyps, cfg: SelectionConfig,
                      c1: float | None = None,
                      cache: FeatureCache | None = None) -> float:
    """Negated total smoothed unconfident mass over all views; higher is
    better, 0 is the maximum (fully confident model)."""
    cache = cache or FeatureCache()
    c1_val = cfg.c1 if c1 is None else c1
    total = 0.0
    for s in samples:
        sm, _ = view_smoothed_mask(state, cache.get(s, state), hyps, cfg, c1_val)
        total += float(sm.sum())
    return -total


def candidate_mask(sample: SceneSample, cfg: SelectionConfig,
                   disparity_max: float) -> np.ndarray:
    """Pixels eligible for touching in one view."""
    ok = np.ones(sample.gt_disparity.shape, dtype=bool)
    if cfg.boundary_exclusion:
        ok &= sample.material != MAT_BOUNDARY
    if cfg.margin_exclusion:
        ok[:, : int(math.ceil(disparity_max))] = False
    return ok


def resolve_c1(state: ModelState, samples, hyps, cfg: SelectionConfig,
               cache: FeatureCache | None = None) -> float:
    """Fixed c1, or the configured percentile of diffuse-region confidence
    under the entering model (resolved once per selection run)."""
    if cfg.c1_mode == "fixed":
        return cfg.c1
    cache = cache or FeatureCache()
    vals = []
    for s in samples:
        fwd = forward_volume(cache.get(s, state), state, hyps)
        conf = confidence_map(fwd.probs, fwd.pred, hyps, cfg.epsilon)
        mask = s.material == MAT_DIFFUSE
        if mask.any():
            vals.append(conf[mask])
    if not vals:
        return cfg.c1
    return float(np.percentile(np.concatenate(vals), cfg.c1_percentile))


@dataclass
class TuneResult:
    state: ModelState
    steps: int
    converged: bool
    entry_loss: float
    exit_loss: float
    entry_entropy: np.ndarray
    exit_entropy: np.ndarray

    @property
    def entry_mean_entropy(self) -> float:
        return float(self.entry_entropy.mean())

    @property
    def exit_mean_entropy(self) -> float:
        return float(self.exit_entropy.mean())


def entropy_tune(state: ModelState, feats, hyps, pixels, cfg: SelectionConfig):
    """Minimize mean entropy at the given pixels, L2-anchored to the
    entering model's own disparity prediction there.

    Adam at cfg.surrogate_lr until the loss delta drops below
    cfg.surrogate_tol or cfg.surrogate_max_steps; returns the best state
    seen (entry state included), so the touched-pixel mean entropy never
    increases.
    """
    if len(pixels) == 0:
        raise SelectionError("entropy_tune needs at least one pixel")
    us = np.asarray([p[0] for p in pixels], dtype=np.int64)
    vs = np.asarray([p[1] for p in pixels], dtype=np.int64)
    n = us.size

    entry_fwd = forward_pixels(feats, state, hyps, us, vs)
    anchor = entry_fwd.pred.copy()
    entry_entropy = entropy_of(entry_fwd.probs)

    def loss_and_grads(cur: ModelState):
        pf = forward_pixels(feats, cur, hyps, us, vs)
        h_pix = entropy_of(pf.probs)
        dev = pf.pred - anchor
        loss = float(h_pix.mean() + cfg.lambda_l2 * np.mean(dev**2))
        g = grad_scores_from_entropy(pf.probs, h_pix) / n
        g += grad_scores_from_pred(pf.probs, pf.pred, hyps,
                                   2.0 * cfg.lambda_l2 * dev / n)
        dw, dtau = pixel_backward(cur, pf, g)
        return loss, dw, dtau, h_pix

    params = _params_of(state)
    opt = AdamOptimizer(params, lr=cfg.surrogate_lr)
    best_loss = math.inf
    best_params = params
    best_entropy = entry_entropy
    prev_loss = None
    converged = False
    steps = 0
    for step in range(cfg.surrogate_max_steps):
        cur = _state_from(params, state, "surrogate")
        loss, dw, dtau, h_pix = loss_and_grads(cur)
        if loss < best_loss:
            best_loss = loss
            best_params = {k: v.copy() for k, v in params.items()}
            best_entropy = h_pix
        if prev_loss is not None and abs(loss - prev_loss) < cfg.surrogate_tol:
            converged = True
            break
        prev_loss = loss
        params = opt.step(params, {"w": dw, "log_tau": np.array(dtau * cur.tau)})
        steps = step + 1
    # account for the final parameters if the loop ran to the cap
    cur = _state_from(params, state, "surrogate")
    final_loss, _, _, h_pix = loss_and_grads(cur)
    if final_loss < best_loss:
        best_loss = final_loss
        best_params = params
        best_entropy = h_pix
    entry_loss = float(entry_entropy.mean())  # anchor deviation is 0 at entry
    return TuneResult(
        state=_state_from(best_params, state, "surrogate"),
        steps=steps,
        converged=converged,
        entry_loss=entry_loss,
        exit_loss=best_loss,
        entry_entropy=entry_entropy,
        exit_entropy=best_entropy,
    )


@dataclass
class SelectionStep:
    """Replay record for one greedy pick."""

    index: int
    scene_id: int
    view_id: int
    u: int
    v: int
    mask_value: float
    fallback: bool
    w_snapshot: np.ndarray
    tau_snapshot: float
    tune_entry_entropy: float = math.nan
    tune_exit_entropy: float = math.nan
    tune_steps: int = 0
    tune_converged: bool = True


@dataclass
class SelectionResult:
    strategy: str
    touches: list
    steps: list = field(default_factory=list)
    c1: float = math.nan
    diagnostics: dict = field(default_factory=dict)


def _argmax_masked(values: np.ndarray, allowed: np.ndarray):
    """Row-major first argmax of values over allowed pixels."""
    masked = np.where(allowed, values, -np.inf)
    flat = int(np.argmax(masked))
    v, u = divmod(flat, values.shape[1])
    return u, v, float(masked[v, u])


def greedy_select(pretrained: ModelState, samples, hyps, cfg: SelectionConfig,
                  cache: FeatureCache | None = None) -> SelectionResult:
    """Greedy utility-driven touch selection.

    Processes the K views in order; within a view, each step argmaxes the
    smoothed unconfident mask of the model carried so far (row-major tie
    break, candidate rules applied), then entropy-tunes the carried model
    on all touches chosen so far in this view.  The tuned model rolls over
    to the next view; the final tuned model is discarded by the caller
    (it plays no role in finetuning).
    """
    if len(samples) == 0:
        raise SelectionError("need at least one view")
    validate_hypotheses(hyps)
    cache = cache or FeatureCache()
    c1 = resolve_c1(pretrained, samples, hyps, cfg, cache)
    state = pretrained.copy("surrogate")
    touches = []
    steps = []
    fallbacks = 0
    k_views = len(samples)
    for k, sample in enumerate(samples):
        feats = cache.get(sample, state)
        cand = candidate_mask(sample, cfg, sample.rig.disparity_max)
        view_pixels = []
        for i in range(cfg.n_per_view):
            if not cand.any():
                raise SelectionError(
                    f"view {sample.scene_id}/{sample.view_id}: no candidates left "
                    f"for touch {i + 1} of {cfg.n_per_view}")
            sm, conf = view_smoothed_mask(state, feats, hyps, cfg, c1)
            u, v, val = _argmax_masked(sm, cand)
            fallback = val <= 0.0
            if fallback:
                # fully confident view: lowest-confidence candidate instead
                u, v, negc = _argmax_masked(-conf, cand)
                val = float(sm[v, u])
                fallbacks += 1
            rec = SelectionStep(
                index=len(touches), scene_id=sample.scene_id,
                view_id=sample.view_id, u=u, v=v, mask_value=val,
                fallback=fallback, w_snapshot=state.w.copy(),
                tau_snapshot=float(state.tau))
            touches.append(Touch(sample.scene_id, sample.view_id, u, v))
            cand[v, u] = False
            view_pixels.append((u, v))
            last_step = (k == k_views - 1) and (i == cfg.n_per_view - 1)
            if not last_step:
                tune = entropy_tune(state, feats, hyps, view_pixels, cfg)
                state = tune.state
                rec.tune_entry_entropy = tune.entry_mean_entropy
                rec.tune_exit_entropy = tune.exit_mean_entropy
                rec.tune_steps = tune.steps
                rec.tune_converged = tune.converged
            steps.append(rec)
    return SelectionResult(strategy="utility", touches=touches, steps=steps,
                           c1=c1, diagnostics={"fallbacks": fallbacks})


def baseline_random(samples, cfg: SelectionConfig, seed: int) -> SelectionResult:
    """Uniform without replacement over valid pixels, per view."""
    touches = []
    for vi, sample in enumerate(samples):
        rng = np.random.default_rng(np.random.SeedSequence([823, seed, vi]))
        cand = candidate_mask(sample, cfg, sample.rig.disparity_max)
        idx = np.flatnonzero(cand)
        if idx.size < cfg.n_per_view:
            raise SelectionError(
                f"view {sample.scene_id}/{sample.view_id}: {idx.size} candidates "
                f"< n={cfg.n_per_view}")
        picks = rng.choice(idx, size=cfg.n_per_view, replace=False)
        w = cand.shape[1]
        for flat in picks:
            v, u = divmod(int(flat), w)
            touches.append(Touch(sample.scene_id, sample.view_id, u, v))
    return SelectionResult(strategy="random", touches=touches)


def baseline_confidence(state: ModelState, samples, hyps, cfg: SelectionConfig,
                        cache: FeatureCache | None = None) -> SelectionResult:
    """Ascending-confidence picks with pairwise spacing >= min_spacing."""
    cache = cache or FeatureCache()
    touches = []
    for sample in samples:
        feats = cache.get(sample, state)
        fwd = forward_volume(feats, state, hyps)
        conf = confidence_map(fwd.probs, fwd.pred, hyps, cfg.epsilon)
        cand = candidate_mask(sample, cfg, sample.rig.disparity_max)
        idx = np.flatnonzero(cand)
        order = idx[np.argsort(conf.ravel()[idx], kind="stable")]
        w = cand.shape[1]
        chosen = []
        for flat in order:
            v, u = divmod(int(flat), w)
            if all((u - cu) ** 2 + (v - cv) ** 2 >= cfg.min_spacing**2
                   for cu, cv in chosen):
                chosen.append((u, v))
                if len(chosen) == cfg.n_per_view:
                    break
        if len(chosen) < cfg.n_per_view:
            raise SelectionError(
                f"view {sample.scene_id}/{sample.view_id}: only {len(chosen)} "
                f"spaced picks available, need {cfg.n_per_view}")
        touches.extend(Touch(sample.scene_id, sample.view_id, u, v)
                       for u, v in chosen)
    return SelectionResult(strategy="confidence", touches=touches)


def baseline_oracle_center(samples, cfg: SelectionConfig) -> SelectionResult:
    """Centroids of transparent connected components (GT mask), largest
    first, cycling to the nearest unused transparent pixel when n exceeds
    the component count."""
    touches = []
    for sample in samples:
        trans = sample.material == MAT_TRANSPARENT
        labels, n_comp = ndimage.label(trans)
        if n_comp == 0:
            raise SelectionError(
                f"view {sample.scene_id}/{sample.view_id}: no transparent "
                "components for the oracle-center strategy")
        areas = ndimage.sum_labels(np.ones_like(labels), labels,
                                   index=np.arange(1, n_comp + 1))
        order = np.argsort(-areas, kind="stable") + 1
        comps = []
        for lab in order:
            vs, us = np.nonzero(labels == lab)
            cy, cx = vs.mean(), us.mean()
            d2 = (us - cx) ** 2 + (vs - cy) ** 2
            by_dist = np.lexsort((us, vs, d2))
            comps.append([(int(us[i]), int(vs[i])) for i in by_dist])
        chosen = []
        cursor = [0] * len(comps)
        ci = 0
        while len(chosen) < cfg.n_per_view:
            tried = 0
            while tried < len(comps) and cursor[ci % len(comps)] >= len(
                    comps[ci % len(comps)]):
                ci += 1
                tried += 1
            if tried == len(comps):
                raise SelectionError(
                    f"view {sample.scene_id}/{sample.view_id}: transparent pixels "
                    f"exhausted after {len(chosen)} of {cfg.n_per_view} picks")
            comp = comps[ci % len(comps)]
            chosen.append(comp[cursor[ci % len(comps)]])
            cursor[ci % len(comps)] += 1
            ci += 1
        touches.extend(Touch(sample.scene_id, sample.view_id, u, v)
                       for u, v in chosen)
    return SelectionResult(strategy="oracle_center", touches=touches)


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

def save_touches_csv(path, result: SelectionResult) -> None:
    with open(path, "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(["scene_id", "view_id", "u", "v", "selection_step", "strategy"])
        for i, t in enumerate(result.touches):
            wr.writerow([t.scene_id, t.view_id, t.u, t.v, i, result.strategy])


def load_touches_csv(path) -> SelectionResult:
    touches = []
    strategy = ""
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            touches.append(Touch(int(row["scene_id"]), int(row["view_id"]),
                                 int(row["u"]), int(row["v"])))
            strategy = row["strategy"]
    return SelectionResult(strategy=strategy, touches=touches)


_REPLAY_MAGIC = b"TSRP"


def save_selection_replay(path, result: SelectionResult) -> None:
    """Binary per-step record of the model state each pick argmaxed."""
    with open(path, "wb") as f:
        f.write(_REPLAY_MAGIC)
        f.write(struct.pack("<IId", 1, len(result.steps), result.c1))
        for st in result.steps:
            e_dim, f_dim = st.w_snapshot.shape
            f.write(struct.pack("<iiiiid?dII", st.index, st.scene_id, st.view_id,
                                st.u, st.v, st.mask_value, st.fallback,
                                st.tau_snapshot, e_dim, f_dim))
            f.write(st.w_snapshot.astype("<f8").tobytes(order="C"))


def load_selection_replay(path) -> SelectionResult:
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != _REPLAY_MAGIC:
        raise ValueError("not a selection replay file")
    _, n_steps, c1 = struct.unpack_from("<IId", data, 4)
    off = 4 + struct.calcsize("<IId")
    head = struct.Struct("<iiiiid?dII")
    steps = []
    touches = []
    for _ in range(n_steps):
        (index, scene_id, view_id, u, v, mask_value, fallback, tau, e_dim,
         f_dim) = head.unpack_from(data, off)
        off += head.size
        need = e_dim * f_dim * 8
        w = np.frombuffer(data[off : off + need], dtype="<f8").reshape(e_dim, f_dim)
        off += need
        steps.append(SelectionStep(index=index, scene_id=scene_id,
                                   view_id=view_id, u=u, v=v,
                                   mask_value=mask_value, fallback=fallback,
                                   w_snapshot=w.copy(), tau_snapshot=tau))
        touches.append(Touch(scene_id, view_id, u, v))
    return SelectionResult(strategy="utility", touches=touches, steps=steps, c1=c1)
