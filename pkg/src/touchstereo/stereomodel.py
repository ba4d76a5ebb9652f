"""Minimal differentiable cost-volume stereo model.

Per pixel, the model scores each disparity hypothesis d by correlating
embedded patch descriptors, s(u,v,d) = <W phi_L(u,v), W phi_R(u-d,v)> / tau,
turns scores into a probability volume with a per-pixel softmax, and
regresses disparity as the expectation over hypotheses.

Gradients with respect to W and tau are closed-form.  With g = dL/ds:

    dL/dW   = W (A + A^T) / tau,   A = sum_{i,d} g[i,d] phi_R[i,d] phi_L[i]^T
    dL/dtau = -sum_{i,d} g[i,d] * s[i,d] / tau

and the two standard upstream pieces are

    d pred_i / d s[i,d]   = p[i,d] * (h[d] - pred_i)
    d H_i    / d s[i,d]   = -p[i,d] * (log p[i,d] + H_i)

Entries where u - d < 0 carry a constant sentinel score and no gradient.
"""

from __future__ import annotations

import io
import math
import struct
from dataclasses import dataclass, replace

import numpy as np

from .fileio import save_pfm
from .scenegen import SceneSample

SENTINEL_SCORE = -1.0e6

ROLES = ("init", "pretrained", "surrogate", "finetuned")

_MAGIC = b"TSMS"
_FORMAT_VERSION = 1


def make_hypotheses(d_min: float, d_max: float, step: float = 1.0) -> np.ndarray:
    """Hypothesis values [d_min, d_max] at the given spacing, inclusive."""
    if not (0 < d_min < d_max):
        raise ValueError("need 0 < d_min < d_max")
    n = int(math.floor((d_max - d_min) / step + 1e-9)) + 1
    hyps = d_min + step * np.arange(n, dtype=np.float64)
    validate_hypotheses(hyps)
    return hyps


def validate_hypotheses(hyps: np.ndarray) -> None:
    hyps = np.asarray(hyps)
    if hyps.ndim != 1 or hyps.size < 2:
        raise ValueError("hypothesis set needs at least 2 values")
    if np.any(np.diff(hyps) <= 0):
        raise ValueError("hypothesis values must be strictly increasing")


@dataclass
class ModelState:
    """Learnable embedding W (E x F), temperature tau, and a role tag."""

    w: np.ndarray
    tau: float
    role: str = "init"
    patch_radius: int = 2
    normalize: bool = True

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=np.float64)
        if self.w.ndim != 2:
            raise ValueError("W must be 2D (embed_dim x n_features)")
        if not np.all(np.isfinite(self.w)):
            raise ValueError("W has non-finite entries")
        if not (self.tau > 0 and np.isfinite(self.tau)):
            raise ValueError(f"tau must be positive and finite, got {self.tau}")
        if self.role not in ROLES:
            raise ValueError(f"unknown role {self.role!r}")

    @property
    def n_features(self) -> int:
        return self.w.shape[1]

    def copy(self, role: str | None = None) -> "ModelState":
        return ModelState(self.w.copy(), float(self.tau),
                          role if role is not None else self.role,
                          self.patch_radius, self.normalize)


def extract_descriptor(image: np.ndarray, u: int, v: int, patch_radius: int,
                       normalize: bool = True) -> np.ndarray:
    """Flattened edge-clamped patch, mean-subtracted and L2-normalized.

    Constant patches give the zero vector.
    """
    image = np.asarray(image, dtype=np.float64)
    h, w = image.shape
    if not (0 <= u < w and 0 <= v < h):
        raise ValueError(f"pixel ({u}, {v}) outside {w}x{h} image")
    r = patch_radius
    us = np.clip(np.arange(u - r, u + r + 1), 0, w - 1)
    vs = np.clip(np.arange(v - r, v + r + 1), 0, h - 1)
    patch = image[np.ix_(vs, us)].ravel()
    patch = patch - patch.mean()
    if normalize:
        norm = np.linalg.norm(patch)
        if norm < 1e-12:
            return np.zeros_like(patch)
        patch = patch / norm
    return patch


def descriptor_map(image: np.ndarray, patch_radius: int,
                   normalize: bool = True) -> np.ndarray:
    """All per-pixel descriptors at once; (H, W, F) with F=(2r+1)^2."""
    image = np.asarray(image, dtype=np.float64)
    r = patch_radius
    padded = np.pad(image, r, mode="edge")
    win = np.lib.stride_tricks.sliding_window_view(padded, (2 * r + 1, 2 * r + 1))
    feats = win.reshape(image.shape[0], image.shape[1], -1).copy()
    feats -= feats.mean(axis=2, keepdims=True)
    if normalize:
        norms = np.linalg.norm(feats, axis=2, keepdims=True)
        np.divide(feats, norms, out=feats, where=norms > 1e-12)
        feats[np.broadcast_to(norms <= 1e-12, feats.shape)] = 0.0
    return feats


@dataclass
class ViewFeatures:
    """Cached descriptor maps for one stereo view."""

    scene_id: int
    view_id: int
    left: np.ndarray   # (H, W, F)
    right: np.ndarray  # (H, W, F)

    @property
    def shape(self):
        return self.left.shape[:2]


def view_features(sample: SceneSample, patch_radius: int = 2,
                  normalize: bool = True) -> ViewFeatures:
    return ViewFeatures(
        scene_id=sample.scene_id,
        view_id=sample.view_id,
        left=descriptor_map(sample.left, patch_radius, normalize),
        right=descriptor_map(sample.right, patch_radius, normalize),
    )


class FeatureCache:
    """Descriptor maps keyed by (scene_id, view_id, patch_radius)."""

    def __init__(self):
        self._store = {}

    def get(self, sample: SceneSample, state: ModelState) -> ViewFeatures:
        key = (sample.scene_id, sample.view_id, state.patch_radius, state.normalize)
        if key not in self._store:
            self._store[key] = view_features(sample, state.patch_radius,
                                             state.normalize)
        return self._store[key]

    def clear(self):
        self._store.clear()


def _shift_columns(hyps: np.ndarray, width: int):
    """Per hypothesis: integer base column, interpolation weight, first
    valid left-image column (u >= d)."""
    out = []
    for d in np.asarray(hyps, dtype=np.float64):
        k = math.floor(d)
        a = d - k
        u0 = k if a == 0 else k + 1  # smallest u with u - d >= 0
        out.append((k, a, u0))
    return out


@dataclass
class VolumeForward:
    scores: np.ndarray  # (H, W, D); sentinel at invalid entries
    probs: np.ndarray   # (H, W, D)
    pred: np.ndarray    # (H, W)
    valid: np.ndarray   # (H, W, D) bool


def _softmax_last(scores: np.ndarray) -> np.ndarray:
    m = scores.max(axis=-1, keepdims=True)
    p = np.exp(scores - m)
    p /= p.sum(axis=-1, keepdims=True)
    return p


def softmax_over_hypotheses(scores: np.ndarray) -> np.ndarray:
    """Max-subtracted per-pixel softmax along the hypothesis axis."""
    return _softmax_last(np.asarray(scores, dtype=np.float64))


def predict_disparity(probs: np.ndarray, hyps: np.ndarray) -> np.ndarray:
    """Expected hypothesis value per pixel."""
    return np.asarray(probs) @ np.asarray(hyps, dtype=np.float64)


def forward_volume(feats: ViewFeatures, state: ModelState,
                   hyps: np.ndarray) -> VolumeForward:
    h, w = feats.shape
    d_n = len(hyps)
    el = feats.left @ state.w.T   # (H, W, E)
    er = feats.right @ state.w.T
    scores = np.full((h, w, d_n), SENTINEL_SCORE)
    valid = np.zeros((h, w, d_n), dtype=bool)
    inv_tau = 1.0 / state.tau
    for di, (k, a, u0) in enumerate(_shift_columns(hyps, w)):
        if u0 >= w:
            continue
        if a == 0:
            er_d = er[:, : w - k, :]
        else:
            xs_base = np.arange(u0, w) - (k + a)
            kk = np.floor(xs_base).astype(np.int64)
            aa = xs_base - kk
            er_d = (1 - aa)[None, :, None] * er[:, kk, :] + aa[None, :, None] * er[:, kk + 1, :]
        scores[:, u0:, di] = np.einsum("vue,vue->vu", el[:, u0:, :], er_d) * inv_tau
        valid[:, u0:, di] = True
    probs = _softmax_last(scores)
    pred = probs @ np.asarray(hyps, dtype=np.float64)
    return VolumeForward(scores=scores, probs=probs, pred=pred, valid=valid)


def score_volume(sample_or_feats, state: ModelState, hyps: np.ndarray) -> np.ndarray:
    """Public score volume; accepts a SceneSample or cached ViewFeatures."""
    validate_hypotheses(hyps)
    feats = sample_or_feats
    if isinstance(sample_or_feats, SceneSample):
        feats = view_features(sample_or_feats, state.patch_radius, state.normalize)
    return forward_volume(feats, state, hyps).scores


def volume_backward(feats: ViewFeatures, state: ModelState, hyps: np.ndarray,
                    fwd: VolumeForward, g: np.ndarray):
    """Gradients (dW, dtau) given g = dL/dscores; invalid entries ignored."""
    h, w = feats.shape
    g = np.where(fwd.valid, g, 0.0)
    f_dim = feats.left.shape[2]
    psi = np.zeros((h, w, f_dim))
    for di, (k, a, u0) in enumerate(_shift_columns(hyps, w)):
        if u0 >= w:
            continue
        gd = g[:, u0:, di]
        if not np.any(gd):
            continue
        if a == 0:
            psi[:, u0:, :] += gd[:, :, None] * feats.right[:, : w - k, :]
        else:
            xs_base = np.arange(u0, w) - (k + a)
            kk = np.floor(xs_base).astype(np.int64)
            aa = xs_base - kk
            psi[:, u0:, :] += gd[:, :, None] * (
                (1 - aa)[None, :, None] * feats.right[:, kk, :]
                + aa[None, :, None] * feats.right[:, kk + 1, :])
    a_mat = psi.reshape(-1, f_dim).T @ feats.left.reshape(-1, f_dim)
    dw = state.w @ (a_mat + a_mat.T) / state.tau
    dtau = -float(np.sum(g * np.where(fwd.valid, fwd.scores, 0.0))) / state.tau
    return dw, dtau


@dataclass
class PixelForward:
    us: np.ndarray
    vs: np.ndarray
    scores: np.ndarray  # (N, D)
    probs: np.ndarray
    pred: np.ndarray    # (N,)
    valid: np.ndarray   # (N, D)
    phi_l: np.ndarray   # (N, F)
    phi_r: np.ndarray   # (N, D, F)


def forward_pixels(feats: ViewFeatures, state: ModelState, hyps: np.ndarray,
                   us: np.ndarray, vs: np.ndarray) -> PixelForward:
    """Forward pass restricted to a handful of pixels (selection tuning)."""
    us = np.asarray(us, dtype=np.int64)
    vs = np.asarray(vs, dtype=np.int64)
    h, w = feats.shape
    n = us.size
    d_n = len(hyps)
    phi_l = feats.left[vs, us]  # (N, F)
    phi_r = np.zeros((n, d_n, feats.left.shape[2]))
    valid = np.zeros((n, d_n), dtype=bool)
    for di, d in enumerate(np.asarray(hyps, dtype=np.float64)):
        xs = us - d
        ok = xs >= 0
        if not np.any(ok):
            continue
        kk = np.floor(xs[ok]).astype(np.int64)
        aa = xs[ok] - kk
        kk1 = np.minimum(kk + 1, w - 1)
        phi_r[ok, di, :] = ((1 - aa)[:, None] * feats.right[vs[ok], kk]
                            + aa[:, None] * feats.right[vs[ok], kk1])
        valid[ok, di] = True
    el = phi_l @ state.w.T                      # (N, E)
    er = phi_r @ state.w.T                      # (N, D, E)
    raw = np.einsum("ne,nde->nd", el, er)
    scores = np.where(valid, raw / state.tau, SENTINEL_SCORE)
    probs = _softmax_last(scores)
    pred = probs @ np.asarray(hyps, dtype=np.float64)
    return PixelForward(us=us, vs=vs, scores=scores, probs=probs, pred=pred,
                        valid=valid, phi_l=phi_l, phi_r=phi_r)


def pixel_backward(state: ModelState, pf: PixelForward, g: np.ndarray):
    g = np.where(pf.valid, g, 0.0)
    psi = np.einsum("nd,ndf->nf", g, pf.phi_r)
    a_mat = psi.T @ pf.phi_l
    dw = state.w @ (a_mat + a_mat.T) / state.tau
    dtau = -float(np.sum(g * np.where(pf.valid, pf.scores, 0.0))) / state.tau
    return dw, dtau


# ---------------------------------------------------------------------------
# loss building blocks
# ---------------------------------------------------------------------------

def smooth_l1(residual: np.ndarray, beta: float = 1.0) -> np.ndarray:
    r = np.abs(np.asarray(residual, dtype=np.float64))
    return np.where(r < beta, 0.5 * r * r / beta, r - 0.5 * beta)


def smooth_l1_grad(residual: np.ndarray, beta: float = 1.0) -> np.ndarray:
    r = np.asarray(residual, dtype=np.float64)
    return np.clip(r / beta, -1.0, 1.0)


def grad_scores_from_pred(probs: np.ndarray, pred: np.ndarray, hyps: np.ndarray,
                          dl_dpred: np.ndarray) -> np.ndarray:
    """Chain dL/dpred through the expectation and softmax to dL/dscores."""
    return dl_dpred[..., None] * probs * (np.asarray(hyps) - pred[..., None])


def entropy_of(probs: np.ndarray) -> np.ndarray:
    """Per-pixel Shannon entropy along the hypothesis axis (nats)."""
    p = np.asarray(probs, dtype=np.float64)
    plogp = np.where(p > 1e-300, p * np.log(np.where(p > 1e-300, p, 1.0)), 0.0)
    return -plogp.sum(axis=-1)


def grad_scores_from_entropy(probs: np.ndarray, entropy: np.ndarray) -> np.ndarray:
    """dH/ds = -p (log p + H); zero where p underflows."""
    p = np.asarray(probs, dtype=np.float64)
    logp = np.log(np.where(p > 1e-300, p, 1.0))
    return np.where(p > 1e-300, -p * (logp + entropy[..., None]), 0.0)


def dense_smooth_l1_loss(state: ModelState, feats: ViewFeatures, hyps: np.ndarray,
                         gt: np.ndarray, mask: np.ndarray, beta: float = 1.0):
    """Mean smooth-L1 between predicted and GT disparity over mask.

    Returns (loss, dW, dtau).
    """
    fwd = forward_volume(feats, state, hyps)
    mask = np.asarray(mask, dtype=bool) & np.isfinite(gt)
    count = int(mask.sum())
    if count == 0:
        return 0.0, np.zeros_like(state.w), 0.0
    r = np.where(mask, fwd.pred - gt, 0.0)
    loss = float(smooth_l1(r[mask], beta).mean())
    dl_dpred = np.where(mask, smooth_l1_grad(r, beta), 0.0) / count
    g = grad_scores_from_pred(fwd.probs, fwd.pred, hyps, dl_dpred)
    dw, dtau = volume_backward(feats, state, hyps, fwd, g)
    return loss, dw, dtau


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

def adam_step(param: np.ndarray, grad: np.ndarray, m: np.ndarray, v: np.ndarray,
              t: int, lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8):
    """One bias-corrected Adam update; returns (param, m, v) as new arrays."""
    m = beta1 * m + (1 - beta1) * grad
    v = beta2 * v + (1 - beta2) * grad * grad
    m_hat = m / (1 - beta1**t)
    v_hat = v / (1 - beta2**t)
    param = param - lr * m_hat / (np.sqrt(v_hat) + eps)
    return param, m, v


class AdamOptimizer:
    """Adam over a dict of named parameter arrays."""

    def __init__(self, params: dict, lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(np.asarray(v, dtype=np.float64))
                  for k, v in params.items()}
        self.v = {k: np.zeros_like(np.asarray(v, dtype=np.float64))
                  for k, v in params.items()}

    def step(self, params: dict, grads: dict) -> dict:
        self.t += 1
        out = {}
        for k in params:
            p, self.m[k], self.v[k] = adam_step(
                np.asarray(params[k], dtype=np.float64), grads[k],
                self.m[k], self.v[k], self.t, self.lr, self.beta1, self.beta2,
                self.eps)
            out[k] = p
        return out


def _params_of(state: ModelState) -> dict:
    return {"w": state.w.copy(), "log_tau": np.array(math.log(state.tau))}


def _state_from(params: dict, template: ModelState, role: str) -> ModelState:
    log_tau = float(params["log_tau"])
    # exp(log(tau)) can wobble an ulp; keep tau exact when it never moved
    if log_tau == math.log(template.tau):
        tau = float(template.tau)
    else:
        tau = math.exp(log_tau)
    return ModelState(params["w"].copy(), tau, role,
                      template.patch_radius, template.normalize)


# ---------------------------------------------------------------------------
# pretraining
# ---------------------------------------------------------------------------

@dataclass
class PretrainConfig:
    embed_dim: int = 8
    patch_radius: int = 2
    tau_init: float = 0.07
    init_scale: float = 0.5
    lr: float = 0.02
    max_epochs: int = 80
    target_val_epe: float = 0.5
    seed: int = 0
    beta: float = 1.0


def init_model_state(cfg: PretrainConfig) -> ModelState:
    """Seeded random embedding; role 'init'."""
    f_dim = (2 * cfg.patch_radius + 1) ** 2
    rng = np.random.default_rng(np.random.SeedSequence([977, cfg.seed]))
    w = cfg.init_scale * rng.standard_normal((cfg.embed_dim, f_dim))
    return ModelState(w, cfg.tau_init, "init", cfg.patch_radius, True)


def _correspondence_mask(sample: SceneSample) -> np.ndarray:
    """Pixels whose GT correspondence lies inside the right frame."""
    w = sample.gt_disparity.shape[1]
    us = np.arange(w)[None, :]
    with np.errstate(invalid="ignore"):
        return np.isfinite(sample.gt_disparity) & (us - sample.gt_disparity >= 0)


def diffuse_epe(state: ModelState, samples, hyps, cache: FeatureCache | None = None):
    """Mean abs disparity error over diffuse-labeled pixels of the samples."""
    from .scenegen import MAT_DIFFUSE

    cache = cache or FeatureCache()
    total, count = 0.0, 0
    for s in samples:
        fwd = forward_volume(cache.get(s, state), state, hyps)
        mask = (s.material == MAT_DIFFUSE) & np.isfinite(s.gt_disparity)
        total += float(np.abs(fwd.pred - s.gt_disparity)[mask].sum())
        count += int(mask.sum())
    return total / max(count, 1)


def pretrain(init_state: ModelState, train_samples, val_samples, hyps: np.ndarray,
             cfg: PretrainConfig, cache: FeatureCache | None = None):
    """Dense smooth-L1 training on diffuse-only scenes.

    One Adam step per view per epoch; stops early once the validation
    diffuse EPE reaches cfg.target_val_epe.  Returns (state, diagnostics);
    a missed target is reported in diagnostics, not raised.
    """
    from .scenegen import MAT_TRANSPARENT

    for s in train_samples:
        if np.any(s.material == MAT_TRANSPARENT):
            raise ValueError(
                f"pretraining scene {s.scene_id}/{s.view_id} contains transparent "
                "objects")
    validate_hypotheses(hyps)
    cache = cache or FeatureCache()
    params = _params_of(init_state)
    opt = AdamOptimizer(params, lr=cfg.lr)
    masks = [_correspondence_mask(s) for s in train_samples]
    history = []
    val_epe = math.inf
    epochs_run = 0
    for epoch in range(cfg.max_epochs):
        epoch_loss = 0.0
        for s, mask in zip(train_samples, masks):
            state = _state_from(params, init_state, "init")
            loss, dw, dtau = dense_smooth_l1_loss(
                state, cache.get(s, state), hyps, s.gt_disparity, mask, cfg.beta)
            grads = {"w": dw, "log_tau": np.array(dtau * state.tau)}
            params = opt.step(params, grads)
            epoch_loss += loss
        epochs_run = epoch + 1
        state = _state_from(params, init_state, "init")
        val_epe = diffuse_epe(state, val_samples, hyps, cache)
        history.append((epoch_loss / max(len(train_samples), 1), val_epe))
        if val_epe <= cfg.target_val_epe:
            break
    state = _state_from(params, init_state, "pretrained")
    diagnostics = {
        "epochs": epochs_run,
        "val_epe": val_epe,
        "target_val_epe": cfg.target_val_epe,
        "target_met": bool(val_epe <= cfg.target_val_epe),
        "history": history,
    }
    return state, diagnostics


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def save_model_state(path, state: ModelState, sidecar: bool = True) -> None:
    """Versioned flat binary (little-endian) plus a key=value text sidecar."""
    e_dim, f_dim = state.w.shape
    buf = io.BytesIO()
    buf.write(_MAGIC)
    role_b = state.role.encode()
    buf.write(struct.pack("<IIIiiBd", _FORMAT_VERSION, e_dim, f_dim,
                          state.patch_radius, len(role_b),
                          1 if state.normalize else 0, state.tau))
    buf.write(role_b)
    buf.write(state.w.astype("<f8").tobytes(order="C"))
    with open(path, "wb") as f:
        f.write(buf.getvalue())
    if sidecar:
        with open(str(path) + ".txt", "w") as f:
            f.write(f"format_version={_FORMAT_VERSION}\n")
            f.write(f"role={state.role}\n")
            f.write(f"embed_dim={e_dim}\n")
            f.write(f"n_features={f_dim}\n")
            f.write(f"patch_radius={state.patch_radius}\n")
            f.write(f"normalize={state.normalize}\n")
            f.write(f"tau={state.tau!r}\n")


def load_model_state(path) -> ModelState:
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != _MAGIC:
        raise ValueError(f"not a model state file (magic {data[:4]!r})")
    version, e_dim, f_dim, patch_radius, role_len, norm, tau = struct.unpack_from(
        "<IIIiiBd", data, 4)
    if version != _FORMAT_VERSION:
        raise ValueError(f"unsupported model state version {version}")
    off = 4 + struct.calcsize("<IIIiiBd")
    role = data[off : off + role_len].decode()
    off += role_len
    need = e_dim * f_dim * 8
    if len(data) - off < need:
        raise ValueError("truncated model state payload")
    w = np.frombuffer(data[off : off + need], dtype="<f8").reshape(e_dim, f_dim)
    return ModelState(w.copy(), tau, role, patch_radius, bool(norm))


def export_probability_volume(prefix, probs: np.ndarray, hyps: np.ndarray) -> list:
    """Dump a probability volume as one PFM slice per hypothesis."""
    paths = []
    for di, d in enumerate(np.asarray(hyps)):
        p = f"{prefix}_d{float(d):g}.pfm"
        save_pfm(p, probs[:, :, di])
        paths.append(p)
    return paths
