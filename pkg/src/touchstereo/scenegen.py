"""Synthetic rectified stereo scenes with ground-truth disparity.

A scene is a textured background plane plus a few planar objects, each
rendered consistently in both views at its own disparity.  Transparent
objects keep their surface disparity in the ground truth while their image
content is (mostly) the background texture warped at the *background*
disparity, so a stereo matcher locks onto the background.  A transparency
blend < 1 leaves a fainter surface-locked texture component in both views,
which is what a finetuned matcher can learn to amplify.

Textures are multi-octave value noise sampled from continuous functions,
so warping by the render disparity is exact at every pixel.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace

import numpy as np
from scipy import ndimage

# Material label codes, also used verbatim in the 8-bit PGM mask files.
MAT_BACKGROUND = 0
MAT_DIFFUSE = 64
MAT_TRANSPARENT = 128
MAT_BOUNDARY = 255

# Salts keeping the independent random streams apart.
_SALT_SCENE = 101
_SALT_LAYOUT = 211
_SALT_BG = 307
_SALT_INSTANCE = 401


class SceneGenError(ValueError):
    pass


@dataclass(frozen=True)
class CameraRig:
    """Rectified stereo camera pair; disparity d maps to depth f*b/d."""

    focal_px: float
    baseline_m: float
    width: int
    height: int
    disparity_min: float
    disparity_max: float

    def __post_init__(self):
        if self.focal_px <= 0:
            raise ValueError(f"focal_px must be positive, got {self.focal_px}")
        if self.baseline_m <= 0:
            raise ValueError(f"baseline_m must be positive, got {self.baseline_m}")
        if not (0 < self.disparity_min < self.disparity_max < self.width):
            raise ValueError(
                "need 0 < disparity_min < disparity_max < width, got "
                f"{self.disparity_min}, {self.disparity_max}, width {self.width}"
            )


def disparity_to_depth(d, rig: CameraRig):
    """z = focal_px * baseline_m / d (meters). Rejects nonpositive d."""
    d = np.asarray(d, dtype=np.float64)
    if np.any(d <= 0):
        raise ValueError("disparity must be positive")
    out = rig.focal_px * rig.baseline_m / d
    return float(out) if out.ndim == 0 else out


def depth_to_disparity(z, rig: CameraRig):
    """d = focal_px * baseline_m / z (pixels). Rejects nonpositive z."""
    z = np.asarray(z, dtype=np.float64)
    if np.any(z <= 0):
        raise ValueError("depth must be positive")
    out = rig.focal_px * rig.baseline_m / z
    return float(out) if out.ndim == 0 else out


@dataclass
class SceneSample:
    """One rectified stereo view with dense ground truth.

    Images are float64 in [0, 1]; gt_disparity uses NaN as the invalid
    sentinel; material holds the MAT_* codes.
    """

    left: np.ndarray
    right: np.ndarray
    gt_disparity: np.ndarray
    material: np.ndarray
    rig: CameraRig
    scene_id: int
    view_id: int


@dataclass(frozen=True)
class SceneConfig:
    """Scene recipe; all knobs for one (scene, view) render.

    transparency is the transmitted-background weight inside transparent
    objects: 1.0 replaces the surface entirely with background texture
    (the matcher sees nothing but background), lower values leave a
    surface-locked component of weight (1 - transparency) in both views.
    """

    width: int = 128
    height: int = 96
    focal_px: float = 250.0
    baseline_m: float = 0.05
    disparity_min: float = 8.0
    disparity_max: float = 40.0
    background_disparity_min: float = 10.0
    background_disparity_max: float = 13.0
    n_diffuse: int = 2
    n_transparent: int = 2
    object_disparity_min: float = 24.0
    object_disparity_max: float = 34.0
    object_min_halfsize: int = 8
    object_max_halfsize: int = 12
    transparency: float = 1.0
    boundary_width: int = 2
    bg_texture_scale: float = 12.0
    bg_texture_octaves: int = 3
    diffuse_texture_scale: float = 8.0
    diffuse_texture_octaves: int = 4
    surface_texture_scale: float = 3.0
    surface_texture_octaves: int = 2
    texture_persistence: float = 0.55
    diffuse_instances: tuple = (0, 1, 2, 3, 4)
    transparent_instances: tuple = (0, 1, 2)
    placement_margin: int = 3
    max_placement_tries: int = 400

    def rig(self) -> CameraRig:
        return CameraRig(
            focal_px=self.focal_px,
            baseline_m=self.baseline_m,
            width=self.width,
            height=self.height,
            disparity_min=self.disparity_min,
            disparity_max=self.disparity_max,
        )


def scene_config_to_dict(cfg: SceneConfig) -> dict:
    out = {}
    for f in fields(SceneConfig):
        v = getattr(cfg, f.name)
        if isinstance(v, tuple):
            v = ",".join(str(x) for x in v)
        out[f"scene.{f.name}"] = str(v)
    return out


def scene_config_from_dict(kv: dict) -> SceneConfig:
    kwargs = {}
    for f in fields(SceneConfig):
        key = f"scene.{f.name}"
        if key not in kv:
            continue
        raw = kv[key]
        if f.name in ("diffuse_instances", "transparent_instances"):
            kwargs[f.name] = tuple(int(x) for x in str(raw).split(",") if x != "")
        elif f.type == "int" or isinstance(getattr(SceneConfig, f.name), int):
            kwargs[f.name] = int(float(raw))
        else:
            kwargs[f.name] = float(raw)
    return SceneConfig(**kwargs)


class NoiseTexture:
    """Band-limited multi-octave value noise over a rectangular domain.

    Continuous in (y, x): lattice values are combined with smoothstep
    bilinear interpolation, so samples at shifted coordinates reproduce
    the same underlying function exactly.
    """

    def __init__(self, seed_seq, y_lo, y_hi, x_lo, x_hi, base_scale, octaves,
                 persistence=0.55):
        if base_scale <= 0 or octaves < 1:
            raise ValueError("need base_scale > 0 and octaves >= 1")
        rng = np.random.default_rng(seed_seq)
        self.y_lo = float(y_lo)
        self.x_lo = float(x_lo)
        self.octaves = []
        amp = 1.0
        self._amp_total = 0.0
        for o in range(octaves):
            spacing = max(base_scale / (2.0**o), 1.0)
            ny = int(np.ceil((y_hi - y_lo) / spacing)) + 3
            nx = int(np.ceil((x_hi - x_lo) / spacing)) + 3
            lattice = rng.uniform(-1.0, 1.0, size=(ny, nx))
            self.octaves.append((spacing, amp, lattice))
            self._amp_total += amp
            amp *= persistence

    def sample(self, ys, xs) -> np.ndarray:
        ys = np.asarray(ys, dtype=np.float64)
        xs = np.asarray(xs, dtype=np.float64)
        total = np.zeros(np.broadcast(ys, xs).shape)
        for spacing, amp, lattice in self.octaves:
            fy = (ys - self.y_lo) / spacing + 1.0
            fx = (xs - self.x_lo) / spacing + 1.0
            iy = np.clip(np.floor(fy).astype(np.int64), 0, lattice.shape[0] - 2)
            ix = np.clip(np.floor(fx).astype(np.int64), 0, lattice.shape[1] - 2)
            ty = fy - iy
            tx = fx - ix
            ty = ty * ty * (3.0 - 2.0 * ty)
            tx = tx * tx * (3.0 - 2.0 * tx)
            v00 = lattice[iy, ix]
            v01 = lattice[iy, ix + 1]
            v10 = lattice[iy + 1, ix]
            v11 = lattice[iy + 1, ix + 1]
            total += amp * ((v00 * (1 - tx) + v01 * tx) * (1 - ty)
                            + (v10 * (1 - tx) + v11 * tx) * ty)
        return np.clip(0.5 + 0.35 * total / self._amp_total, 0.0, 1.0)


@dataclass(frozen=True)
class ObjectInstance:
    """An object identity: shape, size and surface texture are fixed per
    instance so the same object looks the same in every scene."""

    instance_id: int
    kind: str  # "diffuse" | "transparent"
    shape: str  # "rect" | "disk"
    half_w: int
    half_h: int


def _instance_params(instance_id: int, kind: str, cfg: SceneConfig) -> ObjectInstance:
    rng = np.random.default_rng(np.random.SeedSequence([_SALT_INSTANCE, instance_id,
                                                        0 if kind == "diffuse" else 1]))
    shape = "rect" if rng.integers(0, 2) == 0 else "disk"
    half_w = int(rng.integers(cfg.object_min_halfsize, cfg.object_max_halfsize + 1))
    half_h = int(rng.integers(cfg.object_min_halfsize, cfg.object_max_halfsize + 1))
    if shape == "disk":
        half_h = half_w
    return ObjectInstance(instance_id, kind, shape, half_w, half_h)


def _instance_texture(inst: ObjectInstance, cfg: SceneConfig) -> NoiseTexture:
    ext = max(inst.half_w, inst.half_h) + 2
    if inst.kind == "diffuse":
        scale, octaves = cfg.diffuse_texture_scale, cfg.diffuse_texture_octaves
    else:
        scale, octaves = cfg.surface_texture_scale, cfg.surface_texture_octaves
    seed = np.random.SeedSequence(
        [_SALT_INSTANCE, inst.instance_id, 2 if inst.kind == "diffuse" else 3]
    )
    return NoiseTexture(seed, -ext, ext, -ext, ext, scale, octaves,
                        cfg.texture_persistence)


@dataclass
class _Placement:
    inst: ObjectInstance
    cx: int
    cy: int
    disparity: float


def _silhouette(inst: ObjectInstance, cx, cy, uu, vv) -> np.ndarray:
    if inst.shape == "rect":
        return (np.abs(uu - cx) <= inst.half_w) & (np.abs(vv - cy) <= inst.half_h)
    r2 = float(inst.half_w) ** 2
    return (uu - cx) ** 2 + (vv - cy) ** 2 <= r2


def _place_objects(instances, layout_rng, cfg: SceneConfig) -> list:
    """Place each instance at a uniformly drawn valid center.

    Valid centers are enumerated exactly (frame fit for the drawn
    disparity, no overlap with earlier objects including their boundary
    rings), so placement only fails when the frame really is full.
    """
    placements = []
    lo_d = int(max(cfg.object_disparity_min, cfg.disparity_min))
    hi_d = int(min(cfg.object_disparity_max, cfg.disparity_max))
    margin = cfg.placement_margin + cfg.boundary_width
    gap = 2 * cfg.boundary_width + cfg.placement_margin
    for inst in instances:
        placed = False
        # last attempt forces the least constrained disparity
        for attempt in range(6):
            d = float(layout_rng.integers(lo_d, hi_d + 1)) if attempt < 5 else float(lo_d)
            u_lo = int(np.ceil(d)) + inst.half_w + margin
            u_hi = cfg.width - 1 - inst.half_w - margin
            v_lo = inst.half_h + margin
            v_hi = cfg.height - 1 - inst.half_h - margin
            if u_lo > u_hi or v_lo > v_hi:
                continue
            valid = np.zeros((cfg.height, cfg.width), dtype=bool)
            valid[v_lo : v_hi + 1, u_lo : u_hi + 1] = True
            for p in placements:
                ex_w = inst.half_w + p.inst.half_w + gap
                ex_h = inst.half_h + p.inst.half_h + gap
                valid[max(0, p.cy - ex_h) : p.cy + ex_h + 1,
                      max(0, p.cx - ex_w) : p.cx + ex_w + 1] = False
            idx = np.flatnonzero(valid)
            if idx.size:
                pick = int(idx[layout_rng.integers(0, idx.size)])
                cy, cx = divmod(pick, cfg.width)
                placements.append(_Placement(inst, cx, cy, d))
                placed = True
                break
        if not placed:
            raise SceneGenError(
                f"no valid placement for object instance {inst.instance_id} "
                f"(halfsize {inst.half_w}x{inst.half_h}) in the "
                f"{cfg.width}x{cfg.height} frame"
            )
    return placements


def generate_scene(scene_seed: int, cfg: SceneConfig, view_id: int = 0) -> SceneSample:
    """Render one view of a scene; bit-deterministic for fixed inputs.

    Views of the same scene reuse the same object instances but re-draw
    placements and disparities (rearranged shots of the same objects).
    """
    rig = cfg.rig()
    if cfg.object_disparity_max > rig.disparity_max or (
            cfg.n_diffuse + cfg.n_transparent > 0
            and cfg.object_disparity_min < rig.disparity_min):
        raise SceneGenError(
            f"object disparity range [{cfg.object_disparity_min}, "
            f"{cfg.object_disparity_max}] exceeds rig range "
            f"[{rig.disparity_min}, {rig.disparity_max}]"
        )
    if not (rig.disparity_min <= cfg.background_disparity_min
            <= cfg.background_disparity_max <= rig.disparity_max):
        raise SceneGenError("background disparity range exceeds rig range")
    if not 0.0 <= cfg.transparency <= 1.0:
        raise SceneGenError(f"transparency must be in [0,1], got {cfg.transparency}")
    if cfg.n_diffuse > len(cfg.diffuse_instances):
        raise SceneGenError("n_diffuse exceeds the diffuse instance library")
    if cfg.n_transparent > len(cfg.transparent_instances):
        raise SceneGenError("n_transparent exceeds the transparent instance library")

    scene_rng = np.random.default_rng(np.random.SeedSequence([_SALT_SCENE, scene_seed]))
    diffuse_ids = [int(x) for x in scene_rng.choice(
        np.asarray(cfg.diffuse_instances, dtype=np.int64), size=cfg.n_diffuse,
        replace=False)] if cfg.n_diffuse else []
    transparent_ids = [int(x) for x in scene_rng.choice(
        np.asarray(cfg.transparent_instances, dtype=np.int64), size=cfg.n_transparent,
        replace=False)] if cfg.n_transparent else []
    instances = [_instance_params(i, "diffuse", cfg) for i in diffuse_ids]
    instances += [_instance_params(i, "transparent", cfg) for i in transparent_ids]

    layout_rng = np.random.default_rng(
        np.random.SeedSequence([_SALT_LAYOUT, scene_seed, view_id]))
    d_bg = float(layout_rng.integers(int(cfg.background_disparity_min),
                                     int(cfg.background_disparity_max) + 1))
    placements = _place_objects(instances, layout_rng, cfg)

    h, w = cfg.height, cfg.width
    uu, vv = np.meshgrid(np.arange(w), np.arange(h))
    bg = NoiseTexture(
        np.random.SeedSequence([_SALT_BG, scene_seed, view_id]),
        -1, h + 1, -1, w + cfg.disparity_max + 2,
        cfg.bg_texture_scale, cfg.bg_texture_octaves, cfg.texture_persistence)

    left = bg.sample(vv, uu)
    right = bg.sample(vv, uu + d_bg)
    gt = np.full((h, w), d_bg, dtype=np.float64)
    material = np.full((h, w), MAT_BACKGROUND, dtype=np.uint8)

    silhouettes = []
    for p in sorted(placements, key=lambda p: p.disparity):
        tex = _instance_texture(p.inst, cfg)
        m_left = _silhouette(p.inst, p.cx, p.cy, uu, vv)
        m_right = _silhouette(p.inst, p.cx - p.disparity, p.cy, uu, vv)
        if p.inst.kind == "diffuse":
            left[m_left] = tex.sample(vv - p.cy, uu - p.cx)[m_left]
            right[m_right] = tex.sample(vv - p.cy, uu + p.disparity - p.cx)[m_right]
            material[m_left] = MAT_DIFFUSE
        else:
            a = cfg.transparency
            surf_l = tex.sample(vv - p.cy, uu - p.cx)
            surf_r = tex.sample(vv - p.cy, uu + p.disparity - p.cx)
            left[m_left] = a * left[m_left] + (1.0 - a) * surf_l[m_left]
            right[m_right] = a * right[m_right] + (1.0 - a) * surf_r[m_right]
            material[m_left] = MAT_TRANSPARENT
        gt[m_left] = p.disparity
        silhouettes.append(m_left)

    bw = cfg.boundary_width
    if bw > 0:
        for m in silhouettes:
            ring = ndimage.binary_dilation(m, iterations=bw) & ~ndimage.binary_erosion(
                m, iterations=bw)
            material[ring] = MAT_BOUNDARY

    return SceneSample(left=left, right=right, gt_disparity=gt, material=material,
                       rig=rig, scene_id=int(scene_seed), view_id=int(view_id))


def warp_right_from_left(left: np.ndarray, render_disparity: np.ndarray,
                         fill: np.ndarray | None = None) -> np.ndarray:
    """Forward-warp a left image into the right view.

    Each source pixel (u, v) writes left(u, v) to x = u - d(u, v), splat
    linearly over the two neighboring columns for fractional x.  Where
    surfaces overlap, the largest-disparity writer wins (deposits within
    0.5 px of the cell's max disparity are averaged by splat weight).
    Unwritten cells copy from `fill` (default: the left image itself,
    standing in for background texture).
    """
    left = np.asarray(left, dtype=np.float64)
    disp = np.asarray(render_disparity, dtype=np.float64)
    if left.shape != disp.shape:
        raise ValueError("left and render_disparity shapes differ")
    h, w = left.shape
    if np.any(disp < 0) or np.any(disp >= w):
        raise ValueError("render_disparity values must lie within [0, width)")
    if fill is None:
        fill = left
    fill = np.asarray(fill, dtype=np.float64)

    vs, us = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    x = us - disp
    k = np.floor(x).astype(np.int64)
    a = x - k

    # deposits: (row, col, weight, value, disparity)
    rows = np.concatenate([vs.ravel(), vs.ravel()])
    cols = np.concatenate([k.ravel(), k.ravel() + 1])
    wts = np.concatenate([(1.0 - a).ravel(), a.ravel()])
    vals = np.concatenate([left.ravel(), left.ravel()])
    ds = np.concatenate([disp.ravel(), disp.ravel()])
    keep = (wts > 0) & (cols >= 0) & (cols < w)
    rows, cols, wts, vals, ds = rows[keep], cols[keep], wts[keep], vals[keep], ds[keep]

    flat = rows * w + cols
    dmax = np.full(h * w, -np.inf)
    np.maximum.at(dmax, flat, ds)
    front = ds >= dmax[flat] - 0.5
    wsum = np.zeros(h * w)
    vsum = np.zeros(h * w)
    np.add.at(wsum, flat[front], wts[front])
    np.add.at(vsum, flat[front], wts[front] * vals[front])

    out = fill.ravel().copy()
    written = wsum > 1e-12
    out[written] = vsum[written] / wsum[written]
    return out.reshape(h, w)
