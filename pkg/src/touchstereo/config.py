"""Flat key=value experiment configuration with include support.

Config files are diff-friendly text: one `key=value` per line, `#`
comments, and `include <path>` directives (relative to the including
file).  An ExperimentConfig is the desk or paper profile overlaid with
file values and explicit overrides; typed getters convert on access.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

from .finetuner import FinetuneConfig
from .probesim import ProbeConfig
from .scenegen import SceneConfig, scene_config_from_dict, scene_config_to_dict
from .selector import SelectionConfig
from .stereomodel import PretrainConfig


class ConfigError(ValueError):
    pass


def parse_kv_file(path) -> dict:
    """Read a flat key=value file, following include directives."""
    out = {}
    try:
        with open(path) as f:
            lines = f.readlines()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    base = os.path.dirname(os.path.abspath(path))
    for lineno, raw in enumerate(lines, 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("include "):
            inc = line[len("include "):].strip()
            inc_path = inc if os.path.isabs(inc) else os.path.join(base, inc)
            out.update(parse_kv_file(inc_path))
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, _, value = line.partition("=")
        out[key.strip()] = value.strip()
    return out


def write_kv_file(path, kv: dict) -> None:
    with open(path, "w") as f:
        for key in sorted(kv):
            f.write(f"{key}={kv[key]}\n")


# Desk-scale profile: small frames, recalibrated thresholds and learning
# rates for the compact embedding model.
_DESK = {
    "profile": "desk",
    "seed": "0",
    "strategy": "utility",
    "scene.width": "128",
    "scene.height": "96",
    "scene.focal_px": "250.0",
    "scene.baseline_m": "0.05",
    "scene.disparity_min": "8.0",
    "scene.disparity_max": "40.0",
    "scene.background_disparity_min": "10",
    "scene.background_disparity_max": "13",
    "scene.n_diffuse": "2",
    "scene.n_transparent": "2",
    "scene.object_disparity_min": "24",
    "scene.object_disparity_max": "34",
    "scene.object_min_halfsize": "8",
    "scene.object_max_halfsize": "12",
    "scene.transparency": "0.55",
    "scene.boundary_width": "2",
    "scene.bg_texture_scale": "12.0",
    "scene.bg_texture_octaves": "3",
    "scene.diffuse_texture_scale": "8.0",
    "scene.diffuse_texture_octaves": "4",
    "scene.surface_texture_scale": "3.0",
    "scene.surface_texture_octaves": "2",
    "scene.texture_persistence": "0.55",
    "data.pretrain_scenes": "6",
    "data.pretrain_views": "1",
    "data.val_scenes": "2",
    "data.probe_scenes": "5",
    "data.probe_views": "4",
    "data.eval_scenes": "5",
    "data.eval_views": "2",
    "data.diffuse_library": "5",
    "data.transparent_library": "8",
    "data.probe_transparent": "3",
    "model.embed_dim": "8",
    "model.patch_radius": "2",
    "model.tau_init": "0.07",
    "model.init_scale": "0.5",
    "model.hyps_step": "1.0",
    "pretrain.lr": "0.02",
    "pretrain.max_epochs": "80",
    "pretrain.target_val_epe": "0.5",
    "select.epsilon": "5.0",
    "select.c1": "0.999",
    "select.c1_mode": "diffuse_percentile",
    "select.c1_percentile": "80.0",
    "select.sigma_u": "3.0",
    "select.lambda_l2": "0.01",
    "select.lr": "0.02",
    "select.tol": "1e-6",
    "select.max_steps": "200",
    "select.n": "5",
    "select.min_spacing": "20.0",
    "select.boundary_exclusion": "true",
    "select.margin_exclusion": "true",
    "probe.noise_model": "truncated_normal",
    "probe.noise_sigma_m": "0.001",
    "probe.noise_bound_m": "0.003",
    "finetune.lambda_t": "1.0",
    "finetune.lambda_r": "100.0",
    "finetune.patch_radius": "7",
    "finetune.sigma_t": "12.0",
    "finetune.c2": "0.97",
    "finetune.lr": "0.01",
    "finetune.epochs": "10",
    "finetune.beta": "1.0",
    "finetune.tactile_mode": "patch",
    "eval.include_boundary": "true",
    "ablate.seeds": "5",
    "ablate.strategies": "utility,random,confidence,oracle_center",
    "report.figures": "true",
}

# Paper-scale profile: published hyperparameters verbatim (12..96 px
# disparities, fixed c1, sigma_U 6.5, Adam 1e-5 / 2e-5, 10 epochs).
_PAPER = dict(_DESK)
_PAPER.update({
    "profile": "paper",
    "scene.width": "256",
    "scene.height": "192",
    "scene.focal_px": "600.0",
    "scene.baseline_m": "0.055",
    "scene.disparity_min": "12.0",
    "scene.disparity_max": "96.0",
    "scene.background_disparity_min": "14",
    "scene.background_disparity_max": "20",
    "scene.object_disparity_min": "40",
    "scene.object_disparity_max": "80",
    "scene.object_min_halfsize": "14",
    "scene.object_max_halfsize": "22",
    "select.c1": "0.999",
    "select.c1_mode": "fixed",
    "select.sigma_u": "6.5",
    "select.lr": "1e-5",
    "finetune.c2": "0.9999",
    "finetune.lr": "2e-5",
})

PROFILES = {"desk": _DESK, "paper": _PAPER}


@dataclass
class ExperimentConfig:
    """Profile defaults overlaid with file values and overrides."""

    values: dict = field(default_factory=dict)

    @classmethod
    def load(cls, config_path=None, profile=None, overrides=None):
        file_kv = parse_kv_file(config_path) if config_path else {}
        prof = profile or file_kv.get("profile") or "desk"
        if prof not in PROFILES:
            raise ConfigError(f"unknown profile {prof!r}; have {sorted(PROFILES)}")
        values = dict(PROFILES[prof])
        values.update(file_kv)
        values["profile"] = prof
        if overrides:
            values.update({str(k): str(v) for k, v in overrides.items()})
        return cls(values=values)

    # typed getters -----------------------------------------------------
    def _get(self, key):
        if key not in self.values:
            raise ConfigError(f"missing config key {key!r}")
        return self.values[key]

    def get_str(self, key) -> str:
        return str(self._get(key))

    def get_int(self, key) -> int:
        try:
            return int(float(self._get(key)))
        except ValueError:
            raise ConfigError(f"config key {key!r}={self._get(key)!r} is not an "
                              "integer") from None

    def get_float(self, key) -> float:
        try:
            return float(self._get(key))
        except ValueError:
            raise ConfigError(f"config key {key!r}={self._get(key)!r} is not a "
                              "number") from None

    def get_bool(self, key) -> bool:
        raw = str(self._get(key)).lower()
        if raw in ("1", "true", "yes", "on"):
            return True
        if raw in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"config key {key!r}={raw!r} is not a boolean")

    @property
    def profile(self) -> str:
        return self.get_str("profile")

    @property
    def seed(self) -> int:
        return self.get_int("seed")

    @property
    def strategy(self) -> str:
        return self.get_str("strategy")

    # module config builders --------------------------------------------
    def scene_config(self, n_diffuse=None, n_transparent=None,
                     diffuse_instances=None, transparent_instances=None
                     ) -> SceneConfig:
        base = scene_config_from_dict(self.values)
        kw = {}
        if n_diffuse is not None:
            kw["n_diffuse"] = n_diffuse
        if n_transparent is not None:
            kw["n_transparent"] = n_transparent
        if diffuse_instances is None:
            diffuse_instances = tuple(range(self.get_int("data.diffuse_library")))
        if transparent_instances is None:
            transparent_instances = tuple(
                range(self.get_int("data.transparent_library")))
        kw["diffuse_instances"] = diffuse_instances
        kw["transparent_instances"] = transparent_instances
        from dataclasses import replace
        return replace(base, **kw)

    def pretrain_config(self) -> PretrainConfig:
        return PretrainConfig(
            embed_dim=self.get_int("model.embed_dim"),
            patch_radius=self.get_int("model.patch_radius"),
            tau_init=self.get_float("model.tau_init"),
            init_scale=self.get_float("model.init_scale"),
            lr=self.get_float("pretrain.lr"),
            max_epochs=self.get_int("pretrain.max_epochs"),
            target_val_epe=self.get_float("pretrain.target_val_epe"),
            seed=self.seed,
        )

    def selection_config(self) -> SelectionConfig:
        return SelectionConfig(
            epsilon=self.get_float("select.epsilon"),
            c1=self.get_float("select.c1"),
            c1_mode=self.get_str("select.c1_mode"),
            c1_percentile=self.get_float("select.c1_percentile"),
            sigma_u=self.get_float("select.sigma_u"),
            lambda_l2=self.get_float("select.lambda_l2"),
            surrogate_lr=self.get_float("select.lr"),
            surrogate_tol=self.get_float("select.tol"),
            surrogate_max_steps=self.get_int("select.max_steps"),
            n_per_view=self.get_int("select.n"),
            min_spacing=self.get_float("select.min_spacing"),
            boundary_exclusion=self.get_bool("select.boundary_exclusion"),
            margin_exclusion=self.get_bool("select.margin_exclusion"),
        )

    def probe_config(self) -> ProbeConfig:
        return ProbeConfig(
            noise_model=self.get_str("probe.noise_model"),
            noise_sigma_m=self.get_float("probe.noise_sigma_m"),
            noise_bound_m=self.get_float("probe.noise_bound_m"),
            seed=self.seed,
        )

    def finetune_config(self) -> FinetuneConfig:
        return FinetuneConfig(
            lambda_t=self.get_float("finetune.lambda_t"),
            lambda_r=self.get_float("finetune.lambda_r"),
            patch_radius=self.get_int("finetune.patch_radius"),
            sigma_t=self.get_float("finetune.sigma_t"),
            c2=self.get_float("finetune.c2"),
            lr=self.get_float("finetune.lr"),
            epochs=self.get_int("finetune.epochs"),
            beta=self.get_float("finetune.beta"),
            tactile_mode=self.get_str("finetune.tactile_mode"),
        )
