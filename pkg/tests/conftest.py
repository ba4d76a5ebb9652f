"""Shared fixtures: tiny scenes and small random model instances."""

import numpy as np
import pytest

from touchstereo.scenegen import SceneConfig, generate_scene
from touchstereo.stereomodel import (
    ModelState,
    ViewFeatures,
    descriptor_map,
    make_hypotheses,
)


def one_object_cfg(kind, d_obj=40.0, d_bg=20.0, **kw):
    base = dict(
        width=128, height=96, disparity_min=8.0, disparity_max=48.0,
        background_disparity_min=d_bg, background_disparity_max=d_bg,
        object_disparity_min=d_obj, object_disparity_max=d_obj,
        n_diffuse=1 if kind == "diffuse" else 0,
        n_transparent=1 if kind == "transparent" else 0,
    )
    base.update(kw)
    return SceneConfig(**base)


def random_features(rng, h=16, w=16, patch_radius=2):
    """Descriptor maps of two unrelated random images."""
    left = rng.uniform(size=(h, w))
    right = rng.uniform(size=(h, w))
    return ViewFeatures(scene_id=0, view_id=0,
                        left=descriptor_map(left, patch_radius),
                        right=descriptor_map(right, patch_radius))


def random_state(rng, embed_dim=8, patch_radius=2, tau=0.5):
    f = (2 * patch_radius + 1) ** 2
    return ModelState(0.5 * rng.standard_normal((embed_dim, f)), tau, "init",
                      patch_radius, True)


def fd_gradients(loss_fn, state, h=1e-4):
    """Central finite differences of loss_fn(state) w.r.t. W and tau."""
    w0 = state.w.copy()
    dw = np.zeros_like(w0)
    for i in range(w0.shape[0]):
        for j in range(w0.shape[1]):
            wp = w0.copy()
            wp[i, j] += h
            lp = loss_fn(ModelState(wp, state.tau, state.role,
                                    state.patch_radius, state.normalize))
            wm = w0.copy()
            wm[i, j] -= h
            lm = loss_fn(ModelState(wm, state.tau, state.role,
                                    state.patch_radius, state.normalize))
            dw[i, j] = (lp - lm) / (2 * h)
    lp = loss_fn(ModelState(w0, state.tau + h, state.role, state.patch_radius,
                            state.normalize))
    lm = loss_fn(ModelState(w0, state.tau - h, state.role, state.patch_radius,
                            state.normalize))
    return dw, (lp - lm) / (2 * h)


def rel_err(a, b):
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return np.linalg.norm(a - b) / denom


@pytest.fixture(scope="session")
def diffuse_scene():
    return generate_scene(1, one_object_cfg("diffuse"))


@pytest.fixture(scope="session")
def transparent_scene():
    return generate_scene(2, one_object_cfg("transparent"))


@pytest.fixture(scope="session")
def hyps_wide():
    return make_hypotheses(10.0, 48.0)
