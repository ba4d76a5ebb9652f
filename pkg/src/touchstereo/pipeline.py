"""Experiment stages wired into a reproducible disk pipeline.

Each stage reads the previous stage's serialized outputs, writes its own
under out_dir/{data,models,touches,reports}, and records a manifest
(seed, resolved config echo, content hashes of inputs and outputs) so any
run replays bit-for-bit.  Stage order: gen-data, pretrain, select, probe,
finetune, eval; full-run chains them; ablate sweeps strategies and
ablation variants over several seeds.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, replace

import numpy as np

from . import evaluator, fileio, finetuner, probesim, reporting, selector
from .config import ConfigError, ExperimentConfig, write_kv_file
from .scenegen import SceneConfig, SceneSample, generate_scene, scene_config_to_dict
from .stereomodel import (
    FeatureCache,
    ModelState,
    forward_volume,
    init_model_state,
    load_model_state,
    make_hypotheses,
    pretrain,
    save_model_state,
)

SPLITS = ("pretrain", "val", "probe", "eval")
_SPLIT_BASE = {"pretrain": 0, "val": 500, "probe": 1000, "eval": 2000}

STRATEGIES = ("utility", "random", "confidence", "oracle_center")


class UpstreamMissingError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# manifests
# ---------------------------------------------------------------------------

def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir, stage, cfg: ExperimentConfig, inputs, outputs,
                   extra=None) -> str:
    man_dir = os.path.join(out_dir, "manifests")
    os.makedirs(man_dir, exist_ok=True)
    payload = {
        "stage": stage,
        "seed": cfg.seed,
        "profile": cfg.profile,
        "config": dict(sorted(cfg.values.items())),
        "inputs": {os.path.relpath(p, out_dir): _sha256(p) for p in sorted(inputs)},
        "outputs": {os.path.relpath(p, out_dir): _sha256(p) for p in sorted(outputs)},
    }
    if extra:
        payload["extra"] = extra
    path = os.path.join(man_dir, f"{stage}.json")
    with open(path, "w") as f:
        json.dump(payload, f, sort_keys=True, indent=2)
        f.write("\n")
    return path


def _require(path, stage_hint):
    if not os.path.exists(path):
        raise UpstreamMissingError(
            f"missing {path}; run the '{stage_hint}' stage first")
    return path


def _check_profile(out_dir, upstream_stage, cfg: ExperimentConfig):
    man = os.path.join(out_dir, "manifests", f"{upstream_stage}.json")
    if os.path.exists(man):
        with open(man) as f:
            recorded = json.load(f)
        if recorded.get("profile") != cfg.profile:
            raise ConfigError(
                f"profile mismatch: {upstream_stage} ran with "
                f"{recorded.get('profile')!r}, current config is {cfg.profile!r}")
        if recorded.get("seed") != cfg.seed:
            raise ConfigError(
                f"seed mismatch: {upstream_stage} ran with seed "
                f"{recorded.get('seed')}, current config has {cfg.seed}")


# ---------------------------------------------------------------------------
# dataset on disk
# ---------------------------------------------------------------------------

def scene_seed_for(experiment_seed: int, split: str, index: int) -> int:
    return experiment_seed * 10000 + _SPLIT_BASE[split] + index


def _split_scene_config(cfg: ExperimentConfig, split: str) -> SceneConfig:
    n_d = cfg.get_int("scene.n_diffuse")
    n_t = cfg.get_int("scene.n_transparent")
    if split in ("pretrain", "val"):
        # diffuse-only training data; keep the object count comparable
        return cfg.scene_config(n_diffuse=min(n_d + n_t,
                                              cfg.get_int("data.diffuse_library")),
                                n_transparent=0)
    if split == "probe":
        probe_ids = tuple(range(cfg.get_int("data.probe_transparent")))
        return cfg.scene_config(transparent_instances=probe_ids)
    return cfg.scene_config()


def split_layout(cfg: ExperimentConfig, split: str):
    scenes = {"pretrain": cfg.get_int("data.pretrain_scenes"),
              "val": cfg.get_int("data.val_scenes"),
              "probe": cfg.get_int("data.probe_scenes"),
              "eval": cfg.get_int("data.eval_scenes")}[split]
    views = {"pretrain": cfg.get_int("data.pretrain_views"),
             "val": cfg.get_int("data.pretrain_views"),
             "probe": cfg.get_int("data.probe_views"),
             "eval": cfg.get_int("data.eval_views")}[split]
    return scenes, views


def generate_split(cfg: ExperimentConfig, split: str):
    scene_cfg = _split_scene_config(cfg, split)
    scenes, views = split_layout(cfg, split)
    out = []
    for si in range(scenes):
        seed = scene_seed_for(cfg.seed, split, si)
        for vi in range(views):
            out.append(generate_scene(seed, scene_cfg, vi))
    return out


def _view_stem(split, sample):
    return f"{split}_s{sample.scene_id:07d}_v{sample.view_id:02d}"


def save_dataset(out_dir, cfg: ExperimentConfig, samples_by_split) -> list:
    data_dir = os.path.join(out_dir, "data")
    os.makedirs(data_dir, exist_ok=True)
    paths = []
    index_rows = []
    for split, samples in samples_by_split.items():
        for s in samples:
            stem = _view_stem(split, s)
            left = os.path.join(data_dir, stem + "_left.pgm")
            right = os.path.join(data_dir, stem + "_right.pgm")
            disp = os.path.join(data_dir, stem + "_disp.pfm")
            mat = os.path.join(data_dir, stem + "_mat.pgm")
            fileio.save_pgm16(left, fileio.image_to_u16(s.left))
            fileio.save_pgm16(right, fileio.image_to_u16(s.right))
            fileio.save_pfm(disp, s.gt_disparity)
            fileio.save_pgm8(mat, s.material)
            paths += [left, right, disp, mat]
            index_rows.append([split, s.scene_id, s.view_id,
                               os.path.basename(left), os.path.basename(right),
                               os.path.basename(disp), os.path.basename(mat)])
    index = os.path.join(data_dir, "index.csv")
    with open(index, "w") as f:
        f.write("split,scene_id,view_id,left,right,disp,material\n")
        for row in index_rows:
            f.write(",".join(str(c) for c in row) + "\n")
    paths.append(index)
    scene_cfg_path = os.path.join(data_dir, "scene_config.txt")
    write_kv_file(scene_cfg_path, scene_config_to_dict(cfg.scene_config()))
    paths.append(scene_cfg_path)
    return paths


def load_dataset(out_dir, cfg: ExperimentConfig, split: str):
    data_dir = os.path.join(out_dir, "data")
    index = _require(os.path.join(data_dir, "index.csv"), "gen-data")
    rig = cfg.scene_config().rig()
    samples = []
    with open(index) as f:
        header = f.readline()
        for line in f:
            cells = line.strip().split(",")
            if not cells or cells[0] != split:
                continue
            _, scene_id, view_id, left, right, disp, mat = cells
            samples.append(SceneSample(
                left=fileio.u16_to_image(fileio.load_pgm(
                    os.path.join(data_dir, left))),
                right=fileio.u16_to_image(fileio.load_pgm(
                    os.path.join(data_dir, right))),
                gt_disparity=fileio.load_pfm(
                    os.path.join(data_dir, disp)).astype(np.float64),
                material=fileio.load_pgm(os.path.join(data_dir, mat)),
                rig=rig, scene_id=int(scene_id), view_id=int(view_id)))
    if not samples:
        raise UpstreamMissingError(
            f"dataset split {split!r} is empty; run 'gen-data' first")
    return samples


def dataset_paths(out_dir, split=None) -> list:
    data_dir = os.path.join(out_dir, "data")
    index = os.path.join(data_dir, "index.csv")
    if not os.path.exists(index):
        return []
    out = [index]
    with open(index) as f:
        f.readline()
        for line in f:
            cells = line.strip().split(",")
            if split and cells[0] != split:
                continue
            out += [os.path.join(data_dir, c) for c in cells[3:]]
    return out


def model_hypotheses(cfg: ExperimentConfig) -> np.ndarray:
    return make_hypotheses(cfg.get_float("scene.disparity_min"),
                           cfg.get_float("scene.disparity_max"),
                           cfg.get_float("model.hyps_step"))


# ---------------------------------------------------------------------------
# stages
# ---------------------------------------------------------------------------

def run_gen_data(cfg: ExperimentConfig, out_dir) -> dict:
    samples_by_split = {split: generate_split(cfg, split) for split in SPLITS}
    outputs = save_dataset(out_dir, cfg, samples_by_split)
    write_manifest(out_dir, "gen-data", cfg, [], outputs,
                   extra={split: len(s) for split, s in samples_by_split.items()})
    return {"views": {split: len(s) for split, s in samples_by_split.items()}}


def pretrained_model_path(out_dir):
    return os.path.join(out_dir, "models", "pretrained.bin")


def finetuned_model_path(out_dir, tag):
    return os.path.join(out_dir, "models", f"finetuned_{tag}.bin")


def run_pretrain(cfg: ExperimentConfig, out_dir) -> dict:
    _check_profile(out_dir, "gen-data", cfg)
    train = load_dataset(out_dir, cfg, "pretrain")
    val = load_dataset(out_dir, cfg, "val")
    hyps = model_hypotheses(cfg)
    pcfg = cfg.pretrain_config()
    state, diag = pretrain(init_model_state(pcfg), train, val, hyps, pcfg)
    os.makedirs(os.path.join(out_dir, "models"), exist_ok=True)
    model_path = pretrained_model_path(out_dir)
    save_model_state(model_path, state)
    reports_dir = os.path.join(out_dir, "reports")
    os.makedirs(reports_dir, exist_ok=True)
    log_path = os.path.join(reports_dir, "pretrain_log.csv")
    with open(log_path, "w") as f:
        f.write("epoch,train_loss,val_diffuse_epe\n")
        for i, (loss, epe_val) in enumerate(diag["history"]):
            f.write(f"{i},{loss!r},{epe_val!r}\n")
    inputs = dataset_paths(out_dir, "pretrain") + dataset_paths(out_dir, "val")
    write_manifest(out_dir, "pretrain", cfg, inputs,
                   [model_path, model_path + ".txt", log_path],
                   extra={"val_epe": diag["val_epe"],
                          "target_met": diag["target_met"],
                          "epochs": diag["epochs"]})
    return diag


def touches_path(out_dir, strategy):
    return os.path.join(out_dir, "touches", f"touches_{strategy}.csv")


def probes_path(out_dir, strategy):
    return os.path.join(out_dir, "touches", f"probes_{strategy}.csv")


def run_select(cfg: ExperimentConfig, out_dir, strategy=None) -> dict:
    strategy = strategy or cfg.strategy
    if strategy not in STRATEGIES:
        raise ConfigError(f"unknown strategy {strategy!r}; have {STRATEGIES}")
    _check_profile(out_dir, "pretrain", cfg)
    model_path = _require(pretrained_model_path(out_dir), "pretrain")
    state = load_model_state(model_path)
    samples = load_dataset(out_dir, cfg, "probe")
    hyps = model_hypotheses(cfg)
    sel_cfg = cfg.selection_config()
    cache = FeatureCache()
    if strategy == "utility":
        result = selector.greedy_select(state, samples, hyps, sel_cfg, cache)
    elif strategy == "random":
        result = selector.baseline_random(samples, sel_cfg, cfg.seed)
    elif strategy == "confidence":
        result = selector.baseline_confidence(state, samples, hyps, sel_cfg, cache)
    else:
        result = selector.baseline_oracle_center(samples, sel_cfg)
    os.makedirs(os.path.join(out_dir, "touches"), exist_ok=True)
    t_path = touches_path(out_dir, strategy)
    selector.save_touches_csv(t_path, result)
    outputs = [t_path]
    if result.steps:
        replay = os.path.join(out_dir, "touches", f"replay_{strategy}.bin")
        selector.save_selection_replay(replay, result)
        outputs.append(replay)
    inputs = [model_path] + dataset_paths(out_dir, "probe")
    write_manifest(out_dir, f"select-{strategy}", cfg, inputs, outputs,
                   extra={"n_touches": len(result.touches),
                          "c1": result.c1,
                          "diagnostics": result.diagnostics})
    return {"touches": len(result.touches)}


def run_probe(cfg: ExperimentConfig, out_dir, strategy=None) -> dict:
    strategy = strategy or cfg.strategy
    t_path = _require(touches_path(out_dir, strategy), f"select (with strategy "
                      f"{strategy})")
    _check_profile(out_dir, f"select-{strategy}", cfg)
    touches = selector.load_touches_csv(t_path).touches
    samples = load_dataset(out_dir, cfg, "probe")
    by_view = {(s.scene_id, s.view_id): s for s in samples}
    results, stats = probesim.probe_batch(by_view, touches, cfg.probe_config())
    p_path = probes_path(out_dir, strategy)
    probesim.save_probes_csv(p_path, results)
    write_manifest(out_dir, f"probe-{strategy}", cfg,
                   [t_path] + dataset_paths(out_dir, "probe"), [p_path],
                   extra={"attempted": stats.attempted,
                          "succeeded": stats.succeeded,
                          "budget_spent": stats.attempted})
    return {"attempted": stats.attempted, "succeeded": stats.succeeded}


def _finetune_tag(strategy, ft_cfg) -> str:
    tag = strategy
    if ft_cfg.tactile_mode != "patch":
        tag += f"_{ft_cfg.tactile_mode}"
    if ft_cfg.lambda_r == 0.0:
        tag += "_noreg"
    return tag


def run_finetune(cfg: ExperimentConfig, out_dir, strategy=None, tag=None) -> dict:
    strategy = strategy or cfg.strategy
    p_path = _require(probes_path(out_dir, strategy), f"probe (with strategy "
                      f"{strategy})")
    _check_profile(out_dir, f"probe-{strategy}", cfg)
    model_path = _require(pretrained_model_path(out_dir), "pretrain")
    state = load_model_state(model_path)
    probes = probesim.load_probes_csv(p_path)
    samples = load_dataset(out_dir, cfg, "probe")
    hyps = model_hypotheses(cfg)
    ft_cfg = cfg.finetune_config()
    sel_cfg = cfg.selection_config()
    tag = tag or _finetune_tag(strategy, ft_cfg)
    cache = FeatureCache()
    pred_by_view = {}
    for s in samples:
        fwd = forward_volume(cache.get(s, state), state, hyps)
        pred_by_view[(s.scene_id, s.view_id)] = fwd.pred
    labels = []
    for r in probes:
        if not r.success:
            continue
        labels.append(finetuner.build_tactile_label(
            r, pred_by_view[(r.touch.scene_id, r.touch.view_id)], ft_cfg))
    finetuned, log_rows = finetuner.finetune(state, labels, samples, hyps,
                                             ft_cfg, sel_cfg, cache)
    model_out = finetuned_model_path(out_dir, tag)
    os.makedirs(os.path.dirname(model_out), exist_ok=True)
    save_model_state(model_out, finetuned)
    reports_dir = os.path.join(out_dir, "reports")
    os.makedirs(reports_dir, exist_ok=True)
    log_path = os.path.join(reports_dir, f"finetune_log_{tag}.csv")
    finetuner.save_training_log_csv(log_path, log_rows)
    write_manifest(out_dir, f"finetune-{tag}", cfg,
                   [p_path, model_path] + dataset_paths(out_dir, "probe"),
                   [model_out, model_out + ".txt", log_path],
                   extra={"labels": len(labels), "strategy": strategy})
    return {"tag": tag, "labels": len(labels)}


def _predictions(state, samples, hyps, cache) -> list:
    return [forward_volume(cache.get(s, state), state, hyps).pred
            for s in samples]


def evaluate_model(state, samples, hyps, include_boundary=True,
                   cache=None):
    cache = cache or FeatureCache()
    preds = _predictions(state, samples, hyps, cache)
    return evaluator.report_views(preds, samples, include_boundary), preds


def run_eval(cfg: ExperimentConfig, out_dir, model_tags=None) -> dict:
    _check_profile(out_dir, "gen-data", cfg)
    samples = load_dataset(out_dir, cfg, "eval")
    hyps = model_hypotheses(cfg)
    include_boundary = cfg.get_bool("eval.include_boundary")
    models_dir = os.path.join(out_dir, "models")
    if model_tags is None:
        model_tags = ["pretrained"]
        if os.path.isdir(models_dir):
            for name in sorted(os.listdir(models_dir)):
                if name.startswith("finetuned_") and name.endswith(".bin"):
                    model_tags.append(name[len("finetuned_"):-len(".bin")])
    rows = []
    inputs = list(dataset_paths(out_dir, "eval"))
    cache = FeatureCache()
    figures = cfg.get_bool("report.figures")
    reports_dir = os.path.join(out_dir, "reports")
    os.makedirs(reports_dir, exist_ok=True)
    outputs = []
    for tag in model_tags:
        path = (pretrained_model_path(out_dir) if tag == "pretrained"
                else finetuned_model_path(out_dir, tag))
        _require(path, "pretrain" if tag == "pretrained" else "finetune")
        inputs.append(path)
        state = load_model_state(path)
        rep, preds = evaluate_model(state, samples, hyps, include_boundary, cache)
        rows.append((tag, rep))
        if figures:
            from .selector import confidence_map
            fwd = forward_volume(cache.get(samples[0], state), state, hyps)
            conf = confidence_map(fwd.probs, fwd.pred, hyps,
                                  cfg.get_float("select.epsilon"))
            fig_path = os.path.join(reports_dir, f"fig_eval_{tag}_scene.png")
            reporting.save_scene_panel(fig_path, samples[0], preds[0], conf)
            outputs.append(fig_path)
    table = evaluator.compare(rows)
    base = os.path.join(reports_dir, "metrics_eval")
    with open(base + ".csv", "w") as f:
        f.write(table.to_csv())
    with open(base + ".json", "w") as f:
        f.write(table.to_json())
    with open(base + ".txt", "w") as f:
        f.write(table.to_text())
    outputs += [base + ".csv", base + ".json", base + ".txt"]
    if figures:
        fig = os.path.join(reports_dir, "fig_eval_epe.png")
        reporting.save_metric_bars(fig, table)
        outputs.append(fig)
    write_manifest(out_dir, "eval", cfg, inputs, outputs,
                   extra={"models": list(model_tags)})
    return {tag: rep.metrics("Trans")["epe_px"] for tag, rep in rows}


def run_full(cfg: ExperimentConfig, out_dir) -> dict:
    run_gen_data(cfg, out_dir)
    run_pretrain(cfg, out_dir)
    run_select(cfg, out_dir)
    run_probe(cfg, out_dir)
    info = run_finetune(cfg, out_dir)
    return run_eval(cfg, out_dir, ["pretrained", info["tag"]])


# ---------------------------------------------------------------------------
# ablation grid
# ---------------------------------------------------------------------------

def _mean_std(values):
    arr = np.asarray(values, dtype=np.float64)
    return float(arr.mean()), float(arr.std())


def run_ablate(cfg: ExperimentConfig, out_dir) -> dict:
    """Strategy comparison plus tactile-mode and regularization ablations
    over ablate.seeds seeds; per-seed artifacts land in ablate/seed_*."""
    n_seeds = cfg.get_int("ablate.seeds")
    strategies = [s.strip() for s in cfg.get_str("ablate.strategies").split(",")
                  if s.strip()]
    for s in strategies:
        if s not in STRATEGIES:
            raise ConfigError(f"unknown strategy {s!r} in ablate.strategies")
    grid = {}          # label -> {"Trans": [...], "All": [...], "Diffuse": [...]}
    per_seed_rows = []

    def record(label, seed, rep):
        entry = grid.setdefault(label, {"Trans": [], "All": [], "Diffuse": []})
        for split in entry:
            entry[split].append(rep.metrics(split)["epe_px"])
        per_seed_rows.append(
            [label, seed,
             repr(rep.metrics("All")["epe_px"]),
             repr(rep.metrics("Trans")["epe_px"]),
             repr(rep.metrics("Diffuse")["epe_px"])])

    base_seed = cfg.seed
    for k in range(n_seeds):
        seed = base_seed + k
        sub_cfg = ExperimentConfig(values=dict(cfg.values))
        sub_cfg.values["seed"] = str(seed)
        sub_dir = os.path.join(out_dir, "ablate", f"seed_{seed}")
        os.makedirs(sub_dir, exist_ok=True)
        run_gen_data(sub_cfg, sub_dir)
        run_pretrain(sub_cfg, sub_dir)
        eval_samples = load_dataset(sub_dir, sub_cfg, "eval")
        hyps = model_hypotheses(sub_cfg)
        include_boundary = sub_cfg.get_bool("eval.include_boundary")
        cache = FeatureCache()
        pre_state = load_model_state(pretrained_model_path(sub_dir))
        rep, _ = evaluate_model(pre_state, eval_samples, hyps, include_boundary,
                                cache)
        record("pretrained", seed, rep)
        for strategy in strategies:
            run_select(sub_cfg, sub_dir, strategy)
            run_probe(sub_cfg, sub_dir, strategy)
            info = run_finetune(sub_cfg, sub_dir, strategy)
            state = load_model_state(finetuned_model_path(sub_dir, info["tag"]))
            rep, _ = evaluate_model(state, eval_samples, hyps, include_boundary,
                                    cache)
            record(strategy, seed, rep)
        # ablation variants ride on the utility touches
        if "utility" in strategies:
            pixel_cfg = ExperimentConfig(values=dict(sub_cfg.values))
            pixel_cfg.values["finetune.tactile_mode"] = "pixel"
            info = run_finetune(pixel_cfg, sub_dir, "utility")
            state = load_model_state(finetuned_model_path(sub_dir, info["tag"]))
            rep, _ = evaluate_model(state, eval_samples, hyps, include_boundary,
                                    cache)
            record("utility_pixel", seed, rep)

            noreg_cfg = ExperimentConfig(values=dict(sub_cfg.values))
            noreg_cfg.values["finetune.lambda_r"] = "0.0"
            info = run_finetune(noreg_cfg, sub_dir, "utility")
            state = load_model_state(finetuned_model_path(sub_dir, info["tag"]))
            rep, _ = evaluate_model(state, eval_samples, hyps, include_boundary,
                                    cache)
            record("utility_noreg", seed, rep)

    reports_dir = os.path.join(out_dir, "reports")
    os.makedirs(reports_dir, exist_ok=True)
    per_seed_path = os.path.join(reports_dir, "ablate_per_seed.csv")
    with open(per_seed_path, "w") as f:
        f.write("label,seed,all_epe,trans_epe,diffuse_epe\n")
        for row in per_seed_rows:
            f.write(",".join(str(c) for c in row) + "\n")

    summary_path = os.path.join(reports_dir, "ablate_summary.csv")
    labels = list(grid)
    summary = {}
    with open(summary_path, "w") as f:
        f.write("label,seeds,all_epe_mean,all_epe_std,trans_epe_mean,"
                "trans_epe_std,diffuse_epe_mean,diffuse_epe_std\n")
        for label in labels:
            am, asd = _mean_std(grid[label]["All"])
            tm, tsd = _mean_std(grid[label]["Trans"])
            dm, dsd = _mean_std(grid[label]["Diffuse"])
            summary[label] = {"All": (am, asd), "Trans": (tm, tsd),
                              "Diffuse": (dm, dsd)}
            f.write(f"{label},{n_seeds},{am!r},{asd!r},{tm!r},{tsd!r},"
                    f"{dm!r},{dsd!r}\n")

    text_path = os.path.join(reports_dir, "ablate_summary.txt")
    with open(text_path, "w") as f:
        cols = ["label", "All EPE", "Trans EPE", "Diffuse EPE"]
        body = [[label,
                 f"{summary[label]['All'][0]:.3f}+-{summary[label]['All'][1]:.3f}",
                 f"{summary[label]['Trans'][0]:.3f}+-{summary[label]['Trans'][1]:.3f}",
                 f"{summary[label]['Diffuse'][0]:.3f}+-{summary[label]['Diffuse'][1]:.3f}"]
                for label in labels]
        widths = [max(len(c), *(len(r[i]) for r in body))
                  for i, c in enumerate(cols)]
        f.write("  ".join(c.rjust(w) for c, w in zip(cols, widths)) + "\n")
        f.write("  ".join("-" * w for w in widths) + "\n")
        for row in body:
            f.write("  ".join(c.rjust(w) for c, w in zip(row, widths)) + "\n")

    outputs = [per_seed_path, summary_path, text_path]
    if cfg.get_bool("report.figures"):
        fig = os.path.join(reports_dir, "fig_ablate_trans_epe.png")
        reporting.save_aggregate_bars(
            fig, [(label, summary[label]["Trans"][0], summary[label]["Trans"][1])
                  for label in labels])
        outputs.append(fig)
    write_manifest(out_dir, "ablate", cfg, [], outputs,
                   extra={"seeds": n_seeds, "labels": labels})
    return summary
