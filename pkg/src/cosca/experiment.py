"""Run experiments from a config: single runs, the ablation grid, exports."""
from __future__ import annotations

import csv
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import data as data_mod
from .autodiff import Tensor
from .config import ExperimentConfig, dumps
from .losses import pseudo_label
from .models import load_checkpoint, save_checkpoint
from .trainer import LOSS_KEYS, VARIANTS, NonFiniteLossError, evaluate, predict_proba, train

log = logging.getLogger(__name__)

ACCURACY_KEYS = ("source_acc", "target_acc", "pseudo_label_acc")


def load_datasets(cfg: ExperimentConfig):
    """Raw (unstandardised) ``(source, target, truth)``; truth may be None for CSV data."""
    d = cfg.dataset
    if d.generator == "moons":
        return data_mod.gen_two_moons_shift(d.n_per_domain, d.rotation_deg, d.noise_sd, d.seed)
    if d.generator == "blobs":
        return data_mod.gen_gaussian_blobs_shift(d.num_classes, d.n_per_class, d.mean_shift, d.scale, d.seed)
    source = data_mod.load_csv(cfg.resolve(d.source_csv))
    target = data_mod.load_csv(cfg.resolve(d.target_csv), num_classes=source.num_classes)
    if target.labels is not None:
        raise data_mod.DataFormatError(f"{d.target_csv}: target data must not carry labels")
    truth = data_mod.load_labels(cfg.resolve(d.truth_csv)) if d.truth_csv else None
    return source, target, truth


def write_dataset_dir(source, target, truth, out_dir) -> None:
    os.makedirs(out_dir, exist_ok=True)
    data_mod.save_csv(source, os.path.join(out_dir, "source.csv"))
    data_mod.save_csv(target, os.path.join(out_dir, "target.csv"))
    if truth is not None:
        data_mod.save_labels(truth, os.path.join(out_dir, "target_truth.csv"))


def read_dataset_dir(path):
    source = data_mod.load_csv(os.path.join(path, "source.csv"))
    target = data_mod.load_csv(os.path.join(path, "target.csv"), num_classes=source.num_classes)
    truth_path = os.path.join(path, "target_truth.csv")
    truth = data_mod.load_labels(truth_path) if os.path.exists(truth_path) else None
    return source, target, truth


def _json_line(obj) -> str:
    return json.dumps(obj, sort_keys=False, allow_nan=False)


def summarize(model, record, source, target, truth, cfg) -> dict:
    last_epoch = record.iterations[-1]["epoch"]
    tail = [r for r in record.iterations if r["epoch"] == last_epoch]
    losses = {}
    for key in LOSS_KEYS:
        vals = [r[key] for r in tail if r[key] is not None]
        losses[key] = float(np.mean(vals)) if vals else None
    final_epoch = record.epochs[-1]
    out = {
        "variant": cfg.train.variant,
        "seed": cfg.train.seed,
        "epochs": len(record.epochs),
        "iterations": len(record.iterations),
        "losses": losses,
        "accuracy": {k: final_epoch[k] for k in ACCURACY_KEYS},
        "source_eval": evaluate(model, source.inputs, source.labels),
        "target_eval": evaluate(model, target.inputs, truth) if truth is not None else None,
    }
    return out


def run_experiment(cfg: ExperimentConfig, out_dir: str | None = None, datasets=None) -> dict:
    """Train once and write ``metrics.jsonl``, ``final.json`` and optional extras.

    ``datasets`` may pass pre-loaded raw ``(source, target, truth)``.
    """
    out_dir = out_dir or cfg.resolve(cfg.output.directory)
    os.makedirs(out_dir, exist_ok=True)
    raw_source, raw_target, truth = datasets if datasets is not None else load_datasets(cfg)
    source, target, stats = data_mod.standardize(raw_source, raw_target)
    with open(os.path.join(out_dir, "config.ini"), "w") as fh:
        fh.write(dumps(cfg))
    with open(os.path.join(out_dir, "metrics.jsonl"), "w") as fh:
        def on_iteration(row):
            fh.write(_json_line({"type": "iteration", **row}) + "\n")

        def on_epoch(row):
            fh.write(_json_line({"type": "epoch", **row}) + "\n")

        model, record = train(cfg.train, source, target, truth, on_iteration, on_epoch)
    summary = summarize(model, record, source, target, truth, cfg)
    with open(os.path.join(out_dir, "final.json"), "w") as fh:
        json.dump(summary, fh, indent=2, allow_nan=False)
        fh.write("\n")
    if cfg.output.checkpoint:
        save_checkpoint(model, os.path.join(out_dir, "checkpoint.txt"), stats)
    if cfg.output.embeddings:
        export_embeddings(model, source, target, truth, os.path.join(out_dir, "embeddings.csv"))
    return summary


# ------------------------------------------------------------------ ablation


@dataclass
class AblationReport:
    variants: list[str]
    seeds: list[int]
    rows: list[dict] = field(default_factory=list)

    def accuracies(self, variant: str) -> list[float]:
        return [r["target_acc"] for r in self.rows if r["variant"] == variant and r["status"] == "ok"]

    def summary(self) -> list[dict]:
        out = []
        for v in self.variants:
            acc = self.accuracies(v)
            q1, med, q3 = np.percentile(acc, [25, 50, 75]) if acc else (None, None, None)
            out.append({
                "variant": v,
                "n_ok": len(acc),
                "median": None if med is None else float(med),
                "q1": None if q1 is None else float(q1),
                "q3": None if q3 is None else float(q3),
            })
        return out

    def medians(self) -> dict:
        return {s["variant"]: s["median"] for s in self.summary()}


CELL_FIELDS = ("variant", "seed", "status", "target_acc", "source_acc", "pseudo_label_acc",
               "accuracy_f1", "accuracy_f2", "error")


def _run_cell(args):
    cfg, variant, seed, datasets, cell_dir = args
    cell_cfg = replace(cfg, train=replace(cfg.train.for_variant(variant), seed=seed),
                       output=replace(cfg.output, embeddings=False, checkpoint=False))
    row = dict.fromkeys(CELL_FIELDS)
    row.update(variant=variant, seed=seed)
    try:
        summary = run_experiment(cell_cfg, cell_dir, datasets)
    except NonFiniteLossError as exc:
        row.update(status="failed", error=str(exc))
        return row
    acc = summary["accuracy"]
    row.update(status="ok", error="", **acc)
    if summary["target_eval"] is not None:
        row.update(accuracy_f1=summary["target_eval"]["accuracy_f1"],
                   accuracy_f2=summary["target_eval"]["accuracy_f2"])
    return row


def run_ablation(cfg: ExperimentConfig, variants, seeds, out_dir: str | None = None, jobs: int = 1) -> AblationReport:
    """Train every (variant, seed) cell on one shared copy of the data.

    A cell whose training diverges is reported as failed; the grid continues.
    """
    variants, seeds = list(variants), [int(s) for s in seeds]
    if not variants or not seeds:
        raise ValueError("need at least one variant and one seed")
    bad = [v for v in variants if v not in VARIANTS]
    if bad:
        raise ValueError(f"unknown variant(s) {bad}")
    out_dir = out_dir or cfg.resolve(cfg.output.directory)
    os.makedirs(out_dir, exist_ok=True)
    datasets = load_datasets(cfg)
    if datasets[2] is None:
        raise ValueError("the ablation grid needs target ground truth for scoring")
    tasks = [
        (cfg, v, s, datasets, os.path.join(out_dir, "cells", f"{v}_seed{s}"))
        for v in variants for s in seeds
    ]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_run_cell, tasks))
    else:
        rows = [_run_cell(t) for t in tasks]
    report = AblationReport(variants, seeds, rows)
    write_ablation(report, out_dir)
    return report


def write_ablation(report: AblationReport, out_dir: str) -> None:
    with open(os.path.join(out_dir, "ablation.csv"), "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CELL_FIELDS)
        w.writeheader()
        for row in report.rows:
            w.writerow({k: ("" if row[k] is None else row[k]) for k in CELL_FIELDS})
    with open(os.path.join(out_dir, "ablation_summary.csv"), "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=("variant", "n_ok", "median", "q1", "q3"))
        w.writeheader()
        for row in report.summary():
            w.writerow({k: ("" if v is None else v) for k, v in row.items()})


# ----------------------------------------------------------------- embeddings


def pca_2d(x: np.ndarray) -> np.ndarray:
    """Project rows onto the two leading principal components.

    Components are sorted by explained variance and signed so that each
    one's largest-magnitude loading is positive.
    """
    xc = x - x.mean(axis=0)
    _, _, vt = np.linalg.svd(xc, full_matrices=False)
    comps = vt[:2]
    signs = np.sign(comps[np.arange(len(comps)), np.abs(comps).argmax(axis=1)])
    comps = comps * np.where(signs == 0, 1.0, signs)[:, None]
    proj = xc @ comps.T
    if proj.shape[1] < 2:
        proj = np.hstack([proj, np.zeros((len(x), 2 - proj.shape[1]))])
    return proj


def export_embeddings(model, source, target, truth, path) -> None:
    """Write generator features, labels and a PCA view for both domains."""
    fs = model.g(Tensor(source.inputs)).data
    ft = model.g(Tensor(target.inputs)).data
    ps = pseudo_label(*predict_proba(model, source.inputs)).labels
    pt = pseudo_label(*predict_proba(model, target.inputs)).labels
    feats = np.vstack([fs, ft])
    proj = pca_2d(feats)
    d = feats.shape[1]
    header = ["domain", "true_label", "pseudo_label"] + [f"feature_{i}" for i in range(d)] + ["pca_0", "pca_1"]
    t_truth = [""] * len(target) if truth is None else [int(v) for v in truth]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        rows = [("source", int(y), int(p)) for y, p in zip(source.labels, ps)]
        rows += [("target", y, int(p)) for y, p in zip(t_truth, pt)]
        for i, (dom, y, p) in enumerate(rows):
            w.writerow([dom, y, p] + [repr(float(v)) for v in feats[i]] + [repr(float(v)) for v in proj[i]])


def export_from_checkpoint(checkpoint_path, data_dir, out_path) -> None:
    model, stats = load_checkpoint(checkpoint_path)
    source, target, truth = read_dataset_dir(data_dir)
    if stats is not None:
        source = replace(source, inputs=stats.apply(source.inputs), standardized=True)
        target = replace(target, inputs=stats.apply(target.inputs), standardized=True)
    export_embeddings(model, source, target, truth, out_path)
