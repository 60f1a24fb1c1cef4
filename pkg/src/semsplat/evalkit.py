"""Metrics and reporting: mIoU, assignment purity, ablation tables.

Segmentation protocol (fixed here, documented in every report header): each
held-out pixel is assigned to the query with the highest fused relevance
(max over the SP and WP scales), the prediction for a query is the set of
pixels assigned to it, and IoU is computed per query against the hidden
ground-truth category maps. A query absent from both prediction and ground
truth scores 1.0.
"""
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError
from .feature_store import SCALES, load_query_set
from .feature_store.io import dump_json, load_json
from .feature_store.rle import rle_decode
from .mask_pipeline import iou
from .pipeline import (
    dataset_split,
    run_associate,
    run_index_maps,
    run_train_codebook,
    run_train_field,
)
from .query import relevance_scores
from .semantic_field import decode
from .splat import build_feature_plan

PROTOCOL = (
    "protocol: per-pixel argmax over query relevances fused across scales "
    "by max; IoU per query on held-out views; empty-vs-empty counts 1.0"
)

ABLATION_VARIANTS = ("BASELINE", "PULL_ONLY", "PUSH_ONLY", "FULL")


@dataclass
class EvalReport:
    per_query_iou: dict            # phrase -> [iou per view]
    miou: float
    variant: str = ""
    config_hash: str = ""
    runtime_s: float = 0.0
    extras: dict = field(default_factory=dict)


def miou(pred_masks, gt_masks):
    """Mean IoU over paired masks; a pair empty on both sides scores 1.0."""
    if len(pred_masks) != len(gt_masks):
        raise ShapeError(
            f"{len(pred_masks)} predictions vs {len(gt_masks)} ground truths"
        )
    vals = []
    for p, g in zip(pred_masks, gt_masks):
        p = np.asarray(p, dtype=bool)
        g = np.asarray(g, dtype=bool)
        if p.shape != g.shape:
            raise ShapeError(f"mask shapes differ: {p.shape} vs {g.shape}")
        if not p.any() and not g.any():
            vals.append(1.0)
        else:
            vals.append(iou(p, g))
    return float(np.mean(vals)) if vals else 0.0


def assignment_purity(assignments, labels):
    """Fraction of labeled features whose prototype index is their
    category's majority index."""
    assignments = np.asarray(assignments)
    labels = np.asarray(labels)
    keep = labels != -1
    if not keep.any():
        return 0.0
    total = 0
    hits = 0
    for c in np.unique(labels[keep]):
        jj = assignments[keep & (labels == c)]
        _, counts = np.unique(jj, return_counts=True)
        hits += counts.max()
        total += len(jj)
    return hits / total


def load_ground_truth_maps(root):
    """Hidden per-view category bitmaps written by the generator."""
    gt = load_json(os.path.join(root, "ground_truth.json"))
    out = {}
    for fid_str, per_cat in gt["category_maps"].items():
        out[int(fid_str)] = per_cat  # RLE counts per category
    return gt, out


def predict_query_masks(scene, fields, query_set, views):
    """Argmax-protocol predictions per view, one mask per query, plus the
    fused relevance stacks for heatmaps. `fields` maps scale to
    (features, decoder, codebook)."""
    from .semantic_field import refine_pixel_features

    preds, relevances = [], []
    for camera, width, height in views:
        fused = None
        for scale in SCALES:
            features, decoder, codebook = fields[scale]
            plan = build_feature_plan(
                scene.with_features(features), camera, width, height
            )
            fmap = plan.render_features(features)
            _, probs = decode(fmap, decoder)
            refined = refine_pixel_features(probs, codebook)
            rel = relevance_scores(refined, query_set)
            fused = rel if fused is None else np.maximum(fused, rel)
        winner = np.argmax(fused, axis=-1)
        preds.append([winner == qi for qi in range(len(query_set.phrases))])
        relevances.append(fused)
    return preds, relevances


def evaluate_holdout(dataset, scene, fields, query_set, gt_maps, view_ids):
    """Per-query IoU on the given views; returns (EvalReport fields)."""
    per_query = {p: [] for p in query_set.phrases}
    views = []
    for fid in view_ids:
        fr = dataset.frame_by_id(fid)
        views.append((fr.camera, fr.width, fr.height))
    preds, rels = predict_query_masks(scene, fields, query_set, views)
    for vi, fid in enumerate(view_ids):
        fr = dataset.frame_by_id(fid)
        for qi, phrase in enumerate(query_set.phrases):
            gt = rle_decode(gt_maps[fid][qi], fr.height, fr.width)
            per_query[phrase].append((preds[vi][qi], gt))
    ious = {
        p: [
            1.0 if (not pr.any() and not gt.any()) else iou(pr, gt)
            for pr, gt in pairs
        ]
        for p, pairs in per_query.items()
    }
    flat_pred = [pr for pairs in per_query.values() for pr, _ in pairs]
    flat_gt = [gt for pairs in per_query.values() for _, gt in pairs]
    return ious, miou(flat_pred, flat_gt), preds, rels


def variant_ccl_config(base, variant):
    from .ccl import CclConfig

    d = dict(base.__dict__)
    if variant == "BASELINE":
        d["lambda_pull"] = 0.0
        d["lambda_push"] = 0.0
    elif variant == "PULL_ONLY":
        d["lambda_push"] = 0.0
    elif variant == "PUSH_ONLY":
        d["lambda_pull"] = 0.0
    elif variant != "FULL":
        raise ShapeError(f"unknown ablation variant {variant!r}")
    return CclConfig(**d)


def run_variant(dataset, config, variant, scene=None):
    """Pipeline for one loss variant: associate, codebook, index maps,
    field, held-out evaluation. Association is variant-independent."""
    import time

    t0 = time.time()
    associated = run_associate(dataset, config)
    books, _ = run_train_codebook(
        dataset, config, associated=associated,
        ccl_config=variant_ccl_config(config.ccl, variant),
    )
    train_ids, holdout_ids = dataset_split(dataset)
    maps = run_index_maps(
        dataset, config, associated=associated, books=books, frame_ids=train_ids
    )
    results = run_train_field(
        dataset, config, scene=scene, index_maps=maps, books=books
    )
    fields = {
        scale: (results[scale].features, results[scale].decoder, books[scale])
        for scale in SCALES
    }
    if scene is None:
        from .splat import load_scene

        scene = load_scene(os.path.join(dataset.root, "scene_gt"))
    query_set = load_query_set(os.path.join(dataset.root, "queries"))
    gt, gt_maps = load_ground_truth_maps(dataset.root)
    ious, m, _, _ = evaluate_holdout(
        dataset, scene, fields, query_set, gt_maps, holdout_ids or train_ids
    )
    return EvalReport(
        per_query_iou={p: v for p, v in ious.items()},
        miou=m,
        variant=variant,
        config_hash=config.hash(),
        runtime_s=time.time() - t0,
    )


def run_ablation(dataset, config, variants=ABLATION_VARIANTS, scene=None,
                 out_dir=None):
    """Run the pipeline once per loss variant with shared seeds; returns
    {variant: EvalReport} and optionally writes CSV + markdown."""
    reports = {}
    for variant in variants:
        reports[variant] = run_variant(dataset, config, variant, scene=scene)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        write_ablation_table(reports, out_dir, config)
    return reports


def write_ablation_table(reports, out_dir, config):
    phrases = sorted(next(iter(reports.values())).per_query_iou)
    with open(os.path.join(out_dir, "ablation.csv"), "w") as fh:
        fh.write("# " + PROTOCOL + "\n")
        fh.write("variant," + ",".join(phrases) + ",miou\n")
        for variant, rep in reports.items():
            per = [np.mean(rep.per_query_iou[p]) for p in phrases]
            fh.write(
                variant + "," + ",".join(f"{v:.4f}" for v in per)
                + f",{rep.miou:.4f}\n"
            )
    with open(os.path.join(out_dir, "ablation.md"), "w") as fh:
        fh.write(f"# Ablation ({PROTOCOL})\n\n")
        fh.write("| Variant | " + " | ".join(phrases) + " | mIoU |\n")
        fh.write("|" + "---|" * (len(phrases) + 2) + "\n")
        for variant, rep in reports.items():
            per = [np.mean(rep.per_query_iou[p]) for p in phrases]
            fh.write(
                f"| {variant} | "
                + " | ".join(f"{v:.3f}" for v in per)
                + f" | {rep.miou:.3f} |\n"
            )
    dump_json(
        os.path.join(out_dir, "ablation_meta.json"),
        {
            "config_hash": config.hash(),
            "runtimes_s": {v: round(r.runtime_s, 2) for v, r in reports.items()},
        },
    )


def write_metrics_csv(report, path):
    with open(path, "w") as fh:
        fh.write("# " + PROTOCOL + "\n")
        fh.write(f"# config_hash={report.config_hash}\n")
        fh.write("query,view_index,iou\n")
        for phrase, vals in sorted(report.per_query_iou.items()):
            for i, v in enumerate(vals):
                fh.write(f"{phrase},{i},{v:.6f}\n")
        fh.write(f"miou,,{report.miou:.6f}\n")


def save_mask_png(path, mask):
    from PIL import Image

    Image.fromarray((np.asarray(mask, dtype=np.uint8) * 255)).save(path)


def save_heatmap_png(path, grid):
    """Relevance in [0,1] as a simple blue-to-red ramp."""
    from PIL import Image

    g = np.clip(np.asarray(grid, dtype=np.float64), 0.0, 1.0)
    rgb = np.stack([g, 0.2 * np.ones_like(g), 1.0 - g], axis=-1)
    Image.fromarray((rgb * 255).astype(np.uint8)).save(path)


def save_overlay_png(path, image, mask, color=(255, 40, 40), alpha=0.55):
    from PIL import Image

    img = np.asarray(image, dtype=np.float64).copy()
    m = np.asarray(mask, dtype=bool)
    for ch in range(3):
        img[..., ch][m] = (1 - alpha) * img[..., ch][m] + alpha * color[ch]
    Image.fromarray(img.astype(np.uint8)).save(path)
