"""Stage orchestration shared by the CLI and the ablation harness.

Stages communicate through on-disk artifacts under
<dataset>/stages/<config-hash>/<stage>/ so runs with different
configurations never mix. Every helper is deterministic for a fixed
(config, dataset) pair.
"""
import json
import os

import numpy as np

from .ccl import CclConfig, build_index_map, train_codebook
from .errors import MissingArtifact
from .feature_store import (
    SCALES,
    Codebook,
    load_codebook,
    load_dataset,
    save_codebook,
)
from .feature_store.io import dump_json, write_feature_bin, read_feature_bin, load_json
from .feature_store.types import SemanticFeature
from .mask_pipeline import (
    CandidateMask,
    PropagatedMaskSet,
    associate_frame,
    filter_masks_traced,
)
from .semantic_field import Decoder, train_field
from .splat import load_scene, save_scene


def stage_dir(root, config, stage, create=False):
    path = os.path.join(root, "stages", config.hash(), stage)
    if create:
        os.makedirs(path, exist_ok=True)
    return path


def save_arrays(path_prefix, arrays):
    """Named float64 arrays as one flat binary plus a JSON directory."""
    names = sorted(arrays)
    header, blobs, offset = {}, [], 0
    for name in names:
        arr = np.ascontiguousarray(arrays[name], dtype="<f8")
        header[name] = {"shape": list(arr.shape), "offset": offset}
        blobs.append(arr.reshape(-1))
        offset += arr.size
    dump_json(path_prefix + ".json", header)
    np.concatenate(blobs if blobs else [np.zeros(0)]).tofile(path_prefix + ".bin")


def load_arrays(path_prefix):
    if not os.path.exists(path_prefix + ".json"):
        raise MissingArtifact(f"{path_prefix}.json not found")
    header = load_json(path_prefix + ".json")
    flat = np.fromfile(path_prefix + ".bin", dtype="<f8")
    out = {}
    for name, meta in header.items():
        size = int(np.prod(meta["shape"])) if meta["shape"] else 1
        out[name] = flat[meta["offset"]:meta["offset"] + size].reshape(meta["shape"])
    return out


def run_associate(dataset, config, out_dir=None):
    """Filter each frame's masks into disjoint sets and label them against
    the dataset's propagated category masks.

    Returns {scale: (masks, features)} in dataset order; when out_dir is
    given, also writes masks_<scale>.json + features_<scale>.bin there.
    """
    if not dataset.propagated:
        raise MissingArtifact(
            "dataset has no propagated category masks; association needs them"
        )
    mc = config.masks
    result = {}
    stats = {"filtered_out": 0, "labeled": 0, "unlabeled": 0}
    for scale in SCALES:
        all_masks, all_feats = [], []
        by_key = {
            (f.frame_id, f.mask_id): f for f in dataset.features[scale]
        }
        for frame in dataset.frames:
            masks = dataset.masks_for(frame.frame_id, scale)
            if not masks:
                continue
            cands = [
                CandidateMask(
                    bitmap=m.bitmap(), pred_iou=m.pred_iou,
                    stability=m.stability, source_scale="part",
                )
                for m in masks
            ]
            filtered, sources = filter_masks_traced(
                cands, mc.min_pred_iou, mc.min_stability, mc.max_overlap,
                frame_id=frame.frame_id, scale=scale,
            )
            stats["filtered_out"] += len(masks) - len(filtered)
            prop = PropagatedMaskSet(
                frame_id=frame.frame_id,
                bitmaps=tuple(dataset.propagated[frame.frame_id]),
            )
            labeled = associate_frame(filtered, prop, mc.association_threshold)
            for m, src in zip(labeled, sources):
                old = masks[src]
                feat = by_key[(old.frame_id, old.mask_id)]
                all_masks.append(m)
                all_feats.append(
                    SemanticFeature(
                        frame_id=m.frame_id, mask_id=m.mask_id, vector=feat.vector
                    )
                )
                stats["labeled" if m.label != -1 else "unlabeled"] += 1
        result[scale] = (all_masks, all_feats)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        from .feature_store.io import mask_to_record

        for scale, (masks, feats) in result.items():
            dump_json(
                os.path.join(out_dir, f"masks_{scale}.json"),
                [mask_to_record(m) for m in masks],
            )
            write_feature_bin(
                os.path.join(out_dir, f"features_{scale}.bin"),
                np.array([f.vector for f in feats], dtype="<f4").reshape(
                    len(feats), dataset.dim
                ),
            )
        dump_json(os.path.join(out_dir, "stats.json"), stats)
    return result


def load_associated(dataset, config):
    """Read the associate stage's artifacts back as (masks, features)."""
    adir = stage_dir(dataset.root, config, "associate")
    result = {}
    for scale in SCALES:
        path = os.path.join(adir, f"masks_{scale}.json")
        if not os.path.exists(path):
            raise MissingArtifact(f"associate stage output {path} missing; run associate first")
        records = load_json(path)
        raw = read_feature_bin(os.path.join(adir, f"features_{scale}.bin"))
        frame_sizes = {f.frame_id: (f.height, f.width) for f in dataset.frames}
        from .feature_store.types import Mask

        masks, feats = [], []
        for i, rec in enumerate(records):
            h, w = frame_sizes[rec["frame_id"]]
            masks.append(
                Mask(
                    mask_id=rec["mask_id"], frame_id=rec["frame_id"], scale=scale,
                    rle_counts=tuple(rec["rle"]), height=h, width=w,
                    pred_iou=rec["pred_iou"], stability=rec["stability"],
                    label=rec["label"],
                )
            )
            feats.append(
                SemanticFeature(
                    frame_id=rec["frame_id"], mask_id=rec["mask_id"],
                    vector=raw[i].astype(np.float64),
                )
            )
        result[scale] = (masks, feats)
    return result


def run_train_codebook(dataset, config, associated=None, out_dir=None, ccl_config=None):
    """Train one codebook per scale from the associated features."""
    associated = associated or load_associated(dataset, config)
    cfg = ccl_config or config.ccl
    books, traces = {}, {}
    for scale in SCALES:
        masks, feats = associated[scale]
        F = np.array([f.vector for f in feats])
        y = np.array([m.label for m in masks], dtype=np.int64)
        scale_cfg = CclConfig(**{**cfg.__dict__, "seed": cfg.seed * 2 + (scale == "wp")})
        book, trace = train_codebook(F, y, scale_cfg)
        books[scale] = book
        traces[scale] = trace
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        for scale in SCALES:
            save_codebook(
                os.path.join(out_dir, f"codebook_{scale}"), books[scale],
                meta={"config_hash": config.hash(), "scale": scale},
            )
            with open(os.path.join(out_dir, f"loss_trace_{scale}.csv"), "w") as fh:
                fh.write("step,loss\n")
                for i, v in enumerate(traces[scale]):
                    fh.write(f"{i},{v:.12g}\n")
    return books, traces


def load_codebooks(dataset, config):
    cdir = stage_dir(dataset.root, config, "codebook")
    books = {}
    for scale in SCALES:
        books[scale], _ = load_codebook(os.path.join(cdir, f"codebook_{scale}"))
    return books


def run_index_maps(dataset, config, associated=None, books=None, out_dir=None,
                   frame_ids=None):
    """Quantize every mask feature and paint per-pixel index maps."""
    associated = associated or load_associated(dataset, config)
    books = books or load_codebooks(dataset, config)
    if frame_ids is None:
        frame_ids = [f.frame_id for f in dataset.frames]
    maps = {}
    for scale in SCALES:
        masks, feats = associated[scale]
        per_frame = {}
        for fid in frame_ids:
            frame = dataset.frame_by_id(fid)
            fm = [m for m in masks if m.frame_id == fid]
            ff = [f for f in feats if f.frame_id == fid]
            per_frame[fid] = build_index_map(
                fm, ff, books[scale], frame.height, frame.width,
                frame_id=fid, scale=scale,
            )
        maps[scale] = per_frame
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        for scale in SCALES:
            fids = sorted(maps[scale])
            stack = np.stack([maps[scale][f].grid for f in fids]) if fids else np.zeros((0, 0, 0), dtype=np.int32)
            np.save(os.path.join(out_dir, f"index_maps_{scale}.npy"), stack)
            dump_json(os.path.join(out_dir, f"index_frames_{scale}.json"), fids)
    return maps


def load_index_maps(dataset, config):
    from .ccl import IndexMap

    idir = stage_dir(dataset.root, config, "index")
    maps = {}
    for scale in SCALES:
        fids = load_json(os.path.join(idir, f"index_frames_{scale}.json"))
        stack = np.load(os.path.join(idir, f"index_maps_{scale}.npy"))
        maps[scale] = {
            fid: IndexMap(frame_id=fid, scale=scale, grid=stack[i])
            for i, fid in enumerate(fids)
        }
    return maps


def dataset_split(dataset):
    """(train_ids, holdout_ids) from the manifest; defaults to all-train."""
    manifest = load_json(os.path.join(dataset.root, "manifest.json"))
    train, holdout = [], []
    for rec in manifest["frames"]:
        if rec.get("split") == "holdout":
            holdout.append(rec["frame_id"])
        else:
            train.append(rec["frame_id"])
    return train, holdout


def run_train_field(dataset, config, scene=None, index_maps=None, books=None,
                    out_dir=None, field_config=None):
    """Train per-scale feature channels and decoders on the training split."""
    books = books or load_codebooks(dataset, config)
    index_maps = index_maps or load_index_maps(dataset, config)
    if scene is None:
        scene = load_scene(os.path.join(dataset.root, "scene_gt"))
    train_ids, _ = dataset_split(dataset)
    cfg = field_config or config.field_train
    results = {}
    for scale in SCALES:
        fids = [f for f in train_ids if f in index_maps[scale]]
        views, imaps = [], []
        for fid in fids:
            frame = dataset.frame_by_id(fid)
            views.append((frame.camera, frame.width, frame.height))
            imaps.append(index_maps[scale][fid])
        decoder = Decoder.create(
            dataset.feature_dim, books[scale].n_prototypes,
            hidden=cfg.hidden, seed=cfg.seed * 2 + (scale == "wp"),
        )
        base = scene.with_features(np.zeros((len(scene), dataset.feature_dim)))
        results[scale] = train_field(base, views, imaps, decoder, cfg)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        for scale in SCALES:
            r = results[scale]
            save_arrays(
                os.path.join(out_dir, f"field_{scale}"),
                {
                    "features": r.features,
                    "w1": r.decoder.w1, "b1": r.decoder.b1,
                    "w2": r.decoder.w2, "b2": r.decoder.b2,
                },
            )
            with open(os.path.join(out_dir, f"field_trace_{scale}.csv"), "w") as fh:
                fh.write("iteration,loss\n")
                for i, v in enumerate(r.loss_trace):
                    fh.write(f"{i},{v:.12g}\n")
        save_scene(os.path.join(out_dir, "scene"), scene)
    return results


def load_field(dataset, config):
    fdir = stage_dir(dataset.root, config, "field")
    scene = load_scene(os.path.join(fdir, "scene"))
    out = {}
    for scale in SCALES:
        arrs = load_arrays(os.path.join(fdir, f"field_{scale}"))
        out[scale] = (
            arrs["features"],
            Decoder(w1=arrs["w1"], b1=arrs["b1"], w2=arrs["w2"], b2=arrs["b2"]),
        )
    return scene, out
