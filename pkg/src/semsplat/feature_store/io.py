"""On-disk dataset layout.

A dataset root contains:
    manifest.json          descriptor: frame list, dims, scale tags, file paths
    masks_<scale>.json     array of mask records, RLE regions
    features_<scale>.bin   16-byte header + count*dim float32 LE records,
                           record order matching masks_<scale>.json
    poses.json             per-frame intrinsics + 4x4 extrinsics, row-major
    propagated.json        optional: per-frame tracked category bitmaps
    frames/*.png           optional RGB sources

Feature files: magic b"SSF1", then version, count, dim as uint32 LE.
"""
import json
import os
import struct

import numpy as np

from ..errors import (
    CorruptFeature,
    MissingArtifact,
    SchemaViolation,
)
from .types import (
    SCALES,
    CameraPose,
    Dataset,
    Frame,
    Mask,
    QuerySet,
    SemanticFeature,
)
from .rle import rle_decode

FEATURE_MAGIC = b"SSF1"
FEATURE_VERSION = 1
MANIFEST_NAME = "manifest.json"


def write_feature_bin(path, records):
    """Write an (n, d) float32 array with the fixed 16-byte header."""
    arr = np.ascontiguousarray(np.asarray(records, dtype="<f4"))
    if arr.ndim != 2:
        raise SchemaViolation(f"feature records must be 2-D, got {arr.shape}")
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<III", FEATURE_VERSION, arr.shape[0], arr.shape[1]))
        fh.write(arr.tobytes())


def read_feature_bin(path, expect_dim=None):
    """Read a feature file back as the stored float32 array."""
    if not os.path.exists(path):
        raise MissingArtifact(f"feature file {path} not found")
    with open(path, "rb") as fh:
        head = fh.read(16)
        if len(head) != 16 or head[:4] != FEATURE_MAGIC:
            raise SchemaViolation(f"{path}: bad feature header")
        version, count, dim = struct.unpack("<III", head[4:])
        if version != FEATURE_VERSION:
            raise SchemaViolation(f"{path}: unsupported version {version}")
        if expect_dim is not None and dim != expect_dim:
            raise SchemaViolation(
                f"{path}: manifest declares d={expect_dim} but file has d={dim}"
            )
        payload = fh.read()
    expected = count * dim * 4
    if len(payload) != expected:
        raise SchemaViolation(
            f"{path}: payload is {len(payload)} bytes, expected {expected}"
        )
    return np.frombuffer(payload, dtype="<f4").reshape(count, dim)


def dump_json(path, obj):
    """Canonical JSON emission so identical content yields identical bytes."""
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_json(path):
    if not os.path.exists(path):
        raise MissingArtifact(f"{path} not found")
    with open(path) as fh:
        return json.load(fh)


def mask_to_record(mask):
    return {
        "mask_id": mask.mask_id,
        "frame_id": mask.frame_id,
        "rle": list(mask.rle_counts),
        "pred_iou": mask.pred_iou,
        "stability": mask.stability,
        "label": mask.label,
    }


def save_dataset(root, dataset, images=None):
    """Write a Dataset to disk; `images` maps frame_id to H x W x 3 uint8."""
    os.makedirs(root, exist_ok=True)
    manifest = {
        "format": "semsplat-dataset",
        "version": 1,
        "dim": dataset.dim,
        "feature_dim": dataset.feature_dim,
        "scales": list(SCALES),
        "n_categories": dataset.n_categories,
        "frames": [],
        "files": {"poses": "poses.json"},
    }
    poses = []
    for fr in dataset.frames:
        manifest["frames"].append(
            {
                "frame_id": fr.frame_id,
                "width": fr.width,
                "height": fr.height,
                "image": fr.image_path,
            }
        )
        poses.append(
            {
                "frame_id": fr.frame_id,
                "intrinsics": fr.camera.intrinsics.tolist(),
                "world_to_camera": fr.camera.world_to_camera.tolist(),
            }
        )
    dump_json(os.path.join(root, "poses.json"), poses)
    for scale in SCALES:
        mask_name = f"masks_{scale}.json"
        feat_name = f"features_{scale}.bin"
        manifest["files"][f"masks_{scale}"] = mask_name
        manifest["files"][f"features_{scale}"] = feat_name
        records = [mask_to_record(m) for m in dataset.masks.get(scale, [])]
        dump_json(os.path.join(root, mask_name), records)
        raw = dataset.raw_features.get(scale)
        if raw is None:
            raw = np.array(
                [f.vector for f in dataset.features.get(scale, [])], dtype="<f4"
            ).reshape(len(dataset.features.get(scale, [])), dataset.dim)
        write_feature_bin(os.path.join(root, feat_name), raw)
    if dataset.propagated:
        manifest["files"]["propagated"] = "propagated.json"
        recs = []
        for frame_id in sorted(dataset.propagated):
            from .rle import rle_encode

            cats = []
            for bm in dataset.propagated[frame_id]:
                counts, _, _ = rle_encode(bm)
                cats.append(counts)
            recs.append({"frame_id": frame_id, "categories": cats})
        dump_json(os.path.join(root, "propagated.json"), recs)
    if images:
        from PIL import Image

        img_dir = os.path.join(root, "frames")
        os.makedirs(img_dir, exist_ok=True)
        for frame_id, arr in images.items():
            Image.fromarray(arr).save(os.path.join(img_dir, f"{frame_id:04d}.png"))
    dump_json(os.path.join(root, MANIFEST_NAME), manifest)


def load_dataset(root):
    """Load and validate a dataset; returns (Dataset, warnings list)."""
    manifest = load_json(os.path.join(root, MANIFEST_NAME))
    warnings = []
    for key in ("dim", "feature_dim", "frames", "files"):
        if key not in manifest:
            raise SchemaViolation(f"manifest missing key {key!r}")
    dim = int(manifest["dim"])
    ds = Dataset(
        root=root,
        dim=dim,
        feature_dim=int(manifest["feature_dim"]),
        n_categories=int(manifest.get("n_categories", 0)),
    )
    pose_path = os.path.join(root, manifest["files"].get("poses", "poses.json"))
    poses = {p["frame_id"]: p for p in load_json(pose_path)}
    for rec in sorted(manifest["frames"], key=lambda r: r["frame_id"]):
        fid = rec["frame_id"]
        if fid not in poses:
            raise MissingArtifact(f"no pose for frame {fid}")
        pose = CameraPose(
            intrinsics=np.array(poses[fid]["intrinsics"], dtype=np.float64),
            world_to_camera=np.array(poses[fid]["world_to_camera"], dtype=np.float64),
        )
        image = rec.get("image")
        if image is not None and not os.path.exists(os.path.join(root, image)):
            warnings.append(f"frame {fid}: image {image} missing")
        ds.frames.append(
            Frame(
                frame_id=fid,
                width=rec["width"],
                height=rec["height"],
                camera=pose,
                image_path=image,
            )
        )
    frame_sizes = {f.frame_id: (f.height, f.width) for f in ds.frames}
    dup = len(frame_sizes) != len(ds.frames)
    if dup:
        raise SchemaViolation("duplicate frame_id in manifest")

    for scale in manifest.get("scales", SCALES):
        mask_path = os.path.join(root, manifest["files"][f"masks_{scale}"])
        feat_path = os.path.join(root, manifest["files"][f"features_{scale}"])
        records = load_json(mask_path)
        raw = read_feature_bin(feat_path, expect_dim=dim)
        if raw.shape[0] != len(records):
            raise SchemaViolation(
                f"{scale}: {len(records)} masks but {raw.shape[0]} feature records"
            )
        if not np.all(np.isfinite(raw)):
            raise CorruptFeature(f"{feat_path}: non-finite feature entries")
        order = sorted(
            range(len(records)),
            key=lambda i: (records[i]["frame_id"], records[i]["mask_id"]),
        )
        masks, feats = [], []
        for i in order:
            rec = records[i]
            fid = rec["frame_id"]
            if fid not in frame_sizes:
                raise MissingArtifact(
                    f"{scale} mask {rec['mask_id']} references unknown frame {fid}"
                )
            h, w = frame_sizes[fid]
            masks.append(
                Mask(
                    mask_id=rec["mask_id"],
                    frame_id=fid,
                    scale=scale,
                    rle_counts=tuple(rec["rle"]),
                    height=h,
                    width=w,
                    pred_iou=rec["pred_iou"],
                    stability=rec["stability"],
                    label=rec.get("label", -1),
                )
            )
            vec = raw[i].astype(np.float64)
            norm = np.linalg.norm(vec)
            if norm == 0.0:
                raise CorruptFeature(
                    f"{scale} feature for mask {rec['mask_id']} has zero norm"
                )
            if abs(norm - 1.0) > 1e-3:
                warnings.append(
                    f"{scale} feature for mask ({fid},{rec['mask_id']}) "
                    f"has norm {norm:.4f}; renormalized"
                )
            feats.append(SemanticFeature(frame_id=fid, mask_id=rec["mask_id"], vector=vec))
            if ds.n_categories and rec.get("label", -1) > ds.n_categories:
                warnings.append(
                    f"{scale} mask ({fid},{rec['mask_id']}) label "
                    f"{rec['label']} exceeds n_categories={ds.n_categories}"
                )
        ds.masks[scale] = masks
        ds.features[scale] = feats
        ds.raw_features[scale] = raw[np.array(order, dtype=int)] if order else raw

    prop_name = manifest["files"].get("propagated")
    if prop_name:
        for rec in load_json(os.path.join(root, prop_name)):
            fid = rec["frame_id"]
            if fid not in frame_sizes:
                raise MissingArtifact(f"propagated masks reference unknown frame {fid}")
            h, w = frame_sizes[fid]
            ds.propagated[fid] = [
                rle_decode(counts, h, w) for counts in rec["categories"]
            ]
    return ds, warnings


def save_codebook(path_prefix, codebook, meta=None):
    """Serialize prototypes as a feature file plus JSON metadata."""
    write_feature_bin(path_prefix + ".bin", codebook.prototypes.astype("<f4"))
    info = {"n_prototypes": codebook.n_prototypes, "dim": codebook.dim}
    if meta:
        info.update(meta)
    dump_json(path_prefix + ".json", info)


def load_codebook(path_prefix):
    from .types import Codebook

    raw = read_feature_bin(path_prefix + ".bin")
    meta = load_json(path_prefix + ".json")
    if raw.shape != (meta["n_prototypes"], meta["dim"]):
        raise SchemaViolation(
            f"codebook file shape {raw.shape} disagrees with metadata"
        )
    return Codebook(prototypes=raw.astype(np.float64)), meta


def save_query_set(path_prefix, query_set):
    write_feature_bin(path_prefix + ".bin", query_set.embeddings.astype("<f4"))
    dump_json(
        path_prefix + ".json",
        {"phrases": list(query_set.phrases), "file": os.path.basename(path_prefix) + ".bin"},
    )


def load_query_set(path_prefix):
    meta = load_json(path_prefix + ".json")
    raw = read_feature_bin(path_prefix + ".bin")
    return QuerySet(phrases=tuple(meta["phrases"]), embeddings=raw.astype(np.float64))
