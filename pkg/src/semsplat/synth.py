"""Synthetic multi-view scenes with controllable cross-view inconsistency.

Scenes are columns of Gaussian blobs (one per category) stacked along the
world z axis, viewed from a camera arc, optionally closed off by a backdrop
wall that is itself a category. Ground truth comes from the renderer: each
category's per-pixel blend-weight share decides visibility, so occlusion is
handled exactly.

Per-mask embeddings start from the category vector and are corrupted by
  - occlusion: truncating mask bitmaps with a random half-plane,
  - blur_mix: mixing the vector toward another category drawn once per
    (category, view): a degraded view confuses an object with the same other
    concept in every mask it produces, the way frame-level blur does,
  - view_rot: rotating each of a view's vectors by the given angle inside
    the 2-plane spanned by the vector and a per-view random direction, a
    coherent per-view drift of exactly that angle (a rotation in a plane
    unrelated to the vector would barely move it in high dimension).

Category vectors mimic the positive-cone geometry of image-text embeddings:
pairwise cosines land in (0, 0.5), verified at generation.

Per-view randomness derives from (seed, frame_id) so views are independent
of generation order.
"""
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyPairSet, GenerationFailure
from .feature_store import (
    SCALE_SP,
    SCALE_WP,
    CameraPose,
    Dataset,
    Frame,
    Mask,
    QuerySet,
    rle_encode,
    save_dataset,
    save_query_set,
)
from .feature_store.io import dump_json
from .splat import GaussianScene, render, save_scene


@dataclass
class CorruptionSpec:
    occlusion_rate: float = 0.0
    blur_mix: float = 0.0
    view_rot_deg: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for name in ("occlusion_rate", "blur_mix"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise GenerationFailure(f"{name}={v} outside [0,1]")


@dataclass
class SyntheticScene:
    n_categories: int
    category_vectors: np.ndarray          # K x d, unit rows
    scene: GaussianScene
    frames: list                          # Frame records
    category_bitmaps: dict                # frame_id -> [K bool bitmaps]
    part_bitmaps: dict                    # frame_id -> {cat -> [bitmaps]}
    images: dict                          # frame_id -> H x W x 3 uint8
    corruption: CorruptionSpec = None
    gaussian_categories: np.ndarray = None  # per-Gaussian category (0-based)
    train_frames: list = field(default_factory=list)
    holdout_frames: list = field(default_factory=list)


def _category_vectors(k, dim, rng):
    """Unit vectors with pairwise cosines in (0, 0.5): a shared cone axis
    plus independent spread."""
    axis = rng.normal(size=dim)
    axis /= np.linalg.norm(axis)
    for _ in range(200):
        spread = rng.normal(size=(k, dim))
        spread -= np.outer(spread @ axis, axis)
        spread /= np.linalg.norm(spread, axis=1, keepdims=True)
        vecs = np.sqrt(0.2) * axis[None, :] + np.sqrt(0.8) * spread
        vecs /= np.linalg.norm(vecs, axis=1, keepdims=True)
        cosm = vecs @ vecs.T
        off = cosm[np.triu_indices(k, 1)]
        if off.size == 0 or (0.0 < off.min() and off.max() < 0.5):
            return vecs
    raise GenerationFailure("could not sample category vectors with pairwise cos in (0, 0.5)")


def _look_at(position, target, up=(0.0, 0.0, 1.0)):
    position = np.asarray(position, dtype=np.float64)
    z = np.asarray(target, dtype=np.float64) - position
    z /= np.linalg.norm(z)
    x = np.cross(z, np.asarray(up, dtype=np.float64))
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    R = np.stack([x, y, z])
    W = np.eye(4)
    W[:3, :3] = R
    W[:3, 3] = -R @ position
    return W


def _camera_arc(n_views, resolution, radius, span_deg=84.0):
    focal = 1.1 * resolution
    K = np.array(
        [[focal, 0.0, resolution / 2.0],
         [0.0, focal, resolution / 2.0],
         [0.0, 0.0, 1.0]]
    )
    angles = np.linspace(-np.deg2rad(span_deg) / 2, np.deg2rad(span_deg) / 2, n_views)
    poses = []
    for a in angles:
        pos = np.array([radius * np.sin(a), -radius * np.cos(a), 0.0])
        poses.append(CameraPose(intrinsics=K, world_to_camera=_look_at(pos, (0, 0, 0))))
    return poses


def _random_unit_quats(rng, n):
    q = rng.normal(size=(n, 4))
    return q / np.linalg.norm(q, axis=1, keepdims=True)


def _build_scene(k, n_gaussians, backdrop, rng, d_f):
    """Blob per category stacked along z; optional backdrop wall category."""
    n_obj = k - 1 if backdrop else k
    if n_obj < 1:
        raise GenerationFailure("need at least one foreground category")
    palette = np.array(
        [[0.89, 0.29, 0.24], [0.25, 0.62, 0.90], [0.32, 0.77, 0.36],
         [0.95, 0.76, 0.20], [0.68, 0.38, 0.87], [0.25, 0.80, 0.77],
         [0.93, 0.46, 0.66], [0.60, 0.60, 0.28]]
    )
    if k > len(palette):
        extra = rng.uniform(0.2, 0.95, size=(k - len(palette), 3))
        palette = np.vstack([palette, extra])
    # fit the object column into the camera frustum (half-angle atan(1/2.2)
    # at the arc radius used by generate)
    half_extent = 6.0 * (0.5 / 1.1) * 0.85
    spacing = 1.7 if n_obj <= 1 else min(1.7, 2.0 * half_extent / n_obj)
    blob_r = 0.41 * spacing
    # without a backdrop the scene must stay truly empty between objects:
    # tighter blobs keep every neighbor tail below the rasterizer alpha floor
    scatter = blob_r / (2.2 if backdrop else 3.2)
    scale_lo, scale_hi = (0.10, 0.20) if backdrop else (0.07, 0.12)
    positions, quats, scales, logits, colors, cats = [], [], [], [], [], []
    n_wall = int(n_gaussians * 0.4) if backdrop else 0
    n_per = max(8, (n_gaussians - n_wall) // n_obj)
    for c in range(n_obj):
        center = np.array([0.0, 0.0, spacing * (c - (n_obj - 1) / 2.0)])
        pts = center + rng.normal(scale=scatter, size=(n_per, 3))
        positions.append(pts)
        quats.append(_random_unit_quats(rng, n_per))
        scales.append(rng.uniform(scale_lo, scale_hi, size=(n_per, 3)) * blob_r * 2.2)
        logits.append(np.log(1 / (1 / rng.uniform(0.80, 0.95, size=n_per) - 1)))
        colors.append(np.tile(palette[c], (n_per, 1)))
        cats.append(np.full(n_per, c))
    if backdrop:
        # spherical patch well outside the camera arc: cameras sit inside the
        # sphere, so every ray that misses the objects lands on it
        shell_r = 12.0
        az_half = np.deg2rad(80.0)
        el_half = np.deg2rad(45.0)
        aspect = az_half / el_half
        n_a = max(4, int(np.round(np.sqrt(n_wall * aspect))))
        n_e = max(4, int(np.round(n_wall / n_a)))
        n_wall = n_a * n_e
        az, el = np.meshgrid(
            np.linspace(-az_half, az_half, n_a),
            np.linspace(-el_half, el_half, n_e),
        )
        az, el = az.ravel(), el.ravel()
        pts = shell_r * np.stack(
            [np.cos(el) * np.sin(az), np.cos(el) * np.cos(az), np.sin(el)], axis=1
        )
        pts += rng.normal(scale=0.05, size=pts.shape)
        positions.append(pts)
        ident = np.zeros((n_wall, 4))
        ident[:, 0] = 1.0
        quats.append(ident)
        pitch = max(
            shell_r * 2 * az_half / n_a, shell_r * 2 * el_half / n_e
        )
        scales.append(np.full((n_wall, 3), pitch * 0.62))
        logits.append(np.full(n_wall, 3.0))
        colors.append(np.tile(palette[k - 1], (n_wall, 1)))
        cats.append(np.full(n_wall, k - 1))
    cats = np.concatenate(cats)
    scene = GaussianScene(
        positions=np.concatenate(positions),
        quaternions=np.concatenate(quats),
        scales=np.concatenate(scales),
        alpha_logits=np.concatenate(logits),
        colors=np.concatenate(colors),
        features=np.zeros((len(cats), d_f)),
    )
    return scene, cats


def _split_parts(scene, cats, k, rng):
    """Assign each Gaussian a part id: 2-4 buckets along a random axis of
    its category's blob."""
    part_of = np.zeros(len(scene), dtype=int)
    n_parts = []
    next_part = 0
    for c in range(k):
        idx = np.flatnonzero(cats == c)
        parts = int(rng.integers(2, 5))
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        proj = scene.positions[idx] @ axis
        edges = np.quantile(proj, np.linspace(0, 1, parts + 1)[1:-1])
        bucket = np.searchsorted(edges, proj)
        part_of[idx] = next_part + bucket
        n_parts.append(parts)
        next_part += parts
    return part_of, n_parts, next_part


def _truncate_halfplane(bitmap, rng):
    rows, cols = np.nonzero(bitmap)
    cy, cx = rows.mean(), cols.mean()
    ang = rng.uniform(0, 2 * np.pi)
    off = rng.uniform(-0.2, 0.2) * max(
        rows.max() - rows.min() + 1, cols.max() - cols.min() + 1
    )
    yy, xx = np.mgrid[0:bitmap.shape[0], 0:bitmap.shape[1]]
    keep = ((xx - cx) * np.cos(ang) + (yy - cy) * np.sin(ang)) < off
    cut = bitmap & keep
    return cut if cut.any() else bitmap


def rotate_toward(vector, direction, theta):
    """Rotate `vector` by theta inside the plane it spans with `direction`.

    The result keeps unit norm and satisfies cos(result, vector) == cos(theta)
    exactly (up to rounding) whenever direction is not parallel to vector.
    """
    v = vector / np.linalg.norm(vector)
    g = direction - (direction @ v) * v
    gn = np.linalg.norm(g)
    if gn < 1e-12:
        return v.copy()
    g /= gn
    return np.cos(theta) * v + np.sin(theta) * g


def generate(
    out_root,
    k,
    n_views,
    resolution,
    corruption=None,
    seed=0,
    dim=512,
    feature_dim=8,
    n_gaussians=500,
    backdrop=True,
    holdout_every=4,
    cam_radius=6.0,
):
    """Generate a dataset plus hidden ground truth; returns SyntheticScene.

    Writes the feature_store layout (frames, dual-scale masks and features,
    poses, propagated category masks, query embeddings) under out_root, plus
    ground_truth.json and the frozen scene checkpoint. Deterministic for a
    given (parameters, seed) combination.
    """
    if k < 2 or n_views < 2:
        raise GenerationFailure("need k >= 2 and n_views >= 2")
    corruption = corruption or CorruptionSpec()
    rng = np.random.default_rng(seed)
    cat_vecs = _category_vectors(k, dim, rng)
    scene, cats = _build_scene(k, n_gaussians, backdrop, rng, feature_dim)
    part_of, parts_per_cat, n_parts_total = _split_parts(scene, cats, k, rng)
    poses = _camera_arc(n_views, resolution, cam_radius)

    # render once per view with category+part one-hot features: channel sums
    # give each label's blend-weight share, so ground truth inherits the
    # renderer's exact occlusion handling
    onehot = np.zeros((len(scene), k + n_parts_total))
    onehot[np.arange(len(scene)), cats] = 1.0
    onehot[np.arange(len(scene)), k + part_of] = 1.0
    probe = scene.with_features(onehot)

    frames, images, category_bitmaps, part_bitmaps = [], {}, {}, {}
    for fid, pose in enumerate(poses):
        out = render(probe, pose, resolution, resolution, save_state=False)
        share = out.feature[:, :, :k]
        covered = out.blend_weight_sum >= 0.5
        winner = np.argmax(share, axis=2)
        cat_bms = [(winner == c) & covered for c in range(k)]
        pshare = out.feature[:, :, k:]
        pwinner = np.argmax(pshare, axis=2)
        pbms = {}
        base = 0
        for c in range(k):
            pbms[c] = [
                (pwinner == base + p) & cat_bms[c]
                for p in range(parts_per_cat[c])
            ]
            base += parts_per_cat[c]
        category_bitmaps[fid] = cat_bms
        part_bitmaps[fid] = pbms
        images[fid] = np.clip(out.color * 255.0, 0, 255).astype(np.uint8)
        frames.append(
            Frame(
                frame_id=fid,
                width=resolution,
                height=resolution,
                camera=pose,
                image_path=f"frames/{fid:04d}.png",
            )
        )

    visible = [any(category_bitmaps[f][c].any() for f in range(n_views)) for c in range(k)]
    if not all(visible):
        raise GenerationFailure(
            f"categories {np.flatnonzero(~np.asarray(visible)).tolist()} are "
            f"never visible; resolution {resolution} or layout too small for k={k}"
        )

    ds = Dataset(root=out_root, dim=dim, feature_dim=feature_dim, n_categories=k)
    ds.frames = frames
    gt_labels = {SCALE_SP: [], SCALE_WP: []}
    masks = {SCALE_SP: [], SCALE_WP: []}
    feats = {SCALE_SP: [], SCALE_WP: []}
    theta = np.deg2rad(corruption.view_rot_deg)
    for fid in range(n_views):
        vrng = np.random.default_rng([seed, fid])
        view_dir = vrng.normal(size=dim)
        view_dir /= np.linalg.norm(view_dir)
        blur_targets = {}
        for c in range(k):
            o = int(vrng.integers(0, k - 1))
            blur_targets[c] = o if o < c else o + 1
        next_id = {SCALE_SP: 0, SCALE_WP: 0}

        def emit(scale, bitmap, cat):
            if not bitmap.any():
                return
            bm = bitmap
            if corruption.occlusion_rate > 0 and vrng.random() < corruption.occlusion_rate:
                bm = _truncate_halfplane(bm, vrng)
            vec = cat_vecs[cat].copy()
            if corruption.blur_mix > 0:
                other = blur_targets[cat]
                vec = (1 - corruption.blur_mix) * vec + corruption.blur_mix * cat_vecs[other]
                vec /= np.linalg.norm(vec)
            if corruption.view_rot_deg > 0:
                vec = rotate_toward(vec, view_dir, theta)
                vec /= np.linalg.norm(vec)
            counts, h, w = rle_encode(bm)
            masks[scale].append(
                Mask(
                    mask_id=next_id[scale],
                    frame_id=fid,
                    scale=scale,
                    rle_counts=counts,
                    height=h,
                    width=w,
                    pred_iou=float(vrng.uniform(0.91, 0.99)),
                    stability=float(vrng.uniform(0.91, 0.99)),
                )
            )
            feats[scale].append(vec.astype("<f4"))
            gt_labels[scale].append(cat + 1)
            next_id[scale] += 1

        for c in range(k):
            emit(SCALE_WP, category_bitmaps[fid][c], c)
            for pbm in part_bitmaps[fid][c]:
                emit(SCALE_SP, pbm, c)

    from .feature_store.types import SemanticFeature

    for scale in (SCALE_SP, SCALE_WP):
        ds.masks[scale] = masks[scale]
        ds.raw_features[scale] = (
            np.array(feats[scale], dtype="<f4")
            if feats[scale]
            else np.zeros((0, dim), dtype="<f4")
        )
        ds.features[scale] = [
            SemanticFeature(frame_id=m.frame_id, mask_id=m.mask_id, vector=v.astype(np.float64))
            for m, v in zip(masks[scale], feats[scale])
        ]
    ds.propagated = {fid: list(category_bitmaps[fid]) for fid in range(n_views)}

    holdout = [f for f in range(n_views) if (f + 1) % holdout_every == 0]
    train = [f for f in range(n_views) if f not in holdout]

    synth_scene = SyntheticScene(
        n_categories=k,
        category_vectors=cat_vecs,
        scene=scene,
        frames=frames,
        category_bitmaps=category_bitmaps,
        part_bitmaps=part_bitmaps,
        images=images,
        corruption=corruption,
        gaussian_categories=cats,
        train_frames=train,
        holdout_frames=holdout,
    )
    if out_root is not None:
        save_dataset(out_root, ds, images=images)
        # annotate split in the manifest
        from .feature_store.io import load_json

        man_path = os.path.join(out_root, "manifest.json")
        manifest = load_json(man_path)
        for rec in manifest["frames"]:
            rec["split"] = "holdout" if rec["frame_id"] in holdout else "train"
        dump_json(man_path, manifest)
        save_scene(os.path.join(out_root, "scene_gt"), scene)
        save_query_set(
            os.path.join(out_root, "queries"),
            QuerySet(
                phrases=tuple(f"category_{c + 1}" for c in range(k)),
                embeddings=cat_vecs,
            ),
        )
        gt = {
            "n_categories": k,
            "labels": gt_labels,
            "gaussian_categories": cats.tolist(),
            "category_maps": {
                str(fid): [rle_encode(bm)[0] for bm in category_bitmaps[fid]]
                for fid in range(n_views)
            },
            "train_frames": train,
            "holdout_frames": holdout,
        }
        dump_json(os.path.join(out_root, "ground_truth.json"), gt)
    return synth_scene


def consistency_score(features_by_category):
    """Mean pairwise cosine within categories and across categories.

    `features_by_category` maps category -> (n_c, d) arrays of unit rows.
    """
    cats = sorted(features_by_category)
    groups = [np.asarray(features_by_category[c], dtype=np.float64) for c in cats]
    intra_sum, intra_n = 0.0, 0
    for g in groups:
        if len(g) >= 2:
            S = g @ g.T
            iu = np.triu_indices(len(g), 1)
            intra_sum += S[iu].sum()
            intra_n += len(iu[0])
    inter_sum, inter_n = 0.0, 0
    for i in range(len(groups)):
        for j in range(i + 1, len(groups)):
            S = groups[i] @ groups[j].T
            inter_sum += S.sum()
            inter_n += S.size
    if intra_n == 0 and inter_n == 0:
        raise EmptyPairSet("no category holds two features and no cross pair exists")
    intra = intra_sum / intra_n if intra_n else float("nan")
    inter = inter_sum / inter_n if inter_n else float("nan")
    return intra, inter
