"""Command-line pipeline driver.

Subcommands compose the stage modules; every run writes its resolved
configuration next to its outputs, and stage artifacts live under
<root>/stages/<config-hash>/ so runs with different settings never mix.
Heavy imports happen inside handlers so thread caps apply before numpy
loads its BLAS.
"""
import argparse
import json
import os
import sys


def _apply_threads(threads):
    if threads and threads > 0:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(threads)


def _load_config(args):
    from .config import PipelineConfig, load_config

    cfg = load_config(args.config) if args.config else PipelineConfig()
    for name in ("seed", "threads"):
        v = getattr(args, name, None)
        if v is not None:
            setattr(cfg, name, v)
    return cfg


def _snapshot(cfg, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    cfg.save(os.path.join(out_dir, "resolved_config.json"))


def _common(p):
    p.add_argument("--config", help="pipeline config JSON; defaults apply otherwise")
    p.add_argument("--seed", type=int, help="override config seed")
    p.add_argument("--threads", type=int,
                   default=int(os.environ.get("SEMSPLAT_THREADS", "0")),
                   help="cap BLAS worker threads (env SEMSPLAT_THREADS)")


def cmd_synth(args):
    cfg = _load_config(args)
    from .synth import CorruptionSpec, generate

    sc = cfg.synth
    corr = CorruptionSpec(
        occlusion_rate=args.occlusion if args.occlusion is not None else sc.occlusion,
        blur_mix=args.blur_mix if args.blur_mix is not None else sc.blur_mix,
        view_rot_deg=args.view_rot if args.view_rot is not None else sc.view_rot_deg,
        seed=cfg.seed,
    )
    generate(
        args.out,
        k=args.k or sc.k,
        n_views=args.views or sc.views,
        resolution=args.resolution or sc.resolution,
        corruption=corr,
        seed=cfg.seed,
        dim=sc.dim,
        feature_dim=sc.feature_dim,
        n_gaussians=args.gaussians or sc.gaussians,
        backdrop=sc.backdrop if args.backdrop is None else args.backdrop,
        holdout_every=sc.holdout_every,
    )
    _snapshot(cfg, args.out)
    print(f"dataset written to {args.out}")
    return 0


def _open_dataset(root):
    from .feature_store import load_dataset

    ds, warnings = load_dataset(root)
    for w in warnings:
        print(f"warning: {w}", file=sys.stderr)
    return ds, warnings


def cmd_associate(args):
    cfg = _load_config(args)
    from .pipeline import run_associate, stage_dir

    ds, warnings = _open_dataset(args.root)
    out = stage_dir(args.root, cfg, "associate", create=True)
    run_associate(ds, cfg, out_dir=out)
    with open(os.path.join(out, "stats.json")) as fh:
        stats = json.load(fh)
    stats["load_warnings"] = len(warnings)
    from .feature_store.io import dump_json

    dump_json(os.path.join(out, "stats.json"), stats)
    _snapshot(cfg, out)
    print(f"associate artifacts in {out}")
    return 0


def cmd_train_codebook(args):
    cfg = _load_config(args)
    from .pipeline import run_train_codebook, stage_dir

    ds, _ = _open_dataset(args.root)
    out = stage_dir(args.root, cfg, "codebook", create=True)
    run_train_codebook(ds, cfg, out_dir=out)
    _snapshot(cfg, out)
    print(f"codebooks in {out}")
    return 0


def cmd_index(args):
    cfg = _load_config(args)
    from .pipeline import dataset_split, run_index_maps, stage_dir

    ds, _ = _open_dataset(args.root)
    train_ids, _ = dataset_split(ds)
    out = stage_dir(args.root, cfg, "index", create=True)
    run_index_maps(ds, cfg, out_dir=out, frame_ids=train_ids)
    _snapshot(cfg, out)
    print(f"index maps in {out}")
    return 0


def cmd_train_field(args):
    cfg = _load_config(args)
    from .pipeline import run_train_field, stage_dir

    ds, _ = _open_dataset(args.root)
    out = stage_dir(args.root, cfg, "field", create=True)
    run_train_field(ds, cfg, out_dir=out)
    _snapshot(cfg, out)
    print(f"field checkpoints in {out}")
    return 0


def _load_field_bundle(ds, cfg):
    from .pipeline import load_codebooks, load_field

    scene, fields2 = load_field(ds, cfg)
    books = load_codebooks(ds, cfg)
    return scene, {
        scale: (fields2[scale][0], fields2[scale][1], books[scale])
        for scale in fields2
    }


def cmd_render(args):
    cfg = _load_config(args)
    import numpy as np
    from PIL import Image

    from .pipeline import stage_dir
    from .splat import render

    ds, _ = _open_dataset(args.root)
    scene, fields = _load_field_bundle(ds, cfg)
    out = stage_dir(args.root, cfg, "render", create=True)
    for frame in ds.frames:
        res = render(scene, frame.camera, frame.width, frame.height, save_state=False)
        img = np.clip(res.color * 255.0, 0, 255).astype(np.uint8)
        Image.fromarray(img).save(os.path.join(out, f"color_{frame.frame_id:04d}.png"))
        for scale, (features, _, _) in fields.items():
            fres = render(
                scene.with_features(features), frame.camera, frame.width,
                frame.height, save_state=False,
            )
            np.save(
                os.path.join(out, f"feature_{scale}_{frame.frame_id:04d}.npy"),
                fres.feature,
            )
    _snapshot(cfg, out)
    print(f"renders in {out}")
    return 0


def cmd_query(args):
    cfg = _load_config(args)
    import numpy as np

    from .evalkit import save_heatmap_png
    from .feature_store import load_query_set
    from .pipeline import stage_dir
    from .query import relevance_map
    from .semantic_field import decode, refine_pixel_features
    from .splat import build_feature_plan

    ds, _ = _open_dataset(args.root)
    scene, fields = _load_field_bundle(ds, cfg)
    qs = load_query_set(args.queries or os.path.join(args.root, "queries"))
    out = stage_dir(args.root, cfg, "query", create=True)
    for frame in ds.frames:
        maps = []
        for scale, (features, decoder, book) in fields.items():
            plan = build_feature_plan(
                scene.with_features(features), frame.camera, frame.width, frame.height
            )
            _, probs = decode(plan.render_features(features), decoder)
            refined = refine_pixel_features(probs, book)
            maps.append(relevance_map(refined, args.phrase, qs, scale=scale))
        fused = np.maximum.reduce([m.grid for m in maps])
        save_heatmap_png(
            os.path.join(out, f"relevance_{args.phrase}_{frame.frame_id:04d}.png"),
            fused,
        )
        np.save(
            os.path.join(out, f"relevance_{args.phrase}_{frame.frame_id:04d}.npy"),
            fused,
        )
    _snapshot(cfg, out)
    print(f"relevance maps in {out}")
    return 0


def cmd_segment(args):
    cfg = _load_config(args)
    import numpy as np

    from .evalkit import save_mask_png
    from .feature_store import load_query_set
    from .pipeline import stage_dir
    from .query import relevance_map, segment
    from .semantic_field import decode, refine_pixel_features
    from .splat import build_feature_plan

    ds, _ = _open_dataset(args.root)
    scene, fields = _load_field_bundle(ds, cfg)
    qs = load_query_set(args.queries or os.path.join(args.root, "queries"))
    out = stage_dir(args.root, cfg, "segment", create=True)
    threshold = args.threshold if args.threshold is not None else cfg.query.segment_threshold
    for frame in ds.frames:
        maps = []
        for scale, (features, decoder, book) in fields.items():
            plan = build_feature_plan(
                scene.with_features(features), frame.camera, frame.width, frame.height
            )
            _, probs = decode(plan.render_features(features), decoder)
            refined = refine_pixel_features(probs, book)
            maps.append(relevance_map(refined, args.phrase, qs, scale=scale))
        mask = segment(maps, threshold=threshold)
        save_mask_png(
            os.path.join(out, f"mask_{args.phrase}_{frame.frame_id:04d}.png"), mask
        )
    _snapshot(cfg, out)
    print(f"segmentation masks in {out}")
    return 0


def cmd_edit(args):
    cfg = _load_config(args)
    from .errors import EmptySelection
    from .feature_store import load_query_set
    from .feature_store.io import dump_json
    from .pipeline import load_codebooks, stage_dir
    from .query import select_and_edit
    from .splat import save_scene

    ds, _ = _open_dataset(args.root)
    scene, fields = _load_field_bundle(ds, cfg)
    books = load_codebooks(ds, cfg)
    qs = load_query_set(args.queries or os.path.join(args.root, "queries"))
    scale = args.scale
    features, decoder, book = fields[scale]
    out = stage_dir(args.root, cfg, "edit", create=True)
    color = None
    if args.op == "recolor":
        color = [float(x) for x in args.color.split(",")]
    try:
        edited, selection = select_and_edit(
            scene.with_features(features), args.phrase, qs, args.op,
            book, decoder, threshold=args.threshold, color=color,
        )
    except EmptySelection as exc:
        dump_json(
            os.path.join(out, f"selection_{args.phrase}.json"),
            {"phrase": args.phrase, "indices": [], "empty": True, "reason": str(exc)},
        )
        print(f"empty selection: {exc}", file=sys.stderr)
        _snapshot(cfg, out)
        return 0
    dump_json(
        os.path.join(out, f"selection_{args.phrase}.json"),
        {
            "phrase": args.phrase,
            "indices": selection.indices.tolist(),
            "categories": selection.categories.tolist(),
            "confidences": selection.confidences.tolist(),
            "empty": False,
        },
    )
    save_scene(os.path.join(out, f"scene_{args.op}_{args.phrase}"), edited)
    _snapshot(cfg, out)
    print(f"edited scene in {out}")
    return 0


def cmd_eval(args):
    cfg = _load_config(args)
    import numpy as np

    from .evalkit import (
        EvalReport,
        evaluate_holdout,
        load_ground_truth_maps,
        save_heatmap_png,
        save_mask_png,
        save_overlay_png,
        write_metrics_csv,
    )
    from .feature_store import load_query_set
    from .pipeline import dataset_split, stage_dir

    ds, _ = _open_dataset(args.root)
    scene, fields = _load_field_bundle(ds, cfg)
    qs = load_query_set(os.path.join(args.root, "queries"))
    _, gt_maps = load_ground_truth_maps(args.root)
    _, holdout = dataset_split(ds)
    view_ids = holdout or [f.frame_id for f in ds.frames]
    ious, m, preds, rels = evaluate_holdout(ds, scene, fields, qs, gt_maps, view_ids)
    out = os.path.join(stage_dir(args.root, cfg, "eval", create=True), "report")
    os.makedirs(os.path.join(out, "overlays"), exist_ok=True)
    os.makedirs(os.path.join(out, "heatmaps"), exist_ok=True)
    report = EvalReport(per_query_iou=ious, miou=m, config_hash=cfg.hash())
    write_metrics_csv(report, os.path.join(out, "metrics.csv"))
    from PIL import Image

    for vi, fid in enumerate(view_ids):
        frame = ds.frame_by_id(fid)
        img_path = os.path.join(args.root, frame.image_path or "")
        img = (
            np.asarray(Image.open(img_path).convert("RGB"))
            if frame.image_path and os.path.exists(img_path)
            else np.zeros((frame.height, frame.width, 3), dtype=np.uint8)
        )
        for qi, phrase in enumerate(qs.phrases):
            save_overlay_png(
                os.path.join(out, "overlays", f"{phrase}_{fid:04d}.png"),
                img, preds[vi][qi],
            )
            save_heatmap_png(
                os.path.join(out, "heatmaps", f"{phrase}_{fid:04d}.png"),
                rels[vi][..., qi],
            )
    _snapshot(cfg, out)
    print(f"mIoU {m:.4f}; report in {out}")
    return 0


def cmd_ablate(args):
    cfg = _load_config(args)
    from .evalkit import run_ablation
    from .pipeline import stage_dir

    ds, _ = _open_dataset(args.root)
    out = os.path.join(stage_dir(args.root, cfg, "ablate", create=True), "report")
    reports = run_ablation(ds, cfg, out_dir=out)
    for variant, rep in reports.items():
        print(f"{variant:10s} mIoU {rep.miou:.4f}")
    _snapshot(cfg, out)
    print(f"ablation report in {out}")
    return 0


def build_parser():
    p = argparse.ArgumentParser(
        prog="semsplat",
        description="3D Gaussian semantic fields with contrastive codebook learning",
    )
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("synth", help="generate a synthetic dataset")
    _common(sp)
    sp.add_argument("--out", required=True)
    sp.add_argument("--k", type=int)
    sp.add_argument("--views", type=int)
    sp.add_argument("--resolution", type=int)
    sp.add_argument("--gaussians", type=int)
    sp.add_argument("--occlusion", type=float)
    sp.add_argument("--blur-mix", type=float, dest="blur_mix")
    sp.add_argument("--view-rot", type=float, dest="view_rot")
    sp.add_argument("--backdrop", action=argparse.BooleanOptionalAction, default=None)
    sp.set_defaults(func=cmd_synth)

    for name, fn, extra in (
        ("associate", cmd_associate, ()),
        ("train-codebook", cmd_train_codebook, ()),
        ("index", cmd_index, ()),
        ("train-field", cmd_train_field, ()),
        ("render", cmd_render, ()),
        ("eval", cmd_eval, ()),
        ("ablate", cmd_ablate, ()),
    ):
        q = sub.add_parser(name, help=f"{name} stage")
        _common(q)
        q.add_argument("--root", required=True, help="dataset root directory")
        q.set_defaults(func=fn)

    q = sub.add_parser("query", help="relevance heatmaps for a phrase")
    _common(q)
    q.add_argument("--root", required=True)
    q.add_argument("--phrase", required=True)
    q.add_argument("--queries", help="query set path prefix (default <root>/queries)")
    q.set_defaults(func=cmd_query)

    q = sub.add_parser("segment", help="thresholded segmentation for a phrase")
    _common(q)
    q.add_argument("--root", required=True)
    q.add_argument("--phrase", required=True)
    q.add_argument("--queries")
    q.add_argument("--threshold", type=float)
    q.set_defaults(func=cmd_segment)

    q = sub.add_parser("edit", help="select Gaussians by phrase and edit the scene")
    _common(q)
    q.add_argument("--root", required=True)
    q.add_argument("--phrase", required=True)
    q.add_argument("--op", choices=("extract", "delete", "recolor"), required=True)
    q.add_argument("--queries")
    q.add_argument("--scale", default="wp", choices=("sp", "wp"))
    q.add_argument("--threshold", type=float)
    q.add_argument("--color", default="1,0,0", help="recolor target as r,g,b")
    q.set_defaults(func=cmd_edit)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    _apply_threads(args.threads)
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - single reporting point for stage failures
        record = {"error": type(exc).__name__, "message": str(exc)}
        print(json.dumps(record), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
