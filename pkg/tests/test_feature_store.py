import json
import os

import numpy as np
import pytest

from semsplat.errors import (
    CorruptFeature,
    DegenerateFeature,
    MissingArtifact,
    SchemaViolation,
)
from semsplat.feature_store import (
    CameraPose,
    Codebook,
    QuerySet,
    SemanticFeature,
    load_dataset,
    load_query_set,
    read_feature_bin,
    save_dataset,
    save_query_set,
    write_feature_bin,
)
from semsplat.synth import generate


@pytest.fixture(scope="module")
def dataset_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("ds") / "synthetic"
    generate(str(root), k=3, n_views=4, resolution=32, seed=11, n_gaussians=120)
    return str(root)


def test_feature_bin_round_trip(tmp_path):
    path = str(tmp_path / "f.bin")
    arr = np.random.default_rng(0).normal(size=(5, 8)).astype("<f4")
    write_feature_bin(path, arr)
    back = read_feature_bin(path, expect_dim=8)
    assert back.dtype == np.dtype("<f4")
    assert np.array_equal(back, arr)


def test_feature_bin_dim_mismatch(tmp_path):
    path = str(tmp_path / "f.bin")
    write_feature_bin(path, np.zeros((3, 256), dtype="<f4"))
    with pytest.raises(SchemaViolation):
        read_feature_bin(path, expect_dim=512)


def test_feature_bin_missing_file(tmp_path):
    with pytest.raises(MissingArtifact):
        read_feature_bin(str(tmp_path / "nope.bin"))


def test_load_synthetic_dataset(dataset_root):
    ds, warnings = load_dataset(dataset_root)
    assert warnings == []
    assert len(ds.frames) == 4
    assert ds.dim == 512
    for scale in ("sp", "wp"):
        assert len(ds.masks[scale]) == len(ds.features[scale])
        # deterministic ordering by (frame_id, mask_id)
        keys = [(m.frame_id, m.mask_id) for m in ds.masks[scale]]
        assert keys == sorted(keys)
        for f in ds.features[scale]:
            assert abs(np.linalg.norm(f.vector) - 1.0) < 1e-6


def test_round_trip_bit_exact(dataset_root, tmp_path):
    ds, _ = load_dataset(dataset_root)
    copy_root = str(tmp_path / "copy")
    save_dataset(copy_root, ds)
    for name in ("masks_sp.json", "masks_wp.json", "features_sp.bin",
                 "features_wp.bin", "poses.json"):
        with open(os.path.join(dataset_root, name), "rb") as fh:
            a = fh.read()
        with open(os.path.join(copy_root, name), "rb") as fh:
            b = fh.read()
        assert a == b, f"{name} not byte-identical after save(load(x))"


def test_empty_mask_list_frame_is_fine(tmp_path):
    root = str(tmp_path / "empty")
    generate(root, k=2, n_views=2, resolution=32, seed=1, n_gaussians=60)
    # drop every frame-1 mask to leave that frame empty
    for scale in ("sp", "wp"):
        path = os.path.join(root, f"masks_{scale}.json")
        with open(path) as fh:
            recs = json.load(fh)
        keep = [i for i, r in enumerate(recs) if r["frame_id"] == 0]
        from semsplat.feature_store.io import dump_json

        dump_json(path, [recs[i] for i in keep])
        raw = read_feature_bin(os.path.join(root, f"features_{scale}.bin"))
        write_feature_bin(os.path.join(root, f"features_{scale}.bin"), raw[keep])
    ds, _ = load_dataset(root)
    assert ds.masks_for(1, "wp") == []


def test_dim_mismatch_declared_vs_file(dataset_root, tmp_path):
    import shutil

    root = str(tmp_path / "bad")
    shutil.copytree(dataset_root, root)
    man_path = os.path.join(root, "manifest.json")
    with open(man_path) as fh:
        manifest = json.load(fh)
    manifest["dim"] = 256
    with open(man_path, "w") as fh:
        json.dump(manifest, fh)
    with pytest.raises(SchemaViolation):
        load_dataset(root)


def test_nan_feature_rejected(dataset_root, tmp_path):
    import shutil

    root = str(tmp_path / "nan")
    shutil.copytree(dataset_root, root)
    path = os.path.join(root, "features_wp.bin")
    raw = read_feature_bin(path).copy()
    raw[0, 0] = np.nan
    write_feature_bin(path, raw)
    with pytest.raises(CorruptFeature):
        load_dataset(root)


def test_missing_manifest(tmp_path):
    with pytest.raises(MissingArtifact):
        load_dataset(str(tmp_path))


def test_camera_pose_validation():
    K = np.array([[50.0, 0, 16], [0, 50.0, 16], [0, 0, 1]])
    CameraPose(intrinsics=K, world_to_camera=np.eye(4))
    with pytest.raises(SchemaViolation):
        CameraPose(intrinsics=-K, world_to_camera=np.eye(4))
    W = np.eye(4)
    W[0, 1] = 0.5  # not orthonormal
    with pytest.raises(SchemaViolation):
        CameraPose(intrinsics=K, world_to_camera=W)


def test_semantic_feature_normalizes_and_rejects():
    f = SemanticFeature(frame_id=0, mask_id=0, vector=np.array([3.0, 4.0]))
    assert np.allclose(f.vector, [0.6, 0.8])
    with pytest.raises(DegenerateFeature):
        SemanticFeature(frame_id=0, mask_id=1, vector=np.zeros(4))
    with pytest.raises(DegenerateFeature):
        SemanticFeature(frame_id=0, mask_id=2, vector=np.array([np.nan, 1.0]))


def test_codebook_needs_two_rows():
    with pytest.raises(SchemaViolation):
        Codebook(prototypes=np.ones((1, 4)))


def test_query_set_round_trip(tmp_path):
    qs = QuerySet(
        phrases=("mug", "plate"),
        embeddings=np.array([[2.0, 0.0], [0.0, 5.0]]),
    )
    assert np.allclose(np.linalg.norm(qs.embeddings, axis=1), 1.0)
    prefix = str(tmp_path / "queries")
    save_query_set(prefix, qs)
    back = load_query_set(prefix)
    assert back.phrases == qs.phrases
    assert np.allclose(back.embeddings, qs.embeddings, atol=1e-7)
