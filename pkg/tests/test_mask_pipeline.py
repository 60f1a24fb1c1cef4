import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from semsplat.errors import MissingArtifact, ShapeError
from semsplat.mask_pipeline import (
    CandidateMask,
    PropagatedMaskSet,
    associate_frame,
    erode_disk,
    filter_masks,
    iou,
    merge_scales,
    oracle_propagate,
)
from semsplat.feature_store import Mask, rle_encode


def _cand(bitmap, pred_iou=0.95, stability=0.95, scale="part"):
    return CandidateMask(
        bitmap=np.asarray(bitmap, dtype=bool), pred_iou=pred_iou,
        stability=stability, source_scale=scale,
    )


def _rand_cands(rng, n, h=12, w=12):
    out = []
    for _ in range(n):
        bm = rng.random((h, w)) < rng.uniform(0.1, 0.6)
        if not bm.any():
            bm[rng.integers(h), rng.integers(w)] = True
        out.append(
            _cand(bm, pred_iou=float(rng.uniform(0.89, 1.0)),
                  stability=float(rng.uniform(0.91, 1.0)))
        )
    return out


def _mask_from_bitmap(bm, mask_id=0, frame_id=0, label=-1):
    counts, h, w = rle_encode(bm)
    return Mask(mask_id=mask_id, frame_id=frame_id, scale="wp",
                rle_counts=counts, height=h, width=w,
                pred_iou=0.95, stability=0.95, label=label)


class TestMergeScales:
    def test_empty(self):
        assert merge_scales([], [], []) == ([], [])

    def test_counts(self):
        rng = np.random.default_rng(0)
        sub, part, whole = _rand_cands(rng, 2), _rand_cands(rng, 3), _rand_cands(rng, 1)
        sp, wp = merge_scales(sub, part, whole)
        assert len(sp) == 5 and len(wp) == 4

    def test_duplicates_survive_untouched(self):
        rng = np.random.default_rng(1)
        part = _rand_cands(rng, 4)
        sub = [part[0], part[1]]
        sp, wp = merge_scales(sub, part, [])
        assert len(sp) == 6 and len(wp) == 4
        assert sp[0] is sub[0] and sp[2] is part[0]

    def test_shape_mismatch(self):
        a = _cand(np.ones((4, 4), dtype=bool))
        b = _cand(np.ones((5, 4), dtype=bool))
        with pytest.raises(ShapeError):
            merge_scales([a], [b], [])


class TestIou:
    def test_identical(self):
        bm = np.zeros((4, 4), dtype=bool)
        bm[1:3, 1:3] = True
        assert iou(bm, bm) == 1.0

    def test_disjoint(self):
        a = np.zeros((4, 4), dtype=bool)
        b = np.zeros((4, 4), dtype=bool)
        a[0], b[2] = True, True
        assert iou(a, b) == 0.0

    def test_both_empty_is_zero(self):
        z = np.zeros((3, 3), dtype=bool)
        assert iou(z, z) == 0.0

    def test_pixel_count_case(self):
        a = np.zeros((4, 4), dtype=bool)
        b = np.zeros((4, 4), dtype=bool)
        a[0:2] = True
        b[1:3] = True
        assert iou(a, b) == pytest.approx(4.0 / 12.0)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            iou(np.ones((2, 2), dtype=bool), np.ones((3, 2), dtype=bool))

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_symmetry(self, seed):
        rng = np.random.default_rng(seed)
        a = rng.random((6, 6)) < 0.5
        b = rng.random((6, 6)) < 0.5
        assert iou(a, b) == iou(b, a)


class TestFilterMasks:
    def test_single_above_thresholds(self):
        bm = np.zeros((6, 6), dtype=bool)
        bm[1:4, 1:4] = True
        out = filter_masks([_cand(bm, 0.9, 0.9)])
        assert len(out) == 1
        assert np.array_equal(out[0].bitmap(), bm)

    def test_identical_pair_keeps_higher_score(self):
        bm = np.zeros((6, 6), dtype=bool)
        bm[2:5, 2:5] = True
        out = filter_masks(
            [_cand(bm, 0.9, 0.9), _cand(bm, 0.89, 0.91)], max_overlap=0.5
        )
        assert len(out) == 1
        assert out[0].pred_iou == 0.9

    def test_below_threshold_dropped(self):
        bm = np.ones((4, 4), dtype=bool)
        assert filter_masks([_cand(bm, pred_iou=0.5)]) == []
        assert filter_masks([_cand(bm, stability=0.5)]) == []

    def test_empty_input(self):
        assert filter_masks([]) == []

    def test_random_candidates_disjoint_and_sorted(self):
        rng = np.random.default_rng(7)
        cands = _rand_cands(rng, 50)
        out = filter_masks(cands, min_pred_iou=0.0, min_stability=0.0)
        bitmaps = [m.bitmap() for m in out]
        # pairwise disjoint
        for i in range(len(bitmaps)):
            for j in range(i + 1, len(bitmaps)):
                assert not np.logical_and(bitmaps[i], bitmaps[j]).any()
        # greedy order follows the brute-force score sort
        scores = [m.pred_iou * m.stability for m in out]
        assert scores == sorted(scores, reverse=True)
        # every output is a subset of some candidate with matching scores
        for m in out:
            src = [
                c for c in cands
                if c.pred_iou == m.pred_iou and c.stability == m.stability
            ]
            assert any(
                not np.logical_and(m.bitmap(), ~c.bitmap).any() for c in src
            )


class TestAssociateFrame:
    def test_identical_to_propagated(self):
        rng = np.random.default_rng(0)
        bm = rng.random((8, 8)) < 0.4
        bm[0, 0] = True
        props = [np.zeros((8, 8), dtype=bool)] * 2 + [bm] + [np.zeros((8, 8), dtype=bool)]
        prop = PropagatedMaskSet(frame_id=0, bitmaps=tuple(props))
        out = associate_frame([_mask_from_bitmap(bm)], prop)
        assert out[0].label == 3

    def test_iou_at_threshold_is_unlabeled(self):
        # 0.4 < 0.5 stays unlabeled; the threshold must be exceeded
        a = np.zeros((10, 1), dtype=bool)
        b = np.zeros((10, 1), dtype=bool)
        a[:4] = True      # 4 px
        b[:10] = True     # 10 px, iou = 0.4
        prop = PropagatedMaskSet(frame_id=0, bitmaps=(b,))
        out = associate_frame([_mask_from_bitmap(a)], prop, threshold=0.5)
        assert out[0].label == -1

    def test_exactly_half_not_exceeded(self):
        a = np.zeros((4, 1), dtype=bool)
        b = np.zeros((4, 1), dtype=bool)
        a[:2] = True
        b[:4] = True      # iou exactly 0.5 -> not exceeded
        prop = PropagatedMaskSet(frame_id=0, bitmaps=(b,))
        assert associate_frame([_mask_from_bitmap(a)], prop)[0].label == -1

    def test_no_categories_all_unlabeled(self):
        bm = np.ones((4, 4), dtype=bool)
        prop = PropagatedMaskSet(frame_id=0, bitmaps=())
        assert associate_frame([_mask_from_bitmap(bm)], prop)[0].label == -1

    def test_matches_brute_force_argmax(self):
        rng = np.random.default_rng(11)
        K = 5
        props = []
        for _ in range(K):
            bm = rng.random((16, 16)) < 0.3
            bm[rng.integers(16), rng.integers(16)] = True
            props.append(bm)
        masks = []
        for i in range(20):
            bm = rng.random((16, 16)) < 0.3
            bm[rng.integers(16), rng.integers(16)] = True
            masks.append(_mask_from_bitmap(bm, mask_id=i))
        prop = PropagatedMaskSet(frame_id=0, bitmaps=tuple(props))
        out = associate_frame(masks, prop)
        for m_in, m_out in zip(masks, out):
            bm = m_in.bitmap()
            ious = [iou(bm, p) for p in props]
            best = int(np.argmax(ious)) + 1 if max(ious) > 0.5 else -1
            assert m_out.label == best

    def test_order_invariance_with_tie_break(self):
        rng = np.random.default_rng(2)
        bm = rng.random((8, 8)) < 0.5
        bm[0, 0] = True
        # two identical propagated masks tie; lowest category index wins
        prop = PropagatedMaskSet(frame_id=0, bitmaps=(bm.copy(), bm.copy()))
        out = associate_frame([_mask_from_bitmap(bm)], prop)
        assert out[0].label == 1


class TestOraclePropagate:
    def _scene(self):
        from semsplat.synth import generate

        return generate(None, k=3, n_views=3, resolution=32, seed=5, n_gaussians=120)

    def test_clean_equals_ground_truth(self):
        scene = self._scene()
        prop = oracle_propagate(scene, 1)
        for got, want in zip(prop.bitmaps, scene.category_bitmaps[1]):
            assert np.array_equal(got, want)

    def test_zero_erosion_identity(self):
        scene = self._scene()
        a = oracle_propagate(scene, 0, erosion_radius=0)
        b = oracle_propagate(scene, 0)
        for x, y in zip(a.bitmaps, b.bitmaps):
            assert np.array_equal(x, y)

    def test_erosion_strict_subset_of_disk(self):
        yy, xx = np.mgrid[0:32, 0:32]
        disk = (xx - 16) ** 2 + (yy - 16) ** 2 <= 10**2
        eroded = erode_disk(disk, 2)
        assert eroded.sum() > 0
        assert eroded.sum() < disk.sum()
        assert not np.logical_and(eroded, ~disk).any()
        # morphology oracle: erosion by r keeps exactly the pixels whose
        # r-disk neighborhood lies inside the mask
        inner = (xx - 16) ** 2 + (yy - 16) ** 2 <= 8**2
        manual = np.zeros_like(disk)
        for y in range(32):
            for x in range(32):
                if not disk[y, x]:
                    continue
                ok = True
                for dy in range(-2, 3):
                    for dx in range(-2, 3):
                        if dx * dx + dy * dy <= 4:
                            yj, xj = y + dy, x + dx
                            if not (0 <= yj < 32 and 0 <= xj < 32 and disk[yj, xj]):
                                ok = False
                if ok:
                    manual[y, x] = True
        assert np.array_equal(eroded, manual)

    def test_unknown_frame(self):
        scene = self._scene()
        with pytest.raises(MissingArtifact):
            oracle_propagate(scene, 99)
