"""Target encoding, NMS and box decoding, incl. the lossless round trip."""

import numpy as np
import pytest

from centerseg import rng
from centerseg.codec import (
    BBox,
    Detection,
    GaussianSpec,
    decode_boxes,
    encode_targets,
    gaussian_radius,
    nms_maxpool,
)
from centerseg.fileio import DataFormatError, read_boxes_csv, write_boxes_csv
from centerseg.fmap import FeatureMap
from centerseg.oracles import oracle_min_shift_iou, oracle_radius
from centerseg.synth import random_boxes


class TestGaussianRadius:
    def test_iou_near_one_kills_radius(self):
        for w, h in [(2, 2), (17, 5), (64, 64)]:
            assert gaussian_radius(w, h, 0.999) == 0

    def test_unit_box(self):
        assert gaussian_radius(1, 1, 0.7) == 0

    def test_tracks_exhaustive_oracle_at_24(self):
        formula = gaussian_radius(24, 24, 0.7)
        exhaustive = oracle_radius(24, 24, 0.7)
        assert abs(formula - exhaustive) <= 2
        # every shift inside the formula radius keeps a healthy IOU floor
        assert oracle_min_shift_iou(24, 24, formula) >= 0.7

    def test_monotone_in_box_size(self):
        radii = [gaussian_radius(s, s, 0.7) for s in (4, 8, 16, 32, 64)]
        assert radii == sorted(radii)

    def test_rejects_bad_inputs(self):
        with pytest.raises(ValueError):
            gaussian_radius(0.5, 3, 0.7)
        with pytest.raises(ValueError):
            gaussian_radius(3, 3, 1.0)


class TestGaussianSpec:
    def test_sigma_is_third_of_radius_with_floor(self):
        assert GaussianSpec.from_radius((0, 0), 6).sigma == pytest.approx(2.0)
        assert GaussianSpec.from_radius((0, 0), 0).sigma == pytest.approx(1.0 / 3.0)

    def test_rejects_inconsistent_sigma(self):
        with pytest.raises(ValueError):
            GaussianSpec((0, 0), 6, 1.0)


class TestEncodeTargets:
    def test_grid_aligned_box_has_zero_offset_and_unit_peak(self):
        t = encode_targets([BBox(16.0, 8.0, 12.0, 10.0)], 64, 64, n=4)
        assert t.centers == [(2, 4, 0)]
        assert t.heatmap.data[0, 2, 4] == 1.0
        assert t.offset_map.data[0, 2, 4] == 0.0
        assert t.offset_map.data[1, 2, 4] == 0.0
        assert t.wh_map.data[0, 2, 4] == pytest.approx(3.0)
        assert t.wh_map.data[1, 2, 4] == pytest.approx(2.5)

    def test_quarter_cell_offset(self):
        # cu = 9, n = 4: 9/4 = 2.25 -> cell 2, offset 0.25
        t = encode_targets([BBox(9.0, 8.0, 8.0, 8.0)], 64, 64, n=4)
        (qv, qu, idx) = t.centers[0]
        assert (qv, qu, idx) == (2, 2, 0)
        assert t.offset_map.data[0, qv, qu] == pytest.approx(0.25)
        assert t.offset_map.data[1, qv, qu] == pytest.approx(0.0)

    def test_distant_blobs_do_not_interact(self):
        one = encode_targets([BBox(20, 20, 16, 16)], 256, 256, n=4)
        two = encode_targets([BBox(20, 20, 16, 16), BBox(200, 200, 16, 16)], 256, 256, n=4)
        np.testing.assert_array_equal(one.heatmap.data[0, :20, :20], two.heatmap.data[0, :20, :20])

    def test_collision_reported_and_later_box_wins(self):
        t = encode_targets([BBox(16, 16, 8, 8), BBox(17, 16, 20, 24)], 64, 64, n=4)
        assert t.collisions == 1
        assert len(t.centers) == 2
        assert t.wh_map.data[0, 4, 4] == pytest.approx(5.0)
        assert t.wh_map.data[1, 4, 4] == pytest.approx(6.0)

    def test_heatmap_range_and_exact_peaks(self):
        boxes = random_boxes(99, 256, 256, 4, 20)
        t = encode_targets(boxes, 256, 256, n=4)
        assert t.heatmap.data.min() >= 0.0
        assert t.heatmap.data.max() <= 1.0
        for qv, qu, _ in t.centers:
            assert t.heatmap.data[0, qv, qu] == 1.0

    def test_offsets_stay_in_half_cell(self):
        boxes = random_boxes(5, 512, 512, 4, 30)
        t = encode_targets(boxes, 512, 512, n=4)
        for qv, qu, _ in t.centers:
            assert -0.5 <= t.offset_map.data[0, qv, qu] <= 0.5
            assert -0.5 <= t.offset_map.data[1, qv, qu] <= 0.5

    def test_blob_is_radially_symmetric(self):
        t = encode_targets([BBox(128, 128, 96, 96)], 256, 256, n=4)
        plane = t.heatmap.data[0]
        qv, qu, _ = t.centers[0]
        for dv, du in [(0, 1), (1, 0), (1, 1), (2, 1)]:
            quad = [plane[qv + dv, qu + du], plane[qv + dv, qu - du],
                    plane[qv - dv, qu + du], plane[qv - dv, qu - du]]
            assert max(quad) - min(quad) == 0.0
        # value depends only on squared distance: (1,2) vs (2,1)
        assert plane[qv + 1, qu + 2] == plane[qv + 2, qu + 1]

    def test_center_outside_image_rejected(self):
        with pytest.raises(ValueError):
            encode_targets([BBox(300.0, 8.0, 4.0, 4.0)], 64, 64, n=4)


class TestNmsMaxpool:
    def test_constant_map_all_retained(self):
        fm = FeatureMap(np.full((1, 5, 7), 0.4, np.float32))
        np.testing.assert_array_equal(nms_maxpool(fm).data, fm.data)

    def test_isolated_peak_survives_alone(self):
        plane = np.zeros((1, 7, 7), np.float32)
        plane[0, 3, 3] = 1.0
        plane[0, 3, 4] = 0.6
        plane[0, 2, 2] = 0.3
        out = nms_maxpool(FeatureMap(plane)).data[0]
        assert out[3, 3] == 1.0
        assert out[3, 4] == 0.0
        assert out[2, 2] == 0.0

    def test_matches_brute_force_neighborhood_scan(self):
        g = rng.stream(7, "nms")
        plane = g.random((9, 11)).astype(np.float32)
        out = nms_maxpool(FeatureMap(plane[None])).data[0]
        h, w = plane.shape
        for v in range(h):
            for u in range(w):
                neigh = plane[max(0, v - 1) : v + 2, max(0, u - 1) : u + 2]
                expect = plane[v, u] if plane[v, u] == neigh.max() else 0.0
                assert out[v, u] == expect

    def test_idempotent(self):
        g = rng.stream(8, "nms")
        fm = FeatureMap(g.random((1, 12, 12)).astype(np.float32))
        once = nms_maxpool(fm)
        twice = nms_maxpool(once)
        np.testing.assert_array_equal(once.data, twice.data)

    def test_multichannel_rejected(self):
        with pytest.raises(ValueError):
            nms_maxpool(FeatureMap(np.zeros((2, 3, 3), np.float32)))


class TestDecodeBoxes:
    def test_empty_heatmap_decodes_empty(self):
        heat = FeatureMap(np.zeros((1, 8, 8), np.float32))
        pair = FeatureMap(np.zeros((2, 8, 8), np.float32))
        assert decode_boxes(heat, pair, pair) == []

    def test_equal_scores_order_row_col(self):
        heat = np.zeros((1, 8, 8), np.float32)
        heat[0, 5, 1] = 0.8
        heat[0, 2, 6] = 0.8
        wh = np.full((2, 8, 8), 1.0, np.float32)
        off = np.zeros((2, 8, 8), np.float32)
        dets = decode_boxes(FeatureMap(heat), FeatureMap(wh), FeatureMap(off), n=4)
        assert len(dets) == 2
        assert (dets[0].box.cv, dets[0].box.cu) == (8.0, 24.0)  # row 2 first
        assert (dets[1].box.cv, dets[1].box.cu) == (20.0, 4.0)

    def test_shape_mismatch_rejected(self):
        heat = FeatureMap(np.zeros((1, 8, 8), np.float32))
        pair = FeatureMap(np.zeros((2, 8, 9), np.float32))
        with pytest.raises(ValueError):
            decode_boxes(heat, pair, pair)

    def test_round_trip_recovers_boxes(self):
        for seed in range(10):
            boxes = random_boxes(seed, 512, 512, 4, int(rng.stream(seed).integers(1, 31)))
            t = encode_targets(boxes, 512, 512, n=4)
            dets = decode_boxes(t.heatmap, t.wh_map, t.offset_map, n=4, score_thresh=0.05)
            assert len(dets) == len(boxes)
            for det in dets:
                assert det.score == 1.0
                src = min(
                    boxes,
                    key=lambda b: abs(b.cu - det.box.cu) + abs(b.cv - det.box.cv),
                )
                assert abs(det.box.cu - src.cu) < 1e-4
                assert abs(det.box.cv - src.cv) < 1e-4
                assert abs(det.box.w - src.w) < 1e-4
                assert abs(det.box.h - src.h) < 1e-4

    def test_sorted_by_score_and_capped_at_top_k(self):
        g = rng.stream(17, "decode")
        heat = (g.random((1, 16, 16)) * 0.9).astype(np.float32)
        wh = np.full((2, 16, 16), 2.0, np.float32)
        off = np.zeros((2, 16, 16), np.float32)
        dets = decode_boxes(FeatureMap(heat), FeatureMap(wh), FeatureMap(off), n=4, top_k=5)
        assert len(dets) <= 5
        scores = [d.score for d in dets]
        assert scores == sorted(scores, reverse=True)

    def test_nonpositive_extent_dropped(self):
        heat = np.zeros((1, 8, 8), np.float32)
        heat[0, 4, 4] = 1.0
        wh = np.zeros((2, 8, 8), np.float32)  # zero size at the peak
        off = np.zeros((2, 8, 8), np.float32)
        assert decode_boxes(FeatureMap(heat), FeatureMap(wh), FeatureMap(off)) == []


class TestBoxesCsv:
    def test_round_trip_with_scores(self, tmp_path):
        rows = [("img1", Detection(BBox(1.5, 2.25, 3.0, 4.0), 0.75)),
                ("img2", Detection(BBox(10.0, 20.0, 30.0, 40.0), 1.0))]
        path = tmp_path / "boxes.csv"
        write_boxes_csv(path, rows)
        back = read_boxes_csv(path)
        assert back == rows

    def test_ground_truth_without_score(self, tmp_path):
        path = tmp_path / "gt.csv"
        write_boxes_csv(path, [("a", BBox(1, 2, 3, 4))], with_score=False)
        assert path.read_text().splitlines()[0] == "image_id,cu,cv,w,h"
        back = read_boxes_csv(path)
        assert back == [("a", BBox(1, 2, 3, 4))]

    def test_bad_header_reports_line(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("who,knows\n")
        with pytest.raises(DataFormatError, match="line 1"):
            read_boxes_csv(path)

    def test_bad_number_reports_line(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("image_id,cu,cv,w,h,score\nimg,1,2,x,4,0.5\n")
        with pytest.raises(DataFormatError, match="line 2"):
            read_boxes_csv(path)
