"""CLI subcommands: file round trips, exit codes, config handling, determinism."""

import shutil
import subprocess

import numpy as np
import pytest

from centerseg.cli import main
from centerseg.config import RunConfig, build_config, parse_config_file
from centerseg.fileio import read_boxes_csv, read_fmap, write_boxes_csv, write_fmap
from centerseg.fmap import FeatureMap


def _run(*argv) -> int:
    return main(list(argv))


def _synth(tmp_path, seed=5, **kw):
    out = tmp_path / f"scene{seed}"
    args = ["synth-gen", "--out-dir", str(out), "--seed", str(seed)]
    for key, val in kw.items():
        args += [f"--{key.replace('_', '-')}", str(val)]
    assert _run(*args) == 0
    return out


class TestConfigFile:
    def test_parse_and_override(self, tmp_path):
        cfg_file = tmp_path / "run.cfg"
        cfg_file.write_text("# comment\nn = 2\nscore_thresh = 0.2  # trailing\n")
        cfg = build_config(cfg_file, {"top_k": 7})
        assert cfg.n == 2
        assert cfg.score_thresh == 0.2
        assert cfg.top_k == 7
        assert cfg.min_iou == 0.7  # untouched default

    def test_unknown_key_rejected(self, tmp_path):
        cfg_file = tmp_path / "run.cfg"
        cfg_file.write_text("bogus = 3\n")
        with pytest.raises(ValueError, match="unknown config key"):
            parse_config_file(cfg_file)

    def test_invalid_value_rejected(self):
        with pytest.raises(ValueError):
            RunConfig(min_iou=1.5).validate()
        with pytest.raises(ValueError):
            RunConfig(beta_sample=5.0, k=3.0).validate()

    def test_help_documents_every_key(self, capsys):
        assert _run("--help") == 0
        text = capsys.readouterr().out
        for key in ("n", "min_iou", "top_k", "score_thresh", "mask_thresh",
                    "k", "beta_sample", "D", "seed", "focal_alpha", "focal_beta"):
            assert key in text


class TestExitCodes:
    def test_unknown_subcommand_is_usage_error(self, capsys):
        assert _run("frobnicate") == 2

    def test_missing_required_flag_is_usage_error(self, capsys):
        assert _run("decode") == 2

    def test_malformed_fmap_is_data_error(self, tmp_path, capsys):
        bad = tmp_path / "bad.fmap"
        bad.write_bytes(b"JUNKJUNKJUNKJUNKJUNKJUNK")
        code = _run("sample-points", "--mask", str(bad))
        assert code == 1
        assert "offset" in capsys.readouterr().err

    def test_unknown_config_key_is_usage_error(self, tmp_path, capsys):
        cfg = tmp_path / "c.cfg"
        cfg.write_text("mystery = 1\n")
        mask = tmp_path / "m.fmap"
        write_fmap(mask, FeatureMap(np.full((1, 8, 8), 0.5, np.float32)))
        assert _run("sample-points", "--mask", str(mask), "--config", str(cfg)) == 2


class TestEncodeDecodeRoundTrip:
    def test_csv_round_trip_within_tolerance(self, tmp_path):
        from centerseg.synth import random_boxes

        gt = tmp_path / "gt.csv"
        rows = [("imgA", b) for b in random_boxes(3, 256, 256, 4, 12)]
        rows += [("imgB", b) for b in random_boxes(4, 256, 256, 4, 5)]
        write_boxes_csv(gt, rows, with_score=False)

        maps_dir = tmp_path / "maps"
        assert _run("encode-gt", "--boxes", str(gt), "--image-h", "256",
                    "--image-w", "256", "--out-dir", str(maps_dir)) == 0
        assert sorted(p.name for p in maps_dir.glob("imgA_*")) == [
            "imgA_heatmap.fmap", "imgA_offset.fmap", "imgA_wh.fmap"]

        out_csv = tmp_path / "decoded.csv"
        assert _run("decode", "--maps-dir", str(maps_dir), "--out", str(out_csv)) == 0
        decoded = read_boxes_csv(out_csv)
        assert len(decoded) == len(rows)
        by_image = {}
        for image_id, det in decoded:
            by_image.setdefault(image_id, []).append(det)
        for image_id, boxes in [("imgA", rows[:12]), ("imgB", rows[12:])]:
            for _img, src in boxes:
                best = min(
                    by_image[image_id],
                    key=lambda d: abs(d.box.cu - src.cu) + abs(d.box.cv - src.cv),
                )
                for a, b in [(best.box.cu, src.cu), (best.box.cv, src.cv),
                             (best.box.w, src.w), (best.box.h, src.h)]:
                    assert abs(a - b) < 1e-4


class TestSamplePoints:
    def test_paper_grid_counts(self, tmp_path):
        mask = tmp_path / "m.fmap"
        write_fmap(mask, FeatureMap(np.full((1, 40, 40), 0.5, np.float32)))
        n_base = 40 * 40 // 8
        grid = [(1, 1.0), (1, 0.5), (3, 3.0), (3, 2.0), (3, 1.0), (3, 0.75), (5, 0.75), (10, 0.75)]
        for k, beta in grid:
            out = tmp_path / f"pts_{k}_{beta}.csv"
            assert _run("sample-points", "--mask", str(mask), "--k", str(k),
                        "--beta-sample", str(beta), "--out", str(out)) == 0
            lines = out.read_text().splitlines()
            assert lines[0] == "u,v,uncertainty"
            assert len(lines) - 1 == round(beta * n_base)

    def test_no_sampling_emits_header_only(self, tmp_path):
        out = tmp_path / "none.csv"
        assert _run("sample-points", "--no-sampling", "--out", str(out)) == 0
        assert out.read_text() == "u,v,uncertainty\n"

    def test_selection_order_and_seed_determinism(self, tmp_path):
        mask = tmp_path / "m.fmap"
        g = np.random.default_rng(0)
        write_fmap(mask, FeatureMap(g.random((1, 16, 16)).astype(np.float32)))
        a = tmp_path / "a.csv"
        b = tmp_path / "b.csv"
        assert _run("sample-points", "--mask", str(mask), "--seed", "9", "--out", str(a)) == 0
        assert _run("sample-points", "--mask", str(mask), "--seed", "9", "--out", str(b)) == 0
        assert a.read_bytes() == b.read_bytes()
        uncs = [float(line.split(",")[2]) for line in a.read_text().splitlines()[1:]]
        assert uncs == sorted(uncs, reverse=True)


class TestSynthGen:
    def test_outputs_and_determinism(self, tmp_path):
        d1 = _synth(tmp_path, seed=7)
        d2_dir = tmp_path / "again"
        assert _run("synth-gen", "--out-dir", str(d2_dir), "--seed", "7") == 0
        names = sorted(p.name for p in d1.iterdir())
        assert names == sorted(p.name for p in d2_dir.iterdir())
        assert "scene.fmap" in names and "gt_boxes.csv" in names and "gt_masks.json" in names
        assert any(n.startswith("pyramid_s") for n in names)
        for name in names:
            assert (d1 / name).read_bytes() == (d2_dir / name).read_bytes()


class TestSegmentAndEval:
    def test_segment_pipeline_recovers_gt_masks(self, tmp_path):
        scene_dir = _synth(tmp_path, seed=12, count=5, min_size=10, max_size=36)
        maps_dir = tmp_path / "maps"
        assert _run("encode-gt", "--boxes", str(scene_dir / "gt_boxes.csv"),
                    "--image-h", "256", "--image-w", "256", "--out-dir", str(maps_dir)) == 0
        dets_csv = tmp_path / "dets.csv"
        assert _run("decode", "--maps-dir", str(maps_dir), "--out", str(dets_csv)) == 0
        masks_json = tmp_path / "masks.json"
        assert _run("segment", "--pyramid-dir", str(scene_dir), "--boxes", str(dets_csv),
                    "--image-h", "256", "--image-w", "256", "--out", str(masks_json)) == 0

        from centerseg.fileio import read_masks_json
        from centerseg.metrics import mask_iou

        _, _, _, pred = read_masks_json(masks_json)
        _, _, _, gt = read_masks_json(scene_dir / "gt_masks.json")
        assert len(pred) == len(gt)
        best = [max(mask_iou(p, q) for q in gt) for p in pred]
        assert min(best) == 1.0  # aligned geometry reconstructs exactly

    def test_eval_ap_identity_boxes(self, tmp_path, capsys):
        scene_dir = _synth(tmp_path, seed=2, count=4)
        gt_csv = scene_dir / "gt_boxes.csv"
        out = tmp_path / "ap.csv"
        assert _run("eval-ap", "--pred", str(gt_csv), "--gt", str(gt_csv), "--out", str(out)) == 0
        lines = out.read_text().splitlines()
        assert lines[0] == "metric,alpha,value"
        assert lines[-1] == "AP_mean,1.0"
        assert len([l for l in lines if l.startswith("AP,")]) == 10

    def test_eval_ap_identity_masks(self, tmp_path):
        scene_dir = _synth(tmp_path, seed=3, count=3)
        out = tmp_path / "ap.csv"
        assert _run("eval-ap", "--pred", str(scene_dir / "gt_masks.json"),
                    "--gt", str(scene_dir / "gt_masks.json"), "--out", str(out)) == 0
        assert out.read_text().splitlines()[-1] == "AP_mean,1.0"

    def test_eval_ap_mode_mismatch_is_usage_error(self, tmp_path, capsys):
        scene_dir = _synth(tmp_path, seed=4, count=2)
        assert _run("eval-ap", "--pred", str(scene_dir / "gt_boxes.csv"),
                    "--gt", str(scene_dir / "gt_masks.json")) == 2


class TestGradCheckCommand:
    def test_output_format_and_tolerance(self, tmp_path):
        out = tmp_path / "grads.csv"
        assert _run("grad-check", "--trials", "5", "--out", str(out)) == 0
        lines = out.read_text().splitlines()
        assert lines[0] == "loss_name,max_rel_err"
        assert len(lines) == 6
        for line in lines[1:]:
            name, err = line.split(",")
            assert float(err) < 1e-4


@pytest.mark.skipif(shutil.which("centerseg") is None, reason="console script not installed")
def test_console_script_runs():
    proc = subprocess.run(["centerseg", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert "encode-gt" in proc.stdout


class TestThreadedDeterminism:
    def test_csk_threads_does_not_change_bytes(self, tmp_path, monkeypatch):
        scene_dir = _synth(tmp_path, seed=8, count=6)
        outputs = {}
        for label, threads in (("serial", "1"), ("pool", "3")):
            monkeypatch.setenv("CSK_THREADS", threads)
            maps_dir = tmp_path / f"maps_{label}"
            dets = tmp_path / f"dets_{label}.csv"
            masks = tmp_path / f"masks_{label}.json"
            assert _run("encode-gt", "--boxes", str(scene_dir / "gt_boxes.csv"),
                        "--image-h", "256", "--image-w", "256", "--out-dir", str(maps_dir)) == 0
            assert _run("decode", "--maps-dir", str(maps_dir), "--out", str(dets)) == 0
            assert _run("segment", "--pyramid-dir", str(scene_dir), "--boxes", str(dets),
                        "--image-h", "256", "--image-w", "256", "--out", str(masks)) == 0
            outputs[label] = (dets.read_bytes(), masks.read_bytes())
        assert outputs["serial"] == outputs["pool"]
