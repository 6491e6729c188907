"""centerseg command line.

Subcommands compose one module each over bit-exact file formats (FMAP
rasters, boxes CSV, instance-mask JSON, metrics CSV). All randomness is
driven by --seed; re-running any pipeline with the same inputs, config
and seed reproduces output files byte for byte. CSK_THREADS caps the
worker count for the per-image/per-ROI stages (0 = auto, unset = serial);
results do not depend on it.

Exit codes: 0 success, 2 usage error (bad flags, config or paths),
1 data error (malformed input files).
"""

from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .codec import BBox, Detection, decode_boxes, encode_targets
from .config import RunConfig, build_config
from .fileio import (
    DataFormatError,
    fmt_float,
    read_boxes_csv,
    read_fmap,
    read_masks_json,
    write_boxes_csv,
    write_fmap,
    write_masks_json,
)
from .fmap import FeatureMap
from .gradcheck import LOSS_NAMES, check_loss
from .metrics import AP_THRESHOLDS, ap_sweep, box_iou, mask_iou
from .refine import generate_biased_points
from .segmentation import InstanceMask, PyramidLevels, assemble_instance, crop_roi_pyramid
from .synth import SceneParams, generate_scene

_CONFIG_KEYS = [
    ("n", "downsize factor between image and target grid", 4),
    ("min_iou", "IOU floor for the Gaussian radius rule", 0.7),
    ("top_k", "max detections kept per image", 100),
    ("score_thresh", "heatmap score floor for decoded boxes", 0.05),
    ("mask_thresh", "binarization threshold for pasted masks", 0.5),
    ("k", "point-sampling oversampling factor", 3.0),
    ("beta_sample", "fraction of N points kept after uncertainty sort", 0.75),
    ("D", "density divisor, N = H*W/D", 8),
    ("seed", "root seed for all randomness", 0),
    ("focal_alpha", "focal loss probability exponent", 2.0),
    ("focal_beta", "focal loss background down-weight exponent", 4.0),
]


def _config_parent() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    grp = p.add_argument_group("config", "override config-file keys (file: 'key = value' lines, '#' comments)")
    grp.add_argument("--config", metavar="FILE", help="key = value config file")
    for key, help_text, default in _CONFIG_KEYS:
        kind = int if isinstance(default, int) else float
        grp.add_argument(
            f"--{key.replace('_', '-')}",
            dest=key,
            type=kind,
            default=None,
            help=f"{help_text} (default {default})",
        )
    return p


def _cfg_from_args(args) -> RunConfig:
    overrides = {key: getattr(args, key) for key, _h, _d in _CONFIG_KEYS}
    return build_config(args.config, overrides)


def _workers() -> int:
    raw = os.environ.get("CSK_THREADS", "")
    if not raw:
        return 1
    count = int(raw)
    if count < 0:
        raise ValueError("CSK_THREADS must be >= 0")
    return count if count > 0 else (os.cpu_count() or 1)


def _pmap(fn, items):
    items = list(items)
    n = _workers()
    if n <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


def _write_text(path: str | None, text: str) -> None:
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


def _group_boxes(rows):
    """CSV rows -> ordered {image_id: [Detection, ...]} (GT rows score 1)."""
    grouped: dict[str, list[Detection]] = {}
    for image_id, item in rows:
        det = item if isinstance(item, Detection) else Detection(item, 1.0)
        grouped.setdefault(image_id, []).append(det)
    return grouped


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_encode_gt(args) -> int:
    cfg = _cfg_from_args(args)
    rows = read_boxes_csv(args.boxes)
    grouped = _group_boxes(rows)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    def encode_one(image_id: str):
        boxes = [d.box for d in grouped[image_id]]
        targets = encode_targets(boxes, args.image_h, args.image_w, cfg.n, cfg.min_iou)
        write_fmap(out_dir / f"{image_id}_heatmap.fmap", targets.heatmap)
        write_fmap(out_dir / f"{image_id}_wh.fmap", targets.wh_map)
        write_fmap(out_dir / f"{image_id}_offset.fmap", targets.offset_map)
        return targets.collisions

    collisions = _pmap(encode_one, sorted(grouped))
    total = sum(collisions)
    if total:
        print(f"encode-gt: {total} quantization collision(s)", file=sys.stderr)
    return 0


def cmd_decode(args) -> int:
    cfg = _cfg_from_args(args)
    maps_dir = Path(args.maps_dir)
    heat_files = sorted(maps_dir.glob("*_heatmap.fmap"))
    if not heat_files:
        raise FileNotFoundError(f"no *_heatmap.fmap files in {maps_dir}")

    def decode_one(heat_path: Path):
        image_id = heat_path.name[: -len("_heatmap.fmap")]
        heat = read_fmap(heat_path)
        wh = read_fmap(maps_dir / f"{image_id}_wh.fmap")
        off = read_fmap(maps_dir / f"{image_id}_offset.fmap")
        dets = decode_boxes(heat, wh, off, cfg.n, cfg.top_k, cfg.score_thresh)
        return [(image_id, d) for d in dets]

    rows = [row for chunk in _pmap(decode_one, heat_files) for row in chunk]
    write_boxes_csv(args.out, rows, with_score=True)
    return 0


def _load_pyramid(pyramid_dir: Path, image_h: int, image_w: int) -> PyramidLevels:
    files = sorted(pyramid_dir.glob("pyramid_s*.fmap"))
    if not files:
        raise FileNotFoundError(f"no pyramid_s*.fmap files in {pyramid_dir}")
    levels = []
    for path in files:
        stride_txt = path.name[len("pyramid_s") : -len(".fmap")]
        try:
            stride = float(stride_txt)
        except ValueError as exc:
            raise DataFormatError(f"{path}: cannot parse stride from filename") from exc
        levels.append((read_fmap(path), stride))
    levels.sort(key=lambda t: t[1])
    return PyramidLevels(tuple(levels), image_h, image_w)


def _channel_boxes(level: FeatureMap, stride: float) -> list[BBox | None]:
    """Tight box (image coords) of each channel's occupied cells, or None."""
    out: list[BBox | None] = []
    for c in range(level.channels):
        occ = level.data[c] >= 0.5
        if not occ.any():
            out.append(None)
            continue
        rows = np.nonzero(occ.any(axis=1))[0]
        cols = np.nonzero(occ.any(axis=0))[0]
        r0, r1 = float(rows[0]), float(rows[-1])
        c0, c1 = float(cols[0]), float(cols[-1])
        half = (stride - 1.0) / 2.0
        out.append(
            BBox(
                (c0 + c1) / 2.0 * stride + half,
                (r0 + r1) / 2.0 * stride + half,
                (c1 - c0 + 1.0) * stride,
                (r1 - r0 + 1.0) * stride,
            )
        )
    return out


def cmd_segment(args) -> int:
    cfg = _cfg_from_args(args)
    pyramid = _load_pyramid(Path(args.pyramid_dir), args.image_h, args.image_w)
    rows = read_boxes_csv(args.boxes)
    grouped = _group_boxes(rows)
    if args.image_id is not None:
        image_id = args.image_id
        dets = grouped.get(image_id, [])
    elif len(grouped) == 1:
        image_id, dets = next(iter(grouped.items()))
    else:
        raise ValueError(f"boxes file holds {len(grouped)} image ids; pass --image-id")

    finest, s0 = pyramid.levels[0]
    chan_boxes = _channel_boxes(finest, s0) if finest.channels > 1 else [None]

    def segment_one(det: Detection) -> InstanceMask | None:
        crops = crop_roi_pyramid(pyramid, det.box)
        if not crops:
            return None
        if finest.channels == 1:
            chan = 0
        else:
            # ideal object guidance: the channel whose footprint best
            # matches the detection owns the ROI
            ious = [
                box_iou(det.box, cb) if cb is not None else -1.0 for cb in chan_boxes
            ]
            chan = int(np.argmax(ious))
        prob_roi = FeatureMap(crops[0].data[chan : chan + 1])
        return assemble_instance(prob_roi, det.box, args.image_h, args.image_w, cfg.mask_thresh, det)

    masks = [m for m in _pmap(segment_one, dets) if m is not None]
    write_masks_json(args.out, image_id, args.image_h, args.image_w, masks)
    return 0


def cmd_sample_points(args) -> int:
    cfg = _cfg_from_args(args)
    lines = ["u,v,uncertainty"]
    if not args.no_sampling:
        if args.mask is None:
            raise ValueError("--mask is required unless --no-sampling is given")
        mask = read_fmap(args.mask)
        points = generate_biased_points(mask, cfg.sampling_config())
        for p, unc in points.points:
            lines.append(f"{fmt_float(p.u)},{fmt_float(p.v)},{fmt_float(unc)}")
    _write_text(args.out, "\n".join(lines) + "\n")
    return 0


def _load_eval_side(path_str: str):
    """Returns ("box"|"mask", dets_by_image, gts payload dict)."""
    path = Path(path_str)
    if path.is_file() and path.suffix == ".csv":
        grouped = _group_boxes(read_boxes_csv(path))
        dets = {img: [(d.score, d) for d in items] for img, items in grouped.items()}
        gts = {img: [d.box for d in items] for img, items in grouped.items()}
        return "box", dets, gts
    files = sorted(path.glob("*.json")) if path.is_dir() else [path]
    if not files or not all(f.suffix == ".json" for f in files):
        raise ValueError(f"{path}: expected a .csv file, a .json file, or a directory of .json files")
    dets: dict = {}
    gts: dict = {}
    for f in files:
        image_id, _h, _w, masks = read_masks_json(f)
        dets[image_id] = [(m.detection.score, m) for m in masks]
        gts[image_id] = list(masks)
    return "mask", dets, gts


def cmd_eval_ap(args) -> int:
    pred_mode, pred_dets, _ = _load_eval_side(args.pred)
    gt_mode, _, gt_items = _load_eval_side(args.gt)
    if pred_mode != gt_mode:
        raise ValueError(f"prediction mode {pred_mode!r} does not match GT mode {gt_mode!r}")
    if pred_mode == "box":
        iou_fn = lambda det, gt: box_iou(det.box, gt)  # noqa: E731
    else:
        iou_fn = mask_iou
    result = ap_sweep(pred_dets, gt_items, iou_fn)
    lines = ["metric,alpha,value"]
    for alpha in AP_THRESHOLDS:
        lines.append(f"AP,{fmt_float(alpha)},{fmt_float(result.per_threshold[alpha])}")
    lines.append(f"AP_mean,{fmt_float(result.mean_ap)}")
    _write_text(args.out, "\n".join(lines) + "\n")
    return 0


def cmd_synth_gen(args) -> int:
    params = SceneParams(
        count=args.count,
        min_size=args.min_size,
        max_size=args.max_size,
        protrusions=args.protrusions,
        max_overlap=args.max_overlap,
        image_h=args.image_h,
        image_w=args.image_w,
    )
    scene = generate_scene(args.seed if args.seed is not None else 0, params)
    image_id = args.image_id or f"scene{scene.seed}"
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    write_fmap(out_dir / "scene.fmap", scene.image)
    write_boxes_csv(out_dir / "gt_boxes.csv", [(image_id, box) for box, _m in scene.instances], with_score=False)
    gt_masks = [
        InstanceMask(scene.image_h, scene.image_w, m, Detection(box, 1.0))
        for box, m in scene.instances
    ]
    write_masks_json(out_dir / "gt_masks.json", image_id, scene.image_h, scene.image_w, gt_masks)
    for fm, stride in scene.pyramid.levels:
        write_fmap(out_dir / f"pyramid_s{stride:g}.fmap", fm)
    if scene.placement_failures:
        print(f"synth-gen: {scene.placement_failures} placement failure(s)", file=sys.stderr)
    return 0


def cmd_grad_check(args) -> int:
    cfg = _cfg_from_args(args)
    lines = ["loss_name,max_rel_err"]
    for name in LOSS_NAMES:
        err = check_loss(name, seed=cfg.seed, trials=args.trials)
        lines.append(f"{name},{fmt_float(err)}")
    _write_text(args.out, "\n".join(lines) + "\n")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    config_keys = "\n".join(f"  {key:<14} {h} (default {d})" for key, h, d in _CONFIG_KEYS)
    parser = argparse.ArgumentParser(
        prog="centerseg",
        description="Center-keypoint instance segmentation: encoding, decoding, "
        "segmentation, point sampling and AP evaluation.",
        epilog="config keys (file 'key = value' lines or flags):\n" + config_keys,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)
    cfg_parent = _config_parent()

    p = sub.add_parser("encode-gt", parents=[cfg_parent], help="encode GT boxes into heatmap/wh/offset FMAPs")
    p.add_argument("--boxes", required=True, help="GT boxes CSV (score column optional)")
    p.add_argument("--image-h", type=int, required=True)
    p.add_argument("--image-w", type=int, required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_encode_gt)

    p = sub.add_parser("decode", parents=[cfg_parent], help="decode heatmap/wh/offset FMAPs into a boxes CSV")
    p.add_argument("--maps-dir", required=True, help="directory of <id>_{heatmap,wh,offset}.fmap")
    p.add_argument("--out", required=True, help="output detections CSV")
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("segment", parents=[cfg_parent], help="assemble instance masks from ROI probabilities")
    p.add_argument("--pyramid-dir", required=True, help="directory of pyramid_s<stride>.fmap levels")
    p.add_argument("--boxes", required=True, help="detections CSV")
    p.add_argument("--image-h", type=int, required=True)
    p.add_argument("--image-w", type=int, required=True)
    p.add_argument("--image-id", default=None, help="image id to segment (required for multi-image CSVs)")
    p.add_argument("--out", required=True, help="output instance-mask JSON")
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("sample-points", parents=[cfg_parent], help="emit uncertainty-biased sampling points")
    p.add_argument("--mask", help="probability FMAP (single channel)")
    p.add_argument("--no-sampling", action="store_true", help="emit an empty point list (sampling disabled)")
    p.add_argument("--out", default=None, help="output CSV (default stdout)")
    p.set_defaults(func=cmd_sample_points)

    p = sub.add_parser("eval-ap", parents=[cfg_parent], help="AP at 0.50..0.95 plus mean")
    p.add_argument("--pred", required=True, help="predictions: boxes CSV, masks JSON, or JSON dir")
    p.add_argument("--gt", required=True, help="ground truth in the same format family")
    p.add_argument("--out", default=None, help="output CSV (default stdout)")
    p.set_defaults(func=cmd_eval_ap)

    p = sub.add_parser("synth-gen", parents=[cfg_parent], help="generate a synthetic scene with GT and ideal pyramid")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--count", type=int, default=6)
    p.add_argument("--min-size", type=float, default=12.0)
    p.add_argument("--max-size", type=float, default=48.0)
    p.add_argument("--protrusions", action="store_true")
    p.add_argument("--max-overlap", type=float, default=0.3)
    p.add_argument("--image-h", type=int, default=256)
    p.add_argument("--image-w", type=int, default=256)
    p.add_argument("--image-id", default=None, help="image id (default scene<seed>)")
    p.set_defaults(func=cmd_synth_gen)

    p = sub.add_parser("grad-check", parents=[cfg_parent], help="finite-difference check of all loss gradients")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--out", default=None, help="output CSV (default stdout)")
    p.set_defaults(func=cmd_grad_check)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except DataFormatError as exc:
        print(f"centerseg: data error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"centerseg: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"centerseg: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
