"""On-disk formats: FMAP binary rasters, boxes CSV, instance-mask JSON.

All writers are byte-deterministic: floats are serialized with Python's
shortest round-trip repr, rows and keys in a fixed order, "\n" line
endings. Readers raise :class:`DataFormatError` with file and offset
(byte offset for FMAP, line number for CSV) on malformed input.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .codec import BBox, Detection
from .fmap import FeatureMap

__all__ = [
    "DataFormatError",
    "read_fmap",
    "write_fmap",
    "read_boxes_csv",
    "write_boxes_csv",
    "read_masks_json",
    "write_masks_json",
    "fmt_float",
]

FMAP_MAGIC = b"FMAP"
FMAP_VERSION = 1

BOX_CSV_HEADER = "image_id,cu,cv,w,h,score"


class DataFormatError(ValueError):
    """Malformed input file; message carries file path and offset."""


def fmt_float(x: float) -> str:
    """Shortest decimal string that round-trips to the same float."""
    return repr(float(x))


# ---------------------------------------------------------------------------
# FMAP binary: magic "FMAP", u32 version=1, u32 C, u32 H, u32 W,
# then C*H*W little-endian float32, channel-major row-major.
# ---------------------------------------------------------------------------


def write_fmap(path: str | Path, fmap: FeatureMap) -> None:
    c, h, w = fmap.shape
    header = FMAP_MAGIC + struct.pack("<IIII", FMAP_VERSION, c, h, w)
    payload = np.ascontiguousarray(fmap.data, dtype="<f4").tobytes()
    Path(path).write_bytes(header + payload)


def read_fmap(path: str | Path) -> FeatureMap:
    path = Path(path)
    blob = path.read_bytes()
    if blob[:4] != FMAP_MAGIC:
        raise DataFormatError(f"{path}: offset 0: bad magic {blob[:4]!r}, expected b'FMAP'")
    if len(blob) < 20:
        raise DataFormatError(f"{path}: offset {len(blob)}: truncated header")
    version, c, h, w = struct.unpack("<IIII", blob[4:20])
    if version != FMAP_VERSION:
        raise DataFormatError(f"{path}: offset 4: unsupported version {version}")
    expect = 20 + 4 * c * h * w
    if len(blob) != expect:
        raise DataFormatError(
            f"{path}: offset {min(len(blob), expect)}: payload is {len(blob) - 20} bytes, "
            f"expected {4 * c * h * w} for {c}x{h}x{w}"
        )
    data = np.frombuffer(blob, dtype="<f4", offset=20).reshape(c, h, w)
    try:
        return FeatureMap(data)
    except ValueError as exc:
        raise DataFormatError(f"{path}: offset 20: {exc}") from exc


# ---------------------------------------------------------------------------
# Boxes CSV: header image_id,cu,cv,w,h,score; score column optional for GT.
# ---------------------------------------------------------------------------


def write_boxes_csv(
    path: str | Path,
    rows: list[tuple[str, Detection]] | list[tuple[str, BBox]],
    with_score: bool = True,
) -> None:
    """Write (image_id, Detection) or (image_id, BBox) rows."""
    lines = [BOX_CSV_HEADER if with_score else BOX_CSV_HEADER.rsplit(",", 1)[0]]
    for image_id, item in rows:
        box = item.box if isinstance(item, Detection) else item
        cells = [image_id, fmt_float(box.cu), fmt_float(box.cv), fmt_float(box.w), fmt_float(box.h)]
        if with_score:
            score = item.score if isinstance(item, Detection) else 1.0
            cells.append(fmt_float(score))
        lines.append(",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_boxes_csv(path: str | Path) -> list[tuple[str, Detection | BBox]]:
    """Read box rows; rows with a score parse as Detection, without as BBox."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise DataFormatError(f"{path}: not valid UTF-8: {exc}") from exc
    lines = text.splitlines()
    if not lines:
        raise DataFormatError(f"{path}: line 1: empty file, expected header")
    header = lines[0].strip()
    if header == BOX_CSV_HEADER:
        has_score = True
    elif header == BOX_CSV_HEADER.rsplit(",", 1)[0]:
        has_score = False
    else:
        raise DataFormatError(f"{path}: line 1: bad header {header!r}")
    ncols = 6 if has_score else 5
    out: list[tuple[str, Detection | BBox]] = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        cells = line.split(",")
        if len(cells) != ncols:
            raise DataFormatError(f"{path}: line {lineno}: expected {ncols} columns, got {len(cells)}")
        image_id = cells[0]
        try:
            nums = [float(c) for c in cells[1:]]
        except ValueError as exc:
            raise DataFormatError(f"{path}: line {lineno}: {exc}") from exc
        try:
            box = BBox(*nums[:4])
            item: Detection | BBox = Detection(box, nums[4]) if has_score else box
        except ValueError as exc:
            raise DataFormatError(f"{path}: line {lineno}: {exc}") from exc
        out.append((image_id, item))
    return out


# ---------------------------------------------------------------------------
# Instance masks JSON (one image per file):
# {"image_id": str, "height": H, "width": W,
#  "instances": [{"id": int, "score": float, "bbox": [cu,cv,w,h], "rle": [...]}]}
# rle is row-major run lengths starting with the count of leading zeros.
# ---------------------------------------------------------------------------


def write_masks_json(path: str | Path, image_id: str, height: int, width: int, instances) -> None:
    """Write instances as [(id, score, BBox, rle list)] or InstanceMask list."""
    from .segmentation import InstanceMask, rle_encode

    items = []
    for i, inst in enumerate(instances):
        if isinstance(inst, InstanceMask):
            det = inst.detection
            items.append(
                {
                    "id": i,
                    "score": det.score,
                    "bbox": [det.box.cu, det.box.cv, det.box.w, det.box.h],
                    "rle": rle_encode(inst.mask),
                }
            )
        else:
            iid, score, box, rle = inst
            items.append({"id": iid, "score": score, "bbox": [box.cu, box.cv, box.w, box.h], "rle": rle})
    doc = {"image_id": image_id, "height": height, "width": width, "instances": items}
    Path(path).write_text(json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n", encoding="utf-8")


def read_masks_json(path: str | Path):
    """Read one image's instances; returns (image_id, height, width, list of InstanceMask)."""
    from .segmentation import InstanceMask, rle_decode

    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise DataFormatError(f"{path}: {exc}") from exc
    try:
        image_id = str(doc["image_id"])
        height = int(doc["height"])
        width = int(doc["width"])
        raw = doc["instances"]
    except (KeyError, TypeError, ValueError) as exc:
        raise DataFormatError(f"{path}: missing or malformed top-level key: {exc!r}") from exc
    masks = []
    for idx, item in enumerate(raw):
        try:
            box = BBox(*[float(x) for x in item["bbox"]])
            det = Detection(box, float(item["score"]))
            mask = rle_decode(item["rle"], height, width)
        except (KeyError, TypeError, ValueError) as exc:
            raise DataFormatError(f"{path}: instances[{idx}]: {exc!r}") from exc
        masks.append(InstanceMask(height, width, mask, det))
    return image_id, height, width, masks
