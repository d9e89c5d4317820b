"""Region masks for Set-of-Mark overlays.

The segmenter itself lives outside this package. Masks arrive either as a
run-length encoded JSON document::

    {"width": W, "height": H,
     "regions": [{"id": 1, "counts": [bg, fg, bg, ...]}, ...]}

where runs alternate background/foreground in row-major order and always
start with a (possibly zero) background run, or as a single-channel indexed
image whose pixel value ``k > 0`` marks region ``k``.
"""

from __future__ import annotations

import io
import json
import logging
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterable

import numpy as np
import requests
from PIL import Image

from .errors import ContractError, FormatError, RetryableError

logger = logging.getLogger(__name__)

__all__ = [
    "RegionMask",
    "MaskSet",
    "encode_rle",
    "decode_rle",
    "masks_from_json",
    "masks_to_json",
    "load_masks_rle",
    "save_masks_rle",
    "load_masks_indexed_image",
    "fetch_masks_remote",
]


def encode_rle(bitmap: np.ndarray) -> list[int]:
    """Alternating background/foreground run lengths of a boolean grid."""
    flat = np.asarray(bitmap, dtype=bool).ravel()
    if flat.size == 0:
        return [0]
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate(([0], change, [flat.size]))
    runs = np.diff(bounds).tolist()
    if flat[0]:
        runs.insert(0, 0)
    return runs


def decode_rle(counts: Iterable[int], width: int, height: int) -> np.ndarray:
    counts = [int(c) for c in counts]
    if any(c < 0 for c in counts):
        raise FormatError("negative run length")
    total = sum(counts)
    if total != width * height:
        raise FormatError(f"runs sum to {total}, expected {width * height}")
    values = np.zeros(len(counts), dtype=bool)
    values[1::2] = True
    return np.repeat(values, counts).reshape(height, width)


@dataclass(frozen=True)
class RegionMask:
    """A binary region, held as run lengths and decoded on demand."""

    region_id: int
    width: int
    height: int
    counts: tuple[int, ...]

    @classmethod
    def from_bitmap(cls, region_id: int, bitmap: np.ndarray) -> "RegionMask":
        h, w = bitmap.shape
        return cls(int(region_id), w, h, tuple(encode_rle(bitmap)))

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    @cached_property
    def bitmap(self) -> np.ndarray:
        try:
            bm = decode_rle(self.counts, self.width, self.height)
        except FormatError as exc:
            raise FormatError(f"region {self.region_id}: {exc}") from None
        bm.setflags(write=False)
        return bm


@dataclass(frozen=True)
class MaskSet:
    width: int
    height: int
    regions: tuple[RegionMask, ...] = ()

    def __post_init__(self):
        regions = tuple(sorted(self.regions, key=lambda r: r.region_id))
        ids = [r.region_id for r in regions]
        dup = {i for i in ids if ids.count(i) > 1}
        if dup:
            raise FormatError(f"duplicate region id(s): {sorted(dup)}")
        for r in regions:
            if r.region_id < 0:
                raise FormatError(f"region id must be non-negative, got {r.region_id}")
            if (r.width, r.height) != (self.width, self.height):
                raise FormatError(
                    f"region {r.region_id} is {r.width}x{r.height}, "
                    f"mask set is {self.width}x{self.height}"
                )
        object.__setattr__(self, "regions", regions)

    def __len__(self):
        return len(self.regions)

    @property
    def ids(self) -> list[int]:
        return [r.region_id for r in self.regions]


def masks_from_json(doc) -> MaskSet:
    """Validate and decode an RLE mask document (already parsed from JSON)."""
    try:
        width, height = int(doc["width"]), int(doc["height"])
        raw_regions = doc["regions"]
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"mask document missing width/height/regions: {exc}") from None
    if width < 1 or height < 1:
        raise FormatError(f"invalid mask dimensions {width}x{height}")
    seen = set()
    regions = []
    for entry in raw_regions:
        try:
            rid, counts = int(entry["id"]), [int(c) for c in entry["counts"]]
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"malformed region entry {entry!r}: {exc}") from None
        if rid in seen:
            raise FormatError(f"duplicate region id {rid}")
        seen.add(rid)
        if any(c < 0 for c in counts):
            raise FormatError(f"region {rid}: negative run length")
        if sum(counts) != width * height:
            raise FormatError(
                f"region {rid}: runs sum to {sum(counts)}, expected {width * height}"
            )
        regions.append(RegionMask(rid, width, height, tuple(counts)))
    return MaskSet(width, height, tuple(regions))


def masks_to_json(masks: MaskSet) -> dict:
    return {
        "width": masks.width,
        "height": masks.height,
        "regions": [{"id": r.region_id, "counts": list(r.counts)} for r in masks.regions],
    }


def load_masks_rle(path) -> MaskSet:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not valid JSON ({exc})") from None
    return masks_from_json(doc)


def save_masks_rle(masks: MaskSet, path) -> None:
    Path(path).write_text(json.dumps(masks_to_json(masks)))


def load_masks_indexed_image(path) -> MaskSet:
    """Read a single-channel label image; 0 is background, ``k > 0`` is region ``k``."""
    try:
        with Image.open(path) as img:
            img.load()
            bands = img.getbands()
            if len(bands) != 1:
                raise FormatError(
                    f"{path}: expected a single-channel indexed image, got mode {img.mode}"
                )
            labels = np.asarray(img)
    except FormatError:
        raise
    except (OSError, SyntaxError, ValueError) as exc:
        raise FormatError(f"{path}: cannot decode image ({exc})") from None
    h, w = labels.shape
    regions = [
        RegionMask.from_bitmap(int(k), labels == k)
        for k in np.unique(labels)
        if k != 0
    ]
    return MaskSet(w, h, tuple(regions))


def fetch_masks_remote(endpoint: str, frame, timeout: float = 30.0, session=None, rate_limiter=None) -> MaskSet:
    """POST a frame as PNG to a segmentation service and decode its RLE reply.

    Raises
    ------
    RetryableError
        Timeout or connection failure; message names the endpoint.
    FormatError
        Reply is not a valid RLE mask document.
    ContractError
        Non-2xx status, or mask dimensions disagree with the frame.
    """
    buf = io.BytesIO()
    Image.fromarray(frame.pixels, "RGB").save(buf, format="PNG")
    if rate_limiter is not None:
        rate_limiter.acquire()
    post = (session or requests).post
    try:
        resp = post(
            endpoint,
            data=buf.getvalue(),
            headers={"Content-Type": "image/png"},
            timeout=timeout,
        )
    except (requests.Timeout, requests.ConnectionError) as exc:
        raise RetryableError(f"mask service at {endpoint} unreachable: {exc}") from exc
    if not 200 <= resp.status_code < 300:
        raise ContractError(f"mask service at {endpoint} returned HTTP {resp.status_code}")
    try:
        doc = resp.json()
    except ValueError as exc:
        raise FormatError(f"mask service at {endpoint} returned non-JSON body") from exc
    masks = masks_from_json(doc)
    if (masks.width, masks.height) != (frame.width, frame.height):
        raise ContractError(
            f"mask service at {endpoint} returned {masks.width}x{masks.height} masks "
            f"for a {frame.width}x{frame.height} frame"
        )
    logger.debug("fetched %d regions from %s", len(masks), endpoint)
    return masks
