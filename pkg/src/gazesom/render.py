"""Visual cue compositing: gaze trails on every frame, SoM masks on the last.

Rasterization is fixed so that output is bit-exact across machines:

* normalized gaze ``(x, y)`` maps to pixel ``(x * (w - 1), y * (h - 1))``
  rounded half-up;
* a circle covers pixel centers with squared distance ``<= r**2``;
* a segment covers pixel centers within ``line_width / 2`` of the segment;
* colour blends are computed in float64 and rounded half-up.
"""

from __future__ import annotations

import bisect
import colorsys
import hashlib
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import ndimage

from .data import GazeFixation, GazeTrack
from .frame import Frame, pixel_digest
from .masks import MaskSet
from .prompts import StrategyFlags

__all__ = [
    "Frame",
    "GazeOverlayConfig",
    "SomOverlayConfig",
    "select_window",
    "trail_color",
    "render_gaze_trail",
    "region_color",
    "apply_som_overlay",
    "compose_cue_frames",
    "pixel_digest",
]

RGB = tuple[int, int, int]


@dataclass(frozen=True)
class GazeOverlayConfig:
    window: int = 15
    circle_radius: int = 8
    line_width: int = 3
    recent_color: RGB = (255, 0, 0)
    oldest_color: RGB = (0, 0, 255)

    def __post_init__(self):
        if self.window < 1:
            raise ValueError(f"window must be >= 1, got {self.window}")


@dataclass(frozen=True)
class SomOverlayConfig:
    fill_alpha: float = 0.05
    palette_seed: int = 0
    draw_contours: bool = True
    contour_width: int = 2

    def __post_init__(self):
        if not 0.0 <= self.fill_alpha <= 1.0:
            raise ValueError(f"fill_alpha must lie in [0, 1], got {self.fill_alpha}")


def _round_half_up(v):
    return np.floor(np.asarray(v, dtype=np.float64) + 0.5)


# --------------------------------------------------------------------------
# gaze trail


def select_window(track: GazeTrack | Sequence[GazeFixation], t: float, window: int):
    """Last ``window`` fixations with timestamp ``<= t``, oldest first."""
    fixations = track.fixations if isinstance(track, GazeTrack) else track
    end = bisect.bisect_right(fixations, t, key=lambda f: f.timestamp)
    return list(fixations[max(0, end - window):end])


def trail_color(age_rank: int, count: int, config: GazeOverlayConfig = GazeOverlayConfig()) -> RGB:
    """Colour of the fixation ``age_rank`` steps older than the newest one.

    Linear per-channel interpolation from ``recent_color`` (rank 0) to
    ``oldest_color`` (rank ``count - 1``), rounded half-up in exact integer
    arithmetic.
    """
    if count < 1 or not 0 <= age_rank < count:
        raise ValueError(f"need 0 <= age_rank < count, got {age_rank}, {count}")
    if count == 1:
        return tuple(config.recent_color)
    den = count - 1
    out = []
    for a, b in zip(config.recent_color, config.oldest_color):
        num = a * (den - age_rank) + b * age_rank
        out.append((2 * num + den) // (2 * den))
    return tuple(out)


def _to_pixel(fix: GazeFixation, width: int, height: int) -> tuple[int, int]:
    px = int(_round_half_up(fix.x * (width - 1)))
    py = int(_round_half_up(fix.y * (height - 1)))
    return px, py


def _window(shape, x0, y0, x1, y1, pad):
    """Clipped pixel window ``(r0, r1, c0, c1)`` around a primitive's bounding box."""
    h, w = shape
    c0 = max(0, int(math.floor(min(x0, x1) - pad)))
    c1 = min(w, int(math.ceil(max(x0, x1) + pad)) + 1)
    r0 = max(0, int(math.floor(min(y0, y1) - pad)))
    r1 = min(h, int(math.ceil(max(y0, y1) + pad)) + 1)
    return r0, r1, c0, c1


def _fill_disk(out, cx, cy, radius, color):
    r0, r1, c0, c1 = _window(out.shape[:2], cx, cy, cx, cy, radius)
    if r0 >= r1 or c0 >= c1:
        return
    yy = np.arange(r0, r1)[:, None]
    xx = np.arange(c0, c1)[None, :]
    m = (xx - cx) ** 2 + (yy - cy) ** 2 <= radius * radius
    out[r0:r1, c0:c1][m] = color


def _fill_segment(out, p0, p1, half_width, color):
    x0, y0 = p0
    x1, y1 = p1
    r0, r1, c0, c1 = _window(out.shape[:2], x0, y0, x1, y1, half_width)
    if r0 >= r1 or c0 >= c1:
        return
    yy = np.arange(r0, r1, dtype=np.float64)[:, None]
    xx = np.arange(c0, c1, dtype=np.float64)[None, :]
    dx, dy = x1 - x0, y1 - y0
    len2 = dx * dx + dy * dy
    if len2 == 0:
        t = 0.0
    else:
        t = np.clip(((xx - x0) * dx + (yy - y0) * dy) / len2, 0.0, 1.0)
    ex = xx - (x0 + t * dx)
    ey = yy - (y0 + t * dy)
    m = ex * ex + ey * ey <= half_width * half_width
    out[r0:r1, c0:c1][m] = color


def render_gaze_trail(frame: Frame, track, config: GazeOverlayConfig = GazeOverlayConfig()) -> Frame:
    """Draw the recent-fixation trail visible at ``frame.timestamp``.

    Segments go first, oldest to newest, each coloured like its older
    endpoint; circles follow in the same order so the newest ends on top.
    """
    points = select_window(track, frame.timestamp, config.window)
    if not points:
        return frame
    out = frame.pixels.copy()
    coords = [_to_pixel(f, frame.width, frame.height) for f in points]
    K = len(coords)
    colors = [trail_color(K - 1 - j, K, config) for j in range(K)]  # j=0 oldest
    for j in range(K - 1):
        _fill_segment(out, coords[j], coords[j + 1], config.line_width / 2.0, colors[j])
    for j in range(K):
        _fill_disk(out, coords[j][0], coords[j][1], config.circle_radius, colors[j])
    return frame.with_pixels(out)


# --------------------------------------------------------------------------
# set-of-mark


def region_color(palette_seed: int, region_id: int) -> RGB:
    """Deterministic saturated colour for a region."""
    digest = hashlib.sha256(f"{palette_seed}:{region_id}".encode()).digest()
    hue = int.from_bytes(digest[:4], "big") / 2**32
    r, g, b = colorsys.hsv_to_rgb(hue, 0.85, 1.0)
    return tuple(int(_round_half_up(c * 255)) for c in (r, g, b))


_FOUR_CONNECTED = ndimage.generate_binary_structure(2, 1)


def _contour(mask: np.ndarray, width: int) -> np.ndarray:
    if width <= 0 or not mask.any():
        return np.zeros_like(mask)
    # border_value=1: the frame edge does not count as a region boundary
    inner = ndimage.binary_erosion(
        mask, structure=_FOUR_CONNECTED, iterations=width, border_value=1
    )
    return mask & ~inner


def apply_som_overlay(frame: Frame, masks: MaskSet, config: SomOverlayConfig = SomOverlayConfig()) -> Frame:
    """Tint each region with ``(1 - a) * src + a * colour`` in ascending id order.

    Contours, when enabled, are drawn in the opaque region colour on the
    inner boundary of each region. No tags or labels are ever drawn.
    """
    if not masks.regions:
        return frame
    for region in masks.regions:
        if region.shape != (frame.height, frame.width):
            raise ValueError(
                f"region {region.region_id} has size {region.shape[1]}x{region.shape[0]}, "
                f"frame is {frame.width}x{frame.height}"
            )
    a = float(config.fill_alpha)
    out = frame.pixels.copy()
    for region in masks.regions:
        mask = region.bitmap
        color = np.array(region_color(config.palette_seed, region.region_id), dtype=np.float64)
        src = out[mask].astype(np.float64)
        out[mask] = _round_half_up((1.0 - a) * src + a * color).astype(np.uint8)
        if config.draw_contours:
            out[_contour(mask, config.contour_width)] = color.astype(np.uint8)
    return frame.with_pixels(out)


def compose_cue_frames(
    frames: Sequence[Frame],
    track,
    final_masks: MaskSet | None,
    strategy: StrategyFlags,
    gaze_cfg: GazeOverlayConfig = GazeOverlayConfig(),
    som_cfg: SomOverlayConfig = SomOverlayConfig(),
) -> list[Frame]:
    """Apply the enabled cues. The trail goes on first, masks only on the last frame."""
    if not frames:
        raise ValueError("compose_cue_frames needs at least one frame")
    if strategy.som and final_masks is None:
        raise ValueError("strategy enables SoM but no masks were supplied for the final frame")
    out = list(frames)
    if strategy.gaze:
        out = [render_gaze_trail(f, track, gaze_cfg) for f in out]
    if strategy.som:
        out[-1] = apply_som_overlay(out[-1], final_masks, som_cfg)
    return out
