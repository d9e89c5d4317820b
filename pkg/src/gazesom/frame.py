"""In-memory RGB frame and its content digest."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

__all__ = ["Frame", "pixel_digest"]


@dataclass(frozen=True, eq=False)
class Frame:
    """An RGB frame. ``pixels`` has shape ``(height, width, 3)`` and dtype uint8."""

    pixels: np.ndarray
    timestamp: float = 0.0

    def __post_init__(self):
        px = self.pixels
        if px.ndim != 3 or px.shape[2] != 3 or px.dtype != np.uint8:
            raise ValueError(
                f"frame pixels must be (H, W, 3) uint8, got {px.shape} {px.dtype}"
            )

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    def with_pixels(self, pixels: np.ndarray) -> "Frame":
        return Frame(pixels, self.timestamp)

    def digest(self) -> str:
        return pixel_digest(self.pixels)


def pixel_digest(pixels: np.ndarray) -> str:
    """SHA-256 of the raw row-major RGB buffer, prefixed by its shape."""
    h = hashlib.sha256()
    h.update(f"{pixels.shape[0]}x{pixels.shape[1]}:".encode())
    h.update(np.ascontiguousarray(pixels, dtype=np.uint8).tobytes())
    return h.hexdigest()
