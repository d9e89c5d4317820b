"""Benchmark ingestion: question manifests, clip frame stores and gaze tracks.

On-disk layout of a benchmark directory::

    root/
      manifest.jsonl              one question per line
      clips/<clip_id>/
        meta.json                 {"fps": ..., "frame_count": ...}
        000000.png ...            zero-padded frame images (PNG or JPEG)
        gaze.csv                  timestamp,x,y  (seconds, normalized, top-left origin)
        masks.json                RLE masks for the final frame (optional)

Frames are expected to be extracted beforehand, e.g.::

    ffmpeg -i clip.mp4 -start_number 0 clips/<clip_id>/%06d.png
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

from .errors import ValidationError
from .frame import Frame
from .masks import MaskSet, RegionMask, save_masks_rle
from .prompts import normalize_answer

logger = logging.getLogger(__name__)

__all__ = [
    "GazeFixation",
    "GazeTrack",
    "QuestionRecord",
    "ClipRef",
    "BenchmarkDir",
    "load_manifest",
    "write_manifest",
    "load_gaze_track",
    "write_gaze_track",
    "load_clip",
    "validate_clip",
    "resolve_frames",
    "make_synthetic_suite",
    "NUM_CANDIDATES",
]

NUM_CANDIDATES = 5
_FRAME_SUFFIXES = (".png", ".jpg", ".jpeg")


@dataclass(frozen=True)
class GazeFixation:
    timestamp: float
    x: float
    y: float


@dataclass(frozen=True)
class GazeTrack:
    clip_id: str
    fixations: tuple[GazeFixation, ...] = ()
    clamped_count: int = 0

    def __len__(self):
        return len(self.fixations)


@dataclass(frozen=True)
class QuestionRecord:
    id: str
    clip_id: str
    question_text: str
    candidates: tuple[str, ...]
    correct_index: int

    def __post_init__(self):
        object.__setattr__(self, "candidates", tuple(self.candidates))
        problems = _record_problems(self)
        if problems:
            raise ValidationError(f"question {self.id!r}: " + "; ".join(problems))

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "clip_id": self.clip_id,
            "question": self.question_text,
            "candidates": list(self.candidates),
            "correct_index": self.correct_index,
        }


def _record_problems(rec: QuestionRecord) -> list[str]:
    problems = []
    if len(rec.candidates) != NUM_CANDIDATES:
        problems.append(f"expected {NUM_CANDIDATES} candidates, got {len(rec.candidates)}")
    if not isinstance(rec.correct_index, int) or not 0 <= rec.correct_index < NUM_CANDIDATES:
        problems.append(f"correct_index {rec.correct_index!r} outside [0, {NUM_CANDIDATES - 1}]")
    normed = [normalize_answer(c) for c in rec.candidates]
    if len(set(normed)) != len(normed):
        problems.append("candidates are not distinct after normalization")
    if any(not n for n in normed):
        problems.append("empty candidate after normalization")
    return problems


# --------------------------------------------------------------------------
# manifest


def load_manifest(path) -> list[QuestionRecord]:
    """Parse a line-delimited JSON manifest.

    All lines are checked before raising, so one :class:`ValidationError`
    lists every bad line number.
    """
    records, errors, seen = [], [], {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                doc = json.loads(line)
                rec = QuestionRecord(
                    id=str(doc["id"]),
                    clip_id=str(doc["clip_id"]),
                    question_text=str(doc["question"]),
                    candidates=tuple(str(c) for c in doc["candidates"]),
                    correct_index=doc["correct_index"],
                )
            except json.JSONDecodeError as exc:
                errors.append(f"line {lineno}: invalid JSON ({exc.msg})")
                continue
            except KeyError as exc:
                errors.append(f"line {lineno}: missing field {exc}")
                continue
            except (ValidationError, TypeError) as exc:
                errors.append(f"line {lineno}: {exc}")
                continue
            if rec.id in seen:
                errors.append(f"line {lineno}: duplicate id {rec.id!r} (first on line {seen[rec.id]})")
                continue
            seen[rec.id] = lineno
            records.append(rec)
    if errors:
        raise ValidationError(f"{path}: {len(errors)} invalid record(s)\n" + "\n".join(errors))
    return records


def write_manifest(records: Sequence[QuestionRecord], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_json(), ensure_ascii=False) + "\n")


# --------------------------------------------------------------------------
# gaze


def load_gaze_track(path, clip_id: str) -> GazeTrack:
    """Read a ``timestamp,x,y`` CSV. Out-of-range coordinates are clamped, not dropped."""
    rows = []
    clamped = 0
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["timestamp", "x", "y"]:
            raise ValidationError(f"{path}: expected header 'timestamp,x,y', got {header}")
        for rowno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                t, x, y = (float(c) for c in row)
            except ValueError:
                raise ValidationError(f"{path}: row {rowno}: non-numeric or malformed {row}") from None
            if not all(math.isfinite(v) for v in (t, x, y)) or t < 0:
                raise ValidationError(f"{path}: row {rowno}: invalid values {row}")
            cx, cy = min(max(x, 0.0), 1.0), min(max(y, 0.0), 1.0)
            if (cx, cy) != (x, y):
                clamped += 1
            rows.append(GazeFixation(t, cx, cy))
    if clamped:
        logger.info("%s: clamped %d out-of-frame fixation(s)", path, clamped)
    rows.sort(key=lambda f: f.timestamp)  # stable for equal timestamps
    return GazeTrack(clip_id, tuple(rows), clamped)


def write_gaze_track(track: GazeTrack, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write("timestamp,x,y\n")
        for f in track.fixations:
            fh.write(f"{f.timestamp:.4f},{f.x:.6f},{f.y:.6f}\n")


# --------------------------------------------------------------------------
# clips


@dataclass(frozen=True)
class ClipRef:
    clip_id: str
    frames_dir: Path
    fps: float
    frame_count: int

    def __post_init__(self):
        if not self.fps > 0:
            raise ValidationError(f"clip {self.clip_id}: fps must be positive")
        if self.frame_count < 1:
            raise ValidationError(f"clip {self.clip_id}: frame_count must be >= 1")

    @property
    def duration(self) -> float:
        return self.frame_count / self.fps

    def frame_path(self, index: int) -> Path:
        for suffix in _FRAME_SUFFIXES:
            p = self.frames_dir / f"{index:06d}{suffix}"
            if p.exists():
                return p
        raise FileNotFoundError(
            f"clip {self.clip_id}: frame {index} not found in {self.frames_dir}"
        )


def load_clip(frames_dir, clip_id: str | None = None) -> ClipRef:
    frames_dir = Path(frames_dir)
    meta = json.loads((frames_dir / "meta.json").read_text())
    return ClipRef(
        clip_id=clip_id or frames_dir.name,
        frames_dir=frames_dir,
        fps=float(meta["fps"]),
        frame_count=int(meta["frame_count"]),
    )


def validate_clip(clip: ClipRef, gaze: GazeTrack | None = None, expected_duration: float | None = 10.0) -> list[str]:
    """Check a clip's frame store. Missing frames raise; softer issues come back as warnings."""
    for i in range(clip.frame_count):
        clip.frame_path(i)
    warnings = []
    if expected_duration is not None:
        expected = expected_duration * clip.fps
        if abs(clip.frame_count - expected) > 1:
            warnings.append(
                f"clip {clip.clip_id}: {clip.frame_count} frames at {clip.fps} fps, "
                f"expected {expected:g} +/- 1 for a {expected_duration:g} s clip"
            )
    if gaze is not None and gaze.fixations:
        gap = (clip.frame_count - 1) / clip.fps - gaze.fixations[-1].timestamp
        if gap > 0.5:
            warnings.append(f"clip {clip.clip_id}: gaze ends {gap:.2f} s before the last frame")
    for w in warnings:
        logger.warning(w)
    return warnings


def resolve_frames(clip: ClipRef, indices: Sequence[int]) -> list[Frame]:
    """Load only the requested frames; ``timestamp = index / fps``."""
    frames = []
    for i in indices:
        if not 0 <= i < clip.frame_count:
            raise ValueError(f"clip {clip.clip_id}: frame index {i} outside [0, {clip.frame_count})")
        with Image.open(clip.frame_path(i)) as img:
            pixels = np.asarray(img.convert("RGB"), dtype=np.uint8)
        frames.append(Frame(pixels, i / clip.fps))
    return frames


@dataclass
class BenchmarkDir:
    """Accessor for a benchmark tree laid out as in the module docstring."""

    root: Path
    manifest_name: str = "manifest.jsonl"
    _clips: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.root = Path(self.root)

    @property
    def manifest_path(self) -> Path:
        return self.root / self.manifest_name

    def records(self) -> list[QuestionRecord]:
        return load_manifest(self.manifest_path)

    def clip_dir(self, clip_id: str) -> Path:
        return self.root / "clips" / clip_id

    def clip(self, clip_id: str) -> ClipRef:
        if clip_id not in self._clips:
            self._clips[clip_id] = load_clip(self.clip_dir(clip_id), clip_id)
        return self._clips[clip_id]

    def gaze(self, clip_id: str) -> GazeTrack:
        path = self.clip_dir(clip_id) / "gaze.csv"
        if not path.exists():
            return GazeTrack(clip_id)
        return load_gaze_track(path, clip_id)

    def masks_path(self, clip_id: str) -> Path:
        return self.clip_dir(clip_id) / "masks.json"


# --------------------------------------------------------------------------
# synthetic fixtures

_OBJECT_NAMES = [
    "lid", "pot with handle", "egg", "pan", "glass bowl", "white serving bowl",
    "knife", "cutting board", "spoon", "fork", "kettle", "mug", "plate", "sponge",
    "tap", "fridge door", "bottle of oil", "salt shaker", "wooden spatula",
    "tea towel", "colander", "whisk", "grater", "onion", "tomato", "jar lid",
    "drawer", "oven glove", "frying pan", "measuring cup",
]

BASE_QUESTION = "What object will the person interact with next, ignoring ongoing interactions?"


def _draw_frame(size, bg, objects, hand, t_frac):
    img = np.empty((size, size, 3), dtype=np.uint8)
    ramp = np.linspace(0, 40, size, dtype=np.float64)
    for c in range(3):
        img[:, :, c] = np.clip(bg[c] + ramp[None, :] * (0.5 + 0.5 * t_frac), 0, 255).astype(np.uint8)
    for (x0, y0, x1, y1), color in objects:
        img[y0:y1, x0:x1] = color
    hx, hy = hand
    img[max(hy - 2, 0):hy + 3, max(hx - 2, 0):hx + 3] = (230, 190, 160)
    return img


def _place_objects(rng, size, k, box=12):
    # grid cells keep objects disjoint
    cells = [(cx, cy) for cy in range(3) for cx in range(3)]
    chosen = rng.choice(len(cells), size=k, replace=False)
    step = size // 3
    rects = []
    for c in chosen:
        cx, cy = cells[int(c)]
        x0 = cx * step + int(rng.integers(1, step - box))
        y0 = cy * step + int(rng.integers(1, step - box))
        rects.append((x0, y0, x0 + box, y0 + box))
    return rects


def make_synthetic_suite(count: int, seed: int, out_dir, size: int = 64, fps: float = 3.0,
                         duration: float = 10.0, gaze_rate: float = 10.0) -> BenchmarkDir:
    """Write a small deterministic benchmark tree.

    Each question gets its own clip with five coloured boxes (one per
    candidate), a gaze track that drifts onto the correct box and ends there
    0.3 s before the final frame, and rectangle masks for the final frame.
    The same ``(count, seed, ...)`` always yields byte-identical files.
    """
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    out = Path(out_dir)
    (out / "clips").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    n_frames = int(round(duration * fps))
    records = []
    width = len(str(count - 1))
    for q in range(count):
        clip_id = f"clip{q:0{width}d}"
        names = rng.choice(len(_OBJECT_NAMES), size=NUM_CANDIDATES, replace=False)
        candidates = tuple(f"The {_OBJECT_NAMES[int(i)]}." for i in names)
        correct = int(rng.integers(NUM_CANDIDATES))
        rects = _place_objects(rng, size, NUM_CANDIDATES)
        colors = [tuple(int(v) for v in rng.integers(60, 256, size=3)) for _ in rects]
        bg = tuple(int(v) for v in rng.integers(0, 80, size=3))
        objects = list(zip(rects, colors))
        x0, y0, x1, y1 = rects[correct]
        target = ((x0 + x1 - 1) / 2 / (size - 1), (y0 + y1 - 1) / 2 / (size - 1))
        start = tuple(float(v) for v in rng.uniform(0.1, 0.9, size=2))

        clip_dir = out / "clips" / clip_id
        clip_dir.mkdir(exist_ok=True)
        (clip_dir / "meta.json").write_text(json.dumps({"fps": fps, "frame_count": n_frames}, sort_keys=True))
        for i in range(n_frames):
            frac = i / max(n_frames - 1, 1)
            hand = (
                int(round((start[0] + (target[0] - start[0]) * frac) * (size - 1))),
                int(round((1.0 - 0.5 * frac) * (size - 1))),
            )
            pixels = _draw_frame(size, bg, objects, hand, frac)
            Image.fromarray(pixels, "RGB").save(clip_dir / f"{i:06d}.png", format="PNG")

        t_end = (n_frames - 1) / fps - 0.3
        n_fix = int(t_end * gaze_rate) + 1
        fixations = []
        for j in range(n_fix):
            t = j / gaze_rate
            frac = min(1.0, t / max(t_end * 0.8, 1e-9))
            jitter = rng.normal(0.0, 0.02, size=2) * (1.0 - frac)
            x = start[0] + (target[0] - start[0]) * frac + jitter[0]
            y = start[1] + (target[1] - start[1]) * frac + jitter[1]
            fixations.append(GazeFixation(round(t, 4), float(np.clip(x, 0, 1)), float(np.clip(y, 0, 1))))
        write_gaze_track(GazeTrack(clip_id, tuple(fixations)), clip_dir / "gaze.csv")

        region_ids = rng.permutation(NUM_CANDIDATES) + 1
        regions = []
        for rid, (rx0, ry0, rx1, ry1) in zip(region_ids, rects):
            bm = np.zeros((size, size), dtype=bool)
            bm[ry0:ry1, rx0:rx1] = True
            regions.append(RegionMask.from_bitmap(int(rid), bm))
        save_masks_rle(MaskSet(size, size, tuple(regions)), clip_dir / "masks.json")

        records.append(QuestionRecord(f"q{q:0{width}d}", clip_id, BASE_QUESTION, candidates, correct))

    write_manifest(records, out / "manifest.jsonl")
    return BenchmarkDir(out)
