"""Render the visual cues for one synthetic clip and save them as PNGs."""

import tempfile
from pathlib import Path

import numpy as np
from PIL import Image

from gazesom.data import make_synthetic_suite, resolve_frames
from gazesom.masks import load_masks_rle
from gazesom.prompts import STRATEGIES
from gazesom.render import compose_cue_frames, select_window
from gazesom.sampling import SamplingConfig, draw_plan

out = Path(__file__).parent / "out"
out.mkdir(exist_ok=True)

# a one-question benchmark: five coloured boxes, a gaze track drifting onto the answer
bench = make_synthetic_suite(1, seed=3, out_dir=tempfile.mkdtemp(), size=128)
rec = bench.records()[0]
clip = bench.clip(rec.clip_id)
gaze = bench.gaze(rec.clip_id)
masks = load_masks_rle(bench.masks_path(rec.clip_id))
print(rec.candidates, "answer:", rec.candidates[rec.correct_index])

plan = draw_plan(clip.frame_count, SamplingConfig(lam=0.1, sample_size=6, seed=0))
frames = resolve_frames(clip, plan.frame_indices)
print("frames", plan.frame_indices, "gaze points", len(gaze))

# fixations visible on the final frame (newest last)
window = select_window(gaze, frames[-1].timestamp, 15)
print("trail on last frame:", len(window), "fixations")

for name in ("vllm_only", "som", "gaze", "som_gaze"):
    cue = compose_cue_frames(frames, gaze, masks, STRATEGIES[name])
    # a contact sheet: sampled frames side by side
    sheet = np.concatenate([f.pixels for f in cue], axis=1)
    Image.fromarray(sheet).save(out / f"{name}.png")
    changed = [not np.array_equal(a.pixels, b.pixels) for a, b in zip(frames, cue)]
    print(f"{name:<10} frames changed: {changed}")

print("wrote", sorted(p.name for p in out.glob("*.png")))
