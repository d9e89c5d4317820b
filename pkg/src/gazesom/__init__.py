"""Gaze-trail and Set-of-Mark visual prompting for next-object anticipation with VLLMs."""

__version__ = "0.1.0"

from .sampling import SamplingConfig, SamplingPlan, compute_weights, draw_plan, plan_to_timestamps
from .frame import Frame, pixel_digest
from .prompts import STRATEGIES, StrategyFlags, build_prompt, parse_answer
from .masks import MaskSet, RegionMask, load_masks_indexed_image, load_masks_rle
from .data import (
    BenchmarkDir,
    ClipRef,
    GazeFixation,
    GazeTrack,
    QuestionRecord,
    load_gaze_track,
    load_manifest,
    make_synthetic_suite,
    resolve_frames,
)
from .render import (
    GazeOverlayConfig,
    SomOverlayConfig,
    apply_som_overlay,
    compose_cue_frames,
    render_gaze_trail,
)
from .backends import Backend, BackendConfig
from .evaluator import GridSpec, Report, RunConfig, preset, run_eval, run_grid
