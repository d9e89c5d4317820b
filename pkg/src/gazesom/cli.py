"""Command-line entry point.

Exit codes: 0 success, 1 validation or configuration error, 2 runtime
failure, 3 degraded run (more than half of a cell's questions failed).

Settings resolve as defaults < ``--config`` file (TOML or JSON, flat keys
named like the long flags with dashes turned into underscores) < flags.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import tempfile
from pathlib import Path

from PIL import Image

from . import __version__
from .backends import BACKEND_KINDS, Backend, BackendConfig
from .data import BenchmarkDir, GazeTrack, load_clip, load_gaze_track, load_manifest, make_synthetic_suite, resolve_frames
from .errors import ConfigError, FormatError, GazesomError, ToolMissingError, ValidationError
from .evaluator import (
    PRESETS,
    GridSpec,
    RunConfig,
    emit_report,
    load_report,
    preset,
    render_csv,
    render_markdown,
    question_seed,
    run_eval,
    run_grid,
)
from .masks import load_masks_rle
from .prompts import STRATEGIES, StrategyFlags, build_prompt
from .render import GazeOverlayConfig, SomOverlayConfig, compose_cue_frames
from .sampling import SamplingConfig, draw_plan

logger = logging.getLogger("gazesom")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_DEGRADED = 0, 1, 2, 3

DEFAULTS = {
    "seed": 0,
    "lam": 0.1,
    "n": 15,
    "fps": None,
    "strategy": "som_gaze",
    "backend": "mock_random",
    "endpoint": None,
    "model": "",
    "api_key_env": None,
    "temperature": 0.0,
    "timeout": 120.0,
    "max_retries": 3,
    "rpm": None,
    "encoder": "ffmpeg",
    "fixed_text": None,
    "script": None,
    "concurrency": 4,
    "cache_dir": None,
    "trace": None,
    "fixture_count": 20,
    "window": 15,
    "alpha": 0.05,
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


def _float_list(text):
    out = []
    for tok in text.split(","):
        tok = tok.strip()
        if "/" in tok:
            num, den = tok.split("/")
            out.append(float(num) / float(den))
        else:
            out.append(float(tok))
    return tuple(out)


def _int_list(text):
    return tuple(int(t) for t in text.split(","))


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", type=Path, help="TOML or JSON settings file")
    common.add_argument("--dump-config", action="store_true", help="print the resolved settings and exit")
    common.add_argument("--json", action="store_true", dest="json_errors", help="emit errors as JSON on stderr")
    common.add_argument("-v", "--verbose", action="store_true")
    common.add_argument("--seed", type=int, default=None)

    backend = _Parser(add_help=False)
    backend.add_argument("--backend", choices=BACKEND_KINDS, default=None)
    backend.add_argument("--endpoint", default=None)
    backend.add_argument("--model", default=None)
    backend.add_argument("--api-key-env", default=None)
    backend.add_argument("--temperature", type=float, default=None)
    backend.add_argument("--timeout", type=float, default=None)
    backend.add_argument("--max-retries", type=int, default=None)
    backend.add_argument("--rpm", type=float, default=None, help="requests per minute")
    backend.add_argument("--encoder", default=None, help="video encoder binary (video_fps)")
    backend.add_argument("--fixed-text", default=None, help="reply of mock_fixed")
    backend.add_argument("--script", default=None,
                         help="mock_scripted: JSON file {question_id: reply}, or 'oracle'")
    backend.add_argument("--concurrency", type=int, default=None)
    backend.add_argument("--cache-dir", default=None)
    backend.add_argument("--trace", default=None, help="append JSON-lines run events here")
    backend.add_argument("--bench", type=Path, default=None,
                         help="benchmark directory (default: a fresh synthetic suite)")
    backend.add_argument("--fixture-count", type=int, default=None)
    backend.add_argument("--out", type=Path, default=None, help="report path (format from suffix)")

    p = _Parser(prog="gazesom", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("fixtures", parents=[common], help="write a synthetic benchmark tree")
    s.add_argument("--count", type=int, required=True)
    s.add_argument("--out", type=Path, required=True)
    s.add_argument("--size", type=int, default=64)
    s.add_argument("--clip-fps", type=float, default=3.0)

    s = sub.add_parser("sample", parents=[common], help="print a frame sampling plan as JSON")
    s.add_argument("--frames", type=int, required=True, help="clip length in frames")
    s.add_argument("--lambda", dest="lam", type=float, default=None)
    s.add_argument("--n", type=int, default=None)

    s = sub.add_parser("render", parents=[common], help="write cue-composited frames as PNG")
    s.add_argument("--clip", required=True, help="clip id (with --bench) or clip directory")
    s.add_argument("--bench", type=Path, default=None)
    s.add_argument("--strategy", choices=list(STRATEGIES), default=None)
    s.add_argument("--lambda", dest="lam", type=float, default=None)
    s.add_argument("--n", type=int, default=None)
    s.add_argument("--all-frames", action="store_true", help="render every frame instead of a sampled plan")
    s.add_argument("--window", type=int, default=None)
    s.add_argument("--alpha", type=float, default=None)
    s.add_argument("--out", type=Path, required=True)

    s = sub.add_parser("prompt", parents=[common], help="print the prompt for one question")
    s.add_argument("--manifest", type=Path, required=True)
    s.add_argument("--id", required=True)
    s.add_argument("--strategy", choices=list(STRATEGIES), default=None)

    s = sub.add_parser("run", parents=[common, backend], help="evaluate one configuration")
    s.add_argument("--strategy", choices=list(STRATEGIES), default=None)
    s.add_argument("--lambda", dest="lam", type=float, default=None)
    s.add_argument("--n", type=int, default=None)
    s.add_argument("--fps", type=float, default=None)

    s = sub.add_parser("grid", parents=[common, backend], help="evaluate an ablation grid")
    s.add_argument("--preset", choices=sorted(PRESETS), default=None)
    s.add_argument("--strategies", default=None, help="comma-separated strategy names")
    s.add_argument("--lambdas", type=_float_list, default=None, help="e.g. 0,1/100,1/10")
    s.add_argument("--sizes", type=_int_list, default=None)
    s.add_argument("--fps-list", type=_float_list, default=None)

    s = sub.add_parser("report", parents=[common], help="convert a JSON report")
    s.add_argument("--in", dest="src", type=Path, required=True)
    s.add_argument("--format", choices=["json", "csv", "markdown"], required=True)
    s.add_argument("--out", type=Path, default=None, help="default: standard output")
    return p


def _load_config_file(path: Path) -> dict:
    text = path.read_text()
    if path.suffix == ".toml":
        try:
            import tomllib
        except ModuleNotFoundError:  # Python < 3.11
            import tomli as tomllib
        return tomllib.loads(text)
    return json.loads(text)


def resolve_settings(args: argparse.Namespace) -> dict:
    settings = dict(DEFAULTS)
    if args.config is not None:
        try:
            file_cfg = _load_config_file(args.config)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
        unknown = set(file_cfg) - set(DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        settings.update(file_cfg)
    for k, v in vars(args).items():
        if k in DEFAULTS and v is not None:
            settings[k] = v
    return settings


def _backend_config(st: dict, records=None, fps=None) -> BackendConfig:
    script = st["script"]
    if st["backend"] == "mock_scripted":
        if script == "oracle":
            if records is None:
                raise ConfigError("--script oracle needs a benchmark manifest")
            script = {r.id: r.candidates[r.correct_index] for r in records}
        elif script is not None:
            script = json.loads(Path(script).read_text())
    return BackendConfig(
        kind=st["backend"],
        endpoint=st["endpoint"],
        model_id=st["model"],
        api_key_env=st["api_key_env"],
        temperature=st["temperature"],
        timeout=st["timeout"],
        max_retries=st["max_retries"],
        requests_per_minute=st["rpm"],
        fps=fps if st["backend"] == "video_fps" else None,
        seed=st["seed"],
        encoder=st["encoder"],
        fixed_text=st["fixed_text"],
        script=script,
    )


def _bench(args, st) -> BenchmarkDir:
    if args.bench is not None:
        return BenchmarkDir(args.bench)
    tmp = Path(tempfile.mkdtemp(prefix="gazesom-suite-"))
    logger.warning("no --bench given; generating a %d-question synthetic suite in %s",
                   st["fixture_count"], tmp)
    return make_synthetic_suite(st["fixture_count"], st["seed"], tmp)


def _write_report(report, out):
    if out is None:
        print(json.dumps(report.to_json(), indent=2, sort_keys=True))
        return
    fmt = {".csv": "csv", ".md": "markdown"}.get(out.suffix, "json")
    emit_report(report, fmt, out)
    logger.info("wrote %s", out)


def _cmd_fixtures(args, st):
    bench = make_synthetic_suite(args.count, st["seed"], args.out, size=args.size, fps=args.clip_fps)
    print(bench.manifest_path)
    return EXIT_OK


def _cmd_sample(args, st):
    plan = draw_plan(args.frames, SamplingConfig(st["lam"], st["n"], st["seed"]))
    print(json.dumps(plan.to_dict()))
    return EXIT_OK


def _cmd_render(args, st):
    strategy = StrategyFlags.from_name(st["strategy"])
    gaze_cfg = GazeOverlayConfig(window=st["window"])
    som_cfg = SomOverlayConfig(fill_alpha=st["alpha"], palette_seed=st["seed"])
    if args.bench is not None:
        bench = BenchmarkDir(args.bench)
        clip = bench.clip(args.clip)
        gaze = bench.gaze(args.clip)
        masks_path = bench.masks_path(args.clip)
    else:
        clip = load_clip(args.clip)
        gaze_path = clip.frames_dir / "gaze.csv"
        gaze = load_gaze_track(gaze_path, clip.clip_id) if gaze_path.exists() else GazeTrack(clip.clip_id)
        masks_path = clip.frames_dir / "masks.json"
    if args.all_frames:
        indices = list(range(clip.frame_count))
    else:
        cfg = SamplingConfig(st["lam"], st["n"], question_seed(st["seed"], clip.clip_id))
        indices = list(draw_plan(clip.frame_count, cfg).frame_indices)
    masks = load_masks_rle(masks_path) if strategy.som else None
    frames = resolve_frames(clip, indices)
    cue = compose_cue_frames(frames, gaze, masks, strategy, gaze_cfg, som_cfg)
    args.out.mkdir(parents=True, exist_ok=True)
    for idx, frame in zip(indices, cue):
        Image.fromarray(frame.pixels, "RGB").save(args.out / f"{idx:06d}.png")
    print(json.dumps({"clip": clip.clip_id, "indices": indices, "out": str(args.out)}))
    return EXIT_OK


def _cmd_prompt(args, st):
    records = {r.id: r for r in load_manifest(args.manifest)}
    if args.id not in records:
        raise ValidationError(f"no question with id {args.id!r} in {args.manifest}")
    print(build_prompt(records[args.id], StrategyFlags.from_name(st["strategy"])).text)
    return EXIT_OK


def _run_config(st, backend_cfg, sampling, fps):
    return RunConfig(
        strategy=StrategyFlags.from_name(st["strategy"]),
        backend=backend_cfg,
        sampling=sampling,
        fps=fps,
        seed=st["seed"],
        concurrency=st["concurrency"],
        cache_dir=Path(st["cache_dir"]) if st["cache_dir"] else None,
        gaze=GazeOverlayConfig(window=st["window"]),
        som=SomOverlayConfig(fill_alpha=st["alpha"], palette_seed=st["seed"]),
        trace_path=Path(st["trace"]) if st["trace"] else None,
    )


def _cmd_run(args, st):
    bench = _bench(args, st)
    records = bench.records()
    fps = st["fps"]
    sampling = None if fps is not None else SamplingConfig(st["lam"], st["n"], 0)
    rc = _run_config(st, _backend_config(st, records, fps), sampling, fps)
    backend = Backend(rc.backend, trace_path=rc.trace_path)
    report = run_eval(bench, rc, records=records, backend=backend)
    _write_report(report, args.out)
    return EXIT_DEGRADED if report.degraded else EXIT_OK


def _grids(args):
    if args.preset:
        if any(v is not None for v in (args.strategies, args.lambdas, args.sizes, args.fps_list)):
            raise ConfigError("--preset cannot be combined with explicit axes")
        return preset(args.preset)
    strategies = tuple(args.strategies.split(",")) if args.strategies else tuple(STRATEGIES)
    if args.fps_list:
        return (GridSpec(strategies, fps=args.fps_list),)
    return (GridSpec(strategies, args.lambdas or (0.1,), args.sizes or (15,)),)


def _cmd_grid(args, st):
    grids = _grids(args)
    video = grids[0].video_mode
    if any(g.video_mode != video for g in grids):
        raise ConfigError("cannot mix fps and sampler grids in one run")
    bench = _bench(args, st)
    records = bench.records()
    first_fps = grids[0].fps[0] if video else None
    bcfg = _backend_config(st, records, first_fps)
    sampling = None if video else SamplingConfig(grids[0].lambdas[0], grids[0].sample_sizes[0], 0)
    base = _run_config(st, bcfg, sampling, first_fps)
    report = run_grid(bench, grids, base, records=records)
    _write_report(report, args.out)
    return EXIT_DEGRADED if report.degraded else EXIT_OK


def _cmd_report(args, st):
    report = load_report(args.src)
    if args.out is None:
        if args.format == "markdown":
            sys.stdout.write(render_markdown(report))
        elif args.format == "csv":
            sys.stdout.write(render_csv(report))
        else:
            print(json.dumps(report.to_json(), indent=2, sort_keys=True))
        return EXIT_OK
    emit_report(report, args.format, args.out)
    return EXIT_OK


COMMANDS = {
    "fixtures": _cmd_fixtures,
    "sample": _cmd_sample,
    "render": _cmd_render,
    "prompt": _cmd_prompt,
    "run": _cmd_run,
    "grid": _cmd_grid,
    "report": _cmd_report,
}


def _fail(args, code, exc):
    if getattr(args, "json_errors", False):
        sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc), "exit_code": code}) + "\n")
    else:
        sys.stderr.write(f"error: {exc}\n")
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        sys.stderr.write(f"{exc}\n")
        return EXIT_CONFIG
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        st = resolve_settings(args)
    except ConfigError as exc:
        return _fail(args, EXIT_CONFIG, exc)
    if args.dump_config:
        print(json.dumps({"command": args.command, **st}, sort_keys=True, default=str))
        return EXIT_OK
    try:
        return COMMANDS[args.command](args, st)
    except (ConfigError, ValidationError, FormatError, ValueError, ToolMissingError) as exc:
        return _fail(args, EXIT_CONFIG, exc)
    except (GazesomError, OSError) as exc:
        return _fail(args, EXIT_RUNTIME, exc)


if __name__ == "__main__":
    sys.exit(main())
