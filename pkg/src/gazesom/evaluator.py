"""End-to-end evaluation: per-question pipeline, response cache, grids and reports."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import os
import tempfile
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from fractions import Fraction
from itertools import product
from pathlib import Path
from typing import Callable, Optional, Sequence

from . import __version__
from .backends import Backend, BackendConfig
from .data import BenchmarkDir, ClipRef, GazeTrack, QuestionRecord, resolve_frames
from .errors import ConfigError, GazesomError
from .masks import MaskSet, fetch_masks_remote, load_masks_rle
from .prompts import STRATEGIES, StrategyFlags, build_prompt, parse_answer
from .render import GazeOverlayConfig, SomOverlayConfig, compose_cue_frames
from .sampling import SamplingConfig, draw_plan

logger = logging.getLogger(__name__)

__all__ = [
    "RunConfig",
    "Prediction",
    "Cell",
    "Report",
    "GridSpec",
    "PRESETS",
    "preset",
    "ResponseCache",
    "FileMaskProvider",
    "RemoteMaskProvider",
    "question_seed",
    "cache_key",
    "run_question",
    "run_eval",
    "run_grid",
    "emit_report",
    "load_report",
    "render_markdown",
    "render_csv",
]

STRATEGY_LABELS = {
    "vllm_only": "VLLM only",
    "som": "SoM",
    "gaze": "Gaze",
    "som_gaze": "SoM + Gaze",
}


def question_seed(run_seed: int, question_id: str) -> int:
    """64-bit sampling seed for one question, independent of scheduling order."""
    digest = hashlib.sha256(f"{run_seed}\x00{question_id}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


def cache_key(question_id: str, prompt: str, image_digests: Sequence[str], backend_identity: dict) -> str:
    """Content address of one inference request.

    Configuration that does not reach the model (e.g. the sampler's lambda)
    is deliberately absent: two configs producing the same frames share a key.
    """
    payload = json.dumps(
        {
            "question": question_id,
            "prompt": prompt,
            "images": list(image_digests),
            "backend": backend_identity,
        },
        sort_keys=True,
        separators=(",", ":"),
    )
    return hashlib.sha256(payload.encode()).hexdigest()


class ResponseCache:
    """Key -> JSON response store. Files are written atomically; ``root=None`` keeps it in memory."""

    def __init__(self, root=None):
        self.root = Path(root) if root is not None else None
        self._mem: dict[str, dict] = {}
        self._lock = threading.Lock()
        if self.root is not None:
            self.root.mkdir(parents=True, exist_ok=True)

    def _path(self, key: str) -> Path:
        return self.root / key[:2] / f"{key}.json"

    def get(self, key: str) -> Optional[dict]:
        if self.root is None:
            with self._lock:
                return self._mem.get(key)
        try:
            return json.loads(self._path(key).read_text())
        except FileNotFoundError:
            return None

    def put(self, key: str, value: dict) -> None:
        if self.root is None:
            with self._lock:
                self._mem[key] = value
            return
        path = self._path(key)
        path.parent.mkdir(exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
        with os.fdopen(fd, "w") as fh:
            json.dump(value, fh)
        os.replace(tmp, path)


class FileMaskProvider:
    """Reads ``clips/<clip_id>/masks.json`` from a benchmark tree."""

    def __init__(self, bench: BenchmarkDir):
        self.bench = bench
        self.calls = 0
        self._lock = threading.Lock()

    def __call__(self, record: QuestionRecord, clip: ClipRef, final_frame) -> MaskSet:
        with self._lock:
            self.calls += 1
        return load_masks_rle(self.bench.masks_path(clip.clip_id))


class RemoteMaskProvider:
    def __init__(self, endpoint: str, timeout: float = 30.0, rate_limiter=None):
        self.endpoint = endpoint
        self.timeout = timeout
        self.rate_limiter = rate_limiter

    def __call__(self, record, clip, final_frame) -> MaskSet:
        return fetch_masks_remote(self.endpoint, final_frame, self.timeout, rate_limiter=self.rate_limiter)


@dataclass(frozen=True)
class RunConfig:
    """One grid cell's worth of settings.

    Exactly one of ``sampling`` (explicit frame selection) and ``fps``
    (whole-video backends) is set. ``sampling.seed`` is ignored; per-question
    seeds come from ``seed``.
    """

    strategy: StrategyFlags
    backend: BackendConfig
    sampling: Optional[SamplingConfig] = None
    fps: Optional[float] = None
    seed: int = 0
    concurrency: int = 4
    cache_dir: Optional[Path] = None
    gaze: GazeOverlayConfig = GazeOverlayConfig()
    som: SomOverlayConfig = SomOverlayConfig()
    trace_path: Optional[Path] = None

    def __post_init__(self):
        if (self.sampling is None) == (self.fps is None):
            raise ConfigError("set exactly one of sampling and fps")
        if self.backend.kind == "frame_list" and self.sampling is None:
            raise ConfigError("frame_list backends need a sampling config")
        if self.backend.kind == "video_fps":
            if self.fps is None:
                raise ConfigError("video_fps backends are driven by fps, not a sampler")
            if self.fps != self.backend.fps:
                raise ConfigError(f"run fps {self.fps} disagrees with backend fps {self.backend.fps}")
        if self.concurrency < 1:
            raise ConfigError("concurrency must be >= 1")

    @property
    def video_mode(self) -> bool:
        return self.fps is not None


@dataclass
class Prediction:
    question_id: str
    chosen_index: Optional[int]
    raw_text: str
    correct: bool
    cache_hit: bool = False
    latency: float = 0.0
    error: Optional[str] = None

    @property
    def abstained(self) -> bool:
        return self.error is None and self.chosen_index is None

    @property
    def failed(self) -> bool:
        return self.error is not None


class _Tracer:
    def __init__(self, path):
        self.path = Path(path) if path else None
        self._lock = threading.Lock()

    def __call__(self, event: str, **fields):
        if self.path is None:
            return
        line = json.dumps({"t": time.time(), "event": event, **fields})
        with self._lock, open(self.path, "a", encoding="utf-8") as fh:
            fh.write(line + "\n")


def run_question(record: QuestionRecord, clip: ClipRef, gaze: GazeTrack, masks_provider,
                 runconfig: RunConfig, backend: Backend, cache: Optional[ResponseCache] = None,
                 trace: Callable = lambda *a, **k: None) -> Prediction:
    """sample -> resolve -> cue -> prompt -> infer -> parse, for one question.

    Any stage error is captured in ``Prediction.error`` and scored incorrect.
    """
    trace("question_started", question=record.id)
    try:
        if runconfig.video_mode:
            indices = range(clip.frame_count)
        else:
            cfg = replace(runconfig.sampling, seed=question_seed(runconfig.seed, record.id))
            indices = draw_plan(clip.frame_count, cfg).frame_indices
        frames = resolve_frames(clip, indices)
        masks = masks_provider(record, clip, frames[-1]) if runconfig.strategy.som else None
        cue = compose_cue_frames(frames, gaze, masks, runconfig.strategy, runconfig.gaze, runconfig.som)
        prompt = build_prompt(record, runconfig.strategy)
        key = cache_key(record.id, prompt.text, [f.digest() for f in cue], backend.config.identity())
        hit = cache.get(key) if cache is not None else None
        if hit is not None:
            text, latency, cache_hit = hit["text"], 0.0, True
            trace("cache_hit", question=record.id, key=key)
        else:
            if backend.config.is_mock:
                resp = backend.mock_infer(prompt.text, record)
            elif runconfig.video_mode:
                resp = backend.infer_video(prompt.text, cue, clip.fps)
            else:
                resp = backend.infer_frames(prompt.text, cue)
            text, latency, cache_hit = resp.text, resp.latency, False
            if resp.attempt_count > 1:
                trace("retried", question=record.id, attempts=resp.attempt_count)
            if cache is not None:
                cache.put(key, {"text": text, "question": record.id})
    except (GazesomError, OSError, ValueError) as exc:
        logger.warning("question %s failed: %s", record.id, exc)
        trace("question_failed", question=record.id, error=str(exc))
        return Prediction(record.id, None, "", False, error=f"{type(exc).__name__}: {exc}")
    chosen = parse_answer(text, record.candidates)
    pred = Prediction(record.id, chosen, text, chosen == record.correct_index, cache_hit, latency)
    trace("question_finished", question=record.id, chosen=chosen, correct=pred.correct)
    return pred


# --------------------------------------------------------------------------
# reports


@dataclass
class Cell:
    strategy: str
    lam: Optional[float]
    n: Optional[int]
    fps: Optional[float]
    correct_count: int
    total: int
    abstain_count: int
    failure_count: int = 0

    @property
    def accuracy(self) -> float:
        return self.correct_count / self.total if self.total else 0.0

    @property
    def degraded(self) -> bool:
        return self.failure_count * 2 > self.total

    @property
    def key(self) -> tuple:
        axis = self.fps if self.fps is not None else self.lam
        return (self.strategy, axis, self.n)

    def to_json(self) -> dict:
        d = asdict(self)
        d["accuracy"] = self.accuracy
        d["degraded"] = self.degraded
        return d

    @classmethod
    def from_json(cls, d: dict) -> "Cell":
        fields_ = ("strategy", "lam", "n", "fps", "correct_count", "total", "abstain_count", "failure_count")
        return cls(**{k: d.get(k) for k in fields_})


@dataclass
class Report:
    cells: list[Cell]
    metadata: dict = field(default_factory=dict)
    predictions: dict = field(default_factory=dict, repr=False, compare=False)

    def cell(self, strategy: str, axis, n=None) -> Cell:
        for c in self.cells:
            if c.key == (strategy, axis, n):
                return c
        raise KeyError((strategy, axis, n))

    @property
    def degraded(self) -> bool:
        return any(c.degraded for c in self.cells)

    def to_json(self) -> dict:
        return {"cells": [c.to_json() for c in self.cells], "metadata": self.metadata}

    def comparable(self) -> dict:
        """JSON form without wall-clock fields, for determinism checks."""
        d = self.to_json()
        d["metadata"] = {k: v for k, v in d["metadata"].items() if k not in ("started_at", "finished_at")}
        return d


def _evaluate_cell(bench: BenchmarkDir, records, runconfig: RunConfig, backend: Backend,
                   cache, masks_provider, tracer) -> tuple[Cell, list[Prediction]]:
    def one(rec: QuestionRecord) -> Prediction:
        try:
            clip = bench.clip(rec.clip_id)
            gaze = bench.gaze(rec.clip_id) if runconfig.strategy.gaze else GazeTrack(rec.clip_id)
        except (GazesomError, OSError, ValueError, KeyError) as exc:
            return Prediction(rec.id, None, "", False, error=f"{type(exc).__name__}: {exc}")
        return run_question(rec, clip, gaze, masks_provider, runconfig, backend, cache, tracer)

    if runconfig.concurrency == 1:
        preds = [one(r) for r in records]
    else:
        with ThreadPoolExecutor(max_workers=runconfig.concurrency) as pool:
            by_id = dict(zip((r.id for r in records), pool.map(one, records)))
        preds = [by_id[r.id] for r in records]

    cell = Cell(
        strategy=runconfig.strategy.name,
        lam=runconfig.sampling.lam if runconfig.sampling else None,
        n=runconfig.sampling.sample_size if runconfig.sampling else None,
        fps=runconfig.fps,
        correct_count=sum(p.correct for p in preds),
        total=len(preds),
        abstain_count=sum(p.abstained for p in preds),
        failure_count=sum(p.failed for p in preds),
    )
    if cell.degraded:
        logger.error("cell %s degraded: %d/%d questions failed", cell.key, cell.failure_count, cell.total)
    return cell, preds


def _metadata(runconfig: RunConfig, backend: Backend) -> dict:
    return {
        "seed": runconfig.seed,
        "backend": backend.config.identity(),
        "version": __version__,
    }


def _prepare(bench, runconfig, backend, masks_provider, cache, records):
    bench = bench if isinstance(bench, BenchmarkDir) else BenchmarkDir(bench)
    records = list(records) if records is not None else bench.records()
    if not records:
        raise ValueError("manifest is empty")
    backend = backend or Backend(runconfig.backend, trace_path=runconfig.trace_path)
    masks_provider = masks_provider or FileMaskProvider(bench)
    if cache is None:
        cache = ResponseCache(runconfig.cache_dir)
    return bench, records, backend, masks_provider, cache


def run_eval(bench, runconfig: RunConfig, *, records: Optional[Sequence[QuestionRecord]] = None,
             backend: Optional[Backend] = None, masks_provider=None, cache=None) -> Report:
    """Evaluate every question once and report a single accuracy cell."""
    bench, records, backend, masks_provider, cache = _prepare(
        bench, runconfig, backend, masks_provider, cache, records
    )
    started = time.time()
    cell, preds = _evaluate_cell(bench, records, runconfig, backend, cache, masks_provider,
                                 _Tracer(runconfig.trace_path))
    meta = _metadata(runconfig, backend)
    meta.update(started_at=started, finished_at=time.time(), degraded=cell.degraded)
    return Report([cell], meta, {str(cell.key): preds})


# --------------------------------------------------------------------------
# grids


@dataclass(frozen=True)
class GridSpec:
    """Cartesian axes. Use ``lambdas`` with ``sample_sizes`` or ``fps``, not both."""

    strategies: tuple[str, ...]
    lambdas: tuple[float, ...] = ()
    sample_sizes: tuple[int, ...] = ()
    fps: tuple[float, ...] = ()

    def __post_init__(self):
        for s in self.strategies:
            StrategyFlags.from_name(s)
        if not self.strategies:
            raise ConfigError("grid needs at least one strategy")
        sampler = bool(self.lambdas) or bool(self.sample_sizes)
        if sampler == bool(self.fps):
            raise ConfigError("grid needs either lambda/sample-size axes or an fps axis")
        if sampler and not (self.lambdas and self.sample_sizes):
            raise ConfigError("sampler grids need both lambda and sample-size axes")

    @property
    def video_mode(self) -> bool:
        return bool(self.fps)

    def combos(self):
        if self.video_mode:
            for s, f in product(self.strategies, self.fps):
                yield s, None, None, f
        else:
            for s, n, lam in product(self.strategies, self.sample_sizes, self.lambdas):
                yield s, lam, n, None

    def __len__(self):
        return sum(1 for _ in self.combos())


TABLE_LAMBDAS = (0.0, 1 / 100, 1 / 50, 1 / 25, 1 / 10, 1.0)
ALL_STRATEGIES = tuple(STRATEGIES)

PRESETS = {
    # frame-list model: standard setting vs the full pipeline at its best setting
    "table1": (
        GridSpec(("vllm_only",), (0.0,), (8,)),
        GridSpec(("som_gaze",), (1 / 10,), (15,)),
    ),
    "table1_video": (GridSpec(("vllm_only", "som_gaze"), fps=(2.0,)),),
    "table2": (GridSpec(ALL_STRATEGIES, TABLE_LAMBDAS, (15,)),),
    "table3": (GridSpec(("som_gaze",), TABLE_LAMBDAS, (5, 10, 15, 20, 25, 30)),),
    "table4": (GridSpec(ALL_STRATEGIES, fps=(1.0, 2.0, 4.0, 8.0, 16.0)),),
}


def preset(name: str) -> tuple[GridSpec, ...]:
    try:
        return PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; expected one of {sorted(PRESETS)}") from None


def run_grid(bench, grids, base: RunConfig, *, records=None, backend_factory=None,
             masks_provider=None, cache=None) -> Report:
    """Evaluate every cell of one or more grids sequentially, sharing one response cache.

    ``backend_factory(config)`` builds a backend per distinct config (the fps
    axis changes the backend); it defaults to :class:`Backend`.
    """
    if isinstance(grids, GridSpec):
        grids = (grids,)
    grids = tuple(grids)
    if not grids:
        raise ConfigError("no grid axes given")
    bench = bench if isinstance(bench, BenchmarkDir) else BenchmarkDir(bench)
    records = list(records) if records is not None else bench.records()
    if not records:
        raise ValueError("manifest is empty")
    masks_provider = masks_provider or FileMaskProvider(bench)
    cache = cache if cache is not None else ResponseCache(base.cache_dir)
    backend_factory = backend_factory or (lambda cfg: Backend(cfg, trace_path=base.trace_path))
    backends: dict[BackendConfig, Backend] = {}
    tracer = _Tracer(base.trace_path)

    started = time.time()
    cells, preds = [], {}
    for grid in grids:
        for strategy, lam, n, fps in grid.combos():
            bcfg = base.backend
            if fps is not None and bcfg.kind == "video_fps":
                bcfg = replace(bcfg, fps=fps)
            if bcfg not in backends:
                backends[bcfg] = backend_factory(bcfg)
            sampling = None
            if lam is not None:
                sampling = SamplingConfig(lam, n, 0)
            rc = replace(base, strategy=StrategyFlags.from_name(strategy), sampling=sampling,
                         fps=fps, backend=bcfg)
            logger.info("cell strategy=%s lambda=%s n=%s fps=%s", strategy, lam, n, fps)
            cell, p = _evaluate_cell(bench, records, rc, backends[bcfg], cache, masks_provider, tracer)
            cells.append(cell)
            preds[str(cell.key)] = p
    meta = {
        "seed": base.seed,
        "backend": base.backend.identity(),
        "version": __version__,
        "started_at": started,
        "finished_at": time.time(),
    }
    meta["degraded"] = any(c.degraded for c in cells)
    return Report(cells, meta, preds)


# --------------------------------------------------------------------------
# emitters


def _fmt_lambda(lam: float) -> str:
    if lam in (0, 1):
        return f"λ={int(lam)}"
    frac = Fraction(lam).limit_denominator(1000)
    return f"λ={frac.numerator}/{frac.denominator}"


def render_markdown(report: Report) -> str:
    """Strategies (or sample sizes) as rows, lambda or fps as columns."""
    if not report.cells:
        raise ValueError("report has no cells")
    video = any(c.fps is not None for c in report.cells)
    cols = []
    for c in report.cells:
        v = c.fps if video else c.lam
        if v not in cols:
            cols.append(v)
    strategies = list(dict.fromkeys(c.strategy for c in report.cells))
    sizes = list(dict.fromkeys(c.n for c in report.cells))
    rows = list(dict.fromkeys((c.strategy, c.n) for c in report.cells))

    def label(row):
        s, n = row
        if len(sizes) <= 1:
            return STRATEGY_LABELS[s]
        if len(strategies) == 1:
            return f"n={n}"
        return f"{STRATEGY_LABELS[s]}, n={n}"

    first = "Strategy" if len(sizes) <= 1 or len(strategies) > 1 else "Sample size"
    head = [first] + [f"{v:g} fps" if video else _fmt_lambda(v) for v in cols]
    lines = ["| " + " | ".join(head) + " |", "|" + "|".join(["---"] + [":---:"] * len(cols)) + "|"]
    index = {(c.strategy, c.n, c.fps if video else c.lam): c for c in report.cells}
    for row in rows:
        vals = []
        for v in cols:
            c = index.get((row[0], row[1], v))
            vals.append(f"{c.accuracy:.3f}" if c else "")
        lines.append("| " + " | ".join([label(row)] + vals) + " |")
    return "\n".join(lines) + "\n"


_CSV_FIELDS = ["strategy", "lambda", "n", "fps", "accuracy", "correct_count", "total",
               "abstain_count", "failure_count"]


def render_csv(report: Report) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(_CSV_FIELDS)
    for c in report.cells:
        w.writerow([c.strategy, "" if c.lam is None else repr(c.lam), "" if c.n is None else c.n,
                    "" if c.fps is None else repr(c.fps), repr(c.accuracy), c.correct_count,
                    c.total, c.abstain_count, c.failure_count])
    return buf.getvalue()


def emit_report(report: Report, fmt: str, path) -> Path:
    """Write ``report`` as ``json`` (canonical), ``csv`` (one row per cell) or ``markdown``."""
    if not report.cells:
        raise ValueError("refusing to write a report with no cells")
    if fmt == "json":
        text = json.dumps(report.to_json(), indent=2, sort_keys=True)
    elif fmt == "csv":
        text = render_csv(report)
    elif fmt in ("markdown", "md"):
        text = render_markdown(report)
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    path = Path(path)
    path.write_text(text, encoding="utf-8")
    return path


def load_report(path) -> Report:
    """Read a JSON or CSV report back (CSV carries no metadata)."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if path.suffix == ".csv":
        cells = []
        for row in csv.DictReader(io.StringIO(text)):
            cells.append(Cell(
                strategy=row["strategy"],
                lam=float(row["lambda"]) if row["lambda"] else None,
                n=int(row["n"]) if row["n"] else None,
                fps=float(row["fps"]) if row["fps"] else None,
                correct_count=int(row["correct_count"]),
                total=int(row["total"]),
                abstain_count=int(row["abstain_count"]),
                failure_count=int(row["failure_count"]),
            ))
        return Report(cells, {})
    doc = json.loads(text)
    return Report([Cell.from_json(c) for c in doc["cells"]], doc.get("metadata", {}))
