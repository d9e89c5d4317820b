"""Inference backends behind a single interface.

Three families are supported:

``frame_list``
    OpenAI-style multimodal chat completions. One user message carries the
    frames as ``image_url`` parts (PNG data URLs, in order) followed by the
    prompt text.
``video_fps``
    For providers that only take a whole video. Frames are decimated to the
    target rate, encoded with an external encoder, uploaded
    (``POST {endpoint}/upload``) and then queried (``POST {endpoint}/generate``).
``mock_fixed`` / ``mock_random`` / ``mock_scripted``
    Deterministic offline stand-ins used for tests and harness checks.

The encoder is invoked as::

    ffmpeg -y -loglevel error -framerate <fps> -start_number 0 -i <dir>/%06d.png
           -c:v libx264 -pix_fmt yuv420p <dir>/clip.mp4
"""

from __future__ import annotations

import base64
import hashlib
import io
import json
import logging
import math
import os
import random
import shutil
import subprocess
import tempfile
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Optional, Sequence

import requests
from PIL import Image

from .errors import (
    AuthError,
    BackendError,
    ConfigError,
    FormatError,
    RetriesExhausted,
    RetryableError,
    ToolMissingError,
)
from .frame import Frame

logger = logging.getLogger(__name__)

__all__ = [
    "BackendConfig",
    "InferenceResponse",
    "Backend",
    "TokenBucket",
    "RequestsTransport",
    "TransportResponse",
    "backoff_schedule",
    "decimate_indices",
    "encoder_command",
    "BACKEND_KINDS",
    "MOCK_KINDS",
]

MOCK_KINDS = ("mock_fixed", "mock_random", "mock_scripted")
BACKEND_KINDS = ("frame_list", "video_fps") + MOCK_KINDS


@dataclass(frozen=True)
class BackendConfig:
    kind: str
    endpoint: Optional[str] = None
    model_id: str = ""
    api_key_env: Optional[str] = None
    temperature: float = 0.0
    timeout: float = 120.0
    max_retries: int = 3
    requests_per_minute: Optional[float] = None
    fps: Optional[float] = None
    base_delay: float = 1.0
    max_delay: float = 60.0
    seed: int = 0
    encoder: str = "ffmpeg"
    fixed_text: Optional[str] = None
    script: Optional[Mapping[str, str]] = field(default=None, hash=False)

    def __post_init__(self):
        if self.kind not in BACKEND_KINDS:
            raise ConfigError(f"unknown backend kind {self.kind!r}; expected one of {BACKEND_KINDS}")
        if self.temperature < 0:
            raise ConfigError(f"temperature must be >= 0, got {self.temperature}")
        if self.max_retries < 0:
            raise ConfigError(f"max_retries must be >= 0, got {self.max_retries}")
        if (self.kind == "video_fps") != (self.fps is not None):
            raise ConfigError("fps is required for video_fps backends and only for them")
        if self.fps is not None and not self.fps > 0:
            raise ConfigError(f"fps must be positive, got {self.fps}")
        if self.kind in ("frame_list", "video_fps") and not self.endpoint:
            raise ConfigError(f"{self.kind} backend needs an endpoint")
        if self.kind == "mock_fixed" and self.fixed_text is None:
            raise ConfigError("mock_fixed needs fixed_text")
        if self.kind == "mock_scripted" and self.script is None:
            raise ConfigError("mock_scripted needs a script mapping")

    @property
    def is_mock(self) -> bool:
        return self.kind in MOCK_KINDS

    def identity(self) -> dict:
        """Fields that change model output; feeds the response cache key."""
        ident = {"kind": self.kind, "model_id": self.model_id, "temperature": self.temperature}
        if self.fps is not None:
            ident["fps"] = self.fps
        if self.kind == "mock_fixed":
            ident["fixed_text"] = self.fixed_text
        elif self.kind == "mock_random":
            ident["seed"] = self.seed
        elif self.kind == "mock_scripted":
            blob = json.dumps(dict(self.script), sort_keys=True).encode()
            ident["script"] = hashlib.sha256(blob).hexdigest()
        return ident


@dataclass(frozen=True)
class InferenceResponse:
    text: str
    latency: float
    attempt_count: int


@dataclass(frozen=True)
class TransportResponse:
    status: int
    body: bytes

    def json(self):
        return json.loads(self.body)


class RequestsTransport:
    """HTTP transport over a shared :class:`requests.Session`."""

    def __init__(self, session=None):
        self.session = session or requests.Session()

    def post(self, url, *, headers, timeout, json_body=None, data=None) -> TransportResponse:
        try:
            resp = self.session.post(url, json=json_body, data=data, headers=headers, timeout=timeout)
        except requests.Timeout as exc:
            raise RetryableError(f"timeout contacting {url}: {exc}") from exc
        except requests.ConnectionError as exc:
            raise RetryableError(f"cannot connect to {url}: {exc}") from exc
        return TransportResponse(resp.status_code, resp.content)


class TokenBucket:
    """Blocking token bucket shared by all workers using one backend."""

    def __init__(self, per_minute: float, burst: Optional[float] = None,
                 clock: Callable[[], float] = time.monotonic, sleep: Callable[[float], None] = time.sleep):
        if not per_minute > 0:
            raise ValueError("per_minute must be positive")
        self.rate = per_minute / 60.0
        self.capacity = burst if burst is not None else max(1.0, self.rate)
        self.tokens = self.capacity
        self._clock = clock
        self._sleep = sleep
        self._last = clock()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        while True:
            with self._lock:
                now = self._clock()
                self.tokens = min(self.capacity, self.tokens + (now - self._last) * self.rate)
                self._last = now
                if self.tokens >= 1.0:
                    self.tokens -= 1.0
                    return
                wait = (1.0 - self.tokens) / self.rate
            self._sleep(wait)


def backoff_schedule(config: BackendConfig) -> list[float]:
    """Delays slept before each retry: exponential, capped, with seeded jitter."""
    rng = random.Random(config.seed)
    out = []
    for attempt in range(config.max_retries):
        base = min(config.max_delay, config.base_delay * 2**attempt)
        out.append(base * (1.0 + 0.25 * rng.random()))
    return out


def decimate_indices(frame_count: int, clip_fps: float, target_fps: float) -> list[int]:
    """Evenly spaced indices resampling ``frame_count`` frames to ``target_fps``.

    Yields ``floor(duration * target_fps)`` frames (at least one); when the
    target rate is at or above the clip rate every frame is kept.
    """
    if not (clip_fps > 0 and target_fps > 0):
        raise ValueError("frame rates must be positive")
    if frame_count < 1:
        return []
    if target_fps >= clip_fps:
        return list(range(frame_count))
    count = max(1, math.floor(frame_count * target_fps / clip_fps + 1e-9))
    step = clip_fps / target_fps
    return [min(frame_count - 1, math.floor(k * step + 1e-9)) for k in range(count)]


def encoder_command(encoder: str, frames_dir: Path, fps: float, out_path: Path) -> list[str]:
    return [
        encoder, "-y", "-loglevel", "error",
        "-framerate", f"{fps:g}", "-start_number", "0",
        "-i", str(frames_dir / "%06d.png"),
        "-c:v", "libx264", "-pix_fmt", "yuv420p",
        str(out_path),
    ]


def _png_bytes(frame: Frame) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(frame.pixels, "RGB").save(buf, format="PNG")
    return buf.getvalue()


def _seed_for(seed: int, key: str) -> int:
    digest = hashlib.sha256(f"{seed}\x00{key}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


class Backend:
    """Client for one configured backend. Safe to share across threads.

    Parameters
    ----------
    config : BackendConfig
    transport : object, optional
        Anything with ``post(url, *, headers, timeout, json_body=None, data=None)``
        returning a :class:`TransportResponse`. Defaults to :class:`RequestsTransport`.
    sleep : callable, optional
        Used for retry backoff; tests pass a recorder.
    trace_path : path, optional
        If set, redacted request/response summaries are appended as JSON lines.
    """

    def __init__(self, config: BackendConfig, transport=None, sleep=time.sleep,
                 rate_limiter: Optional[TokenBucket] = None, trace_path=None, env=None):
        self.config = config
        self._env = os.environ if env is None else env
        self._sleep = sleep
        self._lock = threading.Lock()
        self.calls = 0
        self.trace_path = Path(trace_path) if trace_path else None
        if config.is_mock:
            self.transport = None
            self.rate_limiter = None
            return
        self._api_key = self._resolve_key()
        if config.kind == "video_fps" and shutil.which(config.encoder) is None:
            raise ToolMissingError(
                f"video encoder {config.encoder!r} not found on PATH; install ffmpeg "
                "(or point BackendConfig.encoder at a compatible binary) to use video_fps backends"
            )
        self.transport = transport or RequestsTransport()
        if rate_limiter is None and config.requests_per_minute:
            rate_limiter = TokenBucket(config.requests_per_minute)
        self.rate_limiter = rate_limiter

    def _resolve_key(self):
        name = self.config.api_key_env
        if not name:
            return None
        key = self._env.get(name)
        if not key:
            raise ConfigError(f"environment variable {name} holding the API key is not set")
        return key

    def _count(self):
        with self._lock:
            self.calls += 1

    def _headers(self, content_type="application/json"):
        headers = {"Content-Type": content_type}
        if self._api_key:
            headers["Authorization"] = f"Bearer {self._api_key}"
        return headers

    def _trace(self, event: dict):
        if self.trace_path is None:
            return
        with self._lock, open(self.trace_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(event) + "\n")

    def _post_checked(self, url, **kwargs) -> TransportResponse:
        if self.rate_limiter is not None:
            self.rate_limiter.acquire()
        resp = self.transport.post(url, timeout=self.config.timeout, **kwargs)
        if resp.status in (401, 403):
            raise AuthError(f"{url} rejected the credential (HTTP {resp.status})")
        if resp.status == 429 or resp.status >= 500:
            raise RetryableError(f"{url} returned HTTP {resp.status}")
        if not 200 <= resp.status < 300:
            raise BackendError(f"{url} returned HTTP {resp.status}: {resp.body[:200]!r}")
        return resp

    def _with_retries(self, attempt_fn):
        delays = backoff_schedule(self.config)
        log = []
        start = time.monotonic()
        for attempt in range(self.config.max_retries + 1):
            try:
                text = attempt_fn()
            except RetryableError as exc:
                log.append(f"attempt {attempt + 1}: {exc}")
                self._trace({"event": "retry", "attempt": attempt + 1, "error": str(exc)})
                if attempt == self.config.max_retries:
                    raise RetriesExhausted(
                        f"gave up after {attempt + 1} attempt(s): {exc}", log
                    ) from exc
                logger.warning("retrying in %.2fs after: %s", delays[attempt], exc)
                self._sleep(delays[attempt])
                continue
            return InferenceResponse(text, time.monotonic() - start, attempt + 1)
        raise AssertionError("unreachable")

    # ---------------------------------------------------------------- frame list

    def chat_request_body(self, prompt: str, frames: Sequence[Frame]) -> dict:
        content = [
            {
                "type": "image_url",
                "image_url": {"url": "data:image/png;base64," + base64.b64encode(_png_bytes(f)).decode()},
            }
            for f in frames
        ]
        content.append({"type": "text", "text": prompt})
        return {
            "model": self.config.model_id,
            "temperature": self.config.temperature,
            "messages": [{"role": "user", "content": content}],
        }

    def infer_frames(self, prompt: str, frames: Sequence[Frame]) -> InferenceResponse:
        if self.config.kind != "frame_list":
            raise ConfigError(f"infer_frames needs a frame_list backend, not {self.config.kind}")
        if not frames:
            raise ValueError("infer_frames needs at least one frame")
        body = self.chat_request_body(prompt, frames)
        url = self.config.endpoint

        def attempt():
            self._count()
            self._trace({"event": "request", "url": url, "images": [f.digest() for f in frames],
                         "prompt_chars": len(prompt)})
            resp = self._post_checked(url, headers=self._headers(), json_body=body)
            try:
                text = resp.json()["choices"][0]["message"]["content"]
            except (ValueError, KeyError, IndexError, TypeError) as exc:
                raise FormatError(f"{url}: unexpected chat response shape ({exc})") from None
            self._trace({"event": "response", "url": url, "text": text})
            return text

        return self._with_retries(attempt)

    # ---------------------------------------------------------------- video

    def infer_video(self, prompt: str, cue_frames: Sequence[Frame], clip_fps: float, work_dir=None) -> InferenceResponse:
        """Decimate, encode and upload a cue-rendered clip, then ask the prompt about it."""
        if self.config.kind != "video_fps":
            raise ConfigError(f"infer_video needs a video_fps backend, not {self.config.kind}")
        keep = decimate_indices(len(cue_frames), clip_fps, self.config.fps)
        with tempfile.TemporaryDirectory(dir=work_dir) as tmp:
            tmp = Path(tmp)
            for k, idx in enumerate(keep):
                (tmp / f"{k:06d}.png").write_bytes(_png_bytes(cue_frames[idx]))
            video = tmp / "clip.mp4"
            cmd = encoder_command(self.config.encoder, tmp, self.config.fps, video)
            proc = subprocess.run(cmd, capture_output=True)
            if proc.returncode != 0 or not video.exists():
                raise BackendError(
                    f"encoder failed ({proc.returncode}): {proc.stderr.decode(errors='replace')[:500]}"
                )
            payload = video.read_bytes()
        base = self.config.endpoint.rstrip("/")

        def attempt():
            self._count()
            up = self._post_checked(base + "/upload", headers=self._headers("video/mp4"), data=payload)
            try:
                file_id = up.json()["file_id"]
            except (ValueError, KeyError, TypeError) as exc:
                raise FormatError(f"{base}/upload: unexpected response ({exc})") from None
            body = {
                "model": self.config.model_id,
                "prompt": prompt,
                "file_id": file_id,
                "temperature": self.config.temperature,
                "fps": self.config.fps,
            }
            resp = self._post_checked(base + "/generate", headers=self._headers(), json_body=body)
            try:
                return resp.json()["text"]
            except (ValueError, KeyError, TypeError) as exc:
                raise FormatError(f"{base}/generate: unexpected response ({exc})") from None

        logger.debug("video backend: %d of %d frames at %g fps", len(keep), len(cue_frames), self.config.fps)
        return self._with_retries(attempt)

    # ---------------------------------------------------------------- mocks

    def mock_infer(self, prompt: str, record) -> InferenceResponse:
        cfg = self.config
        if not cfg.is_mock:
            raise ConfigError(f"mock_infer needs a mock backend, not {cfg.kind}")
        self._count()
        if cfg.kind == "mock_fixed":
            text = cfg.fixed_text
        elif cfg.kind == "mock_random":
            rng = random.Random(_seed_for(cfg.seed, record.id + "\x00" + prompt))
            text = rng.choice(record.candidates)
        else:
            try:
                text = cfg.script[record.id]
            except KeyError:
                raise BackendError(f"mock script has no entry for question {record.id!r}") from None
        return InferenceResponse(text, 0.0, 1)
