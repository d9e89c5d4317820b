"""A small ablation grid on synthetic data with offline mock backends."""

import logging
import tempfile

from gazesom.backends import Backend, BackendConfig
from gazesom.data import make_synthetic_suite
from gazesom.evaluator import GridSpec, ResponseCache, RunConfig, render_markdown, run_eval, run_grid
from gazesom.prompts import STRATEGIES
from gazesom.sampling import SamplingConfig

logging.basicConfig(level=logging.WARNING)

bench = make_synthetic_suite(40, seed=1, out_dir=tempfile.mkdtemp())
records = bench.records()

# random guessing sits near 1 in 5; the mock never looks at pixels, so lam does not move it
base = RunConfig(STRATEGIES["som_gaze"], BackendConfig(kind="mock_random", seed=2), SamplingConfig())
grid = GridSpec(("vllm_only", "som_gaze"), lambdas=(0.0, 0.1, 1.0), sample_sizes=(15,))
report = run_grid(bench, grid, base)
print(render_markdown(report))

# an answer key as a backend: every question right
oracle = BackendConfig(kind="mock_scripted",
                       script={r.id: r.candidates[r.correct_index] for r in records})
cell = run_eval(bench, RunConfig(STRATEGIES["gaze"], oracle, SamplingConfig())).cells[0]
print("oracle accuracy", cell.accuracy)

# cached responses: the second pass never reaches the backend
cache = ResponseCache()
be = Backend(base.backend)
first = run_eval(bench, base, backend=be, cache=cache)
second = run_eval(bench, base, backend=be, cache=cache)
print("backend calls", be.calls, "same cells", first.cells == second.cells)

# the same grid over frame rates, as used for whole-video models
fps_grid = GridSpec(("vllm_only", "gaze"), fps=(1.0, 2.0))
print(render_markdown(run_grid(bench, fps_grid, RunConfig(base.strategy, base.backend, fps=1.0))))
