"""Frame sampling: how lam moves the sample towards the end of a clip."""

import numpy as np

from gazesom.sampling import SamplingConfig, compute_weights, draw_plan, plan_to_timestamps

# a 10 s clip at 25 fps
n_frames, fps = 250, 25.0

# lam = 0 is uniform over the 249 optional frames
w = compute_weights(n_frames, 0.0)
print("uniform weight", w[0], "=", 1 / (n_frames - 1))

# larger lam piles the mass onto the last second or so
for lam in (0.0, 0.01, 0.04, 0.1, 1.0):
    w = compute_weights(n_frames, lam)
    last_second = w[-int(fps):].sum()
    print(f"lam={lam:<5} mass in last 1 s: {last_second:.3f}")

# one plan of 15 frames; the final frame is always there
plan = draw_plan(n_frames, SamplingConfig(lam=0.1, sample_size=15, seed=7))
print("indices   ", plan.frame_indices)
print("timestamps", plan_to_timestamps(plan, fps))

# same seed, same plan
again = draw_plan(n_frames, SamplingConfig(lam=0.1, sample_size=15, seed=7))
assert again.frame_indices == plan.frame_indices

# average position of the sampled frames over many seeds
for lam in (0.0, 0.04, 1.0):
    mean_t = np.mean([
        np.mean(plan_to_timestamps(draw_plan(n_frames, SamplingConfig(lam, 15, s)), fps))
        for s in range(200)
    ])
    print(f"lam={lam:<5} mean sampled time {mean_t:.2f} s")
