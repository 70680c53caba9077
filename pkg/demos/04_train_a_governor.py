"""
Training the learned governor (short run)
=========================================

Runs a deliberately small training session -- a short two-leg mission and a
few hundred environment steps -- so the whole learning loop can be watched
in a couple of minutes.  The full-scale run behind the headline comparison
is `srlab train` with the default configuration (20,000 steps).
"""

import dataclasses

import numpy as np

from srlab.harness import RunConfig, train

cfg = dataclasses.replace(
    RunConfig(),
    waypoints=((1.0, 1.0, 1.0), (1.6, 1.6, 1.6)),
    hidden=(32, 32),
    batch=32,
    warmup=60,
    capacity=2000,
    total_steps=400,
    seed=1,
    out_dir="demo_out",
)

print(f"mission leg {np.linalg.norm(np.subtract(*cfg.waypoints)):.3f} m,"
      f" {cfg.total_steps} environment steps, warmup {cfg.warmup}")
print()
print("episode  steps  return    time(s)  beta")


def progress(episode, steps_done, row):
    print(f"{episode:7d}  {row[1]:5d}  {row[2]:8.2f}  {row[3]:7.1f}  {row[5]:.4f}")


model_path, log_path, rows = train(cfg, progress=progress)

first = [r[2] for r in rows[: max(1, len(rows) // 5)]]
last = [r[2] for r in rows[-max(1, len(rows) // 5):]]
print()
print(f"mean return, first fifth of training: {np.mean(first):8.2f}")
print(f"mean return, last fifth of training:  {np.mean(last):8.2f}")
print(f"model written to {model_path}")
print(f"per-episode log written to {log_path}")
