"""
Conservative vs. baseline vs. learned
=====================================

Flies the default mission with all three governors on identical
measurement-noise streams and prints the comparison: mission time, cycle
count, and how close each one works to the monitored safety bound.

The learned column needs a trained model (`srlab train`, about an hour at
full scale); pass it as the first argument.  Without one, the script still
compares the two analytic governors.

Usage: python 05_compare_governors.py [model.bin]
"""

import sys

import numpy as np

from srlab.governor import AlphaPolicy
from srlab.harness import RunConfig, build_bundle, run_episode
from srlab.sac import SacAgent

cfg = RunConfig()
bundle = build_bundle(cfg)

policies = {
    "conservative": AlphaPolicy(kind="conservative"),
    "baseline": AlphaPolicy(kind="baseline"),
}
if len(sys.argv) > 1:
    agent, stored_alpha_max = SacAgent.load(sys.argv[1])
    alpha_max = cfg.alpha_max if stored_alpha_max is None else stored_alpha_max
    policies["learned"] = AlphaPolicy(kind="rl", agent=agent, alpha_max=alpha_max)

# every governor sees the same three noise streams, so the differences in
# the table come from the step-size decisions alone
seeds = [0, 1, 2]
print(f"{'governor':13s} {'time(s)':>9s} {'cycles':>7s} {'mean alpha':>11s}"
      f" {'mean MC peak':>13s} {'worst MC peak':>14s}")
for name, policy in policies.items():
    times, cycles, alphas, peaks = [], [], [], []
    for seed in seeds:
        child = np.random.SeedSequence(seed)
        result, _ = run_episode(bundle, policy, np.random.default_rng(child))
        assert result.success, f"{name} failed on seed {seed}"
        times.append(result.mission_time)
        cycles.append(result.cycles)
        alphas.append(result.alpha.mean())
        peaks.append(result.mc_peak_est)
    peaks = np.concatenate(peaks)
    print(f"{name:13s} {np.mean(times):9.2f} {np.mean(cycles):7.1f}"
          f" {np.mean(alphas):11.6f} {peaks.mean():13.6f} {peaks.max():14.6f}")

print()
print(f"monitored bound rho_m = {bundle.system.metric.rho_m}: every governor")
print("must keep its worst monitored-phase peak under this line; the learned")
print("one earns its speed by running closer to it than the baseline does.")
