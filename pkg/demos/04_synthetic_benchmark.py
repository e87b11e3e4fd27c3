# ---
# jupyter:
#   jupytext:
#     formats: ipynb,py:percent
#     text_representation:
#       extension: .py
#       format_name: percent
#       format_version: '1.3'
#   kernelspec:
#     display_name: Python 3
#     language: python
#     name: python3
# ---

# %% [markdown]
# # A miniature synthetic benchmark
#
# Each built-in task profile fixes the number of steps, typical durations and
# how often a step overlaps the one before. Episodes drawn from it carry
# Gaussian features around one direction per class, so the separation knob
# controls how hard recognition is. The full run is `stepwise e2e`; here two
# tasks and a small model keep it to well under a minute.

# %%
import numpy as np

from stepwise import PROFILES
from stepwise.synth import overlap_rate, sample_timeline
from stepwise.pipeline import BenchmarkConfig, run_benchmark

# %% [markdown]
# ## Sampled timelines follow the profile

# %%
rng = np.random.default_rng(0)
for code in ("M2", "M4"):
    tls = [sample_timeline(PROFILES[code], rng) for _ in range(2000)]
    mean = np.mean([iv.duration for tl in tls for iv in tl.intervals])
    print(f"{code}: mean step {mean:.2f} s (target {PROFILES[code].mean_step_duration}),"
          f" overlap {overlap_rate(tls):.3f} (target {PROFILES[code].overlap_fraction})")

# %% [markdown]
# ## Separable versus pure-noise features

# %%
for separation in (10.0, 0.0):
    cfg = BenchmarkConfig(separation=separation, dim=16, train_episodes=8, eval_episodes=3, epochs=4,
                          learning_rate=2e-3, num_stages=1, num_layers=6, hidden_dim=16, profiles=("M4", "M5"))
    result = run_benchmark(cfg)
    print(f"separation {separation:g}  ({result.seconds:.0f} s)")
    print(result.report.format_table())
