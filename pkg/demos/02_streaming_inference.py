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
# # Streaming a video through the model
#
# Frames arrive one at a time. The stream keeps a short history per layer, so
# each new frame costs one step through the network. Logits are then pushed
# away from steps that would break the canonical order, and a small state
# machine turns the smoothed probabilities into per-step states.

# %%
import numpy as np

from stepwise import PROFILES, StreamingTcn, model_forward
from stepwise.pipeline import run_online
from stepwise.pipeline import BenchmarkConfig, make_episodes
from stepwise.training import LabeledSequence, TrainConfig, train_task

# %% [markdown]
# ## Train a small model on synthetic A8 episodes

# %%
cfg = BenchmarkConfig(dim=16, train_episodes=6, eval_episodes=1, profiles=("A8",))
task = PROFILES["A8"].task
train = make_episodes("A8", cfg, split=0, count=cfg.train_episodes)
data = [LabeledSequence(ep.features, ep.labels, task) for ep in train]
model = train_task(data, TrainConfig(epochs=4, learning_rate=2e-3, num_stages=1, num_layers=6, hidden_dim=16)).model
print("receptive field:", model.receptive_field)

# %% [markdown]
# ## Frame-by-frame output equals the offline pass

# %%
episode = make_episodes("A8", cfg, split=1, count=1)[0]
stream = StreamingTcn(model, capacity=1200)
online = np.array([stream.push(f) for f in episode.features.data])
print("bit-exact:", np.array_equal(online, model_forward(episode.features, model)[-1].logits))

# %% [markdown]
# ## Belief records
#
# Every frame yields one record per step. Printing the records where a state
# changes gives a compact view of the run.

# %%
trace = run_online(episode.features, model, task, alpha=3.0)
last = {}
for r in trace.records:
    if last.get(r.task_step_num) != r.step_state:
        print(f"{r.timestamp:7.2f}s  step {r.task_step_num} -> {r.step_state.value}")
        last[r.task_step_num] = r.step_state
print("ground truth:", [(iv.step_id, round(iv.start, 2), round(iv.stop, 2)) for iv in episode.intervals])
