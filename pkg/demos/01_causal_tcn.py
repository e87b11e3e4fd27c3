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
# # A causal temporal convolution network in numpy
#
# Each stage maps per-frame features to per-frame class probabilities. A layer
# looks at frames `t - 2d`, `t - d` and `t` only, so nothing from the future
# leaks into a prediction. Later stages refine the probabilities of the one
# before.

# %%
import numpy as np

from stepwise import CausalTcnModel, dilated_causal_conv, model_forward

# %% [markdown]
# ## One dilated causal convolution
#
# With a single channel and all-ones weights the output at `t` is the sum of
# the three taps, with zeros standing in for frames before the start.

# %%
x = np.arange(1.0, 9.0)[:, None]
kernel = np.ones((3, 1, 1))
print(dilated_causal_conv(x, kernel, dilation=2)[:, 0])

# %% [markdown]
# ## A full model and its receptive field

# %%
model = CausalTcnModel.init(input_dim=16, num_classes=6, num_stages=2, num_layers=6, hidden_dim=24, seed=0)
print("receptive field:", model.receptive_field, "frames")

feats = np.random.default_rng(1).normal(size=(200, 16))
outs = model_forward(feats, model)
print("stages:", len(outs), "final probs shape:", outs[-1].probs.shape)

# %% [markdown]
# ## Causality check
#
# Changing frame 150 must leave every earlier prediction untouched.

# %%
moved = feats.copy()
moved[150] += 5.0
after = model_forward(moved, model)[-1].logits
print("frames before 150 unchanged:", np.array_equal(after[:150], outs[-1].logits[:150]))
print("frame 150 changed:", not np.array_equal(after[150], outs[-1].logits[150]))
