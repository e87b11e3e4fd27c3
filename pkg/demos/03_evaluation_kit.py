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
# # Scoring step detections
#
# Belief records are binned to 0.1 s, turned into one segment per step (from
# the first Current bin to the first Done bin) and matched to ground truth by
# temporal IOU. Average precision is the area under the precision/recall
# staircase.

# %%
from stepwise import ActionSegment, BeliefRecord, StepState, bin_and_extract_segments, build_report, iou
from stepwise.evaluation import precision_recall_curve

# %%
records = []
for i in range(60):
    t = i / 10
    s1 = StepState.CURRENT if 1.0 <= t < 3.0 else (StepState.DONE if t >= 3.0 else StepState.UNOBSERVED)
    s2 = StepState.CURRENT if 3.0 <= t else StepState.UNOBSERVED
    records += [BeliefRecord("M5", 1, s1, 0.8, t), BeliefRecord("M5", 2, s2, 0.6, t)]
pred = bin_and_extract_segments(records)
for seg in pred:
    print(seg)

# %% [markdown]
# Step 2 never reaches Done, so its segment is closed one bin after the last
# record and flagged as open ended.

# %%
gt = [ActionSegment(1, 1.2, 3.1), ActionSegment(2, 3.0, 5.0)]
print("IOU step 1:", round(iou(pred[0], gt[0]), 3), " step 2:", round(iou(pred[1], gt[1]), 3))

precision, recall = precision_recall_curve(pred, gt, 0.5)
print("precision:", precision, "recall:", recall)

report = build_report({"M5": (pred, gt)})
print(report.format_table("demo"))
