"""Sliding-window demo: subdivide, detect per window, merge, evaluate.

A large image with known rectangle damages is split into overlapping
windows; the seeded mock detector (standing in for the external neural
model) runs per window; per-window predictions are offset back into the
full frame and merged; both metrics are swept over thresholds. The
downscale alternative is run on the same fixture for comparison.
"""

import numpy as np

from towervision import (
    EvalPair,
    MockDetectorSettings,
    aggregate_iou,
    clip_to_window,
    merge_predictions,
    mock_detect,
    plan_tiling,
    precision_recall,
    resize_mask,
    upscale_predictions,
)
from towervision.core import ClassLabel, Instance
from towervision.seeds import derive_seed
from towervision.tile import PredictionSet

width, height = 1600, 900
plan = plan_tiling((width, height), (512, 512), 128)
print(f"{width}x{height} image -> {len(plan.windows)} windows of "
      f"{plan.window_size[0]}x{plan.window_size[1]} (overlap {plan.overlap})")

# Ground truth: rectangles scattered so several fall into overlap zones.
rng = np.random.default_rng(5)
truth = []
for _ in range(7):
    w, h = int(rng.integers(24, 70)), int(rng.integers(24, 70))
    x = int(rng.integers(0, width - w))
    y = int(rng.integers(0, height - h))
    mask = np.zeros((height, width), dtype=bool)
    mask[y : y + h, x : x + w] = True
    truth.append(Instance(label=ClassLabel.DAMAGE, mask=mask))

# Per-window mock detection: dilation 1 fakes slightly loose masks, and a
# nonzero false-positive rate fakes spurious detections.
per_window = []
for k, window in enumerate(plan.windows):
    per_window.append(
        mock_detect(
            clip_to_window(truth, window),
            window.width,
            window.height,
            MockDetectorSettings(
                dilation_radius=1,
                seed=derive_seed(5, "demo-mock", k),
                false_positive_rate=0.3,
            ),
            image_id="demo",
            window_index=k,
        )
    )
fragments = sum(len(p.instances) for p in per_window)
merged = merge_predictions(per_window, plan)
print(f"{fragments} per-window detections merged into {len(merged.instances)} instances")

pair = EvalPair(image_id="demo", ground_truth=truth, predictions=merged)
print("\nthreshold  precision  recall  aggregate IoU")
for threshold in (0.0, 0.25, 0.5, 0.75, 1.0):
    precision, recall = precision_recall([pair], threshold)
    iou = aggregate_iou([pair], threshold)
    fmt = lambda v: "   --" if v is None else f"{v:5.3f}"
    print(f"   {threshold:4.2f}    {fmt(precision)}     {fmt(recall)}   {fmt(iou)}")

# The downscale alternative: detect on a half-resolution view instead.
factor = 0.5
small = (round(width * factor), round(height * factor))
small_truth = [Instance(t.label, resize_mask(t.mask, small)) for t in truth]
small_preds = mock_detect(
    small_truth, small[0], small[1], MockDetectorSettings(seed=9), image_id="demo"
)
restored = upscale_predictions(small_preds, factor, (width, height))
down_pair = EvalPair(image_id="demo", ground_truth=truth, predictions=restored)
print(f"\ndownscale-path aggregate IoU at threshold 0: "
      f"{aggregate_iou([down_pair], 0.0):.3f} (resolution loss)")

ideal = [
    PredictionSet(
        image_id="demo",
        width=w.width,
        height=w.height,
        instances=[
            Instance(i.label, i.mask, confidence=1.0)
            for i in clip_to_window(truth, w)
        ],
        window_index=k,
    )
    for k, w in enumerate(plan.windows)
]
split_pair = EvalPair(
    image_id="demo", ground_truth=truth, predictions=merge_predictions(ideal, plan)
)
print(f"split-path aggregate IoU with a perfect detector: "
      f"{aggregate_iou([split_pair], 0.0):.3f} (full resolution preserved)")
