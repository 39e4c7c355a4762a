"""Training-time temporal consistency for per-frame semantic video segmentation.

Desk-scale toolkit: motion-guided temporal loss, pair-wise-frame and
multi-frame (ConvLSTM) distillation, single-frame distillation, and a
warped-mIoU temporal-consistency metric, exercised on synthetic video
with exact ground-truth optical flow.
"""

__version__ = "0.1.0"
