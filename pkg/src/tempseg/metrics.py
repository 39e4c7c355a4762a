"""Segmentation accuracy and temporal-stability evaluation.

Accuracy is the usual confusion-matrix mIoU / pixel accuracy with an
ignore label.  Temporal consistency (TC) of a predicted sequence is the
mIoU between the hard predictions of consecutive frames after aligning
them along the ground-truth motion: the later frame's labels are pulled
back onto the earlier frame's grid with nearest-neighbour sampling, and
the pair score is the symmetric IoU between the aligned label maps.
Pair scores are averaged within a sequence, then across sequences.
No occlusion mask enters the metric.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeMismatchError, ValidationError
from .flowwarp import warp_labels_nearest

IGNORE_LABEL = 255


def confusion_matrix(
    pred: np.ndarray, gt: np.ndarray, num_classes: int, ignore: int = IGNORE_LABEL
) -> np.ndarray:
    if pred.shape != gt.shape:
        raise ShapeMismatchError(f"pred shape {pred.shape} != gt shape {gt.shape}")
    pred = pred.astype(np.int64).ravel()
    gt = gt.astype(np.int64).ravel()
    valid = gt != ignore
    pred, gt = pred[valid], gt[valid]
    if pred.size and (pred.min() < 0 or pred.max() >= num_classes):
        raise ValidationError(f"prediction ids outside [0, {num_classes})")
    if gt.size and (gt.min() < 0 or gt.max() >= num_classes):
        raise ValidationError(f"label ids outside [0, {num_classes}) after ignore filtering")
    return np.bincount(
        gt * num_classes + pred, minlength=num_classes * num_classes
    ).reshape(num_classes, num_classes)


def iou_from_confusion(conf: np.ndarray) -> np.ndarray:
    """Per-class IoU; classes absent from both pred and gt come back as NaN."""
    tp = np.diag(conf).astype(np.float64)
    denom = conf.sum(axis=0) + conf.sum(axis=1) - tp
    with np.errstate(invalid="ignore"):
        iou = np.where(denom > 0, tp / np.maximum(denom, 1), np.nan)
    return iou


@dataclass
class AccuracyResult:
    per_class_iou: np.ndarray
    miou: float
    pixel_accuracy: float
    confusion: np.ndarray


def confusion_and_miou(
    preds: list[np.ndarray], gts: list[np.ndarray], num_classes: int
) -> AccuracyResult:
    """Aggregate mIoU and pixel accuracy over matched prediction/label pairs."""
    if not preds or len(preds) != len(gts):
        raise ValidationError("need a non-empty, matched list of predictions and labels")
    conf = np.zeros((num_classes, num_classes), dtype=np.int64)
    for p, g in zip(preds, gts):
        conf += confusion_matrix(p, g, num_classes)
    total = conf.sum()
    if total == 0:
        raise ValidationError("all pixels ignored; nothing to evaluate")
    iou = iou_from_confusion(conf)
    return AccuracyResult(
        per_class_iou=iou,
        miou=float(np.nanmean(iou)),
        pixel_accuracy=float(np.diag(conf).sum() / total),
        confusion=conf,
    )


def pair_tc(
    pred_prev: np.ndarray, pred_next: np.ndarray, flow: np.ndarray, num_classes: int
) -> float:
    """mIoU between pred_prev and pred_next aligned along flow (earlier -> later)."""
    warped = warp_labels_nearest(pred_next, flow)
    conf = confusion_matrix(warped, pred_prev, num_classes)
    return float(np.nanmean(iou_from_confusion(conf)))


@dataclass
class TCResult:
    mean_tc: float
    per_sequence_tc: list[float]
    traces: list[list[float]]
    per_class_tc: np.ndarray


def temporal_consistency(
    pred_seqs: list[list[np.ndarray]],
    flow_seqs: list[list[np.ndarray]],
    num_classes: int,
) -> TCResult:
    """TC of predicted sequences under their consecutive-pair flows.

    ``flow_seqs[s][t]`` is the (2, H, W) motion from frame t to frame t+1 of
    sequence s.  Pair scores are averaged per sequence, then sequence scores
    are averaged.  The per-class table aggregates one confusion matrix over
    all pairs.
    """
    if len(pred_seqs) != len(flow_seqs):
        raise ValidationError("need one flow list per prediction sequence")
    traces: list[list[float]] = []
    seq_scores: list[float] = []
    conf = np.zeros((num_classes, num_classes), dtype=np.int64)
    for preds, flows in zip(pred_seqs, flow_seqs):
        if len(preds) < 2:
            raise ValidationError("temporal consistency needs sequences of length >= 2")
        if len(flows) != len(preds) - 1:
            raise ValidationError(
                f"expected {len(preds) - 1} flows for {len(preds)} frames, got {len(flows)}"
            )
        trace = []
        for t in range(len(preds) - 1):
            trace.append(pair_tc(preds[t], preds[t + 1], flows[t], num_classes))
            warped = warp_labels_nearest(preds[t + 1], flows[t])
            conf += confusion_matrix(warped, preds[t], num_classes)
        traces.append(trace)
        seq_scores.append(float(np.mean(trace)))
    if not seq_scores:
        raise ValidationError("no sequences to evaluate")
    return TCResult(
        mean_tc=float(np.mean(seq_scores)),
        per_sequence_tc=seq_scores,
        traces=traces,
        per_class_tc=iou_from_confusion(conf),
    )


@dataclass
class EvalReport:
    """Joined accuracy and temporal-consistency tables plus efficiency figures."""

    num_classes: int
    per_class_iou: np.ndarray
    miou: float
    pixel_accuracy: float
    per_class_tc: np.ndarray
    mean_tc: float
    tc_traces: list[list[float]]
    param_count: int = 0
    fps: float = 0.0
    clip_ids: list[str] = field(default_factory=list)


def per_class_report(
    preds: list[np.ndarray],
    gts: list[np.ndarray],
    pred_seqs: list[list[np.ndarray]],
    flow_seqs: list[list[np.ndarray]],
    num_classes: int,
) -> EvalReport:
    """Join the accuracy and TC metrics into one per-class report."""
    acc = confusion_and_miou(preds, gts, num_classes)
    tc = temporal_consistency(pred_seqs, flow_seqs, num_classes)
    return EvalReport(
        num_classes=num_classes,
        per_class_iou=acc.per_class_iou,
        miou=acc.miou,
        pixel_accuracy=acc.pixel_accuracy,
        per_class_tc=tc.per_class_tc,
        mean_tc=tc.mean_tc,
        tc_traces=tc.traces,
    )


def _fmt(x: float) -> str:
    return "nan" if np.isnan(x) else f"{x:.10f}"


def write_report_csvs(report: EvalReport, out_dir: str | os.PathLike) -> None:
    """Emit metrics.csv, per_class.csv, and tc_trace.csv atomically."""
    os.makedirs(out_dir, exist_ok=True)

    def atomic_write(name: str, rows: list[list[str]]) -> None:
        path = os.path.join(out_dir, name)
        tmp = path + ".tmp"
        with open(tmp, "w", newline="") as f:
            csv.writer(f).writerows(rows)
        os.replace(tmp, path)

    atomic_write(
        "metrics.csv",
        [
            ["metric", "value"],
            ["miou", _fmt(report.miou)],
            ["pixel_accuracy", _fmt(report.pixel_accuracy)],
            ["tc", _fmt(report.mean_tc)],
            ["param_count", str(report.param_count)],
        ],
    )
    atomic_write(
        "per_class.csv",
        [["class", "iou", "tc"]]
        + [
            [str(c), _fmt(report.per_class_iou[c]), _fmt(report.per_class_tc[c])]
            for c in range(report.num_classes)
        ],
    )
    trace_rows = [["sequence", "pair", "tc"]]
    for s, trace in enumerate(report.tc_traces):
        seq_id = report.clip_ids[s] if s < len(report.clip_ids) else str(s)
        for t, v in enumerate(trace):
            trace_rows.append([seq_id, str(t), _fmt(v)])
    atomic_write("tc_trace.csv", trace_rows)


def format_table(report: EvalReport) -> str:
    """Human-readable per-class table mirroring the CSV content."""
    lines = [
        f"{'class':>8} {'IoU':>12} {'TC':>12}",
    ]
    for c in range(report.num_classes):
        lines.append(
            f"{c:>8} {_fmt(report.per_class_iou[c]):>12.12s} {_fmt(report.per_class_tc[c]):>12.12s}"
        )
    lines.append("")
    lines.append(
        f"mIoU {_fmt(report.miou)}  pixel-acc {_fmt(report.pixel_accuracy)}  "
        f"TC {_fmt(report.mean_tc)}  params {report.param_count}  fps {report.fps:.1f}"
    )
    return "\n".join(lines)
