"""Backward warping along optical flow, occlusion masks, and .flo file I/O.

Conventions: images and probability maps are torch tensors shaped (C, H, W);
flow fields are (2, H, W) with flow[0] = dx and flow[1] = dy, meaning the
pixel at (x, y) in the earlier frame sits at (x + dx, y + dy) in the later
frame.  ``warp_backward`` pulls the later frame onto the earlier frame's
grid.  Flow is always treated as a fixed external signal: no gradient
propagates through the displacements.
"""

from __future__ import annotations

import os
import struct

import numpy as np
import torch

from .errors import DatasetError, ShapeMismatchError, ValidationError

FLO_MAGIC = b"PIEH"


def _check_flow(flow: torch.Tensor, spatial: tuple[int, int]) -> None:
    if flow.ndim != 3 or flow.shape[0] != 2:
        raise ShapeMismatchError(f"flow must be (2, H, W), got {tuple(flow.shape)}")
    if tuple(flow.shape[1:]) != spatial:
        raise ShapeMismatchError(
            f"flow spatial shape {tuple(flow.shape[1:])} != source shape {spatial}"
        )
    if not torch.isfinite(flow).all():
        raise ValidationError("flow field contains non-finite entries")


def _sample_coords(flow: torch.Tensor, h: int, w: int, dtype: torch.dtype):
    xs = torch.arange(w, dtype=dtype).reshape(1, w) + flow[0]
    ys = torch.arange(h, dtype=dtype).reshape(h, 1) + flow[1]
    return xs.clamp(0, w - 1), ys.clamp(0, h - 1)


def warp_backward(src: torch.Tensor, flow: torch.Tensor) -> torch.Tensor:
    """Bilinearly sample ``src`` (C, H, W) at positions displaced by ``flow``.

    Output pixel (x, y) is the sample of ``src`` at (x + dx, y + dy);
    out-of-bounds coordinates are clamped to the border.  Differentiable
    w.r.t. ``src`` values only.
    """
    if src.ndim != 3:
        raise ShapeMismatchError(f"src must be (C, H, W), got {tuple(src.shape)}")
    _, h, w = src.shape
    _check_flow(flow, (h, w))
    flow = flow.detach().to(src.dtype)

    gx, gy = _sample_coords(flow, h, w, src.dtype)
    x0 = gx.floor().long().clamp(0, w - 1)
    y0 = gy.floor().long().clamp(0, h - 1)
    x1 = (x0 + 1).clamp(max=w - 1)
    y1 = (y0 + 1).clamp(max=h - 1)
    wx = gx - x0
    wy = gy - y0

    top = (1 - wx) * src[:, y0, x0] + wx * src[:, y0, x1]
    bot = (1 - wx) * src[:, y1, x0] + wx * src[:, y1, x1]
    return (1 - wy) * top + wy * bot


def warp_labels_nearest(labels: np.ndarray, flow: np.ndarray) -> np.ndarray:
    """Pull hard labels (H, W) of the later frame back along ``flow`` (2, H, W).

    Nearest-neighbour sampling; bilinear blending of class ids would be
    meaningless.
    """
    if labels.ndim != 2:
        raise ShapeMismatchError(f"labels must be (H, W), got {labels.shape}")
    h, w = labels.shape
    if flow.shape != (2, h, w):
        raise ShapeMismatchError(f"flow shape {flow.shape} != (2, {h}, {w})")
    xs = np.clip(np.rint(np.arange(w)[None, :] + flow[0]), 0, w - 1).astype(np.int64)
    ys = np.clip(np.rint(np.arange(h)[:, None] + flow[1]), 0, h - 1).astype(np.int64)
    return labels[ys, xs]


def occlusion_mask(frame_t: torch.Tensor, warped_frame: torch.Tensor) -> torch.Tensor:
    """Per-pixel exp(-mean_c |frame_t - warped_frame|), shape (H, W), in (0, 1]."""
    if frame_t.shape != warped_frame.shape:
        raise ShapeMismatchError(
            f"frame shapes differ: {tuple(frame_t.shape)} vs {tuple(warped_frame.shape)}"
        )
    return torch.exp(-(frame_t - warped_frame).abs().mean(dim=0))


def compose_flows(first: torch.Tensor, second: torch.Tensor) -> torch.Tensor:
    """Chain flow a->b with flow b->c into flow a->c.

    The second field is sampled at the positions reached by the first,
    so the composition is exact wherever motion is locally constant.
    """
    if first.shape != second.shape:
        raise ShapeMismatchError(
            f"flow shapes differ: {tuple(first.shape)} vs {tuple(second.shape)}"
        )
    return first + warp_backward(second, first)


def chain_flows(flows: list[torch.Tensor]) -> torch.Tensor:
    """Fold a non-empty list of consecutive flows into one composite flow."""
    if not flows:
        raise ValidationError("cannot chain an empty list of flows")
    acc = flows[0]
    for nxt in flows[1:]:
        acc = compose_flows(acc, nxt)
    return acc


def write_flo(path: str | os.PathLike, flow: np.ndarray) -> None:
    """Write a (H, W, 2) float32 flow field in the conventional binary layout."""
    if flow.ndim != 3 or flow.shape[2] != 2:
        raise ShapeMismatchError(f"flow must be (H, W, 2), got {flow.shape}")
    h, w = flow.shape[:2]
    with open(path, "wb") as f:
        f.write(FLO_MAGIC)
        f.write(struct.pack("<ii", w, h))
        f.write(np.ascontiguousarray(flow, dtype="<f4").tobytes())


def read_flo(path: str | os.PathLike) -> np.ndarray:
    """Read a flow field written by :func:`write_flo`; returns (H, W, 2) float32."""
    try:
        with open(path, "rb") as f:
            header = f.read(12)
            if len(header) < 12 or header[:4] != FLO_MAGIC:
                raise DatasetError(f"not a flow file (bad magic): {path}")
            w, h = struct.unpack("<ii", header[4:12])
            if w <= 0 or h <= 0:
                raise DatasetError(f"flow file has invalid dimensions: {path}")
            payload = f.read(8 * w * h)
    except OSError as exc:
        if isinstance(exc, DatasetError):
            raise
        raise DatasetError(f"cannot read flow file {path}: {exc}") from exc
    if len(payload) != 8 * w * h:
        raise DatasetError(f"truncated flow file: {path}")
    return np.frombuffer(payload, dtype="<f4").reshape(h, w, 2).copy()


def flow_to_torch(flow_hw2: np.ndarray, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """(H, W, 2) numpy layout -> (2, H, W) torch layout."""
    return torch.from_numpy(np.ascontiguousarray(flow_hw2.transpose(2, 0, 1))).to(dtype)


def flow_to_numpy(flow_2hw: torch.Tensor) -> np.ndarray:
    """(2, H, W) torch layout -> (H, W, 2) float32 numpy layout."""
    return flow_2hw.detach().cpu().numpy().transpose(1, 2, 0).astype(np.float32)
