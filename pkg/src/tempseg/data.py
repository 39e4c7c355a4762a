"""Synthetic moving-shapes video with exact ground-truth flow and sparse labels.

Clips render a handful of coloured shapes drifting at constant velocity
over a background.  Because the geometry is known, the per-pixel flow
between consecutive frames is exact: each pixel carries the velocity of
the object that owns it (z-order resolves overlaps), background pixels
carry zero.  Exactly one frame per clip is labelled by default, mimicking
sparsely annotated video datasets.

Disk layout per clip: frame_%03d.png, label_%03d.png (labelled frames
only, ignore id 255), flow_%03d.flo, and a key=value manifest.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from . import flowwarp
from .errors import DatasetError, ValidationError

IGNORE_LABEL = 255


@dataclass
class ShapeSpec:
    kind: str                       # "square" or "circle"
    class_id: int
    size: int                       # half-extent in pixels
    velocity: tuple[float, float]   # (vx, vy) pixels per frame
    start: tuple[float, float]      # (x, y) centre at frame 0
    intensity: float


@dataclass
class SceneSpec:
    height: int
    width: int
    num_classes: int
    objects: list[ShapeSpec]
    background_class: int = 0
    background_intensity: float = 0.15
    noise_amplitude: float = 0.1
    channels: int = 1


@dataclass
class VideoClip:
    clip_id: str
    seed: int
    frames: np.ndarray                 # (T, C, H, W) float32 in [0, 1]
    labels: dict[int, np.ndarray]      # frame index -> (H, W) uint8
    flows: np.ndarray                  # (T-1, 2, H, W) float32, frame t -> t+1
    num_classes: int

    @property
    def length(self) -> int:
        return self.frames.shape[0]

    @property
    def labeled_indices(self) -> list[int]:
        return sorted(self.labels)


def _shape_mask(spec: ShapeSpec, cx: float, cy: float, h: int, w: int) -> np.ndarray:
    ys = np.arange(h)[:, None]
    xs = np.arange(w)[None, :]
    if spec.kind == "square":
        return (np.abs(xs - round(cx)) <= spec.size) & (np.abs(ys - round(cy)) <= spec.size)
    if spec.kind == "circle":
        return (xs - round(cx)) ** 2 + (ys - round(cy)) ** 2 <= spec.size**2
    raise ValidationError(f"unknown shape kind {spec.kind!r}")


def _render_frame(spec: SceneSpec, t: int):
    """Return (label_map uint8, flow (2,H,W) float32, clean image (C,H,W))."""
    h, w = spec.height, spec.width
    label = np.full((h, w), spec.background_class, dtype=np.uint8)
    flow = np.zeros((2, h, w), dtype=np.float32)
    img = np.full((h, w), spec.background_intensity, dtype=np.float32)
    for obj in spec.objects:  # later objects render on top
        cx = obj.start[0] + t * obj.velocity[0]
        cy = obj.start[1] + t * obj.velocity[1]
        mask = _shape_mask(obj, cx, cy, h, w)
        label[mask] = obj.class_id
        flow[0][mask] = obj.velocity[0]
        flow[1][mask] = obj.velocity[1]
        img[mask] = obj.intensity
    image = np.broadcast_to(img, (spec.channels, h, w)).copy()
    return label, flow, image


def generate_clip(spec: SceneSpec, length: int, seed: int, clip_id: str = "clip") -> VideoClip:
    """Render a clip; deterministic in ``seed``.  The middle frame is labelled."""
    if length < 3:
        raise ValidationError(f"clip length must be >= 3, got {length}")
    if spec.num_classes < 2:
        raise ValidationError("scene needs at least 2 classes")
    if spec.height < 4 or spec.width < 4:
        raise ValidationError("canvas too small")
    for obj in spec.objects:
        if not (0 <= obj.class_id < spec.num_classes):
            raise ValidationError(
                f"object class {obj.class_id} outside [0, {spec.num_classes})"
            )
    rng = np.random.default_rng(seed)
    frames = np.empty((length, spec.channels, spec.height, spec.width), dtype=np.float32)
    flows = np.empty((length - 1, 2, spec.height, spec.width), dtype=np.float32)
    labels: dict[int, np.ndarray] = {}
    labeled = length // 2
    for t in range(length):
        label, flow, image = _render_frame(spec, t)
        noise = rng.normal(0.0, spec.noise_amplitude, size=image.shape).astype(np.float32)
        frames[t] = np.clip(image + noise, 0.0, 1.0)
        if t < length - 1:
            flows[t] = flow
        if t == labeled:
            labels[t] = label
    return VideoClip(
        clip_id=clip_id, seed=seed, frames=frames, labels=labels,
        flows=flows, num_classes=spec.num_classes,
    )


def random_scene_spec(
    rng: np.random.Generator,
    height: int = 64,
    width: int = 64,
    num_classes: int = 4,
    clip_length: int = 11,
    num_objects: tuple[int, int] = (2, 4),
    noise_amplitude: float = 0.1,
    channels: int = 1,
) -> SceneSpec:
    """Draw a random scene whose objects stay mostly in canvas for the clip."""
    n = int(rng.integers(num_objects[0], num_objects[1] + 1))
    objects = []
    for _ in range(n):
        vx, vy = 0, 0
        while vx == 0 and vy == 0:
            vx = int(rng.integers(-2, 3))
            vy = int(rng.integers(-2, 3))
        size = int(rng.integers(4, max(5, min(height, width) // 5)))
        travel_x = abs(vx) * (clip_length - 1)
        travel_y = abs(vy) * (clip_length - 1)
        x0 = float(rng.uniform(size, max(size + 1, width - size - travel_x)))
        y0 = float(rng.uniform(size, max(size + 1, height - size - travel_y)))
        if vx < 0:
            x0 = width - x0
        if vy < 0:
            y0 = height - y0
        class_id = int(rng.integers(1, num_classes))
        objects.append(
            ShapeSpec(
                kind="square" if rng.random() < 0.5 else "circle",
                class_id=class_id,
                size=size,
                velocity=(vx, vy),
                start=(x0, y0),
                intensity=(2 * class_id + 1) / (2 * num_classes),
            )
        )
    return SceneSpec(
        height=height, width=width, num_classes=num_classes, objects=objects,
        noise_amplitude=noise_amplitude, channels=channels,
    )


@dataclass
class Triplet:
    """A sampled (frame_f, labelled frame, frame_b) with composite flows."""

    indices: tuple[int, int, int]
    flow_fl: np.ndarray   # (2, H, W), frame_f -> labelled
    flow_lb: np.ndarray   # (2, H, W), labelled -> frame_b


def chained_flow(clip: VideoClip, a: int, b: int) -> np.ndarray:
    """Composite ground-truth flow from frame a to frame b (a <= b)."""
    if not (0 <= a <= b < clip.length):
        raise ValidationError(f"frame pair ({a}, {b}) outside clip of length {clip.length}")
    if a == b:
        return np.zeros_like(clip.flows[0]) if clip.length > 1 else np.zeros(
            (2, clip.frames.shape[2], clip.frames.shape[3]), dtype=np.float32
        )
    pieces = [torch.from_numpy(clip.flows[t]) for t in range(a, b)]
    return flowwarp.chain_flows(pieces).numpy()


def sample_triplet(clip: VideoClip, rng: np.random.Generator, window: int = 5) -> Triplet:
    """Draw frame_f before and frame_b after the labelled frame, uniformly in a window."""
    if window < 1:
        raise ValidationError(f"window must be >= 1, got {window}")
    labeled = clip.labeled_indices[0]
    if labeled <= 0 or labeled >= clip.length - 1:
        raise ValidationError("labelled frame sits at the clip boundary")
    lo_f = max(0, labeled - window)
    hi_b = min(clip.length - 1, labeled + window)
    f_idx = int(rng.integers(lo_f, labeled))
    b_idx = int(rng.integers(labeled + 1, hi_b + 1))
    return Triplet(
        indices=(f_idx, labeled, b_idx),
        flow_fl=chained_flow(clip, f_idx, labeled),
        flow_lb=chained_flow(clip, labeled, b_idx),
    )


def save_clip(clip: VideoClip, directory: str | os.PathLike) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    t_len, c, h, w = clip.frames.shape
    for t in range(t_len):
        arr = np.clip(np.rint(clip.frames[t] * 255.0), 0, 255).astype(np.uint8)
        img = arr[0] if c == 1 else arr.transpose(1, 2, 0)
        Image.fromarray(img).save(d / f"frame_{t:03d}.png")
    for t, lab in clip.labels.items():
        Image.fromarray(lab.astype(np.uint8)).save(d / f"label_{t:03d}.png")
    for t in range(t_len - 1):
        flowwarp.write_flo(d / f"flow_{t:03d}.flo", clip.flows[t].transpose(1, 2, 0))
    manifest = "\n".join(
        [
            "format_version = 1",
            f"clip_id = {clip.clip_id}",
            f"seed = {clip.seed}",
            f"length = {t_len}",
            f"channels = {c}",
            f"height = {h}",
            f"width = {w}",
            f"num_classes = {clip.num_classes}",
            f"labeled_indices = {','.join(str(i) for i in clip.labeled_indices)}",
        ]
    ) + "\n"
    tmp = d / "manifest.tmp"
    tmp.write_text(manifest)
    os.replace(tmp, d / "manifest")


def _parse_manifest(path: Path) -> dict[str, str]:
    if not path.exists():
        raise DatasetError(f"missing manifest: {path}")
    out = {}
    for line in path.read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition("=")
        out[key.strip()] = value.strip()
    return out


def load_clip(directory: str | os.PathLike) -> VideoClip:
    d = Path(directory)
    meta = _parse_manifest(d / "manifest")
    try:
        t_len = int(meta["length"])
        c = int(meta["channels"])
        h, w = int(meta["height"]), int(meta["width"])
        num_classes = int(meta["num_classes"])
        labeled = [int(s) for s in meta["labeled_indices"].split(",") if s]
        clip_id = meta["clip_id"]
        seed = int(meta["seed"])
    except (KeyError, ValueError) as exc:
        raise DatasetError(f"corrupt manifest in {d}: {exc}") from exc

    frames = np.empty((t_len, c, h, w), dtype=np.float32)
    for t in range(t_len):
        path = d / f"frame_{t:03d}.png"
        if not path.exists():
            raise DatasetError(f"missing frame file: {path}")
        arr = np.asarray(Image.open(path))
        if arr.ndim == 2:
            arr = arr[None]
        else:
            arr = arr.transpose(2, 0, 1)
        if arr.shape != (c, h, w):
            raise DatasetError(f"frame shape mismatch in {path}: {arr.shape}")
        frames[t] = arr.astype(np.float32) / 255.0

    labels: dict[int, np.ndarray] = {}
    for t in labeled:
        path = d / f"label_{t:03d}.png"
        if not path.exists():
            raise DatasetError(f"missing label file: {path}")
        lab = np.asarray(Image.open(path)).astype(np.uint8)
        if lab.shape != (h, w):
            raise DatasetError(f"label shape mismatch in {path}: {lab.shape}")
        ids = np.unique(lab)
        bad = ids[(ids >= num_classes) & (ids != IGNORE_LABEL)]
        if bad.size:
            raise ValidationError(
                f"label ids {bad.tolist()} in {path} exceed num_classes {num_classes}"
            )
        labels[t] = lab

    flows = np.empty((t_len - 1, 2, h, w), dtype=np.float32)
    for t in range(t_len - 1):
        flow = flowwarp.read_flo(d / f"flow_{t:03d}.flo")
        if flow.shape != (h, w, 2):
            raise DatasetError(f"flow shape mismatch in {d / f'flow_{t:03d}.flo'}")
        flows[t] = flow.transpose(2, 0, 1)

    return VideoClip(
        clip_id=clip_id, seed=seed, frames=frames, labels=labels,
        flows=flows, num_classes=num_classes,
    )


def generate_dataset(
    root: str | os.PathLike,
    num_train: int,
    num_val: int,
    seed: int,
    height: int = 64,
    width: int = 64,
    num_classes: int = 4,
    clip_length: int = 11,
    noise_amplitude: float = 0.1,
    channels: int = 1,
) -> dict[str, int]:
    """Generate and save a train/val split; per-clip seeds derive from ``seed``."""
    root = Path(root)
    counts = {}
    for split, count, offset in (("train", num_train, 0), ("val", num_val, 1_000_000)):
        for i in range(count):
            clip_seed_rng = np.random.default_rng([seed, offset + i])
            spec = random_scene_spec(
                clip_seed_rng, height=height, width=width, num_classes=num_classes,
                clip_length=clip_length, noise_amplitude=noise_amplitude,
                channels=channels,
            )
            clip_id = f"{split}_{i:04d}"
            clip = generate_clip(
                spec, clip_length, seed=int(clip_seed_rng.integers(2**31)), clip_id=clip_id
            )
            save_clip(clip, root / split / clip_id)
        counts[split] = count
    return counts


def load_split(root: str | os.PathLike, split: str) -> list[VideoClip]:
    split_dir = Path(root) / split
    if not split_dir.is_dir():
        raise DatasetError(f"missing dataset split directory: {split_dir}")
    clips = [load_clip(p) for p in sorted(split_dir.iterdir()) if p.is_dir()]
    if not clips:
        raise DatasetError(f"dataset split {split_dir} contains no clips")
    return clips
