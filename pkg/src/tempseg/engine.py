"""Teacher pretraining, student distillation, checkpointing, and evaluation.

Training is a single-threaded SGD-with-momentum loop over sampled triplets
with a poly learning-rate schedule.  Per-iteration sampling uses a stateless
RNG keyed on (seed, role, iteration), so a resumed run continues the exact
sample sequence of an uninterrupted one.  Checkpoints are directories with
a key=value manifest and raw little-endian float32 parameter blobs.
"""

from __future__ import annotations

import os
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from . import data as data_mod
from . import metrics as metrics_mod
from . import models
from .config import Config, TrainingConfig, parse_config_text
from .conv_lstm import ConvLSTMParams, clip_weights_
from .errors import CheckpointError, DivergenceError, ValidationError
from .losses import TermFlags, total_objective

CHECKPOINT_VERSION = 1
LOG_NAME = "train_log.txt"

_ROLE_SALT = {"teacher": 101, "student": 202}

# Ablation grid of term-flag combinations, keyed by scheme letter.
SCHEMES: dict[str, TermFlags] = {
    "a": TermFlags(),
    "b": TermFlags(sf=True),
    "c": TermFlags(pf=True),
    "d": TermFlags(mf=True),
    "e": TermFlags(tl=True),
    "f": TermFlags(pf=True, mf=True),
    "g": TermFlags(sf=True, tl=True),
    "h": TermFlags(pf=True, mf=True, tl=True),
    "i": TermFlags(sf=True, pf=True, mf=True),
    "j": TermFlags(sf=True, pf=True, mf=True, tl=True),
}
DEFAULT_SCHEME_GRID = ("a", "b", "c", "d", "e", "j")


def poly_lr(iteration: int, config: TrainingConfig) -> float:
    """base_lr * (1 - iteration / max_iterations) ** poly_power."""
    if iteration < 0 or iteration > config.max_iterations:
        raise ValidationError(
            f"iteration {iteration} outside [0, {config.max_iterations}]"
        )
    if config.max_iterations == 0:
        return config.base_lr
    frac = 1.0 - iteration / config.max_iterations
    return config.base_lr * frac**config.poly_power


@dataclass
class Checkpoint:
    role: str
    iteration: int
    config: Config
    model: models.TinySegNet
    convlstm: ConvLSTMParams | None = None


def _flat_blob(tensors: list[torch.Tensor]) -> bytes:
    parts = [t.detach().cpu().numpy().astype("<f4", copy=False).tobytes() for t in tensors]
    return b"".join(parts)


def _write_blob(path: Path, tensors: list[torch.Tensor]) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(_flat_blob(tensors))
    os.replace(tmp, path)


def _read_blob(path: Path, tensors: list[torch.Tensor]) -> None:
    if not path.exists():
        raise CheckpointError(f"missing parameter blob: {path}")
    raw = np.frombuffer(path.read_bytes(), dtype="<f4")
    expect = sum(t.numel() for t in tensors)
    if raw.size != expect:
        raise CheckpointError(
            f"parameter blob {path} has {raw.size} floats, expected {expect}"
        )
    offset = 0
    for t in tensors:
        n = t.numel()
        with torch.no_grad():
            t.copy_(torch.from_numpy(raw[offset:offset + n].copy()).reshape(t.shape))
        offset += n


def _momentum_tensors(optimizer: torch.optim.SGD, params: list[torch.Tensor]):
    out = []
    for p in params:
        state = optimizer.state.get(p, {})
        buf = state.get("momentum_buffer")
        out.append(buf if buf is not None else torch.zeros_like(p))
    return out


def save_checkpoint(
    ckpt: Checkpoint,
    directory: str | os.PathLike,
    optimizer: torch.optim.SGD | None = None,
    opt_params: list[torch.Tensor] | None = None,
) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    _write_blob(d / "segnet.bin", list(ckpt.model.parameters()))
    lines = [
        f"format_version = {CHECKPOINT_VERSION}",
        f"role = {ckpt.role}",
        f"iteration = {ckpt.iteration}",
        f"net_channels = {','.join(str(c) for c in ckpt.model.config.channels)}",
        f"has_convlstm = {ckpt.convlstm is not None}",
    ]
    if ckpt.convlstm is not None:
        _write_blob(d / "convlstm.bin", ckpt.convlstm.tensors())
        sh, sw = ckpt.convlstm.spatial
        lines += [
            f"convlstm_hidden = {ckpt.convlstm.hidden_channels}",
            f"convlstm_kernel = {ckpt.convlstm.input_kernels.shape[-1]}",
            f"convlstm_spatial = {sh},{sw}",
        ]
    if optimizer is not None and opt_params is not None:
        _write_blob(d / "momentum.bin", _momentum_tensors(optimizer, opt_params))
    from .config import dump_config

    manifest = "\n".join(lines) + "\n" + dump_config(ckpt.config)
    tmp = d / "manifest.tmp"
    tmp.write_text(manifest)
    os.replace(tmp, d / "manifest")


def _parse_manifest(path: Path) -> dict[str, str]:
    out = {}
    for line in path.read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition("=")
        out[key.strip()] = value.strip()
    return out


def load_checkpoint(directory: str | os.PathLike) -> Checkpoint:
    d = Path(directory)
    manifest_path = d / "manifest"
    if not manifest_path.exists():
        raise CheckpointError(f"not a checkpoint directory (no manifest): {d}")
    meta = _parse_manifest(manifest_path)
    version = meta.get("format_version")
    if version != str(CHECKPOINT_VERSION):
        raise CheckpointError(
            f"checkpoint format version {version!r} unsupported (expected {CHECKPOINT_VERSION})"
        )
    cfg_lines = "\n".join(
        f"{k} = {v}" for k, v in meta.items() if k.startswith(("data.", "train."))
    )
    cfg = parse_config_text(cfg_lines)
    channels = tuple(int(c) for c in meta["net_channels"].split(","))
    net_cfg = models.SegNetConfig(
        channels=channels,
        num_classes=cfg.data.num_classes,
        in_channels=cfg.data.channels,
    )
    model = models.TinySegNet(net_cfg, seed=cfg.train.seed)
    _read_blob(d / "segnet.bin", list(model.parameters()))
    convlstm = None
    if meta.get("has_convlstm") == "True":
        sh, sw = (int(x) for x in meta["convlstm_spatial"].split(","))
        convlstm = ConvLSTMParams.init(
            (sh, sw),
            hidden=int(meta["convlstm_hidden"]),
            kernel=int(meta["convlstm_kernel"]),
            scale=0.0,
        )
        _read_blob(d / "convlstm.bin", convlstm.tensors())
    return Checkpoint(
        role=meta.get("role", "?"),
        iteration=int(meta.get("iteration", "0")),
        config=cfg,
        model=model,
        convlstm=convlstm,
    )


def _log_line(iteration: int, lr: float, bd: dict[str, float]) -> str:
    keys = ["ce", "sf_pixel", "sf_pair", "tl", "pf", "mf", "anti_collapse", "total"]
    parts = [f"iter={iteration}", f"lr={lr!r}"]
    parts += [f"{k}={bd[k]!r}" for k in keys]
    return " ".join(parts)


def _clip_tensors(clip: data_mod.VideoClip, triplet: data_mod.Triplet):
    f_idx, l_idx, b_idx = triplet.indices
    frames = [torch.from_numpy(clip.frames[i]) for i in (f_idx, l_idx, b_idx)]
    flows = [torch.from_numpy(triplet.flow_fl), torch.from_numpy(triplet.flow_lb)]
    labels = {1: torch.from_numpy(clip.labels[l_idx].astype(np.int64))}
    return frames, flows, labels


def _forward_frames(model: models.TinySegNet, frames: list[torch.Tensor]):
    feats, probs = model(torch.stack(frames))
    return list(feats.unbind(0)), list(probs.unbind(0))


def _train_loop(
    role: str,
    cfg: Config,
    clips: list[data_mod.VideoClip],
    model: models.TinySegNet,
    convlstm: ConvLSTMParams | None,
    teacher: models.TinySegNet | None,
    terms: TermFlags,
    out_dir: Path,
    resume: bool,
) -> Checkpoint:
    tcfg = cfg.train
    out_dir.mkdir(parents=True, exist_ok=True)
    log_path = out_dir / LOG_NAME

    params: list[torch.Tensor] = list(model.parameters())
    if convlstm is not None:
        convlstm.requires_grad_(True)
        params += convlstm.tensors()
    optimizer = torch.optim.SGD(params, lr=tcfg.base_lr, momentum=tcfg.momentum)

    start_iter = 0
    if resume and (out_dir / "manifest").exists():
        prev = load_checkpoint(out_dir)
        start_iter = prev.iteration
        _read_blob(out_dir / "segnet.bin", list(model.parameters()))
        if convlstm is not None:
            _read_blob(out_dir / "convlstm.bin", convlstm.tensors())
        if (out_dir / "momentum.bin").exists() and start_iter > 0:
            bufs = [torch.zeros_like(p) for p in params]
            _read_blob(out_dir / "momentum.bin", bufs)
            for p, buf in zip(params, bufs):
                optimizer.state[p] = {"momentum_buffer": buf}
        # Drop any log lines past the checkpointed iteration so a resumed
        # log is byte-identical to an uninterrupted one.
        if log_path.exists():
            kept = log_path.read_text().splitlines()[:start_iter]
            log_path.write_text("".join(line + "\n" for line in kept))

    if teacher is not None:
        teacher.eval()
        for p in teacher.parameters():
            p.requires_grad_(False)

    salt = _ROLE_SALT[role]
    log_f = open(log_path, "a")
    try:
        for it in range(start_iter, tcfg.max_iterations):
            lr = poly_lr(it, tcfg)
            for group in optimizer.param_groups:
                group["lr"] = lr
            optimizer.zero_grad()
            rng = np.random.default_rng([tcfg.seed, salt, it])
            acc: dict[str, float] = {}
            batch_total = None
            for _ in range(tcfg.batch_size):
                clip = clips[int(rng.integers(len(clips)))]
                triplet = data_mod.sample_triplet(clip, rng, window=tcfg.window)
                frames, flows, labels = _clip_tensors(clip, triplet)
                s_feats, s_probs = _forward_frames(model, frames)
                if teacher is not None:
                    with torch.no_grad():
                        t_feats, t_probs = _forward_frames(teacher, frames)
                else:
                    t_feats = t_probs = None
                bd = total_objective(
                    frames, s_probs, s_feats, t_probs, t_feats, flows, labels,
                    lam=tcfg.lam, terms=terms, convlstm=convlstm,
                    pooled=tcfg.pooled, margin=tcfg.margin,
                )
                sample_total = bd.total / tcfg.batch_size
                batch_total = sample_total if batch_total is None else batch_total + sample_total
                for k, v in bd.floats().items():
                    acc[k] = acc.get(k, 0.0) + v / tcfg.batch_size
            if not torch.isfinite(batch_total):
                dump = out_dir / "divergence_dump.txt"
                dump.write_text(
                    f"iteration = {it}\nlr = {lr!r}\n"
                    + "\n".join(f"{k} = {v!r}" for k, v in acc.items())
                    + "\n"
                )
                raise DivergenceError(
                    f"non-finite loss at iteration {it}; diagnostics in {dump}"
                )
            batch_total.backward()
            optimizer.step()
            if convlstm is not None:
                clip_weights_(convlstm, tcfg.clip_lo, tcfg.clip_hi)
            log_f.write(_log_line(it, lr, acc) + "\n")
            log_f.flush()
            next_it = it + 1
            if tcfg.checkpoint_every and next_it % tcfg.checkpoint_every == 0:
                save_checkpoint(
                    Checkpoint(role, next_it, cfg, model, convlstm),
                    out_dir, optimizer, params,
                )
    finally:
        log_f.close()

    ckpt = Checkpoint(role, tcfg.max_iterations, cfg, model, convlstm)
    save_checkpoint(ckpt, out_dir, optimizer, params)
    return ckpt


def train_teacher(
    cfg: Config,
    dataset_root: str | os.PathLike,
    out_dir: str | os.PathLike,
    resume: bool = False,
) -> Checkpoint:
    """Pretrain the teacher with cross-entropy plus (optionally) the temporal loss."""
    cfg.validate()
    clips = data_mod.load_split(dataset_root, "train")
    model = models.TinySegNet(
        models.teacher_config(cfg.data.num_classes, cfg.data.channels),
        seed=cfg.train.seed,
    )
    terms = TermFlags(tl=cfg.train.teacher_use_tl)
    return _train_loop(
        "teacher", cfg, clips, model, None, None, terms, Path(out_dir), resume
    )


def train_student(
    cfg: Config,
    dataset_root: str | os.PathLike,
    teacher_ckpt: Checkpoint,
    out_dir: str | os.PathLike,
    resume: bool = False,
) -> Checkpoint:
    """Distill a student against a frozen teacher under the configured term flags."""
    cfg.validate()
    clips = data_mod.load_split(dataset_root, "train")
    model = models.TinySegNet(
        models.student_config(cfg.data.num_classes, cfg.data.channels),
        seed=cfg.train.seed + 1,
    )
    convlstm = None
    if cfg.train.terms.mf:
        n = cfg.train.pooled_h * cfg.train.pooled_w
        gen = torch.Generator().manual_seed(cfg.train.seed + 2)
        convlstm = ConvLSTMParams.init(
            (n, n),
            hidden=cfg.train.convlstm_hidden,
            kernel=cfg.train.convlstm_kernel,
            generator=gen,
        )
    return _train_loop(
        "student", cfg, clips, model, convlstm, teacher_ckpt.model,
        cfg.train.terms, Path(out_dir), resume,
    )


def evaluate(
    ckpt: Checkpoint,
    dataset_root: str | os.PathLike,
    split: str = "val",
) -> metrics_mod.EvalReport:
    """Per-frame inference over a split, joined accuracy/TC report.

    Each frame is predicted independently from its pixels and the model
    parameters alone; no flow, teacher, or recurrence is used at test time.
    """
    clips = data_mod.load_split(dataset_root, split)
    model = ckpt.model
    model.eval()
    preds_labeled: list[np.ndarray] = []
    gts: list[np.ndarray] = []
    pred_seqs: list[list[np.ndarray]] = []
    flow_seqs: list[list[np.ndarray]] = []
    clip_ids: list[str] = []
    frame_count = 0
    start = time.perf_counter()
    with torch.no_grad():
        for clip in clips:
            seq = []
            for t in range(clip.length):
                _, probs = model.predict_frame(torch.from_numpy(clip.frames[t]))
                seq.append(probs.argmax(dim=0).numpy().astype(np.uint8))
                frame_count += 1
            pred_seqs.append(seq)
            flow_seqs.append([clip.flows[t] for t in range(clip.length - 1)])
            clip_ids.append(clip.clip_id)
            for idx in clip.labeled_indices:
                preds_labeled.append(seq[idx])
                gts.append(clip.labels[idx])
    elapsed = time.perf_counter() - start
    report = metrics_mod.per_class_report(
        preds_labeled, gts, pred_seqs, flow_seqs, clips[0].num_classes
    )
    report.param_count = model.param_count()
    report.fps = frame_count / elapsed if elapsed > 0 else 0.0
    report.clip_ids = clip_ids
    return report
