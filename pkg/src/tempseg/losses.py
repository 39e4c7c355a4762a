"""Scalar training objectives and their composition.

All losses take torch tensors and return differentiable scalars.  Teacher
predictions and features enter the cross-frame distillation terms as
constants (detached here, defensively, even when the caller already ran the
teacher without gradients).  The one exception is the multi-frame embedding
distance, which must stay differentiable w.r.t. the shared ConvLSTM
parameters on both the teacher and the student side.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import torch

from . import conv_lstm, flowwarp, similarity
from .errors import ShapeMismatchError, ValidationError

PROB_EPS = 1e-8
IGNORE_LABEL = 255


@dataclass
class TermFlags:
    """Which regularization terms participate in the student objective."""

    sf: bool = False
    pf: bool = False
    mf: bool = False
    tl: bool = False

    @staticmethod
    def none() -> "TermFlags":
        return TermFlags()

    @staticmethod
    def all() -> "TermFlags":
        return TermFlags(sf=True, pf=True, mf=True, tl=True)


@dataclass
class LossBreakdown:
    """Per-term values of one sequence objective.

    Invariant: total = ce + lam * (sf_pixel + sf_pair + tl + pf + mf)
    + anti_collapse.
    """

    ce: torch.Tensor
    sf_pixel: torch.Tensor
    sf_pair: torch.Tensor
    tl: torch.Tensor
    pf: torch.Tensor
    mf: torch.Tensor
    anti_collapse: torch.Tensor
    total: torch.Tensor
    lam: float

    def floats(self) -> dict[str, float]:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = float(v.detach()) if isinstance(v, torch.Tensor) else float(v)
        return out


def _check_same_shape(a: torch.Tensor, b: torch.Tensor, what: str) -> None:
    if a.shape != b.shape:
        raise ShapeMismatchError(
            f"{what}: shapes differ, {tuple(a.shape)} vs {tuple(b.shape)}"
        )


def temporal_loss(
    q_t: torch.Tensor,
    q_tk: torch.Tensor,
    flow: torch.Tensor,
    mask: torch.Tensor,
) -> torch.Tensor:
    """Occlusion-masked mean squared L2 between q_t and the warped q_{t+k}.

    ``flow`` carries the motion from frame t to t+k; ``q_tk`` is warped back
    onto frame t's grid internally.  Gradients flow into both probability
    maps but not into the flow or the mask.
    """
    _check_same_shape(q_t, q_tk, "temporal_loss probability maps")
    if mask.shape != q_t.shape[1:]:
        raise ShapeMismatchError(
            f"mask shape {tuple(mask.shape)} != spatial shape {tuple(q_t.shape[1:])}"
        )
    q_hat = flowwarp.warp_backward(q_tk, flow)
    sq = ((q_t - q_hat) ** 2).sum(dim=0)
    return (mask.detach() * sq).mean()


def pf_loss(
    qs_t: torch.Tensor,
    qs_tk: torch.Tensor,
    qt_t: torch.Tensor,
    qt_tk: torch.Tensor,
    pooled: tuple[int, int],
) -> torch.Tensor:
    """Mean squared difference between student and teacher cross-frame similarity maps."""
    _check_same_shape(qs_t, qs_tk, "pf_loss student maps")
    _check_same_shape(qt_t, qt_tk, "pf_loss teacher maps")
    _check_same_shape(qs_t, qt_t, "pf_loss student vs teacher")
    a_s = similarity.at_operator(
        similarity.pool_to_grid(qs_t, pooled), similarity.pool_to_grid(qs_tk, pooled)
    )
    a_t = similarity.at_operator(
        similarity.pool_to_grid(qt_t.detach(), pooled),
        similarity.pool_to_grid(qt_tk.detach(), pooled),
    )
    return ((a_s - a_t) ** 2).mean()


def mf_loss(e_teacher: torch.Tensor, e_student: torch.Tensor) -> torch.Tensor:
    """Squared Euclidean distance between the two sequence embeddings.

    Both embeddings stay in the graph: they share the ConvLSTM parameters.
    """
    if e_teacher.shape != e_student.shape:
        raise ShapeMismatchError(
            f"embedding lengths differ: {tuple(e_teacher.shape)} vs {tuple(e_student.shape)}"
        )
    return ((e_teacher - e_student) ** 2).sum()


def pixel_distill(qs: torch.Tensor, qt: torch.Tensor) -> torch.Tensor:
    """Mean per-pixel KL(student || teacher) over a (K, H, W) probability pair."""
    _check_same_shape(qs, qt, "pixel_distill probability maps")
    qt = qt.detach()
    log_ratio = qs.clamp_min(PROB_EPS).log() - qt.clamp_min(PROB_EPS).log()
    return (qs * log_ratio).sum(dim=0).mean()


def pairwise_distill(fs: torch.Tensor, ft: torch.Tensor) -> torch.Tensor:
    """Mean squared difference of student vs teacher self-similarity maps.

    The grids must cover the same N locations; channel counts may differ,
    alignment happens in similarity space.
    """
    if fs.ndim != 2 or ft.ndim != 2 or fs.shape[0] != ft.shape[0]:
        raise ShapeMismatchError(
            f"grid location counts differ: {tuple(fs.shape)} vs {tuple(ft.shape)}"
        )
    a_s = similarity.at_operator(fs, fs)
    ft = ft.detach()
    a_t = similarity.at_operator(ft, ft)
    return ((a_s - a_t) ** 2).mean()


def sf_loss(
    qs: torch.Tensor,
    qt: torch.Tensor,
    fs: torch.Tensor,
    ft: torch.Tensor,
) -> torch.Tensor:
    """Single-frame distillation: pixel-wise KL plus pairwise similarity term."""
    return pixel_distill(qs, qt) + pairwise_distill(fs, ft)


def cross_entropy(q: torch.Tensor, labels: torch.Tensor, ignore: int = IGNORE_LABEL) -> torch.Tensor:
    """Mean negative log-probability of the true class over non-ignored pixels."""
    k = q.shape[0]
    if labels.shape != q.shape[1:]:
        raise ShapeMismatchError(
            f"label shape {tuple(labels.shape)} != spatial shape {tuple(q.shape[1:])}"
        )
    labels = labels.long()
    valid = labels != ignore
    bad = valid & ((labels < 0) | (labels >= k))
    if bool(bad.any()):
        raise ValidationError(
            f"labels contain ids outside [0, {k}) that are not the ignore value {ignore}"
        )
    if not bool(valid.any()):
        return q.sum() * 0.0
    safe = torch.where(valid, labels, torch.zeros_like(labels))
    picked = q.gather(0, safe.unsqueeze(0))[0]
    nll = -picked.clamp_min(PROB_EPS).log()
    return nll[valid].mean()


def anti_collapse_penalty(e_teacher: torch.Tensor, margin: float) -> torch.Tensor:
    """Hinge penalty pushing the teacher embedding norm above ``margin``."""
    return torch.relu(margin - e_teacher.norm())


def total_objective(
    frames: list[torch.Tensor],
    student_probs: list[torch.Tensor],
    student_feats: list[torch.Tensor],
    teacher_probs: list[torch.Tensor] | None,
    teacher_feats: list[torch.Tensor] | None,
    flows: list[torch.Tensor],
    labels: dict[int, torch.Tensor],
    lam: float,
    terms: TermFlags,
    convlstm: conv_lstm.ConvLSTMParams | None = None,
    pooled: tuple[int, int] = (16, 16),
    margin: float = 0.1,
) -> LossBreakdown:
    """Compose the full sequence objective over a sampled training sequence.

    ``frames``/``student_probs``/``student_feats`` are per-frame lists of
    length T; ``flows`` are the T-1 motion fields between consecutive
    sampled frames (earlier -> later); ``labels`` maps frame positions to
    hard label maps.  Distillation terms require teacher outputs and, for
    the multi-frame term, the shared ConvLSTM parameters.
    """
    t_len = len(frames)
    if len(student_probs) != t_len or len(student_feats) != t_len:
        raise ShapeMismatchError("per-frame lists must have equal length")
    if len(flows) != t_len - 1:
        raise ShapeMismatchError(
            f"expected {t_len - 1} consecutive flows, got {len(flows)}"
        )
    if not labels:
        raise ValidationError("sequence has no labeled frame")
    needs_teacher = terms.sf or terms.pf or terms.mf
    if needs_teacher and (teacher_probs is None or teacher_feats is None):
        raise ValidationError("distillation terms require teacher outputs")
    if terms.mf and convlstm is None:
        raise ValidationError("multi-frame term requires the shared ConvLSTM parameters")

    dtype = student_probs[0].dtype
    zero = torch.zeros((), dtype=dtype)

    ce = zero.clone()
    for idx, lab in labels.items():
        ce = ce + cross_entropy(student_probs[idx], lab)

    sf_pix = zero.clone()
    sf_pair = zero.clone()
    if terms.sf:
        for t in range(t_len):
            sf_pix = sf_pix + pixel_distill(student_probs[t], teacher_probs[t])
            sf_pair = sf_pair + pairwise_distill(
                similarity.pool_to_grid(student_feats[t], pooled),
                similarity.pool_to_grid(teacher_feats[t].detach(), pooled),
            )

    tl = zero.clone()
    if terms.tl:
        for t in range(t_len - 1):
            warped_frame = flowwarp.warp_backward(frames[t + 1], flows[t])
            mask = flowwarp.occlusion_mask(frames[t], warped_frame)
            tl = tl + temporal_loss(student_probs[t], student_probs[t + 1], flows[t], mask)

    pf = zero.clone()
    if terms.pf:
        for t in range(t_len - 1):
            pf = pf + pf_loss(
                student_probs[t], student_probs[t + 1],
                teacher_probs[t], teacher_probs[t + 1],
                pooled,
            )

    mf = zero.clone()
    anti = zero.clone()
    if terms.mf:
        student_maps = [
            similarity.self_similarity(f, pooled) for f in student_feats
        ]
        teacher_maps = [
            similarity.self_similarity(f.detach(), pooled) for f in teacher_feats
        ]
        e_student = conv_lstm.encode_sequence(convlstm, student_maps)
        e_teacher = conv_lstm.encode_sequence(convlstm, teacher_maps)
        mf = mf_loss(e_teacher, e_student)
        anti = anti_collapse_penalty(e_teacher, margin)

    total = ce + lam * (sf_pix + sf_pair + tl + pf + mf) + anti
    return LossBreakdown(
        ce=ce, sf_pixel=sf_pix, sf_pair=sf_pair, tl=tl, pf=pf, mf=mf,
        anti_collapse=anti, total=total, lam=lam,
    )
