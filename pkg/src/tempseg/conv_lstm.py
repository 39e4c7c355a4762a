"""Convolutional LSTM encoder for sequences of self-similarity maps.

A single-layer peephole ConvLSTM folds an ordered sequence of (N, N)
similarity maps, treated as 1-channel spatial inputs, into a flat embedding
(global average pool of the final memory grid).  All parameters are kept in
explicit tensors so that weight clipping and raw-blob serialization stay
trivial.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .errors import ShapeMismatchError, ValidationError

# Gate order used throughout for the stacked tensors.
GATES = ("input", "forget", "cell", "output")


@dataclass
class ConvLSTMParams:
    """Weights of one peephole ConvLSTM cell over 1-channel spatial input.

    input_kernels:  (4, D_h, 1, k, k)   conv kernels on the input map, gate order i/f/e/o
    hidden_kernels: (4, D_h, D_h, k, k) conv kernels on the previous hidden state
    peepholes:      (3, D_h, H, W)      elementwise weights on the memory, order i/f/o
    biases:         (4, D_h)            gate biases, order i/f/e/o
    """

    input_kernels: torch.Tensor
    hidden_kernels: torch.Tensor
    peepholes: torch.Tensor
    biases: torch.Tensor

    @property
    def hidden_channels(self) -> int:
        return self.input_kernels.shape[1]

    @property
    def spatial(self) -> tuple[int, int]:
        return tuple(self.peepholes.shape[2:])

    def tensors(self) -> list[torch.Tensor]:
        return [self.input_kernels, self.hidden_kernels, self.peepholes, self.biases]

    def requires_grad_(self, flag: bool = True) -> "ConvLSTMParams":
        for t in self.tensors():
            t.requires_grad_(flag)
        return self

    @staticmethod
    def init(
        spatial: tuple[int, int],
        hidden: int = 8,
        kernel: int = 3,
        scale: float = 0.1,
        generator: torch.Generator | None = None,
        dtype: torch.dtype = torch.float32,
    ) -> "ConvLSTMParams":
        if kernel % 2 != 1 or kernel < 1:
            raise ValidationError(f"kernel size must be odd and positive, got {kernel}")
        if hidden < 1:
            raise ValidationError(f"hidden channel count must be >= 1, got {hidden}")
        h, w = spatial

        def rand(*shape):
            return torch.randn(*shape, generator=generator, dtype=dtype) * scale

        return ConvLSTMParams(
            input_kernels=rand(4, hidden, 1, kernel, kernel),
            hidden_kernels=rand(4, hidden, hidden, kernel, kernel),
            peepholes=rand(3, hidden, h, w),
            biases=rand(4, hidden),
        )

    @staticmethod
    def zeros(
        spatial: tuple[int, int],
        hidden: int = 8,
        kernel: int = 3,
        dtype: torch.dtype = torch.float32,
    ) -> "ConvLSTMParams":
        p = ConvLSTMParams.init(spatial, hidden, kernel, scale=0.0, dtype=dtype)
        return p


@dataclass
class RecurrentState:
    """Memory and hidden grids, each shaped (D_h, H, W)."""

    memory: torch.Tensor
    hidden: torch.Tensor

    @staticmethod
    def zeros(params: ConvLSTMParams, dtype: torch.dtype) -> "RecurrentState":
        shape = (params.hidden_channels, *params.spatial)
        return RecurrentState(
            memory=torch.zeros(shape, dtype=dtype),
            hidden=torch.zeros(shape, dtype=dtype),
        )


def _conv(x: torch.Tensor, weight: torch.Tensor) -> torch.Tensor:
    return F.conv2d(x.unsqueeze(0), weight, padding=weight.shape[-1] // 2)[0]


def step(params: ConvLSTMParams, state: RecurrentState, a_t: torch.Tensor) -> RecurrentState:
    """One recurrence step on a similarity map ``a_t`` shaped (H, W) or (1, H, W)."""
    if a_t.ndim == 2:
        a_t = a_t.unsqueeze(0)
    if a_t.shape != (1, *params.spatial):
        raise ShapeMismatchError(
            f"input map shape {tuple(a_t.shape)} != (1, {params.spatial[0]}, {params.spatial[1]})"
        )
    if tuple(state.memory.shape) != (params.hidden_channels, *params.spatial):
        raise ShapeMismatchError(
            f"state shape {tuple(state.memory.shape)} incompatible with parameters"
        )
    w_in, w_hid = params.input_kernels, params.hidden_kernels
    bias = params.biases.reshape(4, -1, 1, 1)
    e_prev, h_prev = state.memory, state.hidden

    i = torch.sigmoid(
        _conv(a_t, w_in[0]) + _conv(h_prev, w_hid[0]) + params.peepholes[0] * e_prev + bias[0]
    )
    f = torch.sigmoid(
        _conv(a_t, w_in[1]) + _conv(h_prev, w_hid[1]) + params.peepholes[1] * e_prev + bias[1]
    )
    e_new = f * e_prev + i * torch.tanh(
        _conv(a_t, w_in[2]) + _conv(h_prev, w_hid[2]) + bias[2]
    )
    o = torch.sigmoid(
        _conv(a_t, w_in[3]) + _conv(h_prev, w_hid[3]) + params.peepholes[2] * e_new + bias[3]
    )
    return RecurrentState(memory=e_new, hidden=o * torch.tanh(e_new))


def encode_sequence(params: ConvLSTMParams, maps: list[torch.Tensor]) -> torch.Tensor:
    """Fold similarity maps into a flat embedding of length D_h.

    Runs the recurrence from a zero state and global-average-pools the final
    memory grid.
    """
    if not maps:
        raise ValidationError("cannot encode an empty sequence")
    state = RecurrentState.zeros(params, dtype=maps[0].dtype)
    for a_t in maps:
        state = step(params, state, a_t)
    return state.memory.mean(dim=(1, 2))


def clip_weights(params: ConvLSTMParams, lo: float, hi: float) -> ConvLSTMParams:
    """Elementwise clamp of every parameter tensor into [lo, hi]."""
    if lo >= hi:
        raise ValidationError(f"clip range requires lo < hi, got [{lo}, {hi}]")
    return ConvLSTMParams(
        input_kernels=params.input_kernels.clamp(lo, hi),
        hidden_kernels=params.hidden_kernels.clamp(lo, hi),
        peepholes=params.peepholes.clamp(lo, hi),
        biases=params.biases.clamp(lo, hi),
    )


def clip_weights_(params: ConvLSTMParams, lo: float, hi: float) -> None:
    """In-place clamp on ``.data``; used after each optimizer update."""
    if lo >= hi:
        raise ValidationError(f"clip range requires lo < hi, got [{lo}, {hi}]")
    for t in params.tensors():
        t.data.clamp_(lo, hi)
