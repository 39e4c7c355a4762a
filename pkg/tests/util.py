"""Shared test oracles: central finite differences and brute-force warping."""

import numpy as np
import torch


def central_difference_grad(fn, x: torch.Tensor, eps: float = 1e-6) -> torch.Tensor:
    """Central finite-difference gradient of a scalar function at x (float64)."""
    grad = torch.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.numel()):
        orig = flat[i].item()
        flat[i] = orig + eps
        hi = float(fn(x))
        flat[i] = orig - eps
        lo = float(fn(x))
        flat[i] = orig
        gflat[i] = (hi - lo) / (2 * eps)
    return grad


def relative_error(a: torch.Tensor, b: torch.Tensor) -> float:
    denom = max(float(a.norm()), float(b.norm()), 1e-12)
    return float((a - b).norm()) / denom


def autograd_vs_fd(fn, x: torch.Tensor, eps: float = 1e-6) -> float:
    """Relative error between autograd and finite-difference gradients at x."""
    xg = x.clone().requires_grad_(True)
    fn(xg).backward()
    fd = central_difference_grad(fn, x.clone())
    return relative_error(xg.grad, fd)


def brute_force_warp(src: np.ndarray, flow: np.ndarray) -> np.ndarray:
    """Scalar-loop bilinear backward warp with border clamp; src (C,H,W), flow (2,H,W)."""
    c, h, w = src.shape
    out = np.zeros_like(src)
    for y in range(h):
        for x in range(w):
            gx = min(max(x + flow[0, y, x], 0.0), w - 1.0)
            gy = min(max(y + flow[1, y, x], 0.0), h - 1.0)
            x0, y0 = int(np.floor(gx)), int(np.floor(gy))
            x1, y1 = min(x0 + 1, w - 1), min(y0 + 1, h - 1)
            wx, wy = gx - x0, gy - y0
            for ch in range(c):
                top = (1 - wx) * src[ch, y0, x0] + wx * src[ch, y0, x1]
                bot = (1 - wx) * src[ch, y1, x0] + wx * src[ch, y1, x1]
                out[ch, y, x] = (1 - wy) * top + wy * bot
    return out


def brute_force_cosine_map(x1: np.ndarray, x2: np.ndarray) -> np.ndarray:
    """Double-loop cosine-similarity map; zero-norm rows give similarity 0."""
    n = x1.shape[0]
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            ni = np.linalg.norm(x1[i])
            nj = np.linalg.norm(x2[j])
            if ni == 0 or nj == 0:
                out[i, j] = 0.0
            else:
                out[i, j] = float(x1[i] @ x2[j]) / (ni * nj)
    return out
