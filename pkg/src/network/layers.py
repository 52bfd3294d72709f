"""
Differentiable numpy primitives.

Every *_forward returns (output, cache); the matching *_backward takes
(d_output, cache) and returns the input gradient plus parameter gradients.
Feature maps are (channels, frames, bins) float64 arrays.
"""

import threading
from contextlib import contextmanager
from typing import Any, Dict, Iterator, List, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from errors import ShapeMismatch

Cache = Dict[str, Any]


# --- ACTIVATIONS ---

_tape = threading.local()


@contextmanager
def record_relu_masks() -> Iterator[List[np.ndarray]]:
    """Collects, in call order, the activation pattern of every relu_forward on this thread."""
    masks: List[np.ndarray] = []
    _tape.record = masks
    try:
        yield masks
    finally:
        _tape.record = None


@contextmanager
def replay_relu_masks(masks: Sequence[np.ndarray]) -> Iterator[None]:
    """Forces relu_forward calls to reuse recorded patterns (finite differences inside one linear region)."""
    _tape.replay = iter(masks)
    try:
        yield
    finally:
        _tape.replay = None


def relu_forward(x: np.ndarray) -> Tuple[np.ndarray, Cache]:
    replay = getattr(_tape, "replay", None)
    if replay is not None:
        mask = next(replay)
        if mask.shape != x.shape:
            raise ShapeMismatch(f"replayed relu pattern {mask.shape} does not fit {x.shape}")
    else:
        mask = x > 0
    record = getattr(_tape, "record", None)
    if record is not None:
        record.append(mask)
    return x * mask, {"mask": mask}


def relu_backward(dy: np.ndarray, cache: Cache) -> np.ndarray:
    return dy * cache["mask"]


def sigmoid(x: np.ndarray) -> np.ndarray:
    # Split by sign so large negative logits do not overflow exp.
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = x - np.max(x, axis=axis, keepdims=True)
    ex = np.exp(shifted)
    return ex / np.sum(ex, axis=axis, keepdims=True)


def softmax_backward(dy: np.ndarray, probs: np.ndarray, axis: int = -1) -> np.ndarray:
    return probs * (dy - np.sum(dy * probs, axis=axis, keepdims=True))


# --- AFFINE MAPS ---

def linear_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> Tuple[np.ndarray, Cache]:
    """x (..., in) @ w (in, out) + b (out,)."""
    if x.shape[-1] != w.shape[0]:
        raise ShapeMismatch(f"linear expects last dim {w.shape[0]}, got {x.shape}")
    return x @ w + b, {"x": x, "w": w}


def linear_backward(dy: np.ndarray, cache: Cache) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    x, w = cache["x"], cache["w"]
    x2 = x.reshape(-1, w.shape[0])
    dy2 = dy.reshape(-1, w.shape[1])
    return dy @ w.T, x2.T @ dy2, dy2.sum(axis=0)


def pointwise_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> Tuple[np.ndarray, Cache]:
    """1x1 convolution: y[o,t,f] = sum_c w[o,c] x[c,t,f] + b[o]."""
    if x.ndim != 3 or x.shape[0] != w.shape[1]:
        raise ShapeMismatch(f"pointwise conv expects {w.shape[1]} input channels, got shape {x.shape}")
    y = np.einsum("oc,ctf->otf", w, x) + b[:, None, None]
    return y, {"x": x, "w": w}


def pointwise_backward(dy: np.ndarray, cache: Cache) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    x, w = cache["x"], cache["w"]
    dx = np.einsum("oc,otf->ctf", w, dy)
    dw = np.einsum("otf,ctf->oc", dy, x)
    return dx, dw, dy.sum(axis=(1, 2))


# --- 2-D CONVOLUTIONS ---

def conv_output_size(n: int, kernel: int = 3, stride: int = 1, pad: int = 1) -> int:
    return (n + 2 * pad - kernel) // stride + 1


def conv2d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: int = 1, pad: int = 1) -> Tuple[np.ndarray, Cache]:
    """
    Cross-correlation via im2col windows.

    Args:
        x: (Cin, T, F)
        w: (Cout, Cin, kh, kw)
        b: (Cout,)
    """
    if x.ndim != 3 or x.shape[0] != w.shape[1]:
        raise ShapeMismatch(f"conv expects {w.shape[1]} input channels, got shape {x.shape}")
    kh, kw = w.shape[2:]
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    windows = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
    y = np.einsum("cthij,ocij->oth", windows, w) + b[:, None, None]
    return y, {"x_shape": x.shape, "windows": windows, "w": w, "stride": stride, "pad": pad}


def conv2d_backward(dy: np.ndarray, cache: Cache) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    w, windows, stride, pad = cache["w"], cache["windows"], cache["stride"], cache["pad"]
    cin, t, f = cache["x_shape"]
    kh, kw = w.shape[2:]
    t_out, f_out = dy.shape[1:]

    dw = np.einsum("oth,cthij->ocij", dy, windows)
    dwin = np.einsum("oth,ocij->cthij", dy, w)
    dxp = np.zeros((cin, t + 2 * pad, f + 2 * pad))
    for i in range(kh):
        for j in range(kw):
            dxp[:, i:i + stride * t_out:stride, j:j + stride * f_out:stride] += dwin[:, :, :, i, j]
    dx = dxp[:, pad:pad + t, pad:pad + f]
    return dx, dw, dy.sum(axis=(1, 2))


def conv_transpose2d_forward(
    x: np.ndarray, w: np.ndarray, b: np.ndarray, out_shape: Tuple[int, int], stride: int = 2, pad: int = 1
) -> Tuple[np.ndarray, Cache]:
    """
    Transposed convolution (adjoint of conv2d with the same stride/pad).

    Args:
        x: (Cin, Ti, Fi)
        w: (Cin, Cout, kh, kw)
        out_shape: (To, Fo) such that conv2d maps (To, Fo) back onto (Ti, Fi)
    """
    if x.ndim != 3 or x.shape[0] != w.shape[0]:
        raise ShapeMismatch(f"transposed conv expects {w.shape[0]} input channels, got shape {x.shape}")
    t_out, f_out = out_shape
    kh, kw = w.shape[2:]
    if conv_output_size(t_out, kh, stride, pad) != x.shape[1] or conv_output_size(f_out, kw, stride, pad) != x.shape[2]:
        raise ShapeMismatch(f"cannot up-sample {x.shape[1:]} to {out_shape}")
    t_in, f_in = x.shape[1:]

    contrib = np.einsum("cth,coij->othij", x, w)
    yp = np.zeros((w.shape[1], t_out + 2 * pad, f_out + 2 * pad))
    for i in range(kh):
        for j in range(kw):
            yp[:, i:i + stride * t_in:stride, j:j + stride * f_in:stride] += contrib[:, :, :, i, j]
    y = yp[:, pad:pad + t_out, pad:pad + f_out] + b[:, None, None]
    return y, {"x": x, "w": w, "stride": stride, "pad": pad}


def conv_transpose2d_backward(dy: np.ndarray, cache: Cache) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    x, w, stride, pad = cache["x"], cache["w"], cache["stride"], cache["pad"]
    kh, kw = w.shape[2:]
    t_in, f_in = x.shape[1:]
    dyp = np.pad(dy, ((0, 0), (pad, pad), (pad, pad)))
    windows = sliding_window_view(dyp, (kh, kw), axis=(1, 2))[:, ::stride, ::stride][:, :t_in, :f_in]
    dx = np.einsum("othij,coij->cth", windows, w)
    dw = np.einsum("cth,othij->coij", x, windows)
    return dx, dw, dy.sum(axis=(1, 2))


# --- INITIALIZATION ---

def he_normal(rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int) -> np.ndarray:
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)


def lecun_normal(rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int, gain: float = 1.0) -> np.ndarray:
    return rng.normal(0.0, gain / np.sqrt(fan_in), size=shape)
