"""NCHW float32 tensors and the handful of neural operators the detector needs.

A tensor here is a plain numpy array of shape (batch, channels, height, width),
float32 and C-contiguous.  Every operator is pure: inputs are never mutated and
identical inputs give bit-identical outputs.  conv2d and maxpool2d come with
slow loop-based reference twins (`*_naive`) that serve as independent oracles
in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DTYPE = np.float32
_NEG_INF = np.float32(-np.inf)


def _pair(v) -> tuple[int, int]:
    if isinstance(v, (tuple, list)):
        a, b = v
        return int(a), int(b)
    return int(v), int(v)


def same_padding(kernel) -> tuple[int, int]:
    """floor(kernel / 2) per axis: keeps spatial size for stride 1."""
    kh, kw = _pair(kernel)
    return kh // 2, kw // 2


@dataclass(frozen=True)
class ConvParams:
    """Geometry of one conv/pool layer; padding defaults to floor(kernel/2)."""

    kernel: tuple[int, int]
    stride: int
    out_channels: int
    padding: tuple[int, int] | None = None

    def __post_init__(self):
        object.__setattr__(self, "kernel", _pair(self.kernel))
        if self.padding is None:
            object.__setattr__(self, "padding", same_padding(self.kernel))
        else:
            object.__setattr__(self, "padding", _pair(self.padding))
        if self.stride < 1:
            raise ValueError(f"stride must be >= 1, got {self.stride}")
        if self.out_channels < 1:
            raise ValueError(f"out_channels must be >= 1, got {self.out_channels}")
        if min(self.padding) < 0:
            raise ValueError(f"padding must be >= 0, got {self.padding}")


def as_tensor(data) -> np.ndarray:
    """Coerce to a contiguous float32 NCHW tensor; all four dims must be >= 1."""
    x = np.ascontiguousarray(data, dtype=DTYPE)
    if x.ndim != 4:
        raise ValueError(f"tensor must be 4-d (n, c, h, w), got shape {x.shape}")
    if min(x.shape) < 1:
        raise ValueError(f"tensor dims must all be >= 1, got shape {x.shape}")
    return x


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    """floor((size + 2*padding - kernel) / stride) + 1, rejecting degenerate fits."""
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    if padding < 0:
        raise ValueError(f"padding must be >= 0, got {padding}")
    out = (size + 2 * padding - kernel) // stride + 1
    if out < 1:
        raise ValueError(
            f"kernel {kernel} (stride {stride}, padding {padding}) does not fit "
            f"input size {size}"
        )
    return out


def _window_view(padded: np.ndarray, kh, kw, sh, sw, oh, ow) -> np.ndarray:
    # read-only sliding windows (n, c, kh, kw, oh, ow); no data copied
    n, c, _, _ = padded.shape
    sn, sc, srow, scol = padded.strides
    return np.lib.stride_tricks.as_strided(
        padded,
        shape=(n, c, kh, kw, oh, ow),
        strides=(sn, sc, srow, scol, srow * sh, scol * sw),
        writeable=False,
    )


def conv2d(x, weight, bias, stride=1, padding=0) -> np.ndarray:
    """Cross-correlate x (n,ci,h,w) with weight (co,ci,kh,kw), add bias (co,).

    Fast path: sliding windows gathered with stride tricks, reduced by one
    BLAS matmul (float32 accumulation).  No kernel flip.
    """
    x = as_tensor(x)
    weight = np.ascontiguousarray(weight, dtype=DTYPE)
    bias = np.ascontiguousarray(bias, dtype=DTYPE)
    if weight.ndim != 4:
        raise ValueError(f"conv weight must be 4-d (co, ci, kh, kw), got {weight.shape}")
    n, ci, h, w = x.shape
    co, wci, kh, kw = weight.shape
    if wci != ci:
        raise ValueError(f"weight expects {wci} input channels, tensor has {ci}")
    if bias.shape != (co,):
        raise ValueError(f"bias must have shape ({co},), got {bias.shape}")
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    oh = conv_output_size(h, kh, sh, ph)
    ow = conv_output_size(w, kw, sw, pw)
    padded = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    windows = _window_view(padded, kh, kw, sh, sw, oh, ow)
    out = np.tensordot(weight, windows, axes=([1, 2, 3], [1, 2, 3]))
    out = np.ascontiguousarray(out.transpose(1, 0, 2, 3))
    out += bias.reshape(1, co, 1, 1)
    return out


def conv2d_naive(x, weight, bias, stride=1, padding=0) -> np.ndarray:
    """Reference conv: explicit loops, float64 accumulation.  Test oracle only."""
    x = as_tensor(x)
    weight = np.asarray(weight, dtype=DTYPE)
    bias = np.asarray(bias, dtype=DTYPE)
    n, ci, h, w = x.shape
    co, wci, kh, kw = weight.shape
    if wci != ci:
        raise ValueError(f"weight expects {wci} input channels, tensor has {ci}")
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    oh = conv_output_size(h, kh, sh, ph)
    ow = conv_output_size(w, kw, sw, pw)
    out = np.zeros((n, co, oh, ow), dtype=np.float64)
    for b in range(n):
        for o in range(co):
            for oy in range(oh):
                for ox in range(ow):
                    acc = float(bias[o])
                    for c in range(ci):
                        for i in range(kh):
                            iy = oy * sh + i - ph
                            if iy < 0 or iy >= h:
                                continue
                            for j in range(kw):
                                ix = ox * sw + j - pw
                                if 0 <= ix < w:
                                    acc += float(x[b, c, iy, ix]) * float(weight[o, c, i, j])
                    out[b, o, oy, ox] = acc
    return out.astype(DTYPE)


def maxpool2d(x, kernel, stride=1, padding=0) -> np.ndarray:
    """Max over sliding windows; padded cells act as -inf and are never chosen
    while any real cell is in the window."""
    x = as_tensor(x)
    kh, kw = _pair(kernel)
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    if ph >= kh or pw >= kw:
        raise ValueError(
            f"padding {ph, pw} >= kernel {kh, kw} would create windows entirely "
            "outside the input"
        )
    n, c, h, w = x.shape
    oh = conv_output_size(h, kh, sh, ph)
    ow = conv_output_size(w, kw, sw, pw)
    padded = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)), constant_values=_NEG_INF)
    out = np.full((n, c, oh, ow), _NEG_INF, dtype=DTYPE)
    for i in range(kh):
        for j in range(kw):
            np.maximum(
                out,
                padded[:, :, i : i + (oh - 1) * sh + 1 : sh, j : j + (ow - 1) * sw + 1 : sw],
                out=out,
            )
    return out


def maxpool2d_naive(x, kernel, stride=1, padding=0) -> np.ndarray:
    """Reference max pool with explicit loops.  Test oracle only."""
    x = as_tensor(x)
    kh, kw = _pair(kernel)
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    if ph >= kh or pw >= kw:
        raise ValueError("padding >= kernel would create windows entirely outside the input")
    n, c, h, w = x.shape
    oh = conv_output_size(h, kh, sh, ph)
    ow = conv_output_size(w, kw, sw, pw)
    out = np.full((n, c, oh, ow), -np.inf, dtype=np.float64)
    for b in range(n):
        for ch in range(c):
            for oy in range(oh):
                for ox in range(ow):
                    best = -np.inf
                    for i in range(kh):
                        iy = oy * sh + i - ph
                        if iy < 0 or iy >= h:
                            continue
                        for j in range(kw):
                            ix = ox * sw + j - pw
                            if 0 <= ix < w:
                                best = max(best, float(x[b, ch, iy, ix]))
                    out[b, ch, oy, ox] = best
    return out.astype(DTYPE)


def relu(x) -> np.ndarray:
    return np.maximum(as_tensor(x), 0)


def crelu(x) -> np.ndarray:
    """Concatenate relu(x) with relu(-x) along channels, doubling them.

    For every position exactly one of (channel j, channel j + c) is zero
    unless the input there is zero.
    """
    x = as_tensor(x)
    return np.concatenate([np.maximum(x, 0), np.maximum(-x, 0)], axis=1)


def concat_channels(inputs) -> np.ndarray:
    """Stack tensors along the channel axis; batch and spatial dims must agree."""
    tensors = [as_tensor(t) for t in inputs]
    if not tensors:
        raise ValueError("concat_channels needs at least one input")
    first = tensors[0]
    for t in tensors[1:]:
        if t.shape[0] != first.shape[0] or t.shape[2:] != first.shape[2:]:
            raise ValueError(
                f"cannot concat shapes {first.shape} and {t.shape}: "
                "batch or spatial dims differ"
            )
    return np.concatenate(tensors, axis=1)


def softmax_pairs(logits) -> np.ndarray:
    """Softmax over adjacent channel pairs (2i, 2i+1), max-subtracted so large
    logits cannot overflow.  Each pair sums to 1."""
    x = as_tensor(logits)
    n, c, h, w = x.shape
    if c % 2:
        raise ValueError(f"softmax_pairs needs an even channel count, got {c}")
    pairs = x.reshape(n, c // 2, 2, h, w)
    shifted = pairs - pairs.max(axis=2, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=2, keepdims=True)
    return np.ascontiguousarray(out.reshape(n, c, h, w))
