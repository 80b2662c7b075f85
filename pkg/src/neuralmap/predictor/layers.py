"""NHWC convolution primitives with hand-written backward passes."""
from __future__ import annotations

import numpy as np


def conv_out_size(n: int, k: int, stride: int, pad: int) -> int:
    return (n + 2 * pad - k) // stride + 1


def _im2col(xp, k, stride, ho, wo):
    span_h, span_w = stride * (ho - 1) + 1, stride * (wo - 1) + 1
    patches = [xp[:, ky:ky + span_h:stride, kx:kx + span_w:stride, :] for ky in range(k) for kx in range(k)]
    return np.concatenate(patches, axis=-1)


def conv2d(x, w, b, stride=1):
    """Same-padded convolution. ``x`` (B,H,W,Cin), ``w`` (k,k,Cin,Cout).

    Returns the output and a cache for :func:`conv2d_backward`.
    """
    k = w.shape[0]
    pad = k // 2
    bsz, h, wd, cin = x.shape
    ho, wo = conv_out_size(h, k, stride, pad), conv_out_size(wd, k, stride, pad)
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0))) if pad else x
    cols = _im2col(xp, k, stride, ho, wo)
    out = cols.reshape(-1, k * k * cin) @ w.reshape(-1, w.shape[-1]) + b
    return out.reshape(bsz, ho, wo, -1), (x.shape, cols, w, stride)


def conv2d_backward(dout, cache):
    xshape, cols, w, stride = cache
    k, _, cin, cout = w.shape
    pad = k // 2
    bsz, h, wd, _ = xshape
    ho, wo = dout.shape[1:3]
    d2 = dout.reshape(-1, cout)
    dw = (cols.reshape(-1, k * k * cin).T @ d2).reshape(w.shape)
    db = d2.sum(axis=0)
    dcols = (d2 @ w.reshape(-1, cout).T).reshape(bsz, ho, wo, k * k, cin)
    dxp = np.zeros((bsz, h + 2 * pad, wd + 2 * pad, cin), dtype=dout.dtype)
    span_h, span_w = stride * (ho - 1) + 1, stride * (wo - 1) + 1
    for idx in range(k * k):
        ky, kx = divmod(idx, k)
        dxp[:, ky:ky + span_h:stride, kx:kx + span_w:stride, :] += dcols[:, :, :, idx, :]
    dx = dxp[:, pad:pad + h, pad:pad + wd, :] if pad else dxp
    return dx, dw, db


def upsample2(x, out_h, out_w):
    """Nearest-neighbour x2 upsampling, cropped to (out_h, out_w)."""
    return x.repeat(2, axis=1).repeat(2, axis=2)[:, :out_h, :out_w, :]


def upsample2_backward(dout, in_h, in_w):
    bsz, oh, ow, c = dout.shape
    full = np.zeros((bsz, 2 * in_h, 2 * in_w, c), dtype=dout.dtype)
    full[:, :oh, :ow, :] = dout
    return full.reshape(bsz, in_h, 2, in_w, 2, c).sum(axis=(2, 4))


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))
