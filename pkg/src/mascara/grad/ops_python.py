"""Pure-numpy convolution and pooling kernels.

Fallback twin of the compiled ``_kernels`` extension. Both backends implement
the same contracts: cross-correlation convention, zero padding, float64
accumulation, and first-occurrence (row-major) tie-breaking in max pooling.
Results agree with the compiled kernels to float64 rounding, not bit-for-bit,
because the summation order differs (im2col + GEMM here, straight loops there).
"""

import numpy as np

BACKEND_NAME = "python"


def _im2col(x, kh, kw, stride, pad):
    """Extract (Ho*Wo, kh*kw*Cin) patches from an (H, W, Cin) image."""
    if pad > 0:
        x = np.pad(x, ((pad, pad), (pad, pad), (0, 0)))
    h, w, cin = x.shape
    ho = (h - kh) // stride + 1
    wo = (w - kw) // stride + 1
    s0, s1, s2 = x.strides
    windows = np.lib.stride_tricks.as_strided(
        x,
        shape=(ho, wo, kh, kw, cin),
        strides=(s0 * stride, s1 * stride, s0, s1, s2),
        writeable=False,
    )
    return windows.reshape(ho * wo, kh * kw * cin), ho, wo


def conv2d_forward(x, w, stride, pad):
    """Cross-correlate an (H, W, Cin) image with (kh, kw, Cin, Cout) filters."""
    kh, kw, cin, cout = w.shape
    cols, ho, wo = _im2col(x, kh, kw, stride, pad)
    out = cols @ w.reshape(kh * kw * cin, cout)
    return np.ascontiguousarray(out.reshape(ho, wo, cout))


def conv2d_backward(x, w, stride, pad, gout):
    """Gradients of conv2d_forward w.r.t. input and filters."""
    kh, kw, cin, cout = w.shape
    ho, wo, _ = gout.shape
    cols, _, _ = _im2col(x, kh, kw, stride, pad)
    gflat = gout.reshape(ho * wo, cout)

    gw = (cols.T @ gflat).reshape(kh, kw, cin, cout)

    # Scatter column gradients back onto the padded input (col2im).
    gcols = gflat @ w.reshape(kh * kw * cin, cout).T
    gcols = gcols.reshape(ho, wo, kh, kw, cin)
    hp, wp = x.shape[0] + 2 * pad, x.shape[1] + 2 * pad
    gx_pad = np.zeros((hp, wp, cin), dtype=np.float64)
    for i in range(kh):
        for j in range(kw):
            gx_pad[i : i + ho * stride : stride, j : j + wo * stride : stride] += gcols[:, :, i, j]
    if pad > 0:
        gx = gx_pad[pad:-pad, pad:-pad]
    else:
        gx = gx_pad
    return np.ascontiguousarray(gx), np.ascontiguousarray(gw)


def maxpool_forward(x, size, stride):
    """Max-pool an (H, W, C) image; also return flat argmax positions.

    Ties resolve to the first element in row-major window order, matching the
    compiled kernel.
    """
    h, w, c = x.shape
    ho = (h - size) // stride + 1
    wo = (w - size) // stride + 1
    s0, s1, s2 = x.strides
    windows = np.lib.stride_tricks.as_strided(
        x,
        shape=(ho, wo, size, size, c),
        strides=(s0 * stride, s1 * stride, s0, s1, s2),
        writeable=False,
    )
    flat = windows.reshape(ho, wo, size * size, c)
    idx = flat.argmax(axis=2)  # first occurrence on ties
    out = np.take_along_axis(flat, idx[:, :, None, :], axis=2)[:, :, 0, :]
    # Convert window-local indices to flat positions in the input image.
    wy = idx // size
    wx = idx % size
    iy = np.arange(ho)[:, None, None] * stride + wy
    ix = np.arange(wo)[None, :, None] * stride + wx
    argmax = (iy * w + ix).astype(np.int64)
    return np.ascontiguousarray(out), np.ascontiguousarray(argmax)


def maxpool_backward(x_shape, argmax, gout):
    """Route pooled gradients back to their argmax positions."""
    h, w, c = x_shape
    gx = np.zeros((h * w, c), dtype=np.float64)
    ho, wo, _ = gout.shape
    flat_idx = argmax.reshape(ho * wo, c)
    flat_g = gout.reshape(ho * wo, c)
    for ch in range(c):
        np.add.at(gx[:, ch], flat_idx[:, ch], flat_g[:, ch])
    return gx.reshape(h, w, c)
