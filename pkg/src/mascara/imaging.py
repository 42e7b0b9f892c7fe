"""Small raster helpers shared across modules: box filtering, bilinear
sampling, PNG round trips. Images are float64 arrays in [0,1], channel-last."""

from __future__ import annotations

import numpy as np
from PIL import Image


def box_filter(arr: np.ndarray, radius: int) -> np.ndarray:
    """Separable box smooth with zero padding; radius 0 is a copy."""
    if radius <= 0:
        return arr.astype(np.float64, copy=True)
    size = 2 * radius + 1
    out = arr.astype(np.float64, copy=True)
    for axis in (0, 1):
        padded = np.zeros(out.shape[:axis] + (out.shape[axis] + 2 * radius,) + out.shape[axis + 1:])
        sl = [slice(None)] * out.ndim
        sl[axis] = slice(radius, radius + out.shape[axis])
        padded[tuple(sl)] = out
        c = np.cumsum(padded, axis=axis)
        zero = np.zeros_like(np.take(c, [0], axis=axis))
        c = np.concatenate([zero, c], axis=axis)
        hi = [slice(None)] * out.ndim
        lo = [slice(None)] * out.ndim
        hi[axis] = slice(size, size + out.shape[axis])
        lo[axis] = slice(0, out.shape[axis])
        out = (c[tuple(hi)] - c[tuple(lo)]) / size
    return out


def bilinear_sample(image: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """Sample image at float coordinates with border replication.

    ys/xs share a shape; returns that shape plus the channel axis.
    """
    h, w = image.shape[:2]
    ys = np.clip(ys, 0.0, h - 1.0)
    xs = np.clip(xs, 0.0, w - 1.0)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0)[..., None]
    fx = (xs - x0)[..., None]
    top = image[y0, x0] * (1 - fx) + image[y0, x1] * fx
    bot = image[y1, x0] * (1 - fx) + image[y1, x1] * fx
    return top * (1 - fy) + bot * fy


def resize_image(image: np.ndarray, out_size) -> np.ndarray:
    """Bilinear resize; output pixel o samples the source at o * (src/out),
    the same corner convention the aligners use."""
    if isinstance(out_size, int):
        out_size = (out_size, out_size)
    oh, ow = out_size
    h, w = image.shape[:2]
    xs, ys = np.meshgrid(np.arange(ow, dtype=np.float64) * (w / ow),
                         np.arange(oh, dtype=np.float64) * (h / oh))
    return bilinear_sample(image, ys, xs)


def save_png(path, image: np.ndarray) -> None:
    """Write a [0,1] float image (HxWx3 or HxW grayscale) as 8-bit PNG."""
    arr = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    data = np.round(arr * 255.0).astype(np.uint8)
    mode = "L" if data.ndim == 2 else "RGB"
    Image.fromarray(data, mode=mode).save(path, format="PNG")


def load_png(path) -> np.ndarray:
    """Read a PNG back to float64 in [0,1]; grayscale files stay HxW."""
    with Image.open(path) as im:
        if im.mode == "L":
            data = np.asarray(im, dtype=np.float64)
        else:
            data = np.asarray(im.convert("RGB"), dtype=np.float64)
    return data / 255.0
