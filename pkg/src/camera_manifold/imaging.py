"""Image containers, file formats and resampling.

Images are float arrays in [0, 1] of shape (H, W, C) or (H, W).
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

F32R_MAGIC = b"F32R"


def bilinear_sample(image, x, y):
    """Bilinear lookup at pixel-index coordinates with edge clamping.

    Pixel ``(i, j)`` has its center at ``x = j, y = i``.  ``x`` and ``y``
    broadcast to the output shape.
    """
    img = np.asarray(image, dtype=float)
    h, w = img.shape[:2]
    x = np.clip(np.asarray(x, dtype=float), 0.0, w - 1.0)
    y = np.clip(np.asarray(y, dtype=float), 0.0, h - 1.0)
    x0 = np.clip(np.floor(x).astype(np.int64), 0, max(w - 2, 0))
    y0 = np.clip(np.floor(y).astype(np.int64), 0, max(h - 2, 0))
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = x - x0
    fy = y - y0
    if img.ndim == 3:
        fx = fx[..., None]
        fy = fy[..., None]
    top = img[y0, x0] * (1 - fx) + img[y0, x1] * fx
    bot = img[y1, x0] * (1 - fx) + img[y1, x1] * fx
    return top * (1 - fy) + bot * fy


def sample_normalized(image, uv):
    """Bilinear lookup at normalized coordinates ``uv`` (..., 2)."""
    h, w = np.asarray(image).shape[:2]
    uv = np.asarray(uv, dtype=float)
    return bilinear_sample(image, uv[..., 0] * w - 0.5, uv[..., 1] * h - 0.5)


def pixel_centers(width, height):
    """Normalized coordinates of pixel centers, shape (H, W, 2)."""
    xs = (np.arange(width) + 0.5) / width
    ys = (np.arange(height) + 0.5) / height
    return np.stack(np.meshgrid(xs, ys), -1)


# --- Netpbm -----------------------------------------------------------------

def _read_token(data: bytes, pos: int):
    n = len(data)
    while pos < n:
        ch = data[pos:pos + 1]
        if ch == b"#":
            while pos < n and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif ch.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
        pos += 1
    return data[start:pos], pos


def read_netpbm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    magic, pos = _read_token(data, 0)
    if magic not in (b"P5", b"P6"):
        raise ValueError(f"{path}: unsupported netpbm type {magic!r}")
    fields = []
    for _ in range(3):
        tok, pos = _read_token(data, pos)
        fields.append(int(tok))
    w, h, maxval = fields
    pos += 1
    channels = 3 if magic == b"P6" else 1
    dtype = np.uint8 if maxval < 256 else np.dtype(">u2")
    count = w * h * channels
    raw = np.frombuffer(data, dtype=dtype, count=count, offset=pos)
    img = raw.reshape(h, w, channels).astype(float) / maxval
    return img[..., 0] if channels == 1 else img


def to_uint8(image) -> np.ndarray:
    return np.clip(np.rint(np.asarray(image, dtype=float) * 255.0), 0, 255).astype(np.uint8)


def write_netpbm(path, image) -> None:
    img = to_uint8(image)
    if img.ndim == 3 and img.shape[2] == 1:
        img = img[..., 0]
    if img.ndim == 2:
        magic = b"P5"
    elif img.ndim == 3 and img.shape[2] == 3:
        magic = b"P6"
    else:
        raise ValueError(f"cannot write image of shape {img.shape} as netpbm")
    h, w = img.shape[:2]
    Path(path).write_bytes(magic + b"\n%d %d\n255\n" % (w, h) + img.tobytes())


def read_image(path) -> np.ndarray:
    path = Path(path)
    if path.suffix.lower() in (".ppm", ".pgm", ".pnm"):
        return read_netpbm(path)
    if path.suffix.lower() == ".png":
        from PIL import Image

        with Image.open(path) as im:
            arr = np.asarray(im)
        arr = arr.astype(float) / (65535.0 if arr.dtype == np.uint16 else 255.0)
        if arr.ndim == 3 and arr.shape[2] == 4:
            arr = arr[..., :3]
        return arr
    raise ValueError(f"{path}: unsupported image format")


def write_image(path, image) -> None:
    path = Path(path)
    if path.suffix.lower() == ".png":
        from PIL import Image

        Image.fromarray(to_uint8(image)).save(path)
    else:
        write_netpbm(path, image)


# --- F32R float rasters -----------------------------------------------------

def write_f32r(path, data, mask=None) -> None:
    """Write a float raster: 16-byte header ("F32R", width, height, channels), then
    row-major float32 samples, then an optional validity byte plane.
    """
    arr = np.asarray(data, dtype=np.float32)
    if arr.ndim == 2:
        arr = arr[..., None]
    h, w, c = arr.shape
    with open(path, "wb") as fh:
        fh.write(F32R_MAGIC + struct.pack("<III", w, h, c))
        fh.write(arr.astype("<f4").tobytes())
        if mask is not None:
            fh.write(np.asarray(mask, dtype=np.uint8).tobytes())


def read_f32r(path, mask_planes: int | None = None):
    """Read an F32R raster; returns ``(data (H, W, C), mask or None)``.

    The mask plane, if present, is returned with shape (H, W) when it holds
    one byte per pixel, else (H, W, k).
    """
    raw = Path(path).read_bytes()
    if raw[:4] != F32R_MAGIC:
        raise ValueError(f"{path}: not an F32R raster")
    w, h, c = struct.unpack("<III", raw[4:16])
    n = w * h * c
    data = np.frombuffer(raw, dtype="<f4", count=n, offset=16).reshape(h, w, c).astype(np.float32)
    rest = raw[16 + 4 * n:]
    mask = None
    if rest:
        k = len(rest) // (w * h)
        if k * w * h != len(rest):
            raise ValueError(f"{path}: trailing mask plane has the wrong size")
        mask = np.frombuffer(rest, dtype=np.uint8).reshape((h, w) if k == 1 else (h, w, k)).copy()
    return data, mask
