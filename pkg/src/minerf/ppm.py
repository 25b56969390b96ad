"""Binary PPM/PGM image I/O (P6 8-bit color, P5 16-bit depth)."""

from __future__ import annotations

import numpy as np

from .errors import UsageError


def to_u8(img: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.clip(img, 0.0, 1.0) * 255.0), 0, 255).astype(np.uint8)


def write_ppm(path, img: np.ndarray):
    """Write an (H, W, 3) float image in [0,1] as binary P6."""
    h, w, c = img.shape
    if c != 3:
        raise UsageError("PPM wants 3 channels")
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(to_u8(img).tobytes())


def read_ppm(path) -> np.ndarray:
    """Read binary P6 back into float64 [0,1], shape (H, W, 3)."""
    with open(path, "rb") as f:
        data = f.read()
    # header: magic, width, height, maxval, single whitespace, then raster
    fields = []
    pos = 0
    while len(fields) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        fields.append(data[start:pos])
    pos += 1
    if fields[0] != b"P6" or fields[3] != b"255":
        raise UsageError(f"unsupported PPM header {fields}")
    w, h = int(fields[1]), int(fields[2])
    raster = np.frombuffer(data, dtype=np.uint8, count=h * w * 3, offset=pos)
    return raster.reshape(h, w, 3).astype(np.float64) / 255.0


def write_pgm16(path, depth: np.ndarray, max_val: float | None = None):
    """Write an (H, W) float array as big-endian 16-bit P5, scaled to max_val."""
    h, w = depth.shape
    mv = float(np.max(depth)) if max_val is None else max_val
    scale = 0.0 if mv == 0 else 65535.0 / mv
    q = np.clip(np.rint(depth * scale), 0, 65535).astype(">u2")
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n65535\n".encode("ascii"))
        f.write(q.tobytes())
