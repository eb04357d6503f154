"""File formats: the LF4 binary container, PNG view grids, and depth PNGs.

LF4 layout (little-endian):
    magic   4 bytes  b"LF4D"
    version u16      = 1
    V,U,Y,X,C  5 x u32
    dtype   u8       1 = 32-bit float LE
    reserved u8      = 0
    payload V*U*Y*X*C float32, row-major [v][u][y][x][c]

PNG grids store one 8-bit RGB file per view named ``view_{v:02d}_{u:02d}.png``
(v is the slower, vertical angular axis); pixel p maps to 2p/255 - 1.
Depth maps export as 16-bit grayscale PNG with [-16, 16] mapped affinely to
[0, 65535], plus a sidecar text file recording the mapping.
"""

from __future__ import annotations

import re
import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .lightfield import DISPARITY_LIMIT, LightField

LF4_MAGIC = b"LF4D"
LF4_VERSION = 1
LF4_DTYPE_F32 = 1
_HEADER = struct.Struct("<4sH5IBB")


def store_lf4(path, lf) -> None:
    """Write a LightField (or single-channel [V,U,Y,X] depth field) to LF4."""
    samples = lf.samples if isinstance(lf, LightField) else np.asarray(lf)
    if samples.ndim == 4:
        samples = samples[..., None]
    if samples.ndim != 5:
        raise ValueError(f"store_lf4 expects 5 axes [v][u][y][x][c], got {samples.shape}")
    if not np.isfinite(samples).all():
        raise ValueError("store_lf4: refusing to write non-finite samples")
    v, u, y, x, c = samples.shape
    with open(path, "wb") as f:
        f.write(_HEADER.pack(LF4_MAGIC, LF4_VERSION, v, u, y, x, c, LF4_DTYPE_F32, 0))
        f.write(np.ascontiguousarray(samples, dtype="<f4").tobytes())


def load_lf4(path) -> LightField:
    """Read an LF4 container; rejects malformed headers and truncated payloads."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: file too short for LF4 header ({len(raw)} bytes)")
    magic, version, v, u, y, x, c, dtype, reserved = _HEADER.unpack_from(raw)
    if magic != LF4_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}, expected {LF4_MAGIC!r}")
    if version != LF4_VERSION:
        raise ValueError(f"{path}: unsupported LF4 version {version}")
    if dtype != LF4_DTYPE_F32:
        raise ValueError(f"{path}: unsupported dtype tag {dtype}")
    if reserved != 0:
        raise ValueError(f"{path}: reserved header byte must be 0, got {reserved}")
    if min(v, u, y, x, c) < 1:
        raise ValueError(f"{path}: dimensions must all be >= 1, got {(v, u, y, x, c)}")
    expected = _HEADER.size + 4 * v * u * y * x * c
    if len(raw) != expected:
        raise ValueError(f"{path}: payload size mismatch, expected {expected} bytes, got {len(raw)}")
    samples = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size).reshape(v, u, y, x, c)
    samples = samples.astype(np.float32)  # own, native-order copy
    if not np.isfinite(samples).all():
        bad = np.argwhere(~np.isfinite(samples))[0]
        raise ValueError(f"{path}: non-finite sample at index {tuple(bad)}")
    return LightField(samples)


def load_depth_lf4(path) -> np.ndarray:
    """Read a single-channel LF4 as a [V,U,Y,X] depth field."""
    lf = load_lf4(path)
    if lf.channels != 1:
        raise ValueError(f"{path}: expected a single-channel depth LF4, got C={lf.channels}")
    return np.ascontiguousarray(lf.samples[..., 0])


_VIEW_RE = re.compile(r"^view_(\d{2})_(\d{2})\.png$")


def to_unit_range(img_u8):
    """Map 8-bit pixels [0, 255] to [-1, 1] (0 -> -1, 255 -> +1)."""
    return (img_u8.astype(np.float32) * (2.0 / 255.0) - 1.0).astype(np.float32)


def to_u8(img):
    """Invert to_unit_range with round-half-away-from-zero."""
    p = (np.clip(img, -1.0, 1.0).astype(np.float64) + 1.0) * (255.0 / 2.0)
    return np.floor(p + 0.5).astype(np.uint8)


def import_png_grid(directory) -> LightField:
    """Assemble a light field from a directory of view_{v:02d}_{u:02d}.png files."""
    directory = Path(directory)
    found = {}
    for p in directory.iterdir():
        m = _VIEW_RE.match(p.name)
        if m:
            found[(int(m.group(1)), int(m.group(2)))] = p
    if not found:
        raise ValueError(f"{directory}: no view_VV_UU.png files found")
    v_n = max(k[0] for k in found) + 1
    u_n = max(k[1] for k in found) + 1
    samples = None
    for v in range(v_n):
        for u in range(u_n):
            p = found.get((v, u))
            if p is None:
                raise ValueError(f"{directory}: missing view file view_{v:02d}_{u:02d}.png")
            img = np.asarray(Image.open(p).convert("RGB"))
            if samples is None:
                samples = np.empty((v_n, u_n) + img.shape, dtype=np.float32)
            elif img.shape != samples.shape[2:]:
                raise ValueError(
                    f"{p.name}: size {img.shape[:2]} differs from first view {samples.shape[2:4]}"
                )
            samples[v, u] = to_unit_range(img)
    return LightField(samples)


def export_png_grid(directory, lf: LightField) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    v_n, u_n = lf.angular_extent
    for v in range(v_n):
        for u in range(u_n):
            Image.fromarray(to_u8(lf.samples[v, u])).save(directory / f"view_{v:02d}_{u:02d}.png")


def export_view_png(path, view) -> None:
    """Write one [-1, 1] RGB view as an 8-bit PNG (values clamped)."""
    Image.fromarray(to_u8(np.asarray(view))).save(path)


def export_depth_png(path, depth) -> None:
    """Write a [Y,X] depth map as 16-bit grayscale PNG plus a mapping sidecar."""
    d = np.asarray(depth, dtype=np.float64)
    if d.ndim != 2:
        raise ValueError(f"export_depth_png expects a 2D depth map, got {d.shape}")
    lim = DISPARITY_LIMIT
    q = np.floor((np.clip(d, -lim, lim) + lim) / (2 * lim) * 65535.0 + 0.5).astype(np.uint16)
    Image.fromarray(q).save(path)
    sidecar = Path(str(path) + ".txt")
    sidecar.write_text(
        "depth png mapping\n"
        f"gray 0 -> disparity {-lim}\n"
        f"gray 65535 -> disparity {lim}\n"
        "disparity = gray / 65535 * 32 - 16\n"
    )
