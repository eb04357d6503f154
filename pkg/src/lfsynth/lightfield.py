"""4D light-field container, coordinate conventions, slicing, and refocusing.

Conventions used throughout the package:
  * A light field is a 5-axis array [v][u][y][x][c] with values in [-1, 1].
  * The reference ("central") view sits at index (V//2, U//2) and has angular
    offset (0, 0); the angular offset of index (v, u) is (v - V//2, u - U//2).
    For an 8x8 grid the reference is (4, 4) and offsets span [-4, 3].
  * Ray depths are disparity in pixels per unit angular step. The view at
    angular offset (v, u) shows the central view's content sampled at
    (y + v*d, x + u*d); a plane of disparity d therefore appears shifted by
    -u*d pixels in view u relative to the reference.
  * Refocusing at disparity d samples view (v, u) at (y - v*d, x - u*d), which
    undoes that parameterization and brings a plane at disparity d into focus.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DISPARITY_LIMIT = 16.0


@dataclass(frozen=True)
class LightField:
    """Immutable 5-axis sample block [v][u][y][x][c]."""

    samples: np.ndarray

    def __post_init__(self):
        s = self.samples
        if s.ndim != 5:
            raise ValueError(f"light field must have 5 axes [v][u][y][x][c], got shape {s.shape}")
        if min(s.shape[:2]) < 1:
            raise ValueError(f"angular extents must be >= 1, got {s.shape[:2]}")
        if not np.isfinite(s).all():
            bad = np.argwhere(~np.isfinite(s))[0]
            raise ValueError(f"light field contains a non-finite sample at index {tuple(bad)}")
        s.setflags(write=False)

    @property
    def angular_extent(self):
        return self.samples.shape[:2]

    @property
    def spatial_extent(self):
        return self.samples.shape[2:4]

    @property
    def channels(self):
        return self.samples.shape[4]

    @property
    def center_index(self):
        v, u = self.angular_extent
        return (v // 2, u // 2)

    def view(self, v, u):
        return self.samples[v, u]


def angular_offsets(v_n, u_n):
    """Offset grids (voff[v], uoff[u]) relative to the reference index."""
    return np.arange(v_n) - v_n // 2, np.arange(u_n) - u_n // 2


def central_view(lf: LightField) -> np.ndarray:
    """The [y][x][c] slice at the reference angular index (no copy)."""
    vc, uc = lf.center_index
    return lf.samples[vc, uc]


def epi_slice(lf: LightField, axis, fixed_row, fixed_angular):
    """Epipolar-plane slice.

    axis='u': fixes v = fixed_angular and y = fixed_row, returns [U, X, C].
    axis='v': fixes u = fixed_angular and x = fixed_row, returns [V, Y, C].
    A scene point at disparity d traces a line displacing d pixels per
    angular step across the slice.
    """
    v_n, u_n = lf.angular_extent
    y_n, x_n = lf.spatial_extent
    if axis == "u":
        if not (0 <= fixed_angular < v_n and 0 <= fixed_row < y_n):
            raise ValueError(f"epi_slice: indices (v={fixed_angular}, y={fixed_row}) out of range")
        return lf.samples[fixed_angular, :, fixed_row, :, :]
    if axis == "v":
        if not (0 <= fixed_angular < u_n and 0 <= fixed_row < x_n):
            raise ValueError(f"epi_slice: indices (u={fixed_angular}, x={fixed_row}) out of range")
        return lf.samples[:, fixed_angular, :, fixed_row, :]
    raise ValueError(f"epi_slice: axis must be 'u' or 'v', got {axis!r}")


def normalize_aperture(weights, v_n, u_n):
    """Validate an aperture weight grid and normalize it to sum 1."""
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (v_n, u_n):
        raise ValueError(f"aperture mask shape {w.shape} does not match angular extent {(v_n, u_n)}")
    if (w < 0).any():
        raise ValueError("aperture mask weights must be nonnegative")
    total = w.sum()
    if total == 0:
        raise ValueError("aperture mask must have at least one positive weight")
    return w / total


def disc_aperture(v_n, u_n, radius):
    """Uniform disc of views within ``radius`` angular steps of the reference."""
    voff, uoff = angular_offsets(v_n, u_n)
    rr = voff[:, None] ** 2 + uoff[None, :] ** 2
    return (rr <= radius * radius).astype(np.float64)


def _bilinear_view(img, ys, xs):
    """Border-clamped bilinear sample of img [Y,X,C] at coordinate grids."""
    y_n, x_n = img.shape[:2]
    cy = np.clip(ys, 0.0, y_n - 1.0)
    cx = np.clip(xs, 0.0, x_n - 1.0)
    y0 = np.floor(cy).astype(np.int64)
    x0 = np.floor(cx).astype(np.int64)
    y1 = np.minimum(y0 + 1, y_n - 1)
    x1 = np.minimum(x0 + 1, x_n - 1)
    wy = (cy - y0)[..., None]
    wx = (cx - x0)[..., None]
    return (
        (1 - wy) * (1 - wx) * img[y0, x0]
        + (1 - wy) * wx * img[y0, x1]
        + wy * (1 - wx) * img[y1, x0]
        + wy * wx * img[y1, x1]
    )


def refocus(lf: LightField, d, mask=None) -> np.ndarray:
    """Shift-and-add refocus at disparity ``d`` under an aperture mask.

    Views are shifted so that content at disparity d aligns with the
    reference view, then averaged with the normalized mask weights. Border
    samples clamp, so a margin of roughly 4*|d| px near the image edge is
    only approximately valid.
    """
    if abs(float(d)) > DISPARITY_LIMIT:
        raise ValueError(f"refocus disparity |{d}| exceeds limit {DISPARITY_LIMIT}")
    v_n, u_n = lf.angular_extent
    y_n, x_n = lf.spatial_extent
    if mask is None:
        mask = np.ones((v_n, u_n))
    w = normalize_aperture(mask, v_n, u_n)
    voff, uoff = angular_offsets(v_n, u_n)
    ys, xs = np.meshgrid(np.arange(y_n, dtype=np.float64), np.arange(x_n, dtype=np.float64), indexing="ij")
    out = np.zeros(lf.samples.shape[2:], dtype=np.float64)
    for v in range(v_n):
        for u in range(u_n):
            if w[v, u] == 0:
                continue
            out += w[v, u] * _bilinear_view(lf.samples[v, u], ys - voff[v] * d, xs - uoff[u] * d)
    return out.astype(lf.samples.dtype)


def laplacian_energy(img):
    """Mean squared response of the 5-point Laplacian over interior pixels."""
    g = np.asarray(img, dtype=np.float64)
    if g.ndim == 3:
        g = g.mean(axis=2)
    lap = g[1:-1, 2:] + g[1:-1, :-2] + g[2:, 1:-1] + g[:-2, 1:-1] - 4.0 * g[1:-1, 1:-1]
    return float((lap ** 2).mean())
