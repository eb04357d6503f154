"""Procedural layered Lambertian scenes with exact ground-truth ray depths.

Scenes are ordered stacks of fronto-parallel textured planes, each with a
constant disparity and a binary opacity mask. A ray (v, u, y, x) walks the
layers nearest-first and takes the color and disparity of the first layer
whose mask is opaque at the sheared position (y + voff*d, x + uoff*d).

Two properties make these scenes usable as a numerical oracle:

  * Textures are evaluated analytically at continuous coordinates, so a
    surface point has exactly one color along its entire ray line
    (Lambertian by construction).
  * The continuous texture is defined as the bilinear interpolation of a
    procedural generator sampled on the integer pixel lattice. Bilinear
    warping of the rasterized reference view therefore reproduces off-axis
    views *exactly* (up to float rounding) wherever the surface is visible
    from the reference view, for arbitrary non-integer disparities.

Layer base colors encode the layer's disparity (an affine color map), giving
a single reference view a genuine monocular depth cue; textures are zero-mean
modulations around that base. Without such a cue, absolute disparity would
not be inferable from one image and desk-scale training could not be
evaluated against ground truth.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lightfield import LightField

SCENE_DISPARITY_LIMIT = 8.0  # generated content stays well inside the (-16, 16) net range

_MIX1 = np.uint64(0x9E3779B97F4A7C15)
_MIX2 = np.uint64(0xBF58476D1CE4E5B9)
_MIX3 = np.uint64(0x94D049BB133111EB)


def _hash01(iy, ix, salt):
    """Deterministic lattice hash -> floats in [0, 1). Vectorized splitmix64."""
    salt_mix = np.uint64((int(salt) * 0xD6E8FEB86659FD93) % (1 << 64))
    with np.errstate(over="ignore"):  # uint64 wraparound is the point
        z = (
            np.atleast_1d(iy).astype(np.int64).view(np.uint64) * np.uint64(0x632BE59BD9B4E019)
            + np.atleast_1d(ix).astype(np.int64).view(np.uint64) * np.uint64(0x9E3779B97F4A7C15)
            + salt_mix
        )
        z = (z ^ (z >> np.uint64(30))) * _MIX2
        z = (z ^ (z >> np.uint64(27))) * _MIX3
        z = z ^ (z >> np.uint64(31))
    out = (z >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))
    return out.reshape(np.shape(iy))


# Per-channel noise octaves as (cell multiplier, weight); weights sum to 1 so
# amplitudes bound the texture. Red stays fine-grained: its local mean carries
# the disparity color cue. Blue gets a long-wavelength octave so photometric
# warping errors produce gradients even when samples land tens of pixels off.
_NOISE_OCTAVES = (
    ((1.0, 1.0),),
    ((3.0, 0.5), (1.0, 0.5)),
    ((8.0, 0.5), (2.5, 0.3), (1.0, 0.2)),
)


def _lattice_noise(iy, ix, cell, salt):
    """Bilinear lattice noise in [-1, 1] with the given cell size."""
    fy = iy / cell
    fx = ix / cell
    cy = np.floor(fy)
    cx = np.floor(fx)
    wy = fy - cy
    wx = fx - cx
    cy = cy.astype(np.int64)
    cx = cx.astype(np.int64)
    n00 = _hash01(cy, cx, salt)
    n01 = _hash01(cy, cx + 1, salt)
    n10 = _hash01(cy + 1, cx, salt)
    n11 = _hash01(cy + 1, cx + 1, salt)
    noise = (
        (1 - wy) * (1 - wx) * n00
        + (1 - wy) * wx * n01
        + wy * (1 - wx) * n10
        + wy * wx * n11
    )
    return 2.0 * noise - 1.0


@dataclass(frozen=True)
class FlatPatch:
    """Flat-colored disc painted over a layer's texture (same disparity)."""

    center: tuple
    radius: float
    color: tuple


@dataclass(frozen=True)
class Texture:
    kind: str  # "value-noise" | "stripes" | "checker" | "flat"
    base: tuple
    amplitude: tuple = (0.0, 0.0, 0.0)
    cell: float = 4.0
    angle: float = 0.0
    seed: int = 0
    patches: tuple = ()

    def __post_init__(self):
        if self.kind not in ("value-noise", "stripes", "checker", "flat"):
            raise ValueError(f"unknown texture kind {self.kind!r}")
        peak = max(abs(b) + abs(a) for b, a in zip(self.base, self.amplitude))
        if peak > 1.0 + 1e-9:
            raise ValueError(f"texture values would leave [-1, 1] (peak {peak:.3f})")


def _lattice_color(tex: Texture, iy, ix):
    """Generator colors at integer pixel coordinates; returns [..., 3]."""
    out = np.empty(iy.shape + (3,), dtype=np.float64)
    if tex.kind == "flat":
        out[:] = tex.base
    elif tex.kind == "value-noise":
        for ch in range(3):
            noise = np.zeros(iy.shape, dtype=np.float64)
            for octave, (scale, weight) in enumerate(_NOISE_OCTAVES[ch]):
                noise += weight * _lattice_noise(iy, ix, tex.cell * scale, tex.seed * 16 + ch * 4 + octave)
            out[..., ch] = tex.base[ch] + tex.amplitude[ch] * noise
    elif tex.kind == "stripes":
        s = np.cos(tex.angle) * ix + np.sin(tex.angle) * iy
        sign = 1.0 - 2.0 * (np.floor(s / tex.cell).astype(np.int64) % 2)
        for ch in range(3):
            out[..., ch] = tex.base[ch] + tex.amplitude[ch] * sign
    else:  # checker
        par = (np.floor(iy / tex.cell).astype(np.int64) + np.floor(ix / tex.cell).astype(np.int64)) % 2
        sign = 1.0 - 2.0 * par
        for ch in range(3):
            out[..., ch] = tex.base[ch] + tex.amplitude[ch] * sign
    for patch in tex.patches:
        py, px = patch.center
        inside = (iy - py) ** 2 + (ix - px) ** 2 <= patch.radius ** 2
        out[inside] = patch.color
    return out


def texture_eval(tex: Texture, ys, xs):
    """Continuous texture lookup: bilinear blend of the integer-lattice colors."""
    ys = np.asarray(ys, dtype=np.float64)
    xs = np.asarray(xs, dtype=np.float64)
    y0 = np.floor(ys)
    x0 = np.floor(xs)
    wy = (ys - y0)[..., None]
    wx = (xs - x0)[..., None]
    y0 = y0.astype(np.int64)
    x0 = x0.astype(np.int64)
    return (
        (1 - wy) * (1 - wx) * _lattice_color(tex, y0, x0)
        + (1 - wy) * wx * _lattice_color(tex, y0, x0 + 1)
        + wy * (1 - wx) * _lattice_color(tex, y0 + 1, x0)
        + wy * wx * _lattice_color(tex, y0 + 1, x0 + 1)
    )


@dataclass(frozen=True)
class Mask:
    kind: str = "full"  # "full" | "blob" | "half-plane"
    center: tuple = (0.0, 0.0)
    radius: float = 0.0
    normal: tuple = (0.0, 1.0)
    offset: float = 0.0

    def __post_init__(self):
        if self.kind not in ("full", "blob", "half-plane"):
            raise ValueError(f"unknown mask kind {self.kind!r}")


def mask_eval(mask: Mask, ys, xs):
    """Binary opacity at continuous coordinates."""
    ys = np.asarray(ys, dtype=np.float64)
    xs = np.asarray(xs, dtype=np.float64)
    if mask.kind == "full":
        return np.ones(ys.shape, dtype=bool)
    if mask.kind == "blob":
        cy, cx = mask.center
        return (ys - cy) ** 2 + (xs - cx) ** 2 <= mask.radius ** 2
    a, b = mask.normal
    return a * ys + b * xs <= mask.offset


@dataclass(frozen=True)
class Layer:
    texture: Texture
    disparity: float
    mask: Mask = Mask()


@dataclass(frozen=True)
class SceneSpec:
    """Back-to-front layer stack; nearer layers have strictly larger disparity."""

    layers: tuple
    seed: int
    extents: tuple  # (V, U, Y, X)

    def __post_init__(self):
        if len(self.layers) < 1:
            raise ValueError("a scene needs at least one layer")
        disp = [lay.disparity for lay in self.layers]
        if any(b <= a for a, b in zip(disp, disp[1:])):
            raise ValueError(f"layer disparities must increase strictly back-to-front, got {disp}")
        if max(abs(d) for d in disp) > SCENE_DISPARITY_LIMIT:
            raise ValueError(f"scene disparities must stay within [-{SCENE_DISPARITY_LIMIT}, {SCENE_DISPARITY_LIMIT}]")
        if len(self.extents) != 4 or min(self.extents) < 1:
            raise ValueError(f"extents must be (V, U, Y, X) >= 1, got {self.extents}")


@dataclass(frozen=True)
class OracleOutput:
    light_field: LightField
    ray_depths: np.ndarray  # [V, U, Y, X] float32
    visibility: np.ndarray  # [V, U, Y, X] bool: reconstructible from the reference view
    layer_ids: np.ndarray  # [V, U, Y, X] int16, -1 where no surface is hit

    @property
    def spatial_extent(self):
        return self.ray_depths.shape[2:]


def _trace_view(spec: SceneSpec, voff, uoff, ygrid, xgrid):
    y_n, x_n = ygrid.shape
    color = np.zeros((y_n, x_n, 3), dtype=np.float64)
    depth = np.zeros((y_n, x_n), dtype=np.float64)
    lid = np.full((y_n, x_n), -1, dtype=np.int16)
    hit = np.zeros((y_n, x_n), dtype=bool)
    for li in range(len(spec.layers) - 1, -1, -1):
        layer = spec.layers[li]
        ys = ygrid + voff * layer.disparity
        xs = xgrid + uoff * layer.disparity
        take = mask_eval(layer.mask, ys, xs) & ~hit
        if take.any():
            color[take] = texture_eval(layer.texture, ys[take], xs[take])
            depth[take] = layer.disparity
            lid[take] = li
            hit |= take
    return color, depth, lid


def generate_scene(spec: SceneSpec) -> OracleOutput:
    """Trace every ray front-to-back and derive the reference-view visibility mask."""
    v_n, u_n, y_n, x_n = spec.extents
    ygrid, xgrid = np.meshgrid(np.arange(y_n, dtype=np.float64), np.arange(x_n, dtype=np.float64), indexing="ij")
    samples = np.zeros((v_n, u_n, y_n, x_n, 3), dtype=np.float32)
    depths = np.zeros((v_n, u_n, y_n, x_n), dtype=np.float32)
    lids = np.full((v_n, u_n, y_n, x_n), -1, dtype=np.int16)
    visibility = np.zeros((v_n, u_n, y_n, x_n), dtype=bool)

    _, _, central_lid = _trace_view(spec, 0.0, 0.0, ygrid, xgrid)

    for v in range(v_n):
        voff = float(v - v_n // 2)
        for u in range(u_n):
            uoff = float(u - u_n // 2)
            color, depth, lid = _trace_view(spec, voff, uoff, ygrid, xgrid)
            samples[v, u] = color.astype(np.float32)
            depths[v, u] = depth.astype(np.float32)
            lids[v, u] = lid
            visibility[v, u] = _central_reconstructible(
                depth, lid, central_lid, voff, uoff, ygrid, xgrid
            )
    return OracleOutput(LightField(samples), depths, visibility, lids)


def _central_reconstructible(depth, lid, central_lid, voff, uoff, ygrid, xgrid):
    """True where bilinear warping of the reference view reproduces this ray.

    Requires a surface hit, an in-bounds reference sample position, and that
    every nonzero-weight bilinear corner sees the ray's own layer frontmost
    in the reference view.
    """
    y_n, x_n = depth.shape
    yc = ygrid + voff * depth
    xc = xgrid + uoff * depth
    ok = (lid >= 0) & (yc >= 0) & (yc <= y_n - 1) & (xc >= 0) & (xc <= x_n - 1)
    y0 = np.clip(np.floor(yc), 0, y_n - 1).astype(np.int64)
    x0 = np.clip(np.floor(xc), 0, x_n - 1).astype(np.int64)
    y1 = np.minimum(y0 + 1, y_n - 1)
    x1 = np.minimum(x0 + 1, x_n - 1)
    wy = yc - y0
    wx = xc - x0
    for yy, xx, w in (
        (y0, x0, (1 - wy) * (1 - wx)),
        (y0, x1, (1 - wy) * wx),
        (y1, x0, wy * (1 - wx)),
        (y1, x1, wy * wx),
    ):
        ok &= (w == 0) | (central_lid[yy, xx] == lid)
    return ok


# -- dataset generation --------------------------------------------------------------


def color_for_disparity(d):
    """Affine disparity -> base-color map; the scenes' monocular depth cue."""
    t = float(d) / SCENE_DISPARITY_LIMIT
    return (0.62 * t, 0.15 - 0.35 * t, 0.05 + 0.25 * t)

CUE_AMPLITUDE = (0.10, 0.22, 0.42)


def _cue_texture(rng, d, kind=None, patches=()):
    kind = kind or rng.choice(["value-noise", "value-noise", "value-noise", "checker", "stripes"])
    return Texture(
        kind=kind,
        base=color_for_disparity(d),
        amplitude=CUE_AMPLITUDE,
        cell=float(rng.uniform(4.0, 9.0)),
        angle=float(rng.uniform(0, np.pi)),
        seed=int(rng.integers(0, 2 ** 31)),
        patches=tuple(patches),
    )


def _decoy_patches(rng, count, y_n, x_n):
    """Flat discs whose color encodes a disparity unrelated to the layer's."""
    patches = []
    for _ in range(count):
        d_decoy = float(rng.uniform(-7.0, 7.0))
        patches.append(
            FlatPatch(
                center=(float(rng.uniform(0, y_n)), float(rng.uniform(0, x_n))),
                radius=float(rng.uniform(y_n / 7.0, y_n / 4.0)),
                color=color_for_disparity(d_decoy),
            )
        )
    return patches


def _blob_mask(rng, y_n, x_n):
    return Mask(
        kind="blob",
        center=(float(rng.uniform(0.25 * y_n, 0.75 * y_n)), float(rng.uniform(0.25 * x_n, 0.75 * x_n))),
        radius=float(rng.uniform(y_n / 6.0, y_n / 3.5)),
    )


def _random_scene_spec(rng, extents, difficulty, seed):
    _, _, y_n, x_n = extents
    if difficulty == "easy":
        d = float(rng.uniform(-6.0, 6.0))
        return SceneSpec((Layer(_cue_texture(rng, d), d),), seed, extents)

    back_d = float(rng.uniform(-7.0, -1.0))
    front_d = float(rng.uniform(back_d + 2.0, 7.0))
    decoys = difficulty == "textureless"
    layers = [
        Layer(
            _cue_texture(rng, back_d, patches=_decoy_patches(rng, 2, y_n, x_n) if decoys else ()),
            back_d,
        ),
        Layer(
            _cue_texture(rng, front_d, patches=_decoy_patches(rng, 1, y_n, x_n) if decoys else ()),
            front_d,
            _blob_mask(rng, y_n, x_n),
        ),
    ]
    if not decoys and rng.uniform() < 0.35 and front_d - back_d > 4.0:
        mid_d = float(rng.uniform(back_d + 1.5, front_d - 1.5))
        layers.insert(1, Layer(_cue_texture(rng, mid_d), mid_d, _blob_mask(rng, y_n, x_n)))
    return SceneSpec(tuple(layers), seed, extents)


def _has_view_dependent_depths(out: OracleOutput):
    v_n, u_n = out.ray_depths.shape[:2]
    center = out.ray_depths[v_n // 2, u_n // 2]
    for v in (0, v_n - 1):
        for u in (0, u_n - 1):
            if (out.ray_depths[v, u] != center).any():
                return True
    return False


def generate_dataset(n, seed, extents, difficulty="occlusions"):
    """Deterministic list of OracleOutput; difficulty selects the scene family.

    easy        single full-coverage textured plane.
    occlusions  textured background plus 1-2 foreground blobs; every scene is
                guaranteed to have rays whose depth differs between the
                reference and corner views.
    textureless occlusion layout plus large flat decoy-colored patches.
    """
    if n < 1:
        raise ValueError("generate_dataset needs n >= 1")
    if difficulty not in ("easy", "occlusions", "textureless"):
        raise ValueError(f"unknown difficulty {difficulty!r}")
    scenes = []
    for i in range(n):
        out = None
        for attempt in range(16):
            rng = np.random.default_rng([seed, i, attempt])
            spec = _random_scene_spec(rng, tuple(extents), difficulty, seed)
            out = generate_scene(spec)
            if difficulty == "easy" or _has_view_dependent_depths(out):
                break
        scenes.append(out)
    return scenes


def disparity_histogram(depths, bins=64):
    """Counts of ray disparities over [-16, 16]; conserves the ray count."""
    if bins < 2:
        raise ValueError("disparity_histogram needs at least 2 bins")
    d = np.asarray(depths)
    counts, edges = np.histogram(d, bins=bins, range=(-16.0, 16.0))
    if counts.sum() != d.size:
        raise ValueError("disparities outside [-16, 16] cannot be histogrammed")
    return counts, edges[:-1]
