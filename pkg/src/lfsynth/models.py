"""The learned components: ray-depth estimator, occlusion predictor, baselines.

Reference architectures (scaled by an ``arch_scale`` knob, floor 4 channels):

  depth net      10 dilated 3x3 conv2d layers, widths 16,32,64,128,128,128,
                 128,64,64 then V*U outputs; dilations 1,1,2,4,8,16,8,4,2,1;
                 batch norm + ELU everywhere except the last layer, which is
                 a scaled tanh keeping disparities inside (-16, 16).
  occlusion net  5 3x3x3 conv3d layers over [channel, view-stack, y, x] with
                 widths 8,8,8,8 then 3; batch norm + ELU except the last,
                 which is a plain tanh; its output is a residual added to the
                 warped light field. Views are stacked v-major along the
                 stack axis; ray depths ride along as a 4th input channel.
  flow baseline  depth-net backbone emitting 2 flow fields (y, x) per view,
                 bounded to [-16, 16]; each view bilinearly samples the input
                 at (y + flow_y, x + flow_x). No geometry output.
  direct baseline depth-net backbone emitting 3*V*U channels through tanh,
                 reshaped straight to a light field. No warping anywhere.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import BatchNormState, Tensor, as_tensor, resolve_dtype

MIN_SPATIAL = 32
DEPTH_WIDTHS = (16, 32, 64, 128, 128, 128, 128, 64, 64)
DEPTH_DILATIONS = (1, 1, 2, 4, 8, 16, 8, 4, 2, 1)
OCC_WIDTHS = (8, 8, 8, 8)
NET_KINDS = ("depth", "occlusion", "flow", "direct")


@dataclass(frozen=True)
class LayerSpec:
    kind: str  # "conv2d" | "conv3d"
    in_channels: int
    out_channels: int
    dilation: int = 1
    activation: str = "elu"  # "elu" | "scaled_tanh" | "tanh" | "none"
    batch_norm: bool = True
    zero_init: bool = False

    def kernel_shape(self, k=3):
        if self.kind == "conv2d":
            return (self.out_channels, self.in_channels, k, k)
        return (self.out_channels, self.in_channels, k, k, k)


def _scaled(width, scale):
    return max(4, int(round(width * scale)))


def depth_net_spec(v_n, u_n, scale=1.0):
    widths = [_scaled(w, scale) for w in DEPTH_WIDTHS] + [v_n * u_n]
    layers = []
    cin = 3
    for i, (w, dil) in enumerate(zip(widths, DEPTH_DILATIONS)):
        last = i == len(widths) - 1
        layers.append(LayerSpec("conv2d", cin, w, dilation=dil,
                                activation="scaled_tanh" if last else "elu",
                                batch_norm=not last))
        cin = w
    return tuple(layers)


def occlusion_net_spec(scale=1.0):
    widths = [_scaled(w, scale) for w in OCC_WIDTHS] + [3]
    layers = []
    cin = 4  # RGB of the warped light field + ray depth per stacked view
    for i, w in enumerate(widths):
        last = i == len(widths) - 1
        layers.append(LayerSpec("conv3d", cin, w,
                                activation="tanh" if last else "elu",
                                batch_norm=not last, zero_init=last))
        cin = w
    return tuple(layers)


def flow_net_spec(v_n, u_n, scale=1.0):
    base = depth_net_spec(v_n, u_n, scale)
    last = base[-1]
    return base[:-1] + (LayerSpec("conv2d", last.in_channels, 2 * v_n * u_n,
                                  dilation=last.dilation, activation="scaled_tanh",
                                  batch_norm=False),)


def direct_net_spec(v_n, u_n, scale=1.0):
    base = depth_net_spec(v_n, u_n, scale)
    last = base[-1]
    return base[:-1] + (LayerSpec("conv2d", last.in_channels, 3 * v_n * u_n,
                                  dilation=last.dilation, activation="tanh",
                                  batch_norm=False),)


def net_spec(kind, v_n, u_n, scale=1.0):
    if kind == "depth":
        return depth_net_spec(v_n, u_n, scale)
    if kind == "occlusion":
        return occlusion_net_spec(scale)
    if kind == "flow":
        return flow_net_spec(v_n, u_n, scale)
    if kind == "direct":
        return direct_net_spec(v_n, u_n, scale)
    raise ValueError(f"unknown network kind {kind!r}")


@dataclass
class LayerParams:
    weight: Tensor
    bias: Tensor
    gamma: Tensor | None = None
    beta: Tensor | None = None
    bn_state: BatchNormState | None = None


@dataclass
class ModelParams:
    kind: str
    angular: tuple[int, int]
    spec: tuple[LayerSpec, ...]
    layers: list[LayerParams] = field(default_factory=list)
    seed: int = 0

    def parameters(self):
        out = []
        for lp in self.layers:
            out.append(lp.weight)
            out.append(lp.bias)
            if lp.gamma is not None:
                out.append(lp.gamma)
                out.append(lp.beta)
        return out

    def named_arrays(self):
        """Ordered (name, array) pairs covering every persistent buffer."""
        out = []
        for i, (ls, lp) in enumerate(zip(self.spec, self.layers)):
            pre = f"layer{i:02d}."
            out.append((pre + "weight", lp.weight.data))
            out.append((pre + "bias", lp.bias.data))
            if ls.batch_norm:
                out.append((pre + "gamma", lp.gamma.data))
                out.append((pre + "beta", lp.beta.data))
                out.append((pre + "bn_mean", lp.bn_state.mean))
                out.append((pre + "bn_var", lp.bn_state.var))
                out.append((pre + "bn_count", np.array([lp.bn_state.count], dtype=np.float32)))
        return out

    def load_named_arrays(self, arrays):
        """Install buffers from a {name: array} mapping (names/shapes must match)."""
        expected = self.named_arrays()
        if set(arrays) != {n for n, _ in expected}:
            missing = sorted({n for n, _ in expected} - set(arrays))
            extra = sorted(set(arrays) - {n for n, _ in expected})
            raise ValueError(f"checkpoint tensor names do not match: missing {missing}, unexpected {extra}")
        for name, cur in expected:
            if arrays[name].shape != cur.shape:
                raise ValueError(f"checkpoint tensor {name} has shape {arrays[name].shape}, expected {cur.shape}")
        for i, (ls, lp) in enumerate(zip(self.spec, self.layers)):
            pre = f"layer{i:02d}."
            dt = lp.weight.data.dtype
            lp.weight.data = arrays[pre + "weight"].astype(dt)
            lp.bias.data = arrays[pre + "bias"].astype(dt)
            if ls.batch_norm:
                lp.gamma.data = arrays[pre + "gamma"].astype(dt)
                lp.beta.data = arrays[pre + "beta"].astype(dt)
                lp.bn_state.mean = arrays[pre + "bn_mean"].astype(dt)
                lp.bn_state.var = arrays[pre + "bn_var"].astype(dt)
                lp.bn_state.count = int(arrays[pre + "bn_count"][0])


def init_params(kind, v_n, u_n, seed=0, scale=1.0, precision="single") -> ModelParams:
    """Fan-in-scaled uniform weights, zero biases; zero_init layers all-zero.

    The occlusion net's final layer starts at zero so the whole pipeline
    begins exactly at the depth-warped solution.
    """
    spec = net_spec(kind, v_n, u_n, scale)
    dtype = resolve_dtype(precision)
    rng = np.random.default_rng(seed)
    params = ModelParams(kind=kind, angular=(v_n, u_n), spec=spec, seed=seed)
    for ls in spec:
        kshape = ls.kernel_shape()
        fan_in = int(np.prod(kshape[1:]))
        bound = 1.0 / np.sqrt(fan_in)
        if ls.zero_init:
            w = np.zeros(kshape, dtype=dtype)
        else:
            w = rng.uniform(-bound, bound, size=kshape).astype(dtype)
        lp = LayerParams(
            weight=Tensor(w, requires_grad=True),
            bias=Tensor(np.zeros(ls.out_channels, dtype=dtype), requires_grad=True),
        )
        if ls.batch_norm:
            lp.gamma = Tensor(np.ones(ls.out_channels, dtype=dtype), requires_grad=True)
            lp.beta = Tensor(np.zeros(ls.out_channels, dtype=dtype), requires_grad=True)
            lp.bn_state = BatchNormState(ls.out_channels, dtype=dtype)
        params.layers.append(lp)
    return params


def _run_chain(x, params: ModelParams, mode):
    for ls, lp in zip(params.spec, params.layers):
        if ls.kind == "conv2d":
            x = ad.conv2d(x, lp.weight, lp.bias, dilation=ls.dilation)
        else:
            x = ad.conv3d(x, lp.weight, lp.bias)
        if ls.batch_norm:
            x = ad.batch_norm(x, lp.gamma, lp.beta, lp.bn_state, mode)
        if ls.activation == "elu":
            x = ad.elu(x)
        elif ls.activation == "scaled_tanh":
            x = ad.scaled_tanh(x, 16.0)
        elif ls.activation == "tanh":
            x = ad.tanh(x)
    return x


def _check_view(view, kind):
    if view.ndim != 3 or view.shape[2] != 3:
        raise ValueError(f"{kind}: input view must be [Y,X,3], got {view.shape}")
    if min(view.shape[:2]) < MIN_SPATIAL:
        raise ValueError(f"{kind}: spatial extent {view.shape[:2]} is below the {MIN_SPATIAL} px minimum")


def depth_net_forward(view, params: ModelParams, mode="train") -> Tensor:
    """Predict per-ray disparities [V,U,Y,X] in (-16, 16) from one view."""
    view = as_tensor(view)
    _check_view(view, "depth_net_forward")
    if params.kind != "depth":
        raise ValueError(f"depth_net_forward needs depth-net params, got {params.kind!r}")
    v_n, u_n = params.angular
    y_n, x_n = view.shape[:2]
    out = _run_chain(view.transpose((2, 0, 1)), params, mode)
    return out.reshape((v_n, u_n, y_n, x_n))


def occlusion_net_forward(rendered, depths, params: ModelParams, mode="train") -> Tensor:
    """Refine a warped light field with a tanh-bounded 3D-CNN residual."""
    rendered = as_tensor(rendered)
    depths = as_tensor(depths)
    if params.kind != "occlusion":
        raise ValueError(f"occlusion_net_forward needs occlusion-net params, got {params.kind!r}")
    if rendered.ndim != 5 or rendered.shape[4] != 3:
        raise ValueError(f"occlusion_net_forward: light field must be [V,U,Y,X,3], got {rendered.shape}")
    if depths.shape != rendered.shape[:4]:
        raise ValueError(
            f"occlusion_net_forward: depth extent {depths.shape} does not match light field {rendered.shape[:4]}"
        )
    v_n, u_n, y_n, x_n = depths.shape
    s = v_n * u_n
    colors = rendered.transpose((4, 0, 1, 2, 3)).reshape((3, s, y_n, x_n))
    d = depths.reshape((1, s, y_n, x_n))
    residual = _run_chain(ad.concat([colors, d], axis=0), params, mode)
    residual = residual.reshape((3, v_n, u_n, y_n, x_n)).transpose((1, 2, 3, 4, 0))
    return residual + rendered


def flow_baseline_forward(view, params: ModelParams, mode="train") -> Tensor:
    """Warp the input along per-view (y, x) flow fields; no geometry output."""
    view = as_tensor(view)
    _check_view(view, "flow_baseline_forward")
    if params.kind != "flow":
        raise ValueError(f"flow_baseline_forward needs flow-net params, got {params.kind!r}")
    v_n, u_n = params.angular
    y_n, x_n = view.shape[:2]
    flows = _run_chain(view.transpose((2, 0, 1)), params, mode).reshape((v_n, u_n, 2, y_n, x_n))
    img = view.transpose((2, 0, 1))
    ybase, xbase = np.meshgrid(np.arange(y_n, dtype=view.dtype), np.arange(x_n, dtype=view.dtype), indexing="ij")
    base = Tensor(np.broadcast_to(np.stack([ybase, xbase]), (v_n, u_n, 2, y_n, x_n)).copy())
    coords = (base + flows).transpose((2, 0, 1, 3, 4)).reshape((2, v_n * u_n * y_n, x_n))
    lf = ad.grid_sample_bilinear(img, coords).reshape((3, v_n, u_n, y_n, x_n))
    return lf.transpose((1, 2, 3, 4, 0))


def direct_regression_forward(view, params: ModelParams, mode="train") -> Tensor:
    """Regress a light field straight from the view, values in (-1, 1)."""
    view = as_tensor(view)
    _check_view(view, "direct_regression_forward")
    if params.kind != "direct":
        raise ValueError(f"direct_regression_forward needs direct-net params, got {params.kind!r}")
    v_n, u_n = params.angular
    y_n, x_n = view.shape[:2]
    out = _run_chain(view.transpose((2, 0, 1)), params, mode)
    return out.reshape((v_n, u_n, 3, y_n, x_n)).transpose((0, 1, 3, 4, 2))


# -- LFCK checkpoint container ------------------------------------------------------

LFCK_MAGIC = b"LFCK"
LFCK_VERSION = 1
_LFCK_HEADER = struct.Struct("<4sHHI")


def write_tensor_records(f, named):
    for name, arr in named:
        nb = name.encode("utf-8")
        f.write(struct.pack("<H", len(nb)))
        f.write(nb)
        f.write(struct.pack("<B", arr.ndim))
        for d in arr.shape:
            f.write(struct.pack("<I", d))
        f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_tensor_records(buf, offset, count):
    out = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", buf, offset)
        offset += 2
        name = buf[offset:offset + nlen].decode("utf-8")
        offset += nlen
        (ndim,) = struct.unpack_from("<B", buf, offset)
        offset += 1
        shape = struct.unpack_from(f"<{ndim}I", buf, offset)
        offset += 4 * ndim
        n = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(buf, dtype="<f4", count=n, offset=offset).reshape(shape)
        offset += 4 * n
        out[name] = arr.astype(np.float32)
    if offset != len(buf):
        raise ValueError(f"trailing bytes after tensor records: {len(buf) - offset}")
    return out


def save_params(path, params: ModelParams) -> None:
    named = params.named_arrays()
    with open(path, "wb") as f:
        f.write(_LFCK_HEADER.pack(LFCK_MAGIC, LFCK_VERSION, len(params.spec), len(named)))
        write_tensor_records(f, named)


def load_params(path, params: ModelParams) -> ModelParams:
    """Load an LFCK file into a freshly initialized ModelParams of the same spec."""
    buf = open(path, "rb").read()
    if len(buf) < _LFCK_HEADER.size:
        raise ValueError(f"{path}: file too short for LFCK header")
    magic, version, layer_count, tensor_count = _LFCK_HEADER.unpack_from(buf)
    if magic != LFCK_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}, expected {LFCK_MAGIC!r}")
    if version != LFCK_VERSION:
        raise ValueError(f"{path}: unsupported LFCK version {version}")
    if layer_count != len(params.spec):
        raise ValueError(f"{path}: checkpoint has {layer_count} layers, model expects {len(params.spec)}")
    arrays = read_tensor_records(buf, _LFCK_HEADER.size, tensor_count)
    params.load_named_arrays(arrays)
    return params
