"""End-to-end optimization of the depth and occlusion networks.

A training example is a random joint spatial crop of a light field,
2x box-downsampled; the input is the reference view of the result. One
train step runs view -> depth net -> warp -> occlusion net, averages the
composite loss over the minibatch, backpropagates, and applies one joint
Adam update. Everything is driven by one seeded generator, so fixed-seed
trajectories are bit-identical and checkpoints resume exactly.

Checkpoints use the LFTS container: a JSON state blob (step, rng state,
loss EMA, config echo) followed by the same named-f32-tensor records the
LFCK model format uses. Resume is bit-exact in single precision (the
record payload is f32).
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import models
from .autodiff import Adam, backward, l1_loss
from .lightfield import LightField, central_view
from .models import ModelParams
from .render import LossBreakdown, render_lambertian, total_loss

EMA_RATE = 0.9
LOSS_KEYS = ("lambertian_l1", "predicted_l1", "consistency", "tv", "total")


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    batch_size: int = 4
    lambda_c: float = 0.005
    lambda_tv: float = 0.01
    crop: int = 192
    downsample_to: int = 96
    steps: int = 2000
    seed: int = 0
    precision: str = "single"
    arch_scale: float = 1.0

    def __post_init__(self):
        if self.crop != 2 * self.downsample_to:
            raise ValueError(f"crop ({self.crop}) must be exactly 2 * downsample_to ({self.downsample_to})")
        if self.downsample_to < models.MIN_SPATIAL:
            raise ValueError(f"downsample_to must be >= {models.MIN_SPATIAL} (network minimum)")
        if self.lambda_c < 0 or self.lambda_tv < 0:
            raise ValueError("regularization weights must be nonnegative")
        if self.batch_size < 1 or self.steps < 0:
            raise ValueError("batch_size must be >= 1 and steps >= 0")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if self.precision not in ("single", "double"):
            raise ValueError(f"precision must be 'single' or 'double', got {self.precision!r}")
        if self.arch_scale <= 0:
            raise ValueError("arch_scale must be positive")


def parse_config(path, overrides=None) -> TrainConfig:
    """Read a ``key = value`` config file; overrides take precedence."""
    values = {}
    for lineno, line in enumerate(open(path).read().splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ValueError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, _, raw = stripped.partition("=")
        values[key.strip()] = raw.strip()
    if overrides:
        values.update({k: v for k, v in overrides.items() if v is not None})
    return config_from_strings(values)


def config_from_strings(values) -> TrainConfig:
    types = {f.name: f.type for f in fields(TrainConfig)}
    kwargs = {}
    for key, raw in values.items():
        if key not in types:
            raise ValueError(f"unknown config key {key!r}")
        if isinstance(raw, str):
            kwargs[key] = raw if types[key] == "str" else (int(raw) if types[key] == "int" else float(raw))
        else:
            kwargs[key] = raw
    return TrainConfig(**kwargs)


def write_config(path, config: TrainConfig) -> None:
    lines = [f"{name} = {value}" for name, value in asdict(config).items()]
    open(path, "w").write("\n".join(lines) + "\n")


def make_training_example(lf: LightField, rng, crop=192):
    """Random joint crop of all views, 2x box-downsampled.

    Returns (input view [y,x,3], target LightField); the input is the
    reference view of the downsampled crop.
    """
    if crop % 2 != 0 or crop < 2:
        raise ValueError(f"crop must be a positive even size, got {crop}")
    y_n, x_n = lf.spatial_extent
    if y_n < crop or x_n < crop:
        raise ValueError(f"light field spatial extent {(y_n, x_n)} is smaller than the {crop} px crop")
    y0 = int(rng.integers(0, y_n - crop + 1))
    x0 = int(rng.integers(0, x_n - crop + 1))
    block = lf.samples[:, :, y0:y0 + crop, x0:x0 + crop, :]
    v_n, u_n = lf.angular_extent
    half = crop // 2
    down = block.reshape(v_n, u_n, half, 2, half, 2, lf.channels).mean(axis=(3, 5), dtype=np.float64)
    target = LightField(down.astype(np.float32))
    return central_view(target), target


class TrainingDiverged(RuntimeError):
    def __init__(self, step, terms):
        self.terms = terms
        super().__init__(f"non-finite loss at step {step}: " + ", ".join(f"{k}={v!r}" for k, v in terms.items()))


@dataclass
class TrainState:
    step: int
    adam: Adam
    rng: np.random.Generator
    loss_ema: dict | None = None

    def update_ema(self, values):
        if self.loss_ema is None:
            self.loss_ema = dict(values)
        else:
            self.loss_ema = {
                k: EMA_RATE * self.loss_ema[k] + (1.0 - EMA_RATE) * values[k] for k in values
            }


def init_state(params_list, config: TrainConfig) -> TrainState:
    adam = Adam(params_list, lr=config.lr, beta1=config.beta1, beta2=config.beta2, epsilon=config.epsilon)
    return TrainState(step=0, adam=adam, rng=np.random.default_rng(config.seed))


def sample_batch(lightfields, rng, config: TrainConfig):
    """Deterministic minibatch of (view, target) examples from a scene list."""
    batch = []
    for _ in range(config.batch_size):
        lf = lightfields[int(rng.integers(0, len(lightfields)))]
        batch.append(make_training_example(lf, rng, config.crop))
    return batch


def _check_finite(step, lb: LossBreakdown):
    vals = lb.values()
    if not all(np.isfinite(v) for v in vals.values()):
        raise TrainingDiverged(step, vals)
    return vals


def train_step(batch, params_d: ModelParams, params_o: ModelParams, state: TrainState, config: TrainConfig):
    """One joint optimization step over a minibatch; returns mean loss terms."""
    if len(batch) != config.batch_size:
        raise ValueError(f"batch has {len(batch)} examples, config expects {config.batch_size}")
    state.adam.zero_grad()
    sums = dict.fromkeys(LOSS_KEYS, 0.0)
    inv = 1.0 / len(batch)
    for view, target in batch:
        depths = models.depth_net_forward(view, params_d, "train")
        if not np.isfinite(depths.data).all():
            raise TrainingDiverged(state.step, {"depth_prediction": float(np.abs(depths.data).max())})
        rendered = render_lambertian(view, depths)
        predicted = models.occlusion_net_forward(rendered, depths, params_o, "train")
        lb = total_loss(rendered, predicted, target.samples, depths, config.lambda_c, config.lambda_tv)
        vals = _check_finite(state.step, lb)
        backward(lb.total * inv)
        for k in sums:
            sums[k] += vals[k] * inv
    state.adam.step()
    state.step += 1
    state.update_ema(sums)
    return sums


def train_baseline_step(batch, params: ModelParams, state: TrainState, config: TrainConfig):
    """Plain reconstruction-loss step for the flow / direct-regression baselines."""
    if params.kind not in ("flow", "direct"):
        raise ValueError(f"baseline training expects flow or direct params, got {params.kind!r}")
    state.adam.zero_grad()
    fwd = models.flow_baseline_forward if params.kind == "flow" else models.direct_regression_forward
    total = 0.0
    inv = 1.0 / len(batch)
    for view, target in batch:
        predicted = fwd(view, params, "train")
        loss = l1_loss(predicted, target.samples)
        value = loss.item()
        if not np.isfinite(value):
            raise TrainingDiverged(state.step, {"reconstruction_l1": value})
        backward(loss * inv)
        total += value * inv
    state.adam.step()
    state.step += 1
    state.update_ema({"total": total})
    return {"total": total}


# -- LFTS checkpoint container --------------------------------------------------------

LFTS_MAGIC = b"LFTS"
LFTS_VERSION = 1
_LFTS_HEADER = struct.Struct("<4sHI")


def _collect_arrays(params_d, params_o, state):
    named = []
    nets = [(params_d.kind, params_d)] + ([("occlusion", params_o)] if params_o is not None else [])
    for prefix, params in nets:
        named.extend((f"{prefix}.{n}", a) for n, a in params.named_arrays())
    for i, (m, v) in enumerate(zip(state.adam.m, state.adam.v)):
        named.append((f"adam.m.{i:03d}", m))
        named.append((f"adam.v.{i:03d}", v))
    return named


def checkpoint_save(path, params_d, params_o, state: TrainState, config: TrainConfig) -> None:
    meta = {
        "model": params_d.kind if params_o is None else "main",
        "angular": list(params_d.angular),
        "step": state.step,
        "adam_t": state.adam.t,
        "rng_state": state.rng.bit_generator.state,
        "loss_ema": state.loss_ema,
        "config": asdict(config),
    }
    named = _collect_arrays(params_d, params_o, state)
    meta["tensor_count"] = len(named)
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(_LFTS_HEADER.pack(LFTS_MAGIC, LFTS_VERSION, len(blob)))
        f.write(blob)
        models.write_tensor_records(f, named)


def checkpoint_load(path):
    """Restore (params_d, params_o, state, config); params_o is None for baselines."""
    buf = open(path, "rb").read()
    if len(buf) < _LFTS_HEADER.size:
        raise ValueError(f"{path}: file too short for LFTS header")
    magic, version, blob_len = _LFTS_HEADER.unpack_from(buf)
    if magic != LFTS_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}, expected {LFTS_MAGIC!r}")
    if version != LFTS_VERSION:
        raise ValueError(f"{path}: unsupported LFTS version {version}")
    try:
        meta = json.loads(buf[_LFTS_HEADER.size:_LFTS_HEADER.size + blob_len])
    except json.JSONDecodeError as e:
        raise ValueError(f"{path}: corrupt JSON state blob: {e}") from e
    config = config_from_strings(meta["config"])
    v_n, u_n = meta["angular"]
    arrays = models.read_tensor_records(buf, _LFTS_HEADER.size + blob_len, meta["tensor_count"])

    kind = meta["model"]
    if kind == "main":
        params_d = models.init_params("depth", v_n, u_n, seed=config.seed, scale=config.arch_scale,
                                      precision=config.precision)
        params_o = models.init_params("occlusion", v_n, u_n, seed=config.seed + 1, scale=config.arch_scale,
                                      precision=config.precision)
        params_d.load_named_arrays(_strip(arrays, "depth."))
        params_o.load_named_arrays(_strip(arrays, "occlusion."))
        param_list = params_d.parameters() + params_o.parameters()
    else:
        params_d = models.init_params(kind, v_n, u_n, seed=config.seed, scale=config.arch_scale,
                                      precision=config.precision)
        params_o = None
        params_d.load_named_arrays(_strip(arrays, f"{kind}."))
        param_list = params_d.parameters()

    state = init_state(param_list, config)
    state.step = meta["step"]
    state.adam.t = meta["adam_t"]
    state.loss_ema = meta["loss_ema"]
    for i in range(len(param_list)):
        m = arrays.get(f"adam.m.{i:03d}")
        v = arrays.get(f"adam.v.{i:03d}")
        if m is None or v is None:
            raise ValueError(f"{path}: missing Adam moment tensors for parameter {i}")
        if m.shape != param_list[i].data.shape:
            raise ValueError(f"{path}: Adam moment {i} has shape {m.shape}, expected {param_list[i].data.shape}")
        state.adam.m[i] = m.astype(param_list[i].data.dtype)
        state.adam.v[i] = v.astype(param_list[i].data.dtype)
    rng_state = meta["rng_state"]
    state.rng = np.random.default_rng(0)
    state.rng.bit_generator.state = rng_state
    return params_d, params_o, state, config


def _strip(arrays, prefix):
    return {k[len(prefix):]: v for k, v in arrays.items() if k.startswith(prefix)}


def new_run(v_n, u_n, config: TrainConfig):
    """Fresh main-model parameters and state for a training run."""
    params_d = models.init_params("depth", v_n, u_n, seed=config.seed, scale=config.arch_scale,
                                  precision=config.precision)
    params_o = models.init_params("occlusion", v_n, u_n, seed=config.seed + 1, scale=config.arch_scale,
                                  precision=config.precision)
    state = init_state(params_d.parameters() + params_o.parameters(), config)
    return params_d, params_o, state


def new_baseline_run(kind, v_n, u_n, config: TrainConfig):
    params = models.init_params(kind, v_n, u_n, seed=config.seed, scale=config.arch_scale,
                                precision=config.precision)
    return params, init_state(params.parameters(), config)
