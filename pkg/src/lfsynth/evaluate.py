"""Evaluation harness: per-view errors, depth metrics, reports, histograms.

A report compares methods on identical examples. The geometric methods
("predicted", "lambertian") come from one main checkpoint; "flow" and
"direct" rows appear when their checkpoints are supplied. Reports are pure
functions of (dataset, checkpoints): rerunning writes identical files.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from . import models
from .lightfield import central_view
from .render import render_lambertian

HIST_BINS = 50
HIST_RANGE = (0.0, 0.2)


def mean_l1_per_view(pred, truth):
    """[V, U] mean absolute error per view over pixels and channels."""
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise ValueError(f"mean_l1_per_view: extents differ {pred.shape} vs {truth.shape}")
    return np.abs(pred.astype(np.float64) - truth.astype(np.float64)).mean(axis=(2, 3, 4))


def outermost_ring(v_n, u_n):
    """Views whose angular offset has the largest Chebyshev radius in the grid.

    For an 8x8 grid (offsets -4..3) this is the ring max(|voff|, |uoff|) = 4.
    """
    voff = np.arange(v_n) - v_n // 2
    uoff = np.arange(u_n) - u_n // 2
    cheb = np.maximum(np.abs(voff)[:, None], np.abs(uoff)[None, :])
    return cheb == cheb.max()


def depth_error(pred, gt, mask):
    """Mean and median absolute disparity error (pixels) over masked rays."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"depth_error: extents differ {pred.shape} vs {gt.shape}")
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != gt.shape:
        raise ValueError(f"depth_error: mask shape {mask.shape} does not match {gt.shape}")
    if not mask.any():
        raise ValueError("depth_error: empty mask")
    err = np.abs(pred - gt)[mask]
    return {"mae": float(err.mean()), "median_ae": float(np.median(err))}


def texture_mask(lf_samples, threshold=0.04, grow=1):
    """Rays whose view-local luminance gradient exceeds ``threshold``.

    The mask is dilated ``grow`` times with a 3x3 maximum so rays adjacent
    to texture edges count as textured.
    """
    samples = np.asarray(lf_samples)
    luma = samples.mean(axis=-1)
    gy = np.abs(np.diff(luma, axis=2, append=luma[:, :, -1:, :]))
    gx = np.abs(np.diff(luma, axis=3, append=luma[:, :, :, -1:]))
    mask = (gy + gx) > threshold
    for _ in range(grow):
        grown = mask.copy()
        grown[:, :, 1:, :] |= mask[:, :, :-1, :]
        grown[:, :, :-1, :] |= mask[:, :, 1:, :]
        grown[:, :, :, 1:] |= mask[:, :, :, :-1]
        grown[:, :, :, :-1] |= mask[:, :, :, 1:]
        mask = grown
    return mask


def downsampled_example(scene):
    """Half-resolution eval example matching the training protocol.

    Training examples are 2x box-downsampled crops, so the model's native
    disparity unit is half a scene pixel (the same protocol full-scale
    captures are evaluated under). Returns the downsampled truth light field
    and the ground-truth depths in model units (block-averaged, halved).
    """
    samples = scene.light_field.samples
    v_n, u_n, y_n, x_n = scene.ray_depths.shape
    hy, hx = y_n // 2, x_n // 2
    truth = (
        samples[:, :, : hy * 2, : hx * 2]
        .reshape(v_n, u_n, hy, 2, hx, 2, samples.shape[-1])
        .mean(axis=(3, 5), dtype=np.float64)
        .astype(np.float32)
    )
    gt = (
        scene.ray_depths[:, :, : hy * 2, : hx * 2]
        .reshape(v_n, u_n, hy, 2, hx, 2)
        .mean(axis=(3, 5), dtype=np.float64)
        / 2.0
    ).astype(np.float32)
    return {"truth": truth, "gt_depths": gt}


# -- method forwards ---------------------------------------------------------------


def main_model_outputs(view, params_d, params_o):
    """Run view -> depths -> warp -> occlusion refinement in infer mode."""
    depths = models.depth_net_forward(view, params_d, "infer")
    rendered = render_lambertian(view, depths)
    predicted = models.occlusion_net_forward(rendered, depths, params_o, "infer")
    return depths.data, rendered.data, predicted.data


def method_forwards(params_d, params_o=None, flow_params=None, direct_params=None):
    """Callables name -> view -> (light field, depths or None), one per method."""
    methods = {}
    if params_d is not None:
        def predicted(view):
            depths, _rendered, pred = main_model_outputs(view, params_d, params_o)
            return pred, depths

        def lambertian(view):
            depths, rendered, _pred = main_model_outputs(view, params_d, params_o)
            return rendered, depths

        methods["predicted"] = predicted
        methods["lambertian"] = lambertian
    if flow_params is not None:
        methods["flow"] = lambda view: (models.flow_baseline_forward(view, flow_params, "infer").data, None)
    if direct_params is not None:
        methods["direct"] = lambda view: (models.direct_regression_forward(view, direct_params, "infer").data, None)
    return methods


# -- report -------------------------------------------------------------------------


@dataclass
class MethodRow:
    name: str
    all_views_mean: float
    outermost_mean: float
    depth_mae: float | None = None
    depth_median_ae: float | None = None
    outermost_per_example: list = field(default_factory=list)
    per_view_l1: np.ndarray | None = None


@dataclass
class EvalReport:
    rows: list
    manifest: dict

    def row(self, name):
        for r in self.rows:
            if r.name == name:
                return r
        raise KeyError(name)


def evaluate_methods(examples, methods, mask_threshold=0.04):
    """Aggregate per-method errors over (view, truth lf, gt depths) examples.

    ``examples`` is a list of dicts with keys: "truth" [V,U,Y,X,C],
    "gt_depths" [V,U,Y,X] or None. The input view is the reference view of
    the truth light field.
    """
    if not examples:
        raise ValueError("evaluate_methods: no examples")
    rows = []
    for name, fwd in methods.items():
        per_view_sum = None
        outermost_each = []
        depth_abs_errors = []
        ring = None
        for ex in examples:
            truth = ex["truth"]
            view = truth[truth.shape[0] // 2, truth.shape[1] // 2]
            pred_lf, pred_depths = fwd(view)
            pv = mean_l1_per_view(pred_lf, truth)
            per_view_sum = pv if per_view_sum is None else per_view_sum + pv
            if ring is None:
                ring = outermost_ring(*pv.shape)
            outermost_each.append(float(pv[ring].mean()))
            if pred_depths is not None and ex.get("gt_depths") is not None:
                mask = texture_mask(truth, threshold=mask_threshold)
                err = np.abs(pred_depths.astype(np.float64) - ex["gt_depths"].astype(np.float64))
                depth_abs_errors.append(err[mask])
        per_view = per_view_sum / len(examples)
        pooled = np.concatenate(depth_abs_errors) if depth_abs_errors else None
        rows.append(
            MethodRow(
                name=name,
                all_views_mean=float(per_view.mean()),
                outermost_mean=float(per_view[ring].mean()),
                depth_mae=float(pooled.mean()) if pooled is not None else None,
                depth_median_ae=float(np.median(pooled)) if pooled is not None else None,
                outermost_per_example=outermost_each,
                per_view_l1=per_view,
            )
        )
    return rows


def error_histogram(values, bins=HIST_BINS, value_range=HIST_RANGE):
    """(bin_left, count) rows over the configured error range."""
    counts, edges = np.histogram(np.asarray(values, dtype=np.float64), bins=bins, range=value_range)
    return list(zip(edges[:-1], counts))


def file_digest(path):
    return hashlib.sha256(open(path, "rb").read()).hexdigest()[:16]


def build_manifest(config_echo, checkpoint_paths, dataset_manifest_path, version):
    return {
        "config_hash": hashlib.sha256(
            json.dumps(config_echo, sort_keys=True).encode()
        ).hexdigest()[:16],
        "checkpoint_ids": {name: file_digest(p) for name, p in checkpoint_paths.items()},
        "dataset_manifest_id": file_digest(dataset_manifest_path),
        "tool_version": version,
    }


def write_report(out_dir, report: EvalReport) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "run_manifest.json").write_text(json.dumps(report.manifest, indent=2, sort_keys=True) + "\n")
    lines = [
        "# light-field synthesis evaluation",
        f"# manifest: {json.dumps(report.manifest, sort_keys=True)}",
        "# outermost ring: views with max(|v_off|,|u_off|) equal to the grid maximum",
        "method\tall_views_mean_l1\toutermost_mean_l1\tdepth_mae_px\tdepth_median_ae_px",
    ]
    for row in report.rows:
        depth_cols = (
            f"{row.depth_mae:.6f}\t{row.depth_median_ae:.6f}"
            if row.depth_mae is not None
            else "-\t-"
        )
        lines.append(f"{row.name}\t{row.all_views_mean:.6f}\t{row.outermost_mean:.6f}\t{depth_cols}")
    (out_dir / "report.tsv").write_text("\n".join(lines) + "\n")
    for row in report.rows:
        hist = error_histogram(row.outermost_per_example)
        hist_lines = [f"{left:.6f},{count}" for left, count in hist]
        (out_dir / f"hist_{row.name}.txt").write_text("\n".join(hist_lines) + "\n")
        np.savetxt(
            out_dir / f"per_view_l1_{row.name}.tsv",
            row.per_view_l1,
            delimiter="\t",
            fmt="%.6f",
            header="rows: v index, cols: u index",
        )
