"""Differentiable light-field rendering and the depth regularization losses.

All functions here build autodiff graphs; inputs may be Tensors or plain
arrays (arrays are wrapped as constants). Layouts follow the package
conventions: light fields [V,U,Y,X,C], ray depths [V,U,Y,X], views [Y,X,C].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, as_tensor
from .lightfield import DISPARITY_LIMIT


def _base_grids(y_n, x_n, dtype):
    ys, xs = np.meshgrid(np.arange(y_n, dtype=dtype), np.arange(x_n, dtype=dtype), indexing="ij")
    return ys, xs


def _warp_field(depths, vstep, ustep):
    """Graph node [2, V, U, Y, X] of positions (y + vstep_vu*D, x + ustep_vu*D).

    vstep/ustep are per-view scalar grids [V, U]; offsets of zero contribute
    exactly zero so identity warps stay bit-exact.
    """
    v_n, u_n, y_n, x_n = depths.shape
    dt = depths.dtype
    ybase, xbase = _base_grids(y_n, x_n, dt)
    yb = Tensor(np.broadcast_to(ybase, depths.shape).copy())
    xb = Tensor(np.broadcast_to(xbase, depths.shape).copy())
    vs = Tensor(np.broadcast_to(np.asarray(vstep, dtype=dt)[:, :, None, None], depths.shape).copy())
    us = Tensor(np.broadcast_to(np.asarray(ustep, dtype=dt)[:, :, None, None], depths.shape).copy())
    return ad.stack([yb + depths * vs, xb + depths * us])


def render_lambertian(view, depths) -> Tensor:
    """Warp the reference view into every angular position using ray depths.

    The view at angular offset (voff, uoff) samples the input at
    (y + voff*D, x + uoff*D) with border-clamped bilinear interpolation.
    The offset-(0,0) slice is an identity warp and reproduces the input
    exactly. Differentiable w.r.t. both the view and the depths.
    """
    view = as_tensor(view)
    depths = as_tensor(depths)
    if view.ndim != 3:
        raise ValueError(f"render_lambertian: view must be [Y,X,C], got {view.shape}")
    if depths.ndim != 4:
        raise ValueError(f"render_lambertian: depths must be [V,U,Y,X], got {depths.shape}")
    if depths.shape[2:] != view.shape[:2]:
        raise ValueError(
            f"render_lambertian: spatial extents differ, view {view.shape[:2]} vs depths {depths.shape[2:]}"
        )
    v_n, u_n, y_n, x_n = depths.shape
    c_n = view.shape[2]
    img = view.transpose((2, 0, 1))  # [C,Y,X]
    voff, uoff = np.meshgrid(np.arange(v_n) - v_n // 2, np.arange(u_n) - u_n // 2, indexing="ij")
    coords = _warp_field(depths, voff, uoff).reshape((2, v_n * u_n * y_n, x_n))
    lf = ad.grid_sample_bilinear(img, coords).reshape((c_n, v_n, u_n, y_n, x_n))
    return lf.transpose((1, 2, 3, 4, 0))


def shear_resample(depths, k):
    """Resample each view's depth map one angular step along its sheared line.

    For offset k=(kv,ku) (exactly one component is 1), the result at ray
    (v,u,y,x) is the depth field of view (v-kv, u-ku) sampled at
    (y + kv*D, x + ku*D), bilinear in space. Views whose source angular
    index leaves the grid are invalid: they are zero in the returned tensor
    and False in the accompanying [V,U] validity mask.
    """
    depths = as_tensor(depths)
    if depths.ndim != 4:
        raise ValueError(f"shear_resample: depths must be [V,U,Y,X], got {depths.shape}")
    kv, ku = k
    if kv not in (0, 1) or ku not in (0, 1) or kv + ku != 1:
        raise ValueError(f"shear_resample: k must be (1,0) or (0,1), got {k}")
    v_n, u_n, y_n, x_n = depths.shape
    valid = np.zeros((v_n, u_n), dtype=bool)
    if kv:
        valid[1:, :] = True
        targets = depths[1:, :]  # [V-1,U,Y,X]
        sources = depths[:-1, :]
        nv, nu = v_n - 1, u_n
    else:
        valid[:, 1:] = True
        targets = depths[:, 1:]
        sources = depths[:, :-1]
        nv, nu = v_n, u_n - 1
    n = nv * nu
    steps = np.full((nv, nu), 1.0)
    coords = _warp_field(targets, steps * kv, steps * ku)  # [2,nv,nu,Y,X]
    coords = coords.transpose((1, 2, 0, 3, 4)).reshape((n, 2, y_n, x_n))
    res = ad.grid_sample_bilinear_views(sources.reshape((n, 1, y_n, x_n)), coords)
    res = res.reshape((nv, nu, y_n, x_n))
    zeros_shape = (1, u_n, y_n, x_n) if kv else (v_n, 1, y_n, x_n)
    pad = Tensor(np.zeros(zeros_shape, dtype=depths.dtype))
    out = ad.concat([pad, res], axis=0 if kv else 1)
    return out, valid


def depth_consistency_loss(depths) -> Tensor:
    """Mean |D - shear_resample(D, k)| over both axis-aligned shears.

    The mean pools all valid rays of k=(1,0) and k=(0,1); rays whose source
    angular index is off-grid are excluded rather than clamped.
    """
    depths = as_tensor(depths)
    v_n, u_n, y_n, x_n = depths.shape
    total = None
    count = 0
    for k, sl in (((1, 0), (slice(1, None), slice(None))), ((0, 1), (slice(None), slice(1, None)))):
        res, valid = shear_resample(depths, k)
        diff = ad.sub(depths[sl], res[sl]).abs().sum()
        total = diff if total is None else total + diff
        count += int(valid.sum()) * y_n * x_n
    return total * (1.0 / count)


def tv_loss(depths) -> Tensor:
    """Spatial total variation of each view's depth map (forward differences).

    Returns mean|dx| + mean|dy|; the boundary column/row has no forward
    neighbor and is excluded from each term.
    """
    depths = as_tensor(depths)
    if depths.ndim != 4:
        raise ValueError(f"tv_loss: depths must be [V,U,Y,X], got {depths.shape}")
    dx = ad.sub(depths[:, :, :, 1:], depths[:, :, :, :-1])
    dy = ad.sub(depths[:, :, 1:, :], depths[:, :, :-1, :])
    return dx.abs().mean() + dy.abs().mean()


@dataclass
class LossBreakdown:
    """The four loss terms and their weighted total, kept as graph scalars."""

    lambertian_l1: Tensor
    predicted_l1: Tensor
    consistency: Tensor
    tv: Tensor
    total: Tensor

    def values(self):
        return {
            "lambertian_l1": self.lambertian_l1.item(),
            "predicted_l1": self.predicted_l1.item(),
            "consistency": self.consistency.item(),
            "tv": self.tv.item(),
            "total": self.total.item(),
        }


def total_loss(rendered, predicted, target, depths, lambda_c, lambda_tv) -> LossBreakdown:
    """Composite training loss.

    total = L1(rendered, target) + L1(predicted, target)
          + lambda_c * consistency(depths) + lambda_tv * tv(depths),
    evaluated in exactly that order. Keeping both reconstruction terms stops
    the occlusion predictor from absorbing the whole synthesis problem and
    starving the depth estimator of gradient signal.
    """
    rendered, predicted, target = as_tensor(rendered), as_tensor(predicted), as_tensor(target)
    depths = as_tensor(depths)
    if rendered.shape != target.shape or predicted.shape != target.shape:
        raise ValueError(
            f"total_loss: light field extents differ: {rendered.shape} / {predicted.shape} / {target.shape}"
        )
    if depths.shape != target.shape[:4]:
        raise ValueError(f"total_loss: depths {depths.shape} do not match light field {target.shape[:4]}")
    if lambda_c < 0 or lambda_tv < 0:
        raise ValueError("total_loss: regularization weights must be nonnegative")
    lam = ad.l1_loss(rendered, target)
    pred = ad.l1_loss(predicted, target)
    cons = depth_consistency_loss(depths)
    tv = tv_loss(depths)
    total = lam + pred + cons * float(lambda_c) + tv * float(lambda_tv)
    return LossBreakdown(lam, pred, cons, tv, total)


def validate_depth_range(depths):
    """Assert a depth field stays within the representable disparity range."""
    d = depths.data if isinstance(depths, Tensor) else np.asarray(depths)
    if np.abs(d).max() > DISPARITY_LIMIT:
        raise ValueError(f"ray depths exceed |{DISPARITY_LIMIT}| px: max {np.abs(d).max():.3f}")
