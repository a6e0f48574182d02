"""Disparity post-processing and the end-to-end stereo matcher."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numba
import numpy as np

from .census import DEFAULT_WINDOW, build_cost_volume, census_transform, _check_window
from .core import (
    DepthConversionParams,
    DepthMap,
    DisparityMap,
    ImageGray,
    ShapeMismatchError,
    StereoRig,
    ValidationError,
    disparity_to_depth,
)
from .sgm import SgmParams, aggregate, right_disparity_from_volume, subpixel_refine, wta_disparity


@dataclass(frozen=True)
class RefineParams:
    lr_threshold: float = 1.0
    median_window: int = 3
    speckle_max_size: int = 100
    speckle_diff: float = 1.0
    median_first: bool = False  # ablation switch: median before the consistency check

    def __post_init__(self):
        if not self.lr_threshold >= 0:
            raise ValidationError(f"lr_threshold must be >= 0, got {self.lr_threshold}")
        if self.median_window < 1 or self.median_window % 2 == 0:
            raise ValidationError(f"median_window must be odd and >= 1, got {self.median_window}")
        if self.speckle_max_size < 0:
            raise ValidationError(f"speckle_max_size must be >= 0, got {self.speckle_max_size}")
        if not self.speckle_diff >= 0:
            raise ValidationError(f"speckle_diff must be >= 0, got {self.speckle_diff}")


@dataclass(frozen=True)
class MatchConfig:
    census_window: tuple[int, int] = DEFAULT_WINDOW
    sgm: SgmParams = field(default_factory=SgmParams)
    refine: RefineParams = field(default_factory=RefineParams)
    depth: DepthConversionParams = field(default_factory=DepthConversionParams)
    d_max: int = 64

    def __post_init__(self):
        object.__setattr__(self, "census_window", _check_window(self.census_window))
        if int(self.d_max) != self.d_max or self.d_max < 0:
            raise ValidationError(f"d_max must be a non-negative integer, got {self.d_max}")


def _round_half_up(v: np.ndarray) -> np.ndarray:
    return np.floor(v + 0.5).astype(np.int64)


def lr_consistency(left: DisparityMap, right: DisparityMap, threshold: float = 1.0) -> DisparityMap:
    """Keep left pixels whose right-view counterpart agrees within ``threshold``.

    The counterpart of ``(x, y)`` is ``(x - round(d_L), y)``, rounding half up.
    """
    if left.shape != right.shape:
        raise ShapeMismatchError("left vs right disparity", left.shape, right.shape)
    h, w = left.shape
    ys, xs = np.nonzero(left.mask)
    dl = left.values[ys, xs]
    xr = xs - _round_half_up(dl)
    inside = (xr >= 0) & (xr < w)
    keep = np.zeros(dl.shape, dtype=bool)
    yi, xri = ys[inside], xr[inside]
    dr = right.values[yi, xri]
    keep[inside] = right.mask[yi, xri] & (np.abs(dl[inside] - dr) <= threshold)
    mask = np.zeros((h, w), dtype=bool)
    mask[ys[keep], xs[keep]] = True
    return DisparityMap(left.values, mask, d_max=left.d_max)


@numba.njit(parallel=True, cache=True)
def _median_kernel(values, mask, r, out):
    h, w = values.shape
    for y in numba.prange(h):
        buf = np.empty((2 * r + 1) ** 2, dtype=np.float64)
        for x in range(w):
            if not mask[y, x]:
                out[y, x] = values[y, x]
                continue
            n = 0
            for yy in range(max(0, y - r), min(h, y + r + 1)):
                for xx in range(max(0, x - r), min(w, x + r + 1)):
                    if mask[yy, xx]:
                        buf[n] = values[yy, xx]
                        n += 1
            s = np.sort(buf[:n])
            out[y, x] = s[(n - 1) // 2]


def median_filter(d: DisparityMap, window: int = 3) -> DisparityMap:
    """Median over valid neighbours, lower middle element for even counts.

    Invalid pixels are neither used nor filled.
    """
    if window < 1 or window % 2 == 0:
        raise ValidationError(f"median window must be odd and >= 1, got {window}")
    out = np.empty(d.shape, dtype=np.float64)
    _median_kernel(d.values.astype(np.float64), d.mask, window // 2, out)
    return DisparityMap(out, d.mask, d_max=d.d_max)


@numba.njit(cache=True)
def _speckle_kernel(values, mask, max_size, diff):
    h, w = values.shape
    seen = np.zeros((h, w), dtype=np.bool_)
    keep = mask.copy()
    stack = np.empty(h * w, dtype=np.int64)
    comp = np.empty(h * w, dtype=np.int64)
    for sy in range(h):
        for sx in range(w):
            if not mask[sy, sx] or seen[sy, sx]:
                continue
            seen[sy, sx] = True
            top = 0
            n = 0
            stack[top] = sy * w + sx
            top += 1
            while top > 0:
                top -= 1
                p = stack[top]
                comp[n] = p
                n += 1
                y = p // w
                x = p % w
                v = values[y, x]
                for k in range(4):
                    ny = y + (k == 1) - (k == 0)
                    nx = x + (k == 3) - (k == 2)
                    if ny < 0 or ny >= h or nx < 0 or nx >= w:
                        continue
                    if seen[ny, nx] or not mask[ny, nx]:
                        continue
                    if abs(values[ny, nx] - v) <= diff:
                        seen[ny, nx] = True
                        stack[top] = ny * w + nx
                        top += 1
            if n <= max_size:
                for i in range(n):
                    keep[comp[i] // w, comp[i] % w] = False
    return keep


def speckle_filter(d: DisparityMap, max_size: int = 100, diff: float = 1.0) -> DisparityMap:
    """Invalidate 4-connected blobs of at most ``max_size`` pixels.

    Neighbours join a blob when their disparities differ by at most ``diff``.
    """
    keep = _speckle_kernel(d.values.astype(np.float64), d.mask, int(max_size), float(diff))
    return DisparityMap(d.values, keep, d_max=d.d_max)


def match_stereo(
    left: ImageGray,
    right: ImageGray,
    rig: StereoRig,
    cfg: MatchConfig = MatchConfig(),
    timings: dict[str, float] | None = None,
) -> tuple[DisparityMap, DepthMap]:
    """Census, SGM, subpixel, consistency, median, speckle, then depth.

    If ``timings`` is given it receives wall-clock seconds per stage.
    """
    if left.shape != right.shape:
        raise ShapeMismatchError("left vs right image", left.shape, right.shape)
    if left.shape != rig.shape:
        raise ShapeMismatchError("image vs rig.image_size", left.shape, rig.shape)
    stamps = [("start", time.perf_counter())]

    def mark(stage):
        stamps.append((stage, time.perf_counter()))

    cl = census_transform(left, cfg.census_window)
    cr = census_transform(right, cfg.census_window)
    mark("census")
    costs = build_cost_volume(cl, cr, cfg.d_max)
    mark("cost_volume")
    agg = aggregate(costs, cfg.sgm)
    mark("aggregate")
    disp = subpixel_refine(agg, wta_disparity(agg, cfg.sgm))
    right_disp = right_disparity_from_volume(agg)
    mark("wta")
    rp = cfg.refine
    if rp.median_first:
        disp = median_filter(disp, rp.median_window)
        disp = lr_consistency(disp, right_disp, rp.lr_threshold)
    else:
        disp = lr_consistency(disp, right_disp, rp.lr_threshold)
        disp = median_filter(disp, rp.median_window)
    disp = speckle_filter(disp, rp.speckle_max_size, rp.speckle_diff)
    mark("refine")
    depth = disparity_to_depth(disp, rig, cfg.depth)
    mark("depth")
    if timings is not None:
        for (_, t0), (stage, t1) in zip(stamps, stamps[1:]):
            timings[stage] = t1 - t0
        timings["total"] = stamps[-1][1] - stamps[0][1]
    return disp, depth
