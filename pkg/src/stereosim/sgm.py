"""Semi-global cost aggregation, winner-take-all and subpixel refinement."""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from .census import CostVolume
from .core import INVALID, DisparityMap, ShapeMismatchError, ValidationError

# (dx, dy) steps of the scanline directions; the first four form the 4-path set.
PATHS_4 = ((1, 0), (-1, 0), (0, 1), (0, -1))
PATHS_8 = PATHS_4 + ((1, 1), (-1, -1), (1, -1), (-1, 1))


@dataclass(frozen=True)
class SgmParams:
    p1: int = 8
    p2: int = 96
    paths: int = 8
    uniqueness_ratio: float = 0.15

    def __post_init__(self):
        for name in ("p1", "p2"):
            v = getattr(self, name)
            if int(v) != v:
                raise ValidationError(f"{name} must be an integer cost, got {v}")
            object.__setattr__(self, name, int(v))
        if not 0 <= self.p1 <= self.p2:
            raise ValidationError(f"need 0 <= p1 <= p2, got p1={self.p1}, p2={self.p2}")
        if self.paths not in (4, 8):
            raise ValidationError(f"paths must be 4 or 8, got {self.paths}")
        if not 0 <= self.uniqueness_ratio < 1:
            raise ValidationError(f"uniqueness_ratio must be in [0, 1), got {self.uniqueness_ratio}")

    @property
    def directions(self) -> tuple[tuple[int, int], ...]:
        return PATHS_4 if self.paths == 4 else PATHS_8


@dataclass(frozen=True, eq=False)
class AggregatedVolume:
    """Sum over scanline directions of the path costs, same layout as the raw volume."""

    values: np.ndarray  # (H, W, D) int32
    left_defined: np.ndarray
    right_defined: np.ndarray

    @property
    def d_max(self) -> int:
        return self.values.shape[2] - 1

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape[:2]

    @classmethod
    def from_array(cls, values) -> "AggregatedVolume":
        """Wrap a bare (H, W, D) array, every pixel treated as defined."""
        values = np.ascontiguousarray(values, dtype=np.int32)
        hw = values.shape[:2]
        return cls(values, np.ones(hw, bool), np.ones(hw, bool))


@numba.njit(inline="always")
def _step(c, prev, prev_min, cur, p1, p2):
    n = c.shape[0]
    cur_min = np.int32(2**31 - 1)
    for d in range(n):
        v = prev[d]
        if d > 0 and prev[d - 1] + p1 < v:
            v = prev[d - 1] + p1
        if d < n - 1 and prev[d + 1] + p1 < v:
            v = prev[d + 1] + p1
        if prev_min + p2 < v:
            v = prev_min + p2
        lv = np.int32(c[d]) + v - prev_min
        cur[d] = lv
        if lv < cur_min:
            cur_min = lv
    return cur_min


@numba.njit(parallel=True, cache=True)
def _aggregate_rows(costs, dx, p1, p2, out):
    h, w, n = costs.shape
    for y in numba.prange(h):
        prev = np.empty(n, dtype=np.int32)
        cur = np.empty(n, dtype=np.int32)
        x = 0 if dx > 0 else w - 1
        prev_min = np.int32(2**31 - 1)
        for d in range(n):
            prev[d] = costs[y, x, d]
            out[y, x, d] += prev[d]
            if prev[d] < prev_min:
                prev_min = prev[d]
        for _ in range(w - 1):
            x += dx
            cur_min = _step(costs[y, x], prev, prev_min, cur, p1, p2)
            for d in range(n):
                out[y, x, d] += cur[d]
            prev, cur = cur, prev
            prev_min = cur_min


@numba.njit(parallel=True, cache=True)
def _aggregate_cols(costs, dx, dy, p1, p2, out):
    h, w, n = costs.shape
    prev = np.empty((w, n), dtype=np.int32)
    cur = np.empty((w, n), dtype=np.int32)
    prev_min = np.empty(w, dtype=np.int32)
    cur_min = np.empty(w, dtype=np.int32)
    y = 0 if dy > 0 else h - 1
    for i in range(h):
        for x in numba.prange(w):
            px = x - dx
            if i == 0 or px < 0 or px >= w:
                m = np.int32(2**31 - 1)
                for d in range(n):
                    v = np.int32(costs[y, x, d])
                    cur[x, d] = v
                    if v < m:
                        m = v
                cur_min[x] = m
            else:
                cur_min[x] = _step(costs[y, x], prev[px], prev_min[px], cur[x], p1, p2)
            for d in range(n):
                out[y, x, d] += cur[x, d]
        prev, cur = cur, prev
        prev_min, cur_min = cur_min, prev_min
        y += dy


@numba.njit(parallel=True, cache=True)
def _neutralize_kernel(costs, max_cost):
    h, w, n = costs.shape
    out = np.empty_like(costs)
    for y in numba.prange(h):
        for x in range(w):
            worst = -1
            for d in range(n):
                c = np.int64(costs[y, x, d])
                if c < max_cost and c > worst:
                    worst = c
            fill = max_cost if worst < 0 else worst
            for d in range(n):
                c = costs[y, x, d]
                out[y, x, d] = fill if c >= max_cost else c
    return out


def neutral_costs(costs: CostVolume) -> np.ndarray:
    """Raw costs with ``max_cost`` sentinels replaced by the pixel's worst defined cost.

    A sentinel then neither wins the argmin nor biases neighbouring pixels
    through the path penalties.
    """
    return _neutralize_kernel(costs.costs, np.int64(costs.max_cost))


def _run_path(costs: np.ndarray, direction, p1: int, p2: int, out: np.ndarray) -> None:
    dx, dy = direction
    if dy == 0:
        _aggregate_rows(costs, dx, np.int32(p1), np.int32(p2), out)
    else:
        _aggregate_cols(costs, dx, dy, np.int32(p1), np.int32(p2), out)


def aggregate_path(costs: CostVolume, direction: tuple[int, int], params: SgmParams) -> np.ndarray:
    """Path costs ``L_r`` for a single direction ``(dx, dy)``, as an int32 volume."""
    if tuple(direction) not in PATHS_8:
        raise ValidationError(f"unsupported path direction {direction}")
    out = np.zeros(costs.costs.shape, dtype=np.int32)
    _run_path(neutral_costs(costs), direction, params.p1, params.p2, out)
    return out


def aggregate(costs: CostVolume, params: SgmParams = SgmParams()) -> AggregatedVolume:
    """Sum of the scanline dynamic programs over ``params.directions``.

    Sentinel entries carry no evidence (see ``neutral_costs``). Each path
    subtracts its running minimum, so path values stay below
    ``max_cost + p2 + max_cost``; the summed volume is int32.
    """
    raw = neutral_costs(costs)
    out = np.zeros(raw.shape, dtype=np.int32)
    for direction in params.directions:
        _run_path(raw, direction, params.p1, params.p2, out)
    return AggregatedVolume(out, costs.left_defined, costs.right_defined)


@numba.njit(parallel=True, cache=True)
def _wta_kernel(agg, defined, ratio, out, valid):
    h, w, n = agg.shape
    for y in numba.prange(h):
        for x in range(w):
            best = 0
            for d in range(1, n):
                if agg[y, x, d] < agg[y, x, best]:
                    best = d
            out[y, x] = best
            ok = defined[y, x]
            if ok and ratio > 0.0:
                c_best = agg[y, x, best]
                other = np.int64(2**62)
                for d in range(n):
                    if (d < best - 1 or d > best + 1) and agg[y, x, d] < other:
                        other = agg[y, x, d]
                if other != np.int64(2**62) and not other > (1.0 + ratio) * c_best:
                    ok = False
            valid[y, x] = ok


def wta_disparity(agg: AggregatedVolume, params: SgmParams = SgmParams()) -> DisparityMap:
    """Per-pixel argmin over disparity (lowest index on ties) with a uniqueness test.

    With ``uniqueness_ratio > 0`` a pixel survives only if the best cost outside
    ``d* - 1 .. d* + 1`` exceeds ``(1 + ratio) * best``; ``ratio == 0`` disables
    the test.
    """
    h, w = agg.shape
    idx = np.empty((h, w), dtype=np.int64)
    valid = np.empty((h, w), dtype=bool)
    _wta_kernel(agg.values, agg.left_defined, float(params.uniqueness_ratio), idx, valid)
    values = idx.astype(np.float64)
    return DisparityMap(values, valid, d_max=agg.d_max)


# Strictly inside (-0.5, 0.5) even after adding to disparities up to ~1e6.
_MAX_OFFSET = 0.5 - 1e-9


def parabola_offset(c_minus: float, c0: float, c_plus: float) -> float:
    """Vertex offset of the parabola through three equally spaced costs.

    Returns 0 for flat or inverted parabolas.
    """
    denom = c_minus - 2.0 * c0 + c_plus
    if denom <= 0:
        return 0.0
    off = (c_minus - c_plus) / (2.0 * denom)
    return min(max(off, -_MAX_OFFSET), _MAX_OFFSET)


@numba.njit(parallel=True, cache=True)
def _subpixel_kernel(agg, disp, valid, max_off, out):
    h, w, n = agg.shape
    for y in numba.prange(h):
        for x in range(w):
            v = disp[y, x]
            out[y, x] = v
            if not valid[y, x]:
                continue
            d = int(v)
            if d <= 0 or d >= n - 1:
                continue
            cm = float(agg[y, x, d - 1])
            c0 = float(agg[y, x, d])
            cp = float(agg[y, x, d + 1])
            denom = cm - 2.0 * c0 + cp
            if denom <= 0.0:
                continue
            off = (cm - cp) / (2.0 * denom)
            if off > max_off:
                off = max_off
            elif off < -max_off:
                off = -max_off
            out[y, x] = d + off


def subpixel_refine(agg: AggregatedVolume, d: DisparityMap) -> DisparityMap:
    """Parabola fit around each integer disparity; boundary disparities stay integer."""
    if d.shape != agg.shape:
        raise ShapeMismatchError("disparity vs volume", d.shape, agg.shape)
    vals = d.values
    if np.any(vals[d.mask] != np.round(vals[d.mask])):
        raise ValidationError("subpixel_refine expects integer disparities")
    out = np.empty(d.shape, dtype=np.float64)
    _subpixel_kernel(agg.values, np.where(d.mask, vals, 0.0), d.mask, _MAX_OFFSET, out)
    return DisparityMap(out, d.mask, d_max=agg.d_max)


@numba.njit(parallel=True, cache=True)
def _right_kernel(agg, ldef, rdef, out, valid):
    h, w, n = agg.shape
    for y in numba.prange(h):
        for x in range(w):
            best = -1
            best_cost = np.int64(0)
            if rdef[y, x]:
                for d in range(n):
                    xl = x + d
                    if xl >= w:
                        break
                    if not ldef[y, xl]:
                        continue
                    c = np.int64(agg[y, xl, d])
                    if best < 0 or c < best_cost:
                        best = d
                        best_cost = c
            out[y, x] = best
            valid[y, x] = best >= 0


def right_disparity_from_volume(agg: AggregatedVolume) -> DisparityMap:
    """Right-view disparity ``argmin_d agg[y, x + d, d]`` (lowest d on ties).

    Only candidates whose left pixel and right pixel both carry a census
    descriptor compete; pixels with no candidate are invalid.
    """
    h, w = agg.shape
    idx = np.empty((h, w), dtype=np.int64)
    valid = np.empty((h, w), dtype=bool)
    _right_kernel(agg.values, agg.left_defined, agg.right_defined, idx, valid)
    values = np.where(valid, idx, INVALID).astype(np.float64)
    return DisparityMap(values, valid, d_max=agg.d_max)
