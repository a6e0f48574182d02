"""Center-symmetric census transform and Hamming cost volume."""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from .core import ImageGray, ShapeMismatchError, ValidationError

DEFAULT_WINDOW = (9, 7)


@dataclass(frozen=True, eq=False)
class CensusDescriptorMap:
    """Per-pixel census bit strings.

    Bit ``k`` compares the ``k``-th window pixel (row-major, first half of the
    window) with its mirror through the center. ``defined`` is False within a
    half-window of the image border.
    """

    descriptors: np.ndarray  # (H, W) uint64
    defined: np.ndarray  # (H, W) bool
    window: tuple[int, int]  # (win_w, win_h)

    @property
    def bit_width(self) -> int:
        return census_bit_width(self.window)

    @property
    def height(self) -> int:
        return self.descriptors.shape[0]

    @property
    def width(self) -> int:
        return self.descriptors.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.descriptors.shape


@dataclass(frozen=True, eq=False)
class CostVolume:
    """Raw matching costs, ``costs[y, x, d]`` for ``d`` in ``0..d_max``.

    Entries without a defined match hold ``max_cost`` (one above the largest
    Hamming distance). ``left_defined``/``right_defined`` record which pixels
    had a census descriptor.
    """

    costs: np.ndarray  # (H, W, d_max + 1) uint16
    max_cost: int
    left_defined: np.ndarray | None = None
    right_defined: np.ndarray | None = None

    def __post_init__(self):
        costs = np.ascontiguousarray(self.costs)
        if costs.ndim != 3 or costs.shape[2] < 1:
            raise ValidationError(f"cost volume must be (H, W, D>=1), got {costs.shape}")
        if not np.issubdtype(costs.dtype, np.integer) or (costs.size and costs.min() < 0):
            raise ValidationError("costs must be non-negative integers")
        if costs.dtype != np.uint16:
            if costs.size and costs.max() > np.iinfo(np.uint16).max:
                raise ValidationError("costs must fit in 16 bits")
            costs = costs.astype(np.uint16)
        object.__setattr__(self, "costs", costs)
        hw = costs.shape[:2]
        for name in ("left_defined", "right_defined"):
            m = getattr(self, name)
            m = np.ones(hw, dtype=bool) if m is None else np.asarray(m, dtype=bool)
            if m.shape != hw:
                raise ShapeMismatchError(name, m.shape, hw)
            object.__setattr__(self, name, m)

    @property
    def d_max(self) -> int:
        return self.costs.shape[2] - 1

    @property
    def shape(self) -> tuple[int, int]:
        return self.costs.shape[:2]


def census_bit_width(window: tuple[int, int]) -> int:
    win_w, win_h = window
    return (win_w * win_h - 1) // 2


def _check_window(window) -> tuple[int, int]:
    win_w, win_h = (int(v) for v in window)
    if win_w < 3 or win_h < 3 or win_w % 2 == 0 or win_h % 2 == 0:
        raise ValidationError(f"census window dims must be odd and >= 3, got {window}")
    if census_bit_width((win_w, win_h)) > 64:
        raise ValidationError(f"census window {window} needs more than 64 bits")
    return win_w, win_h


@numba.njit(parallel=True, cache=True)
def _census_kernel(img, win_w, win_h):
    h, w = img.shape
    hw = win_w // 2
    hh = win_h // 2
    n_pairs = (win_w * win_h - 1) // 2
    desc = np.zeros((h, w), dtype=np.uint64)
    for y in numba.prange(hh, h - hh):
        for x in range(hw, w - hw):
            bits = np.uint64(0)
            for k in range(n_pairs):
                dy = k // win_w - hh
                dx = k % win_w - hw
                if img[y + dy, x + dx] < img[y - dy, x - dx]:
                    bits |= np.uint64(1) << np.uint64(k)
            desc[y, x] = bits
    return desc


def census_transform(img: ImageGray, window: tuple[int, int] = DEFAULT_WINDOW) -> CensusDescriptorMap:
    """Compare each pixel pair mirrored through the window center.

    A bit is 1 iff the first pixel of the pair (row-major order) is strictly
    darker than its mirror; ties give 0.
    """
    win_w, win_h = _check_window(window)
    h, w = img.shape
    if win_w > w or win_h > h:
        raise ValidationError(f"census window {window} larger than image {w}x{h}")
    desc = _census_kernel(np.ascontiguousarray(img.data), win_w, win_h)
    defined = np.zeros((h, w), dtype=bool)
    defined[win_h // 2 : h - win_h // 2, win_w // 2 : w - win_w // 2] = True
    return CensusDescriptorMap(desc, defined, (win_w, win_h))


@numba.njit(inline="always")
def _popcount64(v):
    v = v - ((v >> np.uint64(1)) & np.uint64(0x5555555555555555))
    v = (v & np.uint64(0x3333333333333333)) + ((v >> np.uint64(2)) & np.uint64(0x3333333333333333))
    v = (v + (v >> np.uint64(4))) & np.uint64(0x0F0F0F0F0F0F0F0F)
    return (v * np.uint64(0x0101010101010101)) >> np.uint64(56)


@numba.njit(parallel=True, cache=True)
def _cost_kernel(dl, dr, ldef, rdef, n_disp, max_cost):
    h, w = dl.shape
    out = np.empty((h, w, n_disp), dtype=np.uint16)
    for y in numba.prange(h):
        for x in range(w):
            for d in range(n_disp):
                xr = x - d
                if ldef[y, x] and xr >= 0 and rdef[y, xr]:
                    out[y, x, d] = np.uint16(_popcount64(dl[y, x] ^ dr[y, xr]))
                else:
                    out[y, x, d] = max_cost
    return out


def build_cost_volume(left: CensusDescriptorMap, right: CensusDescriptorMap, d_max: int) -> CostVolume:
    """``cost[y, x, d] = hamming(left[y, x], right[y, x - d])``."""
    if left.shape != right.shape:
        raise ShapeMismatchError("left vs right census", left.shape, right.shape)
    if left.window != right.window:
        raise ValidationError(f"census windows differ: {left.window} vs {right.window}")
    d_max = int(d_max)
    if d_max < 0:
        raise ValidationError(f"d_max must be >= 0, got {d_max}")
    max_cost = left.bit_width + 1
    costs = _cost_kernel(left.descriptors, right.descriptors, left.defined, right.defined, d_max + 1, max_cost)
    return CostVolume(costs, max_cost, left.defined.copy(), right.defined.copy())
