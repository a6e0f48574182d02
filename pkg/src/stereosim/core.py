"""Image and geometry containers plus the disparity/depth conversions."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

#: Value stored in map arrays at invalid pixels. The mask stays authoritative.
INVALID = np.inf


class StereoSimError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(StereoSimError, ValueError):
    """Input violates a documented precondition."""


class ShapeMismatchError(ValidationError):
    def __init__(self, what: str, shape_a, shape_b):
        self.shape_a = tuple(shape_a)
        self.shape_b = tuple(shape_b)
        super().__init__(f"{what}: shape {self.shape_a} does not match {self.shape_b}")


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ImageGray:
    """Single channel image, ``data[y, x]`` in [0, 1]."""

    data: np.ndarray

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64)
        if data.ndim != 2:
            raise ValidationError(f"gray image must be 2-D, got shape {data.shape}")
        if not np.all(np.isfinite(data)) or data.min(initial=0.0) < 0.0 or data.max(initial=0.0) > 1.0:
            raise ValidationError("gray image values must be finite and in [0, 1]")
        object.__setattr__(self, "data", _readonly(data))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape


@dataclass(frozen=True, eq=False)
class ImageRGB:
    """Three channel image, ``data[y, x, c]`` in [0, 1]."""

    data: np.ndarray

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64)
        if data.ndim != 3 or data.shape[2] != 3:
            raise ValidationError(f"RGB image must have shape (H, W, 3), got {data.shape}")
        if not np.all(np.isfinite(data)) or data.min(initial=0.0) < 0.0 or data.max(initial=0.0) > 1.0:
            raise ValidationError("RGB image values must be finite and in [0, 1]")
        object.__setattr__(self, "data", _readonly(data))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape[:2]


@dataclass(frozen=True)
class StereoRig:
    """Rectified pinhole stereo pair sharing one focal length.

    The right camera sits ``baseline_m`` along the left camera's +x axis.
    """

    baseline_m: float = 0.055
    focal_px: float = 600.0
    principal_point: tuple[float, float] = (319.5, 239.5)
    image_size: tuple[int, int] = (640, 480)  # (width, height)

    def __post_init__(self):
        object.__setattr__(self, "principal_point", tuple(float(v) for v in self.principal_point))
        object.__setattr__(self, "image_size", tuple(int(v) for v in self.image_size))
        if not self.baseline_m > 0:
            raise ValidationError(f"baseline_m must be > 0, got {self.baseline_m}")
        if not self.focal_px > 0:
            raise ValidationError(f"focal_px must be > 0, got {self.focal_px}")
        w, h = self.image_size
        if w < 1 or h < 1:
            raise ValidationError(f"image_size must be positive, got {self.image_size}")
        px, py = self.principal_point
        if not (0 <= px <= w - 1 and 0 <= py <= h - 1):
            raise ValidationError(f"principal point {self.principal_point} outside image {self.image_size}")

    @classmethod
    def centered(cls, width: int, height: int, baseline_m: float = 0.055, focal_px: float = 600.0) -> "StereoRig":
        return cls(baseline_m, focal_px, ((width - 1) / 2.0, (height - 1) / 2.0), (width, height))

    @property
    def shape(self) -> tuple[int, int]:
        """Array shape (height, width) of images from this rig."""
        return (self.image_size[1], self.image_size[0])

    @property
    def bf(self) -> float:
        return self.baseline_m * self.focal_px


class _MaskedMap:
    """Shared behaviour of float grids with a validity mask."""

    values: np.ndarray
    mask: np.ndarray

    def _normalize(self):
        values = np.array(self.values, copy=True)
        if values.dtype not in (np.float32, np.float64):
            values = values.astype(np.float64)
        if values.ndim != 2:
            raise ValidationError(f"map must be 2-D, got shape {values.shape}")
        if self.mask is None:
            mask = np.isfinite(values)
        else:
            mask = np.array(self.mask, dtype=bool, copy=True)
            if mask.shape != values.shape:
                raise ShapeMismatchError("mask vs values", mask.shape, values.shape)
            mask &= np.isfinite(values)
        values[~mask] = INVALID
        object.__setattr__(self, "values", _readonly(values))
        object.__setattr__(self, "mask", _readonly(mask))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def valid_ratio(self) -> float:
        return float(self.mask.mean()) if self.mask.size else 0.0


@dataclass(frozen=True, eq=False)
class DisparityMap(_MaskedMap):
    """Left-anchored disparity in pixels; invalid pixels hold ``INVALID``.

    Non-finite values are always treated as invalid regardless of ``mask``.
    """

    values: np.ndarray
    mask: np.ndarray | None = None
    d_max: float | None = None

    def __post_init__(self):
        self._normalize()
        v = self.values[self.mask]
        if v.size and v.min() < 0:
            raise ValidationError("valid disparities must be >= 0")
        if self.d_max is not None and v.size and v.max() > self.d_max:
            raise ValidationError(f"valid disparities must be <= d_max={self.d_max}")


@dataclass(frozen=True, eq=False)
class DepthMap(_MaskedMap):
    """Optical-axis depth in meters; invalid pixels hold ``INVALID``."""

    values: np.ndarray
    mask: np.ndarray | None = None

    def __post_init__(self):
        self._normalize()
        v = self.values[self.mask]
        if v.size and v.min() <= 0:
            raise ValidationError("valid depths must be > 0")


@dataclass(frozen=True)
class DepthConversionParams:
    epsilon: float = 1e-6
    max_range_m: float = 20.0

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValidationError(f"epsilon must be > 0, got {self.epsilon}")
        if not self.max_range_m > 0:
            raise ValidationError(f"max_range_m must be > 0, got {self.max_range_m}")


def _check_rig_shape(shape, rig: StereoRig):
    if tuple(shape) != rig.shape:
        raise ShapeMismatchError("map vs rig.image_size", shape, rig.shape)


def disparity_to_depth(
    d: DisparityMap,
    rig: StereoRig,
    params: DepthConversionParams = DepthConversionParams(),
    *,
    epsilon: float | None = None,
) -> DepthMap:
    """Triangulate ``depth = baseline * focal / (disparity + epsilon)``.

    Pixels whose depth exceeds ``params.max_range_m`` become invalid.
    ``epsilon`` overrides ``params.epsilon`` and may be 0 (exact inverse).
    """
    _check_rig_shape(d.shape, rig)
    eps = params.epsilon if epsilon is None else float(epsilon)
    values = np.full(d.shape, INVALID, dtype=np.float64)
    m = d.mask
    with np.errstate(divide="ignore"):
        values[m] = rig.bf / (d.values[m].astype(np.float64) + eps)
    mask = m & np.isfinite(values) & (values <= params.max_range_m)
    return DepthMap(values, mask)


def depth_to_disparity(z: DepthMap, rig: StereoRig) -> DisparityMap:
    _check_rig_shape(z.shape, rig)
    v = z.values[z.mask]
    if v.size and not np.all(v > 0):
        raise ValidationError("valid depths must be > 0 for disparity conversion")
    values = np.full(z.shape, INVALID, dtype=np.float64)
    values[z.mask] = rig.bf / v.astype(np.float64)
    return DisparityMap(values, z.mask)


LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])


def to_grayscale(img: ImageRGB) -> ImageGray:
    gray = img.data @ LUMA_WEIGHTS
    return ImageGray(np.clip(gray, 0.0, 1.0))
