"""Depth and 6DoF pose evaluation, plus the restoration loss terms."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree

from .core import INVALID, DepthMap, ShapeMismatchError, StereoRig, ValidationError

DELTA_THRESHOLDS = (1.05, 1.10, 1.25)


@dataclass(frozen=True)
class DepthMetricsReport:
    rmse: float
    rel: float
    mae: float
    delta_105: float
    delta_110: float
    delta_125: float
    n_evaluated: int

    @property
    def delta_ratios(self) -> dict[float, float]:
        return {1.05: self.delta_105, 1.10: self.delta_110, 1.25: self.delta_125}

    def to_dict(self) -> dict:
        return asdict(self)


def resize_nearest(values: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    """Nearest-neighbour resample of a 2-D array to ``size = (h, w)``."""
    h, w = values.shape
    th, tw = size
    ys = np.minimum(((np.arange(th) + 0.5) * h / th).astype(np.int64), h - 1)
    xs = np.minimum(((np.arange(tw) + 0.5) * w / tw).astype(np.int64), w - 1)
    return values[np.ix_(ys, xs)]


def _resize_map(z: DepthMap, size) -> DepthMap:
    return DepthMap(resize_nearest(z.values, size), resize_nearest(z.mask, size))


def depth_metrics(
    pred: DepthMap,
    gt: DepthMap,
    resize_to: tuple[int, int] | None = None,
    delta_convention: str = "lt",
) -> DepthMetricsReport:
    """RMSE, REL, MAE and delta inlier ratios over pixels valid in both maps.

    A pixel is a delta inlier when ``max(pred/gt, gt/pred) < delta``
    (``delta_convention="le"`` uses ``<=``).
    """
    if resize_to is not None:
        pred, gt = _resize_map(pred, resize_to), _resize_map(gt, resize_to)
    if pred.shape != gt.shape:
        raise ShapeMismatchError("prediction vs ground truth", pred.shape, gt.shape)
    m = pred.mask & gt.mask
    n = int(m.sum())
    if n == 0:
        raise ValidationError("no pixels valid in both prediction and ground truth")
    p = pred.values[m].astype(np.float64)
    g = gt.values[m].astype(np.float64)
    diff = p - g
    ratio = np.maximum(p / g, g / p)
    if delta_convention == "lt":
        inlier = [float(np.mean(ratio < t)) for t in DELTA_THRESHOLDS]
    elif delta_convention == "le":
        inlier = [float(np.mean(ratio <= t)) for t in DELTA_THRESHOLDS]
    else:
        raise ValidationError(f"unknown delta convention {delta_convention!r}")
    return DepthMetricsReport(
        rmse=float(np.sqrt(np.mean(diff**2))),
        rel=float(np.mean(np.abs(diff) / g)),
        mae=float(np.mean(np.abs(diff))),
        delta_105=inlier[0],
        delta_110=inlier[1],
        delta_125=inlier[2],
        n_evaluated=n,
    )


def mean_reports(reports: Sequence[DepthMetricsReport]) -> DepthMetricsReport:
    """Average per-image metrics; ``n_evaluated`` is the total pixel count."""
    if not reports:
        raise ValidationError("no reports to average")
    keys = ("rmse", "rel", "mae", "delta_105", "delta_110", "delta_125")
    avg = {k: float(np.mean([getattr(r, k) for r in reports])) for k in keys}
    return DepthMetricsReport(**avg, n_evaluated=int(sum(r.n_evaluated for r in reports)))


# ----------------------------------------------------------------------------
# Normals, gradients, fusion, losses


def backproject(z: DepthMap, rig: StereoRig) -> np.ndarray:
    """(H, W, 3) camera-frame points; invalid pixels are NaN."""
    if z.shape != rig.shape:
        raise ShapeMismatchError("depth vs rig.image_size", z.shape, rig.shape)
    h, w = z.shape
    cx, cy = rig.principal_point
    u, v = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    d = np.where(z.mask, z.values, np.nan)
    return np.stack([(u - cx) * d / rig.focal_px, (v - cy) * d / rig.focal_px, d], axis=-1)


def normals_from_points(points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Unit normals from central-difference tangents of an (H, W, 3) point grid.

    Normals are oriented towards the camera origin (``n . p < 0``). Returns
    ``(normals, mask)``; pixels lacking a finite 4-neighbourhood are invalid.
    """
    h, w, _ = points.shape
    normals = np.full((h, w, 3), np.nan)
    mask = np.zeros((h, w), dtype=bool)
    if h < 3 or w < 3:
        return normals, mask
    tx = points[1:-1, 2:] - points[1:-1, :-2]
    ty = points[2:, 1:-1] - points[:-2, 1:-1]
    n = np.cross(ty, tx)
    norm = np.linalg.norm(n, axis=-1)
    ok = np.isfinite(norm) & (norm > 0) & np.all(np.isfinite(points[1:-1, 1:-1]), axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        n = n / norm[..., None]
    facing = np.einsum("ijk,ijk->ij", n, points[1:-1, 1:-1])
    n = np.where((facing > 0)[..., None], -n, n)
    inner = normals[1:-1, 1:-1]
    inner[ok] = n[ok]
    mask[1:-1, 1:-1] = ok
    return normals, mask


def normals_from_depth(z: DepthMap, rig: StereoRig) -> tuple[np.ndarray, np.ndarray]:
    """Camera-facing unit normals (H, W, 3) and their validity mask."""
    return normals_from_points(backproject(z, rig))


def gradient_from_depth(z: DepthMap) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Central-difference depth gradient in meters per pixel: ``(gx, gy, mask)``."""
    h, w = z.shape
    d = np.where(z.mask, z.values, np.nan).astype(np.float64)
    gx = np.full((h, w), np.nan)
    gy = np.full((h, w), np.nan)
    if w >= 3:
        gx[:, 1:-1] = (d[:, 2:] - d[:, :-2]) / 2.0
    if h >= 3:
        gy[1:-1, :] = (d[2:, :] - d[:-2, :]) / 2.0
    mask = np.isfinite(gx) & np.isfinite(gy) & z.mask
    gx[~mask] = np.nan
    gy[~mask] = np.nan
    return gx, gy, mask


def confidence_fusion(z_sim: DepthMap, z_coarse: DepthMap, conf: np.ndarray) -> DepthMap:
    """Per-pixel blend ``(1 - conf) * z_sim + conf * z_coarse``.

    A pixel needs only the operands its weight actually references.
    """
    conf = np.asarray(conf, dtype=np.float64)
    if not (z_sim.shape == z_coarse.shape == conf.shape):
        raise ShapeMismatchError("fusion operands", z_sim.shape, conf.shape if z_sim.shape == z_coarse.shape else z_coarse.shape)
    if not np.all(np.isfinite(conf)) or conf.min(initial=0) < 0 or conf.max(initial=0) > 1:
        raise ValidationError("confidence must lie in [0, 1]")
    need_sim = conf < 1
    need_coarse = conf > 0
    valid = (~need_sim | z_sim.mask) & (~need_coarse | z_coarse.mask)
    a = np.where(z_sim.mask, z_sim.values, 0.0)
    b = np.where(z_coarse.mask, z_coarse.values, 0.0)
    out = np.where(conf == 0, a, np.where(conf == 1, b, (1.0 - conf) * a + conf * b))
    out = np.where(valid, out, INVALID)
    return DepthMap(out, valid)


@dataclass(frozen=True)
class LossWeights:
    w_c: float = 1.0
    w_n: float = 1.0
    w_g: float = 1.0

    def __post_init__(self):
        for k in ("w_c", "w_n", "w_g"):
            if not getattr(self, k) >= 0:
                raise ValidationError(f"loss weight {k} must be >= 0")


@dataclass(frozen=True)
class LossBreakdown:
    total: float
    depth_f: float
    normal_f: float
    grad_f: float
    depth_c: float
    normal_c: float
    grad_c: float

    def to_dict(self) -> dict:
        return asdict(self)


def _terms(pred: DepthMap, gt: DepthMap, gt_normals, gt_grad, rig: StereoRig) -> tuple[float, float, float]:
    m = pred.mask & gt.mask
    if not m.any():
        raise ValidationError("prediction and ground truth share no valid pixels")
    l_z = float(np.mean(np.abs(pred.values[m] - gt.values[m])))
    pn, pm = normals_from_depth(pred, rig)
    gn, gm = gt_normals
    nm = pm & gm
    l_n = float(np.mean(np.abs(pn[nm] - gn[nm]).sum(axis=-1))) if nm.any() else 0.0
    px, py, pgm = gradient_from_depth(pred)
    gx, gy, ggm = gt_grad
    g = pgm & ggm
    l_g = float(np.mean(np.abs(px[g] - gx[g]) + np.abs(py[g] - gy[g]))) if g.any() else 0.0
    return l_z, l_n, l_g


def restoration_loss(
    pred_c: DepthMap,
    pred_f: DepthMap,
    gt: DepthMap,
    rig: StereoRig,
    weights: LossWeights = LossWeights(),
) -> LossBreakdown:
    """L1 depth/normal/gradient terms for coarse and fine predictions.

    ``total = L_f + w_c * L_c`` where each ``L = L_Z + w_n * L_N + w_g * L_G``.
    The normal term is the per-pixel vector L1 (sum over components).
    """
    if not (pred_c.shape == pred_f.shape == gt.shape):
        raise ShapeMismatchError("loss operands", pred_c.shape, gt.shape)
    gt_normals = normals_from_depth(gt, rig)
    gt_grad = gradient_from_depth(gt)
    zf, nf, gf = _terms(pred_f, gt, gt_normals, gt_grad, rig)
    zc, nc, gc = _terms(pred_c, gt, gt_normals, gt_grad, rig)
    l_f = zf + weights.w_n * nf + weights.w_g * gf
    l_c = zc + weights.w_n * nc + weights.w_g * gc
    return LossBreakdown(l_f + weights.w_c * l_c, zf, nf, gf, zc, nc, gc)


# ----------------------------------------------------------------------------
# Pose metrics


@dataclass(frozen=True, eq=False)
class PoseSample:
    """Ground-truth pose of an object model; ``translation`` in meters."""

    rotation: np.ndarray
    translation: np.ndarray
    model_points: np.ndarray
    diameter: float
    symmetric: bool = False

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        if not np.allclose(r.T @ r, np.eye(3), atol=1e-6) or abs(np.linalg.det(r) - 1) > 1e-6:
            raise ValidationError("rotation must be orthonormal with det +1")
        pts = np.asarray(self.model_points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] < 1:
            raise ValidationError(f"model_points must be (N>=1, 3), got {pts.shape}")
        if not self.diameter > 0:
            raise ValidationError(f"diameter must be > 0, got {self.diameter}")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=np.float64).reshape(3))
        object.__setattr__(self, "model_points", pts)


def _transform(points, r, t):
    return points @ np.asarray(r, dtype=np.float64).T + np.asarray(t, dtype=np.float64).reshape(3)


def add_error(pose_gt: PoseSample, r_est, t_est) -> float:
    """Mean distance between corresponding model points under both poses."""
    a = _transform(pose_gt.model_points, pose_gt.rotation, pose_gt.translation)
    b = _transform(pose_gt.model_points, r_est, t_est)
    return float(np.mean(np.linalg.norm(a - b, axis=1)))


def adds_error(pose_gt: PoseSample, r_est, t_est) -> float:
    """Mean distance from each ground-truth point to the closest estimated point."""
    a = _transform(pose_gt.model_points, pose_gt.rotation, pose_gt.translation)
    b = _transform(pose_gt.model_points, r_est, t_est)
    dist, _ = cKDTree(b).query(a, k=1)
    return float(np.mean(dist))


AUC_MAX_M = 0.10
AUC_STEP_M = 0.001


def accuracy_auc(errors: np.ndarray, max_threshold: float = AUC_MAX_M, step: float = AUC_STEP_M) -> float:
    """Normalized trapezoid area under ``accuracy(th) = mean(err <= th)`` for th in [0, max]."""
    errors = np.asarray(errors, dtype=np.float64)
    if errors.size == 0:
        raise ValidationError("no errors given")
    n = int(round(max_threshold / step))
    th = np.linspace(0.0, max_threshold, n + 1)
    acc = (errors[None, :] <= th[:, None]).mean(axis=1)
    area = float(np.sum((acc[1:] + acc[:-1]) * 0.5 * np.diff(th)))
    return area / max_threshold


def pose_accuracy(
    samples: Sequence[tuple[PoseSample, np.ndarray, np.ndarray]],
    use_adds_for_symmetric: bool = True,
    metric: str = "add",
) -> dict[str, float]:
    """``add_01d`` (error < 10 % of diameter) and AUC over 0-10 cm.

    ``metric="add"`` scores ADD, switching to ADD-S for symmetric objects when
    ``use_adds_for_symmetric``; ``metric="adds"`` scores ADD-S throughout.
    """
    if not samples:
        raise ValidationError("pose_accuracy needs at least one sample")
    errors = []
    for gt, r, t in samples:
        if metric == "adds" or (use_adds_for_symmetric and gt.symmetric):
            errors.append(adds_error(gt, r, t))
        elif metric == "add":
            errors.append(add_error(gt, r, t))
        else:
            raise ValidationError(f"unknown pose metric {metric!r}")
    errors = np.asarray(errors)
    diam = np.array([gt.diameter for gt, _, _ in samples])
    return {"add_01d": float(np.mean(errors < 0.1 * diam)), "auc": accuracy_auc(errors)}


def pose_report(samples, use_adds_for_symmetric: bool = True) -> dict[str, float]:
    add = pose_accuracy(samples, use_adds_for_symmetric, "add")
    adds = pose_accuracy(samples, use_adds_for_symmetric, "adds")
    return {"add_01d": add["add_01d"], "auc_add": add["auc"], "auc_adds": adds["auc"], "n_samples": len(samples)}
