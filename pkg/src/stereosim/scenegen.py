"""Procedural stereo rendering against analytic planes and spheres.

Camera frames follow the usual computer-vision convention: x right, y down,
z forward. Poses are world-from-camera (or world-from-object) rigid
transforms. Depth is the optical-axis z of the nearest hit, never ray length.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.spatial.transform import Rotation, Slerp

from .core import (
    INVALID,
    DepthMap,
    DisparityMap,
    ImageGray,
    ImageRGB,
    StereoRig,
    ValidationError,
    to_grayscale,
)
from .refine import MatchConfig, match_stereo

_T_MIN = 1e-9


class RenderMode(str, enum.Enum):
    IR = "ir"
    RGB = "rgb"


@dataclass(frozen=True, eq=False)
class RigidTransform:
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        r = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.array(self.translation, dtype=np.float64).reshape(3)
        if not np.allclose(r.T @ r, np.eye(3), atol=1e-6) or not abs(np.linalg.det(r) - 1.0) < 1e-6:
            raise ValidationError("rotation must be orthonormal with det +1")
        if not np.all(np.isfinite(t)):
            raise ValidationError("translation must be finite")
        r.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def from_euler(cls, translation=(0.0, 0.0, 0.0), rotation_deg=(0.0, 0.0, 0.0)) -> "RigidTransform":
        """Extrinsic x-y-z Euler angles in degrees."""
        return cls(Rotation.from_euler("xyz", rotation_deg, degrees=True).as_matrix(), translation)

    def apply(self, points: np.ndarray) -> np.ndarray:
        return points @ self.rotation.T + self.translation

    def apply_vector(self, v: np.ndarray) -> np.ndarray:
        return v @ self.rotation.T

    def inverse(self) -> "RigidTransform":
        return RigidTransform(self.rotation.T, -self.rotation.T @ self.translation)

    def __matmul__(self, other: "RigidTransform") -> "RigidTransform":
        return RigidTransform(self.rotation @ other.rotation, self.rotation @ other.translation + self.translation)

    def __eq__(self, other):
        if not isinstance(other, RigidTransform):
            return NotImplemented
        return np.array_equal(self.rotation, other.rotation) and np.array_equal(self.translation, other.translation)

    __hash__ = None


IDENTITY = RigidTransform()


# ----------------------------------------------------------------------------
# Textures


@dataclass(frozen=True)
class Texture:
    """Solid (3-D) texture evaluated on object-local coordinates.

    ``flat`` uses ``albedo``; ``checker`` alternates ``albedo +- contrast / 2``
    on cubes of side ``scale``; ``noise`` is smooth value noise of lattice
    spacing ``scale`` meters spanning ``albedo +- contrast / 2``.
    """

    kind: str = "noise"
    albedo: float = 0.5
    contrast: float = 0.8
    scale: float = 0.01
    seed: int = 0
    color: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        if self.kind not in ("flat", "checker", "noise"):
            raise ValidationError(f"unknown texture kind {self.kind!r}")
        if not 0 <= self.albedo <= 1:
            raise ValidationError(f"albedo must be in [0, 1], got {self.albedo}")
        if not 0 <= self.contrast <= 1:
            raise ValidationError(f"contrast must be in [0, 1], got {self.contrast}")
        if not self.scale > 0:
            raise ValidationError(f"texture scale must be > 0, got {self.scale}")
        object.__setattr__(self, "color", tuple(float(c) for c in self.color))
        if len(self.color) != 3 or not all(0 <= c <= 1 for c in self.color):
            raise ValidationError(f"color must be three values in [0, 1], got {self.color}")

    @classmethod
    def flat(cls, albedo: float, color=(1.0, 1.0, 1.0)) -> "Texture":
        return cls("flat", albedo, 0.0, 1.0, 0, color)

    def value(self, local: np.ndarray) -> np.ndarray:
        """Scalar albedo at (N, 3) local points."""
        if self.kind == "flat":
            return np.full(local.shape[0], self.albedo)
        q = local / self.scale
        if self.kind == "checker":
            parity = np.floor(q).astype(np.int64).sum(axis=1) & 1
            pattern = parity.astype(np.float64)
        else:
            pattern = (2.0 * _value_noise(q, self.seed) + _value_noise(2.0 * q, self.seed + 1)) / 3.0
        return np.clip(self.albedo + self.contrast * (pattern - 0.5), 0.0, 1.0)

    def rgb(self, local: np.ndarray) -> np.ndarray:
        return self.value(local)[:, None] * np.asarray(self.color)


_M1 = np.uint64(0x9E3779B97F4A7C15)
_M2 = np.uint64(0xBF58476D1CE4E5B9)
_M3 = np.uint64(0x94D049BB133111EB)


def _hash_uniform(ix, iy, iz, seed: int) -> np.ndarray:
    """Deterministic uniform [0, 1) per integer lattice point (splitmix64 mixing)."""
    with np.errstate(over="ignore"):
        h = (
            ix.astype(np.uint64) * np.uint64(0x8DA6B343)
            + iy.astype(np.uint64) * np.uint64(0xD8163841)
            + iz.astype(np.uint64) * np.uint64(0xCB1AB31F)
            + np.uint64(seed & 0xFFFFFFFF) * _M1
        )
        h = h + _M1
        h = (h ^ (h >> np.uint64(30))) * _M2
        h = (h ^ (h >> np.uint64(27))) * _M3
        h = h ^ (h >> np.uint64(31))
    return (h >> np.uint64(11)).astype(np.float64) / float(1 << 53)


def _value_noise(q: np.ndarray, seed: int) -> np.ndarray:
    base = np.floor(q)
    f = q - base
    f = f * f * (3.0 - 2.0 * f)
    i = base.astype(np.int64)
    out = np.zeros(q.shape[0])
    for cx in (0, 1):
        wx = f[:, 0] if cx else 1.0 - f[:, 0]
        for cy in (0, 1):
            wy = f[:, 1] if cy else 1.0 - f[:, 1]
            for cz in (0, 1):
                wz = f[:, 2] if cz else 1.0 - f[:, 2]
                out += wx * wy * wz * _hash_uniform(i[:, 0] + cx, i[:, 1] + cy, i[:, 2] + cz, seed)
    return out


# ----------------------------------------------------------------------------
# Scene description


def _vec3(v, name) -> np.ndarray:
    a = np.array(v, dtype=np.float64).reshape(-1)
    if a.shape != (3,) or not np.all(np.isfinite(a)):
        raise ValidationError(f"{name} must be a finite 3-vector, got {v}")
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Plane:
    """Square patch of half-size ``extent`` (inf for unbounded) around ``point``."""

    point: np.ndarray
    normal: np.ndarray
    extent: float = math.inf
    texture: Texture = field(default_factory=Texture)
    pose: RigidTransform = IDENTITY

    def __post_init__(self):
        object.__setattr__(self, "point", _vec3(self.point, "plane point"))
        n = _vec3(self.normal, "plane normal")
        norm = np.linalg.norm(n)
        if norm == 0:
            raise ValidationError("plane normal must be non-zero")
        n = n / norm
        n.setflags(write=False)
        object.__setattr__(self, "normal", n)
        if not self.extent > 0:
            raise ValidationError(f"plane extent must be > 0, got {self.extent}")

    def axes(self) -> tuple[np.ndarray, np.ndarray]:
        n = self.normal
        a = np.array([0.0, 1.0, 0.0]) if abs(n[1]) < 0.9 else np.array([1.0, 0.0, 0.0])
        u = np.cross(a, n)
        u /= np.linalg.norm(u)
        return u, np.cross(n, u)


@dataclass(frozen=True, eq=False)
class Sphere:
    center: np.ndarray
    radius: float
    texture: Texture = field(default_factory=Texture)
    pose: RigidTransform = IDENTITY

    def __post_init__(self):
        object.__setattr__(self, "center", _vec3(self.center, "sphere center"))
        if not self.radius > 0:
            raise ValidationError(f"sphere radius must be > 0, got {self.radius}")


@dataclass(frozen=True)
class Background:
    """Unbounded world plane ``z = depth`` facing the world origin."""

    depth: float = 5.0
    texture: Texture = field(default_factory=Texture)

    def __post_init__(self):
        if not self.depth > 0:
            raise ValidationError(f"background depth must be > 0, got {self.depth}")

    def as_plane(self) -> Plane:
        return Plane((0.0, 0.0, self.depth), (0.0, 0.0, -1.0), math.inf, self.texture)


@dataclass(frozen=True)
class Illumination:
    ambient: float = 0.7
    headlight: float = 0.3
    ir_ambient: float = 0.05
    ir_intensity_scale: float = 0.3

    def __post_init__(self):
        for name in ("ambient", "headlight", "ir_ambient", "ir_intensity_scale"):
            v = getattr(self, name)
            if not 0 <= v <= 1:
                raise ValidationError(f"illumination.{name} must be in [0, 1], got {v}")


@dataclass(frozen=True)
class SceneSpec:
    objects: tuple = ()
    background: Background | None = None
    illumination: Illumination = field(default_factory=Illumination)

    def __post_init__(self):
        object.__setattr__(self, "objects", tuple(self.objects))
        for i, obj in enumerate(self.objects):
            if not isinstance(obj, (Plane, Sphere)):
                raise ValidationError(f"objects[{i}] is not a Plane or Sphere")
        if not self.objects and self.background is None:
            raise ValidationError("scene needs at least one object or a background")

    def with_object_poses(self, poses: dict[int, RigidTransform]) -> "SceneSpec":
        """Scene state with ``poses[i]`` applied on top of each object's own pose."""
        objs = list(self.objects)
        for i, p in poses.items():
            if not 0 <= i < len(objs):
                raise ValidationError(f"pose for unknown object index {i}")
            objs[i] = replace(objs[i], pose=p @ objs[i].pose)
        return replace(self, objects=tuple(objs))

    def scaled(self, factor: float) -> "SceneSpec":
        """Scene with all geometry scaled about the world origin (textures scale too)."""
        def tex(t: Texture) -> Texture:
            return replace(t, scale=t.scale * factor)

        def pose(p: RigidTransform) -> RigidTransform:
            return RigidTransform(p.rotation, p.translation * factor)

        objs = []
        for o in self.objects:
            if isinstance(o, Plane):
                objs.append(replace(o, point=o.point * factor, extent=o.extent * factor, texture=tex(o.texture), pose=pose(o.pose)))
            else:
                objs.append(replace(o, center=o.center * factor, radius=o.radius * factor, texture=tex(o.texture), pose=pose(o.pose)))
        bg = None if self.background is None else replace(
            self.background, depth=self.background.depth * factor, texture=tex(self.background.texture)
        )
        return replace(self, objects=tuple(objs), background=bg)


@dataclass(frozen=True, eq=False)
class Camera:
    """One eye of a stereo rig; ``pose`` is world-from-left-camera."""

    rig: StereoRig
    pose: RigidTransform = IDENTITY
    side: str = "left"

    def __post_init__(self):
        if self.side not in ("left", "right"):
            raise ValidationError(f"camera side must be 'left' or 'right', got {self.side!r}")

    def _offset(self, x: float) -> np.ndarray:
        return self.pose.translation + self.pose.rotation[:, 0] * x

    @property
    def center(self) -> np.ndarray:
        return self._offset(self.rig.baseline_m if self.side == "right" else 0.0)

    @property
    def projector_origin(self) -> np.ndarray:
        return self._offset(0.5 * self.rig.baseline_m)

    @property
    def forward(self) -> np.ndarray:
        return self.pose.rotation[:, 2]

    def other(self) -> "Camera":
        return replace(self, side="right" if self.side == "left" else "left")

    def pixel_rays(self) -> np.ndarray:
        """World ray directions (H*W, 3) with unit optical-axis component."""
        w, h = self.rig.image_size
        cx, cy = self.rig.principal_point
        f = self.rig.focal_px
        u, v = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
        d = np.stack([(u.ravel() - cx) / f, (v.ravel() - cy) / f, np.ones(u.size)], axis=1)
        return self.pose.apply_vector(d)

    def project(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """World points -> (u, v, z) in this camera."""
        p = (points - self.center) @ self.pose.rotation
        z = p[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            u = self.rig.focal_px * p[:, 0] / z + self.rig.principal_point[0]
            v = self.rig.focal_px * p[:, 1] / z + self.rig.principal_point[1]
        return u, v, z


# ----------------------------------------------------------------------------
# Ray casting


@dataclass
class _Hits:
    t: np.ndarray  # ray parameter; equals optical-axis depth for camera rays
    index: np.ndarray  # primitive index, -1 on miss
    point: np.ndarray
    normal: np.ndarray
    local: np.ndarray


def _primitives(scene: SceneSpec) -> list:
    prims = list(scene.objects)
    if scene.background is not None:
        prims.append(scene.background.as_plane())
    return prims


def _intersect(prim, origin: np.ndarray, dirs: np.ndarray):
    """Ray parameter (inf on miss), world normal and local hit point."""
    inv = prim.pose.inverse()
    o = inv.apply(origin[None, :])[0]
    d = inv.apply_vector(dirs)
    if isinstance(prim, Plane):
        n = prim.normal
        denom = d @ n
        with np.errstate(divide="ignore", invalid="ignore"):
            t = ((prim.point - o) @ n) / denom
        t = np.where((np.abs(denom) > 1e-12) & (t > _T_MIN), t, np.inf)
        local = o + t[:, None] * d if np.isfinite(prim.extent) else None
        if local is not None:
            ua, va = prim.axes()
            rel = np.where(np.isfinite(t)[:, None], local - prim.point, 0.0)
            inside = (np.abs(rel @ ua) <= prim.extent) & (np.abs(rel @ va) <= prim.extent)
            t = np.where(inside, t, np.inf)
        normal_local = np.broadcast_to(n, d.shape)
    else:
        oc = o - prim.center
        a = np.einsum("ij,ij->i", d, d)
        b = 2.0 * (d @ oc)
        c = oc @ oc - prim.radius**2
        disc = b * b - 4.0 * a * c
        sq = np.sqrt(np.maximum(disc, 0.0))
        t0 = (-b - sq) / (2.0 * a)
        t1 = (-b + sq) / (2.0 * a)
        t = np.where(t0 > _T_MIN, t0, np.where(t1 > _T_MIN, t1, np.inf))
        t = np.where(disc >= 0, t, np.inf)
        normal_local = None
    return t, normal_local, o, d


def _cast(scene: SceneSpec, origin: np.ndarray, dirs: np.ndarray) -> _Hits:
    n = dirs.shape[0]
    best_t = np.full(n, np.inf)
    best_i = np.full(n, -1, dtype=np.int64)
    point = np.zeros((n, 3))
    normal = np.zeros((n, 3))
    local = np.zeros((n, 3))
    prims = _primitives(scene)
    for i, prim in enumerate(prims):
        t, nl, o, d = _intersect(prim, origin, dirs)
        closer = t < best_t
        if not closer.any():
            continue
        best_t[closer] = t[closer]
        best_i[closer] = i
        lp = o + t[closer, None] * d[closer]
        local[closer] = lp
        if nl is None:
            nl = (lp - prim.center) / prim.radius
        else:
            nl = nl[closer]
        normal[closer] = prim.pose.apply_vector(nl)
    hit = best_i >= 0
    point[hit] = origin + best_t[hit, None] * dirs[hit]
    return _Hits(best_t, best_i, point, normal, local)


def _shade_rgb(scene: SceneSpec, hits: _Hits, forward: np.ndarray) -> np.ndarray:
    prims = _primitives(scene)
    n = hits.t.shape[0]
    albedo = np.zeros((n, 3))
    for i, prim in enumerate(prims):
        sel = hits.index == i
        if sel.any():
            albedo[sel] = prim.texture.rgb(hits.local[sel])
    ill = scene.illumination
    lambert = np.abs(hits.normal @ forward)
    return np.clip(albedo * (ill.ambient + ill.headlight * lambert)[:, None], 0.0, 1.0)


# ----------------------------------------------------------------------------
# IR projector


@dataclass(frozen=True)
class IrProjectorSpec:
    """Pseudo-random dot projector at the midpoint between the two cameras.

    ``intensity`` is the splat peak for a dot hitting geometry 1 m away;
    amplitude falls off with the inverse square of the dot's travel distance.
    """

    dot_density: float = 40000.0
    seed: int = 0
    intensity: float = 0.15
    splat_sigma_px: float = 0.5
    fov_margin: float = 1.1

    def __post_init__(self):
        if not self.dot_density > 0:
            raise ValidationError(f"dot_density must be > 0, got {self.dot_density}")
        if not 0 <= self.intensity <= 1:
            raise ValidationError(f"projector intensity must be in [0, 1], got {self.intensity}")
        if not self.splat_sigma_px > 0:
            raise ValidationError("splat_sigma_px must be > 0")

    def amplitude(self, distance_m: np.ndarray) -> np.ndarray:
        return self.intensity / np.square(distance_m)


def _frustum_half_angles(rig: StereoRig, margin: float) -> tuple[float, float]:
    w, h = rig.image_size
    tx = margin * 0.5 * w / rig.focal_px
    ty = margin * 0.5 * h / rig.focal_px
    return tx, ty


def dot_directions(projector: IrProjectorSpec, rig: StereoRig) -> np.ndarray:
    """Unit dot directions in the projector frame, uniform per steradian."""
    tx, ty = _frustum_half_angles(rig, projector.fov_margin)
    solid_angle = 4.0 * math.asin(math.sin(math.atan(tx)) * math.sin(math.atan(ty)))
    count = int(round(projector.dot_density * solid_angle))
    cos_min = 1.0 / math.sqrt(1.0 + tx * tx + ty * ty)
    rng = np.random.default_rng(projector.seed)
    out = []
    have = 0
    while have < count:
        m = 2 * (count - have) + 64
        cz = rng.uniform(cos_min, 1.0, m)
        phi = rng.uniform(0.0, 2.0 * math.pi, m)
        sz = np.sqrt(1.0 - cz * cz)
        d = np.stack([sz * np.cos(phi), sz * np.sin(phi), cz], axis=1)
        ok = (np.abs(d[:, 0] / d[:, 2]) <= tx) & (np.abs(d[:, 1] / d[:, 2]) <= ty)
        d = d[ok]
        out.append(d)
        have += len(d)
    return np.concatenate(out)[:count]


def trace_dots(scene: SceneSpec, camera: Camera, projector: IrProjectorSpec) -> tuple[np.ndarray, np.ndarray]:
    """World positions and amplitudes of the dots that land on geometry."""
    origin = camera.projector_origin
    dirs = camera.pose.apply_vector(dot_directions(projector, camera.rig))
    hits = _cast(scene, origin, dirs)
    ok = hits.index >= 0
    dist = hits.t[ok]  # unit directions: t is travel distance
    return hits.point[ok], projector.amplitude(dist)


def project_ir_pattern(
    scene: SceneSpec,
    camera: Camera,
    projector: IrProjectorSpec,
    zbuffer: np.ndarray | None = None,
) -> np.ndarray:
    """Additive (H, W) intensity layer of the dots visible from ``camera``.

    Both eyes see the same world-space dots. Each dot is a Gaussian splat
    whose discrete weights are normalized to total ``amplitude * 2 pi sigma^2``.
    """
    h, w = camera.rig.shape
    points, amp = trace_dots(scene, camera, projector)
    if zbuffer is None:
        zbuffer = _depth_buffer(scene, camera)
    u, v, z = camera.project(points)
    ui = np.floor(u + 0.5).astype(np.int64, copy=False) if u.size else np.zeros(0, np.int64)
    vi = np.floor(v + 0.5).astype(np.int64, copy=False) if v.size else np.zeros(0, np.int64)
    inside = (z > 0) & (ui >= 0) & (ui < w) & (vi >= 0) & (vi < h)
    vis = np.zeros_like(inside)
    zb = zbuffer[vi[inside], ui[inside]]
    vis[inside] = z[inside] <= zb * (1.0 + 1e-3) + 1e-3
    u, v, ui, vi, amp = u[vis], v[vis], ui[vis], vi[vis], amp[vis]

    sigma = projector.splat_sigma_px
    r = max(1, int(math.ceil(3.0 * sigma)))
    offs = np.arange(-r, r + 1)
    ox, oy = np.meshgrid(offs, offs)
    ox, oy = ox.ravel(), oy.ravel()
    px = ui[:, None] + ox
    py = vi[:, None] + oy
    g = np.exp(-((px - u[:, None]) ** 2 + (py - v[:, None]) ** 2) / (2.0 * sigma * sigma))
    g *= (2.0 * math.pi * sigma * sigma / g.sum(axis=1))[:, None]
    vals = g * amp[:, None]
    ok = (px >= 0) & (px < w) & (py >= 0) & (py < h)
    layer = np.zeros(h * w)
    np.add.at(layer, py[ok] * w + px[ok], vals[ok])
    return layer.reshape(h, w)


# ----------------------------------------------------------------------------
# Rendering


def _depth_buffer(scene: SceneSpec, camera: Camera) -> np.ndarray:
    hits = _cast(scene, camera.center, camera.pixel_rays())
    return hits.t.reshape(camera.rig.shape)


def render_gt_depth(scene: SceneSpec, camera: Camera) -> DepthMap:
    z = _depth_buffer(scene, camera)
    return DepthMap(z, np.isfinite(z))


def render_view(
    scene: SceneSpec,
    camera: Camera,
    mode: RenderMode,
    projector: IrProjectorSpec | None = None,
) -> ImageGray | ImageRGB:
    """Shade one eye. RGB: albedo x (ambient + headlight). IR: dimmed gray + ambient + dots."""
    mode = RenderMode(mode)
    h, w = camera.rig.shape
    hits = _cast(scene, camera.center, camera.pixel_rays())
    rgb = _shade_rgb(scene, hits, camera.forward).reshape(h, w, 3)
    if mode is RenderMode.RGB:
        return ImageRGB(rgb)
    ill = scene.illumination
    gray = to_grayscale(ImageRGB(rgb)).data * ill.ir_intensity_scale + ill.ir_ambient
    if projector is not None:
        gray = gray + project_ir_pattern(scene, camera, projector, hits.t.reshape(h, w))
    return ImageGray(np.clip(gray, 0.0, 1.0))


def select_render_mode(gt_depth: DepthMap, threshold_m: float = 2.0, statistic: str = "median") -> RenderMode:
    """IR when the typical valid depth is below ``threshold_m``, RGB otherwise."""
    v = gt_depth.values[gt_depth.mask]
    if v.size == 0:
        raise ValidationError("cannot select render mode: no valid depth pixels")
    if statistic == "median":
        s = float(np.median(v))
    elif statistic == "mean":
        s = float(np.mean(v))
    else:
        raise ValidationError(f"unknown statistic {statistic!r}")
    return RenderMode.IR if s < threshold_m else RenderMode.RGB


@dataclass(frozen=True, eq=False)
class SensorModel:
    """Additive Gaussian read noise followed by 8-bit quantization."""

    noise_std: float = 0.01
    quantize: bool = True

    def __post_init__(self):
        if not self.noise_std >= 0:
            raise ValidationError(f"noise_std must be >= 0, got {self.noise_std}")

    def apply(self, data: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        if self.noise_std > 0:
            data = data + rng.normal(0.0, self.noise_std, data.shape)
        data = np.clip(data, 0.0, 1.0)
        if self.quantize:
            data = np.round(data * 255.0) / 255.0
        return data


IDEAL_SENSOR = SensorModel(0.0, False)


@dataclass(frozen=True, eq=False)
class StereoFrame:
    left: ImageGray | ImageRGB
    right: ImageGray | ImageRGB
    gt_depth: DepthMap
    mode: RenderMode
    frame_index: int = 0

    def gray_pair(self) -> tuple[ImageGray, ImageGray]:
        if self.mode is RenderMode.RGB:
            return to_grayscale(self.left), to_grayscale(self.right)
        return self.left, self.right


def render_stereo_frame(
    scene: SceneSpec,
    rig: StereoRig,
    pose: RigidTransform = IDENTITY,
    projector: IrProjectorSpec | None = IrProjectorSpec(),
    threshold_m: float = 2.0,
    *,
    mode: RenderMode | str | None = None,
    sensor: SensorModel = SensorModel(),
    seed: int = 0,
    frame_index: int = 0,
) -> StereoFrame:
    """Render ground truth, pick IR/RGB by range (unless ``mode`` is forced), render both eyes.

    The projector only contributes in IR mode. Sensor noise is seeded from
    ``(seed, frame_index, eye)``.
    """
    cam = Camera(rig, pose, "left")
    gt = render_gt_depth(scene, cam)
    if mode is None:
        mode = select_render_mode(gt, threshold_m)
    mode = RenderMode(mode)
    views = []
    for eye, c in enumerate((cam, cam.other())):
        img = render_view(scene, c, mode, projector if mode is RenderMode.IR else None)
        rng = np.random.default_rng([seed, frame_index, eye])
        data = sensor.apply(img.data, rng)
        views.append(type(img)(data))
    return StereoFrame(views[0], views[1], gt, mode, frame_index)


# ----------------------------------------------------------------------------
# Sequences


@dataclass(frozen=True, eq=False)
class Keyframe:
    frame: int
    transform: RigidTransform


def _pose_at(track: Sequence[Keyframe], t: int) -> RigidTransform:
    if not track:
        return IDENTITY
    if t <= track[0].frame:
        return track[0].transform
    if t >= track[-1].frame:
        return track[-1].transform
    for a, b in zip(track, track[1:]):
        if a.frame <= t <= b.frame:
            s = (t - a.frame) / (b.frame - a.frame)
            rots = Rotation.from_matrix(np.stack([a.transform.rotation, b.transform.rotation]))
            rot = Slerp([0.0, 1.0], rots)([s]).as_matrix()[0]
            trans = (1.0 - s) * a.transform.translation + s * b.transform.translation
            return RigidTransform(rot, trans)
    raise AssertionError("unreachable")


@dataclass(frozen=True, eq=False)
class SequenceSpec:
    """Scripted motion: keyframed camera and object poses, interpolated per frame.

    Translations interpolate linearly, rotations by slerp; poses hold before the
    first and after the last keyframe.
    """

    frame_count: int = 1
    camera_track: tuple[Keyframe, ...] = ()
    object_tracks: dict[int, tuple[Keyframe, ...]] = field(default_factory=dict)

    def __post_init__(self):
        if self.frame_count < 1:
            raise ValidationError(f"frame_count must be >= 1, got {self.frame_count}")
        tracks = {"camera": tuple(self.camera_track)}
        tracks.update({f"object {k}": tuple(v) for k, v in self.object_tracks.items()})
        for name, tr in tracks.items():
            frames = [k.frame for k in tr]
            if frames != sorted(set(frames)):
                raise ValidationError(f"{name} keyframes must have strictly increasing frames")
        object.__setattr__(self, "camera_track", tracks["camera"])
        object.__setattr__(self, "object_tracks", {int(k): tuple(v) for k, v in self.object_tracks.items()})

    def camera_pose(self, t: int, base: RigidTransform = IDENTITY) -> RigidTransform:
        return _pose_at(self.camera_track, t) if self.camera_track else base

    def scene_at(self, scene: SceneSpec, t: int) -> SceneSpec:
        if not self.object_tracks:
            return scene
        return scene.with_object_poses({i: _pose_at(tr, t) for i, tr in self.object_tracks.items()})


@dataclass(frozen=True, eq=False)
class SimulatedFrame:
    frame: StereoFrame
    disparity: DisparityMap
    depth: DepthMap
    timings: dict = field(default_factory=dict)


def simulate_sequence(
    scene: SceneSpec,
    seq: SequenceSpec,
    rig: StereoRig,
    projector: IrProjectorSpec | None = IrProjectorSpec(),
    cfg: MatchConfig = MatchConfig(),
    *,
    threshold_m: float = 2.0,
    mode: RenderMode | str | None = None,
    sensor: SensorModel = SensorModel(),
    seed: int = 0,
    base_pose: RigidTransform = IDENTITY,
) -> list[SimulatedFrame]:
    """Render and match every frame of ``seq``."""
    out = []
    for t in range(seq.frame_count):
        frame = render_stereo_frame(
            seq.scene_at(scene, t),
            rig,
            seq.camera_pose(t, base_pose),
            projector,
            threshold_m,
            mode=mode,
            sensor=sensor,
            seed=seed,
            frame_index=t,
        )
        timings: dict[str, float] = {}
        disp, depth = match_stereo(*frame.gray_pair(), rig, cfg, timings)
        out.append(SimulatedFrame(frame, disp, depth, timings))
    return out
