"""File formats and JSON configuration parsing."""

from __future__ import annotations

import json
import math
import os
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np
from PIL import Image

from .core import INVALID, DepthMap, DisparityMap, ImageGray, ImageRGB, StereoRig, StereoSimError, ValidationError
from .census import DEFAULT_WINDOW
from .core import DepthConversionParams
from .refine import MatchConfig, RefineParams
from .scenegen import (
    Background,
    Illumination,
    IrProjectorSpec,
    Keyframe,
    Plane,
    RigidTransform,
    SceneSpec,
    SequenceSpec,
    Sphere,
    Texture,
)
from .sgm import SgmParams


class FormatError(StereoSimError, ValueError):
    """A file does not follow the expected on-disk format."""


class ConfigError(ValidationError):
    """A JSON document violates its schema; ``path`` locates the offending field."""

    def __init__(self, path: str, message: str):
        self.path = path or "$"
        super().__init__(f"{self.path}: {message}")


# ----------------------------------------------------------------------------
# PFM

_PFM_DIMS = re.compile(rb"^\s*(\d+)\s+(\d+)\s*$")


def write_pfm(m: DisparityMap | DepthMap | np.ndarray, path: str | os.PathLike) -> None:
    """Single-channel little-endian PFM, rows bottom to top, invalid pixels stored as +inf."""
    if isinstance(m, (DisparityMap, DepthMap)):
        data = np.where(m.mask, m.values, INVALID)
    else:
        data = np.asarray(m)
    if data.ndim != 2:
        raise ValidationError(f"PFM writer expects a 2-D map, got shape {data.shape}")
    h, w = data.shape
    payload = np.ascontiguousarray(np.flipud(data).astype("<f4"))
    with open(path, "wb") as f:
        f.write(b"Pf\n%d %d\n-1.0\n" % (w, h))
        f.write(payload.tobytes())


def _read_pfm_array(path) -> np.ndarray:
    with open(path, "rb") as f:
        magic = f.readline().rstrip(b"\r\n").strip()
        if magic == b"PF":
            raise FormatError(f"{path}: color PFM ('PF') where a single-channel map ('Pf') was expected")
        if magic != b"Pf":
            raise FormatError(f"{path}: bad PFM magic {magic!r}")
        dims = _PFM_DIMS.match(f.readline())
        if not dims:
            raise FormatError(f"{path}: malformed PFM dimension line")
        w, h = int(dims.group(1)), int(dims.group(2))
        try:
            scale = float(f.readline().decode("ascii").strip())
        except (UnicodeDecodeError, ValueError):
            raise FormatError(f"{path}: malformed PFM scale line") from None
        if scale == 0 or not math.isfinite(scale):
            raise FormatError(f"{path}: PFM scale must be finite and non-zero")
        dtype = "<f4" if scale < 0 else ">f4"
        raw = f.read()
    expected = w * h * 4
    if len(raw) < expected:
        raise FormatError(f"{path}: truncated PFM payload ({len(raw)} of {expected} bytes)")
    data = np.frombuffer(raw[:expected], dtype=dtype).reshape(h, w)
    return np.flipud(data).astype(np.float32)


def read_pfm(path: str | os.PathLike, kind: type = DisparityMap) -> DisparityMap | DepthMap:
    """Read a single-channel PFM as ``kind``; non-finite values are invalid."""
    data = _read_pfm_array(path)
    return kind(data, np.isfinite(data))


# ----------------------------------------------------------------------------
# PNG

DEFAULT_DEPTH_SCALE_M = 1e-4


def write_depth_png16(z: DepthMap, path: str | os.PathLike, scale_m: float = DEFAULT_DEPTH_SCALE_M) -> None:
    """16-bit PNG with ``value = round(depth / scale_m)``; 0 marks invalid pixels."""
    q = np.zeros(z.shape, dtype=np.int64)
    v = z.values[z.mask].astype(np.float64)
    q[z.mask] = np.round(v / scale_m).astype(np.int64)
    bad = z.mask & ((q > 65535) | (q < 1))
    if bad.any():
        y, x = np.argwhere(bad)[0]
        raise ValidationError(
            f"depth {z.values[y, x]} m at pixel (x={x}, y={y}) not representable with scale {scale_m} m"
        )
    Image.fromarray(q.astype(np.uint16)).save(path, format="PNG")


def read_depth_png16(path: str | os.PathLike, scale_m: float = DEFAULT_DEPTH_SCALE_M) -> DepthMap:
    with Image.open(path) as im:
        if im.mode not in ("I;16", "I;16B", "I"):
            raise FormatError(f"{path}: expected a 16-bit grayscale PNG, got mode {im.mode}")
        q = np.asarray(im).astype(np.int64)
    mask = q > 0
    return DepthMap(np.where(mask, q * scale_m, INVALID), mask)


def write_image_png(img: ImageGray | ImageRGB, path: str | os.PathLike) -> None:
    """8-bit PNG, ``round(v * 255)``; gray images stay single channel."""
    q = np.round(img.data * 255.0).astype(np.uint8)
    Image.fromarray(q, mode="L" if isinstance(img, ImageGray) else "RGB").save(path, format="PNG")


def read_image_png(path: str | os.PathLike) -> ImageGray | ImageRGB:
    with Image.open(path) as im:
        if im.mode == "L":
            return ImageGray(np.asarray(im).astype(np.float64) / 255.0)
        if im.mode == "RGB":
            return ImageRGB(np.asarray(im).astype(np.float64) / 255.0)
        raise FormatError(f"{path}: unsupported PNG mode {im.mode} (need 8-bit L or RGB)")


# ----------------------------------------------------------------------------
# JSON schemas


class _Obj:
    """Strict view of a JSON object: every key must be consumed."""

    def __init__(self, data: Any, path: str):
        if not isinstance(data, dict):
            raise ConfigError(path, f"expected an object, got {type(data).__name__}")
        self.data = data
        self.path = path
        self.used: set[str] = set()

    def sub(self, key: str) -> str:
        return f"{self.path}.{key}" if self.path else key

    def get(self, key: str, conv: Callable[[Any, str], Any], default: Any = ...) -> Any:
        self.used.add(key)
        if key not in self.data:
            if default is ...:
                raise ConfigError(self.sub(key), "required field missing")
            return default
        return conv(self.data[key], self.sub(key))

    def done(self) -> None:
        extra = sorted(set(self.data) - self.used)
        if extra:
            raise ConfigError(self.sub(extra[0]), f"unknown key {extra[0]!r}")


def _num(v, path):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(path, f"expected a number, got {v!r}")
    return float(v)


def _int(v, path):
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(path, f"expected an integer, got {v!r}")
    return v


def _bool(v, path):
    if not isinstance(v, bool):
        raise ConfigError(path, f"expected true/false, got {v!r}")
    return v


def _str(v, path):
    if not isinstance(v, str):
        raise ConfigError(path, f"expected a string, got {v!r}")
    return v


def _vec(n):
    def conv(v, path):
        if not isinstance(v, list) or len(v) != n:
            raise ConfigError(path, f"expected a list of {n} numbers")
        return tuple(_num(x, f"{path}[{i}]") for i, x in enumerate(v))

    return conv


def _list(v, path):
    if not isinstance(v, list):
        raise ConfigError(path, "expected a list")
    return v


def _extent(v, path):
    return math.inf if v is None else _num(v, path)


def _checked(path: str, build: Callable[[], Any], field_name: str | None = None):
    """Run a constructor, re-raising validation errors at ``path``."""
    try:
        return build()
    except ConfigError:
        raise
    except ValidationError as e:
        raise ConfigError(f"{path}.{field_name}" if field_name else path, str(e)) from None


def _first_invalid(path: str, values: dict[str, Any], rules: dict[str, Callable[[Any], bool]]) -> None:
    for k, ok in rules.items():
        if k in values and not ok(values[k]):
            raise ConfigError(f"{path}.{k}" if path else k, f"invalid value {values[k]!r}")


def _parse_texture(v, path) -> Texture:
    o = _Obj(v, path)
    kw = dict(
        kind=o.get("kind", _str, "noise"),
        albedo=o.get("albedo", _num, 0.5),
        contrast=o.get("contrast", _num, 0.8),
        scale=o.get("scale", _num, 0.01),
        seed=o.get("seed", _int, 0),
        color=o.get("color", _vec(3), (1.0, 1.0, 1.0)),
    )
    o.done()
    _first_invalid(path, kw, {
        "kind": lambda k: k in ("flat", "checker", "noise"),
        "albedo": lambda a: 0 <= a <= 1,
        "contrast": lambda c: 0 <= c <= 1,
        "scale": lambda s: s > 0,
        "color": lambda c: all(0 <= x <= 1 for x in c),
    })
    return _checked(path, lambda: Texture(**kw))


def _parse_pose(v, path) -> RigidTransform:
    o = _Obj(v, path)
    t = o.get("translation", _vec(3), (0.0, 0.0, 0.0))
    r = o.get("rotation_deg", _vec(3), (0.0, 0.0, 0.0))
    o.done()
    return RigidTransform.from_euler(t, r)


def _parse_object(v, path):
    o = _Obj(v, path)
    kind = o.get("type", _str)
    texture = o.get("texture", _parse_texture, Texture())
    pose = o.get("pose", _parse_pose, RigidTransform())
    if kind == "plane":
        kw = dict(
            point=o.get("point", _vec(3)),
            normal=o.get("normal", _vec(3)),
            extent=o.get("extent", _extent, math.inf),
        )
        o.done()
        _first_invalid(path, kw, {"extent": lambda e: e > 0, "normal": lambda n: any(x != 0 for x in n)})
        return _checked(path, lambda: Plane(texture=texture, pose=pose, **kw))
    if kind == "sphere":
        kw = dict(center=o.get("center", _vec(3)), radius=o.get("radius", _num))
        o.done()
        _first_invalid(path, kw, {"radius": lambda r: r > 0})
        return _checked(path, lambda: Sphere(texture=texture, pose=pose, **kw))
    raise ConfigError(o.sub("type"), f"unknown object type {kind!r} (expected 'plane' or 'sphere')")


def _parse_background(v, path):
    if v is None:
        return None
    o = _Obj(v, path)
    kw = dict(depth=o.get("depth", _num, 5.0), texture=o.get("texture", _parse_texture, Texture()))
    o.done()
    _first_invalid(path, kw, {"depth": lambda d: d > 0})
    return Background(**kw)


def _parse_illumination(v, path):
    o = _Obj(v, path)
    d = Illumination()
    kw = {k: o.get(k, _num, getattr(d, k)) for k in ("ambient", "headlight", "ir_ambient", "ir_intensity_scale")}
    o.done()
    _first_invalid(path, kw, {k: (lambda x: 0 <= x <= 1) for k in kw})
    return Illumination(**kw)


def scene_from_dict(data: dict) -> SceneSpec:
    o = _Obj(data, "")
    objs = [_parse_object(x, f"objects[{i}]") for i, x in enumerate(o.get("objects", _list, []))]
    bg = o.get("background", _parse_background, None)
    ill = o.get("illumination", _parse_illumination, Illumination())
    o.done()
    return _checked("$", lambda: SceneSpec(tuple(objs), bg, ill))


def _loads(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError("$", f"malformed JSON: {e}") from None


def parse_scene_spec(text: str) -> SceneSpec:
    """Scene JSON: ``objects`` (planes/spheres), optional ``background`` and ``illumination``."""
    return scene_from_dict(_loads(text))


def _parse_keyframes(v, path):
    frames = []
    for i, k in enumerate(_list(v, path)):
        o = _Obj(k, f"{path}[{i}]")
        frame = o.get("frame", _int)
        t = o.get("translation", _vec(3), (0.0, 0.0, 0.0))
        r = o.get("rotation_deg", _vec(3), (0.0, 0.0, 0.0))
        o.done()
        frames.append(Keyframe(frame, RigidTransform.from_euler(t, r)))
    return tuple(frames)


def sequence_from_dict(data: dict) -> SequenceSpec:
    o = _Obj(data, "")
    count = o.get("frame_count", _int, 1)
    cam = o.get("camera", _parse_keyframes, ())
    raw_tracks = o.get("objects", lambda v, p: _Obj(v, p), None)
    tracks = {}
    if raw_tracks is not None:
        for key in raw_tracks.data:
            if not key.isdigit():
                raise ConfigError(raw_tracks.sub(key), "object track keys must be object indices")
            tracks[int(key)] = raw_tracks.get(key, _parse_keyframes)
        raw_tracks.done()
    o.done()
    if count < 1:
        raise ConfigError("frame_count", f"must be >= 1, got {count}")
    return _checked("$", lambda: SequenceSpec(count, cam, tracks))


def parse_sequence_spec(text: str) -> SequenceSpec:
    """Sequence JSON: ``frame_count``, ``camera`` keyframes, ``objects`` {index: keyframes}."""
    return sequence_from_dict(_loads(text))


def rig_from_dict(data: dict) -> StereoRig:
    o = _Obj(data, "")
    d = StereoRig()
    size = o.get("image_size", _vec(2), None)
    kw = dict(
        baseline_m=o.get("baseline_m", _num, d.baseline_m),
        focal_px=o.get("focal_px", _num, d.focal_px),
    )
    pp = o.get("principal_point", _vec(2), None)
    o.done()
    _first_invalid("", kw, {"baseline_m": lambda b: b > 0, "focal_px": lambda f: f > 0})
    w, h = (int(size[0]), int(size[1])) if size else d.image_size
    if size and (size[0] != w or size[1] != h or w < 1 or h < 1):
        raise ConfigError("image_size", f"expected two positive integers, got {list(size)}")
    if pp is None:
        pp = ((w - 1) / 2.0, (h - 1) / 2.0)
    return _checked("principal_point", lambda: StereoRig(kw["baseline_m"], kw["focal_px"], pp, (w, h)))


def parse_rig(text: str) -> StereoRig:
    """Rig JSON: ``baseline_m``, ``focal_px``, ``image_size`` [w, h], optional ``principal_point``."""
    return rig_from_dict(_loads(text))


def rig_to_dict(rig: StereoRig) -> dict:
    return {
        "baseline_m": rig.baseline_m,
        "focal_px": rig.focal_px,
        "principal_point": list(rig.principal_point),
        "image_size": list(rig.image_size),
    }


def _parse_sgm(v, path):
    o = _Obj(v, path)
    d = SgmParams()
    kw = dict(
        p1=o.get("p1", _int, d.p1),
        p2=o.get("p2", _int, d.p2),
        paths=o.get("paths", _int, d.paths),
        uniqueness_ratio=o.get("uniqueness_ratio", _num, d.uniqueness_ratio),
    )
    o.done()
    _first_invalid(path, kw, {
        "p1": lambda p: p >= 0,
        "p2": lambda p: p >= kw["p1"],
        "paths": lambda p: p in (4, 8),
        "uniqueness_ratio": lambda u: 0 <= u < 1,
    })
    return SgmParams(**kw)


def _parse_refine(v, path):
    o = _Obj(v, path)
    d = RefineParams()
    kw = dict(
        lr_threshold=o.get("lr_threshold", _num, d.lr_threshold),
        median_window=o.get("median_window", _int, d.median_window),
        speckle_max_size=o.get("speckle_max_size", _int, d.speckle_max_size),
        speckle_diff=o.get("speckle_diff", _num, d.speckle_diff),
        median_first=o.get("median_first", _bool, d.median_first),
    )
    o.done()
    _first_invalid(path, kw, {
        "lr_threshold": lambda t: t >= 0,
        "median_window": lambda m: m >= 1 and m % 2 == 1,
        "speckle_max_size": lambda s: s >= 0,
        "speckle_diff": lambda s: s >= 0,
    })
    return RefineParams(**kw)


def _parse_depth(v, path):
    o = _Obj(v, path)
    d = DepthConversionParams()
    kw = dict(epsilon=o.get("epsilon", _num, d.epsilon), max_range_m=o.get("max_range_m", _num, d.max_range_m))
    o.done()
    _first_invalid(path, kw, {"epsilon": lambda e: e > 0, "max_range_m": lambda m: m > 0})
    return DepthConversionParams(**kw)


def _window(v, path):
    w = _vec(2)(v, path)
    if any(int(x) != x or x < 3 or int(x) % 2 == 0 for x in w) or (w[0] * w[1] - 1) // 2 > 64:
        raise ConfigError(path, f"census window must be two odd integers >= 3 with at most 64 bits, got {list(v)}")
    return (int(w[0]), int(w[1]))


def match_config_from_dict(data: dict) -> MatchConfig:
    o = _Obj(data, "")
    kw = dict(
        census_window=o.get("census_window", _window, DEFAULT_WINDOW),
        sgm=o.get("sgm", _parse_sgm, SgmParams()),
        refine=o.get("refine", _parse_refine, RefineParams()),
        depth=o.get("depth", _parse_depth, DepthConversionParams()),
        d_max=o.get("d_max", _int, 64),
    )
    o.done()
    _first_invalid("", kw, {"d_max": lambda d: d >= 0})
    return MatchConfig(**kw)


def parse_match_config(text: str) -> MatchConfig:
    """Matcher JSON: ``census_window``, ``d_max``, ``sgm``, ``refine``, ``depth`` sections."""
    return match_config_from_dict(_loads(text))


def match_config_to_dict(cfg: MatchConfig) -> dict:
    return {
        "census_window": list(cfg.census_window),
        "d_max": cfg.d_max,
        "sgm": asdict(cfg.sgm),
        "refine": asdict(cfg.refine),
        "depth": asdict(cfg.depth),
    }


def projector_from_dict(data: dict | None) -> IrProjectorSpec | None:
    """``null`` disables the projector."""
    if data is None:
        return None
    o = _Obj(data, "")
    d = IrProjectorSpec()
    kw = dict(
        dot_density=o.get("dot_density", _num, d.dot_density),
        seed=o.get("seed", _int, d.seed),
        intensity=o.get("intensity", _num, d.intensity),
        splat_sigma_px=o.get("splat_sigma_px", _num, d.splat_sigma_px),
        fov_margin=o.get("fov_margin", _num, d.fov_margin),
    )
    o.done()
    _first_invalid("", kw, {
        "dot_density": lambda x: x > 0,
        "intensity": lambda x: 0 <= x <= 1,
        "splat_sigma_px": lambda x: x > 0,
        "fov_margin": lambda x: x > 0,
    })
    return IrProjectorSpec(**kw)


def load_json(path: str | os.PathLike) -> Any:
    with open(path, encoding="utf-8") as f:
        return _loads(f.read())


def dump_json(data: Any, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(data, f, indent=2, sort_keys=True)
        f.write("\n")


# ----------------------------------------------------------------------------
# Dataset manifest

MANIFEST_NAME = "manifest.json"
MANIFEST_VERSION = "1"


@dataclass
class FrameEntry:
    frame_index: int
    mode: str
    left: str
    right: str
    gt_depth: str
    gt_depth_png: str | None = None
    sim_depth: str | None = None
    sim_depth_png: str | None = None
    disparity: str | None = None


@dataclass
class DatasetManifest:
    rig: dict
    frames: list[FrameEntry] = field(default_factory=list)
    scene: str | None = None
    sequence: str | None = None
    seed: int = 0
    depth_png_scale_m: float = DEFAULT_DEPTH_SCALE_M
    match_config: dict | None = None
    version: str = MANIFEST_VERSION

    def to_dict(self) -> dict:
        d = asdict(self)
        d["frames"] = [{k: v for k, v in asdict(f).items() if v is not None} for f in self.frames]
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "DatasetManifest":
        if data.get("version") != MANIFEST_VERSION:
            raise FormatError(f"unsupported manifest version {data.get('version')!r}")
        data = dict(data)
        frames = [FrameEntry(**f) for f in data.pop("frames", [])]
        return cls(frames=frames, **data)

    def check_files(self, root: str | os.PathLike) -> None:
        root = Path(root)
        for f in self.frames:
            for name in (f.left, f.right, f.gt_depth, f.gt_depth_png, f.sim_depth, f.sim_depth_png, f.disparity):
                if name is not None and not (root / name).is_file():
                    raise FormatError(f"manifest references missing file {name}")


def write_manifest(manifest: DatasetManifest, root: str | os.PathLike) -> Path:
    manifest.check_files(root)
    path = Path(root) / MANIFEST_NAME
    dump_json(manifest.to_dict(), path)
    return path


def read_manifest(root: str | os.PathLike) -> DatasetManifest:
    return DatasetManifest.from_dict(load_json(Path(root) / MANIFEST_NAME))
