"""SemanticKITTI file formats, key-value configs and the synthetic scan generator.

Scan files (``.bin``) are packed little-endian float32 quadruples
``x, y, z, remission`` in firing order with no header. Label files
(``.label``) hold one little-endian uint32 per point: the low 16 bits are the
raw semantic id, the high 16 bits the instance id.
"""

from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Dict, Mapping, Optional, Tuple

import numpy as np

from .model import ConfigError, FormatError, PointAnnotations, PointCloud, SensorConfig

log = logging.getLogger(__name__)

_SCAN_DTYPE = np.dtype("<f4")
_LABEL_DTYPE = np.dtype("<u4")


def data_path(name: str) -> Path:
    """Path of a config file shipped with the package."""
    return Path(str(resources.files("rangeview") / "data" / name))


def read_kv(path) -> Dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment, blank lines are skipped."""
    out: Dict[str, str] = {}
    text = Path(path).read_text()
    for lineno, raw in enumerate(text.splitlines(), 1):
        if raw.lstrip().startswith("#"):
            continue
        # inline comments need whitespace on both sides of '#' (palette values are '#rrggbb')
        line = re.split(r"\s#(?=\s|$)", raw, maxsplit=1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not key:
            raise ConfigError(f"{path}:{lineno}: empty key")
        if key in out:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
        out[key] = value
    return out


# ---------------------------------------------------------------------------
# binary formats


def read_point_cloud(path) -> PointCloud:
    buf = Path(path).read_bytes()
    if len(buf) % 16:
        raise FormatError(f"{path}: {len(buf)} bytes is not a whole number of 16-byte points")
    a = np.frombuffer(buf, dtype=_SCAN_DTYPE).reshape(-1, 4)
    return PointCloud(a[:, :3], a[:, 3])


def write_point_cloud(path, cloud: PointCloud) -> None:
    a = np.empty((len(cloud), 4), dtype=_SCAN_DTYPE)
    a[:, :3] = cloud.xyz
    a[:, 3] = cloud.remission
    Path(path).write_bytes(a.tobytes())


def read_annotations(path, label_map: Optional["LabelMap"] = None) -> PointAnnotations:
    """Decode a ``.label`` file.

    With a label map, raw semantic ids are remapped to train ids and instance
    ids of non-thing classes are cleared. Without one, ids are returned as
    stored.
    """
    buf = Path(path).read_bytes()
    if len(buf) % 4:
        raise FormatError(f"{path}: {len(buf)} bytes is not a whole number of 32-bit labels")
    words = np.frombuffer(buf, dtype=_LABEL_DTYPE)
    raw = (words & 0xFFFF).astype(np.int64)
    inst = (words >> 16).astype(np.int64)
    if label_map is None:
        return PointAnnotations(raw, inst)
    sem, unknown = label_map.remap(raw)
    if unknown:
        log.warning("%s: %d points with unknown raw label ids mapped to unlabeled", path, unknown)
    inst = np.where(np.isin(sem, sorted(label_map.thing_classes)), inst, 0)
    return PointAnnotations(sem, inst)


def write_annotations(path, ann: PointAnnotations, label_map: Optional["LabelMap"] = None) -> None:
    """Encode annotations; with a label map, train ids are written back as raw ids."""
    sem = ann.semantic if label_map is None else label_map.to_raw(ann.semantic)
    if (sem > 0xFFFF).any() or (ann.instance > 0xFFFF).any():
        raise FormatError("semantic and instance ids must fit in 16 bits")
    words = (sem.astype(np.uint32) & 0xFFFF) | (ann.instance.astype(np.uint32) << 16)
    Path(path).write_bytes(words.astype(_LABEL_DTYPE).tobytes())


# ---------------------------------------------------------------------------
# label map


@dataclass(frozen=True)
class LabelMap:
    raw_to_train: Mapping[int, int]
    thing_classes: frozenset = frozenset()
    class_names: Mapping[int, str] = field(default_factory=dict)

    def remap(self, raw: np.ndarray) -> Tuple[np.ndarray, int]:
        """Map raw ids to train ids; returns the ids and the count of unknown raw ids."""
        raw = np.asarray(raw, dtype=np.int64)
        top = max(int(raw.max(initial=0)), max(self.raw_to_train, default=0)) + 1
        lut = np.full(top, -1, dtype=np.int64)
        for r, t in self.raw_to_train.items():
            lut[r] = t
        out = lut[raw]
        unknown = out < 0
        n_unknown = int(unknown.sum())
        out[unknown] = 0
        return out, n_unknown

    def to_raw(self, train: np.ndarray) -> np.ndarray:
        inverse: Dict[int, int] = {0: 0}
        for r, t in sorted(self.raw_to_train.items()):
            inverse.setdefault(t, r)
        train = np.asarray(train, dtype=np.int64)
        missing = set(np.unique(train).tolist()) - inverse.keys()
        if missing:
            raise FormatError(f"train ids {sorted(missing)} have no raw id in the label map")
        lut = np.zeros(max(inverse) + 1, dtype=np.int64)
        for t, r in inverse.items():
            lut[t] = r
        return lut[train]

    @property
    def train_ids(self):
        return sorted(set(self.raw_to_train.values()) | set(self.class_names))

    def class_id(self, name_or_id: str) -> int:
        """Resolve a class name (``"truck"``) or a numeric train id (``"4"``)."""
        s = name_or_id.strip()
        if s.isdigit():
            return int(s)
        for k, v in self.class_names.items():
            if v == s:
                return k
        raise ConfigError(f"unknown class {name_or_id!r}")


def load_label_map(path=None) -> LabelMap:
    """Load a label map file; the SemanticKITTI map is used when ``path`` is None."""
    kv = read_kv(data_path("semantic-kitti.cfg") if path is None else path)
    raw_to_train: Dict[int, int] = {}
    names: Dict[int, str] = {}
    things: frozenset = frozenset()
    for key, value in kv.items():
        try:
            if key.startswith("raw."):
                raw_to_train[int(key[4:])] = int(value)
            elif key.startswith("name."):
                names[int(key[5:])] = value
            elif key == "things":
                things = frozenset(int(v) for v in value.replace(",", " ").split())
            else:
                raise ConfigError(f"{path}: unknown label map key {key!r}")
        except ValueError as e:
            if isinstance(e, ConfigError):
                raise
            raise ConfigError(f"{path}: bad entry {key} = {value}") from e
    if any(v < 0 for v in raw_to_train.values()) or any(k < 0 or k > 0xFFFF for k in raw_to_train):
        raise ConfigError(f"{path}: label ids must be non-negative 16-bit integers")
    return LabelMap(raw_to_train, things, names)


# ---------------------------------------------------------------------------
# sensor config

_BOOL = {"true": True, "yes": True, "1": True, "false": False, "no": False, "0": False}


def parse_bool(value: str) -> bool:
    try:
        return _BOOL[value.strip().lower()]
    except KeyError:
        raise ConfigError(f"not a boolean: {value!r}") from None


def load_sensor_config(path=None) -> SensorConfig:
    """Read a sensor config; missing keys default to 64 x 2048, +3 / -25 degrees."""
    kv = read_kv(path) if path is not None else {}
    known = {"width", "height", "fov_up", "fov_down", "drop_out_of_fov"}
    extra = set(kv) - known
    if extra:
        raise ConfigError(f"{path}: unknown sensor keys {sorted(extra)}")
    args = {}
    try:
        for k in ("width", "height"):
            if k in kv:
                args[k] = int(kv[k])
        for k in ("fov_up", "fov_down"):
            if k in kv:
                args[k] = float(kv[k])
    except ValueError as e:
        raise ConfigError(f"{path}: {e}") from e
    if "drop_out_of_fov" in kv:
        args["drop_out_of_fov"] = parse_bool(kv["drop_out_of_fov"])
    return SensorConfig(**args)


# ---------------------------------------------------------------------------
# synthetic scans


@dataclass(frozen=True)
class SynthObject:
    """An axis-aligned box (``size`` = extents) or a sphere (``size`` = radius)."""

    shape: str
    center: Tuple[float, float, float]
    size: Tuple[float, ...]
    class_id: int
    instance_id: int = 0

    def __post_init__(self):
        if self.shape not in ("box", "sphere"):
            raise ConfigError(f"unknown object shape {self.shape!r}")
        want = 3 if self.shape == "box" else 1
        if len(self.size) != want or min(self.size) <= 0:
            raise ConfigError(f"{self.shape} needs {want} positive size value(s), got {self.size}")


@dataclass(frozen=True)
class SynthSpec:
    rings: int = 64
    azimuth_steps: int = 2048
    extent: float = 40.0
    objects: Tuple[SynthObject, ...] = ()
    noise_points: int = 0
    seed: int = 0
    fov_up: float = 3.0
    fov_down: float = -25.0
    sensor_height: float = 1.73
    azimuth_jitter: float = 0.0
    ground_class: int = 9
    wall_class: int = 13

    def __post_init__(self):
        if self.rings < 1 or self.azimuth_steps < 1:
            raise ConfigError("rings and azimuth_steps must be positive")
        if self.extent <= 0 or self.sensor_height <= 0:
            raise ConfigError("extent and sensor_height must be positive")
        if self.noise_points < 0:
            raise ConfigError("noise_points must be non-negative")
        if not 0 <= self.azimuth_jitter < 0.5:
            raise ConfigError("azimuth_jitter is a fraction of one step in [0, 0.5)")
        if not -90 < self.fov_down < self.fov_up < 90:
            raise ConfigError("need -90 < fov_down < fov_up < 90")


def _ray_box(d: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Entry distance of rays from the origin into a box (inf on a miss)."""
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = lo / d
        t2 = hi / d
    tmin = np.fmin(t1, t2)
    tmax = np.fmax(t1, t2)
    # rays parallel to a slab: inside it -> unconstrained, outside -> miss
    par = d == 0
    inside = (lo <= 0) & (hi >= 0)
    tmin = np.where(par, np.where(inside, -np.inf, np.inf), tmin)
    tmax = np.where(par, np.where(inside, np.inf, -np.inf), tmax)
    near = tmin.max(axis=1)
    far = tmax.min(axis=1)
    t = np.where(near > 0, near, far)
    return np.where((near <= far) & (far > 0), t, np.inf)


def _ray_sphere(d: np.ndarray, c: np.ndarray, radius: float) -> np.ndarray:
    b = d @ c
    disc = b * b - (c @ c - radius * radius)
    root = np.sqrt(np.maximum(disc, 0.0))
    near, far = b - root, b + root
    t = np.where(near > 0, near, far)
    return np.where((disc >= 0) & (far > 0), t, np.inf)


def generate_synthetic_scan(spec: SynthSpec) -> Tuple[PointCloud, PointAnnotations, np.ndarray]:
    """Ray-cast a spinning multi-beam sensor against a ground plane, a
    cylindrical wall of radius ``extent`` and the configured objects.

    Points are emitted ring by ring (ring 0 is the top beam), and within a
    ring by decreasing azimuth starting just below +pi, one return per ray.
    ``noise_points`` rays additionally get a closer unlabeled "dust" return,
    emitted just before the surface return of the same ray. Coordinates are
    rounded to float32 so the scan round-trips through the ``.bin`` format.

    Returns the cloud, its annotations and the true ring index of each point.
    """
    rng = np.random.default_rng(spec.seed)
    R, S = spec.rings, spec.azimuth_steps
    n = R * S

    elev = np.radians(spec.fov_up - (np.arange(R) + 0.5) * (spec.fov_up - spec.fov_down) / R)
    steps = np.arange(S) + 0.5
    jitter = rng.uniform(-spec.azimuth_jitter, spec.azimuth_jitter, size=(R, S)) if spec.azimuth_jitter else 0.0
    azim = math.pi - (steps[None, :] + jitter) * (2 * math.pi / S)
    phi = np.broadcast_to(elev[:, None], (R, S)).reshape(-1)
    theta = np.broadcast_to(azim, (R, S)).reshape(-1)
    d = np.stack([np.cos(phi) * np.cos(theta), np.cos(phi) * np.sin(theta), np.sin(phi)], axis=1)

    t = spec.extent / np.cos(phi)
    sem = np.full(n, spec.wall_class, dtype=np.int64)
    ins = np.zeros(n, dtype=np.int64)
    rem = np.full(n, 0.45)

    with np.errstate(divide="ignore"):
        t_ground = np.where(d[:, 2] < 0, -spec.sensor_height / d[:, 2], np.inf)
    hit = t_ground < t
    t = np.where(hit, t_ground, t)
    sem[hit] = spec.ground_class
    rem[hit] = 0.25

    for obj in spec.objects:
        c = np.asarray(obj.center, dtype=np.float64)
        if obj.shape == "box":
            half = np.asarray(obj.size, dtype=np.float64) / 2
            t_obj = _ray_box(d, c - half, c + half)
        else:
            t_obj = _ray_sphere(d, c, float(obj.size[0]))
        hit = t_obj < t
        t = np.where(hit, t_obj, t)
        sem[hit] = obj.class_id
        ins[hit] = obj.instance_id
        rem[hit] = 0.7

    rem = np.clip(rem + rng.uniform(-0.05, 0.05, size=n), 0.0, 1.0)
    xyz = d * t[:, None]
    rows = np.repeat(np.arange(R, dtype=np.int64), S)

    k = min(spec.noise_points, n)
    if k:
        slots = np.sort(rng.choice(n, size=k, replace=False))
        frac = rng.uniform(0.3, 0.9, size=k)
        dust_xyz = xyz[slots] * frac[:, None]
        dust_rem = rng.uniform(0.0, 0.1, size=k)
        # dust return goes right before the surface return of its ray
        pos = slots + np.arange(k)
        total = n + k
        is_dust = np.zeros(total, dtype=bool)
        is_dust[pos] = True
        order_src = np.flatnonzero(~is_dust)

        def merge(base, extra, fill):
            out = np.empty((total,) + base.shape[1:], dtype=base.dtype)
            out[order_src] = base
            out[pos] = extra if extra is not None else fill
            return out

        xyz = merge(xyz, dust_xyz, None)
        rem = merge(rem, dust_rem, None)
        sem = merge(sem, None, 0)
        ins = merge(ins, None, 0)
        rows = merge(rows, rows[slots], None)

    xyz = xyz.astype(np.float32).astype(np.float64)
    rem = rem.astype(np.float32).astype(np.float64)
    return PointCloud(xyz, rem), PointAnnotations(sem, ins), rows


def _parse_object(value: str) -> SynthObject:
    parts = value.split()
    try:
        if parts[0] == "box" and len(parts) == 9:
            nums = [float(p) for p in parts[1:7]]
            return SynthObject("box", tuple(nums[:3]), tuple(nums[3:]), int(parts[7]), int(parts[8]))
        if parts[0] == "sphere" and len(parts) == 7:
            nums = [float(p) for p in parts[1:5]]
            return SynthObject("sphere", tuple(nums[:3]), (nums[3],), int(parts[5]), int(parts[6]))
    except ValueError:
        pass
    raise ConfigError(
        f"bad object {value!r}; expected 'box cx cy cz sx sy sz class instance' "
        "or 'sphere cx cy cz radius class instance'"
    )


def load_synth_spec(path) -> SynthSpec:
    """Read a scene file: scalar keys of :class:`SynthSpec` plus ``object.<n>`` lines."""
    kv = read_kv(path)
    ints = {"rings", "azimuth_steps", "noise_points", "seed", "ground_class", "wall_class"}
    floats = {"extent", "fov_up", "fov_down", "sensor_height", "azimuth_jitter"}
    args: Dict[str, object] = {}
    objects = []
    for key, value in kv.items():
        try:
            if key in ints:
                args[key] = int(value)
            elif key in floats:
                args[key] = float(value)
            elif key.startswith("object."):
                objects.append((int(key[7:]), _parse_object(value)))
            else:
                raise ConfigError(f"{path}: unknown scene key {key!r}")
        except ValueError as e:
            if isinstance(e, ConfigError):
                raise
            raise ConfigError(f"{path}: bad entry {key} = {value}") from e
    args["objects"] = tuple(o for _, o in sorted(objects, key=lambda p: p[0]))
    return SynthSpec(**args)


def random_synth_spec(seed: int, n_points: int, rings: Optional[int] = None) -> SynthSpec:
    """A random street-like scene with roughly ``n_points`` returns.

    Thing objects (classes 1-8) get distinct instance ids; stuff obstacles
    (poles, trunks, vegetation) are mixed in so that instances get partly
    occluded and many-to-one conflicts occur at reduced widths.
    """
    rng = np.random.default_rng(seed)
    if rings is None:
        rings = int(rng.choice([8, 16, 32, 64]))
    noise = int(n_points * rng.uniform(0.0, 0.03))
    steps = max(8, (n_points - noise) // rings)
    extent = float(rng.uniform(20.0, 50.0))
    h = 1.73
    objects = []
    for inst in range(1, int(rng.integers(2, 9)) + 1):
        r = rng.uniform(4.0, extent - 3.0)
        a = rng.uniform(-math.pi, math.pi)
        cls = int(rng.integers(1, 9))
        if rng.random() < 0.75:
            sx, sy, sz = rng.uniform(0.5, 5.0), rng.uniform(0.5, 2.5), rng.uniform(0.8, 3.5)
            objects.append(SynthObject("box", (r * math.cos(a), r * math.sin(a), -h + sz / 2), (sx, sy, sz), cls, inst))
        else:
            rad = rng.uniform(0.3, 1.2)
            objects.append(SynthObject("sphere", (r * math.cos(a), r * math.sin(a), -h + rad), (rad,), cls, inst))
    for _ in range(int(rng.integers(0, 7))):
        r = rng.uniform(3.0, extent - 3.0)
        a = rng.uniform(-math.pi, math.pi)
        cls = int(rng.choice([15, 16, 18]))
        s = rng.uniform(0.15, 1.0)
        sz = rng.uniform(1.0, 5.0)
        objects.append(SynthObject("box", (r * math.cos(a), r * math.sin(a), -h + sz / 2), (s, s, sz), cls, 0))
    return SynthSpec(
        rings=rings,
        azimuth_steps=int(steps),
        extent=extent,
        objects=tuple(objects),
        noise_points=noise,
        seed=seed,
        azimuth_jitter=float(rng.uniform(0.0, 0.3)),
    )
