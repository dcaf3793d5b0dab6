"""Core domain types shared across the pipeline.

Arrays held by these types are marked read-only after construction, so a
frame can be handed to several policies (or threads) without copying.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Optional

import numpy as np

DEFAULT_EPSILON = 1e-6


class RangeViewError(Exception):
    """Base class for all errors raised by this package."""


class StructuralError(RangeViewError, ValueError):
    """Inputs have inconsistent lengths or shapes."""


class FormatError(RangeViewError, ValueError):
    """A binary or text file does not match its expected layout."""


class ConfigError(RangeViewError, ValueError):
    """A configuration value fails validation."""


class DegeneratePointError(RangeViewError, ValueError):
    """A point sits at the sensor origin, so its angles are undefined."""


class UnfoldingError(RangeViewError):
    """Scan unfolding found more rings than the image has rows."""

    def __init__(self, rings: int, height: int):
        super().__init__(f"scan unfolding recovered {rings} rings but the image has only {height} rows")
        self.rings = rings
        self.height = height


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class PointCloud:
    """N points in firing order: ``xyz`` (N, 3) meters and ``remission`` (N,)."""

    xyz: np.ndarray
    remission: np.ndarray

    def __post_init__(self):
        xyz = np.asarray(self.xyz, dtype=np.float64).reshape(-1, 3)
        rem = np.asarray(self.remission, dtype=np.float64).reshape(-1)
        if len(rem) != len(xyz):
            raise StructuralError(f"{len(xyz)} points but {len(rem)} remission values")
        object.__setattr__(self, "xyz", _frozen(xyz))
        object.__setattr__(self, "remission", _frozen(rem))

    def __len__(self) -> int:
        return len(self.xyz)

    @classmethod
    def empty(cls) -> "PointCloud":
        return cls(np.zeros((0, 3)), np.zeros(0))

    def take(self, index) -> "PointCloud":
        return PointCloud(self.xyz[index], self.remission[index])

    @property
    def ranges(self) -> np.ndarray:
        return np.sqrt(np.einsum("ij,ij->i", self.xyz, self.xyz))


@dataclass(frozen=True, eq=False)
class PointAnnotations:
    """Per-point train-id semantic class and instance id (0 = no instance)."""

    semantic: np.ndarray
    instance: np.ndarray

    def __post_init__(self):
        sem = np.asarray(self.semantic, dtype=np.int64).reshape(-1)
        ins = np.asarray(self.instance, dtype=np.int64).reshape(-1)
        if len(sem) != len(ins):
            raise StructuralError(f"{len(sem)} semantic ids but {len(ins)} instance ids")
        if (sem < 0).any() or (ins < 0).any():
            raise StructuralError("class and instance ids must be non-negative")
        object.__setattr__(self, "semantic", _frozen(sem))
        object.__setattr__(self, "instance", _frozen(ins))

    def __len__(self) -> int:
        return len(self.semantic)

    @classmethod
    def unlabeled(cls, n: int) -> "PointAnnotations":
        z = np.zeros(n, dtype=np.int64)
        return cls(z, z)

    def take(self, index) -> "PointAnnotations":
        return PointAnnotations(self.semantic[index], self.instance[index])


@dataclass(frozen=True, eq=False)
class Frame:
    """A cloud with matching annotations, as returned by :func:`validate_frame`."""

    cloud: PointCloud
    ann: PointAnnotations
    removed: int = 0

    def __post_init__(self):
        if len(self.cloud) != len(self.ann):
            raise StructuralError(f"cloud has {len(self.cloud)} points but annotations have {len(self.ann)}")

    def __len__(self) -> int:
        return len(self.cloud)


@dataclass(frozen=True)
class SensorConfig:
    """Raster size and vertical field of view (degrees)."""

    width: int = 2048
    height: int = 64
    fov_up: float = 3.0
    fov_down: float = -25.0
    drop_out_of_fov: bool = False

    def __post_init__(self):
        if int(self.width) != self.width or self.width < 1:
            raise ConfigError(f"width must be a positive integer, got {self.width}")
        if int(self.height) != self.height or self.height < 1:
            raise ConfigError(f"height must be a positive integer, got {self.height}")
        if not (math.isfinite(self.fov_up) and math.isfinite(self.fov_down)):
            raise ConfigError("field-of-view bounds must be finite")
        if self.fov_up <= self.fov_down:
            raise ConfigError(f"fov_up ({self.fov_up}) must exceed fov_down ({self.fov_down})")

    @property
    def fov_up_rad(self) -> float:
        return math.radians(self.fov_up)

    @property
    def fov_down_rad(self) -> float:
        return math.radians(self.fov_down)

    @property
    def fov_rad(self) -> float:
        return self.fov_up_rad - self.fov_down_rad

    def with_size(self, width: Optional[int] = None, height: Optional[int] = None) -> "SensorConfig":
        return SensorConfig(
            width=self.width if width is None else width,
            height=self.height if height is None else height,
            fov_up=self.fov_up,
            fov_down=self.fov_down,
            drop_out_of_fov=self.drop_out_of_fov,
        )


@dataclass(frozen=True)
class ClassWeights:
    """Per-class CWAP weights; classes absent from ``table`` get ``default``."""

    table: Mapping[int, float] = field(default_factory=dict)
    default: float = 0.0

    def lookup(self, classes: np.ndarray) -> np.ndarray:
        classes = np.asarray(classes, dtype=np.int64)
        top = max(int(classes.max(initial=0)), max(self.table, default=0)) + 1
        lut = np.full(top, self.default, dtype=np.float64)
        for k, w in self.table.items():
            lut[k] = w
        return lut[classes]

    def validate(self, epsilon: float) -> None:
        for k, w in [*self.table.items(), ("default", self.default)]:
            if not math.isfinite(w):
                raise ConfigError(f"weight for class {k} is not finite")
            if w + epsilon == 0:
                raise ConfigError(f"weight {w} for class {k} cancels epsilon={epsilon}; keys would divide by zero")


class Variant(str, Enum):
    DEPTH = "depth"
    CAP = "cap"
    CWAP = "cwap"


@dataclass(frozen=True)
class SelectionPolicy:
    variant: Variant = Variant.DEPTH
    epsilon: float = DEFAULT_EPSILON
    class_weights: Optional[ClassWeights] = None

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        if not (self.epsilon > 0 and math.isfinite(self.epsilon)):
            raise ConfigError(f"epsilon must be a small positive number, got {self.epsilon}")
        if self.variant is Variant.CWAP:
            if self.class_weights is None:
                raise ConfigError("the cwap policy needs a class weight table")
            self.class_weights.validate(self.epsilon)
        elif self.class_weights is not None:
            raise ConfigError(f"the {self.variant.value} policy takes no class weights")

    @property
    def needs_labels(self) -> bool:
        # contextual policies rely on ground-truth annotations (training-time only)
        return self.variant is not Variant.DEPTH


def validate_frame(cloud: PointCloud, ann: Optional[PointAnnotations] = None) -> Frame:
    """Drop points with non-finite coordinates or remission, keeping firing order.

    ``ann`` defaults to all-unlabeled annotations. The number of dropped
    points is reported on the returned frame as ``removed``.
    """
    if ann is None:
        ann = PointAnnotations.unlabeled(len(cloud))
    if len(cloud) != len(ann):
        raise StructuralError(f"cloud has {len(cloud)} points but annotations have {len(ann)}")
    ok = np.isfinite(cloud.xyz).all(axis=1) & np.isfinite(cloud.remission)
    if ok.all():
        return Frame(cloud, ann, 0)
    keep = np.flatnonzero(ok)
    return Frame(cloud.take(keep), ann.take(keep), int(len(cloud) - len(keep)))


def instance_class_set(label_map) -> frozenset:
    """Train ids that carry instance identity ("thing" classes)."""
    return frozenset(label_map.thing_classes)


def thing_mask(ann: PointAnnotations, things) -> np.ndarray:
    """Points that belong to an instance: thing class and nonzero instance id."""
    things = np.fromiter(things, dtype=np.int64)
    return np.isin(ann.semantic, things) & (ann.instance != 0)
