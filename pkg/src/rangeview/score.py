"""Per-point selection keys for depth, centerness-aware (CAP) and
class-weighted (CWAP) conflict resolution. The smallest key wins a pixel.

    depth: s = |p|
    CAP:   s = |p| / (c + eps)   c = per-instance normalized Gaussian centerness, 0 for stuff
    CWAP:  s = |p| / (w + eps)   w = weight of the point's class
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np

from .ingest import LabelMap, read_kv
from .model import ClassWeights, ConfigError, Frame, SelectionPolicy, Variant, thing_mask

GAUSS_NORM = (2.0 * math.pi) ** -1.5

InstanceKey = Tuple[int, int]  # (semantic class, instance id)


def instance_groups(frame: Frame, things) -> Tuple[np.ndarray, list]:
    """Group index per point (-1 for stuff) and the (class, instance) key of each group.

    Instances are keyed by class as well as id so that two classes reusing
    an instance id never get merged.
    """
    member = thing_mask(frame.ann, things)
    groups = np.full(len(frame), -1, dtype=np.int64)
    if not member.any():
        return groups, []
    sem = frame.ann.semantic[member]
    ins = frame.ann.instance[member]
    packed = (sem << 32) | ins
    uniq, inverse = np.unique(packed, return_inverse=True)
    groups[member] = inverse
    keys = [(int(u >> 32), int(u & 0xFFFFFFFF)) for u in uniq]
    return groups, keys


def _group_centers(xyz: np.ndarray, groups: np.ndarray, n_groups: int) -> np.ndarray:
    lo = np.full((n_groups, 3), np.inf)
    hi = np.full((n_groups, 3), -np.inf)
    m = groups >= 0
    np.minimum.at(lo, groups[m], xyz[m])
    np.maximum.at(hi, groups[m], xyz[m])
    return (lo + hi) / 2


def instance_centers(frame: Frame, things) -> Dict[InstanceKey, np.ndarray]:
    """Axis-aligned bounding-box midpoint of every instance."""
    groups, keys = instance_groups(frame, things)
    centers = _group_centers(frame.cloud.xyz, groups, len(keys))
    return {k: centers[i] for i, k in enumerate(keys)}


def centerness(p, mu) -> np.ndarray:
    """Isotropic unit-variance 3D Gaussian density of ``p`` around ``mu``."""
    diff = np.asarray(p, dtype=np.float64) - np.asarray(mu, dtype=np.float64)
    return GAUSS_NORM * np.exp(-0.5 * np.sum(diff * diff, axis=-1))


def normalize_centerness(raw: np.ndarray, groups: np.ndarray) -> np.ndarray:
    """Divide each instance's raw scores by that instance's maximum.

    ``groups`` holds a group index per point, -1 for stuff (which stays 0).
    """
    raw = np.asarray(raw, dtype=np.float64)
    groups = np.asarray(groups)
    out = np.zeros_like(raw)
    m = groups >= 0
    if not m.any():
        return out
    top = np.zeros(int(groups.max()) + 1)
    np.maximum.at(top, groups[m], raw[m])
    out[m] = raw[m] / top[groups[m]]
    return out


@dataclass(frozen=True, eq=False)
class CenternessScores:
    raw: np.ndarray
    normalized: np.ndarray
    groups: np.ndarray


def centerness_scores(frame: Frame, things, centers: Optional[Dict[InstanceKey, np.ndarray]] = None) -> CenternessScores:
    """Raw and per-instance normalized centerness for every point.

    The normalized score is evaluated as exp(-(d^2 - d_min^2) / 2) within
    each instance, which equals raw / max(raw) but cannot underflow to 0/0
    for instances whose points all lie far from the box center.
    """
    groups, keys = instance_groups(frame, things)
    xyz = frame.cloud.xyz
    raw = np.zeros(len(frame))
    norm = np.zeros(len(frame))
    if not keys:
        return CenternessScores(raw, norm, groups)
    if centers is None:
        table = _group_centers(xyz, groups, len(keys))
    else:
        table = np.array([centers[k] for k in keys], dtype=np.float64)
    m = groups >= 0
    diff = xyz[m] - table[groups[m]]
    d2 = np.einsum("ij,ij->i", diff, diff)
    raw[m] = GAUSS_NORM * np.exp(-0.5 * d2)
    d2_min = np.full(len(keys), np.inf)
    np.minimum.at(d2_min, groups[m], d2)
    norm[m] = np.exp(-0.5 * (d2 - d2_min[groups[m]]))
    return CenternessScores(raw, norm, groups)


def selection_keys(frame: Frame, policy: SelectionPolicy, things=(), centers=None) -> np.ndarray:
    """Key per point; the valid point with the smallest key wins its pixel."""
    depth = frame.cloud.ranges
    if policy.variant is Variant.DEPTH:
        keys = depth
    elif policy.variant is Variant.CAP:
        scores = centerness_scores(frame, things, centers)
        keys = depth / (scores.normalized + policy.epsilon)
    else:
        w = policy.class_weights.lookup(frame.ann.semantic)
        keys = depth / (w + policy.epsilon)
    if not np.isfinite(keys).all():
        raise ConfigError("non-finite selection keys; validate the frame first")
    return keys


def load_class_weights(path, label_map: Optional[LabelMap] = None) -> ClassWeights:
    """Read ``class = weight`` lines (class by name or train id; ``default`` for the rest)."""
    kv = read_kv(path)
    table = {}
    default = 0.0
    for key, value in kv.items():
        try:
            w = float(value)
        except ValueError:
            raise ConfigError(f"{path}: weight for {key!r} is not a number: {value!r}") from None
        if key == "default":
            default = w
        elif key.isdigit():
            table[int(key)] = w
        elif label_map is None:
            raise ConfigError(f"{path}: class name {key!r} needs a label map")
        else:
            table[label_map.class_id(key)] = w
    return ClassWeights(table, default)
