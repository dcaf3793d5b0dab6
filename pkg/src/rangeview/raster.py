"""Per-pixel argmin rasterization into a multi-channel range image.

Each pixel keeps the valid point with the smallest selection key; equal
keys go to the point fired first. Empty pixels hold -1 in the continuous
channels and 0 in the id channels.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .model import Frame, SensorConfig, StructuralError
from .project import ProjectedPoints

FLOAT_CHANNELS = ("range", "x", "y", "z", "remission")
UINT_CHANNELS = ("semantic", "instance", "winner")
EMPTY = -1


@dataclass(frozen=True, eq=False)
class RangeImage:
    range: np.ndarray
    xyz: np.ndarray
    remission: np.ndarray
    semantic: np.ndarray
    instance: np.ndarray
    winner: np.ndarray  # point index, -1 where empty

    @property
    def shape(self):
        return self.winner.shape

    @property
    def mask(self) -> np.ndarray:
        return self.winner >= 0

    @property
    def occupied(self) -> int:
        return int(np.count_nonzero(self.winner >= 0))

    def equals(self, other: "RangeImage") -> bool:
        """Exact channel-for-channel equality (NaN-free by construction)."""
        return all(
            np.array_equal(getattr(self, f), getattr(other, f))
            for f in ("range", "xyz", "remission", "semantic", "instance", "winner")
        )


def _check(projected: ProjectedPoints, keys: np.ndarray, frame: Frame) -> None:
    if not (len(projected) == len(keys) == len(frame)):
        raise StructuralError(
            f"length mismatch: {len(projected)} projected, {len(keys)} keys, {len(frame)} frame points"
        )


def empty_image(height: int, width: int) -> RangeImage:
    return RangeImage(
        range=np.full((height, width), float(EMPTY)),
        xyz=np.full((height, width, 3), float(EMPTY)),
        remission=np.full((height, width), float(EMPTY)),
        semantic=np.zeros((height, width), dtype=np.int64),
        instance=np.zeros((height, width), dtype=np.int64),
        winner=np.full((height, width), EMPTY, dtype=np.int64),
    )


def _assemble(winner: np.ndarray, projected: ProjectedPoints, frame: Frame) -> RangeImage:
    img = empty_image(projected.height, projected.width)
    occ = winner >= 0
    idx = winner[occ]
    img.winner[occ] = idx
    img.range[occ] = projected.range[idx]
    img.xyz[occ] = frame.cloud.xyz[idx]
    img.remission[occ] = frame.cloud.remission[idx]
    img.semantic[occ] = frame.ann.semantic[idx]
    img.instance[occ] = frame.ann.instance[idx]
    return img


def winner_plane(projected: ProjectedPoints, keys: np.ndarray) -> np.ndarray:
    """H x W point indices of the per-pixel (key, index) minimum; -1 where empty."""
    idx = np.flatnonzero(projected.valid)
    pix = projected.pixel[idx]
    order = np.lexsort((idx, keys[idx], pix))
    pix_sorted = pix[order]
    head = np.ones(len(order), dtype=bool)
    head[1:] = pix_sorted[1:] != pix_sorted[:-1]
    plane = np.full(projected.height * projected.width, EMPTY, dtype=np.int64)
    plane[pix_sorted[head]] = idx[order[head]]
    return plane.reshape(projected.height, projected.width)


def rasterize(projected: ProjectedPoints, keys: np.ndarray, frame: Frame, cfg: Optional[SensorConfig] = None) -> RangeImage:
    _check(projected, keys, frame)
    if cfg is not None and (cfg.height, cfg.width) != (projected.height, projected.width):
        raise StructuralError("sensor config does not match the projection raster")
    return _assemble(winner_plane(projected, np.asarray(keys, dtype=np.float64)), projected, frame)


def rasterize_oracle(projected: ProjectedPoints, keys: np.ndarray, frame: Frame, cfg: Optional[SensorConfig] = None) -> RangeImage:
    """Slow reference: explicit per-pixel candidate lists sorted by (key, index)."""
    _check(projected, keys, frame)
    H, W = projected.height, projected.width
    buckets = {}
    cols = projected.col.tolist()
    rows = projected.row.tolist()
    valid = projected.valid.tolist()
    key_list = [float(k) for k in keys]
    for i in range(len(key_list)):
        if valid[i]:
            buckets.setdefault((rows[i], cols[i]), []).append((key_list[i], i))

    img = empty_image(H, W)
    xyz = frame.cloud.xyz
    for (r, c), cands in buckets.items():
        cands.sort()
        i = cands[0][1]
        img.winner[r, c] = i
        img.range[r, c] = projected.range[i]
        img.xyz[r, c, :] = xyz[i]
        img.remission[r, c] = frame.cloud.remission[i]
        img.semantic[r, c] = frame.ann.semantic[i]
        img.instance[r, c] = frame.ann.instance[i]
    return img


# ---------------------------------------------------------------------------
# tensor files


def tensor_bytes(img: RangeImage) -> bytes:
    """Planes in order range, x, y, z, remission (float32) then semantic,
    instance, winner+1 (uint32, 0 = empty), all little-endian, row-major."""
    planes = [img.range, img.xyz[..., 0], img.xyz[..., 1], img.xyz[..., 2], img.remission]
    f = np.stack(planes).astype("<f4")
    u = np.stack([img.semantic, img.instance, img.winner + 1]).astype("<u4")
    return f.tobytes() + u.tobytes()


def write_range_image(path, img: RangeImage, meta: dict) -> Path:
    """Write the tensor to ``path`` and a JSON sidecar next to it; returns the sidecar path."""
    path = Path(path)
    path.write_bytes(tensor_bytes(img))
    H, W = img.shape
    sidecar = {
        "shape": [H, W],
        "byte_order": "little",
        "channels": [{"name": n, "dtype": "float32"} for n in FLOAT_CHANNELS]
        + [{"name": n if n != "winner" else "winner_index_plus_one", "dtype": "uint32"} for n in UINT_CHANNELS],
        "fill": {"float": EMPTY, "uint": 0},
        **meta,
    }
    side = path.with_suffix(".json")
    side.write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    return side


def read_range_image(path) -> RangeImage:
    """Load a tensor written by :func:`write_range_image` (float channels come back as float32 values)."""
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    H, W = meta["shape"]
    buf = path.read_bytes()
    nf = len(FLOAT_CHANNELS) * H * W * 4
    if len(buf) != nf + len(UINT_CHANNELS) * H * W * 4:
        raise StructuralError(f"{path}: size does not match shape {H}x{W}")
    f = np.frombuffer(buf[:nf], dtype="<f4").reshape(len(FLOAT_CHANNELS), H, W).astype(np.float64)
    u = np.frombuffer(buf[nf:], dtype="<u4").reshape(len(UINT_CHANNELS), H, W).astype(np.int64)
    return RangeImage(
        range=f[0],
        xyz=np.stack([f[1], f[2], f[3]], axis=-1),
        remission=f[4],
        semantic=u[0],
        instance=u[1],
        winner=u[2] - 1,
    )
