"""Spherical coordinates and pixel assignment (spherical projection, scan unfolding).

Column from azimuth::

    w = 0.5 * (1 - theta / pi) * W

Row from elevation::

    h = (1 - (phi - fov_down) / (fov_up - fov_down)) * H

which is the usual ``(1 - (phi + |f_down|) / f_v) * H`` for a sensor whose
field of view straddles the horizon. Azimuth uses ``arctan2`` so every
quadrant is handled.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .model import DegeneratePointError, PointCloud, SensorConfig, StructuralError, UnfoldingError

SPHERICAL = "spherical"
UNFOLD = "unfold"
MODES = (SPHERICAL, UNFOLD)


def spherical_coords(xyz: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorised (r, theta, phi) for an (N, 3) array.

    theta lies in (-pi, pi]. Points at the origin get NaN angles.
    """
    xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
    x, y, z = xyz[:, 0], xyz[:, 1], xyz[:, 2]
    r = np.sqrt(x * x + y * y + z * z)
    theta = np.arctan2(y, x)
    theta[theta == -np.pi] = np.pi
    with np.errstate(invalid="ignore", divide="ignore"):
        phi = np.arcsin(np.clip(z / r, -1.0, 1.0))
    zero = r == 0
    theta[zero] = np.nan
    phi[zero] = np.nan
    return r, theta, phi


def cartesian_to_spherical(p) -> Tuple[float, float, float]:
    """(r, theta, phi) of a single point; raises on the origin."""
    r, theta, phi = spherical_coords(np.asarray(p, dtype=np.float64).reshape(1, 3))
    if not r[0] > 0:
        raise DegeneratePointError(f"point {tuple(p)} is at the sensor origin")
    return float(r[0]), float(theta[0]), float(phi[0])


def spherical_to_cartesian(r, theta, phi):
    r, theta, phi = np.asarray(r), np.asarray(theta), np.asarray(phi)
    c = np.cos(phi)
    return np.stack([r * c * np.cos(theta), r * c * np.sin(theta), r * np.sin(phi)], axis=-1)


def continuous_column(theta: np.ndarray, width: int) -> np.ndarray:
    # keep the unit fraction separate so that doubling W doubles w exactly
    return (0.5 * (1.0 - np.asarray(theta) / math.pi)) * width


def continuous_row(phi: np.ndarray, cfg: SensorConfig) -> np.ndarray:
    return (1.0 - (np.asarray(phi) - cfg.fov_down_rad) / cfg.fov_rad) * cfg.height


def pixel_from_angles(theta, phi, cfg: SensorConfig):
    """Integer (col, row, in_fov) for azimuth/elevation arrays.

    Columns wrap modulo W; rows are clamped to [0, H-1]. ``in_fov`` flags
    elevations inside [fov_down, fov_up].
    """
    theta = np.asarray(theta, dtype=np.float64)
    phi = np.asarray(phi, dtype=np.float64)
    col = np.floor(continuous_column(theta, cfg.width)).astype(np.int64) % cfg.width
    row = np.clip(np.floor(continuous_row(phi, cfg)), 0, cfg.height - 1).astype(np.int64)
    in_fov = (phi >= cfg.fov_down_rad) & (phi <= cfg.fov_up_rad)
    return col, row, in_fov


def spherical_pixel(p, cfg: SensorConfig) -> Tuple[int, int]:
    """(col, row) of one point. Raises on the origin, or when the point lies
    outside the vertical field of view and ``cfg.drop_out_of_fov`` is set."""
    _, theta, phi = cartesian_to_spherical(p)
    col, row, in_fov = pixel_from_angles(theta, phi, cfg)
    if cfg.drop_out_of_fov and not in_fov:
        raise DegeneratePointError(f"point {tuple(p)} is outside the vertical field of view")
    return int(col), int(row)


def unfold_rows(cloud_or_xyz, cfg: SensorConfig = None) -> np.ndarray:
    """Recover scanline rows from firing order.

    The row starts at 0 and increments each time the azimuth wraps, i.e. when
    the signed step between consecutive points exceeds pi against the
    dominant rotation direction (sign of the median step). Points at the
    origin have no azimuth and inherit the row of the preceding point.

    Raises :class:`UnfoldingError` if more than ``cfg.height`` rings are found.
    """
    xyz = cloud_or_xyz.xyz if isinstance(cloud_or_xyz, PointCloud) else np.asarray(cloud_or_xyz).reshape(-1, 3)
    n = len(xyz)
    rows = np.zeros(n, dtype=np.int64)
    if n == 0:
        return rows
    _, theta, _ = spherical_coords(xyz)
    ok = np.flatnonzero(~np.isnan(theta))
    if len(ok) < 2:
        return rows
    step = np.diff(theta[ok])
    direction = 1.0 if np.median(step) >= 0 else -1.0
    wraps = direction * step < -math.pi
    rows[ok] = np.concatenate([[0], np.cumsum(wraps)])
    if len(ok) < n:
        # carry rows forward over degenerate points
        last = np.full(n, -1, dtype=np.int64)
        last[ok] = ok
        last = np.maximum.accumulate(last)
        rows = np.where(last >= 0, rows[np.maximum(last, 0)], 0)
    if cfg is not None and rows[-1] + 1 > cfg.height:
        raise UnfoldingError(int(rows[-1] + 1), cfg.height)
    return rows


@dataclass(frozen=True, eq=False)
class ProjectedPoints:
    col: np.ndarray
    row: np.ndarray
    valid: np.ndarray
    range: np.ndarray
    width: int
    height: int

    def __len__(self) -> int:
        return len(self.col)

    @property
    def pixel(self) -> np.ndarray:
        """Flat pixel index ``row * W + col`` (meaningful only where valid)."""
        return self.row.astype(np.int64) * self.width + self.col.astype(np.int64)


def project_cloud(cloud: PointCloud, cfg: SensorConfig, mode: str = SPHERICAL) -> ProjectedPoints:
    """Assign every point a pixel.

    Spherical mode takes rows from elevation; unfold mode takes them from
    :func:`unfold_rows` (where the field-of-view drop flag does not apply).
    Points at the origin are always invalid.
    """
    if mode not in MODES:
        raise StructuralError(f"unknown projection mode {mode!r}; expected one of {MODES}")
    r, theta, phi = spherical_coords(cloud.xyz)
    valid = r > 0
    t = np.where(valid, theta, 0.0)
    p = np.where(valid, phi, 0.0)
    col, row, in_fov = pixel_from_angles(t, p, cfg)
    if mode == UNFOLD:
        row = unfold_rows(cloud.xyz, cfg)
    elif cfg.drop_out_of_fov:
        valid &= in_fov
    return ProjectedPoints(col, row, valid, r, cfg.width, cfg.height)
