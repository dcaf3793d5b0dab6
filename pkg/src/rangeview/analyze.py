"""Retention statistics and policy diffs.

"Retained" counts occupied pixels; every occupied pixel has exactly one
winning point, so this is also the number of points that survive.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Sequence, Tuple

import numpy as np

from .model import Frame, SelectionPolicy, SensorConfig, StructuralError
from .project import SPHERICAL, ProjectedPoints, project_cloud
from .raster import RangeImage, rasterize
from .score import selection_keys


@dataclass
class RetentionReport:
    total_points: int
    retained: int
    retention_ratio: float
    per_class: Dict[int, Tuple[int, int, float]] = field(default_factory=dict)
    instance_winner_pixels: int = 0

    def to_dict(self) -> dict:
        return {
            "total_points": self.total_points,
            "retained": self.retained,
            "retention_ratio": self.retention_ratio,
            "instance_winner_pixels": self.instance_winner_pixels,
            "per_class": {
                str(k): {"points": p, "retained": r, "ratio": q} for k, (p, r, q) in sorted(self.per_class.items())
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"


def _ratio(a: int, b: int) -> float:
    return a / b if b else 0.0


def retention_report(frame: Frame, image: RangeImage, things=()) -> RetentionReport:
    """Count surviving points overall, per class, and pixels won by thing classes.

    An empty frame reports a ratio of 0.
    """
    n = len(frame)
    occ = image.mask
    retained = int(occ.sum())
    win_sem = image.semantic[occ]
    classes, pts = np.unique(frame.ann.semantic, return_counts=True)
    won = dict(zip(*np.unique(win_sem, return_counts=True)))
    per_class = {}
    for k in sorted(set(classes.tolist()) | set(int(c) for c in won)):
        p = int(pts[classes == k].sum())
        r = int(won.get(k, 0))
        per_class[int(k)] = (p, r, _ratio(r, p))
    things = np.fromiter(things, dtype=np.int64)
    inst_px = int(np.isin(win_sem, things).sum())
    return RetentionReport(n, retained, _ratio(retained, n), per_class, inst_px)


@dataclass
class DiffReport:
    changed_pixels: int
    changed_by_label: int
    mask: np.ndarray

    def to_dict(self) -> dict:
        H, W = self.mask.shape
        return {"changed_pixels": self.changed_pixels, "changed_by_label": self.changed_by_label, "shape": [H, W]}


def winner_diff(a: RangeImage, b: RangeImage) -> DiffReport:
    """Pixels whose winner differs (occupied vs empty counts as a change).

    A label change is a change in (occupancy, winner class); it implies a
    winner change, never the reverse.
    """
    if a.shape != b.shape:
        raise StructuralError(f"image shapes differ: {a.shape} vs {b.shape}")
    mask = a.winner != b.winner
    label = (a.mask != b.mask) | (a.semantic != b.semantic)
    return DiffReport(int(mask.sum()), int(label.sum()), mask)


def negative_contest_pixels(projected: ProjectedPoints, keys: np.ndarray) -> int:
    """Pixels where two or more negative-key points compete.

    Under the class-weighted policy the most negative key wins, which for
    equal weights means the farthest point; this counts where that applies.
    """
    neg = projected.valid & (np.asarray(keys) < 0)
    _, counts = np.unique(projected.pixel[neg], return_counts=True)
    return int((counts >= 2).sum())


def render_frame(frame: Frame, cfg: SensorConfig, policy: SelectionPolicy, things=(), mode: str = SPHERICAL) -> RangeImage:
    """Project, score and rasterize one frame."""
    projected = project_cloud(frame.cloud, cfg, mode)
    keys = selection_keys(frame, policy, things)
    return rasterize(projected, keys, frame)


SWEEP_COLUMNS = ("width", "height", "retained", "retention_ratio")


def resolution_sweep(
    frame: Frame, widths: Sequence[int], height: int, policy: SelectionPolicy, things=(), cfg: SensorConfig = None
) -> List[dict]:
    """Full projection + rasterization at every width; one row per width."""
    base = cfg or SensorConfig()
    rows = []
    for w in widths:
        if w < 1:
            raise StructuralError(f"width must be positive, got {w}")
        c = base.with_size(width=int(w), height=height)
        img = render_frame(frame, c, policy, things)
        rep = retention_report(frame, img, things)
        rows.append({"width": int(w), "height": height, "retained": rep.retained, "retention_ratio": rep.retention_ratio})
    return rows


def to_csv(rows: Iterable[dict], columns: Sequence[str]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({c: r[c] for c in columns})
    return buf.getvalue()
