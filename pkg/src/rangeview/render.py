"""PNG renderings of range images and the baseline / contextual / diff triptych."""

from __future__ import annotations

from typing import Dict, Optional, Tuple

import numpy as np
from PIL import Image

from .analyze import DiffReport
from .ingest import data_path, read_kv
from .model import ConfigError, RangeViewError, StructuralError
from .raster import RangeImage

RGB = Tuple[int, int, int]
WHITE: RGB = (255, 255, 255)
BLACK: RGB = (0, 0, 0)
HIGHLIGHT: RGB = (255, 255, 0)
RULE = 2
CHANNELS = ("range", "remission", "semantic")


class Palette:
    """Class id -> RGB. Unlabeled (class 0) winners are white, empty pixels black."""

    def __init__(self, colors: Dict[int, RGB]):
        for k, c in colors.items():
            if k == 0:
                raise ConfigError("class 0 is reserved for unlabeled (white)")
            if tuple(c) in (WHITE, BLACK):
                raise ConfigError(f"class {k} uses a reserved color {c}")
        self.colors = {int(k): tuple(int(v) for v in c) for k, c in colors.items()}

    def missing(self, class_ids) -> list:
        return sorted(k for k in class_ids if k != 0 and k not in self.colors)

    def lut(self, n: int) -> np.ndarray:
        # classes without an entry fall back to mid gray
        table = np.full((max(n, max(self.colors, default=0) + 1), 3), 128, dtype=np.uint8)
        table[0] = WHITE
        for k, c in self.colors.items():
            table[k] = c
        return table


def load_palette(path=None) -> Palette:
    kv = read_kv(data_path("palette.cfg") if path is None else path)
    colors = {}
    for key, value in kv.items():
        v = value.lstrip("#")
        if len(v) != 6 or not key.isdigit():
            raise ConfigError(f"{path}: expected '<class id> = #rrggbb', got {key} = {value}")
        try:
            colors[int(key)] = (int(v[0:2], 16), int(v[2:4], 16), int(v[4:6], 16))
        except ValueError:
            raise ConfigError(f"{path}: bad color {value!r}") from None
    return Palette(colors)


def render_semantic(img: RangeImage, palette: Palette) -> np.ndarray:
    H, W = img.shape
    out = np.zeros((H, W, 3), dtype=np.uint8)
    occ = img.mask
    lut = palette.lut(int(img.semantic.max(initial=0)) + 1)
    out[occ] = lut[img.semantic[occ]]
    return out


def render_gray(values: np.ndarray, occ: np.ndarray) -> np.ndarray:
    """Min-max over occupied pixels into 1..255 (0 is kept for empty); constant -> 128."""
    out = np.zeros(values.shape, dtype=np.uint8)
    if occ.any():
        v = values[occ]
        lo, hi = v.min(), v.max()
        if hi > lo:
            out[occ] = (1 + np.round((v - lo) / (hi - lo) * 254)).astype(np.uint8)
        else:
            out[occ] = 128
    return np.repeat(out[..., None], 3, axis=2)


def render_channel(img: RangeImage, channel: str, palette: Optional[Palette] = None) -> np.ndarray:
    if channel == "semantic":
        return render_semantic(img, palette or load_palette())
    if channel == "range":
        return render_gray(img.range, img.mask)
    if channel == "remission":
        return render_gray(img.remission, img.mask)
    raise RangeViewError(f"unknown channel {channel!r}; expected one of {CHANNELS}")


def render_diff(diff: DiffReport) -> np.ndarray:
    out = np.zeros(diff.mask.shape + (3,), dtype=np.uint8)
    out[diff.mask] = HIGHLIGHT
    return out


def render_triptych(a: RangeImage, b: RangeImage, diff: DiffReport, palette: Optional[Palette] = None) -> np.ndarray:
    """Baseline on top, contextual in the middle, changed pixels at the bottom,
    separated by white rules; (3H + 4) x W x 3."""
    if a.shape != b.shape or diff.mask.shape != a.shape:
        raise StructuralError(f"shapes differ: {a.shape}, {b.shape}, diff {diff.mask.shape}")
    palette = palette or load_palette()
    W = a.shape[1]
    rule = np.full((RULE, W, 3), 255, dtype=np.uint8)
    return np.concatenate([render_semantic(a, palette), rule, render_semantic(b, palette), rule, render_diff(diff)])


def write_png(raster: np.ndarray, path) -> None:
    raster = np.ascontiguousarray(raster, dtype=np.uint8)
    if raster.ndim != 3 or raster.shape[2] != 3:
        raise StructuralError(f"expected an H x W x 3 raster, got {raster.shape}")
    try:
        Image.fromarray(raster).save(path, format="PNG", optimize=False, compress_level=6)
    except OSError as e:
        raise OSError(f"cannot write PNG to {path}: {e}") from e
