"""Command-line entry point.

    rangeview project SCAN [--labels L] [--policy depth|cap|cwap] ...
    rangeview compare SCAN --labels L --a depth --b cap ...
    rangeview stats   SCAN|DIR [--labels L|DIR] ...
    rangeview sweep   SCAN --widths 512,1024,2048 ...
    rangeview synth   SCENE.cfg --out DIR

Exit status: 0 on success, 1 on data / I/O errors, 2 on usage errors.
Directory inputs are processed frame by frame with a worker pool sized by
``--workers`` or the RANGEVIEW_WORKERS environment variable.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from .analyze import (
    SWEEP_COLUMNS,
    negative_contest_pixels,
    resolution_sweep,
    retention_report,
    to_csv,
    winner_diff,
)
from .ingest import (
    data_path,
    generate_synthetic_scan,
    load_label_map,
    load_sensor_config,
    load_synth_spec,
    read_annotations,
    read_point_cloud,
    write_annotations,
    write_point_cloud,
)
from .model import PointAnnotations, RangeViewError, SelectionPolicy, Variant, validate_frame
from .project import MODES, SPHERICAL, project_cloud
from .raster import rasterize, write_range_image
from .render import CHANNELS, load_palette, render_channel, render_triptych, write_png
from .score import load_class_weights, selection_keys

log = logging.getLogger("rangeview")

WORKERS_ENV = "RANGEVIEW_WORKERS"
STATS_COLUMNS = ("frame", "total_points", "removed", "retained", "retention_ratio", "instance_winner_pixels")


class UsageError(Exception):
    pass


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@dataclass
class Setup:
    label_map: object
    things: frozenset
    cfg: object
    mode: str
    configs: dict


def _setup(args) -> Setup:
    label_path = args.label_map or data_path("semantic-kitti.cfg")
    label_map = load_label_map(label_path)
    cfg = load_sensor_config(args.sensor)
    cfg = cfg.with_size(width=args.width, height=args.height)
    if args.drop_oof:
        cfg = replace(cfg, drop_out_of_fov=True)
    configs = {"label_map": _sha256(label_path)}
    if args.sensor:
        configs["sensor"] = _sha256(args.sensor)
    return Setup(label_map, frozenset(label_map.thing_classes), cfg, args.mode, configs)


def _policy(name: str, args, setup: Setup) -> SelectionPolicy:
    variant = Variant(name)
    weights = None
    if variant is Variant.CWAP:
        if not args.weights:
            raise UsageError("--policy cwap needs --weights FILE")
        weights = load_class_weights(args.weights, setup.label_map)
        setup.configs["weights"] = _sha256(args.weights)
    return SelectionPolicy(variant, args.epsilon, weights)


def _load_frame(scan, labels, setup: Setup):
    cloud = read_point_cloud(scan)
    ann = read_annotations(labels, setup.label_map) if labels else PointAnnotations.unlabeled(len(cloud))
    frame = validate_frame(cloud, ann)
    if frame.removed:
        log.warning("%s: dropped %d non-finite points", scan, frame.removed)
    return frame


def _pairs(scan: Path, labels: Optional[Path]):
    """(scan, label) pairs for a file or a directory of ``.bin`` files."""
    if scan.is_dir():
        scans = sorted(scan.glob("*.bin"))
        if not scans:
            raise RangeViewError(f"{scan}: no .bin files")
        if labels is not None and not labels.is_dir():
            raise UsageError("a scan directory needs a label directory")
        return [(s, labels / (s.stem + ".label") if labels else None) for s in scans]
    if labels is not None and labels.is_dir():
        labels = labels / (scan.stem + ".label")
    return [(scan, labels)]


def _workers(args) -> int:
    if args.workers is not None:
        return max(1, args.workers)
    env = os.environ.get(WORKERS_ENV)
    try:
        return max(1, int(env)) if env else 1
    except ValueError:
        raise UsageError(f"{WORKERS_ENV} must be an integer, got {env!r}") from None


def _map(fn, items, workers: int):
    if workers <= 1 or len(items) <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _manifest(out_dir: Path, name: str, args, setup: Setup, inputs, outputs, **extra) -> Path:
    doc = {
        "command": args.command,
        "tool_version": __version__,
        "inputs": [str(p) for p in inputs],
        "config_sha256": dict(sorted(setup.configs.items())),
        "sensor": {"width": setup.cfg.width, "height": setup.cfg.height, "fov_up": setup.cfg.fov_up,
                   "fov_down": setup.cfg.fov_down, "drop_out_of_fov": setup.cfg.drop_out_of_fov},
        "mode": setup.mode,
        "epsilon": args.epsilon,
        "outputs": [str(p) for p in outputs],
        **extra,
    }
    path = out_dir / name
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


def _need_labels(policies, labels):
    for p in policies:
        if Variant(p) is not Variant.DEPTH and labels is None:
            raise UsageError(f"the {p} policy needs ground-truth labels (--labels); it is a training-time policy")


# ---------------------------------------------------------------------------
# commands


def cmd_project(args) -> int:
    _need_labels([args.policy], args.labels)
    setup = _setup(args)
    policy = _policy(args.policy, args, setup)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    pngs = [c for c in (args.png.split(",") if args.png else []) if c]
    for c in pngs:
        if c not in CHANNELS:
            raise UsageError(f"unknown --png channel {c!r}; expected some of {','.join(CHANNELS)}")
    palette = load_palette(args.palette) if pngs else None
    pairs = _pairs(Path(args.scan), Path(args.labels) if args.labels else None)

    def one(pair):
        scan, labels = pair
        frame = _load_frame(scan, labels, setup)
        img = rasterize(project_cloud(frame.cloud, setup.cfg, setup.mode), selection_keys(frame, policy, setup.things), frame)
        stem = f"{scan.stem}.{policy.variant.value}"
        tensor = out / f"{stem}.rv"
        meta = {"policy": policy.variant.value, "epsilon": policy.epsilon, "mode": setup.mode,
                "scan": str(scan), "labels": str(labels) if labels else None}
        written = [tensor, write_range_image(tensor, img, meta)]
        for c in pngs:
            p = out / f"{stem}.{c}.png"
            write_png(render_channel(img, c, palette), p)
            written.append(p)
        return written

    outputs = [p for group in _map(one, pairs, _workers(args)) for p in group]
    extra = {"policy": policy.variant.value}
    _manifest(out, f"project-{policy.variant.value}.manifest.json", args, setup,
              [p for pair in pairs for p in pair if p], outputs, **extra)
    return 0


def cmd_compare(args) -> int:
    _need_labels([args.a, args.b], args.labels)
    setup = _setup(args)
    pa, pb = _policy(args.a, args, setup), _policy(args.b, args, setup)
    scan = Path(args.scan)
    if scan.is_dir():
        raise UsageError("compare takes a single scan file")
    [(scan, labels)] = _pairs(scan, Path(args.labels) if args.labels else None)
    frame = _load_frame(scan, labels, setup)
    projected = project_cloud(frame.cloud, setup.cfg, setup.mode)
    keys_a = selection_keys(frame, pa, setup.things)
    keys_b = selection_keys(frame, pb, setup.things)
    ia = rasterize(projected, keys_a, frame)
    ib = rasterize(projected, keys_b, frame)
    diff = winner_diff(ia, ib)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stem = f"{scan.stem}.{args.a}-vs-{args.b}"
    png = out / f"{stem}.png"
    write_png(render_triptych(ia, ib, diff, load_palette(args.palette)), png)
    report = {
        "a": args.a,
        "b": args.b,
        **diff.to_dict(),
        "retention_a": retention_report(frame, ia, setup.things).to_dict(),
        "retention_b": retention_report(frame, ib, setup.things).to_dict(),
        "negative_contest_pixels_b": negative_contest_pixels(projected, keys_b),
    }
    js = out / f"{stem}.diff.json"
    js.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    _manifest(out, f"compare-{args.a}-vs-{args.b}.manifest.json", args, setup,
              [p for p in (scan, labels) if p], [png, js], policies=[args.a, args.b])
    print(f"{diff.changed_pixels} pixels changed ({diff.changed_by_label} by label)")
    return 0


def cmd_stats(args) -> int:
    _need_labels([args.policy], args.labels)
    setup = _setup(args)
    policy = _policy(args.policy, args, setup)
    scan = Path(args.scan)
    pairs = _pairs(scan, Path(args.labels) if args.labels else None)

    def one(pair):
        s, l = pair
        frame = _load_frame(s, l, setup)
        img = rasterize(project_cloud(frame.cloud, setup.cfg, setup.mode), selection_keys(frame, policy, setup.things), frame)
        return frame, retention_report(frame, img, setup.things)

    results = _map(one, pairs, _workers(args))
    if scan.is_dir():
        rows = [
            {"frame": s.stem, "total_points": r.total_points, "removed": f.removed, "retained": r.retained,
             "retention_ratio": r.retention_ratio, "instance_winner_pixels": r.instance_winner_pixels}
            for (s, _), (f, r) in zip(pairs, results)
        ]
        text = to_csv(rows, STATS_COLUMNS)
    else:
        frame, rep = results[0]
        text = json.dumps({"frame": scan.stem, "removed": frame.removed, "policy": policy.variant.value,
                           **rep.to_dict()}, indent=2) + "\n"
    _emit(text, args.out)
    return 0


def cmd_sweep(args) -> int:
    _need_labels([args.policy], args.labels)
    try:
        widths = [int(w) for w in args.widths.split(",") if w.strip()]
    except ValueError:
        raise UsageError(f"--widths must be comma-separated integers, got {args.widths!r}") from None
    if not widths or min(widths) < 1:
        raise UsageError("--widths needs positive integers")
    setup = _setup(args)
    policy = _policy(args.policy, args, setup)
    [(scan, labels)] = _pairs(Path(args.scan), Path(args.labels) if args.labels else None)
    frame = _load_frame(scan, labels, setup)
    rows = resolution_sweep(frame, widths, setup.cfg.height, policy, setup.things, setup.cfg)
    _emit(to_csv(rows, SWEEP_COLUMNS), args.out)
    return 0


def cmd_synth(args) -> int:
    spec = load_synth_spec(args.spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    name = args.name or Path(args.spec).stem
    cloud, ann, rows = generate_synthetic_scan(spec)
    label_map = load_label_map(args.label_map)
    paths = [out / f"{name}.bin", out / f"{name}.label", out / f"{name}.rows"]
    write_point_cloud(paths[0], cloud)
    write_annotations(paths[1], ann, label_map)
    paths[2].write_bytes(rows.astype("<u4").tobytes())
    doc = {"command": "synth", "tool_version": __version__, "inputs": [str(args.spec)],
           "config_sha256": {"scene": _sha256(args.spec)}, "seed": spec.seed,
           "points": len(cloud), "outputs": [str(p) for p in paths]}
    (out / f"{name}.manifest.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    print(f"wrote {len(cloud)} points to {paths[0]}")
    return 0


def _emit(text: str, out: Optional[str]) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------------------
# argument parsing


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _frame_options(p: argparse.ArgumentParser, policy: bool = True) -> None:
    p.add_argument("scan", help="scan .bin file (or directory of them where supported)")
    p.add_argument("--labels", help=".label file, or a directory holding <stem>.label files")
    p.add_argument("--label-map", help="label map config (default: SemanticKITTI)")
    p.add_argument("--sensor", help="sensor config (default: 64 x 2048, +3/-25 degrees)")
    p.add_argument("--width", type=int, help="override raster width")
    p.add_argument("--height", type=int, help="override raster height")
    p.add_argument("--mode", choices=MODES, default=SPHERICAL)
    p.add_argument("--drop-oof", action="store_true", help="drop points outside the vertical field of view")
    p.add_argument("--epsilon", type=float, default=1e-6)
    p.add_argument("--weights", help="class weight file (cwap)")
    p.add_argument("--workers", type=int, help=f"frame-level worker threads (default ${WORKERS_ENV} or 1)")
    if policy:
        p.add_argument("--policy", choices=[v.value for v in Variant], default="depth")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rangeview", description="Range-view projection of LiDAR scans with depth, centerness-aware or class-weighted point selection.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("project", help="write range-image tensors (+ sidecar, optional PNGs)")
    _frame_options(p)
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--png", help=f"comma-separated channels to render ({','.join(CHANNELS)})")
    p.add_argument("--palette", help="palette config (default: SemanticKITTI colors)")
    p.set_defaults(func=cmd_project)

    p = sub.add_parser("compare", help="triptych PNG + diff report for two policies")
    _frame_options(p, policy=False)
    p.add_argument("--a", choices=[v.value for v in Variant], default="depth")
    p.add_argument("--b", choices=[v.value for v in Variant], default="cap")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--palette")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("stats", help="retention report (JSON for a file, CSV for a directory)")
    _frame_options(p)
    p.add_argument("--out", help="output file (default: stdout)")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("sweep", help="retention across raster widths (CSV)")
    _frame_options(p)
    p.add_argument("--widths", required=True, help="comma-separated widths, e.g. 512,1024,2048")
    p.add_argument("--out", help="output file (default: stdout)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("synth", help="generate a synthetic .bin/.label/.rows triple from a scene file")
    p.add_argument("spec", help="scene config")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--name", help="output file stem (default: scene file stem)")
    p.add_argument("--label-map", help="label map used to write raw ids (default: SemanticKITTI)")
    p.set_defaults(func=cmd_synth)
    return parser


def run(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(e, file=sys.stderr)
        return 2
    except SystemExit as e:  # --help / --version
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as e:
        print(f"rangeview {args.command}: {e}", file=sys.stderr)
        return 2
    except (RangeViewError, OSError, ValueError) as e:
        print(f"rangeview {args.command}: error: {e}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())
