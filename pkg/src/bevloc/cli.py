"""Command-line entry point: ``bevloc <command> [flags]``.

Every command prints line-delimited JSON records on stdout (one per input)
and diagnostics on stderr. File outputs are written atomically.

Exit codes: 0 success, 2 usage error, 3 bad input file, 4 degenerate geometry,
5 precondition violation.
"""
from __future__ import annotations

import argparse
import csv
import io as _io
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import homography as hg
from .errors import BevlocError, ContractError, GeometryError, InputError
from .io import load_yaml, read_labels, write_dump, write_text

log = logging.getLogger("bevloc")

EXIT_OK, EXIT_USAGE, EXIT_INPUT, EXIT_GEOMETRY, EXIT_CONTRACT = 0, 2, 3, 4, 5


# ---------------------------------------------------------------------------
# output helpers


def _clean(x):
    """JSON-safe copy: numpy scalars and arrays unwrapped, inf/nan -> null."""
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    if isinstance(x, np.generic):
        x = x.item()
    if isinstance(x, float) and not math.isfinite(x):
        return None
    return x


def dumps(record: dict) -> str:
    return json.dumps(_clean(record), allow_nan=False)


def emit(record: dict, out=None) -> None:
    out = out or sys.stdout
    out.write(dumps(record) + "\n")
    out.flush()


# ---------------------------------------------------------------------------
# argument types


def _ranged(kind, lo=None, hi=None, lo_open=False, hi_open=False):
    def parse(text):
        try:
            val = kind(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected {kind.__name__}, got {text!r}") from None
        if isinstance(val, float) and not math.isfinite(val):
            raise argparse.ArgumentTypeError("value must be finite")
        if lo is not None and (val <= lo if lo_open else val < lo):
            raise argparse.ArgumentTypeError(f"must be {'>' if lo_open else '>='} {lo}, got {val}")
        if hi is not None and (val >= hi if hi_open else val > hi):
            raise argparse.ArgumentTypeError(f"must be {'<' if hi_open else '<='} {hi}, got {val}")
        return val

    parse.__name__ = kind.__name__
    return parse


FLOAT = _ranged(float)
POS_FLOAT = _ranged(float, 0.0, lo_open=True)
POS_INT = _ranged(int, 1)
NONNEG_INT = _ranged(int, 0)
LAT = _ranged(float, -85.05113, 85.05113)
LON = _ranged(float, -180.0, 180.0)
ZOOM = _ranged(int, 0, 23)
FOV = _ranged(float, 0.0, 90.0, lo_open=True, hi_open=True)


def _section(doc: dict, name: str, allowed) -> dict:
    sec = doc.get(name) or {}
    if not isinstance(sec, dict):
        raise InputError(f"config section {name!r} must be a mapping")
    unknown = sorted(set(sec) - set(allowed))
    if unknown:
        raise InputError(f"config section {name!r}: unknown keys {unknown}")
    return sec


def _config(path, sections) -> dict:
    if path is None:
        return {}
    doc = load_yaml(path)
    unknown = sorted(set(doc) - set(sections))
    if unknown:
        raise InputError(f"{path}: unknown sections {unknown}; expected {sorted(sections)}")
    return {name: _section(doc, name, keys) for name, keys in sections.items()}


def _pick(flag, sec: dict, key: str, default):
    if flag is not None:
        return flag
    return sec.get(key, default)


# ---------------------------------------------------------------------------
# commands


def cmd_warp_pano(args) -> int:
    from .geometry import Attitude, BevCamera, pad_to_equirect, warp_pano
    from .raster import load_image, save_image

    cfg = _config(args.config, {"bev": ("width", "height", "fov"), "attitude": ("roll", "pitch", "yaw")})
    b, a = cfg.get("bev", {}), cfg.get("attitude", {})
    bev = BevCamera(int(_pick(args.width, b, "width", 512)), int(_pick(args.height, b, "height", 512)),
                    float(_pick(args.fov, b, "fov", 85.0)))
    att = Attitude(float(_pick(args.roll, a, "roll", 0.0)), float(_pick(args.pitch, a, "pitch", 0.0)),
                   float(_pick(args.yaw, a, "yaw", 0.0)))
    img = load_image(args.input)
    if args.pad or args.row_offset is not None:
        img = pad_to_equirect(img, args.row_offset)
    out = warp_pano(img, bev, att)
    save_image(out, args.output)
    emit({"command": "warp-pano", "input": str(args.input), "output": str(args.output),
          "width": out.width, "height": out.height})
    return EXIT_OK


def cmd_warp_front(args) -> int:
    from .geometry import FrontCamera, warp_front
    from .raster import load_image, save_image

    cfg = _config(args.config, {"front": ("width", "height", "fov", "tilt"), "output": ("size", "yaw")})
    f, o = cfg.get("front", {}), cfg.get("output", {})
    img = load_image(args.input)
    front = FrontCamera(int(f.get("width", img.width)), int(f.get("height", img.height)),
                        float(_pick(args.fov, f, "fov", 17.5)), float(_pick(args.tilt, f, "tilt", 0.8)))
    size = _pick(args.size, o, "size", (512, 512))
    if isinstance(size, (int, float)):
        size = (size, size)
    if len(size) != 2:
        raise ContractError("output size needs two values (width, height)")
    yaw = float(_pick(args.yaw, o, "yaw", 0.0))
    out = warp_front(img, front, (int(size[0]), int(size[1])), yaw)
    save_image(out, args.output)
    emit({"command": "warp-front", "input": str(args.input), "output": str(args.output),
          "width": out.width, "height": out.height})
    return EXIT_OK


def _patch(args):
    from .georef import PatchMeta

    if args.patch_center is None:
        if args.patch_size is not None:
            raise ContractError("--patch-size needs --patch-center")
        return None
    lat, lon = args.patch_center
    return PatchMeta(lat, lon, args.zoom, args.patch_size if args.patch_size is not None else 512.0)


def cmd_gps2pix(args) -> int:
    from .georef import gps_to_global, gps_to_patch_pixel

    meta = _patch(args)
    if meta is None:
        x, y = gps_to_global(args.lat, args.lon, args.zoom)
        emit({"lat": args.lat, "lon": args.lon, "zoom": args.zoom, "x": x, "y": y})
    else:
        u, v = gps_to_patch_pixel(meta, args.lat, args.lon)
        emit({"lat": args.lat, "lon": args.lon, "zoom": args.zoom, "u": u, "v": v})
    return EXIT_OK


def cmd_pix2gps(args) -> int:
    from .georef import global_to_gps, patch_pixel_to_gps

    meta = _patch(args)
    if meta is None:
        lat, lon = global_to_gps(args.x, args.y, args.zoom)
    else:
        lat, lon = patch_pixel_to_gps(meta, args.x, args.y)
    emit({"x": args.x, "y": args.y, "zoom": args.zoom, "lat": float(lat), "lon": float(lon)})
    return EXIT_OK


def cmd_fix_labels(args) -> int:
    from .georef import PatchMeta, correct_label, gps_to_patch_pixel

    records = read_labels(args.labels)
    rows = []
    for rec in records:
        meta = PatchMeta(rec["center_lat"], rec["center_lon"], rec["zoom"], rec["size"])
        if "legacy_u" in rec:
            u, v, corr = correct_label(meta, rec["lat"], rec["lon"], rec["legacy_u"], rec["legacy_v"])
        else:
            u, v = gps_to_patch_pixel(meta, rec["lat"], rec["lon"])
            corr = None
        out = dict(rec, u=float(u), v=float(v), correction_m=corr)
        rows.append(out)
        emit(out)
    if args.output is not None:
        with open(args.labels, newline="") as fh:
            header = next(csv.reader(fh))
        fields = header + [k for k in ("u", "v", "correction_m") if k not in header]
        with open(args.labels, newline="") as fh:
            originals = list(csv.DictReader(fh))
        buf = _io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
        writer.writeheader()
        for orig, row in zip(originals, rows):
            line = dict(orig)
            line["u"] = repr(row["u"])
            line["v"] = repr(row["v"])
            line["correction_m"] = "" if row["correction_m"] is None else repr(row["correction_m"])
            writer.writerow(line)
        write_text(args.output, buf.getvalue())
    return EXIT_OK


def _label_for(records, image_id):
    if image_id is None:
        if len(records) != 1:
            raise ContractError(f"label file holds {len(records)} records; pick one with --image-id")
        return records[0]
    for rec in records:
        if rec["image_id"] == image_id:
            return rec
    raise InputError(f"image id {image_id!r} not found in the label file")


def _read_gt(path, stride: int):
    """Ground-truth image-pixel homography from a JSON document ``{"homography": [9 numbers]}``,
    returned on the feature grid."""
    try:
        doc = json.loads(Path(path).read_text())
        h = np.asarray(doc["homography"] if isinstance(doc, dict) else doc, dtype=np.float64).reshape(3, 3)
    except FileNotFoundError:
        raise InputError(f"{path}: no such file") from None
    except (ValueError, KeyError, TypeError) as exc:
        raise InputError(f"{path}: expected a document with 9 homography numbers ({exc})") from exc
    return hg.image_to_feature(h, stride)


def cmd_align(args) -> int:
    from .estimator import disambiguate_rotations, estimator_config, locate
    from .georef import PatchMeta
    from .losses import localization_error_m, loss_ori
    from .raster import load_image, save_image

    doc = load_yaml(args.config) if args.config else {}
    if "estimator" in doc:
        extra = sorted(set(doc) - {"estimator"})
        if extra:
            raise InputError(f"{args.config}: unknown sections {extra}")
        doc = doc["estimator"] or {}
    cfg = estimator_config(doc, iterations=args.iters, radius=args.radius)
    label = _label_for(read_labels(args.meta), args.image_id)
    meta = PatchMeta(label["center_lat"], label["center_lon"], label["zoom"], label["size"])
    bev = load_image(args.bev)
    sat = load_image(args.sat)
    if (sat.width, sat.height) != (meta.size, meta.size):
        raise ContractError(f"satellite image is {sat.width}x{sat.height} but the label says size {meta.size:g}")
    if bev.channels != sat.channels:
        # compare like with like: drop colour from whichever side has it
        from .raster import ImageBuffer

        bev, sat = ImageBuffer(bev.gray()), ImageBuffer(sat.gray())
    stride = bev.width // cfg.grid[1]
    gt = _read_gt(args.gt, stride) if args.gt else None

    if args.rotations == 4:
        res, _ = disambiguate_rotations(bev, sat, meta, cfg, gt=gt)
    else:
        res = locate(bev, sat, meta, cfg, gt=gt)
    record = {"image_id": label["image_id"], **res.to_record()}
    record["gps_error_m"] = localization_error_m((res.lat, res.lon), (label["lat"], label["lon"]),
                                                 meta.center_lat, meta.zoom)
    if gt is not None:
        from .estimator import heading

        _, _, theta_gt = heading(hg.feature_to_image(gt, stride), (bev.width, bev.height))
        record["theta_error_deg"] = loss_ori(res.theta, theta_gt)

    if args.overlay:
        from .plotting import overlay

        save_image(overlay(bev, sat, res.homography), args.overlay)
    if args.dump_correlation:
        from .plotting import heatmap

        h, w = res.volume.shape[:2]
        save_image(heatmap(res.volume[h // 2, w // 2]), args.dump_correlation)
    if args.dump_volume:
        write_dump(args.dump_volume, res.volume)
    if args.output:
        write_text(args.output, dumps(record) + "\n")
    emit(record)
    return EXIT_OK


def cmd_bench(args) -> int:
    from .synth import make_overhead, make_pair, run_benchmark, suite_from_dict

    doc = load_yaml(args.suite) if args.suite else {}
    if args.trials is not None:
        doc = {k: v for k, v in doc.items() if k != "records"}
        doc["trials"] = args.trials
    if args.first_seed is not None:
        doc["first_seed"] = args.first_seed
    suite, opts = suite_from_dict(doc)
    if args.rotations is not None:
        opts["rotations"] = args.rotations
    report = run_benchmark(suite, threshold=opts["threshold"], rotations=opts["rotations"], workers=args.workers)
    for trial in report["per_trial"]:
        emit({"kind": "trial", **trial})
    summary = {k: v for k, v in report.items() if k != "per_trial"}
    emit({"kind": "report", **summary})

    if args.report:
        write_text(args.report, json.dumps(_clean(report), indent=2, allow_nan=False) + "\n")
    if args.figure:
        from .plotting import convergence_figure, save_figure

        curves = [t["corner_errors"] for t in report["per_trial"] if t["corner_errors"]]
        save_figure(convergence_figure(report, curves), args.figure)
    if args.overlays:
        from .plotting import overlay
        from .raster import save_image

        folder = Path(args.overlays)
        for trial, t in zip(suite, report["per_trial"]):
            if t.get("homography") is None:
                continue
            pair = make_pair(make_overhead(trial.scene), trial)
            h = np.asarray(t["homography"], dtype=np.float64).reshape(3, 3)
            save_image(overlay(pair.bev, pair.sat, h), folder / f"trial_{trial.scene.seed:05d}.png")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .losses import EvalRecord, summarize

    need = ("pred_lat", "pred_lon", "pred_theta", "gt_lat", "gt_lon", "gt_theta")
    try:
        with open(args.records, newline="") as fh:
            reader = csv.DictReader(fh)
            missing = [c for c in need if c not in (reader.fieldnames or [])]
            if missing:
                raise InputError(f"{args.records}: missing columns {missing}")
            recs = []
            for n, row in enumerate(reader, start=2):
                try:
                    vals = [float(row[c]) for c in need]
                    lat_ref = float(row["lat_ref"]) if row.get("lat_ref") else vals[3]
                    zoom = int(row["zoom"]) if row.get("zoom") else 20
                except (TypeError, ValueError) as exc:
                    raise InputError(f"{args.records}:{n}: bad record ({exc})") from exc
                recs.append(EvalRecord(*vals, lat_ref, zoom))
    except FileNotFoundError:
        raise InputError(f"{args.records}: no such file") from None
    emit(summarize(recs))
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="bevloc", allow_abbrev=False,
        description="Cross-view geo-localization: BEV warping, Web Mercator conversion, "
                    "correlation-driven alignment and synthetic benchmarking.",
        epilog="Exit codes: 0 ok, 2 usage, 3 bad input file, 4 degenerate geometry, 5 precondition violation.",
    )
    p.add_argument("--version", action="version", version=f"bevloc {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add(name, func, help_):
        sp = sub.add_parser(name, help=help_, description=help_, allow_abbrev=False)
        sp.set_defaults(func=func)
        return sp

    sp = add("warp-pano", cmd_warp_pano, "Project an equirectangular panorama to a bird's-eye view.")
    sp.add_argument("--input", required=True, type=Path, help="panorama raster (PNG)")
    sp.add_argument("--output", required=True, type=Path, help="BEV raster to write (PNG)")
    sp.add_argument("--config", type=Path, help="YAML with 'bev' (width, height, fov) and 'attitude' "
                                                "(roll, pitch, yaw) sections; flags override it")
    sp.add_argument("--width", type=POS_INT, help="BEV width in pixels (default 512)")
    sp.add_argument("--height", type=POS_INT, help="BEV height in pixels (default 512)")
    sp.add_argument("--fov", type=FOV, help="BEV field of view in degrees, in (0, 90) (default 85)")
    sp.add_argument("--roll", type=FLOAT, help="camera roll in degrees (default 0)")
    sp.add_argument("--pitch", type=FLOAT, help="camera pitch in degrees (default 0)")
    sp.add_argument("--yaw", type=FLOAT, help="camera yaw in degrees (default 0)")
    sp.add_argument("--pad", action="store_true", help="zero-pad a vertically cropped panorama to 2:1 first")
    sp.add_argument("--row-offset", type=NONNEG_INT,
                    help="row of the full panorama where the crop starts (implies --pad; default: centered)")

    sp = add("warp-front", cmd_warp_front, "Project a front-view pinhole image to a bird's-eye view.")
    sp.add_argument("--input", required=True, type=Path, help="front-view raster (PNG)")
    sp.add_argument("--output", required=True, type=Path, help="BEV raster to write (PNG)")
    sp.add_argument("--config", type=Path, help="YAML with 'front' (width, height, fov, tilt) and 'output' "
                                                "(size, yaw) sections; flags override it")
    sp.add_argument("--fov", type=FOV, help="vertical half field of view in degrees (default 17.5)")
    sp.add_argument("--tilt", type=FLOAT, help="image-plane tilt in degrees (default 0.8)")
    sp.add_argument("--size", type=POS_INT, nargs=2, metavar=("W", "H"), help="output BEV size (default 512 512)")
    sp.add_argument("--yaw", type=FLOAT, help="rotate the BEV by this many degrees about its center (default 0)")

    for name, func, help_ in (("gps2pix", cmd_gps2pix, "Convert GPS to Web Mercator global or patch pixels."),
                              ("pix2gps", cmd_pix2gps, "Convert Web Mercator global or patch pixels to GPS.")):
        sp = add(name, func, help_)
        if name == "gps2pix":
            sp.add_argument("--lat", required=True, type=LAT, help="latitude in degrees (|lat| <= 85.05113)")
            sp.add_argument("--lon", required=True, type=LON, help="longitude in degrees")
        else:
            sp.add_argument("--x", required=True, type=FLOAT, help="global (or patch, with --patch-center) column")
            sp.add_argument("--y", required=True, type=FLOAT, help="global (or patch, with --patch-center) row")
        sp.add_argument("--zoom", required=True, type=ZOOM, help="zoom level 0..23")
        sp.add_argument("--patch-center", type=FLOAT, nargs=2, metavar=("LAT", "LON"),
                        help="work in the pixel frame of a patch centered here")
        sp.add_argument("--patch-size", type=POS_FLOAT, help="patch side in pixels (default 512)")

    sp = add("fix-labels", cmd_fix_labels, "Recompute patch pixel labels from GPS.")
    sp.add_argument("--labels", required=True, type=Path,
                    help="CSV with image_id, lat, lon, center_lat, center_lon, zoom, size "
                         "[, legacy_u, legacy_v]")
    sp.add_argument("--output", type=Path, help="write the CSV with u, v, correction_m appended")

    sp = add("align", cmd_align, "Estimate the BEV to satellite homography and read out the pose.")
    sp.add_argument("--bev", required=True, type=Path, help="BEV raster")
    sp.add_argument("--sat", required=True, type=Path, help="satellite patch raster (square, label size)")
    sp.add_argument("--meta", required=True, type=Path, help="label CSV describing the satellite patch")
    sp.add_argument("--image-id", help="label record to use (required if the file has several)")
    sp.add_argument("--rotations", type=int, choices=(1, 4), default=1,
                    help="4 tries every quarter turn of the BEV and keeps the most confident")
    sp.add_argument("--iters", type=POS_INT, help="refinement iterations (default 6)")
    sp.add_argument("--radius", type=POS_INT, help="correlation lookup radius in cells (default 4)")
    sp.add_argument("--config", type=Path, help="YAML estimator settings (top level or under 'estimator')")
    sp.add_argument("--gt", type=Path, help="JSON with the true image homography, to record per-step errors")
    sp.add_argument("--output", type=Path, help="also write the result record to this file")
    sp.add_argument("--overlay", type=Path, help="write the warped BEV composited on the satellite image")
    sp.add_argument("--dump-correlation", type=Path,
                    help="write the center BEV cell's correlation map as a heatmap raster")
    sp.add_argument("--dump-volume", type=Path, help="write the correlation volume as a binary dump")

    sp = add("bench", cmd_bench, "Run the synthetic alignment benchmark.")
    sp.add_argument("--suite", type=Path, help="YAML suite (trials, first_seed, threshold, rotations, estimator, "
                                               "scene/trial defaults or explicit records)")
    sp.add_argument("--trials", type=POS_INT, help="override the number of consecutive-seed trials")
    sp.add_argument("--first-seed", type=NONNEG_INT, help="override the first seed")
    sp.add_argument("--rotations", type=int, choices=(1, 4), help="override the rotation search")
    sp.add_argument("--workers", type=POS_INT, default=1, help="parallel worker processes (default 1)")
    sp.add_argument("--report", type=Path, help="write the full report as JSON")
    sp.add_argument("--figure", type=Path, help="write the convergence figure (format from suffix)")
    sp.add_argument("--overlays", type=Path, help="directory for per-trial overlay rasters")

    sp = add("eval", cmd_eval, "Summarize localization errors of prediction records.")
    sp.add_argument("--records", required=True, type=Path,
                    help="CSV with pred_lat, pred_lon, pred_theta, gt_lat, gt_lon, gt_theta [, lat_ref, zoom]")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="bevloc: %(levelname)s: %(message)s", stream=sys.stderr)
    if args.command == "warp-pano" and args.row_offset is not None:
        args.pad = True
    try:
        return args.func(args)
    except InputError as exc:
        code, msg = EXIT_INPUT, str(exc)
    except GeometryError as exc:
        code, msg = EXIT_GEOMETRY, str(exc)
    except ContractError as exc:
        code, msg = EXIT_CONTRACT, str(exc)
    except BevlocError as exc:
        code, msg = EXIT_CONTRACT, str(exc)
    except OSError as exc:
        code, msg = EXIT_INPUT, str(exc)
    print(f"bevloc: error: {msg}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
