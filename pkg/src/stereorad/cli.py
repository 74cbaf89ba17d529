"""Command-line interface: projection/reconstruction batches, DRR rendering,
rigid fitting, phantom generation, and the annotation service launcher.

Calibration precedence: --cal flag, then the STEREORAD_CALIBRATION
environment variable, then the bundled hss-default profile. CSV is used for
point data, JSON for structured artifacts (transforms, render sidecars).
Exit codes: 0 success, 1 per-record failures (unless --partial-ok),
2 fatal errors.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from contextlib import contextmanager
from pathlib import Path

from stereorad import __version__
from stereorad.geometry import (
    ScannerCalibration,
    SingularProjection,
    View,
    load_calibration,
    project_frontal,
    project_lateral,
    with_scan_frame,
)
from stereorad.landmarks import (
    LandmarkFormatError,
    fit_rigid,
    pairs_from_2d,
    read_landmarks_3d,
    reconstruct_set,
)
from stereorad.renderer import (
    ExportMapping,
    Geometry,
    RenderRequest,
    export_image,
    render,
    write_sidecar,
)
from stereorad.volume import TransferFunction, TransferMode, load_volume, save_volume

CALIBRATION_ENV = "STEREORAD_CALIBRATION"


class CliError(Exception):
    """Fatal CLI error (exit code 2)."""


def resolve_calibration(flag: str | None) -> ScannerCalibration:
    source = flag or os.environ.get(CALIBRATION_ENV) or "hss-default"
    return load_calibration(source)


def _read_csv_rows(path: str, columns: tuple[str, ...]):
    try:
        text = Path(path).read_text() if path != "-" else sys.stdin.read()
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc}") from exc
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames is None:
        raise CliError(f"{path}: empty CSV")
    missing = [c for c in columns if c not in reader.fieldnames]
    if missing:
        raise CliError(f"{path}: missing CSV columns {missing}")
    for lineno, row in enumerate(reader, start=2):
        if all((v or "").strip() == "" for v in row.values()):
            continue
        yield lineno, row


def _float_cell(path: str, lineno: int, row: dict, key: str) -> float:
    try:
        return float(row[key])
    except (TypeError, ValueError) as exc:
        raise CliError(f"{path}: row {lineno}: bad {key!r} value {row.get(key)!r}") from exc


@contextmanager
def _csv_out(path: str | None):
    if path is None:
        yield csv.writer(sys.stdout)
    else:
        with open(path, "w", newline="") as fh:
            yield csv.writer(fh)


def cmd_project(args) -> int:
    from stereorad.geometry import WorldPoint

    cal = resolve_calibration(args.cal)
    failures = 0
    with _csv_out(args.out) as out:
        out.writerow(["label", "view", "u", "v", "status"])
        for lineno, row in _read_csv_rows(args.points, ("label", "x", "y", "z")):
            p = WorldPoint(_float_cell(args.points, lineno, row, "x"),
                           _float_cell(args.points, lineno, row, "y"),
                           _float_cell(args.points, lineno, row, "z"))
            for view, fn in ((View.FRONTAL, project_frontal),
                             (View.LATERAL, project_lateral)):
                try:
                    ip = fn(p, cal)
                    out.writerow([row["label"], view.value, repr(ip.u), repr(ip.v), "ok"])
                except SingularProjection:
                    out.writerow([row["label"], view.value, "", "", "singular"])
                    failures += 1
    if failures:
        print(f"{failures} singular projection(s)", file=sys.stderr)
    return 1 if failures and not args.partial_ok else 0


def cmd_reconstruct(args) -> int:
    from stereorad.geometry import ImagePoint

    cal = resolve_calibration(args.cal)
    points = []
    for lineno, row in _read_csv_rows(args.pairs, ("label", "view", "u", "v")):
        if row.get("status", "ok").strip() not in ("", "ok"):
            continue
        try:
            view = View(row["view"].strip().lower())
        except ValueError as exc:
            raise CliError(f"{args.pairs}: row {lineno}: unknown view {row['view']!r}") from exc
        points.append((row["label"], ImagePoint(
            view, _float_cell(args.pairs, lineno, row, "u"),
            _float_cell(args.pairs, lineno, row, "v"))))
    try:
        pairs = pairs_from_2d(points)
    except LandmarkFormatError as exc:
        raise CliError(f"{args.pairs}: {exc}") from exc
    landmarks, diags = reconstruct_set(pairs, cal)
    by_label = dict(landmarks.entries)
    failures = 0
    with _csv_out(args.out) as out:
        out.writerow(["label", "x", "y", "z", "row_mismatch", "residual", "status"])
        for d in diags:
            if d.ok:
                p = by_label[d.label]
                out.writerow([d.label, repr(p.x), repr(p.y), repr(p.z),
                              repr(d.row_mismatch), repr(d.reprojection_residual_px), "ok"])
            else:
                out.writerow([d.label, "", "", "", repr(d.row_mismatch), "", "degenerate"])
                failures += 1
    if failures:
        print(f"{failures} degenerate pair(s)", file=sys.stderr)
    return 1 if failures and not args.partial_ok else 0


def _transfer_function(args) -> TransferFunction:
    mode = TransferMode(args.tf)
    return TransferFunction(mode, threshold=args.tf_threshold, window=args.tf_window)


def cmd_drr(args) -> int:
    vol = load_volume(args.volume)
    cal = resolve_calibration(args.cal)
    if args.frame_to_volume:
        lo, hi = vol.world_extent()
        rows = int(math.ceil((hi[2] - lo[2]) / cal.pitch_vertical))
        cal = with_scan_frame(cal, float(hi[2]), rows)
    row_range = None
    if args.rows:
        try:
            v0, v1 = (int(t) for t in args.rows.split(":"))
        except ValueError as exc:
            raise CliError(f"--rows expects START:STOP, got {args.rows!r}") from exc
        row_range = (v0, v1)
    req = RenderRequest(Geometry(args.geometry), View(args.view), cal,
                        row_range=row_range, step=args.step,
                        tf=_transfer_function(args),
                        source_height=args.source_height)
    img = render(req, vol, workers=args.workers)
    out = Path(args.out)
    fmt = {".pgm": "pgm16", ".png": "png16"}.get(out.suffix.lower())
    if fmt is None:
        raise CliError(f"output must end in .pgm or .png, got {out.name!r}")
    mapping = None
    if args.gamma != 1.0 or args.invert:
        mapping = ExportMapping(img.mapping.lo, img.mapping.hi,
                                gamma=args.gamma, invert=args.invert)
    export_image(img, out, fmt, mapping=mapping)
    write_sidecar(req.resolve(vol), out.with_suffix(".json"))
    print(f"wrote {out} ({img.rows}x{img.cols}) and {out.with_suffix('.json').name}")
    return 0


def cmd_fit(args) -> int:
    try:
        model = read_landmarks_3d(Path(args.model).read_text())
        target = read_landmarks_3d(Path(args.target).read_text())
    except OSError as exc:
        raise CliError(str(exc)) from exc
    except LandmarkFormatError as exc:
        raise CliError(str(exc)) from exc
    transform, rms = fit_rigid(model, target)
    doc = transform.to_dict()
    doc["rms_mm"] = rms
    text = json.dumps(doc, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return 0


def cmd_phantom(args) -> int:
    vol = load_volume(args.spec)
    out = Path(args.out)
    if out.suffix.lower() != ".mhd":
        raise CliError(f"phantom output must end in .mhd, got {out.name!r}")
    save_volume(vol, out, element_type=args.element_type)
    print(f"wrote {out} and {out.stem}.raw ({vol.dims[0]}x{vol.dims[1]}x{vol.dims[2]})")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from stereorad.service.app import create_app

    cal = resolve_calibration(args.cal)
    app = create_app(session_dir=args.session_dir, calibration=cal,
                     ui_dir=args.ui_dir)
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stereorad",
        description="Biplanar slot-scanner geometry toolkit: project and "
                    "reconstruct landmarks, render synthetic radiographs, fit "
                    "rigid models, and host the annotation service.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_cal(p):
        p.add_argument("--cal", help="calibration JSON path or 'hss-default' "
                                     f"(default: ${CALIBRATION_ENV} or hss-default)")

    p = sub.add_parser("project", help="project 3D landmark CSV to both views")
    p.add_argument("points", help="CSV with columns label,x,y,z ('-' for stdin)")
    p.add_argument("--out", help="output CSV path (default: stdout)")
    p.add_argument("--partial-ok", action="store_true",
                   help="exit 0 even if some points fail")
    add_cal(p)
    p.set_defaults(fn=cmd_project)

    p = sub.add_parser("reconstruct", help="reconstruct 3D points from 2D landmark CSV")
    p.add_argument("pairs", help="CSV with columns label,view,u,v ('-' for stdin)")
    p.add_argument("--out", help="output CSV path (default: stdout)")
    p.add_argument("--partial-ok", action="store_true")
    add_cal(p)
    p.set_defaults(fn=cmd_reconstruct)

    p = sub.add_parser("drr", help="render a synthetic radiograph from a volume")
    p.add_argument("volume", help=".mhd header or phantom .json")
    p.add_argument("--out", required=True, help="output image (.pgm or .png, 16-bit)")
    p.add_argument("--geometry", choices=[g.value for g in Geometry],
                   default=Geometry.SLOT_SCAN.value)
    p.add_argument("--view", choices=[v.value for v in View], default=View.FRONTAL.value)
    p.add_argument("--step", type=float, help="integration step mm (default: half voxel)")
    p.add_argument("--rows", help="row range START:STOP (default: cover the volume)")
    p.add_argument("--tf", choices=[m.value for m in TransferMode],
                   default=TransferMode.IDENTITY.value, help="transfer function")
    p.add_argument("--tf-threshold", type=float, default=0.0)
    p.add_argument("--tf-window", type=float, default=1.0)
    p.add_argument("--source-height", type=float,
                   help="pinhole source height mm (default: volume z-center)")
    p.add_argument("--workers", type=int, default=os.cpu_count(),
                   help="row-parallel worker processes")
    p.add_argument("--frame-to-volume", action="store_true",
                   help="align row 0 with the volume top and cover it exactly")
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--invert", action="store_true",
                   help="bright-bone display (invert grayscale)")
    add_cal(p)
    p.set_defaults(fn=cmd_drr)

    p = sub.add_parser("fit", help="rigid 6-DOF fit of a model landmark set to a target")
    p.add_argument("model", help="model CSV (label,x,y,z)")
    p.add_argument("target", help="target CSV (label,x,y,z)")
    p.add_argument("--out", help="write transform JSON here as well as stdout")
    p.set_defaults(fn=cmd_fit)

    p = sub.add_parser("phantom", help="voxelise a phantom description to .mhd/.raw")
    p.add_argument("spec", help="phantom JSON description")
    p.add_argument("out", help="output .mhd path")
    p.add_argument("--element-type", choices=["MET_FLOAT", "MET_SHORT"],
                   default="MET_FLOAT")
    p.set_defaults(fn=cmd_phantom)

    p = sub.add_parser("serve", help="run the landmark annotation service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8420)
    p.add_argument("--session-dir", default="./sessions")
    p.add_argument("--ui-dir", help="built UI bundle to serve at / "
                                    "(default: ./frontend/dist if present)")
    add_cal(p)
    p.set_defaults(fn=cmd_serve)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
