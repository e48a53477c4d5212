"""Command-line interface.

Subcommands: encode, decode, metrics, info, sweep, gen-fixture. Reports are
JSON on stdout, or written to --report. Outputs are written atomically
(temporary file + rename), so a failed run never leaves partial files.
"""

import argparse
import json
import os
import sys

import numpy as np

from . import bitstream, compaction, metrics, pipeline, scene
from .config import config_from_q
from .fixture import make_fixture
from .rasterizer import compute_importance, render_targets


def _write_atomic(path, data: bytes):
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        f.write(data)
    os.replace(tmp, path)


def _emit_report(report: dict, path):
    text = json.dumps(report, indent=2, default=_json_default)
    if path:
        with open(path, "w") as f:
            f.write(text + "\n")
    else:
        print(text)


def _json_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj)}")


def _parse_override(text):
    key, sep, value = text.partition("=")
    if not sep:
        raise argparse.ArgumentTypeError(f"override must be key=value: {text!r}")
    if value == "none":
        return key, None
    for cast in (int, float):
        try:
            return key, cast(value)
        except ValueError:
            continue
    return key, value


def _load_model(path):
    """A model is either a .ply or a .potr container."""
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] == bitstream.MAGIC:
        splats, _ = bitstream.decode_container(data)
        return splats, len(data)
    return scene.activate(scene.parse_ply(data)), len(data)


def cmd_encode(args):
    overrides = dict(args.override or [])
    if args.zstd_level is not None:
        overrides["zstd_level"] = args.zstd_level
    cfg = config_from_q(args.quality, **overrides)
    sc = scene.load_scene(args.input, args.cameras)

    sink = None
    if args.verbose:
        sink = lambda d: print(json.dumps(d, default=_json_default),
                               file=sys.stderr)
    result = pipeline.encode_pipeline(sc.splats, sc.cameras, cfg,
                                      threads=args.threads, report_sink=sink)
    _write_atomic(args.output, result.container)

    report = dict(result.report)
    if args.evaluate:
        decoded, _ = pipeline.decode_pipeline(result.container)
        renders = render_targets(decoded, sc.cameras, threads=args.threads)
        m = metrics.compare_renders(result.targets, renders)
        report["psnr_vs_targets"] = m.mean_psnr
        report["ssim_vs_targets"] = m.mean_ssim
    _emit_report(report, args.report)
    return 0


def cmd_decode(args):
    with open(args.input, "rb") as f:
        data = f.read()
    splats, header = pipeline.decode_pipeline(data)
    scene.save_ply(args.output, splats)
    _emit_report({"splats": len(splats), "q": header.q,
                  "output": args.output}, args.report)
    return 0


def cmd_metrics(args):
    splats_a, size_a = _load_model(args.model_a)
    splats_b, size_b = _load_model(args.model_b)
    cams = scene.load_cameras(args.cameras)
    report = metrics.compute_metrics(splats_a, splats_b, cams,
                                     threads=args.threads)
    report.model_size_bytes = size_b
    report.bytes_per_splat = size_b / max(1, len(splats_b))
    if args.model_b.endswith(".potr"):
        with open(args.model_b, "rb") as f:
            report.property_bytes = bitstream.size_report(f.read())["property_bytes"]
    _emit_report(report.to_dict(), args.report)
    return 0


def cmd_info(args):
    with open(args.container, "rb") as f:
        data = f.read()
    header, _ = bitstream.read_container(data)
    sizes = bitstream.size_report(data)
    n = max(1, header.splat_count)
    report = {
        "splat_count": header.splat_count,
        "q": header.q,
        "scale_factors": {
            "sh": header.params.sf_sh, "opacity": header.params.sf_opacity,
            "rotation": header.params.sf_rotation, "scale": header.params.sf_scale,
        },
        "beta": header.beta,
        "gamma": header.gamma,
        "root_center": header.root_center.tolist(),
        "root_half_extent": header.root_half,
        "max_depth": header.max_depth,
        "zstd_level": header.zstd_level,
        "file_bytes": len(data),
        "payload_bytes": sizes["payload_bytes"],
        "bytes_per_splat": len(data) / n,
        "property_bytes": sizes["property_bytes"],
        "property_bytes_per_splat": {k: v / n
                                     for k, v in sizes["property_bytes"].items()},
        "raw_bytes_per_splat": bitstream.UNCOMPRESSED_BYTES_PER_SPLAT,
    }
    _emit_report(report, args.report)
    return 0


def cmd_sweep(args):
    sc = scene.load_scene(args.input, args.cameras)
    cfg = config_from_q(args.quality)
    targets = render_targets(sc.splats, sc.cameras, threads=args.threads)
    _, cam_imp = compute_importance(sc.splats, sc.cameras, threads=args.threads)
    rows = compaction.sweep(sc.splats, sc.cameras, targets, cam_imp,
                            args.lambdas, args.alphas, cfg.zero_threshold,
                            threads=args.threads)
    lines = ["lambda,alpha,ac_sparsity,mean_abs_nonzero_ac,mse"]
    lines += [f"{lam},{alpha},{sp},{mag},{mse}"
              for lam, alpha, sp, mag, mse in rows]
    text = "\n".join(lines) + "\n"
    if args.csv:
        with open(args.csv, "w") as f:
            f.write(text)
    else:
        print(text, end="")
    return 0


def cmd_gen_fixture(args):
    splats, cameras = make_fixture(args.splats, args.cameras, args.seed,
                                   args.resolution)
    os.makedirs(args.output, exist_ok=True)
    scene.save_ply(os.path.join(args.output, "model.ply"), splats)
    entries = [{
        "eye": cam.eye.tolist(),
        "rotation": cam.rotation.reshape(-1).tolist(),
        "fx": cam.fx, "fy": cam.fy, "cx": cam.cx, "cy": cam.cy,
        "width": cam.width, "height": cam.height,
    } for cam in cameras]
    _write_atomic(os.path.join(args.output, "cameras.json"),
                  json.dumps(entries, indent=2).encode())
    print(json.dumps({"model": os.path.join(args.output, "model.ply"),
                      "cameras": os.path.join(args.output, "cameras.json"),
                      "splats": len(splats)}))
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="potr",
                                description="Post-training splat codec")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--threads", type=int, default=1)
        sp.add_argument("--report", help="write the JSON report here instead of stdout")

    e = sub.add_parser("encode", help="compress a model")
    e.add_argument("-i", "--input", required=True, help="model .ply")
    e.add_argument("-c", "--cameras", required=True, help="cameras .json")
    e.add_argument("-q", "--quality", type=float, default=0.5)
    e.add_argument("-o", "--output", required=True, help="output .potr")
    e.add_argument("--zstd-level", type=int, default=None)
    e.add_argument("--override", action="append", type=_parse_override,
                   metavar="KEY=VAL", help="override a derived config field")
    e.add_argument("--evaluate", action="store_true",
                   help="decode and report PSNR/SSIM against the targets")
    e.add_argument("-v", "--verbose", action="store_true",
                   help="stream per-iteration pruning reports to stderr")
    common(e)
    e.set_defaults(func=cmd_encode)

    d = sub.add_parser("decode", help="decompress a container to .ply")
    d.add_argument("-i", "--input", required=True)
    d.add_argument("-o", "--output", required=True)
    common(d)
    d.set_defaults(func=cmd_decode)

    m = sub.add_parser("metrics", help="PSNR/SSIM between two models")
    m.add_argument("-a", "--model-a", required=True)
    m.add_argument("-b", "--model-b", required=True)
    m.add_argument("-c", "--cameras", required=True)
    common(m)
    m.set_defaults(func=cmd_metrics)

    i = sub.add_parser("info", help="inspect a container")
    i.add_argument("container")
    common(i)
    i.set_defaults(func=cmd_info)

    s = sub.add_parser("sweep", help="regularization sweep, CSV output")
    s.add_argument("-i", "--input", required=True)
    s.add_argument("-c", "--cameras", required=True)
    s.add_argument("-q", "--quality", type=float, default=0.5)
    s.add_argument("--lambda", dest="lambdas", type=float, nargs="+",
                   required=True)
    s.add_argument("--alpha", dest="alphas", type=float, nargs="+",
                   required=True)
    s.add_argument("--csv", help="output path (default: stdout)")
    common(s)
    s.set_defaults(func=cmd_sweep)

    g = sub.add_parser("gen-fixture", help="write the synthetic benchmark scene")
    g.add_argument("--splats", type=int, default=10000)
    g.add_argument("--cameras", type=int, default=8)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--resolution", type=int, default=64)
    g.add_argument("-o", "--output", required=True, help="output directory")
    g.set_defaults(func=cmd_gen_fixture)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (scene.SceneFormatError, scene.SceneDataError,
            bitstream.ContainerError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
