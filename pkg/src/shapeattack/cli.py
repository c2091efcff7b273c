"""Command-line entry point.

Exit codes: 0 ok, 2 usage error, 3 oracle/connectivity error, 4 partial
dataset failure, 5 run entry not found, 6 cannot bind the server port.
"""
from __future__ import annotations

import argparse
import json
import logging
import socket
import sys
import urllib.parse
from pathlib import Path

import numpy as np

from . import __version__
from .attack import AttackConfig
from .detector import ENDPOINT_ENV, MOCK, REMOTE, OracleConfig, TargetRegistry
from .errors import InvalidParameterError, OracleError, ShapeAttackError
from .geometry import ELLIPSE, FAMILIES, LINES, POLYGON
from .imaging import DEFAULT_EOT_SCALES, frame_size, load_frame, save_frame

logger = logging.getLogger("shapeattack")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_ORACLE = 3
EXIT_PARTIAL = 4
EXIT_NOT_FOUND = 5
EXIT_BIND = 6


class UsageError(Exception):
    pass


def _color(text: str):
    try:
        parts = tuple(int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"color must be R,G,B integers, got {text!r}")
    if len(parts) != 3 or any(v < 0 or v > 255 for v in parts):
        raise argparse.ArgumentTypeError(f"color must be three values in [0, 255], got {text!r}")
    return parts


def _scales(text: str):
    if text.lower() in ("none", "off", ""):
        return None
    if text.lower() == "default":
        return list(DEFAULT_EOT_SCALES)
    try:
        return [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad scale list {text!r}")


def _box(text: str):
    try:
        vals = [int(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"box must be x1,y1,x2,y2, got {text!r}")
    if len(vals) != 4:
        raise argparse.ArgumentTypeError(f"box must be x1,y1,x2,y2, got {text!r}")
    return tuple(vals)


def _add_oracle_flags(p: argparse.ArgumentParser):
    p.add_argument("--oracle", choices=[MOCK, REMOTE])
    p.add_argument("--endpoint", help=f"remote detector base URL (fallback: ${ENDPOINT_ENV})")
    p.add_argument("--beta", type=float, help="mock objectness slope")
    p.add_argument("--dark-threshold", type=float, help="mock dark-pixel intensity")
    p.add_argument("--timeout", type=float)
    p.add_argument("--retries", type=int)


def _add_attack_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON config file (or a run_manifest.json to replay)")
    p.add_argument("--shape", choices=list(FAMILIES))
    p.add_argument("--line-count", type=int)
    p.add_argument("--edges", type=int)
    p.add_argument("--thickness", type=int)
    p.add_argument("--color", type=_color)
    p.add_argument("--alpha", type=float, help="fusion opacity in (0, 1]")
    p.add_argument("--threshold", type=float)
    p.add_argument("--population", type=int)
    p.add_argument("--iterations", type=int)
    p.add_argument("--omega", type=float)
    p.add_argument("--c1", type=float)
    p.add_argument("--c2", type=float)
    p.add_argument("--r1", type=float)
    p.add_argument("--r2", type=float)
    p.add_argument("--r-mode", choices=["fixed", "resampled"])
    p.add_argument("--v-max", type=float)
    p.add_argument("--eot-scales", type=_scales, default=argparse.SUPPRESS,
                   help="comma list, 'default' for 0.7..1.3, or 'none'")
    p.add_argument("--seed", type=int)
    _add_oracle_flags(p)


def _oracle_overrides(d: dict, args):
    for flag, key in (("oracle", "backend"), ("endpoint", "endpoint"), ("beta", "mock_beta"),
                      ("dark_threshold", "mock_dark_threshold"), ("timeout", "timeout"),
                      ("retries", "retries")):
        v = getattr(args, flag, None)
        if v is not None:
            d[key] = v


def build_config(args) -> AttackConfig:
    """Defaults, then the config file, then flags."""
    cfg = AttackConfig().to_dict()
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.is_file():
            raise UsageError(f"config file not found: {path}")
        doc = json.loads(path.read_text())
        doc = doc.get("config", doc)
        for key, val in doc.items():
            if isinstance(val, dict) and isinstance(cfg.get(key), dict):
                cfg[key] = {**cfg[key], **val}
            else:
                cfg[key] = val

    shape = cfg["shape"]
    if args.shape is not None and args.shape != shape.get("family"):
        shape["family"] = args.shape
        shape["count"] = {LINES: 2, POLYGON: 3, ELLIPSE: 1}[args.shape]
    if args.line_count is not None and shape["family"] == LINES:
        shape["count"] = args.line_count
    if args.edges is not None and shape["family"] == POLYGON:
        shape["count"] = args.edges
    if args.thickness is not None:
        shape["thickness"] = args.thickness
    for flag in ("color", "threshold", "seed", "alpha"):
        v = getattr(args, flag, None)
        if v is not None:
            cfg[flag] = list(v) if flag == "color" else v
    for flag in ("population", "iterations", "omega", "c1", "c2", "r1", "r2", "r_mode", "v_max"):
        v = getattr(args, flag, None)
        if v is not None:
            cfg["hyper"][flag] = v
    if hasattr(args, "eot_scales"):
        cfg["eot_scales"] = args.eot_scales
    _oracle_overrides(cfg["oracle"], args)
    try:
        return AttackConfig.from_dict(cfg)
    except (InvalidParameterError, TypeError) as exc:
        raise UsageError(str(exc))


def build_oracle(args, base: OracleConfig = None) -> OracleConfig:
    d = (base or OracleConfig()).to_dict()
    _oracle_overrides(d, args)
    if d["backend"] == MOCK:
        d["endpoint"] = None
    try:
        return OracleConfig(**d)
    except InvalidParameterError as exc:
        raise UsageError(str(exc))


def check_reachable(oracle: OracleConfig):
    if oracle.backend != REMOTE:
        return
    url = urllib.parse.urlparse(oracle.endpoint)
    port = url.port or (443 if url.scheme == "https" else 80)
    try:
        with socket.create_connection((url.hostname, port), timeout=oracle.timeout):
            pass
    except OSError as exc:
        raise OracleError(f"cannot reach {oracle.endpoint}: {exc}")


def _print(doc):
    print(json.dumps(doc, indent=2, sort_keys=True))


# -- commands -------------------------------------------------------------------

def cmd_attack(args) -> int:
    from .runs import attack_dataset

    if not args.manifest or not Path(args.manifest).is_file():
        raise UsageError(f"manifest not found: {args.manifest}")
    config = build_config(args)
    check_reachable(config.oracle)
    out = Path(args.out)
    run = attack_dataset(args.manifest, config, out_dir=out, workers=args.workers,
                         filter_tall=args.filter_tall)
    _print({**run.summary, "run_dir": str(out)})
    return EXIT_PARTIAL if run.summary["partial_failure"] else EXIT_OK


def _need_run(run_dir) -> Path:
    run = Path(run_dir)
    if not (run / "index.json").is_file():
        raise FileNotFoundError(f"no run found at {run}")
    return run


def cmd_eval(args) -> int:
    from .evaluation import report_from_run

    run = _need_run(args.run)
    report = report_from_run(run)
    report.write(Path(args.out) if args.out else run / "report.json")
    print(report.format_table())
    return EXIT_OK


def cmd_transfer(args) -> int:
    from .evaluation import transfer_eval
    from .runs import load_run_config

    run = _need_run(args.run)
    oracle = build_oracle(args, load_run_config(run).oracle)
    check_reachable(oracle)
    report = transfer_eval(run, oracle)
    report.write(Path(args.out) if args.out else run / "transfer_report.json")
    print(report.format_table())
    return EXIT_OK


def _parse_values(axis: str, text: str):
    from .evaluation import COLOR, GRAY_LADDER

    if axis == COLOR:
        if text == "gray6":
            return list(GRAY_LADDER)
        return [_color(v.strip()) for v in text.split(";") if v.strip()]
    try:
        return [int(v) for v in text.split(",")]
    except ValueError:
        raise UsageError(f"bad value list {text!r}")


def cmd_ablate(args) -> int:
    from .evaluation import AXES, LINE_COUNT, POLYGON_EDGES, ablate

    if not args.manifest or not Path(args.manifest).is_file():
        raise UsageError(f"manifest not found: {args.manifest}")
    if args.axis not in AXES:
        raise UsageError(f"axis must be one of {AXES}")
    if args.shape is None and args.axis in (LINE_COUNT, POLYGON_EDGES):
        args.shape = LINES if args.axis == LINE_COUNT else POLYGON
    config = build_config(args)
    values = _parse_values(args.axis, args.values)
    check_reachable(config.oracle)
    try:
        rows = ablate(args.manifest, config, args.axis, values, out_dir=args.out,
                      workers=args.workers)
    except InvalidParameterError as exc:
        raise UsageError(str(exc))
    print(f"{'value':<16} {'ASR':>7} {'Query':>9} {'N':>4}")
    for r in rows:
        asr = "-" if r["asr"] is None else f"{100 * r['asr']:.1f}"
        q = "-" if r["mean_queries"] is None else f"{r['mean_queries']:.1f}"
        print(f"{r['value']:<16} {asr:>7} {q:>9} {r['n']:>4}")
    return EXIT_OK


def cmd_render(args) -> int:
    from .runs import load_index

    run = _need_run(args.run)
    recs = {r["id"]: r for r in load_index(run)}
    rec = recs.get(args.id)
    if rec is None or "frame" not in rec:
        raise FileNotFoundError(f"run {run} has no rendered entry {args.id!r}")
    adv = load_frame(run / rec["frame"])
    clean = load_frame(rec["image"])
    if clean.shape[2] != adv.shape[2]:
        clean = np.repeat(clean[:, :, :1], adv.shape[2], axis=2)
    out = Path(args.out) if args.out else run / "render"
    save_frame(adv, out / f"{args.id}_adv.png")
    save_frame(np.concatenate([clean, adv], axis=1), out / f"{args.id}_composite.png")
    print(str(out / f"{args.id}_composite.png"))
    return EXIT_OK


def _registry_from_args(args) -> TargetRegistry:
    from .runs import load_manifest

    reg = TargetRegistry()
    if args.manifest:
        if not Path(args.manifest).is_file():
            raise UsageError(f"manifest not found: {args.manifest}")
        for e in load_manifest(args.manifest):
            reg.register(e.id, frame_size(load_frame(e.image)), e.targets)
    if args.target:
        if not args.size:
            raise UsageError("--target needs --size WxH")
        reg.register(None, args.size, args.target)
    return reg


def _size(text: str):
    try:
        w, h = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"size must be WxH, got {text!r}")
    return w, h


def cmd_mock_serve(args) -> int:
    from .server import make_server, serve_forever

    oracle = build_oracle(args)
    oracle = OracleConfig(MOCK, None, oracle.mock_beta, oracle.mock_dark_threshold)
    registry = _registry_from_args(args)
    try:
        server = make_server(oracle, registry, args.host, args.port)
    except OSError as exc:
        print(f"cannot bind {args.host}:{args.port}: {exc}", file=sys.stderr)
        return EXIT_BIND

    def ready(s):
        print(f"listening on {s.url}", flush=True)

    serve_forever(server, ready)
    return EXIT_OK


def cmd_make_corpus(args) -> int:
    from .corpus import make_corpus

    path = make_corpus(args.out, args.count, args.seed, args.width, args.height)
    print(str(path))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="shapeattack", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("attack", help="attack every target in a manifest")
    _add_attack_flags(p)
    p.add_argument("--manifest")
    p.add_argument("--out", default="runs/latest")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--filter-tall", action="store_true",
                   help="keep only targets taller than 120 px")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("eval", help="recompute the ASR report of a run")
    p.add_argument("--run", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("transfer", help="re-query a run's successful frames on another oracle")
    p.add_argument("--run", required=True)
    p.add_argument("--out")
    _add_oracle_flags(p)
    p.set_defaults(func=cmd_transfer)

    p = sub.add_parser("ablate", help="sweep line count, polygon edges, or color")
    _add_attack_flags(p)
    p.add_argument("--manifest")
    p.add_argument("--axis", required=True)
    p.add_argument("--values", required=True,
                   help="ints '1,2,3' or colors '0,0,0;255,255,255' or 'gray6' for six gray levels")
    p.add_argument("--out", default="runs/ablation")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("render", help="write the adversarial frame and a clean|adv composite")
    p.add_argument("--run", required=True)
    p.add_argument("--id", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("mock-serve", help="serve the mock detector over HTTP")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8765)
    p.add_argument("--manifest", help="register every manifest target under its entry id")
    p.add_argument("--target", type=_box, action="append",
                   help="x1,y1,x2,y2 target for requests without a known image_id")
    p.add_argument("--size", type=_size, help="WxH resolution of --target boxes")
    _add_oracle_flags(p)
    p.set_defaults(func=cmd_mock_serve)

    p = sub.add_parser("make-corpus", help="write a synthetic pedestrian corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--width", type=int, default=160)
    p.add_argument("--height", type=int, default=120)
    p.set_defaults(func=cmd_make_corpus)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OracleError as exc:
        print(f"oracle error: {exc}", file=sys.stderr)
        return EXIT_ORACLE
    except FileNotFoundError as exc:
        print(f"not found: {exc}", file=sys.stderr)
        return EXIT_NOT_FOUND
    except ShapeAttackError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
