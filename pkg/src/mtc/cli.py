"""Command-line interface: compress, decompress, delta, apply, stats, estimate."""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from pathlib import Path

from .backends import CodecId
from .container import (
    FILE_EXTENSION,
    KIND_DELTA,
    ArchiveStats,
    archive_stats,
    read_model_archive,
    write_model_archive,
)
from .delta import DeltaMode, apply_delta, build_delta, read_delta_archive, write_delta_archive
from .errors import MtcError
from .model import format_percent
from .pipeline import Granularity, Mode, PipelineConfig
from .weightfile import parse_model_file, write_model_file

_SIZE_UNITS = {
    "B": 1,
    "KB": 10**3,
    "MB": 10**6,
    "GB": 10**9,
    "TB": 10**12,
    "PB": 10**15,
}


def _default_threads() -> int:
    try:
        return max(1, int(os.environ.get("MTC_THREADS", "1")))
    except ValueError:
        return 1


def _parse_size(text: str) -> float:
    """Parse '1.26GB' or a plain byte count; decimal units (GB = 10^9)."""
    s = text.strip().upper().replace(" ", "")
    for unit in sorted(_SIZE_UNITS, key=len, reverse=True):
        if s.endswith(unit):
            return float(s[: -len(unit)]) * _SIZE_UNITS[unit]
    return float(s)


def format_size(n: float) -> str:
    """Render a byte count with the largest decimal unit, 3 significant digits."""
    for unit in ("PB", "TB", "GB", "MB", "KB"):
        if n >= _SIZE_UNITS[unit]:
            return f"{n / _SIZE_UNITS[unit]:.3g} {unit}"
    return f"{n:.0f} B"


def _add_pipeline_flags(p: argparse.ArgumentParser, lossy_modes: bool = True) -> None:
    if lossy_modes:
        p.add_argument(
            "--mode",
            choices=[m.value for m in Mode],
            default=Mode.LOSSLESS.value,
            help="lossless keeps every bit; lossy quantizes FP32 layers",
        )
        p.add_argument(
            "--precision-bits",
            type=int,
            metavar="B",
            help="lossy precision: quantities below 2^-B are discarded (1..30)",
        )
    p.add_argument(
        "--group-bytes",
        action=argparse.BooleanOptionalAction,
        default=True,
        help="group same-position bytes of all elements before coding",
    )
    p.add_argument(
        "--sign-split",
        action=argparse.BooleanOptionalAction,
        default=None,
        help="store sign bits as a separate stream (default: off for "
        "lossless, on for lossy)",
    )
    p.add_argument(
        "--codec",
        choices=[c.value for c in CodecId],
        default=CodecId.ZSTD.value,
        help="block compressor backend",
    )
    p.add_argument("--level", type=int, default=3, help="codec level (zstd)")
    p.add_argument(
        "--threads", type=int, default=_default_threads(), metavar="N",
        help="worker threads over layers (default: $MTC_THREADS or 1)",
    )


def _pipeline_config(args: argparse.Namespace, parser: argparse.ArgumentParser) -> PipelineConfig:
    mode = Mode(getattr(args, "mode", Mode.LOSSLESS.value))
    bits = getattr(args, "precision_bits", None)
    if bits is not None and mode is not Mode.LOSSY:
        parser.error("--precision-bits requires --mode lossy")
    if mode is Mode.LOSSY and bits is None:
        parser.error("--mode lossy requires --precision-bits")
    try:
        return PipelineConfig(
            mode=mode,
            byte_group=args.group_bytes,
            sign_split=args.sign_split,
            precision_bits=bits,
            codec=CodecId(args.codec),
            level=args.level,
            granularity=Granularity(getattr(args, "granularity", "layer")),
        )
    except ValueError as e:
        parser.error(str(e))


def _summary_line(stats: ArchiveStats, payload_only: bool, elapsed: float) -> str:
    groups = stats.aggregate_group_percents()
    group_part = f" ({', '.join(groups)})" if groups else ""
    return (
        f"{stats.original_bytes} -> "
        f"{stats.payload_bytes if payload_only else stats.file_bytes} bytes, "
        f"ratio {stats.ratio_percent(payload_only)}{group_part} "
        f"in {elapsed:.2f}s"
    )


def _cmd_compress(args, parser) -> int:
    config = _pipeline_config(args, parser)
    out = Path(args.output) if args.output else Path(args.input + FILE_EXTENSION)
    started = time.monotonic()
    manifest, layers = parse_model_file(Path(args.input).read_bytes())
    entries = write_model_archive(
        out, layers, config, manifest=manifest, threads=args.threads
    )
    elapsed = time.monotonic() - started
    stats = archive_stats(out)
    print(f"{out}: {_summary_line(stats, args.payload_only, elapsed)}")
    fallbacks = [e.name for e in entries if e.fallback_raw]
    if fallbacks:
        print(f"stored losslessly (lossy range fallback): {', '.join(fallbacks)}")
    return 0


def _cmd_decompress(args, parser) -> int:
    out = args.output
    if out is None:
        out = (
            args.input[: -len(FILE_EXTENSION)]
            if args.input.endswith(FILE_EXTENSION)
            else args.input + ".out"
        )
    started = time.monotonic()
    _, manifest, layers = read_model_archive(args.input, threads=args.threads)
    Path(out).write_bytes(write_model_file(manifest, layers))
    print(f"{out}: {len(layers)} layers in {time.monotonic() - started:.2f}s")
    return 0


def _cmd_delta(args, parser) -> int:
    mode = DeltaMode(args.delta_mode)
    if args.precision_bits is not None and mode is not DeltaMode.LOSSY_RESIDUAL:
        parser.error("--precision-bits requires --delta-mode lossy")
    if mode is DeltaMode.LOSSY_RESIDUAL and args.precision_bits is None:
        parser.error("--delta-mode lossy requires --precision-bits")
    out = Path(args.output) if args.output else Path(args.target + ".delta" + FILE_EXTENSION)
    started = time.monotonic()
    _, base_layers = parse_model_file(Path(args.base).read_bytes())
    manifest, target_layers = parse_model_file(Path(args.target).read_bytes())
    desc = build_delta(
        base_layers,
        target_layers,
        mode=mode,
        precision_bits=args.precision_bits,
        byte_group=args.group_bytes,
        sign_split=args.sign_split,
        codec=CodecId(args.codec),
        level=args.level,
        target_name=Path(args.target).name,
        manifest=manifest,
        threads=args.threads,
    )
    write_delta_archive(out, desc)
    elapsed = time.monotonic() - started
    stats = archive_stats(out)
    print(f"{out}: {_summary_line(stats, args.payload_only, elapsed)}")
    return 0


def _cmd_apply(args, parser) -> int:
    out = args.output
    if out is None:
        out = args.delta + ".applied"
    started = time.monotonic()
    _, base_layers = parse_model_file(Path(args.base).read_bytes())
    desc = read_delta_archive(args.delta)
    layers = apply_delta(base_layers, desc, threads=args.threads)
    Path(out).write_bytes(write_model_file(desc.manifest, layers))
    print(f"{out}: {len(layers)} layers in {time.monotonic() - started:.2f}s")
    return 0


def _stats_rows(stats: ArchiveStats, payload_only: bool) -> list[dict]:
    doc = stats.to_dict(payload_only)
    rows = []
    for layer in doc["layers"]:
        rows.append(
            {
                "name": layer["name"],
                "dtype": layer["dtype"],
                "original_bytes": layer["original_bytes"],
                "stored_bytes": layer["stored_bytes"],
                "ratio": layer["ratio_percent"],
                "per_group": " ".join(layer["per_group_percent"]),
                "sign": layer["sign_percent"] or "",
                "fallback": layer["fallback"],
            }
        )
    return rows


def _cmd_stats(args, parser) -> int:
    stats = archive_stats(args.archive)
    if args.json:
        json.dump(stats.to_dict(args.payload_only), sys.stdout, indent=2)
        print()
        return 0
    if args.csv:
        rows = _stats_rows(stats, args.payload_only)
        writer = csv.DictWriter(sys.stdout, fieldnames=list(rows[0]) if rows else ["name"])
        writer.writeheader()
        writer.writerows(rows)
        return 0

    kind = "delta" if stats.kind == KIND_DELTA else "model"
    print(
        f"{args.archive}: {kind} archive, codec {stats.codec.value} "
        f"level {stats.level}, {stats.granularity.value} granularity"
    )
    name_w = max([len(s.name) for s in stats.layers] + [5])
    print(f"{'layer':<{name_w}}  {'dtype':<5} {'bytes':>12} {'ratio':>8}  per-group")
    for s in stats.layers:
        groups = ", ".join(s.group_percents())
        extra = f" sign {format_percent(*s.sign)}" if s.sign else ""
        mark = " [raw]" if s.fallback else ""
        print(
            f"{s.name:<{name_w}}  {s.dtype.value:<5} {s.original_bytes:>12} "
            f"{s.ratio_percent(args.payload_only):>8}  ({groups}){extra}{mark}"
        )
    agg = ", ".join(stats.aggregate_group_percents())
    print(
        f"{'TOTAL':<{name_w}}  {'':<5} {stats.original_bytes:>12} "
        f"{stats.ratio_percent(args.payload_only):>8}" + (f"  ({agg})" if agg else "")
    )
    return 0


def _cmd_estimate(args, parser) -> int:
    if not 0.0 <= args.ratio <= 1.0:
        parser.error("--ratio must be a fraction in [0, 1]")
    size = _parse_size(args.model_size)
    savings = size * args.downloads * (1.0 - args.ratio)
    print(
        f"monthly savings: {format_size(savings)} "
        f"({savings:.3e} bytes = {format_size(size)} x {args.downloads:g} "
        f"downloads x {100 * (1 - args.ratio):.1f}% saved)"
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mtc",
        description="Compress model weight files losslessly or near-losslessly.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("compress", help="compress a weight file into an archive")
    p.add_argument("input")
    p.add_argument("-o", "--output", help=f"archive path (default: input + {FILE_EXTENSION})")
    _add_pipeline_flags(p)
    p.add_argument(
        "--granularity",
        choices=[g.value for g in Granularity],
        default=Granularity.PER_LAYER.value,
        help="compress each layer separately, or the whole model as one stream",
    )
    p.add_argument("--payload-only", action="store_true", help="report codec-only ratios")
    p.set_defaults(func=_cmd_compress)

    p = sub.add_parser("decompress", help="reconstruct a weight file from an archive")
    p.add_argument("input")
    p.add_argument("-o", "--output")
    p.add_argument("--threads", type=int, default=_default_threads())
    p.set_defaults(func=_cmd_decompress)

    p = sub.add_parser("delta", help="compress a model as a delta from a base model")
    p.add_argument("base")
    p.add_argument("target")
    p.add_argument("-o", "--output")
    p.add_argument(
        "--delta-mode",
        choices=[m.value for m in DeltaMode],
        default=DeltaMode.XOR.value,
        help="xor is bit-exact; lossy stores quantized integer residuals",
    )
    p.add_argument("--precision-bits", type=int, metavar="B")
    _add_pipeline_flags(p, lossy_modes=False)
    p.add_argument("--payload-only", action="store_true")
    p.set_defaults(func=_cmd_delta)

    p = sub.add_parser("apply", help="apply a delta archive to its base model")
    p.add_argument("base")
    p.add_argument("delta")
    p.add_argument("-o", "--output")
    p.add_argument("--threads", type=int, default=_default_threads())
    p.set_defaults(func=_cmd_apply)

    p = sub.add_parser("stats", help="per-layer and per-group compression ratios")
    p.add_argument("archive")
    p.add_argument("--payload-only", action="store_true", help="exclude container overhead")
    fmt = p.add_mutually_exclusive_group()
    fmt.add_argument("--json", action="store_true")
    fmt.add_argument("--csv", action="store_true")
    p.set_defaults(func=_cmd_stats)

    p = sub.add_parser(
        "estimate", help="project monthly traffic savings for a model hub"
    )
    p.add_argument("--model-size", required=True, help="e.g. '1.26GB' (decimal units)")
    p.add_argument(
        "--downloads", type=float, required=True, help="monthly downloads, e.g. 63e6"
    )
    p.add_argument(
        "--ratio", type=float, required=True, help="compression ratio as a fraction, e.g. 0.852"
    )
    p.set_defaults(func=_cmd_estimate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args, parser)
    except MtcError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
