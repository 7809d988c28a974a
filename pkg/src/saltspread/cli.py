"""Command-line entry point.

Machine-readable results always go to files; stdout carries a short human
summary.  Exit codes: 0 success, 1 input/validation error, 2 internal
invariant failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
from pathlib import Path

from . import analysis, rfid, simulation, telemetry
from .controller import load_config
from .errors import InputError, InvariantError

CONFIG_DIR_ENV = "SALTSPREAD_CONFIG_DIR"

TRACE_FMT = f"trace CSV header: {telemetry.TRACE_HEADER} (empty pavement_temp_f allowed)"
TAGS_FMT = ("tag placement JSON: [{\"chainage_ft\": F, \"tag\": {\"tag_id\": N, \"command\": "
            "RateAdjust|WidthSet|MaterialSet|StopApplication|PatternSet, \"magnitude\": N, \"extent_ft\": N}}]")
ACC_FMT = f"accident CSV header: {analysis.ACCIDENT_HEADER}"
CFG_FMT = ("config: preset tsp-2018 | tsp-initial | nysdot-general, a name in $"
           f"{CONFIG_DIR_ENV}/<name>.cfg, or a path to a 'key = value' file")
RUN_FMT = "run CSV header: " + ",".join(simulation.RUN_COLUMNS)


def atomic_write(path: str | Path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise


def _read(path: str) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror}") from None


def _json_bytes(obj) -> bytes:
    return (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode("utf-8")


def _load_trace(args) -> telemetry.Trace:
    try:
        trace = telemetry.parse_trace(_read(args.trace), route_id=Path(args.trace).stem)
    except InputError as exc:
        raise InputError(f"{args.trace}: {exc}") from None
    if getattr(args, "window_ms", 0):
        trace = telemetry.moving_average(trace, telemetry.FilterConfig(args.window_ms))
    return trace


def _load_tags(args) -> list[rfid.Placement]:
    if not getattr(args, "tags", None):
        return []
    return rfid.parse_placements(_read(args.tags), source=args.tags)


def _config(args):
    return load_config(args.config, os.environ.get(CONFIG_DIR_ENV))


def _range(text: str) -> tuple[float, float, float]:
    try:
        a, b, c = (float(x) for x in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected start:stop:step, got {text!r}") from None
    return a, b, c


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_replay(args) -> int:
    trace = _load_trace(args)
    run = simulation.run(trace, _load_tags(args), _config(args), args.step_ft, args.blast_ms)
    csv, summary = simulation.emit_run(run)
    out = Path(args.out)
    atomic_write(out / "run.csv", csv)
    atomic_write(out / "summary.json", summary)
    print(f"{len(run)} steps over {run.distance_mi:.3f} mi, total {run.total_salt_lb:.1f} lb/lane -> {out}")
    return 0


def cmd_synth(args) -> int:
    if args.spec in simulation.ROUTE_PRESETS:
        spec = simulation.ROUTE_PRESETS[args.spec]()
    else:
        try:
            spec = simulation.RouteSpec.from_json(json.loads(_read(args.spec)))
        except json.JSONDecodeError as exc:
            raise InputError(f"{args.spec}: line {exc.lineno}: {exc.msg}") from None
    trace = simulation.synth_route(spec, args.seed)
    atomic_write(args.out, telemetry.emit_trace(trace))
    msg = f"{len(trace)} samples, {spec.length_ft:.0f} ft -> {args.out}"
    if args.tags_out:
        tags = simulation.tsp_like()[1] if args.spec == "tsp-like" else []
        atomic_write(args.tags_out, rfid.dump_placements(tags).encode("utf-8"))
        msg += f"; {len(tags)} tags -> {args.tags_out}"
    if args.accidents_out:
        gen = load_config(args.accidents_config, os.environ.get(CONFIG_DIR_ENV))
        acc = analysis.synth_accidents(trace, gen, args.accidents_n, args.seed,
                                       dry_fraction=args.dry_fraction)
        atomic_write(args.accidents_out, analysis.emit_accidents(acc))
        msg += f"; {len(acc)} accidents -> {args.accidents_out}"
    print(msg)
    return 0


def cmd_compare(args) -> int:
    trace = _load_trace(args)
    res = simulation.compare_policies(trace, _load_tags(args), _config(args), args.flat_rate, args.step_ft)
    if args.out:
        atomic_write(args.out, _json_bytes(res.to_json()))
    print(
        f"flat {res.flat_rate:g}: {res.flat_rate_total_lb:.1f} lb; variable: {res.variable_total_lb:.1f} lb "
        f"({res.savings_pct:.1f}% saved); rate range [{res.rate_min_seen:.1f}, {res.rate_max_seen:.1f}]"
    )
    return 0


def cmd_tune(args) -> int:
    trace = _load_trace(args)
    accidents = analysis.parse_accidents(_read(args.accidents), source=args.accidents)
    grid = analysis.TuneGrid.from_ranges(args.k2_incline, args.k2_decline, args.k3)
    res = analysis.tune_constants(
        trace, accidents, _config(args), grid, args.conserve_total, args.segment_mi,
        args.direction, _load_tags(args), args.step_ft, args.jobs, not args.no_ice,
    )
    atomic_write(args.out, analysis.tune_report_json(res))
    corr = "undefined" if res.correlation is None else f"{res.correlation:.4f}"
    print(
        f"best k2_incline={res.best_k2_incline:g} k2_decline={res.best_k2_decline:g} k3={res.best_k3:g} "
        f"spearman={corr} over {res.grid_evaluated} points; total {res.total_salt_before:.1f} -> "
        f"{res.total_salt_after:.1f} lb -> {args.out}"
    )
    return 0


def cmd_analyze(args) -> int:
    trace = _load_trace(args)
    run = simulation.run(trace, _load_tags(args), _config(args), args.step_ft)
    accidents = analysis.parse_accidents(_read(args.accidents), source=args.accidents)
    records = analysis.by_direction(analysis.winter_filter(accidents, not args.no_ice), args.direction)
    stats = analysis.segment_stats(run, records, args.segment_mi)
    corr = analysis.correlate(run, stats, args.segment_mi)
    out = Path(args.out)
    atomic_write(out / "segments.csv", analysis.segment_stats_csv(stats))
    atomic_write(out / "correlation.json", _json_bytes(
        {"pearson": corr.pearson, "spearman": corr.spearman, "segments": corr.segments,
         "winter_accidents": len(records), "segment_mi": args.segment_mi}))
    fmt = lambda v: "undefined" if v is None else f"{v:.4f}"  # noqa: E731
    print(f"{len(stats)} segments, {len(records)} winter accidents; "
          f"pearson {fmt(corr.pearson)}, spearman {fmt(corr.spearman)} -> {out}")
    return 0


def cmd_filter_trace(args) -> int:
    trace = telemetry.parse_trace(_read(args.trace))
    filtered = telemetry.moving_average(trace, telemetry.FilterConfig(args.window_ms))
    atomic_write(args.out, telemetry.emit_trace(filtered))
    gaps = trace.gaps()
    print(f"{len(trace)} samples filtered with {args.window_ms} ms window"
          + (f"; {gaps.size} sampling gaps flagged" if gaps.size else "") + f" -> {args.out}")
    return 0


def cmd_encode_tag(args) -> int:
    tag = rfid.RoadsideTag(args.tag_id, args.command, args.magnitude, args.extent_ft)
    payload = rfid.encode_tag(tag)
    if args.out:
        atomic_write(args.out, payload)
    print(payload.hex().upper())
    return 0


def cmd_decode_tag(args) -> int:
    if args.hex is not None:
        try:
            payload = bytes.fromhex(args.hex)
        except ValueError:
            raise InputError(f"not a hex string: {args.hex!r}") from None
    else:
        payload = _read(args.file)
    tag = rfid.decode_tag(payload)
    obj = tag.to_json()
    if args.out:
        atomic_write(args.out, _json_bytes(obj))
    print(json.dumps(obj, sort_keys=True))
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _add_trace(p, filtered=True):
    p.add_argument("--trace", required=True, help=TRACE_FMT)
    if filtered:
        p.add_argument("--window-ms", type=int, default=500,
                       help="moving-average window applied before replay; 0 disables (default 500)")


def _add_common(p):
    p.add_argument("--config", default="tsp-2018", help=CFG_FMT)
    p.add_argument("--tags", help=TAGS_FMT)
    p.add_argument("--step-ft", type=float, default=simulation.STEP_FT, help="replay step in feet (default 2)")


class _Parser(argparse.ArgumentParser):
    # usage errors are input errors (exit 1); 2 is reserved for invariant failures
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.RawDescriptionHelpFormatter
    parser = _Parser(prog="saltspread", description=__doc__, formatter_class=fmt)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("replay", help="replay a trace through the controller", formatter_class=fmt,
                       epilog=f"{TRACE_FMT}\n{TAGS_FMT}\n{RUN_FMT}\nwrites OUT/run.csv and OUT/summary.json")
    _add_trace(p)
    _add_common(p)
    p.add_argument("--blast-ms", type=int, action="append", default=[],
                   help="blast button press time in trace milliseconds (repeatable)")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("synth", help="generate a synthetic route trace", formatter_class=fmt,
                       epilog=("route spec JSON: {\"route_id\": S, \"segments\": [{\"length_ft\": F, "
                               "\"grade_pct\": F, \"radius_ft\": F|null, \"speed_mph\": F, "
                               "\"pavement_temp_f\": F|null}], \"noise\": {\"incline_sd\": F, \"omega_sd\": F}}\n"
                               f"presets: {', '.join(simulation.ROUTE_PRESETS)}\n{TRACE_FMT}\n{ACC_FMT}"))
    p.add_argument("--spec", required=True, help="route spec JSON file or preset name")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="trace CSV to write")
    p.add_argument("--tags-out", help="write the preset's tag placements (tsp-like has ramp tags)")
    p.add_argument("--accidents-out", help="also synthesize accidents along the route")
    p.add_argument("--accidents-n", type=int, default=1000, help="number of synthetic accidents")
    p.add_argument("--accidents-config", default="tsp-2018",
                   help="config whose rate law sets the accident intensity")
    p.add_argument("--dry-fraction", type=float, default=0.0,
                   help="fraction of accidents placed uniformly on dry pavement")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("compare", help="flat-rate vs variable-rate salt totals", formatter_class=fmt,
                       epilog=f"{TRACE_FMT}\n{TAGS_FMT}")
    _add_trace(p)
    _add_common(p)
    p.add_argument("--flat-rate", type=float, required=True, help="flat policy rate, lb/lane-mile")
    p.add_argument("--out", help="write comparison JSON here")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("tune", help="grid-search k2/k3 against accident density", formatter_class=fmt,
                       epilog=f"{TRACE_FMT}\n{ACC_FMT}\n{TAGS_FMT}\nranges are start:stop:step, inclusive")
    _add_trace(p)
    _add_common(p)
    p.add_argument("--accidents", required=True, help=ACC_FMT)
    p.add_argument("--conserve-total", action="store_true",
                   help="rescale base_rate_A so total salt matches the untuned config within 0.5%%")
    p.add_argument("--jobs", type=int, default=1, help="worker threads; results identical to --jobs 1")
    p.add_argument("--segment-mi", type=float, default=analysis.DEFAULT_SEGMENT_MI)
    p.add_argument("--direction", default="NB", choices=["NB", "SB", "merged"])
    p.add_argument("--no-ice", action="store_true", help="exclude ice from winter accidents")
    p.add_argument("--k2-incline", type=_range, default=(0.0, 0.12, 0.01))
    p.add_argument("--k2-decline", type=_range, default=(0.0, 0.12, 0.01))
    p.add_argument("--k3", type=_range, default=(0.0, 5.0, 0.5))
    p.add_argument("--out", required=True, help="tune report JSON")
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("analyze", help="bin accidents and correlate with effective rate", formatter_class=fmt,
                       epilog=f"{TRACE_FMT}\n{ACC_FMT}\nwrites OUT/segments.csv and OUT/correlation.json")
    _add_trace(p)
    _add_common(p)
    p.add_argument("--accidents", required=True, help=ACC_FMT)
    p.add_argument("--segment-mi", type=float, default=analysis.DEFAULT_SEGMENT_MI)
    p.add_argument("--direction", default="NB", choices=["NB", "SB", "merged"])
    p.add_argument("--no-ice", action="store_true")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("filter-trace", help="apply the causal moving average to a trace",
                       formatter_class=fmt, epilog=TRACE_FMT)
    _add_trace(p, filtered=False)
    p.add_argument("--window-ms", type=int, default=500)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_filter_trace)

    p = sub.add_parser("encode-tag", help="encode a roadside tag payload", formatter_class=fmt,
                       epilog="payload: 16 bytes, magic 5254, version 01, command, tag_id u32, "
                              "magnitude i16, extent_ft u16, reserved 0000, CRC-16/CCITT-FALSE")
    p.add_argument("--tag-id", type=int, required=True)
    p.add_argument("--command", required=True, choices=[c.name for c in rfid.Command])
    p.add_argument("--magnitude", type=int, default=0)
    p.add_argument("--extent-ft", type=int, required=True)
    p.add_argument("--out", help="write the raw 16-byte payload here")
    p.set_defaults(func=cmd_encode_tag)

    p = sub.add_parser("decode-tag", help="decode and validate a tag payload", formatter_class=fmt)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--hex", help="payload as 32 hex digits")
    src.add_argument("--file", help="raw 16-byte payload file")
    p.add_argument("--out", help="write decoded tag JSON here")
    p.set_defaults(func=cmd_decode_tag)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InvariantError as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return 2
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
