"""Command-line entry point: ``dntwin {serve,run,compare,trace,scene-check}``."""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from pathlib import Path

from .geometry import load_scene
from .metrics import (
    PacketSetComparison,
    comparison_row,
    counts_csv,
    export_gain_trace,
    gain_trace,
    gain_trace_svg,
    packet_counts,
    prdr_csv,
)
from .protocol import ChannelClient, ClientTimeout, ProtocolError, serve
from .raytracer import RtConfig
from .scenario import ConfigError, load_scenario, parse_endpoint
from .vanet import RayTracingBackend, SimulationError, RemoteBackend, StochasticBackend, dual_run, initial_scene, run_simulation

log = logging.getLogger("dntwin")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_IO = 4
EXIT_PROTOCOL = 5


def _write(out_dir: Path, name: str, text: str) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / name
    path.write_text(text)
    return path


def _cmd_serve(args) -> int:
    scene = load_scene(Path(args.scene).read_text())
    rt = RtConfig.from_dict(json.loads(Path(args.rt_config).read_text())) if args.rt_config else RtConfig()
    host = os.environ.get("DNTWIN_HOST", args.host)
    port = int(os.environ.get("DNTWIN_PORT", args.port))
    serve((host, port), scene, rt, args.fc, args.min_move)
    return EXIT_OK


def _packets_csv(log_) -> str:
    out = io.StringIO()
    out.write("# dntwin packets v1\n")
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["tx", "seq", "t", "rx", "delivered", "pr_dbm", "gain_db", "los", "attempts"])
    for p in log_:
        for rx, v in sorted(p.verdicts.items()):
            w.writerow([p.tx_id, p.seq, repr(p.t), rx, int(v.delivered), repr(v.pr_dbm), repr(v.gain_db), v.los.name, v.attempts])
    return out.getvalue()


def _cmd_run(args) -> int:
    cfg = load_scenario(args.scenario)
    scenario = cfg.with_profile(args.profile or cfg.profile_name, args.fc)
    backend_name = args.backend or cfg.backend
    scene = initial_scene(scenario)
    if backend_name == "stochastic":
        backend = StochasticBackend.from_scene(scene, scenario.profile, scenario.seed)
    elif backend_name == "rt-inprocess":
        backend = RayTracingBackend(scene, scenario.rt_config, scenario.profile.fc, scenario.min_move)
    else:
        endpoint = parse_endpoint(args.endpoint) if args.endpoint else cfg.endpoint
        if endpoint is None:
            raise ConfigError("rt-remote backend needs an endpoint")
        backend = RemoteBackend(ChannelClient(endpoint, timeout=args.timeout, retries=args.retries))
    log_ = run_simulation(scene, scenario.trace, scenario.profile, backend, scenario.duration, scenario.min_move)
    out = Path(args.out)
    _write(out, "packets.csv", _packets_csv(log_))
    _write(out, "counts.csv", counts_csv([(args.profile or cfg.profile_name, backend_name, packet_counts(log_))]))
    counts = packet_counts(log_)
    print(f"{backend_name}: delivered {counts.delivered}/{counts.transmitted}")
    return EXIT_OK


def _cmd_compare(args) -> int:
    cfg = load_scenario(args.scenario)
    profiles = args.profile or [cfg.profile_name]
    carriers = args.fc or [None]
    rows, counts = [], []
    for name in profiles:
        for fc in carriers:
            scenario = cfg.with_profile(name, fc)
            label = f"{name}@{scenario.profile.fc / 1e9:g}GHz"
            s_log, r_log = dual_run(scenario)
            cmp = PacketSetComparison.from_logs(s_log, r_log)
            rows.append(comparison_row(label, name, scenario.profile.fc, cmp))
            counts.append((label, "stochastic", packet_counts(s_log)))
            counts.append((label, "rt", packet_counts(r_log)))
    out = Path(args.out)
    _write(out, "prdr.csv", prdr_csv(rows))
    _write(out, "counts.csv", counts_csv(counts))
    print(f"{'run':<24} {'S':>6} {'R':>6} {'S^R':>6} {'SuR':>6} {'PRDR':>7}")
    for r in rows:
        print(
            f"{r['label']:<24} {r['delivered_stochastic']:>6} {r['delivered_rt']:>6} "
            f"{r['disagreements']:>6} {r['union']:>6} {r['prdr']:>7.4f}"
        )
    return EXIT_OK


def _cmd_trace(args) -> int:
    cfg = load_scenario(args.scenario)
    scenario = cfg.with_profile(args.profile or cfg.profile_name, args.fc)
    s_log, r_log = dual_run(scenario)
    samples = gain_trace(s_log, r_log, tuple(args.pair))
    out = Path(args.out)
    _write(out, "gain_trace.csv", export_gain_trace(samples))
    if args.svg:
        _write(out, "gain_trace.svg", gain_trace_svg(samples))
    print(f"wrote {len(samples)} samples for pair {args.pair[0]}-{args.pair[1]}")
    return EXIT_OK


def _cmd_scene_check(args) -> int:
    scene = load_scene(Path(args.scene).read_text())
    print(
        f"ok: {len(scene.buildings)} buildings, {len(scene.facets)} facets, "
        f"{len(scene.entities)} entities, ground plane {'on' if scene.ground_plane else 'off'}"
    )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dntwin", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("serve", help="run the UDP channel oracle")
    s.add_argument("--scene", required=True)
    s.add_argument("--rt-config", help="JSON file with ray tracer settings")
    s.add_argument("--host", default="127.0.0.1", help="listen address (env DNTWIN_HOST)")
    s.add_argument("--port", type=int, default=5555, help="listen port (env DNTWIN_PORT)")
    s.add_argument("--fc", type=float, default=5.89e9, help="carrier frequency in Hz")
    s.add_argument("--min-move", type=float, default=0.5, help="minimum displacement (m) that rebuilds the scene")
    s.set_defaults(func=_cmd_serve)

    def scenario_args(sp):
        sp.add_argument("scenario", nargs="?", default="demo", help="scenario JSON file, or 'demo'")
        sp.add_argument("--out", default="out", help="output directory")

    r = sub.add_parser("run", help="simulate one backend")
    scenario_args(r)
    r.add_argument("--profile")
    r.add_argument("--fc", type=float)
    r.add_argument("--backend", choices=["stochastic", "rt-inprocess", "rt-remote"])
    r.add_argument("--endpoint", help="host:port of a running channel oracle")
    r.add_argument("--timeout", type=float, default=2.0)
    r.add_argument("--retries", type=int, default=3)
    r.set_defaults(func=_cmd_run)

    c = sub.add_parser("compare", help="stochastic vs ray-traced dual run with PRDR")
    scenario_args(c)
    c.add_argument("--profile", action="append", help="profile name (repeatable)")
    c.add_argument("--fc", type=float, action="append", help="carrier override in Hz (repeatable)")
    c.set_defaults(func=_cmd_compare)

    t = sub.add_parser("trace", help="export the gain trace of one entity pair")
    scenario_args(t)
    t.add_argument("--pair", type=int, nargs=2, default=[1, 2], metavar=("A", "B"))
    t.add_argument("--profile")
    t.add_argument("--fc", type=float)
    t.add_argument("--svg", action="store_true", help="also write an SVG chart")
    t.set_defaults(func=_cmd_trace)

    k = sub.add_parser("scene-check", help="validate a scene file")
    k.add_argument("scene")
    k.set_defaults(func=_cmd_scene_check)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        try:
            return args.func(args)
        except SimulationError as exc:
            # surface the backend failure that aborted the run
            if exc.__cause__ is not None:
                print(f"simulation aborted: {exc}", file=sys.stderr)
                raise exc.__cause__ from None
            raise
    except (ProtocolError, ClientTimeout) as exc:
        print(f"protocol error: {exc}", file=sys.stderr)
        return EXIT_PROTOCOL
    except (ConfigError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except SimulationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
