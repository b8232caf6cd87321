"""Command-line entry point.

    deskits station --gnss trace:drive.csv --transport sim ...
    deskits scenario run --config scenario.ini --out events.csv
    deskits analyze spectrum --capture x.iqc1 --mask mask.txt
    deskits analyze power --capture x.iqc1
    deskits analyze trial --log events.csv --tx-lat L --tx-lon O

Exit codes: 0 success (and mask compliant), 1 usage or I/O error,
2 analysis-detected non-compliance.
"""

from __future__ import annotations

import argparse
import configparser
import json
import sys
import time

from . import gnss, rfanalysis, scenario, station, trial
from .cam_service import CamTriggerConfig
from .core import GeoPosition
from .ldm import LdmConfig

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_NONCOMPLIANT = 2


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; 2 is reserved for non-compliance."""

    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def _write_json(obj: dict, out_path: str | None) -> None:
    text = json.dumps(obj, indent=2) + "\n"
    if out_path:
        with open(out_path, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _cmd_station(args: argparse.Namespace) -> int:
    station_id = args.station_id
    forced = args.forced_period_ms
    ldm_port = args.ldm_port
    max_age_ms = 5000
    sweep_period_ms = 1000

    if args.config:
        parser = configparser.ConfigParser(
            inline_comment_prefixes=(";", "#"))
        if not parser.read(args.config):
            print(f"cannot read config: {args.config}", file=sys.stderr)
            return EXIT_ERROR
        if "station" in parser:
            sec = parser["station"]
            station_id = sec.getint("station_id", station_id)
            if forced is None:
                forced = sec.getint("forced_period_ms", fallback=None)
        if "ldm" in parser:
            sec = parser["ldm"]
            max_age_ms = sec.getint("max_age_ms", max_age_ms)
            sweep_period_ms = sec.getint("sweep_period_ms", sweep_period_ms)
            if ldm_port is None:
                ldm_port = sec.getint("api_listen_port", fallback=None)

    kind, _, rest = args.gnss.partition(":")
    if kind == "trace":
        if not rest:
            print("--gnss trace:<file> needs a file", file=sys.stderr)
            return EXIT_ERROR
        states = gnss.load_trace(rest)
        fixes = (gnss.FixUpdate(position=s.position,
                                fix_time_ms=s.timestamp_ms, valid=True,
                                speed_mps=s.speed_mps,
                                heading_deg=s.heading_deg)
                 for s in gnss.replay_trace(states, args.speed_factor))
    elif kind == "gpsd":
        host, _, port_text = rest.partition(":")
        fixes = gnss.gpsd_fixes(host or "127.0.0.1",
                                int(port_text) if port_text else 2947)
    else:
        print(f"unknown gnss source {args.gnss!r}; use trace:<file> "
              "or gpsd:<host:port>", file=sys.stderr)
        return EXIT_ERROR

    trigger = CamTriggerConfig(forced_period_ms=forced)
    endpoint_factory = station.parse_transport(args.transport)
    st = station.Station(
        station_id, endpoint_factory(station_id), trigger,
        LdmConfig(max_age_ms=max_age_ms, sweep_period_ms=sweep_period_ms,
                  api_listen_port=ldm_port or 0))
    st.start(fixes, api_port=ldm_port)
    try:
        if kind == "trace":
            while not st.wait_tx_done(timeout_s=1.0):
                pass
            time.sleep(0.2)  # let in-flight receptions land before teardown
        else:
            while True:
                st.wait_tx_done(timeout_s=3600.0)
    except KeyboardInterrupt:
        pass
    finally:
        st.stop()
    return EXIT_OK


def _cmd_scenario_run(args: argparse.Namespace) -> int:
    cfg = scenario.load_scenario(args.config)
    events = scenario.run_scenario(cfg)
    scenario.write_event_log(args.out, events)
    n_tx = sum(1 for e in events if e.event == "TX")
    n_rx = sum(1 for e in events if e.event == "RX")
    print(f"wrote {args.out}: {n_tx} TX, {n_rx} RX")
    return EXIT_OK


def _cmd_analyze_spectrum(args: argparse.Namespace) -> int:
    capture = rfanalysis.load_iq_capture(args.capture)
    psd = rfanalysis.compute_psd(capture.samples, n_fft=args.n_fft,
                                 fs_hz=capture.fs_hz, fc_hz=capture.fc_hz,
                                 r_ohm=args.r_ohm)
    report: dict = {
        "capture": args.capture,
        "n_fft": psd.n_fft,
        "bin_width_hz": psd.bin_width_hz,
        "n_segments": psd.n_segments,
        "average_power_dbm": rfanalysis.compute_average_power_dbm(
            capture.samples, args.r_ohm),
    }
    exit_code = EXIT_OK
    if args.mask:
        mask = rfanalysis.load_mask(args.mask)
        mask_report = rfanalysis.check_mask(psd, mask)
        report["mask"] = {
            "compliant": mask_report.compliant,
            "checked_bins": mask_report.checked_bins,
            "skipped_bins": mask_report.skipped_bins,
            "violations": [
                {"freq_hz": f, "psd_dbm_per_hz": v, "limit_dbm_per_hz": l}
                for f, v, l in mask_report.violations],
        }
        if not mask_report.compliant:
            exit_code = EXIT_NONCOMPLIANT
    _write_json(report, args.out)
    if args.psd_csv:
        with open(args.psd_csv, "w") as fh:
            fh.write("freq_hz,psd_dbm_per_hz\n")
            for f, v in zip(psd.freqs_hz, psd.psd_dbm_per_hz):
                fh.write(f"{f:.6f},{v:.6f}\n")
    return exit_code


def _cmd_analyze_power(args: argparse.Namespace) -> int:
    capture = rfanalysis.load_iq_capture(args.capture)
    report: dict = {
        "capture": args.capture,
        "n_samples": len(capture.samples),
        "average_power_dbm": rfanalysis.compute_average_power_dbm(
            capture.samples, args.r_ohm),
    }
    if args.bursts:
        segments = rfanalysis.detect_bursts(capture, args.guard_db,
                                            args.burst_window)
        report["bursts"] = [{"start": s.start, "stop": s.stop}
                            for s in segments]
    _write_json(report, args.out)
    return EXIT_OK


def _cmd_analyze_trial(args: argparse.Namespace) -> int:
    records = trial.load_rx_log(args.log)
    tx_position = GeoPosition(args.tx_lat, args.tx_lon)
    receiver_trace = gnss.load_trace(args.trace) if args.trace else None

    sender_ids = sorted({r.sender_id for r in records})
    summary: dict = {"log": args.log, "records": len(records),
                     "senders": {}}
    all_windows: list[trial.PdrWindow] = []
    for sid in sender_ids:
        recs = [r for r in records if r.sender_id == sid]
        windows = trial.window_pdr(recs, tx_position,
                                   tx_period_ms=args.period_ms,
                                   window_ms=args.window_ms,
                                   receiver_trace=receiver_trace)
        all_windows.extend(windows)
        entry: dict = {
            "records": len(recs),
            "windows": len(windows),
            "received_sum": sum(w.received_count for w in windows),
        }
        try:
            est = trial.estimate_range(windows)
            entry["max_rx_distance_m"] = est.max_rx_distance_m
            entry["distance_pdr_curve"] = [
                {"bin_start_m": b, "mean_pdr": p}
                for b, p in est.distance_pdr_curve]
        except ValueError:
            entry["max_rx_distance_m"] = None
        summary["senders"][str(sid)] = entry

    if args.out:
        collection = trial.windows_to_geojson(all_windows)
        trial.write_geojson(args.out, collection)
        summary["geojson"] = args.out
    if args.clusters_out:
        clusters = trial.cluster_by_sender(records, args.group_size)
        trial.write_geojson(args.clusters_out,
                            trial.clusters_to_geojson(clusters))
        summary["clusters_geojson"] = args.clusters_out
    _write_json(summary, args.summary_out)
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="deskits",
                     description="desk-scale C-ITS station testbed")
    sub = parser.add_subparsers(dest="command", required=True)

    p_station = sub.add_parser("station", help="run a live station")
    p_station.add_argument("--config", help="optional INI with [station] "
                           "and [ldm] sections")
    p_station.add_argument("--gnss", required=True,
                           help="trace:<file> or gpsd:<host:port>")
    p_station.add_argument("--station-id", type=int, default=1)
    p_station.add_argument("--ldm-port", type=int, default=None,
                           help="serve the LDM query API on this TCP port")
    p_station.add_argument("--forced-period-ms", type=int, default=None)
    p_station.add_argument("--transport", default="sim",
                           help="sim or udp:<group:port>")
    p_station.add_argument("--speed-factor", type=float, default=1.0,
                           help="trace replay speed; 0 = no pacing")
    p_station.set_defaults(func=_cmd_station)

    p_scenario = sub.add_parser("scenario", help="simulated scenarios")
    scen_sub = p_scenario.add_subparsers(dest="scenario_command",
                                         required=True)
    p_run = scen_sub.add_parser("run", help="run a scenario to an event log")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--out", required=True)
    p_run.set_defaults(func=_cmd_scenario_run)

    p_analyze = sub.add_parser("analyze", help="measurement post-processing")
    an_sub = p_analyze.add_subparsers(dest="analyze_command", required=True)

    p_spec = an_sub.add_parser("spectrum", help="PSD and mask compliance")
    p_spec.add_argument("--capture", required=True)
    p_spec.add_argument("--mask", default=None)
    p_spec.add_argument("--n-fft", type=int,
                        default=rfanalysis.DEFAULT_N_FFT)
    p_spec.add_argument("--r-ohm", type=float,
                        default=rfanalysis.DEFAULT_IMPEDANCE_OHM)
    p_spec.add_argument("--out", default=None, help="JSON report path")
    p_spec.add_argument("--psd-csv", default=None,
                        help="also dump the PSD as CSV")
    p_spec.set_defaults(func=_cmd_analyze_spectrum)

    p_power = an_sub.add_parser("power", help="average power and bursts")
    p_power.add_argument("--capture", required=True)
    p_power.add_argument("--r-ohm", type=float,
                         default=rfanalysis.DEFAULT_IMPEDANCE_OHM)
    p_power.add_argument("--bursts", action="store_true")
    p_power.add_argument("--guard-db", type=float, default=10.0)
    p_power.add_argument("--burst-window", type=int, default=64)
    p_power.add_argument("--out", default=None, help="JSON report path")
    p_power.set_defaults(func=_cmd_analyze_power)

    p_trial = an_sub.add_parser("trial", help="drive-test log analysis")
    p_trial.add_argument("--log", required=True)
    p_trial.add_argument("--tx-lat", type=float, required=True)
    p_trial.add_argument("--tx-lon", type=float, required=True)
    p_trial.add_argument("--period-ms", type=int, default=100)
    p_trial.add_argument("--window-ms", type=int, default=1000)
    p_trial.add_argument("--trace", default=None,
                         help="receiver trace CSV for empty-window positions")
    p_trial.add_argument("--group-size", type=int, default=10)
    p_trial.add_argument("--out", default=None,
                         help="windows GeoJSON path")
    p_trial.add_argument("--clusters-out", default=None,
                         help="clusters GeoJSON path")
    p_trial.add_argument("--summary-out", default=None,
                         help="JSON summary path (default stdout)")
    p_trial.set_defaults(func=_cmd_analyze_trial)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (OSError, ValueError, OverflowError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
