"""Command-line entry point (``cowqkd``).

Exit codes: 0 ok, 1 usage or schema error, 2 zero-length key, 3 protocol
abort, 4 I/O or connection failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import socket
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .channel import (FIXTURE_DISTANCES, MEASURED_LEAK_BITS, CountsSchemaError, RoundLog,
                      expected_counts, fixture_path, load_counts, sample_counts, sample_log,
                      store_counts)
from .config import ConfigError, RunConfig, load_config
from .core import binary_entropy, n_plus_minus
from .finite_key import (KatoInput, analyze, discrepancy_report, kato_lower, kato_upper,
                         keyrate_bps, refine_counts)
from .optics import density_mixture_gap
from .optimizer import OptimizationProblem, optimize, result_json
from .privacy import ToeplitzSpec, toeplitz_direct, toeplitz_fft
from .session import SessionConfig, run_session, simulate_views
from .wire import SocketTransport

EXIT_OK, EXIT_USAGE, EXIT_ZERO_KEY, EXIT_ABORT, EXIT_IO = 0, 1, 2, 3, 4
log = logging.getLogger("cowqkd")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def write_key_file(path: str | Path, bits: np.ndarray) -> None:
    """Packed key bits, MSB first, in a file readable by the owner only."""
    fd = os.open(path, os.O_WRONLY | os.O_CREAT | os.O_TRUNC, 0o600)
    try:
        os.fchmod(fd, 0o600)
        os.write(fd, np.packbits(np.asarray(bits, dtype=np.uint8)).tobytes())
    finally:
        os.close(fd)


def _load_counts_arg(args):
    if args.fixture is not None:
        return load_counts(fixture_path(args.fixture))
    return load_counts(args.counts)


def cmd_keyrate(args, cfg: RunConfig) -> int:
    counts = _load_counts_arg(args)
    refined = args.refined or cfg.refined
    leak = args.leak_bits if args.leak_bits is not None else cfg.leak_bits
    rep = analyze(counts, cfg.security, cfg.analysis, refined=refined, leak_bits=leak)
    rate = keyrate_bps(rep, counts.N, cfg.protocol.repetition_hz)
    out = {"report": rep.to_dict(), "rate_bps": rate}
    if args.discrepancy:
        out["discrepancy"] = discrepancy_report(counts, cfg.security, refined, leak,
                                                cfg.protocol.repetition_hz)
    print(json.dumps(out, indent=2, sort_keys=True, default=float))
    print(f"l = {rep.l} bits, Ep = {rep.Ep_bar:.4f}, rate = {rate:.4g} bps", file=sys.stderr)
    return EXIT_OK if rep.l > 0 else EXIT_ZERO_KEY


CURVE_HEADER = ["distance_km", "simulated_rate_bps", "measured_rate_bps", "measured_unrefined_rate_bps"]


def curve_rows(distances, cfg: RunConfig) -> list[list]:
    rows = []
    for d in distances:
        counts = expected_counts(replace(cfg.channel, distance_km=d), cfg.protocol, cfg.N)
        sim = keyrate_bps(analyze(counts, cfg.security, cfg.analysis), cfg.N, cfg.protocol.repetition_hz)
        meas = meas_u = ""
        if float(d).is_integer() and int(d) in FIXTURE_DISTANCES:
            fx = load_counts(fixture_path(int(d)))
            leak = MEASURED_LEAK_BITS.get(int(d))
            meas = keyrate_bps(analyze(fx, cfg.security, cfg.analysis, refined=True, leak_bits=leak),
                               fx.N, cfg.protocol.repetition_hz)
            meas_u = keyrate_bps(analyze(fx, cfg.security, cfg.analysis), fx.N, cfg.protocol.repetition_hz)
        rows.append([d, sim, meas, meas_u])
    return rows


def cmd_curve(args, cfg: RunConfig) -> int:
    distances = [float(x) for x in args.distances.split(",") if x.strip()] if args.distances else []
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CURVE_HEADER)
        for row in curve_rows(distances, cfg):
            w.writerow([f"{row[0]:g}", *(repr(x) if x != "" else "" for x in row[1:])])
    return EXIT_OK


def cmd_simulate(args, cfg: RunConfig) -> int:
    channel = replace(cfg.channel, distance_km=args.distance) if args.distance is not None else cfg.channel
    N = int(args.N or cfg.N)
    if args.expected:
        rec = expected_counts(channel, cfg.protocol, N)
    elif args.round_log:
        lg = sample_log(channel, cfg.protocol, N, args.seed)
        lg.write(args.round_log)
        rec = replace(lg.aggregate(cfg.protocol.p_0, cfg.protocol.p_alpha_alpha), distance_km=channel.distance_km)
    else:
        rec = sample_counts(channel, cfg.protocol, N, args.seed)
    store_counts(rec, args.out)
    return EXIT_OK


def cmd_optimize(args, cfg: RunConfig) -> int:
    start = {"mu": cfg.protocol.mu, "p_0": cfg.protocol.p_0,
             "p_alpha_alpha": cfg.protocol.p_alpha_alpha, "z_split": cfg.protocol.z_split}
    problem = OptimizationProblem(cfg.channel, cfg.N, security=cfg.security, analysis=cfg.analysis,
                                  repetition_hz=cfg.protocol.repetition_hz, include=(start,))
    res = optimize(problem, budget=args.budget, seed=args.seed)
    Path(args.out).write_text(result_json(problem, res, args.seed) + "\n")
    if args.trace:
        Path(args.trace).write_text(res.trace_csv())
    print(f"best rate {res.rate_bps:.6g} bps", file=sys.stderr)
    return EXIT_OK if res.rate_bps > 0 else EXIT_ZERO_KEY


def _addr(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"address must be HOST:PORT, got {text!r}")
    return host, int(port)


def _open_transport(args, timeout: float) -> SocketTransport:
    if args.listen:
        srv = socket.create_server(_addr(args.listen))
        srv.settimeout(args.connect_timeout)
        try:
            conn, _ = srv.accept()
        finally:
            srv.close()
        return SocketTransport(conn, timeout)
    deadline = time.monotonic() + args.connect_timeout
    while True:
        try:
            return SocketTransport(socket.create_connection(_addr(args.connect), timeout=args.connect_timeout), timeout)
        except OSError:
            if time.monotonic() >= deadline:
                raise
            time.sleep(0.1)


def _cmd_endpoint(role: str, args, cfg: RunConfig) -> int:
    scfg: SessionConfig = cfg.session_config()
    views = None
    if args.round_log:
        a_view, b_view = simulate_views(scfg, RoundLog.read(args.round_log))
        views = a_view if role == "alice" else b_view
    send_data = Path(args.send).read_bytes() if role == "alice" and args.send else None
    try:
        transport = _open_transport(args, scfg.timeout_s)
    except (OSError, ValueError) as exc:
        print(f"connection failed: {exc}", file=sys.stderr)
        return EXIT_IO
    try:
        rep = run_session(role, transport, scfg, args.seed, send_data=send_data, views=views)
    finally:
        transport.close()
    if args.report:
        Path(args.report).write_text(json.dumps(rep.summary(), indent=2, default=float) + "\n")
    if not rep.success:
        print(f"session aborted: {rep.abort_reason} {rep.abort_detail}", file=sys.stderr)
        return EXIT_ABORT
    if args.key_out:
        write_key_file(args.key_out, rep.final_key)
    if role == "bob" and args.recv and rep.otp_plaintext is not None:
        Path(args.recv).write_bytes(rep.otp_plaintext)
    print(f"{role}: l = {rep.l} bits, disclosed = {rep.disclosed_bits}", file=sys.stderr)
    return EXIT_OK if rep.l > 0 else EXIT_ZERO_KEY


SELFTEST_EXPECTED = {
    25: {"n_z": 25278913, "n_aa_D1": 4413507, "mu": 3.5e-3, "refined": 1904},
    50: {"n_z": 4007708, "n_aa_D1": 692141, "mu": 1.4e-3, "refined": 81},
    75: {"n_z": 6432214, "n_aa_D1": 1121394, "mu": 5.65e-4, "refined": 554},
    100: {"n_z": 1077297, "n_aa_D1": 190418, "mu": 2.43e-4, "refined": 493},
}


def selftest_checks(data_dir: str | None = None) -> list[tuple[str, object, object, bool]]:
    checks = []

    def add(name, expected, actual, ok):
        checks.append((name, expected, actual, bool(ok)))

    h = binary_entropy(0.25)
    add("binary_entropy(0.25)", 0.811278, round(h, 6), abs(h - 0.8112781244591328) < 1e-6)
    nm = n_plus_minus(2.43e-4)[1]
    add("N_minus(2.43e-4)", 4.85941e-4, nm, abs(nm - 4.85941e-4) < 1e-9)
    g = max(density_mixture_gap(m) for m in (2.43e-4, 0.5, 3.0))
    add("density_mixture_gap", 0.0, g, g < 1e-12)
    for d, exp in SELFTEST_EXPECTED.items():
        path = Path(data_dir) / f"measured_{d}km.json" if data_dir else fixture_path(d)
        try:
            c = load_counts(path)
        except (OSError, CountsSchemaError) as exc:
            add(f"fixture {d} km loads", "valid", str(exc), False)
            continue
        got = {"n_z": c.n_z, "n_aa_D1": c.n_aa_D1, "mu": c.mu, "refined": refine_counts(c).n_00_D1}
        add(f"fixture {d} km", exp, got, got == exp)
    up = kato_upper(KatoInput(5000, 10**4, 1e-10))
    lo = kato_lower(KatoInput(5000, 10**4, 1e-10))
    add("kato symmetric point", "Delta1 == Delta2 > 0", (up.delta, lo.delta),
        up.delta > 0 and abs(up.delta - lo.delta) < 1e-9 * up.delta)
    spec = ToeplitzSpec(3, 2, np.array([1, 0, 1, 1]))
    b = toeplitz_fft(spec, [1, 1, 0]).tolist()
    add("toeplitz m=2 n=3", [1, 1], b, b == [1, 1] == toeplitz_direct(spec, [1, 1, 0]).tolist())
    rng = np.random.default_rng(2024)
    same = True
    for _ in range(10):
        n = int(rng.integers(1, 1025))
        s = ToeplitzSpec.random(n, int(rng.integers(1, n + 1)), rng)
        d = rng.integers(0, 2, n)
        same &= bool(np.array_equal(toeplitz_direct(s, d), toeplitz_fft(s, d)))
    add("toeplitz fft == direct (10 instances)", True, same, same)
    return checks


def cmd_selftest(args, cfg: RunConfig) -> int:
    checks = selftest_checks(args.data_dir)
    for name, exp, act, ok in checks:
        print(f"{'PASS' if ok else 'FAIL'}  {name}  expected={exp}  actual={act}")
    bad = sum(not c[3] for c in checks)
    print(f"{len(checks) - bad}/{len(checks)} checks passed")
    return EXIT_OK if bad == 0 else EXIT_USAGE


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cowqkd", description="COW QKD finite-key analysis and post-processing")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", help="JSON run configuration")
        return sp

    k = common(sub.add_parser("keyrate", help="key length and rate from a counts file"))
    src = k.add_mutually_exclusive_group(required=True)
    src.add_argument("--counts", help="counts JSON file")
    src.add_argument("--fixture", type=int, choices=FIXTURE_DISTANCES, help="bundled fixture distance (km)")
    k.add_argument("--refined", action="store_true", help="use refined vacuum counts")
    k.add_argument("--leak-bits", type=int, help="measured reconciliation leakage")
    k.add_argument("--discrepancy", action="store_true", help="include the interpretation report")
    k.set_defaults(func=cmd_keyrate)

    c = common(sub.add_parser("curve", help="simulated and measured rate against distance"))
    c.add_argument("--distances", default="", help="comma-separated list in km")
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_curve)

    s = common(sub.add_parser("simulate", help="counts for one channel"))
    s.add_argument("--distance", type=float)
    s.add_argument("--N", type=float)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--expected", action="store_true", help="expectation values instead of a sample")
    s.add_argument("--round-log", help="also write the per-round log (needs moderate N)")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    o = common(sub.add_parser("optimize", help="search source parameters"))
    o.add_argument("--budget", type=int, default=5000)
    o.add_argument("--seed", type=int, default=0)
    o.add_argument("--out", required=True)
    o.add_argument("--trace", help="CSV trace output")
    o.set_defaults(func=cmd_optimize)

    for role in ("alice", "bob"):
        e = common(sub.add_parser(role, help=f"run the {role} endpoint"))
        where = e.add_mutually_exclusive_group(required=True)
        where.add_argument("--listen", metavar="HOST:PORT")
        where.add_argument("--connect", metavar="HOST:PORT")
        e.add_argument("--seed", type=int, default=0)
        e.add_argument("--connect-timeout", type=float, default=10.0)
        e.add_argument("--round-log", help="detections from a round-log file instead of simulating")
        e.add_argument("--key-out", help="write the final key here (mode 0600)")
        e.add_argument("--report", help="write the session report JSON here")
        if role == "alice":
            e.add_argument("--send", help="file to one-time-pad encrypt and send")
        else:
            e.add_argument("--recv", help="where to write the decrypted file")
        e.set_defaults(func=lambda a, cfg, r=role: _cmd_endpoint(r, a, cfg))

    t = sub.add_parser("selftest", help="fixture and exactness checks")
    t.add_argument("--data-dir", help="directory holding measured_*km.json to check")
    t.set_defaults(func=cmd_selftest, config=None)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("COWQKD_LOG", "WARNING").upper())
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(getattr(args, "config", None))
        return args.func(args, cfg)
    except (ConfigError, CountsSchemaError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
