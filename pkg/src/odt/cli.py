"""Command-line driver: ``odt serve | connect | scenario | analyze | calc | bench``.

Exit status is 0 on success, 1 when a run contradicts its expectation and 2
on usage errors. ``--seed`` makes any subcommand replay exactly.
"""
from __future__ import annotations

import argparse
import json
import logging
import random
import sys
import threading
from pathlib import Path

import mpmath

from . import analysis
from .device import DEFAULT_OMEGA, DeviceSim, Omega, load_process
from .endpoints import (
    ClientSession,
    HandshakeAborted,
    Otee,
    OteeIdentity,
    Registry,
    Server,
    connect_tcp,
    make_tcp_server,
)
from .primitives import SigKeyPair, hash256
from . import scenario
from .scenario import ScenarioError, ScenarioSpec, run_scenario
from .witness import DEFAULT_LOCATIONS

EXIT_OK, EXIT_MISMATCH, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def identity_from_seed(seed: int, device: str = "cli-device") -> OteeIdentity:
    keys = SigKeyPair.from_seed(hash256(b"odt identity" + seed.to_bytes(8, "big")))
    return OteeIdentity(keys, device)


def omega_of(words: int) -> Omega:
    if words < 1:
        raise UsageError("--omega-words must be positive")
    start = DEFAULT_OMEGA.ranges[0][0]
    return Omega(((start, start + 8 * words),))


def parse_address(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or not port.isdigit():
        raise argparse.ArgumentTypeError(f"expected HOST:PORT, got {text!r}")
    return host or "127.0.0.1", int(port)


def _emit(args, payload: dict, lines: list[str]) -> None:
    if args.json:
        print(json.dumps(payload, indent=2, default=str))
    else:
        print("\n".join(lines))


# --- subcommands --------------------------------------------------------------

def cmd_serve(args) -> int:
    rng = random.Random(args.seed)
    omega = omega_of(args.omega_words)
    if args.registry:
        registry = Registry.from_json(Path(args.registry).read_text())
    else:
        registry = Registry()
        for s in args.trust_seed:
            registry.register(identity_from_seed(s, f"seed-{s}"))
    image = None
    if args.mode == "aggressor":
        if args.expect_seed is None or args.expect_size is None:
            raise UsageError("--mode aggressor needs --expect-seed and --expect-size")
        image = load_process(DeviceSim("expected"), args.expect_seed, args.expect_size, "agent", omega)
    server = Server(args.mode, image, registry, rng, args.locations, omega)

    done = threading.Event()
    out = open(args.out, "w") if args.out else None

    def on_record(record):
        line = json.dumps({"mode": record.mode, **record.to_json()})
        print(line, flush=True)
        if out:
            out.write(line + "\n")
            out.flush()
        if args.max_sessions and len(server.records) >= args.max_sessions:
            done.set()

    tcp = make_tcp_server(server, args.listen, on_record)
    host, port = tcp.server_address[:2]
    print(json.dumps({"listening": f"{host}:{port}", "mode": args.mode}), flush=True)
    thread = threading.Thread(target=tcp.serve_forever, daemon=True)
    thread.start()
    try:
        done.wait()
    except KeyboardInterrupt:
        pass
    finally:
        tcp.shutdown()
        tcp.server_close()
        if out:
            out.close()
    return EXIT_OK


def cmd_connect(args) -> int:
    rng = random.Random(args.seed)
    omega = omega_of(args.omega_words)
    device = DeviceSim("cli-device", has_otee=not args.plain)
    agent = load_process(device, args.process_seed, args.process_size, "agent", omega)
    if args.plain:
        client = ClientSession(rng)
    else:
        identity = identity_from_seed(args.identity_seed, device.id)
        client = Otee(identity, device, args.locations, omega).connect(agent, rng)
    try:
        connect_tcp(client, args.to, timeout=args.timeout)
    except (HandshakeAborted, OSError) as exc:
        print(f"connection failed: {exc}", file=sys.stderr)
        return EXIT_MISMATCH
    payload = {
        "done": client.done,
        "otee": client.otee is not None,
        "b_co": client.measurement.b_co if client.measurement else None,
        "transcript": [
            {"dir": d, "type": t, "len": n} for d, t, n in client.shape()
        ],
    }
    lines = [f"{d:>3} type={t:<3} len={n}" for d, t, n in client.shape()]
    lines.append("handshake complete" if client.done else "handshake incomplete")
    _emit(args, payload, lines)
    return EXIT_OK if client.done else EXIT_MISMATCH


def cmd_scenario(args) -> int:
    try:
        spec = ScenarioSpec.load(args.file)
    except OSError as exc:
        raise UsageError(str(exc)) from None
    result = run_scenario(spec, runs=args.runs, seed=args.seed)
    summary = result.summary()
    low, high = summary["rate_ci95"]
    lines = [
        f"scenario {spec.name}: {summary['connections']} connection(s) over {summary['runs']} run(s)",
        f"verdicts: {', '.join(summary['verdicts'])}",
        f"protected rate: {summary['rate']:.5f} (95% CI {low:.5f} .. {high:.5f})",
        "expectation met" if result.expectation_met else "EXPECTATION NOT MET",
    ]
    _emit(args, summary, lines)
    return EXIT_OK if result.expectation_met else EXIT_MISMATCH


def cmd_analyze(args) -> int:
    rng = random.Random(args.seed)
    agg = analysis.aggressor_nonces(args.samples, rng, args.locations, omega_of(args.omega_words))
    plain = analysis.plain_nonces(args.samples, rng)
    if args.csv_dir:
        d = Path(args.csv_dir)
        d.mkdir(parents=True, exist_ok=True)
        agg.to_csv(d / "aggressor.csv")
        plain.to_csv(d / "plain.csv")
    report = analysis.uniformity_test(agg, plain, seed=args.seed or 0).to_dict()
    report["advantage_threshold"] = analysis.advantage_threshold(report["n"])
    report["passed"] = (
        report["min_position_p"] > 0.001
        and report["byte_p"] > 0.001
        and report["max_abs_bit_z"] < 4
        and abs(report["advantage"]) < report["advantage_threshold"]
    )
    if args.out:
        analysis.write_json(report, args.out)
    _emit(
        args,
        report,
        [
            f"samples per source: {report['n']}",
            f"max |z| over bits: {report['max_abs_bit_z']:.3f}",
            f"byte chi-square p: {report['byte_p']:.4f} (min per position {report['min_position_p']:.4f})",
            f"distinguisher advantage: {report['advantage']:+.5f}",
            "indistinguishable" if report["passed"] else "DISTINGUISHABLE",
        ],
    )
    return EXIT_OK if report["passed"] else EXIT_MISMATCH


def cmd_calc(args) -> int:
    try:
        if args.mode == "key":
            _need(args, "i_size", "x_bits", "q")
            p = analysis.preservation_bound_key(args.i_size, 2**args.x_bits, args.q)
            payload = {"probability": float(p), "log2_probability": analysis.log2_prob(p)}
            lines = [f"P = {mpmath.nstr(p, 6)}  (2^{payload['log2_probability']:.3f})" if p else "P = 0"]
        else:
            _need(args, "i_size", "x_bits", "q", "locations_measured")
            params = analysis.PreservationParams(
                2**args.x_bits, args.known_bits, args.locations_measured, args.i_size, args.q
            )
            res = analysis.preservation_bound_general(params)
            payload = res.to_dict()
            lines = [
                f"P = {mpmath.nstr(res.probability, 6)}  (2^{payload['log2_probability']:.3f})",
                f"bound q/(2^C - q) = {mpmath.nstr(res.simplified_bound, 6)}",
            ]
    except analysis.DomainError as exc:
        raise UsageError(f"outside the formula domain: {exc}") from None
    _emit(args, payload, lines)
    return EXIT_OK


def _need(args, *names):
    missing = [f"--{n.replace('_', '-')}" for n in names if getattr(args, n) is None]
    if missing:
        raise UsageError(f"calc preservation --mode {args.mode} needs {' '.join(missing)}")


def cmd_bench(args) -> int:
    if args.iters < 100:
        raise UsageError("--iters must be >= 100")
    result = analysis.bench(args.target, args.iters, seed=args.seed or 0)
    # bench always prints JSON
    print(json.dumps(result, indent=2))
    return EXIT_OK


# --- parser --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="seed for all randomness")
    common.add_argument("--json", action="store_true", help="print JSON to stdout")
    common.add_argument("-v", "--verbose", action="store_true")

    mem = argparse.ArgumentParser(add_help=False)
    mem.add_argument("--omega-words", type=int, default=DEFAULT_OMEGA.total_words,
                     help="size of the measurable region in 64-bit words")
    mem.add_argument("--locations", type=int, default=DEFAULT_LOCATIONS,
                     help="memory locations per measurement")

    parser = argparse.ArgumentParser(prog="odt", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("serve", parents=[common, mem], help="run a plain or aggressor TLS server")
    p.add_argument("--mode", choices=("plain", "aggressor"), required=True)
    p.add_argument("--listen", type=parse_address, required=True, metavar="HOST:PORT")
    p.add_argument("--expect-seed", type=int)
    p.add_argument("--expect-size", type=int)
    p.add_argument("--registry", help="JSON file of trusted O-TEE keys")
    p.add_argument("--trust-seed", type=int, action="append", default=None,
                   help="trust the identity derived from this seed (default 0)")
    p.add_argument("--max-sessions", type=int, default=0, help="exit after N sessions")
    p.add_argument("--out", help="append session records (JSON lines) here")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("connect", parents=[common, mem], help="connect a simulated device to a server")
    p.add_argument("--process-seed", type=int, required=True)
    p.add_argument("--process-size", type=int, required=True)
    p.add_argument("--to", type=parse_address, required=True, metavar="HOST:PORT")
    p.add_argument("--identity-seed", type=int, default=0)
    p.add_argument("--plain", action="store_true", help="device without an O-TEE")
    p.add_argument("--timeout", type=float, default=10.0)
    p.set_defaults(func=cmd_connect)

    p = sub.add_parser("scenario", parents=[common], help="run a scenario file")
    p.add_argument("file")
    p.add_argument("--runs", type=int)
    p.set_defaults(func=cmd_scenario)

    p = sub.add_parser("analyze", help="statistical analyses")
    asub = p.add_subparsers(dest="analysis", required=True)
    p = asub.add_parser("uniformity", parents=[common, mem],
                        help="aggressor vs plain ServerHello.random")
    p.add_argument("--samples", type=int, required=True)
    p.add_argument("--out", help="write the JSON report here")
    p.add_argument("--csv-dir", help="dump both sample sets as CSV")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("calc", help="analytic calculators")
    csub = p.add_subparsers(dest="calc", required=True)
    p = csub.add_parser("preservation", parents=[common], help="memory preservation bounds")
    p.add_argument("--mode", choices=("general", "key"), required=True)
    p.add_argument("--i-size", type=int, help="number of measurable locations")
    p.add_argument("--x-bits", type=int, help="bits per location value")
    p.add_argument("--q", type=int, help="query budget")
    p.add_argument("--known-bits", type=int, default=0)
    p.add_argument("--locations-measured", type=int, help="C, locations per measurement")
    p.set_defaults(func=cmd_calc)

    p = sub.add_parser("bench", parents=[common], help="timing benchmarks (JSON)")
    p.add_argument("--target", choices=analysis.BENCH_TARGETS, required=True)
    p.add_argument("--iters", type=int, default=1000)
    p.set_defaults(func=cmd_bench)
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    if getattr(args, "trust_seed", 0) is None:
        args.trust_seed = [0]
    try:
        return args.func(args)
    except ScenarioError as exc:
        print(f"odt: error: {exc}\n\nscenario file format:\n{scenario.__doc__}", file=sys.stderr)
        return EXIT_USAGE
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"odt: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def main() -> None:
    sys.exit(run())
