"""Command-line front end: assemble, disassemble, run, check, and the
end-to-end protocol demo.

Exit codes: 0 success, 1 policy or verification failure, 2 usage error.
All commands are deterministic given the same inputs and seeds.
"""

from __future__ import annotations

import argparse
import json
import socket
import sys
import threading
from dataclasses import replace

from . import checker, corpus, machine
from .assembler import (
    AssemblyError,
    ImageFormatError,
    assemble,
    decode_image,
    disassemble,
    encode_image,
)
from .engine import EncryptionEngine, client_decrypt, client_encrypt
from .isa import Mode
from .model import TaggedWord, snapshot
from .protocol import (
    Claims,
    ClientHandshake,
    ComputeRequest,
    ErrorResponse,
    ExportRequest,
    ImportRequest,
    ResultResponse,
    ServerSession,
    VerifyError,
    decode_frame,
    encode_frame,
    make_device_keypair,
    parse_compute_result,
)

USAGE_ERROR = 2
FAILURE = 1


def _int(text: str) -> int:
    return int(text, 0)


def _range(text: str) -> tuple[int, int]:
    start, sep, end = text.partition("..")
    if not sep:
        raise argparse.ArgumentTypeError("expected START..END")
    return int(start, 0), int(end, 0)


def _blind_word(text: str) -> tuple[int, int]:
    addr, sep, value = text.partition("=")
    if not sep:
        raise argparse.ArgumentTypeError("expected ADDR=VALUE")
    return int(addr, 0), int(value, 0)


def _add_machine_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--mode", choices=["model", "hardware"], default="hardware")
    p.add_argument("--allow-raw-unblind", action="store_true")
    p.add_argument("--mem-words", type=_int, default=65536)
    p.add_argument("--cache-lines", type=_int, default=16)
    p.add_argument(
        "--unblindable", type=_range, action="append", default=[],
        metavar="A..B", help="unblindable word-address range [A, B), repeatable",
    )
    p.add_argument("--mmio-console", type=_int, default=None, metavar="ADDR")
    p.add_argument("--max-steps", type=_int, default=100_000)


def _machine_config(args) -> machine.MachineConfig:
    ranges = list(args.unblindable)
    mmio = args.mmio_console
    if mmio is not None and not any(s <= mmio < e for s, e in ranges):
        ranges.append((mmio, mmio + 1))
    return machine.MachineConfig(
        mode=Mode(args.mode),
        allow_raw_unblind=args.allow_raw_unblind,
        memory_words=args.mem_words,
        cache_lines=args.cache_lines,
        unblindable_ranges=tuple(sorted(ranges)),
        mmio_console=mmio,
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="blindsim",
        description="taint-tracking machine simulator and protocol harness",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("asm", help="assemble source text into a binary image")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True)

    p = sub.add_parser("disasm", help="disassemble a binary image")
    p.add_argument("input")
    p.add_argument("-o", "--output", default=None)

    p = sub.add_parser("run", help="run a program image")
    p.add_argument("image")
    _add_machine_flags(p)
    p.add_argument(
        "--blind-word", type=_blind_word, action="append", default=[],
        metavar="ADDR=VALUE", help="inject a blinded word before running",
    )
    p.add_argument("--trace", default=None, metavar="PATH")

    p = sub.add_parser("check", help="static and randomized policy checks")
    p.add_argument("image")
    _add_machine_flags(p)
    p.add_argument("--sig", default="", help="taint signature, e.g. r1=B,r2=C,s0=B")
    p.add_argument("--trials", type=_int, default=200)
    p.add_argument("--steps", type=_int, default=200)
    p.add_argument("--seed", type=_int, default=0)
    p.add_argument("--report", default=None, metavar="PATH")

    p = sub.add_parser(
        "demo-protocol",
        help="handshake, import, compute, export against an in-process server",
    )
    p.add_argument("plaintext", help="file of whitespace-separated words")
    _add_machine_flags(p)
    p.add_argument("--program", default=None, help="program image (default: add-one)")
    p.add_argument("--dual", default=None, metavar="PATH",
                   help="second plaintext; assert both runs trace identically")
    p.add_argument("--seed", type=_int, default=0)
    p.add_argument("--trace", default=None, metavar="PATH")
    p.add_argument("--transport", choices=["memory", "socket"], default="memory")
    p.add_argument("--data-base", type=_int, default=0x100)
    p.add_argument("--result-base", type=_int, default=0x180)

    return parser


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_asm(args) -> int:
    try:
        source = open(args.input).read()
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    try:
        image = assemble(source)
    except AssemblyError as exc:
        for diag in exc.diagnostics:
            print(f"{args.input}:{diag}", file=sys.stderr)
        return FAILURE
    with open(args.output, "wb") as fh:
        fh.write(encode_image(image))
    return 0


def _load_image(path: str):
    with open(path, "rb") as fh:
        return decode_image(fh.read())


def cmd_disasm(args) -> int:
    try:
        image = _load_image(args.input)
    except (OSError, ImageFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    text = disassemble(image)
    if args.output:
        with open(args.output, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_run(args) -> int:
    cfg = _machine_config(args)
    try:
        image = _load_image(args.image)
        state = machine.boot_image(image, cfg)
    except (OSError, ImageFormatError, machine.LoadError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    memory = state.memory
    for addr, value in args.blind_word:
        if not 0 <= addr < cfg.memory_words:
            print(f"error: --blind-word address {addr:#x} out of range", file=sys.stderr)
            return USAGE_ERROR
        memory = memory.store(addr, TaggedWord(value & (1 << 64) - 1, True))
    state = replace(state, memory=memory)

    result = machine.run(state, cfg, args.max_steps)
    if args.trace:
        with open(args.trace, "w") as fh:
            fh.write(machine.format_trace(result.trace))
    print(f"outcome: {result.outcome.value} after {result.steps} step(s)")
    sys.stdout.write(snapshot(result.state))
    return 0 if result.outcome is machine.RunOutcome.HALTED else FAILURE


def cmd_check(args) -> int:
    cfg = _machine_config(args)
    try:
        image = _load_image(args.image)
        sig = checker.parse_signature(args.sig)
    except (OSError, ImageFormatError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR

    report = checker.analyze(image, sig, cfg, seed=args.seed)
    sys.stdout.write(report.format())

    dynamic = None
    if args.trials > 0:
        try:
            dynamic = checker.check_noninterference(
                image, trials=args.trials, steps=args.steps, cfg=cfg, seed=args.seed
            )
        except machine.LoadError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return USAGE_ERROR
        if dynamic.passed:
            print(f"non-interference: pass ({dynamic.trials} trials)")
        else:
            ce = dynamic.counterexample
            print(
                f"non-interference: FAIL at trial {ce.trial} step {ce.step}: "
                f"{ce.reason} (minimized to {ce.delta_words} differing word(s))"
            )

    if args.report:
        payload = {
            "verdict": report.verdict.value,
            "iterations": report.iterations,
            "bound_exceeded": report.bound_exceeded,
            "findings": [
                {
                    "pc": f.pc,
                    "instruction": f.instruction,
                    "reason": f.reason,
                    "fault": f.fault.value if f.fault else None,
                    "definite": f.definite,
                }
                for f in report.findings
            ],
            "noninterference": None
            if dynamic is None
            else {"passed": dynamic.passed, "trials": dynamic.trials},
        }
        with open(args.report, "w") as fh:
            json.dump(payload, fh, indent=2)
            fh.write("\n")

    ok = report.verdict is checker.Verdict.COMPLIANT and (
        dynamic is None or dynamic.passed
    )
    return 0 if ok else FAILURE


# ---------------------------------------------------------------------------
# Protocol demo
# ---------------------------------------------------------------------------


def _read_words(path: str) -> tuple[int, ...]:
    with open(path) as fh:
        return tuple(int(tok, 0) & (1 << 64) - 1 for tok in fh.read().split())


class _MemoryTransport:
    """Client-side transport that calls the server directly."""

    def __init__(self, session: ServerSession):
        self.session = session

    def round_trip(self, frame: bytes) -> bytes:
        return self.session.handle_frame(frame)

    def close(self) -> None:
        pass


class _SocketTransport:
    """Loopback byte-stream transport; the server runs on a thread."""

    def __init__(self, session: ServerSession):
        client_sock, server_sock = socket.socketpair()
        self._client = client_sock
        self._file = client_sock.makefile("rwb")
        server_file = server_sock.makefile("rwb")

        def serve():
            try:
                session.serve_stream(server_file)
            finally:
                server_file.close()
                server_sock.close()

        self._thread = threading.Thread(target=serve, daemon=True)
        self._thread.start()

    def round_trip(self, frame: bytes) -> bytes:
        self._file.write(frame)
        self._file.flush()
        header = self._file.read(4)
        length = int.from_bytes(header, "big")
        return header + self._file.read(length)

    def close(self) -> None:
        self._file.close()
        self._client.close()
        self._thread.join(timeout=5)


def _demo_session(
    plaintext: tuple[int, ...],
    image_bytes: bytes,
    entry: int,
    args,
    session_seed: int,
) -> tuple[tuple[int, ...], str]:
    """One full client session; returns (decrypted words, server trace)."""
    cfg = _machine_config(args)
    device_priv, device_pub = make_device_keypair(seed=args.seed)
    engine = EncryptionEngine(root_key=b"\x5a" * 32)
    claims = Claims(policy_mode=cfg.mode)
    session = ServerSession(
        device_priv, claims, engine, cfg, seed=session_seed, max_steps=args.max_steps
    )
    transport = (
        _SocketTransport(session)
        if args.transport == "socket"
        else _MemoryTransport(session)
    )
    try:
        client = ClientHandshake(device_pub, seed=session_seed + 1, required_mode=cfg.mode)
        key = client.finish(transport.round_trip(client.hello()))

        def request(msg):
            reply = decode_frame(transport.round_trip(encode_frame(msg)))
            if isinstance(reply, ErrorResponse):
                raise VerifyError(f"server: {reply.message}")
            assert isinstance(reply, ResultResponse)
            return reply.payload

        request(ImportRequest(args.data_base, client_encrypt(key, plaintext, counter=0)))
        outcome, steps = parse_compute_result(
            request(ComputeRequest(entry, image_bytes))
        )
        if outcome != "halted":
            raise VerifyError(f"computation did not halt: {outcome} after {steps} steps")
        envelope = request(ExportRequest(args.result_base, len(plaintext)))
        output = client_decrypt(key, envelope)
    finally:
        transport.close()
    return output, session.traces[0] if session.traces else ""


def cmd_demo_protocol(args) -> int:
    try:
        plaintext = _read_words(args.plaintext)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    if not plaintext:
        print("error: empty plaintext", file=sys.stderr)
        return USAGE_ERROR

    if args.program:
        try:
            image = _load_image(args.program)
        except (OSError, ImageFormatError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return USAGE_ERROR
    else:
        image = assemble(
            corpus.demo_add_one(
                len(plaintext), data_base=args.data_base, result_base=args.result_base
            )
        )
    image_bytes = encode_image(image)

    try:
        output, trace = _demo_session(plaintext, image_bytes, image.entry_pc, args, args.seed)
    except VerifyError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return FAILURE
    print("result:", " ".join(str(w) for w in output))
    if args.trace:
        with open(args.trace, "w") as fh:
            fh.write(trace)

    if args.dual:
        try:
            plaintext2 = _read_words(args.dual)
        except (OSError, ValueError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return USAGE_ERROR
        if len(plaintext2) != len(plaintext):
            print("error: --dual plaintext must have the same length", file=sys.stderr)
            return USAGE_ERROR
        try:
            output2, trace2 = _demo_session(
                plaintext2, image_bytes, image.entry_pc, args, args.seed
            )
        except VerifyError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return FAILURE
        print("result2:", " ".join(str(w) for w in output2))
        if args.trace:
            with open(args.trace + ".b", "w") as fh:
                fh.write(trace2)
        if trace != trace2:
            print("TRACES DIFFER: blinded data influenced observable behavior")
            return FAILURE
        print(f"traces: byte-identical ({len(trace.splitlines())} events)")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else USAGE_ERROR
    handlers = {
        "asm": cmd_asm,
        "disasm": cmd_disasm,
        "run": cmd_run,
        "check": cmd_check,
        "demo-protocol": cmd_demo_protocol,
    }
    return handlers[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
