"""Command-line entry points.

    plcbridge broker --listen 0.0.0.0:1883
    plcbridge plc --id 1 --listen 127.0.0.1:5021
    plcbridge gateway --config configs/gateway1.toml
    plcbridge scenario --cycles 10 --deterministic [--out DIR]
    plcbridge decode-modbus 010300000001840a
    plcbridge decode-mqtt c000
"""
from __future__ import annotations

import argparse
import asyncio
import contextlib
import dataclasses
import logging
import signal
import socket
import sys

from .modbus.codec import CrcMismatch, DecodeError, decode_adu, describe as describe_adu
from .modbus.runtime import ModbusSlave, SerialParams, StreamSerialPort, TraceRecord

log = logging.getLogger("plcbridge")


def _split_addr(text: str, default_port: int) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep:
        return text, default_port
    try:
        return host or "0.0.0.0", int(port)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad address {text!r}, expected HOST:PORT") from None


def _hex(text: str) -> bytes:
    cleaned = "".join(text.split()).replace(":", "")
    try:
        return bytes.fromhex(cleaned)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a hex string: {text!r}") from None


def _install_shutdown(shutdown: asyncio.Event) -> None:
    loop = asyncio.get_running_loop()
    for sig in (signal.SIGINT, signal.SIGTERM):
        with contextlib.suppress(NotImplementedError, RuntimeError):
            loop.add_signal_handler(sig, shutdown.set)


# -- decoders --------------------------------------------------------------------


def decode_modbus_text(data: bytes, role: str = "auto") -> tuple[str, bool]:
    """Human-readable verdict for one ADU; returns ``(text, ok)``."""
    roles = ("slave", "master") if role == "auto" else (role,)
    errors = []
    for r in roles:
        try:
            frame = decode_adu(data, r)
        except CrcMismatch as exc:
            return (f"CRC MISMATCH (computed 0x{exc.expected:04X}, "
                    f"received 0x{exc.received:04X})", False)
        except DecodeError as exc:
            errors.append(f"{type(exc).__name__}: {exc}")
            continue
        return f"{describe_adu(frame)}, CRC OK", True
    return "INVALID " + "; ".join(errors), False


def cmd_decode_modbus(args) -> int:
    ok_all = True
    if args.trace:
        with open(args.trace) as fh:
            for line in fh:
                if not line.strip() or line.startswith("#"):
                    continue
                rec = TraceRecord.parse(line)
                text, ok = decode_modbus_text(rec.data, "slave" if rec.direction == "M>S" else "master")
                print(f"{rec.ts:.6f} {rec.link} {rec.direction} {text}")
                ok_all &= ok
    for data in args.hex:
        text, ok = decode_modbus_text(data, args.role)
        print(text)
        ok_all &= ok
    return 0 if ok_all else 1


def cmd_decode_mqtt(args) -> int:
    from .mqtt.codec import MqttError, NeedMoreBytes, decode_packet, describe

    status = 0
    for data in args.hex:
        offset = 0
        while offset < len(data):
            try:
                packet, used = decode_packet(data[offset:])
            except NeedMoreBytes as exc:
                print(f"INCOMPLETE at byte {offset}: {exc}")
                status = 1
                break
            except MqttError as exc:
                print(f"INVALID at byte {offset}: {type(exc).__name__}: {exc}")
                status = 1
                break
            print(f"{describe(packet)} ({used} bytes)")
            offset += used
    return status


# -- long-running processes ----------------------------------------------------------


async def _broker_main(host: str, port: int) -> None:
    from .mqtt.runtime import Broker

    broker = Broker()
    bound = await broker.start_tcp(host, port)
    log.info("broker listening on %s:%d", host, bound)
    shutdown = asyncio.Event()
    _install_shutdown(shutdown)
    await shutdown.wait()
    await broker.stop()


def cmd_broker(args) -> int:
    host, port = args.listen
    asyncio.run(_broker_main(host, port))
    return 0


async def _plc_main(args) -> None:
    from .events import EventLog
    from .plant import PlcNode, PlcProgram, default_durations

    host, port = args.listen
    serial = SerialParams(args.baud, args.parity, args.data_bits, args.stop_bits)
    program = PlcProgram(args.id, default_durations(args.seed), events=EventLog())
    address = args.address or args.id

    async def serve(reader, writer):
        peer = writer.get_extra_info("peername")
        log.info("plc%d: master connected from %s", args.id, peer)
        port_ = StreamSerialPort(reader, writer, serial, name=f"plc{args.id}", direction="S>M")
        with contextlib.suppress(Exception):
            await ModbusSlave(port_, program.store, address).serve()
        log.info("plc%d: master %s disconnected", args.id, peer)

    server = await asyncio.start_server(serve, host, port)
    log.info("plc%d (slave %d) listening on %s:%d", args.id, address, host, port)
    node = PlcNode(program, None, address, args.tick)
    scan = asyncio.create_task(node.scan())
    shutdown = asyncio.Event()
    _install_shutdown(shutdown)
    await shutdown.wait()
    scan.cancel()
    server.close()
    await server.wait_closed()


def cmd_plc(args) -> int:
    asyncio.run(_plc_main(args))
    return 0


async def _gateway_main(config) -> None:
    from .events import EventLog
    from .gateway import FatalConfig, Gateway

    host, port = _split_addr(config.modbus.endpoint, 502)
    delay = 0.5
    while True:
        try:
            reader, writer = await asyncio.open_connection(host, port)
            break
        except OSError as exc:
            if isinstance(exc, socket.gaierror):
                raise FatalConfig(f"cannot resolve PLC endpoint {config.modbus.endpoint!r}") from None
            log.warning("%s: PLC endpoint %s unreachable (%s), retrying in %.1f s",
                        config.name, config.modbus.endpoint, exc, delay)
            await asyncio.sleep(delay)
            delay = min(2 * delay, 8.0)
    serial_port = StreamSerialPort(reader, writer, config.modbus.serial, name=config.name)
    gateway = Gateway(config, serial_port, events=EventLog())
    shutdown = asyncio.Event()
    _install_shutdown(shutdown)
    await gateway.run(shutdown)


def cmd_gateway(args) -> int:
    from .gateway import FatalConfig, load_gateway_config

    try:
        config = load_gateway_config(args.config)
        asyncio.run(_gateway_main(config))
    except FatalConfig as exc:
        log.error("fatal config error: %s", exc)
        return 1
    return 0


def cmd_scenario(args) -> int:
    from .plant import ConfigError, DeadlockDetected, check_trace, load_scenario_config, run_scenario

    try:
        config = load_scenario_config(args.config)
        changes = {}
        if args.cycles is not None:
            changes.update(cycles=args.cycles, deadline=None)
        if args.corruption_rate is not None:
            changes["corruption_rate"] = args.corruption_rate
        if changes:
            config = dataclasses.replace(config, **changes)
    except ConfigError as exc:
        log.error("%s", exc)
        return 1

    failure = None
    try:
        report = run_scenario(config, deterministic=args.deterministic)
    except DeadlockDetected as exc:
        report, failure = exc.report, str(exc)
    violations = check_trace(report)
    if args.summary_only:
        print("\n".join(report.format(violations).split("# summary\n", 1)[1].splitlines()))
    else:
        sys.stdout.write(report.format(violations))
    if args.out:
        from .report import write_report

        for path in write_report(report, args.out, violations):
            log.info("wrote %s", path)
    if failure:
        log.error("scenario failed: %s", failure)
        return 1
    if violations:
        log.error("%d trace violation(s)", len(violations))
        return 1
    return 0


# -- argument parsing ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="plcbridge", description=__doc__.splitlines()[0] if __doc__ else None)
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging on stderr")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    s = sub.add_parser("broker", help="run the MQTT broker")
    s.add_argument("--listen", type=lambda t: _split_addr(t, 1883), default=("0.0.0.0", 1883),
                   metavar="ADDR:PORT")
    s.set_defaults(func=cmd_broker)

    s = sub.add_parser("plc", help="run a simulated PLC as a Modbus RTU slave over TCP")
    s.add_argument("--id", type=int, choices=(1, 2), required=True)
    s.add_argument("--listen", type=lambda t: _split_addr(t, 5020), required=True, metavar="ADDR:PORT")
    s.add_argument("--address", type=int, default=None, help="slave address (default: the PLC id)")
    s.add_argument("--tick", type=float, default=0.01, help="scan period in seconds")
    s.add_argument("--seed", type=int, default=1, help="seed for motor durations")
    s.add_argument("--baud", type=int, default=9600)
    s.add_argument("--parity", choices=("none", "even", "odd"), default="even")
    s.add_argument("--data-bits", type=int, choices=(7, 8), default=8)
    s.add_argument("--stop-bits", type=int, choices=(1, 2), default=1)
    s.set_defaults(func=cmd_plc)

    s = sub.add_parser("gateway", help="run a Modbus/MQTT gateway")
    s.add_argument("--config", required=True, metavar="FILE")
    s.set_defaults(func=cmd_gateway)

    s = sub.add_parser("scenario", help="run the two-PLC handshake scenario and print the report")
    s.add_argument("--config", default=None, metavar="FILE", help="scenario TOML (default: built-in)")
    s.add_argument("--cycles", type=int, default=None)
    s.add_argument("--deterministic", action="store_true",
                   help="virtual clock, in-memory transports (default: real time on loopback sockets)")
    s.add_argument("--corruption-rate", type=float, default=None,
                   help="probability of corrupting each Modbus response frame")
    s.add_argument("--out", default=None, metavar="DIR", help="write TSV tables and PNG figures here")
    s.add_argument("--summary-only", action="store_true", help="print only the summary block")
    s.set_defaults(func=cmd_scenario)

    s = sub.add_parser("decode-modbus", help="decode Modbus RTU frames given as hex")
    s.add_argument("hex", nargs="*", type=_hex)
    s.add_argument("--role", choices=("auto", "master", "slave"), default="auto",
                   help="receiving side: slave parses requests, master parses responses")
    s.add_argument("--trace", default=None, metavar="FILE", help="decode a Modbus trace file")
    s.set_defaults(func=cmd_decode_modbus)

    s = sub.add_parser("decode-mqtt", help="decode MQTT packets given as hex")
    s.add_argument("hex", nargs="+", type=_hex)
    s.set_defaults(func=cmd_decode_mqtt)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * args.verbose
    if args.command in ("broker", "plc", "gateway"):
        level = min(level, logging.INFO)
    logging.basicConfig(level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    if args.command == "decode-modbus" and not args.hex and not args.trace:
        parser.error("decode-modbus needs HEX arguments or --trace FILE")
    try:
        return args.func(args)
    except KeyboardInterrupt:
        return 0


if __name__ == "__main__":
    sys.exit(main())
