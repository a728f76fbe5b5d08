"""Simulated two-PLC, twelve-motor plant and the end-to-end scenario.

PLC1 drives motors 1-5 and raises holding register 0 when its sequence is
done. Gateway 1 publishes that flag, gateway 2 writes it into PLC2's coil 0
(FC05), and PLC2 runs motors 6-12, raising registers 0 and 1 when motors 9
and 11 finish. Gateway 2 publishes those, gateway 1 writes them into PLC1's
coils 0 and 1 (FC15), and PLC1 starts over.
"""
from __future__ import annotations

import asyncio
import logging
import random
import time
from dataclasses import dataclass, field, replace
from importlib import resources
from typing import Optional

from .events import Event, EventLog
from .gateway import Gateway, GatewayConfig, ModbusSettings, MqttSettings, ReadMap, WriteMap
from .modbus.codec import FUNCTION_NAMES
from .modbus.runtime import (
    CorruptingPort,
    DataStore,
    MasterTiming,
    ModbusSlave,
    ModbusTrace,
    SerialParams,
    SimSerialLink,
    StreamSerialPort,
)
from .mqtt.codec import decode_packet
from .mqtt.runtime import Broker, MemoryNetwork, WireLog

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

log = logging.getLogger(__name__)

PLC1_MOTORS = tuple(range(1, 6))
PLC2_MOTORS = tuple(range(6, 13))
OWNED = {1: PLC1_MOTORS, 2: PLC2_MOTORS}
# PLC2 raises register 0 when motor 9 is done and register 1 for motor 11.
PLC2_FLAG_MOTORS = {9: 0, 11: 1}

PROGRESS_EVENTS = frozenset({"sequence_start", "motor_done", "flag_set", "restart", "rearm",
                             "publish", "receive", "write"})


class ConfigError(Exception):
    pass


class DeadlockDetected(Exception):
    def __init__(self, reason: str, report: "ScenarioReport"):
        super().__init__(reason)
        self.report = report


# -- motors and PLC programs -----------------------------------------------------


@dataclass
class Motor:
    id: int
    duration: int
    state: str = "idle"
    remaining_ticks: int = 0

    def start(self) -> None:
        self.state = "running"
        self.remaining_ticks = self.duration

    def tick(self) -> bool:
        """Advance one tick; True on the tick the motor finishes."""
        if self.state != "running":
            return False
        self.remaining_ticks -= 1
        if self.remaining_ticks == 0:
            self.state = "done"
            return True
        return False

    def reset(self) -> None:
        self.state = "idle"
        self.remaining_ticks = 0


def default_durations(seed: int = 1, low: int = 5, high: int = 20) -> dict[int, int]:
    rng = random.Random(seed)
    return {m: rng.randint(low, high) for m in range(1, 13)}


class PlcProgram:
    """Scan-cycle program of one PLC, operating on its own DataStore.

    ``coil_edge_memory`` holds coil values from the previous scan; rising
    and falling edges are latched until the program consumes them.
    """

    def __init__(self, plc_id: int, durations: dict[int, int], store: Optional[DataStore] = None,
                 events: Optional[EventLog] = None):
        if plc_id not in OWNED:
            raise ConfigError(f"plc id must be 1 or 2, got {plc_id}")
        self.id = plc_id
        self.actor = f"plc{plc_id}"
        self.owned = OWNED[plc_id]
        self.motors = {m: Motor(m, durations[m]) for m in self.owned}
        for motor in self.motors.values():
            if motor.duration < 1:
                raise ConfigError(f"motor {motor.id} duration must be >= 1 tick")
        self.store = store if store is not None else DataStore()
        self.events = events if events is not None else EventLog(echo=False)
        self.phase = "running" if plc_id == 1 else "idle"
        self.coil_edge_memory = [False, False]
        self.rose = [False, False]
        self.fell = [False, False]
        self.commanded: list[int] = []
        self.cycles = 0
        self._started = False

    def _emit(self, event: str, **detail) -> None:
        self.events.emit(self.actor, event, **detail)

    # edge detection

    def _sample_coils(self) -> list[bool]:
        coils = self.store.read_coils(0, 2)
        for i, (before, now) in enumerate(zip(self.coil_edge_memory, coils)):
            if now and not before:
                self.rose[i] = True
            elif before and not now:
                self.fell[i] = True
        self.coil_edge_memory = coils
        return coils

    def clear_edge_memory(self) -> None:
        self.rose = [False, False]
        self.fell = [False, False]
        self.coil_edge_memory = self.store.read_coils(0, 2)

    # motors

    def _start_motor(self, motor_id: int) -> None:
        if motor_id not in self.owned:
            raise RuntimeError(f"{self.actor} may not command motor {motor_id}")
        self.motors[motor_id].start()
        self.commanded.append(motor_id)
        self._emit("motor_start", motor=motor_id)

    def _reset_motors(self) -> None:
        for motor in self.motors.values():
            motor.reset()

    def _advance_motors(self) -> list[int]:
        """Run the owned motors one after another; return ids finished this tick."""
        finished = []
        running = [m for m in self.motors.values() if m.state == "running"]
        if not running:
            idle = [m for m in self.motors.values() if m.state == "idle"]
            if not idle:
                return finished
            self._start_motor(idle[0].id)
            running = [self.motors[idle[0].id]]
        for motor in running:
            if motor.tick():
                finished.append(motor.id)
                self._emit("motor_done", motor=motor.id)
        return finished

    @property
    def all_done(self) -> bool:
        return all(m.state == "done" for m in self.motors.values())

    def _begin_sequence(self) -> None:
        self._reset_motors()
        self.phase = "running"
        self._emit("sequence_start")

    # handshake rules, kept separate so they are easy to revise

    def peer_flags_clear(self, coils: list[bool]) -> bool:
        """PLC1 may raise its flag only once PLC2's flags have dropped back to 0.

        That drop proves gateway 2 saw this PLC's flag fall, so the next rising
        edge cannot be lost between polls.
        """
        return not any(coils)

    def rearm_ready(self) -> bool:
        """PLC2 re-arms after coil 0 falls, i.e. after PLC1 has restarted."""
        return self.fell[0]

    # scan

    def step(self, now: float = 0.0) -> None:
        coils = self._sample_coils()
        if self.id == 1:
            self._step_plc1(coils)
        else:
            self._step_plc2()

    def _step_plc1(self, coils: list[bool]) -> None:
        if not self._started:
            self._started = True
            self._emit("sequence_start")
        if self.phase == "running":
            self._advance_motors()
            if self.all_done:
                self.phase = "ready"
        if self.phase == "ready" and self.peer_flags_clear(coils):
            self.rose = [False, False]
            self.store.write_register(0, 1)
            self.phase = "waiting"
            self._emit("flag_set", reg=0, value=1)
        if self.phase == "waiting" and self.rose[0] and self.rose[1]:
            self.store.write_register(0, 0)
            self.cycles += 1
            self._emit("restart", cycle=self.cycles)
            self.clear_edge_memory()
            self._begin_sequence()

    def _step_plc2(self) -> None:
        if self.phase == "idle" and self.rose[0]:
            self.rose = [False, False]
            self.fell = [False, False]
            self._begin_sequence()
        if self.phase == "running":
            for motor_id in self._advance_motors():
                reg = PLC2_FLAG_MOTORS.get(motor_id)
                if reg is not None:
                    self.store.write_register(reg, 1)
                    self._emit("flag_set", reg=reg, value=1, motor=motor_id)
            if self.all_done:
                self.phase = "done"
        if self.phase == "done" and self.rearm_ready():
            self.store.write_register(0, 0)
            self.store.write_register(1, 0)
            self.cycles += 1
            self._emit("rearm", cycle=self.cycles)
            self.clear_edge_memory()
            self.phase = "idle"


def plc_step(program: PlcProgram, tick: float = 0.0) -> None:
    program.step(tick)


class PlcNode:
    """A PLC: its program's scan loop plus a Modbus slave on its serial port."""

    def __init__(self, program: PlcProgram, port, address: int, tick: float):
        self.program = program
        self.slave = ModbusSlave(port, program.store, address)
        self.tick = tick

    async def scan(self) -> None:
        loop = asyncio.get_running_loop()
        next_scan = loop.time()
        while True:
            self.program.step(loop.time())
            next_scan += self.tick
            await asyncio.sleep(max(0.0, next_scan - loop.time()))

    async def run(self) -> None:
        await asyncio.gather(self.scan(), self.slave.serve())


# -- scenario configuration ----------------------------------------------------------


def default_gateway_configs(serial: SerialParams = SerialParams(),
                            timing: Optional[MasterTiming] = None,
                            broker_address: str = "broker", port: int = 1883,
                            keepalive: int = 5, poll_period: float = 0.05):
    timing = timing or MasterTiming.for_serial(serial)
    gw1 = GatewayConfig(
        name="gw1",
        modbus=ModbusSettings(slave_address=1, serial=serial, timing=timing, poll_period=poll_period),
        read_map=ReadMap(start_register=0, count=1),
        write_map=WriteMap(mode="multi-coil", start_coil=0, count=2),
        mqtt=MqttSettings(client_id="gw1", publish_topic="plc1/flags", subscribe_topic="plc2/flags",
                          broker_address=broker_address, port=port, keepalive=keepalive),
    )
    gw2 = GatewayConfig(
        name="gw2",
        modbus=ModbusSettings(slave_address=2, serial=serial, timing=timing, poll_period=poll_period),
        read_map=ReadMap(start_register=0, count=2),
        write_map=WriteMap(mode="single-coil", start_coil=0, count=1),
        mqtt=MqttSettings(client_id="gw2", publish_topic="plc2/flags", subscribe_topic="plc1/flags",
                          broker_address=broker_address, port=port, keepalive=keepalive),
    )
    return gw1, gw2


@dataclass
class ScenarioConfig:
    cycles: int = 1
    tick: float = 0.01
    seed: int = 1
    motor_durations: dict[int, int] = field(default_factory=dict)
    serial: SerialParams = SerialParams()
    framing: str = "boundary"
    gateway1: Optional[GatewayConfig] = None
    gateway2: Optional[GatewayConfig] = None
    broker_enabled: bool = True
    corruption_rate: float = 0.0
    quiescence: float = 10.0
    deadline: Optional[float] = None

    def __post_init__(self):
        if self.cycles < 1:
            raise ConfigError("cycles must be >= 1")
        if self.tick <= 0:
            raise ConfigError("tick must be positive")
        if self.framing not in ("boundary", "gap"):
            raise ConfigError(f"framing must be boundary or gap, got {self.framing!r}")
        if not 0.0 <= self.corruption_rate < 1.0:
            raise ConfigError("corruption_rate must be in [0, 1)")
        if not self.motor_durations:
            self.motor_durations = default_durations(self.seed)
        self.motor_durations = {int(k): int(v) for k, v in self.motor_durations.items()}
        missing = set(range(1, 13)) - set(self.motor_durations)
        if missing:
            raise ConfigError(f"motor_durations missing motors {sorted(missing)}")
        if self.gateway1 is None or self.gateway2 is None:
            gw1, gw2 = default_gateway_configs(self.serial)
            self.gateway1 = self.gateway1 or gw1
            self.gateway2 = self.gateway2 or gw2
        if self.deadline is None:
            self.deadline = 60.0 * self.cycles + 60.0

    def with_cycles(self, cycles: int) -> "ScenarioConfig":
        return replace(self, cycles=cycles, deadline=None)


def scenario_config_from_dict(data: dict) -> ScenarioConfig:
    sc = dict(data.get("scenario", {}))
    try:
        serial = SerialParams(**data.get("serial", {}))
        timing_raw = dict(data.get("timing", {}))
        timing = MasterTiming.for_serial(
            serial,
            response_timeout=timing_raw.pop("response_timeout", 0.5),
            retries=timing_raw.pop("retries", 1),
            inter_frame_delay=timing_raw.pop("inter_frame_delay", None),
        )
        mqtt = data.get("mqtt", {})
        gw1, gw2 = default_gateway_configs(
            serial, timing,
            broker_address=mqtt.get("broker_address", "broker"),
            port=mqtt.get("port", 1883),
            keepalive=mqtt.get("keepalive", 5),
            poll_period=sc.pop("poll_period", 0.05),
        )
        durations = sc.pop("motor_durations", {})
        return ScenarioConfig(serial=serial, gateway1=gw1, gateway2=gw2,
                              motor_durations={int(k): v for k, v in durations.items()}, **sc)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid scenario config: {exc}") from None


def load_scenario_config(path=None) -> ScenarioConfig:
    """Load a scenario TOML file; ``None`` loads the packaged default."""
    try:
        if path is None:
            text = resources.files("plcbridge").joinpath("data/scenario.toml").read_text()
        else:
            with open(path, encoding="utf-8") as fh:
                text = fh.read()
        data = tomllib.loads(text)
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot read scenario config {path}: {exc}") from None
    return scenario_config_from_dict(data)


# -- report ------------------------------------------------------------------------


@dataclass(frozen=True)
class TraceEvent:
    cycle: int
    event: Event

    def format(self) -> str:
        e = self.event
        return f"{self.cycle} {e.seq} {e.ts:.6f} {e.actor} {e.event} {e.detail_text()}"


def assign_cycles(events: list[Event]) -> list[TraceEvent]:
    """Cycle n runs up to and including PLC1's n-th restart."""
    out = []
    cycle = 1
    for ev in events:
        out.append(TraceEvent(cycle, ev))
        if ev.actor == "plc1" and ev.event == "restart":
            cycle += 1
    return out


@dataclass
class ScenarioReport:
    cycles_target: int
    cycles_completed: int
    events: list[Event]
    modbus_trace: ModbusTrace
    mqtt_wire: WireLog
    sim_time: float
    wall_time: float
    errors: dict[str, int] = field(default_factory=dict)
    corrupted_frames: int = 0
    outcome: str = "completed"

    @property
    def trace(self) -> list[TraceEvent]:
        return assign_cycles(self.events)

    def modbus_function_counts(self) -> dict[tuple[str, str, int], int]:
        """``(link, direction, function) -> frames`` over the Modbus wire trace."""
        counts: dict[tuple[str, str, int], int] = {}
        for rec in self.modbus_trace.records:
            if len(rec.data) < 2:
                continue
            key = (rec.link, rec.direction, rec.data[1])
            counts[key] = counts.get(key, 0) + 1
        return counts

    def mqtt_packet_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for rec in self.mqtt_wire.records:
            if rec.endpoint != "broker":
                continue
            name = type(decode_packet(rec.data)[0]).__name__.upper()
            key = f"{name}_{rec.direction}"
            counts[key] = counts.get(key, 0) + 1
        return counts

    def publish_frames(self) -> list[bytes]:
        """Every PUBLISH on the MQTT wire, as raw bytes, both directions."""
        return [rec.data for rec in self.mqtt_wire.records
                if rec.endpoint == "broker" and rec.data[0] >> 4 == 3]

    def summary(self) -> dict[str, object]:
        out: dict[str, object] = {
            "outcome": self.outcome,
            "cycles_target": self.cycles_target,
            "cycles_completed": self.cycles_completed,
            "sim_time_s": round(self.sim_time, 6),
            "wall_time_s": round(self.wall_time, 3),
            "events": len(self.events),
            "modbus_frames": len(self.modbus_trace.records),
            "mqtt_publish_frames": len(self.publish_frames()),
            "corrupted_frames": self.corrupted_frames,
        }
        for (link, direction, fc), n in sorted(self.modbus_function_counts().items()):
            label = FUNCTION_NAMES.get(fc & 0x7F, "unknown").lower().replace(" ", "_")
            out[f"frames.{link}.{direction}.fc{fc:02d}_{label}"] = n
        for key, n in sorted(self.mqtt_packet_counts().items()):
            out[f"mqtt.{key.lower()}"] = n
        for key, n in sorted(self.errors.items()):
            out[f"errors.{key}"] = n
        return out

    def format(self, violations: Optional[list[str]] = None) -> str:
        lines = ["# cycle seq ts actor event detail"]
        lines += [t.format() for t in self.trace]
        lines.append("# summary")
        for key, value in self.summary().items():
            lines.append(f"{key} {value}")
        if violations is not None:
            lines.append(f"violations {len(violations)}")
            lines += [f"violation {v}" for v in violations]
        return "\n".join(lines) + "\n"


# -- trace checking ----------------------------------------------------------------


def check_trace(report_or_events) -> list[str]:
    """Ordering and publish-on-change violations in a scenario trace.

    Per cycle: (a) every PLC2 sequence start comes after a PLC1 flag set,
    (b) every PLC1 restart comes after PLC2's motor-9 and motor-11 flags,
    and (c) no gateway publishes a payload equal to its previous one.
    Only list order matters, so hand-edited traces check consistently.
    """
    events = report_or_events.events if isinstance(report_or_events, ScenarioReport) \
        else list(report_or_events)
    violations: list[str] = []
    cycle = 1
    flag_seen = False
    plc2_flags: set[int] = set()
    last_payload: dict[str, str] = {}
    for ev in events:
        if ev.actor == "plc1" and ev.event == "flag_set":
            flag_seen = True
        elif ev.actor == "plc2" and ev.event == "sequence_start":
            if not flag_seen:
                violations.append(f"cycle {cycle}: plc2 sequence_start (seq {ev.seq}) "
                                  f"precedes plc1 flag_set")
        elif ev.actor == "plc2" and ev.event == "flag_set":
            plc2_flags.add(ev.detail.get("motor"))
        elif ev.actor == "plc1" and ev.event == "restart":
            missing = sorted(m for m in PLC2_FLAG_MOTORS if m not in plc2_flags)
            if missing:
                violations.append(f"cycle {cycle}: plc1 restart (seq {ev.seq}) precedes plc2 "
                                  f"flags for motor(s) {missing}")
            cycle += 1
            flag_seen = False
            plc2_flags = set()
        elif ev.event == "publish":
            payload = ev.detail.get("payload")
            payload = payload.hex() if isinstance(payload, (bytes, bytearray)) else str(payload)
            if last_payload.get(ev.actor) == payload:
                violations.append(f"cycle {cycle}: {ev.actor} publish (seq {ev.seq}) "
                                  f"without a snapshot change")
            last_payload[ev.actor] = payload
    return violations


# -- running -----------------------------------------------------------------------


def _progress_time(events: EventLog, since: int) -> Optional[float]:
    for ev in reversed(events.events[since:]):
        if ev.event in PROGRESS_EVENTS:
            return ev.ts
    return None


@dataclass
class _Plant:
    events: EventLog
    trace: ModbusTrace
    wire: WireLog
    broker: Broker
    programs: tuple
    gateways: tuple
    corrupters: list


async def _build_memory(config: ScenarioConfig, events: EventLog) -> tuple[_Plant, list]:
    trace, wire = ModbusTrace(), WireLog()
    net = MemoryNetwork()
    broker = Broker(wire=wire)
    gw_cfgs = (config.gateway1, config.gateway2)
    if config.broker_enabled:
        hosts = {(c.mqtt.broker_address, c.mqtt.port) for c in gw_cfgs}
        for host, port in sorted(hosts):
            broker.attach(net, host, port)
    rng = random.Random(config.seed)
    programs, gateways, corrupters, coros = [], [], [], []
    for plc_id, cfg in zip((1, 2), gw_cfgs):
        link = SimSerialLink(config.serial, config.framing, trace, name=f"plc{plc_id}")
        slave_port = link.slave
        if config.corruption_rate:
            slave_port = CorruptingPort(link.slave, config.corruption_rate,
                                        random.Random(rng.getrandbits(32)))
            corrupters.append(slave_port)
        program = PlcProgram(plc_id, config.motor_durations, events=events)
        node = PlcNode(program, slave_port, cfg.modbus.slave_address, config.tick)
        gateway = Gateway(cfg, link.master, connector=net.connect, events=events, wire=wire)
        programs.append(program)
        gateways.append(gateway)
        coros.append(node.run())
    plant = _Plant(events, trace, wire, broker, tuple(programs), tuple(gateways), corrupters)
    return plant, coros


async def _build_tcp(config: ScenarioConfig, events: EventLog) -> tuple[_Plant, list]:
    """Same plant on real loopback sockets: one broker, two serial-over-TCP lines."""
    trace, wire = ModbusTrace(), WireLog()
    broker = Broker(wire=wire)
    port = 0
    if config.broker_enabled:
        port = await broker.start_tcp("127.0.0.1", 0)
    programs, gateways, corrupters, coros = [], [], [], []
    rng = random.Random(config.seed)
    for plc_id, cfg in zip((1, 2), (config.gateway1, config.gateway2)):
        program = PlcProgram(plc_id, config.motor_durations, events=events)
        programs.append(program)

        async def serve(reader, writer, program=program, cfg=cfg, plc_id=plc_id):
            slave_port = StreamSerialPort(reader, writer, config.serial, trace, f"plc{plc_id}", "S>M")
            if config.corruption_rate:
                slave_port = CorruptingPort(slave_port, config.corruption_rate,
                                            random.Random(rng.getrandbits(32)))
                corrupters.append(slave_port)
            await ModbusSlave(slave_port, program.store, cfg.modbus.slave_address).serve()

        server = await asyncio.start_server(serve, "127.0.0.1", 0)
        serial_port = server.sockets[0].getsockname()[1]
        reader, writer = await asyncio.open_connection("127.0.0.1", serial_port)
        master_port = StreamSerialPort(reader, writer, config.serial, trace, f"plc{plc_id}", "M>S")
        live_cfg = replace(cfg, mqtt=replace(cfg.mqtt, broker_address="127.0.0.1",
                                                   port=port or 1))
        gateways.append(Gateway(live_cfg, master_port, events=events, wire=wire))
        node = PlcNode(program, None, cfg.modbus.slave_address, config.tick)
        coros.append(node.scan())
        coros.append(_hold(server))
    plant = _Plant(events, trace, wire, broker, tuple(programs), tuple(gateways), corrupters)
    return plant, coros


async def _hold(server) -> None:
    try:
        await asyncio.Event().wait()
    finally:
        server.close()


async def _run(config: ScenarioConfig, live: bool) -> ScenarioReport:
    loop = asyncio.get_running_loop()
    wall_start = time.perf_counter()
    t0 = loop.time()
    events = EventLog(echo=live)
    plant, coros = await (_build_tcp if live else _build_memory)(config, events)
    shutdown = asyncio.Event()
    background = [loop.create_task(c) for c in coros]
    gw_tasks = [loop.create_task(g.run(shutdown)) for g in plant.gateways]
    plc1 = plant.programs[0]
    outcome = "completed"
    last_progress = t0
    seen = 0
    check_every = max(config.tick, 0.05)
    try:
        while plc1.cycles < config.cycles:
            await asyncio.sleep(check_every)
            ts = _progress_time(events, seen)
            seen = len(events.events)
            if ts is not None:
                last_progress = ts
            now = loop.time()
            if now - last_progress >= config.quiescence:
                outcome = "deadlock"
                break
            if now - t0 >= config.deadline:
                outcome = "deadline"
                break
            for task in gw_tasks:
                if task.done() and task.exception() is not None:
                    raise task.exception()
    finally:
        shutdown.set()
        await asyncio.gather(*gw_tasks, return_exceptions=True)
        for task in background:
            task.cancel()
        await asyncio.gather(*background, return_exceptions=True)
        await plant.broker.stop()

    errors: dict[str, int] = {}
    for gw in plant.gateways:
        errors[f"{gw.name}.modbus"] = gw.modbus_errors
        errors[f"{gw.name}.lost_writes"] = gw.lost_writes
        errors[f"{gw.name}.dropped_messages"] = gw.dropped_messages
        errors[f"{gw.name}.failed_attempts"] = gw.master.failed_attempts
    report = ScenarioReport(
        cycles_target=config.cycles,
        cycles_completed=plc1.cycles,
        events=list(events.events),
        modbus_trace=plant.trace,
        mqtt_wire=plant.wire,
        sim_time=loop.time() - t0,
        wall_time=time.perf_counter() - wall_start,
        errors=errors,
        corrupted_frames=sum(c.corrupted for c in plant.corrupters),
        outcome=outcome,
    )
    if outcome == "deadlock":
        raise DeadlockDetected(f"no progress for {config.quiescence} s after {plc1.cycles} of "
                               f"{config.cycles} cycles", report)
    if outcome == "deadline":
        raise DeadlockDetected(f"deadline of {config.deadline} s reached after {plc1.cycles} of "
                               f"{config.cycles} cycles", report)
    return report


def run_scenario(config: ScenarioConfig, deterministic: bool = True) -> ScenarioReport:
    """Run the whole plant until ``config.cycles`` handshakes complete.

    Deterministic mode runs every process on one virtual clock over
    in-memory transports. Otherwise the same processes run in real time on
    loopback sockets.
    """
    if deterministic:
        from .simclock import run_virtual

        return run_virtual(_run(config, live=False))
    return asyncio.run(_run(config, live=True))


__all__ = [
    "ConfigError", "DeadlockDetected", "Motor", "PlcNode", "PlcProgram", "ScenarioConfig",
    "ScenarioReport", "TraceEvent", "assign_cycles", "check_trace", "default_durations",
    "default_gateway_configs", "load_scenario_config", "plc_step", "run_scenario",
    "scenario_config_from_dict",
]
