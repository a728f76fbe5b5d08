"""Modbus RTU <-> MQTT gateway.

Each gateway is the master of one PLC. It polls the PLC's flag registers
with FC03 and publishes them when they change; flag payloads arriving on
its subscribe topic are written back into the PLC as coils, with FC05 for
a single coil and FC15 for several.
"""
from __future__ import annotations

import asyncio
import logging
import socket
import struct
from dataclasses import dataclass
from typing import Optional

from .events import EventLog
from .modbus.codec import (
    ReadHoldingRegistersReq,
    RtuFrame,
    SlaveAddress,
    WriteMultipleCoilsReq,
    WriteSingleCoilReq,
)
from .modbus.runtime import (
    ExceptionReturned,
    MasterTiming,
    ModbusMaster,
    ModbusTimeout,
    PortClosed,
    SerialParams,
)
from .mqtt.runtime import (
    DEFAULT_PORT,
    BrokerUnreachable,
    MqttClient,
    MqttError,
    NotConnected,
)

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

log = logging.getLogger(__name__)

RECONNECT_INITIAL = 0.5
RECONNECT_MAX = 8.0


class FatalConfig(Exception):
    pass


class PayloadLengthMismatch(ValueError):
    pass


@dataclass(frozen=True)
class ModbusSettings:
    slave_address: int = 1
    serial: SerialParams = SerialParams()
    timing: MasterTiming = MasterTiming()
    poll_period: float = 0.05
    # host:port of the PLC's serial-over-TCP endpoint (live mode only)
    endpoint: str = "127.0.0.1:5021"


@dataclass(frozen=True)
class ReadMap:
    start_register: int = 0
    count: int = 1


@dataclass(frozen=True)
class WriteMap:
    mode: str = "single-coil"
    start_coil: int = 0
    count: int = 1


@dataclass(frozen=True)
class MqttSettings:
    client_id: str = "gateway"
    publish_topic: str = "plc1/flags"
    subscribe_topic: str = "plc2/flags"
    broker_address: str = "127.0.0.1"
    port: int = DEFAULT_PORT
    retain: bool = False
    keepalive: int = 60


@dataclass(frozen=True)
class GatewayConfig:
    name: str = "gateway"
    modbus: ModbusSettings = ModbusSettings()
    read_map: ReadMap = ReadMap()
    write_map: WriteMap = WriteMap()
    mqtt: MqttSettings = MqttSettings()
    enabled: bool = True

    def __post_init__(self):
        SlaveAddress(self.modbus.slave_address)
        if self.modbus.slave_address == 0:
            raise FatalConfig("a gateway must poll a unicast slave address, not broadcast")
        self.modbus.timing.check(self.modbus.serial)
        if self.modbus.poll_period <= 0:
            raise FatalConfig("poll_period must be positive")
        if self.read_map.count not in (1, 2):
            raise FatalConfig(f"read_map.count must be 1 or 2, got {self.read_map.count}")
        wm = self.write_map
        if wm.mode == "single-coil":
            if wm.count != 1:
                raise FatalConfig("single-coil write map needs count = 1")
        elif wm.mode == "multi-coil":
            if wm.count < 2:
                raise FatalConfig("multi-coil write map needs count >= 2")
        else:
            raise FatalConfig(f"write_map.mode must be single-coil or multi-coil, got {wm.mode!r}")
        if self.mqtt.retain:
            raise FatalConfig("mqtt.retain must stay false")
        if self.mqtt.publish_topic == self.mqtt.subscribe_topic:
            raise FatalConfig("publish_topic and subscribe_topic must differ")

    @classmethod
    def from_dict(cls, data: dict) -> "GatewayConfig":
        try:
            mb = dict(data.get("modbus", {}))
            serial = SerialParams(**mb.pop("serial", {}))
            timing_raw = dict(mb.pop("timing", {}))
            timing = MasterTiming.for_serial(
                serial,
                response_timeout=timing_raw.pop("response_timeout", 0.5),
                retries=timing_raw.pop("retries", 1),
                inter_frame_delay=timing_raw.pop("inter_frame_delay", None),
            )
            if timing_raw:
                raise TypeError(f"unknown timing keys {sorted(timing_raw)}")
            return cls(
                name=data.get("name", "gateway"),
                modbus=ModbusSettings(serial=serial, timing=timing, **mb),
                read_map=ReadMap(**data.get("read_map", {})),
                write_map=WriteMap(**data.get("write_map", {})),
                mqtt=MqttSettings(**data.get("mqtt", {})),
                enabled=data.get("enabled", True),
            )
        except (TypeError, ValueError) as exc:
            raise FatalConfig(f"invalid gateway config: {exc}") from None


def load_gateway_config(path) -> GatewayConfig:
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise FatalConfig(f"cannot read {path}: {exc}") from None
    return GatewayConfig.from_dict(data.get("gateway", data))


@dataclass(frozen=True)
class FlagSnapshot:
    registers: tuple[int, ...]
    taken_at: float = 0.0


def encode_flags(registers) -> bytes:
    """Registers as concatenated big-endian 16-bit words."""
    return struct.pack(f">{len(registers)}H", *registers)


def decode_flags(payload: bytes, count: int) -> tuple[int, ...]:
    if len(payload) != 2 * count:
        raise PayloadLengthMismatch(f"payload of {len(payload)} bytes, expected {2 * count}")
    return struct.unpack(f">{count}H", payload)


def write_request(config: GatewayConfig, payload: bytes) -> RtuFrame:
    """The FC05/FC15 request that carries ``payload`` into the PLC."""
    wm = config.write_map
    states = [w != 0 for w in decode_flags(payload, wm.count)]
    if wm.mode == "single-coil":
        pdu = WriteSingleCoilReq(wm.start_coil, states[0])
    else:
        pdu = WriteMultipleCoilsReq(wm.start_coil, states)
    return RtuFrame(SlaveAddress(config.modbus.slave_address), pdu)


class Gateway:
    def __init__(self, config: GatewayConfig, port, connector=None, events: Optional[EventLog] = None,
                 wire=None):
        self.config = config
        self.name = config.name
        self.master = ModbusMaster(port, config.modbus.timing)
        mq = config.mqtt
        self.client = MqttClient(mq.client_id, mq.broker_address, mq.port, keepalive=mq.keepalive,
                                 connector=connector, wire=wire)
        self.events = events if events is not None else EventLog()
        self.last: Optional[FlagSnapshot] = None
        self.polls = 0
        self.publishes = 0
        self.modbus_errors = 0
        self.dropped_messages = 0
        self.lost_writes = 0
        self._read_request = RtuFrame(
            SlaveAddress(config.modbus.slave_address),
            ReadHoldingRegistersReq(config.read_map.start_register, config.read_map.count))

    def _emit(self, event: str, level: str = "info", **detail) -> None:
        self.events.emit(self.name, event, level, **detail)

    async def poll_cycle(self) -> tuple[Optional[FlagSnapshot], bool]:
        """Read the flag registers once and publish them if they changed."""
        self.polls += 1
        try:
            response = await self.master.execute(self._read_request)
        except (ModbusTimeout, ExceptionReturned, PortClosed) as exc:
            self.modbus_errors += 1
            self._emit("error", "error", op="poll", reason=str(exc))
            return self.last, False
        snapshot = FlagSnapshot(response.pdu.registers, asyncio.get_running_loop().time())
        if self.last is not None and snapshot.registers == self.last.registers:
            return snapshot, False
        if not self.client.connected:
            return snapshot, False
        payload = encode_flags(snapshot.registers)
        try:
            await self.client.publish(self.config.mqtt.publish_topic, payload, retain=False)
        except (NotConnected, ConnectionError) as exc:
            self._emit("error", "error", op="publish", reason=str(exc))
            return snapshot, False
        initial = self.last is None
        self.last = snapshot
        self.publishes += 1
        self._emit("publish", topic=self.config.mqtt.publish_topic, payload=payload,
                   registers=list(snapshot.registers), initial=int(initial))
        return snapshot, True

    async def on_message(self, topic: str, payload: bytes) -> Optional[RtuFrame]:
        """Write a peer's flags into the PLC; return the request that was issued."""
        if topic != self.config.mqtt.subscribe_topic:
            return None
        self._emit("receive", topic=topic, payload=payload)
        try:
            request = write_request(self.config, payload)
        except PayloadLengthMismatch as exc:
            self.dropped_messages += 1
            self._emit("error", "error", op="receive", reason=str(exc))
            return None
        # Logged at issue time: the slave applies the coils before its reply
        # comes back, so this keeps the event log in causal order.
        pdu = request.pdu
        if isinstance(pdu, WriteSingleCoilReq):
            self._emit("write", fc=5, start=pdu.address, coils=[int(pdu.state)])
        else:
            self._emit("write", fc=15, start=pdu.start, coils=[int(s) for s in pdu.states])
        try:
            await self.master.execute(request)
        except (ModbusTimeout, ExceptionReturned, PortClosed) as exc:
            self.lost_writes += 1
            self._emit("error", "error", op="write", reason=str(exc), lost=1)
        return request

    async def _ensure_connected(self) -> bool:
        try:
            await self.client.connect()
            await self.client.subscribe(self.config.mqtt.subscribe_topic)
        except BrokerUnreachable as exc:
            if isinstance(exc.__cause__, socket.gaierror):
                raise FatalConfig(f"cannot resolve broker address "
                                  f"{self.config.mqtt.broker_address!r}") from None
            self._emit("error", "error", op="connect", reason=str(exc))
            return False
        except MqttError as exc:
            await self.client.disconnect()
            self._emit("error", "error", op="connect", reason=str(exc))
            return False
        self._emit("connected", broker=f"{self.config.mqtt.broker_address}:{self.config.mqtt.port}")
        return True

    async def run(self, shutdown: asyncio.Event) -> None:
        """Poll, publish and forward until ``shutdown`` is set."""
        if not self.config.enabled:
            self._emit("disabled")
            await shutdown.wait()
            return
        loop = asyncio.get_running_loop()
        period = self.config.modbus.poll_period
        backoff = RECONNECT_INITIAL
        next_connect = loop.time()
        next_poll = loop.time()
        self._emit("start")
        try:
            while not shutdown.is_set():
                if not self.client.connected and loop.time() >= next_connect:
                    if await self._ensure_connected():
                        backoff = RECONNECT_INITIAL
                    else:
                        next_connect = loop.time() + backoff
                        backoff = min(2 * backoff, RECONNECT_MAX)
                await self.poll_cycle()
                for topic, payload in self.client.poll():
                    await self.on_message(topic, payload)
                next_poll = max(next_poll + period, loop.time())
                try:
                    await asyncio.wait_for(shutdown.wait(), next_poll - loop.time())
                except asyncio.TimeoutError:
                    pass
        finally:
            await self.client.disconnect()
            self._emit("stop")
