"""Modbus RTU endpoints over a simulated or socket-backed serial line.

Everything here is asyncio-based and takes its notion of time from the
running loop, so the same master/slave code runs on a virtual clock in
deterministic mode and on wall-clock time against local sockets.
"""
from __future__ import annotations

import asyncio
import logging
import random
from dataclasses import dataclass, field
from typing import Optional

from .codec import (
    BROADCAST,
    REQUEST_TYPES,
    SUPPORTED_FUNCTIONS,
    CrcMismatch,
    DecodeError,
    ExceptionCode,
    ExceptionResp,
    InvalidField,
    ModbusError,
    ReadHoldingRegistersReq,
    ReadHoldingRegistersResp,
    RtuFrame,
    SlaveAddress,
    WriteMultipleCoilsReq,
    WriteMultipleCoilsResp,
    WriteSingleCoilReq,
    WriteSingleCoilResp,
    decode_adu,
    encode_adu,
)

log = logging.getLogger(__name__)

# Float slack when comparing silent intervals computed from baud rates.
_EPS = 1e-9


class IllegalDataAddress(ModbusError):
    pass


class ModbusTimeout(ModbusError):
    def __init__(self, attempts: int, last_error: Optional[Exception] = None):
        msg = f"no valid response after {attempts} attempt(s)"
        if last_error is not None:
            msg += f" (last failure: {last_error})"
        super().__init__(msg)
        self.attempts = attempts
        self.last_error = last_error


class ExceptionReturned(ModbusError):
    def __init__(self, response: ExceptionResp):
        super().__init__(f"slave returned exception {int(response.code)} ({response.code.name}) "
                         f"for function 0x{response.function:02X}")
        self.response = response
        self.code = response.code


class AddressMismatch(ModbusError):
    pass


class UnexpectedResponse(ModbusError):
    pass


class PortClosed(ModbusError):
    pass


# -- configuration -------------------------------------------------------------


@dataclass(frozen=True)
class SerialParams:
    baud: int = 9600
    parity: str = "even"
    data_bits: int = 8
    stop_bits: int = 1

    def __post_init__(self):
        if self.baud <= 0:
            raise ValueError(f"baud must be positive, got {self.baud}")
        if self.parity not in ("none", "even", "odd"):
            raise ValueError(f"parity must be none, even or odd, got {self.parity!r}")
        if self.data_bits not in (7, 8):
            raise ValueError(f"data_bits must be 7 or 8, got {self.data_bits}")
        if self.stop_bits not in (1, 2):
            raise ValueError(f"stop_bits must be 1 or 2, got {self.stop_bits}")

    @property
    def bits_per_char(self) -> int:
        return 1 + self.data_bits + (self.parity != "none") + self.stop_bits

    @property
    def char_time(self) -> float:
        return self.bits_per_char / self.baud

    @property
    def silent_interval(self) -> float:
        """The 3.5-character gap that delimits RTU frames."""
        return 3.5 * self.char_time


@dataclass(frozen=True)
class MasterTiming:
    response_timeout: float = 0.5
    inter_frame_delay: float = 3.5 * 11 / 9600
    retries: int = 1

    def __post_init__(self):
        if self.response_timeout <= 0:
            raise ValueError("response_timeout must be positive")
        if self.retries < 0:
            raise ValueError("retries must be >= 0")

    @classmethod
    def for_serial(cls, serial: SerialParams, response_timeout: float = 0.5, retries: int = 1,
                   inter_frame_delay: Optional[float] = None) -> "MasterTiming":
        timing = cls(response_timeout, serial.silent_interval if inter_frame_delay is None
                     else inter_frame_delay, retries)
        timing.check(serial)
        return timing

    def check(self, serial: SerialParams) -> None:
        if self.inter_frame_delay + _EPS < serial.silent_interval:
            raise ValueError(f"inter_frame_delay {self.inter_frame_delay * 1e3:.3f} ms is shorter than "
                             f"3.5 character times ({serial.silent_interval * 1e3:.3f} ms)")


# -- process image -------------------------------------------------------------


class DataStore:
    """A slave's holding registers and coils inside fixed address windows.

    Addresses in the window that were never written read as 0 / False.
    """

    def __init__(self, register_window: range = range(16), coil_window: range = range(16)):
        self.register_window = register_window
        self.coil_window = coil_window
        self.holding_registers: dict[int, int] = {}
        self.coils: dict[int, bool] = {}

    def _check(self, window: range, start: int, quantity: int, kind: str) -> None:
        if quantity < 1 or start not in window or start + quantity - 1 not in window:
            raise IllegalDataAddress(f"{kind} {start}..{start + quantity - 1} outside "
                                     f"{window.start}..{window.stop - 1}")

    def read_registers(self, start: int, quantity: int) -> list[int]:
        self._check(self.register_window, start, quantity, "holding registers")
        return [self.holding_registers.get(a, 0) for a in range(start, start + quantity)]

    def write_register(self, address: int, value: int) -> None:
        self._check(self.register_window, address, 1, "holding register")
        if not 0 <= value <= 0xFFFF:
            raise ValueError(f"register value {value} does not fit in 16 bits")
        self.holding_registers[address] = value

    def read_coils(self, start: int, quantity: int) -> list[bool]:
        self._check(self.coil_window, start, quantity, "coils")
        return [self.coils.get(a, False) for a in range(start, start + quantity)]

    def write_coil(self, address: int, state: bool) -> None:
        self.write_coils(address, [state])

    def write_coils(self, start: int, states) -> None:
        states = [bool(s) for s in states]
        self._check(self.coil_window, start, len(states), "coils")
        for offset, state in enumerate(states):
            self.coils[start + offset] = state


def slave_handle(request: RtuFrame, store: DataStore, my_address: SlaveAddress) -> Optional[RtuFrame]:
    """Apply ``request`` to ``store``; return the response frame or None for silence."""
    target = request.slave.value
    mine = int(my_address)
    if target not in (mine, BROADCAST):
        return None
    broadcast = target == BROADCAST
    pdu = request.pdu
    try:
        if isinstance(pdu, ReadHoldingRegistersReq):
            if broadcast:
                return None
            response = ReadHoldingRegistersResp(store.read_registers(pdu.start, pdu.quantity))
        elif isinstance(pdu, WriteSingleCoilReq):
            store.write_coil(pdu.address, pdu.state)
            response = WriteSingleCoilResp(pdu.address, pdu.state)
        elif isinstance(pdu, WriteMultipleCoilsReq):
            store.write_coils(pdu.start, pdu.states)
            response = WriteMultipleCoilsResp(pdu.start, len(pdu.states))
        else:
            return None
    except IllegalDataAddress:
        response = ExceptionResp(pdu.function, ExceptionCode.ILLEGAL_DATA_ADDRESS)
    if broadcast:
        return None
    return RtuFrame(SlaveAddress(mine), response)


# -- framing -------------------------------------------------------------------


class RtuFramer:
    """Split a timestamped byte stream into frames at silent intervals.

    ``push(b"", now)`` reports that the line has been idle up to ``now`` and
    is how a trailing frame gets closed. In boundary mode every non-empty
    push is already one whole frame.
    """

    def __init__(self, serial: SerialParams = SerialParams(), boundary: bool = False):
        self.gap = serial.silent_interval
        self.boundary = boundary
        self._buf = bytearray()
        self._last: Optional[float] = None

    def push(self, data: bytes, timestamp: float) -> list[bytes]:
        if self.boundary:
            return [bytes(data)] if data else []
        frames = []
        if self._buf and timestamp - self._last + _EPS >= self.gap:
            frames.append(bytes(self._buf))
            self._buf.clear()
        if data:
            self._buf += data
            self._last = timestamp
        return frames

    @property
    def pending(self) -> int:
        return len(self._buf)

    def reset(self) -> None:
        self._buf.clear()
        self._last = None


# -- wire trace ------------------------------------------------------------------


@dataclass(frozen=True)
class TraceRecord:
    ts: float
    link: str
    direction: str  # "M>S" or "S>M"
    data: bytes

    def format(self) -> str:
        return f"{self.ts:.6f} {self.link} {self.direction} {self.data.hex()}"

    @classmethod
    def parse(cls, line: str) -> "TraceRecord":
        ts, link, direction, hexdata = line.split()
        return cls(float(ts), link, direction, bytes.fromhex(hexdata))


@dataclass
class ModbusTrace:
    records: list[TraceRecord] = field(default_factory=list)

    def record(self, ts: float, link: str, direction: str, data: bytes) -> None:
        self.records.append(TraceRecord(ts, link, direction, bytes(data)))

    def for_link(self, link: str) -> list[TraceRecord]:
        return [r for r in self.records if r.link == link]

    def lines(self) -> list[str]:
        return [r.format() for r in self.records]


# -- transports ------------------------------------------------------------------


class SimSerialLink:
    """In-memory half-duplex serial line between one master and one slave.

    Frames take ``len * char_time`` to transmit and a new frame cannot start
    until the line has been silent for 3.5 character times.
    """

    def __init__(self, serial: SerialParams = SerialParams(), framing: str = "boundary",
                 trace: Optional[ModbusTrace] = None, name: str = "link"):
        if framing not in ("boundary", "gap"):
            raise ValueError(f"framing must be 'boundary' or 'gap', not {framing!r}")
        self.serial = serial
        self.framing = framing
        self.trace = trace
        self.name = name
        self._line_free_at: Optional[float] = None
        self.master = SimSerialPort(self, "M>S")
        self.slave = SimSerialPort(self, "S>M")
        self.master.peer = self.slave
        self.slave.peer = self.master

    def _transmit(self, port: "SimSerialPort", data: bytes) -> float:
        loop = asyncio.get_running_loop()
        now = loop.time()
        start = now
        if self._line_free_at is not None:
            start = max(now, self._line_free_at + self.serial.silent_interval)
        end = start + len(data) * self.serial.char_time
        self._line_free_at = end
        if self.trace is not None:
            self.trace.record(start, self.name, port.direction, data)
        loop.call_at(end, port.peer._deliver, bytes(data), end)
        return end


class SimSerialPort:
    def __init__(self, link: SimSerialLink, direction: str):
        self.link = link
        self.direction = direction
        self.peer: SimSerialPort
        self._frames: asyncio.Queue[bytes] = asyncio.Queue()
        self._framer = RtuFramer(link.serial, boundary=link.framing == "boundary")

    async def send(self, data: bytes) -> None:
        end = self.link._transmit(self, data)
        await asyncio.sleep(max(0.0, end - asyncio.get_running_loop().time()))

    def _deliver(self, data: bytes, ts: float) -> None:
        for frame in self._framer.push(data, ts):
            self._frames.put_nowait(frame)
        if self._framer.pending:
            loop = asyncio.get_running_loop()
            loop.call_at(ts + self._framer.gap, self._idle, ts + self._framer.gap)

    def _idle(self, ts: float) -> None:
        for frame in self._framer.push(b"", ts):
            self._frames.put_nowait(frame)

    async def recv(self, timeout: Optional[float] = None) -> Optional[bytes]:
        if timeout is None:
            return await self._frames.get()
        try:
            return await asyncio.wait_for(self._frames.get(), timeout)
        except asyncio.TimeoutError:
            return None

    def discard_pending(self) -> None:
        while not self._frames.empty():
            self._frames.get_nowait()


class StreamSerialPort:
    """Gap-framed RTU over an asyncio byte stream (e.g. a local TCP socket)."""

    def __init__(self, reader: asyncio.StreamReader, writer, serial: SerialParams = SerialParams(),
                 trace: Optional[ModbusTrace] = None, name: str = "link", direction: str = "M>S"):
        self.reader = reader
        self.writer = writer
        self.trace = trace
        self.name = name
        self.direction = direction
        self._framer = RtuFramer(serial)
        self._ready: list[bytes] = []

    async def send(self, data: bytes) -> None:
        if self.trace is not None:
            self.trace.record(asyncio.get_running_loop().time(), self.name, self.direction, data)
        self.writer.write(bytes(data))
        await self.writer.drain()

    async def recv(self, timeout: Optional[float] = None) -> Optional[bytes]:
        loop = asyncio.get_running_loop()
        deadline = None if timeout is None else loop.time() + timeout
        while not self._ready:
            wait = None if deadline is None else deadline - loop.time()
            if self._framer.pending:
                wait = self._framer.gap if wait is None else min(wait, self._framer.gap)
            if wait is not None and wait <= 0:
                return None
            try:
                chunk = await asyncio.wait_for(self.reader.read(512), wait)
            except asyncio.TimeoutError:
                chunk = None
            if chunk == b"":
                raise PortClosed("serial stream closed by peer")
            self._ready.extend(self._framer.push(chunk or b"", loop.time()))
        return self._ready.pop(0)

    def discard_pending(self) -> None:
        self._ready.clear()

    def close(self) -> None:
        self.writer.close()


class CorruptingPort:
    """Wraps a port and flips one random bit in selected outgoing frames.

    Frames are chosen either with probability ``rate`` or by index via
    ``schedule`` (0-based count of frames sent through this port).
    """

    def __init__(self, inner, rate: float = 0.0, rng: Optional[random.Random] = None,
                 schedule=()):
        self.inner = inner
        self.rate = rate
        self.rng = rng or random.Random(0)
        self.schedule = set(schedule)
        self.sent = 0
        self.corrupted = 0

    async def send(self, data: bytes) -> None:
        index = self.sent
        self.sent += 1
        if index in self.schedule or (self.rate and self.rng.random() < self.rate):
            data = bytearray(data)
            bit = self.rng.randrange(len(data) * 8)
            data[bit // 8] ^= 1 << (bit % 8)
            self.corrupted += 1
        await self.inner.send(bytes(data))

    async def recv(self, timeout: Optional[float] = None) -> Optional[bytes]:
        return await self.inner.recv(timeout)

    def discard_pending(self) -> None:
        self.inner.discard_pending()


# -- endpoints -------------------------------------------------------------------


class ModbusSlave:
    """Serves one DataStore on one serial port. Bad frames get no answer."""

    def __init__(self, port, store: DataStore, address: int):
        self.port = port
        self.store = store
        self.address = SlaveAddress(address)
        self.requests = 0
        self.responses = 0
        self.discarded = 0

    def handle_bytes(self, data: bytes) -> Optional[bytes]:
        try:
            frame = decode_adu(data, "slave")
        except InvalidField as exc:
            # Checksum was fine, so the frame is ours to reject if addressed to us.
            if data[0] == self.address.value and data[1] in SUPPORTED_FUNCTIONS:
                self.requests += 1
                log.debug("slave %d: illegal data value: %s", self.address.value, exc)
                return encode_adu(RtuFrame(self.address, ExceptionResp(
                    data[1], ExceptionCode.ILLEGAL_DATA_VALUE)))
            self.discarded += 1
            return None
        except DecodeError as exc:
            self.discarded += 1
            log.debug("slave %d: discarding frame %s: %s", self.address.value, data.hex(), exc)
            return None
        self.requests += 1
        response = slave_handle(frame, self.store, self.address)
        if response is None:
            return None
        return encode_adu(response)

    async def serve(self) -> None:
        while True:
            data = await self.port.recv()
            if data is None:
                continue
            reply = self.handle_bytes(data)
            if reply is not None:
                self.responses += 1
                await self.port.send(reply)


class ModbusMaster:
    """Issues one request at a time and waits for the matching response."""

    def __init__(self, port, timing: MasterTiming = MasterTiming()):
        self.port = port
        self.timing = timing
        self.attempts = 0
        self.failed_attempts = 0
        self._last_activity: Optional[float] = None

    async def _respect_gap(self) -> None:
        if self._last_activity is None:
            return
        loop = asyncio.get_running_loop()
        wait = self._last_activity + self.timing.inter_frame_delay - loop.time()
        if wait > 0:
            await asyncio.sleep(wait)

    def _check_response(self, request: RtuFrame, response: RtuFrame) -> None:
        if response.slave != request.slave:
            raise AddressMismatch(f"response from slave {response.slave.value}, "
                                  f"expected {request.slave.value}")
        pdu = response.pdu
        if isinstance(pdu, ExceptionResp):
            if pdu.function != request.pdu.function:
                raise UnexpectedResponse(f"exception for function 0x{pdu.function:02X}")
            return
        expected = {
            ReadHoldingRegistersReq: ReadHoldingRegistersResp,
            WriteSingleCoilReq: WriteSingleCoilResp,
            WriteMultipleCoilsReq: WriteMultipleCoilsResp,
        }[type(request.pdu)]
        if not isinstance(pdu, expected):
            raise UnexpectedResponse(f"got {type(pdu).__name__} for {type(request.pdu).__name__}")
        if isinstance(pdu, ReadHoldingRegistersResp) and len(pdu.registers) != request.pdu.quantity:
            raise UnexpectedResponse(f"{len(pdu.registers)} registers returned, "
                                     f"{request.pdu.quantity} requested")

    async def execute(self, request: RtuFrame) -> Optional[RtuFrame]:
        """Send ``request`` and return the slave's response.

        Broadcast requests return None immediately after transmission.
        Raises ModbusTimeout once ``retries + 1`` attempts have failed and
        ExceptionReturned when the slave answers with an exception.
        """
        if not isinstance(request.pdu, REQUEST_TYPES):
            raise TypeError(f"{type(request.pdu).__name__} is not a request")
        loop = asyncio.get_running_loop()
        adu = encode_adu(request)
        self.attempts = 0
        last_error: Optional[Exception] = None
        for _ in range(self.timing.retries + 1):
            self.attempts += 1
            await self._respect_gap()
            self.port.discard_pending()
            await self.port.send(adu)
            self._last_activity = loop.time()
            if request.slave.is_broadcast:
                return None
            deadline = loop.time() + self.timing.response_timeout
            data = await self.port.recv(max(0.0, deadline - loop.time()))
            self._last_activity = loop.time()
            if data is None:
                last_error = asyncio.TimeoutError(f"no response within {self.timing.response_timeout} s")
                self.failed_attempts += 1
                continue
            try:
                response = decode_adu(data, "master")
                self._check_response(request, response)
            except (DecodeError, AddressMismatch, UnexpectedResponse) as exc:
                last_error = exc
                self.failed_attempts += 1
                log.debug("attempt %d failed: %s", self.attempts, exc)
                continue
            if isinstance(response.pdu, ExceptionResp):
                raise ExceptionReturned(response.pdu)
            return response
        raise ModbusTimeout(self.attempts, last_error)


__all__ = [
    "AddressMismatch", "CorruptingPort", "CrcMismatch", "DataStore", "ExceptionReturned",
    "IllegalDataAddress", "MasterTiming", "ModbusMaster", "ModbusSlave", "ModbusTimeout",
    "ModbusTrace", "PortClosed", "RtuFramer", "SerialParams", "SimSerialLink", "SimSerialPort",
    "StreamSerialPort", "TraceRecord", "UnexpectedResponse", "slave_handle",
]
