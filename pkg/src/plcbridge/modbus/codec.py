"""Modbus RTU frame codec.

An RTU application data unit on the wire::

    [address][function][data ...][crc-lo][crc-hi]

Only the three function codes the bridge needs are understood: 03 (Read
Holding Registers), 05 (Write Single Coil) and 15 (Write Multiple Coils),
plus their exception responses (function | 0x80).
"""
from __future__ import annotations

import enum
import struct
from dataclasses import dataclass
from typing import Union

BROADCAST = 0
MAX_ADDRESS = 247

READ_HOLDING_REGISTERS = 0x03
WRITE_SINGLE_COIL = 0x05
WRITE_MULTIPLE_COILS = 0x0F
SUPPORTED_FUNCTIONS = (READ_HOLDING_REGISTERS, WRITE_SINGLE_COIL, WRITE_MULTIPLE_COILS)

MAX_READ_REGISTERS = 125
MAX_WRITE_COILS = 1968

COIL_ON = 0xFF00
COIL_OFF = 0x0000

FUNCTION_NAMES = {
    READ_HOLDING_REGISTERS: "Read Holding Registers",
    WRITE_SINGLE_COIL: "Write Single Coil",
    WRITE_MULTIPLE_COILS: "Write Multiple Coils",
}


class ExceptionCode(enum.IntEnum):
    ILLEGAL_FUNCTION = 0x01
    ILLEGAL_DATA_ADDRESS = 0x02
    ILLEGAL_DATA_VALUE = 0x03
    SLAVE_DEVICE_FAILURE = 0x04


class ModbusError(Exception):
    """Base class for every Modbus error raised by this package."""


class DecodeError(ModbusError):
    """A byte sequence is not an acceptable RTU frame."""


class FrameTooShort(DecodeError):
    pass


class CrcMismatch(DecodeError):
    def __init__(self, expected: int, received: int):
        super().__init__(f"CRC mismatch: computed 0x{expected:04X}, received 0x{received:04X}")
        self.expected = expected
        self.received = received


class UnknownFunction(DecodeError):
    def __init__(self, function: int):
        super().__init__(f"unsupported function code 0x{function:02X}")
        self.function = function


class LengthMismatch(DecodeError):
    pass


class InvalidField(DecodeError, ValueError):
    """A field value is outside what the frame type allows."""


class QuantityOutOfRange(InvalidField):
    pass


# -- CRC ---------------------------------------------------------------------


def _make_crc_table() -> tuple[int, ...]:
    table = []
    for byte in range(256):
        crc = byte
        for _ in range(8):
            crc = (crc >> 1) ^ 0xA001 if crc & 1 else crc >> 1
        table.append(crc)
    return tuple(table)


_CRC_TABLE = _make_crc_table()


def crc16(data: bytes) -> int:
    """CRC-16/MODBUS of ``data`` (init 0xFFFF, reflected poly 0xA001).

    The result is sent low byte first; see :func:`crc_bytes`.
    """
    crc = 0xFFFF
    for byte in data:
        crc = (crc >> 8) ^ _CRC_TABLE[(crc ^ byte) & 0xFF]
    return crc


def crc_bytes(data: bytes) -> bytes:
    return crc16(data).to_bytes(2, "little")


# -- PDUs --------------------------------------------------------------------


def _check_u16(name: str, value: int) -> None:
    if not 0 <= value <= 0xFFFF:
        raise InvalidField(f"{name} {value} does not fit in 16 bits")


@dataclass(frozen=True)
class SlaveAddress:
    value: int

    def __post_init__(self):
        if not 0 <= self.value <= MAX_ADDRESS:
            raise InvalidField(f"slave address {self.value} outside 0..{MAX_ADDRESS}")

    @property
    def is_broadcast(self) -> bool:
        return self.value == BROADCAST

    def __int__(self) -> int:
        return self.value


@dataclass(frozen=True)
class ReadHoldingRegistersReq:
    start: int
    quantity: int

    function = READ_HOLDING_REGISTERS

    def __post_init__(self):
        _check_u16("start address", self.start)
        if not 1 <= self.quantity <= MAX_READ_REGISTERS:
            raise QuantityOutOfRange(f"register quantity {self.quantity} outside 1..{MAX_READ_REGISTERS}")


@dataclass(frozen=True)
class ReadHoldingRegistersResp:
    registers: tuple[int, ...]

    function = READ_HOLDING_REGISTERS

    def __post_init__(self):
        object.__setattr__(self, "registers", tuple(self.registers))
        if not 1 <= len(self.registers) <= MAX_READ_REGISTERS:
            raise QuantityOutOfRange(f"register count {len(self.registers)} outside 1..{MAX_READ_REGISTERS}")
        for word in self.registers:
            _check_u16("register value", word)


@dataclass(frozen=True)
class WriteSingleCoilReq:
    address: int
    state: bool

    function = WRITE_SINGLE_COIL

    def __post_init__(self):
        _check_u16("coil address", self.address)


@dataclass(frozen=True)
class WriteSingleCoilResp:
    address: int
    state: bool

    function = WRITE_SINGLE_COIL

    def __post_init__(self):
        _check_u16("coil address", self.address)


@dataclass(frozen=True)
class WriteMultipleCoilsReq:
    start: int
    states: tuple[bool, ...]

    function = WRITE_MULTIPLE_COILS

    def __post_init__(self):
        object.__setattr__(self, "states", tuple(bool(s) for s in self.states))
        _check_u16("start address", self.start)
        if not 1 <= len(self.states) <= MAX_WRITE_COILS:
            raise QuantityOutOfRange(f"coil quantity {len(self.states)} outside 1..{MAX_WRITE_COILS}")


@dataclass(frozen=True)
class WriteMultipleCoilsResp:
    start: int
    quantity: int

    function = WRITE_MULTIPLE_COILS

    def __post_init__(self):
        _check_u16("start address", self.start)
        if not 1 <= self.quantity <= MAX_WRITE_COILS:
            raise QuantityOutOfRange(f"coil quantity {self.quantity} outside 1..{MAX_WRITE_COILS}")


@dataclass(frozen=True)
class ExceptionResp:
    function: int
    code: ExceptionCode

    def __post_init__(self):
        if self.function not in SUPPORTED_FUNCTIONS:
            raise InvalidField(f"exception for unsupported function 0x{self.function:02X}")
        try:
            object.__setattr__(self, "code", ExceptionCode(self.code))
        except ValueError:
            raise InvalidField(f"exception code {self.code} outside 1..4") from None

    @property
    def wire_function(self) -> int:
        return self.function | 0x80


Request = Union[ReadHoldingRegistersReq, WriteSingleCoilReq, WriteMultipleCoilsReq]
Response = Union[ReadHoldingRegistersResp, WriteSingleCoilResp, WriteMultipleCoilsResp, ExceptionResp]
Pdu = Union[Request, Response]

REQUEST_TYPES = (ReadHoldingRegistersReq, WriteSingleCoilReq, WriteMultipleCoilsReq)


@dataclass(frozen=True)
class RtuFrame:
    slave: SlaveAddress
    pdu: Pdu

    def __post_init__(self):
        if isinstance(self.slave, int):
            object.__setattr__(self, "slave", SlaveAddress(self.slave))

    @property
    def is_request(self) -> bool:
        return isinstance(self.pdu, REQUEST_TYPES)


# -- coil packing ------------------------------------------------------------


def pack_coils(states) -> tuple[int, bytes]:
    """Pack booleans LSB-first into bytes; returns ``(byte_count, packed)``."""
    states = list(states)
    if not 1 <= len(states) <= MAX_WRITE_COILS:
        raise QuantityOutOfRange(f"coil quantity {len(states)} outside 1..{MAX_WRITE_COILS}")
    packed = bytearray((len(states) + 7) // 8)
    for i, state in enumerate(states):
        if state:
            packed[i // 8] |= 1 << (i % 8)
    return len(packed), bytes(packed)


def unpack_coils(packed: bytes, quantity: int) -> tuple[bool, ...]:
    return tuple(bool(packed[i // 8] >> (i % 8) & 1) for i in range(quantity))


# -- encoding ----------------------------------------------------------------


def encode_pdu(pdu: Pdu) -> bytes:
    if isinstance(pdu, ReadHoldingRegistersReq):
        return struct.pack(">BHH", pdu.function, pdu.start, pdu.quantity)
    if isinstance(pdu, ReadHoldingRegistersResp):
        n = len(pdu.registers)
        return struct.pack(f">BB{n}H", pdu.function, 2 * n, *pdu.registers)
    if isinstance(pdu, (WriteSingleCoilReq, WriteSingleCoilResp)):
        return struct.pack(">BHH", pdu.function, pdu.address, COIL_ON if pdu.state else COIL_OFF)
    if isinstance(pdu, WriteMultipleCoilsReq):
        count, packed = pack_coils(pdu.states)
        return struct.pack(">BHHB", pdu.function, pdu.start, len(pdu.states), count) + packed
    if isinstance(pdu, WriteMultipleCoilsResp):
        return struct.pack(">BHH", pdu.function, pdu.start, pdu.quantity)
    if isinstance(pdu, ExceptionResp):
        return bytes((pdu.wire_function, pdu.code))
    raise TypeError(f"not a PDU: {pdu!r}")


def encode_adu(frame: RtuFrame) -> bytes:
    body = bytes((frame.slave.value,)) + encode_pdu(frame.pdu)
    return body + crc_bytes(body)


# -- decoding ----------------------------------------------------------------


def _expect_len(data: bytes, n: int, what: str) -> None:
    if len(data) != n:
        raise LengthMismatch(f"{what}: expected {n} data bytes, got {len(data)}")


def _decode_coil_value(value: int) -> bool:
    if value == COIL_ON:
        return True
    if value == COIL_OFF:
        return False
    raise InvalidField(f"coil value 0x{value:04X} is neither 0xFF00 nor 0x0000")


def _decode_request(function: int, data: bytes) -> Request:
    if function == READ_HOLDING_REGISTERS:
        _expect_len(data, 4, "read holding registers request")
        return ReadHoldingRegistersReq(*struct.unpack(">HH", data))
    if function == WRITE_SINGLE_COIL:
        _expect_len(data, 4, "write single coil request")
        address, value = struct.unpack(">HH", data)
        return WriteSingleCoilReq(address, _decode_coil_value(value))
    if len(data) < 5:
        raise LengthMismatch(f"write multiple coils request: {len(data)} data bytes is too short")
    start, quantity, count = struct.unpack(">HHB", data[:5])
    if not 1 <= quantity <= MAX_WRITE_COILS:
        raise QuantityOutOfRange(f"coil quantity {quantity} outside 1..{MAX_WRITE_COILS}")
    if count != (quantity + 7) // 8:
        raise LengthMismatch(f"byte count {count} inconsistent with {quantity} coils")
    _expect_len(data, 5 + count, "write multiple coils request")
    packed = data[5:]
    spare = quantity % 8
    if spare and packed[-1] >> spare:
        raise InvalidField("non-zero padding bits after the last coil")
    return WriteMultipleCoilsReq(start, unpack_coils(packed, quantity))


def _decode_response(function: int, data: bytes) -> Response:
    if function & 0x80:
        _expect_len(data, 1, "exception response")
        return ExceptionResp(function & 0x7F, data[0])
    if function == READ_HOLDING_REGISTERS:
        if not data:
            raise LengthMismatch("read holding registers response has no byte count")
        count = data[0]
        if count % 2 or len(data) != 1 + count:
            raise LengthMismatch(f"byte count {count} inconsistent with {len(data) - 1} register bytes")
        return ReadHoldingRegistersResp(struct.unpack(f">{count // 2}H", data[1:]))
    if function == WRITE_SINGLE_COIL:
        _expect_len(data, 4, "write single coil response")
        address, value = struct.unpack(">HH", data)
        return WriteSingleCoilResp(address, _decode_coil_value(value))
    _expect_len(data, 4, "write multiple coils response")
    return WriteMultipleCoilsResp(*struct.unpack(">HH", data))


def decode_adu(data: bytes, role: str) -> RtuFrame:
    """Parse a complete ADU.

    ``role`` is the receiving side: a ``"slave"`` parses requests, a
    ``"master"`` parses responses. The CRC is checked before anything else.
    """
    if role not in ("master", "slave"):
        raise ValueError(f"role must be 'master' or 'slave', not {role!r}")
    data = bytes(data)
    if len(data) < 4:
        raise FrameTooShort(f"{len(data)} bytes is shorter than the 4-byte minimum")
    body, received = data[:-2], int.from_bytes(data[-2:], "little")
    expected = crc16(body)
    if expected != received:
        raise CrcMismatch(expected, received)

    address, function, payload = body[0], body[1], body[2:]
    if address > MAX_ADDRESS:
        raise InvalidField(f"slave address {address} outside 0..{MAX_ADDRESS}")
    base = function & 0x7F
    if base not in SUPPORTED_FUNCTIONS or (function & 0x80 and role == "slave"):
        raise UnknownFunction(function)
    if role == "slave":
        pdu = _decode_request(function, payload)
    else:
        pdu = _decode_response(function, payload)
    return RtuFrame(SlaveAddress(address), pdu)


def describe(frame: RtuFrame) -> str:
    """One-line human description, e.g. for trace dumps."""
    pdu = frame.pdu
    head = f"slave {frame.slave.value}"
    if isinstance(pdu, ExceptionResp):
        name = FUNCTION_NAMES[pdu.function]
        return f"{head}, Exception for {name}, code {int(pdu.code)} ({pdu.code.name})"
    name = FUNCTION_NAMES[pdu.function]
    if isinstance(pdu, ReadHoldingRegistersReq):
        detail = f"start {pdu.start}, qty {pdu.quantity}"
    elif isinstance(pdu, ReadHoldingRegistersResp):
        detail = "registers [" + ", ".join(str(w) for w in pdu.registers) + "]"
    elif isinstance(pdu, (WriteSingleCoilReq, WriteSingleCoilResp)):
        detail = f"address {pdu.address}, {'ON' if pdu.state else 'OFF'}"
    elif isinstance(pdu, WriteMultipleCoilsReq):
        bits = "".join("1" if s else "0" for s in pdu.states)
        detail = f"start {pdu.start}, qty {len(pdu.states)}, coils {bits}"
    else:
        detail = f"start {pdu.start}, qty {pdu.quantity}"
    return f"{head}, {name}, {detail}"
