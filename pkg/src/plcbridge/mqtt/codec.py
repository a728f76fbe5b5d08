"""MQTT 3.1.1 control packets (the subset the gateway needs).

Supported: CONNECT, CONNACK, PUBLISH (QoS 0), SUBSCRIBE, SUBACK, PINGREQ,
PINGRESP, DISCONNECT.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Union

PROTOCOL_NAME = "MQTT"
PROTOCOL_LEVEL = 4
MAX_REMAINING_LENGTH = 268_435_455

CONNECT = 1
CONNACK = 2
PUBLISH = 3
PUBACK = 4
PUBREC = 5
PUBREL = 6
PUBCOMP = 7
SUBSCRIBE = 8
SUBACK = 9
UNSUBSCRIBE = 10
UNSUBACK = 11
PINGREQ = 12
PINGRESP = 13
DISCONNECT = 14

SUBACK_FAILURE = 0x80

CONNACK_CODES = {
    0: "accepted",
    1: "unacceptable protocol version",
    2: "identifier rejected",
    3: "server unavailable",
    4: "bad user name or password",
    5: "not authorized",
}


class MqttError(Exception):
    pass


class MalformedPacket(MqttError):
    pass


class UnsupportedPacket(MqttError):
    pass


class NeedMoreBytes(MqttError):
    """The buffer holds only a prefix of a packet; read more and retry."""


class ValueTooLarge(MqttError, ValueError):
    pass


# -- remaining length ----------------------------------------------------------


def encode_remaining_length(n: int) -> bytes:
    if not 0 <= n <= MAX_REMAINING_LENGTH:
        raise ValueTooLarge(f"remaining length {n} outside 0..{MAX_REMAINING_LENGTH}")
    out = bytearray()
    while True:
        n, digit = divmod(n, 128)
        if n:
            out.append(digit | 0x80)
        else:
            out.append(digit)
            return bytes(out)


def decode_remaining_length(data: bytes, offset: int = 0) -> tuple[int, int]:
    """Return ``(value, bytes_used)`` for the varint at ``data[offset:]``."""
    value = 0
    for i in range(4):
        if offset + i >= len(data):
            raise NeedMoreBytes("remaining length truncated")
        byte = data[offset + i]
        value |= (byte & 0x7F) << (7 * i)
        if not byte & 0x80:
            if i and byte == 0:
                raise MalformedPacket("remaining length is not minimally encoded")
            return value, i + 1
    raise MalformedPacket("remaining length longer than 4 bytes")


# -- packets -------------------------------------------------------------------


def _check_topic(topic: str, allow_wildcards: bool) -> None:
    if not topic:
        raise ValueError("topic must not be empty")
    if "\x00" in topic:
        raise ValueError("topic must not contain NUL")
    if len(topic.encode("utf-8")) > 0xFFFF:
        raise ValueError("topic longer than 65535 bytes")
    if not allow_wildcards and ("+" in topic or "#" in topic):
        raise ValueError(f"topic name {topic!r} contains a wildcard")


@dataclass(frozen=True)
class Connect:
    client_id: str
    keepalive: int = 60
    clean_session: bool = True

    def __post_init__(self):
        if not 0 <= self.keepalive <= 0xFFFF:
            raise ValueError(f"keepalive {self.keepalive} outside 0..65535")
        if len(self.client_id.encode("utf-8")) > 0xFFFF:
            raise ValueError("client id too long")


@dataclass(frozen=True)
class Connack:
    return_code: int = 0
    session_present: bool = False

    def __post_init__(self):
        if self.return_code not in CONNACK_CODES:
            raise ValueError(f"CONNACK return code {self.return_code} outside 0..5")


@dataclass(frozen=True)
class Publish:
    topic: str
    payload: bytes = b""
    retain: bool = False
    dup: bool = False
    qos: int = 0

    def __post_init__(self):
        _check_topic(self.topic, allow_wildcards=False)
        if self.qos != 0:
            raise ValueError("only QoS 0 is supported")
        object.__setattr__(self, "payload", bytes(self.payload))


@dataclass(frozen=True)
class Subscribe:
    packet_id: int
    filters: tuple[tuple[str, int], ...]

    def __post_init__(self):
        object.__setattr__(self, "filters", tuple((t, q) for t, q in self.filters))
        if not 1 <= self.packet_id <= 0xFFFF:
            raise ValueError(f"packet id {self.packet_id} outside 1..65535")
        if not self.filters:
            raise ValueError("SUBSCRIBE needs at least one topic filter")
        for topic, qos in self.filters:
            _check_topic(topic, allow_wildcards=True)
            if qos not in (0, 1, 2):
                raise ValueError(f"requested QoS {qos} is not 0, 1 or 2")


@dataclass(frozen=True)
class Suback:
    packet_id: int
    granted: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "granted", tuple(self.granted))
        if not 1 <= self.packet_id <= 0xFFFF:
            raise ValueError(f"packet id {self.packet_id} outside 1..65535")
        if not self.granted:
            raise ValueError("SUBACK needs at least one return code")
        for code in self.granted:
            if code not in (0, 1, 2, SUBACK_FAILURE):
                raise ValueError(f"SUBACK return code 0x{code:02X} is invalid")


@dataclass(frozen=True)
class Pingreq:
    pass


@dataclass(frozen=True)
class Pingresp:
    pass


@dataclass(frozen=True)
class Disconnect:
    pass


MqttPacket = Union[Connect, Connack, Publish, Subscribe, Suback, Pingreq, Pingresp, Disconnect]

_EMPTY = {Pingreq: PINGREQ, Pingresp: PINGRESP, Disconnect: DISCONNECT}
_EMPTY_BY_TYPE = {v: k for k, v in _EMPTY.items()}


def _string(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack(">H", len(raw)) + raw


def _fixed(type_: int, flags: int, body: bytes) -> bytes:
    return bytes(((type_ << 4) | flags,)) + encode_remaining_length(len(body)) + body


def encode_packet(packet: MqttPacket) -> bytes:
    if isinstance(packet, Connect):
        flags = 0x02 if packet.clean_session else 0x00
        body = (_string(PROTOCOL_NAME) + bytes((PROTOCOL_LEVEL, flags))
                + struct.pack(">H", packet.keepalive) + _string(packet.client_id))
        return _fixed(CONNECT, 0, body)
    if isinstance(packet, Connack):
        return _fixed(CONNACK, 0, bytes((int(packet.session_present), packet.return_code)))
    if isinstance(packet, Publish):
        flags = (packet.dup << 3) | (packet.qos << 1) | int(packet.retain)
        return _fixed(PUBLISH, flags, _string(packet.topic) + packet.payload)
    if isinstance(packet, Subscribe):
        body = struct.pack(">H", packet.packet_id)
        body += b"".join(_string(t) + bytes((q,)) for t, q in packet.filters)
        return _fixed(SUBSCRIBE, 0x02, body)
    if isinstance(packet, Suback):
        return _fixed(SUBACK, 0, struct.pack(">H", packet.packet_id) + bytes(packet.granted))
    if type(packet) in _EMPTY:
        return _fixed(_EMPTY[type(packet)], 0, b"")
    raise TypeError(f"not an MQTT packet: {packet!r}")


class _Reader:
    def __init__(self, body: bytes):
        self.body = body
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.body):
            raise MalformedPacket("field runs past the end of the packet")
        chunk = self.body[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        return struct.unpack(">H", self.take(2))[0]

    def string(self) -> str:
        raw = self.take(self.u16())
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError:
            raise MalformedPacket("string is not valid UTF-8") from None

    def rest(self) -> bytes:
        return self.take(len(self.body) - self.pos)

    @property
    def done(self) -> bool:
        return self.pos == len(self.body)


def _build(factory, *args):
    try:
        return factory(*args)
    except ValueError as exc:
        raise MalformedPacket(str(exc)) from None


def _decode_body(type_: int, flags: int, body: bytes) -> MqttPacket:
    r = _Reader(body)
    if type_ == PUBLISH:
        qos = (flags >> 1) & 0x3
        if qos == 3:
            raise MalformedPacket("PUBLISH with QoS 3")
        if qos:
            raise UnsupportedPacket(f"PUBLISH with QoS {qos}")
        topic = r.string()
        return _build(Publish, topic, r.rest(), bool(flags & 1), bool(flags & 8), 0)
    if type_ == SUBSCRIBE:
        if flags != 0x02:
            raise MalformedPacket(f"SUBSCRIBE flags 0x{flags:X}, expected 0x2")
    elif flags:
        raise MalformedPacket(f"packet type {type_} with non-zero flags 0x{flags:X}")

    if type_ == CONNECT:
        name, level = r.string(), r.u8()
        if name != PROTOCOL_NAME:
            raise MalformedPacket(f"protocol name {name!r}")
        if level != PROTOCOL_LEVEL:
            raise UnsupportedPacket(f"protocol level {level}")
        cflags = r.u8()
        if cflags & 0x01:
            raise MalformedPacket("reserved CONNECT flag set")
        if cflags & ~0x02:
            raise UnsupportedPacket("will, user name and password are not supported")
        keepalive = r.u16()
        client_id = r.string()
        packet = _build(Connect, client_id, keepalive, bool(cflags & 0x02))
    elif type_ == CONNACK:
        ack, code = r.u8(), r.u8()
        if ack & ~0x01:
            raise MalformedPacket("reserved CONNACK flags set")
        packet = _build(Connack, code, bool(ack))
    elif type_ == SUBSCRIBE:
        packet_id = r.u16()
        filters = []
        while not r.done:
            topic = r.string()
            filters.append((topic, r.u8()))
        packet = _build(Subscribe, packet_id, filters)
    elif type_ == SUBACK:
        packet_id = r.u16()
        packet = _build(Suback, packet_id, tuple(r.rest()))
    elif type_ in _EMPTY_BY_TYPE:
        packet = _EMPTY_BY_TYPE[type_]()
    else:
        raise UnsupportedPacket(f"packet type {type_}")
    if not r.done:
        raise MalformedPacket(f"{len(body) - r.pos} trailing byte(s) in packet type {type_}")
    return packet


def decode_packet(data: bytes) -> tuple[MqttPacket, int]:
    """Decode the first packet in ``data``; return it and the bytes consumed.

    Raises NeedMoreBytes when ``data`` ends mid-packet.
    """
    if not data:
        raise NeedMoreBytes("empty buffer")
    first = data[0]
    type_, flags = first >> 4, first & 0x0F
    if type_ in (0, 15):
        raise MalformedPacket(f"reserved packet type {type_}")
    length, used = decode_remaining_length(data, 1)
    end = 1 + used + length
    if len(data) < end:
        raise NeedMoreBytes(f"need {end} bytes, have {len(data)}")
    return _decode_body(type_, flags, bytes(data[1 + used:end])), end


def describe(packet: MqttPacket) -> str:
    name = type(packet).__name__.upper()
    if isinstance(packet, Connect):
        return f"{name} client_id={packet.client_id!r} keepalive={packet.keepalive} clean={packet.clean_session}"
    if isinstance(packet, Connack):
        return f"{name} rc={packet.return_code} ({CONNACK_CODES[packet.return_code]})"
    if isinstance(packet, Publish):
        return (f"{name} topic={packet.topic!r} payload={packet.payload.hex() or '-'} "
                f"retain={int(packet.retain)} dup={int(packet.dup)} qos={packet.qos}")
    if isinstance(packet, Subscribe):
        filters = ",".join(f"{t}:{q}" for t, q in packet.filters)
        return f"{name} id={packet.packet_id} filters={filters}"
    if isinstance(packet, Suback):
        return f"{name} id={packet.packet_id} granted={','.join(f'0x{g:02X}' for g in packet.granted)}"
    return name
