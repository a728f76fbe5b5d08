"""Reference implementations used only to check the package.

These are written from the protocol definitions directly and share no code
with ``plcbridge``.
"""


def _reflect(value: int, width: int) -> int:
    out = 0
    for i in range(width):
        if value >> i & 1:
            out |= 1 << (width - 1 - i)
    return out


def crc16_modbus_bitwise(data: bytes) -> int:
    """CRC-16/MODBUS the long way: MSB-first with poly 0x8005 on reflected bytes.

    Reflected input, reflected output, init 0xFFFF, no final XOR.
    """
    crc = 0xFFFF
    for byte in data:
        crc ^= _reflect(byte, 8) << 8
        for _ in range(8):
            if crc & 0x8000:
                crc = ((crc << 1) ^ 0x8005) & 0xFFFF
            else:
                crc = (crc << 1) & 0xFFFF
    return _reflect(crc, 16)


def with_crc(body: bytes) -> bytes:
    crc = crc16_modbus_bitwise(body)
    return body + bytes((crc & 0xFF, crc >> 8))


def varint_decode(data: bytes) -> int:
    """Decode an MQTT remaining-length field by summing digit * 128**i."""
    total = 0
    for i, byte in enumerate(data):
        total += (byte % 128) * 128 ** i
    return total


def mqtt_string(text: str) -> bytes:
    raw = text.encode()
    return bytes((len(raw) // 256, len(raw) % 256)) + raw


# The handshake as a fixed chain of milestones, written independently of the
# package's own trace checker. Each cycle must hit them in this order.
HANDSHAKE_CHAIN = (
    ("plc1", "flag_set", None),
    ("gw1", "publish", "0001"),
    ("gw2", "receive", "0001"),
    ("gw2", "write", (5, [1])),
    ("plc2", "sequence_start", None),
    ("plc2", "flag_set", 9),
    ("plc2", "flag_set", 11),
    ("gw2", "publish", "00010001"),
    ("gw1", "receive", "00010001"),
    ("gw1", "write", (15, [1, 1])),
    ("plc1", "restart", None),
)


def _milestone(ev):
    for i, (actor, name, key) in enumerate(HANDSHAKE_CHAIN):
        if ev.actor != actor or ev.event != name:
            continue
        if key is None:
            return i
        if name == "flag_set" and ev.detail.get("motor") == key:
            return i
        if name == "write" and (ev.detail.get("fc"), ev.detail.get("coils")) == key:
            return i
        payload = ev.detail.get("payload")
        if isinstance(key, str) and isinstance(payload, bytes) and payload.hex() == key:
            return i
    return None


def handshake_cycles(events):
    """Split events at PLC1 restarts and return, per complete cycle, whether
    every milestone occurred once in the expected order."""
    results, seen = [], []
    for ev in events:
        m = _milestone(ev)
        if m is None:
            continue
        seen.append(m)
        if m == len(HANDSHAKE_CHAIN) - 1:
            results.append(seen == list(range(len(HANDSHAKE_CHAIN))))
            seen = []
    return results
