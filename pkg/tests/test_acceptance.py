"""Acceptance criteria 1-8, each at its stated tolerance.

Every test prints one ``criterion N ... PASS|FAIL`` line to the terminal,
whether or not output capture is on.
"""
import asyncio
import contextlib
import random
import time

import pytest

from oracles import crc16_modbus_bitwise, handshake_cycles
from plcbridge.gateway import Gateway
from plcbridge.modbus.codec import (
    ExceptionCode,
    ExceptionResp,
    ReadHoldingRegistersReq,
    ReadHoldingRegistersResp,
    RtuFrame,
    WriteMultipleCoilsReq,
    WriteMultipleCoilsResp,
    WriteSingleCoilReq,
    WriteSingleCoilResp,
    crc16,
    decode_adu,
    encode_adu,
)
from plcbridge.modbus.runtime import DataStore, ModbusSlave, ModbusTrace, SimSerialLink
from plcbridge.mqtt.codec import (
    Connack,
    Connect,
    Disconnect,
    Pingreq,
    Pingresp,
    Publish,
    Subscribe,
    Suback,
    decode_packet,
    decode_remaining_length,
    encode_packet,
    encode_remaining_length,
)
from plcbridge.mqtt.runtime import Broker, MemoryNetwork, WireLog
from plcbridge.plant import (
    check_trace,
    default_gateway_configs,
    load_scenario_config,
    run_scenario,
    scenario_config_from_dict,
)
from plcbridge.simclock import run_virtual


@pytest.fixture
def criterion(pytestconfig):
    """Context manager printing one PASS/FAIL line for a criterion."""
    capman = pytestconfig.pluginmanager.getplugin("capturemanager")

    @contextlib.contextmanager
    def run(number, title):
        notes = []
        status = "FAIL"
        try:
            yield notes
            status = "PASS"
        finally:
            line = f"criterion {number} {title}: {status}"
            if notes:
                line += " (" + ", ".join(notes) + ")"
            with capman.global_and_fixture_disabled():
                print("\n" + line, flush=True)

    return run


# -- 1. codec oracle suite ----------------------------------------------------------


def _random_frame(rng):
    addr = rng.randint(1, 247)
    kind = rng.randrange(7)
    if kind == 0:
        return RtuFrame(rng.randint(0, 247),
                        ReadHoldingRegistersReq(rng.randint(0, 0xFFFF), rng.randint(1, 125))), "slave"
    if kind == 1:
        return RtuFrame(rng.randint(0, 247),
                        WriteSingleCoilReq(rng.randint(0, 0xFFFF), rng.random() < 0.5)), "slave"
    if kind == 2:
        n = rng.choice([1, 2, 7, 8, 9, 1968, rng.randint(1, 1968)])
        states = tuple(rng.random() < 0.5 for _ in range(n))
        return RtuFrame(rng.randint(0, 247), WriteMultipleCoilsReq(rng.randint(0, 0xFFFF), states)), "slave"
    if kind == 3:
        n = rng.choice([1, 125, rng.randint(1, 125)])
        return RtuFrame(addr, ReadHoldingRegistersResp(
            tuple(rng.randint(0, 0xFFFF) for _ in range(n)))), "master"
    if kind == 4:
        return RtuFrame(addr, WriteSingleCoilResp(rng.randint(0, 0xFFFF), rng.random() < 0.5)), "master"
    if kind == 5:
        return RtuFrame(addr, WriteMultipleCoilsResp(rng.randint(0, 0xFFFF),
                                                     rng.choice([1, 1968, rng.randint(1, 1968)]))), "master"
    return RtuFrame(addr, ExceptionResp(rng.choice([3, 5, 15]), rng.choice(list(ExceptionCode)))), "master"


BOUNDARY_FRAMES = [
    (RtuFrame(1, ReadHoldingRegistersReq(0, 1)), "slave"),
    (RtuFrame(1, ReadHoldingRegistersReq(0, 125)), "slave"),
    (RtuFrame(1, ReadHoldingRegistersResp((0xFFFF,))), "master"),
    (RtuFrame(1, ReadHoldingRegistersResp(tuple(range(125)))), "master"),
    (RtuFrame(1, WriteMultipleCoilsReq(0, (True,))), "slave"),
    (RtuFrame(1, WriteMultipleCoilsReq(0, (True, False) * 984)), "slave"),
    (RtuFrame(1, WriteMultipleCoilsResp(0, 1)), "master"),
    (RtuFrame(1, WriteMultipleCoilsResp(0, 1968)), "master"),
]


def test_criterion_1_codec_oracles(criterion):
    with criterion(1, "codec oracle suite") as notes:
        t0 = time.perf_counter()
        rng = random.Random(20240101)
        for b in range(256):
            assert crc16(bytes([b])) == crc16_modbus_bitwise(bytes([b]))
        for _ in range(10_000):
            data = rng.randbytes(rng.randint(0, 256))
            assert crc16(data) == crc16_modbus_bitwise(data)
        frames = BOUNDARY_FRAMES + [_random_frame(rng) for _ in range(10_000)]
        for frame, role in frames:
            assert decode_adu(encode_adu(frame), role) == frame
        elapsed = time.perf_counter() - t0
        notes += ["10256 CRC inputs", f"{len(frames)} ADU roundtrips", f"{elapsed:.2f} s"]
        assert elapsed < 10.0


# -- 2. slave silence ----------------------------------------------------------------


def _corrupt(rng, adu):
    """A copy of ``adu`` whose CRC no longer verifies (checked with the oracle)."""
    while True:
        raw = bytearray(adu)
        for _ in range(rng.randint(1, 4)):
            bit = rng.randrange(len(raw) * 8)
            raw[bit // 8] ^= 1 << (bit % 8)
        body, crc = bytes(raw[:-2]), int.from_bytes(raw[-2:], "little")
        if crc16_modbus_bitwise(body) != crc:
            return bytes(raw)


def test_criterion_2_slave_silence(criterion):
    with criterion(2, "slave silence on CRC-corrupted frames") as notes:
        rng = random.Random(2)
        store = DataStore()
        store.write_register(0, 1)
        templates = [
            RtuFrame(1, ReadHoldingRegistersReq(0, 1)),
            RtuFrame(1, ReadHoldingRegistersReq(0, 2)),
            RtuFrame(1, WriteSingleCoilReq(0, True)),
            RtuFrame(1, WriteMultipleCoilsReq(0, (True, True))),
            RtuFrame(0, WriteSingleCoilReq(1, True)),
        ]
        corrupted = [_corrupt(rng, encode_adu(rng.choice(templates))) for _ in range(10_000)]

        async def main():
            trace = ModbusTrace()
            link = SimSerialLink(trace=trace, name="plc1")
            slave = ModbusSlave(link.slave, store, 1)
            server = asyncio.create_task(slave.serve())
            for raw in corrupted:
                await link.master.send(raw)
            await asyncio.sleep(1.0)
            server.cancel()
            return trace, slave

        trace, slave = run_virtual(main())
        answered = sum(len(r.data) for r in trace.records if r.direction == "S>M")
        sent = sum(1 for r in trace.records if r.direction == "M>S")
        notes += [f"{sent} frames sent", f"{slave.discarded} discarded", f"{answered} response bytes"]
        assert sent == 10_000
        assert answered == 0
        assert slave.discarded == 10_000
        assert store.coils == {}


# -- 3. MQTT conformance -------------------------------------------------------------


def _random_packet(rng):
    def text(n):
        return "".join(rng.choice("abcdefghijklmnopqrstuvwxyz0123456789/_-é") for _ in range(n))

    kind = rng.randrange(8)
    if kind == 0:
        return Connect(text(rng.randint(0, 23)), rng.randint(0, 0xFFFF), rng.random() < 0.5)
    if kind == 1:
        return Connack(rng.randint(0, 5), rng.random() < 0.5)
    if kind == 2:
        size = rng.choice([0, 1, 2, 4, 127, 128, 16383, 16384, rng.randint(0, 300)])
        return Publish(text(rng.randint(1, 30)), rng.randbytes(size), rng.random() < 0.5,
                       rng.random() < 0.5)
    if kind == 3:
        return Subscribe(rng.randint(1, 0xFFFF),
                         tuple((text(rng.randint(1, 20)), rng.randint(0, 2))
                               for _ in range(rng.randint(1, 4))))
    if kind == 4:
        return Suback(rng.randint(1, 0xFFFF),
                      tuple(rng.choice([0, 1, 2, 0x80]) for _ in range(rng.randint(1, 4))))
    return (Pingreq(), Pingresp(), Disconnect())[kind - 5]


def test_criterion_3_mqtt_conformance(criterion):
    with criterion(3, "MQTT conformance") as notes:
        for n in range(2 ** 16 + 1):
            enc = encode_remaining_length(n)
            assert decode_remaining_length(enc) == (n, len(enc))
        sizes = {type(p).__name__: len(encode_packet(p)) for p in (Pingreq(), Pingresp(), Disconnect())}
        assert sizes == {"Pingreq": 2, "Pingresp": 2, "Disconnect": 2}
        rng = random.Random(3)
        count = 10_000
        for _ in range(count):
            packet = _random_packet(rng)
            raw = encode_packet(packet)
            assert decode_packet(raw) == (packet, len(raw))
        notes += ["remaining length 0..65536", "2-byte PINGREQ/PINGRESP/DISCONNECT",
                  f"{count} packet roundtrips"]


# -- scenario shared by 4, 6 and 8 ---------------------------------------------------


@pytest.fixture(scope="module")
def hundred_cycles():
    config = load_scenario_config().with_cycles(100)
    t0 = time.perf_counter()
    report = run_scenario(config, deterministic=True)
    return report, time.perf_counter() - t0


# -- 4. retain discipline -------------------------------------------------------------


def test_criterion_4_retain_discipline(criterion, hundred_cycles):
    report, _ = hundred_cycles
    with criterion(4, "retain discipline") as notes:
        publishes = [r.data for r in report.mqtt_wire.records if r.data[0] >> 4 == 3]
        retained = [p for p in publishes if p[0] & 0x01]
        notes += [f"{len(publishes)} PUBLISH frames on the wire", f"{len(retained)} with retain=1"]
        assert publishes
        assert retained == []


# -- 5. publish on change ------------------------------------------------------------


def _poll_run(polls, change_at):
    gw_config, _ = default_gateway_configs(broker_address="broker")

    async def main():
        net, wire = MemoryNetwork(), WireLog()
        Broker(wire=wire).attach(net)
        link = SimSerialLink(name="plc1")
        store = DataStore()
        slave = ModbusSlave(link.slave, store, 1)
        server = asyncio.create_task(slave.serve())
        gateway = Gateway(gw_config, link.master, connector=net.connect, wire=wire)
        await gateway.client.connect()
        value = 0
        for i in range(polls):
            if i in change_at:
                value = (value + 1) % 0x10000
                store.write_register(0, value)
            await gateway.poll_cycle()
        await asyncio.sleep(0.1)
        server.cancel()
        return sum(1 for _, p in wire.packets("broker", "in") if isinstance(p, Publish))

    return run_virtual(main())


def test_criterion_5_publish_on_change(criterion):
    with criterion(5, "publish on change") as notes:
        constant = _poll_run(1000, set())
        rng = random.Random(5)
        k = 37
        changes = set(rng.sample(range(1, 1000), k))
        changed = _poll_run(1000, changes)
        notes += [f"constant: {constant} PUBLISH over 1000 polls",
                  f"{k} changes: {changed} PUBLISH"]
        assert constant == 1
        assert changed == k + 1


# -- 6. end-to-end handshake -----------------------------------------------------------


def test_criterion_6_end_to_end_handshake(criterion, hundred_cycles):
    report, wall = hundred_cycles
    with criterion(6, "end-to-end handshake") as notes:
        violations = check_trace(report)
        order = handshake_cycles(report.events)
        notes += [f"{report.cycles_completed}/100 cycles", f"{len(violations)} violations",
                  f"{sum(order)} cycles in narrative order", f"{wall:.1f} s wall",
                  f"{report.sim_time:.1f} s simulated"]
        assert report.cycles_completed == 100
        assert violations == []
        assert order == [True] * 100
        assert wall < 60.0


# -- 7. fault tolerance -------------------------------------------------------------------


def test_criterion_7_fault_tolerance(criterion):
    with criterion(7, "fault tolerance") as notes:
        config = scenario_config_from_dict({
            "scenario": {"cycles": 50, "corruption_rate": 0.01, "seed": 7},
            "timing": {"retries": 2},
        })
        assert config.gateway1.modbus.timing.retries == 2
        report = run_scenario(config)
        violations = check_trace(report)
        order = handshake_cycles(report.events)
        notes += [f"{report.cycles_completed}/50 cycles", f"{report.corrupted_frames} corrupted responses",
                  f"{len(violations)} violations"]
        assert report.corrupted_frames > 0
        assert report.cycles_completed == 50
        assert violations == []
        assert all(order)


# -- 8. protocol separation ----------------------------------------------------------------


def test_criterion_8_protocol_separation(criterion, hundred_cycles):
    report, _ = hundred_cycles
    with criterion(8, "protocol-separation audit") as notes:
        seen = {}
        for rec in report.modbus_trace.records:
            frame = decode_adu(rec.data, "slave" if rec.direction == "M>S" else "master")
            fc = frame.pdu.function
            seen.setdefault((rec.link, rec.direction), set()).add(fc)
        requests = {link: fcs for (link, d), fcs in seen.items() if d == "M>S"}
        all_fcs = set().union(*seen.values())
        notes += [f"plc1 requests {sorted(requests['plc1'])}", f"plc2 requests {sorted(requests['plc2'])}"]
        assert all_fcs <= {3, 5, 15}
        assert 15 in requests["plc1"] and 15 not in requests["plc2"]
        assert 5 in requests["plc2"] and 5 not in requests["plc1"]
