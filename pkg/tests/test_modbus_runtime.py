import asyncio
import random

import pytest
from hypothesis import given, strategies as st

from oracles import with_crc
from plcbridge.modbus.codec import (
    ExceptionCode,
    ExceptionResp,
    ReadHoldingRegistersReq,
    ReadHoldingRegistersResp,
    RtuFrame,
    SlaveAddress,
    WriteMultipleCoilsReq,
    WriteMultipleCoilsResp,
    WriteSingleCoilReq,
    WriteSingleCoilResp,
    encode_adu,
)
from plcbridge.modbus.runtime import (
    CorruptingPort,
    DataStore,
    ExceptionReturned,
    MasterTiming,
    ModbusMaster,
    ModbusSlave,
    ModbusTimeout,
    ModbusTrace,
    RtuFramer,
    SerialParams,
    SimSerialLink,
    TraceRecord,
    slave_handle,
)

SERIAL = SerialParams()  # 9600 8E1


def test_character_timing_9600_8e1():
    assert SERIAL.bits_per_char == 11
    assert SERIAL.char_time == pytest.approx(11 / 9600)
    assert SERIAL.silent_interval == pytest.approx(0.00401041666)
    assert SerialParams(19200, "none", 8, 2).bits_per_char == 11
    assert SerialParams(9600, "none", 8, 1).bits_per_char == 10


def test_timing_rejects_short_inter_frame_delay():
    with pytest.raises(ValueError):
        MasterTiming.for_serial(SERIAL, inter_frame_delay=0.003)
    assert MasterTiming.for_serial(SERIAL).inter_frame_delay == pytest.approx(SERIAL.silent_interval)


# -- framer ----------------------------------------------------------------------


def test_framer_splits_on_silent_interval():
    f = RtuFramer(SERIAL)
    assert f.push(b"\x01\x03", 0.0) == []
    assert f.push(b"\x00\x00", 0.001) == []
    # 4.01 ms after the last byte: the first frame is closed
    assert f.push(b"\x02", 0.001 + 0.00402) == [b"\x01\x03\x00\x00"]
    assert f.pending == 1
    assert f.push(b"", 0.02) == [b"\x02"]
    assert f.pending == 0


def test_framer_bytes_1ms_apart_stay_together():
    f = RtuFramer(SERIAL)
    out = []
    for i in range(10):
        out += f.push(bytes([i]), i * 0.001)
    assert out == []
    assert f.push(b"", 0.009 + SERIAL.silent_interval) == [bytes(range(10))]


def test_framer_bursts_10ms_apart():
    f = RtuFramer(SERIAL)
    frames = []
    for k in range(5):
        frames += f.push(bytes([k]) * 3, k * 0.010)
    frames += f.push(b"", 1.0)
    assert frames == [bytes([k]) * 3 for k in range(5)]


def test_framer_boundary_mode_passes_chunks_through():
    f = RtuFramer(SERIAL, boundary=True)
    assert f.push(b"abc", 0.0) == [b"abc"]
    assert f.push(b"", 1.0) == []


# -- slave logic -------------------------------------------------------------------


def store_with(registers=(), coils=()):
    store = DataStore()
    for i, value in enumerate(registers):
        store.write_register(i, value)
    if coils:
        store.write_coils(0, coils)
    return store


def test_slave_handle_read():
    store = store_with([1, 0, 7])
    out = slave_handle(RtuFrame(1, ReadHoldingRegistersReq(0, 3)), store, SlaveAddress(1))
    assert out == RtuFrame(1, ReadHoldingRegistersResp((1, 0, 7)))


def test_slave_handle_write_single_echoes():
    store = DataStore()
    req = RtuFrame(2, WriteSingleCoilReq(0, True))
    assert slave_handle(req, store, SlaveAddress(2)) == RtuFrame(2, WriteSingleCoilResp(0, True))
    assert store.read_coils(0, 1) == [True]


def test_slave_handle_write_multiple():
    store = DataStore()
    req = RtuFrame(1, WriteMultipleCoilsReq(0, (True, False)))
    assert slave_handle(req, store, SlaveAddress(1)) == RtuFrame(1, WriteMultipleCoilsResp(0, 2))
    assert store.read_coils(0, 2) == [True, False]


def test_slave_handle_other_address_is_silent():
    store = DataStore()
    assert slave_handle(RtuFrame(3, WriteSingleCoilReq(0, True)), store, SlaveAddress(1)) is None
    assert store.read_coils(0, 1) == [False]


def test_slave_handle_broadcast_applies_silently():
    store = DataStore()
    assert slave_handle(RtuFrame(0, WriteMultipleCoilsReq(0, (True, True))), store,
                        SlaveAddress(1)) is None
    assert store.read_coils(0, 2) == [True, True]
    assert slave_handle(RtuFrame(0, ReadHoldingRegistersReq(0, 1)), store, SlaveAddress(1)) is None


@pytest.mark.parametrize("request_pdu", [
    ReadHoldingRegistersReq(500, 1),
    ReadHoldingRegistersReq(10, 10),
    WriteSingleCoilReq(16, True),
    WriteMultipleCoilsReq(15, (True, True)),
])
def test_slave_handle_out_of_window_gives_exception_2(request_pdu):
    store = DataStore()
    out = slave_handle(RtuFrame(1, request_pdu), store, SlaveAddress(1))
    assert out == RtuFrame(1, ExceptionResp(request_pdu.function, ExceptionCode.ILLEGAL_DATA_ADDRESS))
    assert store.coils == {}


@given(st.integers(0, 15), st.booleans())
def test_write_single_response_echoes_request(address, state):
    out = slave_handle(RtuFrame(1, WriteSingleCoilReq(address, state)), DataStore(), SlaveAddress(1))
    assert encode_adu(out)[1:-2] == encode_adu(RtuFrame(1, WriteSingleCoilReq(address, state)))[1:-2]


def test_slave_bytes_bad_crc_is_silent():
    slave = ModbusSlave(None, DataStore(), 1)
    raw = bytearray(encode_adu(RtuFrame(1, WriteSingleCoilReq(0, True))))
    raw[3] ^= 0x10
    assert slave.handle_bytes(bytes(raw)) is None
    assert slave.discarded == 1
    assert slave.store.read_coils(0, 1) == [False]


def test_slave_bytes_bad_coil_value_gets_exception_3():
    slave = ModbusSlave(None, DataStore(), 1)
    reply = slave.handle_bytes(with_crc(b"\x01\x05\x00\x00\x12\x34"))
    assert reply == with_crc(b"\x01\x85\x03")


def test_slave_bytes_unknown_function_is_silent():
    slave = ModbusSlave(None, DataStore(), 1)
    assert slave.handle_bytes(with_crc(b"\x01\x04\x00\x00\x00\x01")) is None


def test_slave_ignores_corrupted_frames():
    rng = random.Random(3)
    slave = ModbusSlave(None, DataStore(), 1)
    sent = 0
    for _ in range(500):
        raw = bytearray(encode_adu(RtuFrame(1, ReadHoldingRegistersReq(0, rng.randint(1, 16)))))
        bit = rng.randrange(len(raw) * 8)
        raw[bit // 8] ^= 1 << (bit % 8)
        if slave.handle_bytes(bytes(raw)) is not None:
            sent += 1
    assert sent == 0


# -- trace --------------------------------------------------------------------------


def test_trace_record_roundtrip():
    rec = TraceRecord(1.25, "plc1", "M>S", bytes.fromhex("010300000001840a"))
    assert rec.format().split() == ["1.250000", "plc1", "M>S", "010300000001840a"]
    assert TraceRecord.parse(rec.format()) == rec


# -- master / slave over a simulated line -------------------------------------------


def make_pair(framing="boundary", timing=None, corrupt=None, store=None):
    trace = ModbusTrace()
    link = SimSerialLink(SERIAL, framing, trace, name="plc1")
    slave_port = link.slave if corrupt is None else CorruptingPort(link.slave, schedule=corrupt)
    slave = ModbusSlave(slave_port, store or store_with([5, 6]), 1)
    master = ModbusMaster(link.master, timing or MasterTiming.for_serial(SERIAL))
    return trace, slave, master, slave_port


@pytest.mark.parametrize("framing", ["boundary", "gap"])
def test_master_reads_registers(virtual, framing):
    async def main():
        trace, slave, master, _ = make_pair(framing)
        server = asyncio.create_task(slave.serve())
        resp = await master.execute(RtuFrame(1, ReadHoldingRegistersReq(0, 2)))
        server.cancel()
        return trace, resp, master

    trace, resp, master = virtual(main())
    assert resp.pdu.registers == (5, 6)
    assert master.attempts == 1
    assert [r.data.hex() for r in trace.records] == [
        "010300000002c40b", encode_adu(RtuFrame(1, ReadHoldingRegistersResp((5, 6)))).hex()]
    # request takes 8 chars on the wire, then the slave may answer
    assert trace.records[1].ts >= trace.records[0].ts + 8 * SERIAL.char_time


def test_master_times_out_after_all_retries(virtual):
    timing = MasterTiming.for_serial(SERIAL, response_timeout=0.5, retries=2)

    async def main():
        _, _, master, _ = make_pair(timing=timing)  # slave never served
        loop = asyncio.get_running_loop()
        t0 = loop.time()
        with pytest.raises(ModbusTimeout) as info:
            await master.execute(RtuFrame(1, ReadHoldingRegistersReq(0, 1)))
        return info.value, loop.time() - t0

    exc, elapsed = virtual(main())
    assert exc.attempts == 3
    assert elapsed >= 3 * 0.5


def test_master_retries_after_corrupted_response(virtual):
    async def main():
        _, slave, master, port = make_pair(corrupt={0})
        server = asyncio.create_task(slave.serve())
        resp = await master.execute(RtuFrame(1, ReadHoldingRegistersReq(0, 1)))
        server.cancel()
        return resp, master, port

    resp, master, port = virtual(main())
    assert resp.pdu.registers == (5,)
    assert port.corrupted == 1
    assert master.attempts == 2
    assert master.failed_attempts == 1


def test_master_raises_on_exception_response(virtual):
    async def main():
        _, slave, master, _ = make_pair()
        server = asyncio.create_task(slave.serve())
        try:
            with pytest.raises(ExceptionReturned) as info:
                await master.execute(RtuFrame(1, ReadHoldingRegistersReq(15, 2)))
        finally:
            server.cancel()
        return info.value

    exc = virtual(main())
    assert exc.response.code == ExceptionCode.ILLEGAL_DATA_ADDRESS


def test_master_broadcast_returns_none(virtual):
    async def main():
        trace, slave, master, _ = make_pair()
        server = asyncio.create_task(slave.serve())
        out = await master.execute(RtuFrame(0, WriteSingleCoilReq(1, True)))
        await asyncio.sleep(0.1)
        server.cancel()
        return out, trace, slave

    out, trace, slave = virtual(main())
    assert out is None
    assert [r.direction for r in trace.records] == ["M>S"]
    assert slave.store.read_coils(1, 1) == [True]


def test_requests_and_responses_alternate(virtual):
    async def main():
        trace, slave, master, _ = make_pair("gap")
        server = asyncio.create_task(slave.serve())
        for i in range(50):
            if i % 2:
                await master.execute(RtuFrame(1, WriteMultipleCoilsReq(0, (True, i % 3 == 0))))
            else:
                await master.execute(RtuFrame(1, ReadHoldingRegistersReq(0, 1)))
        server.cancel()
        return trace

    trace = virtual(main())
    dirs = [r.direction for r in trace.records]
    assert dirs == ["M>S", "S>M"] * 50
    # the line is never driven by both ends at once and gaps are respected
    for prev, cur in zip(trace.records, trace.records[1:]):
        end = prev.ts + len(prev.data) * SERIAL.char_time
        assert cur.ts >= end + SERIAL.silent_interval - 1e-9
