"""Modbus RTU codec and endpoints."""
from .codec import *  # noqa: F401,F403
from .codec import (
    ExceptionCode, RtuFrame, SlaveAddress, crc16, decode_adu, encode_adu, pack_coils, unpack_coils,
)
from .runtime import (
    DataStore, MasterTiming, ModbusMaster, ModbusSlave, ModbusTimeout, ModbusTrace, RtuFramer,
    SerialParams, SimSerialLink, StreamSerialPort, CorruptingPort, slave_handle,
)
