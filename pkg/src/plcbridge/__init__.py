"""Modbus RTU / MQTT bridge between PLCs, with a simulated two-PLC plant."""

__version__ = "0.1.0"
