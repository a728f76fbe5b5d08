import subprocess
import sys

import pytest

from plcbridge.cli import decode_modbus_text, main


def test_decode_modbus_ok(capsys):
    assert main(["decode-modbus", "010300000001840a"]) == 0
    assert capsys.readouterr().out.strip() == "slave 1, Read Holding Registers, start 0, qty 1, CRC OK"


def test_decode_modbus_crc_mismatch(capsys):
    assert main(["decode-modbus", "010300000001840b"]) == 1
    assert capsys.readouterr().out.strip() == \
        "CRC MISMATCH (computed 0x0A84, received 0x0B84)"


def test_decode_modbus_response_role():
    text, ok = decode_modbus_text(bytes.fromhex("0103020007f986"), "master")
    assert ok and text == "slave 1, Read Holding Registers, registers [7], CRC OK"


def test_decode_modbus_trace_file(tmp_path, capsys):
    trace = tmp_path / "t.txt"
    trace.write_text("0.000000 plc1 M>S 010300000001840a\n0.010000 plc1 S>M 0103020007f986\n")
    assert main(["decode-modbus", "--trace", str(trace)]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0].endswith("start 0, qty 1, CRC OK")
    assert out[1].endswith("registers [7], CRC OK")


def test_decode_mqtt_stream(capsys):
    assert main(["decode-mqtt", "c000d000e000"]) == 0
    assert capsys.readouterr().out.splitlines() == [
        "PINGREQ (2 bytes)", "PINGRESP (2 bytes)", "DISCONNECT (2 bytes)"]


def test_decode_mqtt_incomplete(capsys):
    assert main(["decode-mqtt", "300e000a"]) == 1
    assert capsys.readouterr().out.startswith("INCOMPLETE")


def test_decode_needs_input():
    with pytest.raises(SystemExit):
        main(["decode-modbus"])


def test_scenario_command(tmp_path, capsys):
    assert main(["scenario", "--cycles", "2", "--deterministic", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "cycles_completed 2" in out
    assert "violations 0" in out
    for name in ("trace.tsv", "summary.tsv", "modbus_trace.txt", "mqtt_wire.txt",
                 "timeline.png", "cycle_durations.png", "frame_counts.png"):
        assert (tmp_path / name).stat().st_size > 0


def test_scenario_summary_only(capsys):
    assert main(["scenario", "--deterministic", "--summary-only"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "outcome completed"
    assert "violations 0" in lines


def test_gateway_bad_config_exits_1(tmp_path):
    cfg = tmp_path / "gw.toml"
    cfg.write_text("[gateway]\n[gateway.mqtt]\nretain = true\n")
    assert main(["gateway", "--config", str(cfg)]) == 1


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "plcbridge", "decode-mqtt", "c000"],
                          capture_output=True, text=True, timeout=60)
    assert proc.returncode == 0
    assert proc.stdout.strip() == "PINGREQ (2 bytes)"
