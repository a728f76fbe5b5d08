"""Minimal MQTT broker and poll-driven client session.

Both sides talk to asyncio ``(reader, writer)`` stream pairs, obtained
either from real TCP sockets or from :class:`MemoryNetwork`, which wires
stream pairs together in-process for deterministic runs.
"""
from __future__ import annotations

import asyncio
import itertools
import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Awaitable, Callable, Optional

from .codec import (
    SUBACK_FAILURE,
    Connack,
    Connect,
    Disconnect,
    MqttError,
    MqttPacket,
    NeedMoreBytes,
    Pingreq,
    Pingresp,
    Publish,
    Suback,
    Subscribe,
    decode_packet,
    describe,
    encode_packet,
)

log = logging.getLogger(__name__)

DEFAULT_PORT = 1883

Connector = Callable[[str, int], Awaitable[tuple]]


class BrokerUnreachable(MqttError):
    pass


class ConnackRefused(MqttError):
    def __init__(self, code: int):
        super().__init__(f"broker refused connection, CONNACK return code {code}")
        self.code = code


class MqttTimeout(MqttError):
    pass


class NotConnected(MqttError):
    pass


class SubackFailure(MqttError):
    pass


class ConnectionLost(MqttError):
    pass


# -- in-process network --------------------------------------------------------


class MemoryWriter:
    """The write half of an in-memory stream; feeds the peer's reader."""

    def __init__(self, peer_reader: asyncio.StreamReader):
        self._peer = peer_reader
        self._closing = False
        self.peer_writer: Optional[MemoryWriter] = None

    def write(self, data: bytes) -> None:
        if self._closing:
            raise ConnectionResetError("write to closed stream")
        self._peer.feed_data(bytes(data))

    async def drain(self) -> None:
        if self._closing:
            raise ConnectionResetError("stream closed")

    def close(self) -> None:
        if self._closing:
            return
        self._closing = True
        self._peer.feed_eof()
        # Closing either side tears the connection down for both, like a socket.
        if self.peer_writer is not None:
            self.peer_writer.close()

    def is_closing(self) -> bool:
        return self._closing

    async def wait_closed(self) -> None:
        return None

    def get_extra_info(self, name, default=None):
        return default


def memory_pipe():
    """Return ``((reader_a, writer_a), (reader_b, writer_b))`` connected back to back."""
    ra, rb = asyncio.StreamReader(), asyncio.StreamReader()
    wa, wb = MemoryWriter(rb), MemoryWriter(ra)
    wa.peer_writer, wb.peer_writer = wb, wa
    return (ra, wa), (rb, wb)


class MemoryNetwork:
    """Address book of in-process listeners. ``connect`` mimics open_connection."""

    def __init__(self):
        self._listeners: dict[tuple[str, int], Callable] = {}
        self._tasks: set[asyncio.Task] = set()

    def listen(self, host: str, port: int, handler) -> "MemoryListener":
        key = (host, port)
        if key in self._listeners:
            raise OSError(f"address {host}:{port} already in use")
        self._listeners[key] = handler
        return MemoryListener(self, key)

    async def connect(self, host: str, port: int):
        handler = self._listeners.get((host, port))
        if handler is None:
            raise ConnectionRefusedError(f"nothing listening on {host}:{port}")
        client, server = memory_pipe()
        task = asyncio.get_running_loop().create_task(handler(*server))
        self._tasks.add(task)
        task.add_done_callback(self._tasks.discard)
        return client


@dataclass
class MemoryListener:
    network: MemoryNetwork
    key: tuple[str, int]

    def close(self) -> None:
        self.network._listeners.pop(self.key, None)


async def tcp_connect(host: str, port: int):
    return await asyncio.open_connection(host, port)


async def read_packet(reader: asyncio.StreamReader, buffer: bytearray) -> tuple[MqttPacket, bytes]:
    """Read one packet from ``reader``, keeping leftovers in ``buffer``.

    Returns the packet and its raw bytes. Raises ConnectionLost on EOF.
    """
    while True:
        if buffer:
            try:
                packet, used = decode_packet(buffer)
            except NeedMoreBytes:
                pass
            else:
                raw = bytes(buffer[:used])
                del buffer[:used]
                return packet, raw
        chunk = await reader.read(4096)
        if not chunk:
            raise ConnectionLost("stream closed")
        buffer += chunk


# -- wire log ------------------------------------------------------------------


@dataclass(frozen=True)
class WireRecord:
    ts: float
    endpoint: str
    direction: str  # "in" or "out", seen from ``endpoint``
    data: bytes

    def format(self) -> str:
        return f"{self.ts:.6f} {self.endpoint} {self.direction} {self.data.hex()}"


@dataclass
class WireLog:
    records: list[WireRecord] = field(default_factory=list)

    def record(self, endpoint: str, direction: str, data: bytes) -> None:
        ts = asyncio.get_running_loop().time()
        self.records.append(WireRecord(ts, endpoint, direction, bytes(data)))

    def packets(self, endpoint: Optional[str] = None, direction: Optional[str] = None):
        """Decoded packets as ``(record, packet)`` pairs, optionally filtered."""
        out = []
        for rec in self.records:
            if endpoint is not None and rec.endpoint != endpoint:
                continue
            if direction is not None and rec.direction != direction:
                continue
            out.append((rec, decode_packet(rec.data)[0]))
        return out


# -- broker --------------------------------------------------------------------


@dataclass
class BrokerState:
    sessions: dict[str, object] = field(default_factory=dict)
    subscriptions: dict[str, set[str]] = field(default_factory=dict)

    def subscribe(self, client_id: str, topic: str) -> None:
        self.subscriptions.setdefault(topic, set()).add(client_id)

    def drop(self, client_id: str) -> None:
        self.sessions.pop(client_id, None)
        for topic in list(self.subscriptions):
            self.subscriptions[topic].discard(client_id)
            if not self.subscriptions[topic]:
                del self.subscriptions[topic]


def broker_route(publish: Publish, state: BrokerState) -> list[tuple[str, Publish]]:
    """Delivery set for ``publish``: exact topic match, retain bit cleared."""
    subscribers = state.subscriptions.get(publish.topic, ())
    outgoing = Publish(publish.topic, publish.payload, retain=False)
    return [(client_id, outgoing) for client_id in sorted(subscribers)]


class _BrokerConnection:
    def __init__(self, broker: "Broker", reader, writer):
        self.broker = broker
        self.reader = reader
        self.writer = writer
        self.client_id: Optional[str] = None
        self.closed = False

    def send(self, packet: MqttPacket) -> None:
        if self.closed or self.writer.is_closing():
            return
        data = encode_packet(packet)
        if self.broker.wire is not None:
            self.broker.wire.record("broker", "out", data)
        try:
            self.writer.write(data)
        except (ConnectionError, RuntimeError):
            self.close()

    def close(self) -> None:
        if not self.closed:
            self.closed = True
            self.writer.close()


class Broker:
    """Routes QoS 0 publishes to exact-topic subscribers.

    All routing happens synchronously inside the loop thread, so deliveries
    to each subscriber keep publish arrival order.
    """

    def __init__(self, connect_timeout: float = 10.0, wire: Optional[WireLog] = None):
        self.state = BrokerState()
        self.connect_timeout = connect_timeout
        self.wire = wire
        self.published = 0
        self.delivered = 0
        self._connections: set[_BrokerConnection] = set()
        self._server = None
        self._listener: Optional[MemoryListener] = None

    async def start_tcp(self, host: str = "127.0.0.1", port: int = DEFAULT_PORT) -> int:
        self._server = await asyncio.start_server(self.handle, host, port)
        return self._server.sockets[0].getsockname()[1]

    def attach(self, network: MemoryNetwork, host: str = "broker", port: int = DEFAULT_PORT) -> None:
        self._listener = network.listen(host, port, self.handle)

    async def stop(self) -> None:
        """Stop listening and drop every connection."""
        if self._listener is not None:
            self._listener.close()
            self._listener = None
        if self._server is not None:
            self._server.close()
            await self._server.wait_closed()
            self._server = None
        for conn in list(self._connections):
            conn.close()
        self._connections.clear()
        self.state = BrokerState()

    async def handle(self, reader, writer) -> None:
        conn = _BrokerConnection(self, reader, writer)
        self._connections.add(conn)
        buffer = bytearray()
        try:
            packet = await asyncio.wait_for(self._read(conn, buffer), self.connect_timeout)
            if not isinstance(packet, Connect):
                log.info("broker: first packet was %s, closing", type(packet).__name__)
                return
            self._on_connect(conn, packet)
            keepalive = packet.keepalive
            while not conn.closed:
                timeout = 1.5 * keepalive if keepalive else None
                packet = await asyncio.wait_for(self._read(conn, buffer), timeout)
                if isinstance(packet, Disconnect):
                    log.info("broker: DISCONNECT client_id=%s", conn.client_id)
                    break
                self._dispatch(conn, packet)
        except asyncio.TimeoutError:
            log.info("broker: client_id=%s timed out", conn.client_id)
        except (ConnectionLost, ConnectionError):
            pass
        except MqttError as exc:
            log.info("broker: protocol error from client_id=%s: %s", conn.client_id, exc)
        finally:
            self._forget(conn)
            conn.close()

    async def _read(self, conn: _BrokerConnection, buffer: bytearray) -> MqttPacket:
        packet, raw = await read_packet(conn.reader, buffer)
        if self.wire is not None:
            self.wire.record("broker", "in", raw)
        return packet

    def _on_connect(self, conn: _BrokerConnection, packet: Connect) -> None:
        old = self.state.sessions.get(packet.client_id)
        if old is not None:
            log.info("broker: takeover of client_id=%s", packet.client_id)
            self._forget(old)
            old.close()
        conn.client_id = packet.client_id
        self.state.sessions[packet.client_id] = conn
        log.info("broker: CONNECT client_id=%s keepalive=%d", packet.client_id, packet.keepalive)
        conn.send(Connack(0))

    def _forget(self, conn: _BrokerConnection) -> None:
        self._connections.discard(conn)
        if conn.client_id is not None and self.state.sessions.get(conn.client_id) is conn:
            self.state.drop(conn.client_id)

    def _dispatch(self, conn: _BrokerConnection, packet: MqttPacket) -> None:
        if isinstance(packet, Publish):
            self.published += 1
            if packet.retain:
                log.warning("broker: retain=1 from client_id=%s on %s is unsupported and ignored",
                            conn.client_id, packet.topic)
            deliveries = broker_route(packet, self.state)
            log.info("broker: PUBLISH client_id=%s topic=%s payload=%s routed_to=%s",
                     conn.client_id, packet.topic, packet.payload.hex(),
                     ",".join(c for c, _ in deliveries) or "-")
            for client_id, outgoing in deliveries:
                self.state.sessions[client_id].send(outgoing)
                self.delivered += 1
        elif isinstance(packet, Subscribe):
            granted = []
            for topic, _qos in packet.filters:
                if "+" in topic or "#" in topic:
                    granted.append(SUBACK_FAILURE)
                else:
                    self.state.subscribe(conn.client_id, topic)
                    granted.append(0)
            log.info("broker: SUBSCRIBE client_id=%s filters=%s granted=%s", conn.client_id,
                     ",".join(t for t, _ in packet.filters), granted)
            conn.send(Suback(packet.packet_id, granted))
        elif isinstance(packet, Pingreq):
            conn.send(Pingresp())
        else:
            raise MqttError(f"unexpected {type(packet).__name__} from client")


# -- client --------------------------------------------------------------------


class MqttClient:
    """One client session. Receiving is poll-driven: call :meth:`poll`."""

    def __init__(self, client_id: str, host: str = "127.0.0.1", port: int = DEFAULT_PORT,
                 keepalive: int = 60, response_timeout: float = 5.0,
                 connector: Optional[Connector] = None, wire: Optional[WireLog] = None):
        self.client_id = client_id
        self.host = host
        self.port = port
        self.keepalive = keepalive
        self.response_timeout = response_timeout
        self.connector = connector or tcp_connect
        self.wire = wire
        self.state = "disconnected"
        self._reader = None
        self._writer = None
        self._reader_task: Optional[asyncio.Task] = None
        self._inbox: deque[tuple[str, bytes]] = deque()
        self._pending: dict[int, asyncio.Future] = {}
        self._connack: Optional[asyncio.Future] = None
        self._packet_ids = itertools.cycle(range(1, 0x10000))
        self._last_sent = 0.0
        self._last_received = 0.0

    @property
    def connected(self) -> bool:
        return self.state == "connected"

    def _now(self) -> float:
        return asyncio.get_running_loop().time()

    def _send(self, packet: MqttPacket) -> None:
        if self._writer is None or self._writer.is_closing():
            self._lost("transport closed")
            raise NotConnected(f"{self.client_id}: not connected")
        data = encode_packet(packet)
        if self.wire is not None:
            self.wire.record(self.client_id, "out", data)
        try:
            self._writer.write(data)
        except (ConnectionError, RuntimeError) as exc:
            self._lost(str(exc))
            raise NotConnected(f"{self.client_id}: {exc}") from None
        self._last_sent = self._now()

    async def connect(self) -> Connack:
        if self.state != "disconnected":
            raise MqttError(f"{self.client_id}: connect() while {self.state}")
        self.state = "connecting"
        try:
            self._reader, self._writer = await self.connector(self.host, self.port)
        except OSError as exc:
            self.state = "disconnected"
            raise BrokerUnreachable(f"{self.host}:{self.port}: {exc}") from exc
        loop = asyncio.get_running_loop()
        self._connack = loop.create_future()
        self._last_received = self._now()
        self._reader_task = loop.create_task(self._read_loop())
        self._send(Connect(self.client_id, self.keepalive, clean_session=True))
        try:
            connack = await asyncio.wait_for(asyncio.shield(self._connack), self.response_timeout)
        except asyncio.TimeoutError:
            self._teardown()
            raise MqttTimeout(f"no CONNACK within {self.response_timeout} s") from None
        except ConnectionLost as exc:
            self._teardown()
            raise BrokerUnreachable(str(exc)) from None
        if connack.return_code != 0:
            self._teardown()
            raise ConnackRefused(connack.return_code)
        self.state = "connected"
        return connack

    async def subscribe(self, topic: str) -> int:
        if not self.connected:
            raise NotConnected(f"{self.client_id}: not connected")
        packet_id = next(self._packet_ids)
        fut = asyncio.get_running_loop().create_future()
        self._pending[packet_id] = fut
        self._send(Subscribe(packet_id, ((topic, 0),)))
        try:
            suback = await asyncio.wait_for(fut, self.response_timeout)
        except asyncio.TimeoutError:
            raise MqttTimeout(f"no SUBACK within {self.response_timeout} s") from None
        finally:
            self._pending.pop(packet_id, None)
        granted = suback.granted[0]
        if granted == SUBACK_FAILURE:
            raise SubackFailure(f"broker rejected subscription to {topic!r}")
        return granted

    async def publish(self, topic: str, payload: bytes, retain: bool = False) -> None:
        if not self.connected:
            raise NotConnected(f"{self.client_id}: not connected")
        self._send(Publish(topic, payload, retain=retain))
        await self._writer.drain()

    def poll(self) -> list[tuple[str, bytes]]:
        """Drain received messages and service keepalive."""
        messages = list(self._inbox)
        self._inbox.clear()
        if self.connected and self.keepalive:
            now = self._now()
            if now - self._last_received >= 1.5 * self.keepalive:
                self._lost("broker silent for 1.5 x keepalive")
            elif now - self._last_sent >= self.keepalive:
                try:
                    self._send(Pingreq())
                except NotConnected:
                    pass
        return messages

    async def disconnect(self) -> None:
        if self.connected:
            try:
                self._send(Disconnect())
                await self._writer.drain()
            except (NotConnected, ConnectionError):
                pass
        self._teardown()

    async def _read_loop(self) -> None:
        buffer = bytearray()
        try:
            while True:
                packet, raw = await read_packet(self._reader, buffer)
                self._last_received = self._now()
                if self.wire is not None:
                    self.wire.record(self.client_id, "in", raw)
                if isinstance(packet, Publish):
                    self._inbox.append((packet.topic, packet.payload))
                elif isinstance(packet, Connack):
                    if self._connack is not None and not self._connack.done():
                        self._connack.set_result(packet)
                elif isinstance(packet, Suback):
                    fut = self._pending.get(packet.packet_id)
                    if fut is not None and not fut.done():
                        fut.set_result(packet)
                elif isinstance(packet, Pingresp):
                    pass
                else:
                    log.warning("%s: unexpected %s", self.client_id, describe(packet))
        except (ConnectionLost, ConnectionError, MqttError) as exc:
            if self._connack is not None and not self._connack.done():
                self._connack.set_exception(ConnectionLost(str(exc)))
            self._lost(str(exc))

    def _lost(self, reason: str) -> None:
        if self.state != "disconnected":
            log.info("%s: connection lost: %s", self.client_id, reason)
        self._teardown()

    def _teardown(self) -> None:
        self.state = "disconnected"
        if self._writer is not None:
            self._writer.close()
        task = self._reader_task
        if task is not None and task is not asyncio.current_task() and not task.done():
            task.cancel()
        self._reader_task = None
        for fut in self._pending.values():
            if not fut.done():
                fut.set_exception(NotConnected("connection lost"))
        self._pending.clear()
