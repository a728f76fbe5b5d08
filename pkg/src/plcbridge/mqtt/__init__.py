"""MQTT 3.1.1 codec, broker and client."""
from .codec import (
    Connack, Connect, Disconnect, MalformedPacket, MqttError, NeedMoreBytes, Pingreq, Pingresp,
    Publish, Suback, Subscribe, UnsupportedPacket, ValueTooLarge, decode_packet,
    decode_remaining_length, encode_packet, encode_remaining_length,
)
from .runtime import (
    DEFAULT_PORT, Broker, BrokerState, BrokerUnreachable, ConnackRefused, MemoryNetwork,
    MqttClient, MqttTimeout, NotConnected, SubackFailure, WireLog, broker_route,
)
