"""Rate-based reliable transport and request/response messaging."""

from .connection import (
    DEFERRED,
    Connection,
    ConnectionClosed,
    Listener,
    RemoteError,
    Request,
    Timeout,
    TransportConfig,
    TransportError,
    TransportStats,
    conn_stats,
    connect,
    connect_async,
    get_mux,
    listen,
    recv_stream,
    send_request,
    send_stream,
)
from .frame import Flag, Frame, FrameError, Kind, decode_frame, encode_frame
from .rate import RateControl, RateEvent, rate_control_update

__all__ = [
    "DEFERRED", "Connection", "ConnectionClosed", "Listener", "RemoteError", "Request",
    "Timeout", "TransportConfig", "TransportError", "TransportStats", "conn_stats",
    "connect", "connect_async", "get_mux", "listen", "recv_stream", "send_request",
    "send_stream", "Flag", "Frame", "FrameError", "Kind", "decode_frame", "encode_frame",
    "RateControl", "RateEvent", "rate_control_update",
]
