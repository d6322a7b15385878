"""Newline-delimited wire protocol between adapter and target.

Records are plain text lines: the control record ``RESET`` (answered by
``RESET-OK``), the null packet ``NIL``, or a packet record carrying the
eleven packet fields as ``key=value`` pairs in fixed order.
"""

from __future__ import annotations

import socket

from .errors import FormatError, TransportError
from .symbols import PACKET_FIELDS, ConcretePacket

RESET = "RESET"
RESET_OK = "RESET-OK"
NIL_RECORD = "NIL"

DEFAULT_TIMEOUT = 0.2


def encode_packet(packet: ConcretePacket) -> str:
    if packet.isNull:
        return NIL_RECORD
    parts = []
    for name in PACKET_FIELDS:
        value = getattr(packet, name)
        if value is None:
            text = "none"
        elif isinstance(value, bool):
            text = "true" if value else "false"
        else:
            text = str(value)
        parts.append(f"{name}={text}")
    return " ".join(parts)


def decode_packet(line: str) -> ConcretePacket:
    line = line.strip()
    if line == NIL_RECORD:
        return ConcretePacket.nil()
    values = {}
    for chunk in line.split():
        if "=" not in chunk:
            raise FormatError(f"bad packet field {chunk!r}")
        key, text = chunk.split("=", 1)
        if key not in PACKET_FIELDS:
            raise FormatError(f"unknown packet field {key!r}")
        if key == "flags":
            values[key] = text
        elif key == "isNull":
            values[key] = text == "true"
        elif text == "none":
            values[key] = None
        else:
            try:
                values[key] = int(text)
            except ValueError as exc:
                raise FormatError(f"field {key} has non-integer value {text!r}") from exc
    missing = set(PACKET_FIELDS) - set(values)
    if missing:
        raise FormatError(f"packet record lacks fields {sorted(missing)}")
    return ConcretePacket(**values)


class Transport:
    """One line-oriented channel to a SUL. Subclasses supply the bytes."""

    def send_line(self, line: str) -> None:
        raise NotImplementedError

    def recv_line(self) -> str | None:
        """Next line, or None when the timeout elapsed with no data."""
        raise NotImplementedError

    def close(self) -> None:
        pass


class TcpTransport(Transport):
    """Socket-backed transport; one connection per adapter lifetime."""

    def __init__(self, host: str, port: int, timeout: float = DEFAULT_TIMEOUT):
        self.timeout = timeout
        try:
            self._sock = socket.create_connection((host, port), timeout=5.0)
        except OSError as exc:
            raise TransportError(f"cannot connect to {host}:{port}: {exc}") from exc
        self._file = self._sock.makefile("rwb")

    def send_line(self, line: str) -> None:
        try:
            self._file.write(line.encode("utf-8") + b"\n")
            self._file.flush()
        except OSError as exc:
            raise TransportError(f"send failed: {exc}") from exc

    def recv_line(self) -> str | None:
        self._sock.settimeout(self.timeout)
        try:
            raw = self._file.readline()
        except socket.timeout:
            return None
        except OSError as exc:
            raise TransportError(f"receive failed: {exc}") from exc
        if not raw:
            raise TransportError("connection closed by peer")
        return raw.decode("utf-8").rstrip("\n")

    def close(self) -> None:
        try:
            self._file.close()
            self._sock.close()
        except OSError:
            pass


class InProcessTransport(Transport):
    """Directly drives a simulator core in the same process.

    The core object must expose ``handle_line(line) -> line``.  Useful
    for fast tests and for the heavier statistical checks.
    """

    def __init__(self, core):
        self._core = core
        self._pending: list[str] = []

    def send_line(self, line: str) -> None:
        reply = self._core.handle_line(line)
        if reply is not None:
            self._pending.append(reply)

    def recv_line(self) -> str | None:
        if not self._pending:
            return None
        return self._pending.pop(0)


def parse_endpoint(text: str) -> tuple[str, int]:
    if ":" not in text:
        raise TransportError(f"endpoint {text!r} is not host:port")
    host, _, port = text.rpartition(":")
    try:
        return host or "127.0.0.1", int(port)
    except ValueError as exc:
        raise TransportError(f"endpoint {text!r} has a bad port") from exc


def connect(endpoint: str, timeout: float = DEFAULT_TIMEOUT) -> Transport:
    host, port = parse_endpoint(endpoint)
    return TcpTransport(host, port, timeout)
