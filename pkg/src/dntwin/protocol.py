"""Binary UDP channel-oracle protocol: codec, serial server and blocking client.

Every message is one datagram, little-endian::

    u8 type | u32 request_id | payload

    0x01 CALC_REQUEST  u8 mode, u32 tx_id, u32 rx_id
    0x02 CALC_DONE     u16 count, count * (u32 tx_id, u32 rx_id, f64 gain_db, f64 delay_s, u8 los)
    0x03 LOC_UPDATE    u32 object_id, f64 x, f64 y, f64 z
    0x04 LOC_CONFIRM   u32 object_id, u8 status
"""

from __future__ import annotations

import enum
import logging
import math
import socket
import socketserver
import struct
import threading
from dataclasses import dataclass, field

from .geometry import Scene
from .raytracer import PathCache, RtConfig, cached_channel
from .reports import ChannelReport, LosState

log = logging.getLogger(__name__)

MAX_ENTRIES = 1365
MAX_DATAGRAM = 65507

_HEADER = struct.Struct("<BI")
_CALC_REQUEST = struct.Struct("<BII")
_COUNT = struct.Struct("<H")
_ENTRY = struct.Struct("<IIddB")
_LOC_UPDATE = struct.Struct("<Iddd")
_LOC_CONFIRM = struct.Struct("<IB")


class MessageType(enum.IntEnum):
    CALC_REQUEST = 0x01
    CALC_DONE = 0x02
    LOC_UPDATE = 0x03
    LOC_CONFIRM = 0x04


class CalcMode(enum.IntEnum):
    SINGLE = 0
    GROUPED = 1


class LocStatus(enum.IntEnum):
    OK = 0
    UNKNOWN_ID = 1
    BELOW_THRESHOLD = 2


class ProtocolError(ValueError):
    pass


class TruncatedDatagram(ProtocolError):
    pass


class UnknownMessageType(ProtocolError):
    pass


class LengthMismatch(ProtocolError):
    pass


class EntryOverflow(ProtocolError):
    pass


@dataclass(frozen=True)
class CalcRequest:
    request_id: int
    mode: CalcMode
    tx_id: int
    rx_id: int = 0


@dataclass(frozen=True)
class Entry:
    tx_id: int
    rx_id: int
    gain_db: float
    delay_s: float
    los: LosState

    def report(self) -> ChannelReport:
        return ChannelReport(self.gain_db, self.delay_s, LosState(self.los))


@dataclass(frozen=True)
class CalcDone:
    request_id: int
    entries: tuple[Entry, ...] = ()


@dataclass(frozen=True)
class LocUpdate:
    request_id: int
    object_id: int
    x: float
    y: float
    z: float


@dataclass(frozen=True)
class LocConfirm:
    request_id: int
    object_id: int
    status: LocStatus


Message = CalcRequest | CalcDone | LocUpdate | LocConfirm


def encode_message(m: Message) -> bytes:
    if isinstance(m, CalcRequest):
        return _HEADER.pack(MessageType.CALC_REQUEST, m.request_id) + _CALC_REQUEST.pack(m.mode, m.tx_id, m.rx_id)
    if isinstance(m, CalcDone):
        if len(m.entries) > MAX_ENTRIES:
            raise EntryOverflow(f"{len(m.entries)} entries exceed the single-datagram bound {MAX_ENTRIES}")
        parts = [_HEADER.pack(MessageType.CALC_DONE, m.request_id), _COUNT.pack(len(m.entries))]
        parts.extend(_ENTRY.pack(e.tx_id, e.rx_id, e.gain_db, e.delay_s, e.los) for e in m.entries)
        return b"".join(parts)
    if isinstance(m, LocUpdate):
        return _HEADER.pack(MessageType.LOC_UPDATE, m.request_id) + _LOC_UPDATE.pack(m.object_id, m.x, m.y, m.z)
    if isinstance(m, LocConfirm):
        return _HEADER.pack(MessageType.LOC_CONFIRM, m.request_id) + _LOC_CONFIRM.pack(m.object_id, m.status)
    raise TypeError(f"not a protocol message: {m!r}")


def _exact(payload: bytes, fmt: struct.Struct, what: str):
    if len(payload) < fmt.size:
        raise TruncatedDatagram(f"{what}: {len(payload)} payload bytes, need {fmt.size}")
    if len(payload) > fmt.size:
        raise LengthMismatch(f"{what}: {len(payload)} payload bytes, expected {fmt.size}")
    return fmt.unpack(payload)


def decode_message(data: bytes) -> Message:
    if len(data) < _HEADER.size:
        raise TruncatedDatagram(f"datagram of {len(data)} bytes is shorter than the header")
    kind, request_id = _HEADER.unpack_from(data)
    payload = data[_HEADER.size:]
    if kind == MessageType.CALC_REQUEST:
        mode, tx, rx = _exact(payload, _CALC_REQUEST, "CALC_REQUEST")
        try:
            mode = CalcMode(mode)
        except ValueError:
            raise ProtocolError(f"unknown calculation mode {mode}") from None
        return CalcRequest(request_id, mode, tx, rx)
    if kind == MessageType.CALC_DONE:
        if len(payload) < _COUNT.size:
            raise TruncatedDatagram("CALC_DONE without entry count")
        (count,) = _COUNT.unpack_from(payload)
        body = payload[_COUNT.size:]
        if len(body) < count * _ENTRY.size:
            raise TruncatedDatagram(f"CALC_DONE announces {count} entries but carries {len(body)} bytes")
        if len(body) != count * _ENTRY.size:
            raise LengthMismatch(f"CALC_DONE announces {count} entries but carries {len(body)} bytes")
        entries = []
        for tx, rx, gain, delay, los in _ENTRY.iter_unpack(body):
            try:
                los = LosState(los)
            except ValueError:
                raise ProtocolError(f"invalid LOS flag {los}") from None
            entries.append(Entry(tx, rx, gain, delay, los))
        return CalcDone(request_id, tuple(entries))
    if kind == MessageType.LOC_UPDATE:
        return LocUpdate(request_id, *_exact(payload, _LOC_UPDATE, "LOC_UPDATE"))
    if kind == MessageType.LOC_CONFIRM:
        obj, status = _exact(payload, _LOC_CONFIRM, "LOC_CONFIRM")
        try:
            status = LocStatus(status)
        except ValueError:
            raise ProtocolError(f"invalid LOC_CONFIRM status {status}") from None
        return LocConfirm(request_id, obj, status)
    raise UnknownMessageType(f"unknown message type 0x{kind:02x}")


# --- server -----------------------------------------------------------------------


@dataclass
class ServerStats:
    requests: int = 0
    malformed: int = 0
    location_updates: int = 0
    applied_moves: int = 0


@dataclass
class ChannelService:
    """Message handler owning the scene snapshot, the ray tracer config and the cache.

    Transport-free so it can be driven in-process or behind a socket.
    """

    scene: Scene
    rt_config: RtConfig = field(default_factory=RtConfig)
    fc: float = 5.89e9
    min_move_threshold: float = 0.5
    cache: PathCache = field(default_factory=PathCache)
    stats: ServerStats = field(default_factory=ServerStats)
    #: latest reported positions, including sub-threshold moves not applied to the scene
    reported: dict[int, tuple[float, float, float]] = field(default_factory=dict)

    def handle(self, msg: Message) -> Message | None:
        self.stats.requests += 1
        if isinstance(msg, CalcRequest):
            return self._calc(msg)
        if isinstance(msg, LocUpdate):
            return self._move(msg)
        # replies sent to the server are ignored
        return None

    def _calc(self, msg: CalcRequest) -> CalcDone:
        if msg.mode == CalcMode.GROUPED:
            pairs = [(msg.tx_id, rx) for rx in sorted(self.scene.entities) if rx != msg.tx_id]
        else:
            pairs = [(msg.tx_id, msg.rx_id)]
        if len(pairs) > MAX_ENTRIES:
            raise EntryOverflow(f"grouped reply would carry {len(pairs)} entries")
        entries = []
        for tx, rx in pairs:
            r = cached_channel(self.cache, self.scene, tx, rx, self.rt_config, self.fc)
            entries.append(Entry(tx, rx, r.gain_db, r.delay_s, r.los))
        return CalcDone(msg.request_id, tuple(entries))

    def _move(self, msg: LocUpdate) -> LocConfirm:
        self.stats.location_updates += 1
        oid = msg.object_id
        if oid not in self.scene.entities:
            return LocConfirm(msg.request_id, oid, LocStatus.UNKNOWN_ID)
        new = (msg.x, msg.y, msg.z)
        self.reported[oid] = new
        if math.dist(self.scene.entities[oid].position, new) < self.min_move_threshold:
            return LocConfirm(msg.request_id, oid, LocStatus.BELOW_THRESHOLD)
        self.scene = self.scene.with_position(oid, new)
        self.cache.wipe()
        self.stats.applied_moves += 1
        return LocConfirm(msg.request_id, oid, LocStatus.OK)


class _Handler(socketserver.BaseRequestHandler):
    def handle(self):
        data, sock = self.request
        service: ChannelService = self.server.service
        try:
            msg = decode_message(data)
        except ProtocolError as exc:
            service.stats.malformed += 1
            log.debug("dropping malformed datagram from %s: %s", self.client_address, exc)
            return
        try:
            reply = service.handle(msg)
        except (KeyError, ValueError, RuntimeError) as exc:
            # unknown ids in CALC_REQUEST and overflow guards: no reply, like a lost datagram
            service.stats.malformed += 1
            log.warning("request %r failed: %s", msg, exc)
            return
        if reply is not None:
            sock.sendto(encode_message(reply), self.client_address)


class ChannelServer(socketserver.UDPServer):
    """Strictly serial UDP server: one datagram is fully handled before the next."""

    max_packet_size = MAX_DATAGRAM
    allow_reuse_address = True

    def __init__(self, address: tuple[str, int], service: ChannelService):
        super().__init__(address, _Handler)
        self.service = service

    def start_background(self) -> threading.Thread:
        t = threading.Thread(target=self.serve_forever, kwargs={"poll_interval": 0.05}, daemon=True)
        t.start()
        return t


def serve(address: tuple[str, int], scene: Scene, rt_config: RtConfig, fc: float = 5.89e9, min_move_threshold: float = 0.5):
    """Run the channel oracle until interrupted."""
    service = ChannelService(scene, rt_config, fc, min_move_threshold)
    with ChannelServer(address, service) as server:
        log.info("channel oracle listening on %s:%d", *server.server_address[:2])
        try:
            server.serve_forever()
        except KeyboardInterrupt:
            pass
    return service


# --- client -----------------------------------------------------------------------


class ClientTimeout(TimeoutError):
    pass


class ChannelClient:
    """Blocking client; one outstanding request at a time, retried on timeout."""

    def __init__(self, address: tuple[str, int], timeout: float = 1.0, retries: int = 3):
        self.address = address
        self.timeout = timeout
        self.retries = retries
        self._next_id = 1
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self._sock.settimeout(timeout)

    def close(self):
        self._sock.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _new_id(self) -> int:
        rid = self._next_id
        self._next_id = (self._next_id + 1) & 0xFFFFFFFF
        return rid

    def exchange(self, msg: Message, expect: type) -> Message:
        payload = encode_message(msg)
        for _ in range(self.retries + 1):
            self._sock.sendto(payload, self.address)
            try:
                while True:
                    data, _addr = self._sock.recvfrom(MAX_DATAGRAM)
                    try:
                        reply = decode_message(data)
                    except ProtocolError:
                        continue
                    # late replies to earlier attempts are discarded
                    if isinstance(reply, expect) and reply.request_id == msg.request_id:
                        return reply
            except socket.timeout:
                continue
            except ConnectionRefusedError:
                continue
        raise ClientTimeout(f"no reply to {type(msg).__name__} {msg.request_id} after {self.retries + 1} attempts")

    def request_channel(self, tx_id: int, rx_id: int | None = None) -> list[tuple[int, int, ChannelReport]]:
        """Single pair, or every other entity when ``rx_id`` is None."""
        mode = CalcMode.GROUPED if rx_id is None else CalcMode.SINGLE
        req = CalcRequest(self._new_id(), mode, tx_id, rx_id or 0)
        reply = self.exchange(req, CalcDone)
        return [(e.tx_id, e.rx_id, e.report()) for e in reply.entries]

    def update_location(self, object_id: int, position) -> LocStatus:
        x, y, z = (float(c) for c in position)
        reply = self.exchange(LocUpdate(self._new_id(), object_id, x, y, z), LocConfirm)
        return reply.status


def client_request_channel(client: ChannelClient, tx_id: int, rx_id: int | None = None) -> list[ChannelReport]:
    return [r for _tx, _rx, r in client.request_channel(tx_id, rx_id)]


def client_update_location(client: ChannelClient, object_id: int, position) -> LocStatus:
    return client.update_location(object_id, position)
