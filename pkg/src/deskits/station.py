"""Live station runtime: GNSS in, CAMs out, LDM maintained, API served.

A Station wires together the same building blocks the scenario runner
drives synchronously, but as free-running threads, mirroring a real
deployment: a GNSS reader feeds a queue, a transmit loop turns fixes
into CAMs, a receive loop decodes frames into LDM entries, a sweeper
ages the LDM, and the query API serves TCP clients. CAM trigger timing
follows the GNSS timestamps (so trace replays are reproducible), while
LDM aging follows the wall clock (receiver-side freshness).

Transports: an in-process SimBus that fans frames out to every attached
station (deterministic enough for tests), or UDP multicast for
multi-process demos. Framing is identical on both.

The station logs TX/RX lines to stdout in the scenario event-log CSV
format; live RX lines leave p_rx_dbm empty since no channel model runs.
"""

from __future__ import annotations

import queue
import socket
import struct
import sys
import threading
import time

from .cam_service import CamService, CamTriggerConfig
from .codec import (
    CAM_BTP_PORT,
    CodecError,
    Frame,
    decode_cam,
    decode_frame,
    encode_cam,
    encode_frame,
)
from .core import GeoPosition
from .gnss import FixUpdate, fix_to_state
from .ldm import EntryKind, LdmApiServer, LdmConfig, LdmEntry, LdmStore, LdmSweeper
from .scenario import EVENT_LOG_COLUMNS


class SimBus:
    """In-process broadcast fabric: every frame reaches every other station."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._queues: dict[int, queue.Queue] = {}

    def attach(self, station_id: int) -> "SimEndpoint":
        with self._lock:
            if station_id in self._queues:
                raise ValueError(f"station {station_id} already attached")
            q: queue.Queue = queue.Queue()
            self._queues[station_id] = q
        return SimEndpoint(self, station_id, q)

    def _broadcast(self, sender_id: int, data: bytes) -> None:
        with self._lock:
            targets = [q for sid, q in self._queues.items()
                       if sid != sender_id]
        for q in targets:
            q.put(data)

    def _detach(self, station_id: int) -> None:
        with self._lock:
            self._queues.pop(station_id, None)


class SimEndpoint:
    """One station's handle on a SimBus."""

    def __init__(self, bus: SimBus, station_id: int,
                 rx_queue: queue.Queue) -> None:
        self._bus = bus
        self._station_id = station_id
        self._rx = rx_queue

    def send(self, data: bytes) -> None:
        self._bus._broadcast(self._station_id, data)

    def recv(self, timeout_s: float) -> bytes | None:
        try:
            return self._rx.get(timeout=timeout_s)
        except queue.Empty:
            return None

    def close(self) -> None:
        self._bus._detach(self._station_id)


class UdpEndpoint:
    """UDP multicast transport with local loopback enabled."""

    def __init__(self, group: str, port: int) -> None:
        self.group = group
        self.port = port
        self._tx = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self._tx.setsockopt(socket.IPPROTO_IP, socket.IP_MULTICAST_TTL, 1)
        self._tx.setsockopt(socket.IPPROTO_IP, socket.IP_MULTICAST_LOOP, 1)
        self._rx = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self._rx.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._rx.bind(("", port))
        mreq = struct.pack("4s4s", socket.inet_aton(group),
                           socket.inet_aton("0.0.0.0"))
        self._rx.setsockopt(socket.IPPROTO_IP, socket.IP_ADD_MEMBERSHIP, mreq)
        self._rx.settimeout(0.2)

    def send(self, data: bytes) -> None:
        self._tx.sendto(data, (self.group, self.port))

    def recv(self, timeout_s: float) -> bytes | None:
        self._rx.settimeout(timeout_s)
        try:
            data, _addr = self._rx.recvfrom(65536)
            return data
        except socket.timeout:
            return None

    def close(self) -> None:
        self._tx.close()
        self._rx.close()


def parse_transport(spec: str, bus: SimBus | None = None):
    """Build a transport endpoint factory from a CLI-style spec string."""
    if spec == "sim":
        shared = bus if bus is not None else SimBus()
        return lambda station_id: shared.attach(station_id)
    if spec.startswith("udp:"):
        rest = spec[len("udp:"):]
        if ":" not in rest:
            raise ValueError(f"udp transport needs group:port, got {spec!r}")
        group, port_text = rest.rsplit(":", 1)
        port = int(port_text)
        return lambda station_id: UdpEndpoint(group, port)
    raise ValueError(f"unknown transport {spec!r}")


class Station:
    """One running ITS station."""

    def __init__(self, station_id: int, endpoint,
                 trigger_cfg: CamTriggerConfig | None = None,
                 ldm_cfg: LdmConfig | None = None,
                 log_file=None) -> None:
        self.station_id = station_id
        self.endpoint = endpoint
        self.cam_service = CamService(station_id, trigger_cfg)
        self.ldm_cfg = ldm_cfg if ldm_cfg is not None else LdmConfig()
        self.ldm = LdmStore()
        self._log = log_file if log_file is not None else sys.stdout
        self._log_lock = threading.Lock()
        self._stop = threading.Event()
        self._threads: list[threading.Thread] = []
        self._last_position: GeoPosition | None = None
        self.tx_count = 0
        self.rx_count = 0
        self.api_server: LdmApiServer | None = None
        self.sweeper: LdmSweeper | None = None
        self._fix_queue: "queue.Queue[FixUpdate | None]" = queue.Queue(
            maxsize=256)

    def _log_row(self, row: str) -> None:
        with self._log_lock:
            self._log.write(row + "\n")
            self._log.flush()

    def start(self, fixes, api_port: int | None = None) -> None:
        """Spin up all threads. `fixes` is any iterable of FixUpdate."""
        self._log_row(",".join(EVENT_LOG_COLUMNS))
        if api_port is not None:
            self.api_server = LdmApiServer(self.ldm, api_port)
            self.api_server.start_background()
        self.sweeper = LdmSweeper(self.ldm, self.ldm_cfg)
        self.sweeper.start()
        for target, name in ((self._gnss_loop, "gnss"),
                             (self._tx_loop, "tx"),
                             (self._rx_loop, "rx")):
            t = threading.Thread(target=target, args=(fixes,) if
                                 name == "gnss" else (), name=name,
                                 daemon=True)
            t.start()
            self._threads.append(t)

    def _gnss_loop(self, fixes) -> None:
        try:
            for fix in fixes:
                if self._stop.is_set():
                    break
                self._fix_queue.put(fix)
        finally:
            self._fix_queue.put(None)  # end-of-stream marker

    def _tx_loop(self) -> None:
        while not self._stop.is_set():
            try:
                fix = self._fix_queue.get(timeout=0.2)
            except queue.Empty:
                continue
            if fix is None:
                break
            if not fix.valid:
                continue
            self._last_position = fix.position
            state = fix_to_state(fix)
            payload = self.cam_service.update(state)
            if payload is None:
                continue
            frame = Frame(
                source_station_id=self.station_id,
                source_lat_tenth_udeg=payload.latitude_tenth_udeg,
                source_lon_tenth_udeg=payload.longitude_tenth_udeg,
                timestamp_ms=state.timestamp_ms & 0xFFFFFFFF,
                payload=encode_cam(payload),
                btp_dest_port=CAM_BTP_PORT)
            self.endpoint.send(encode_frame(frame))
            self.tx_count += 1
            self._log_row(
                f"{state.timestamp_ms},TX,{self.station_id},,"
                f"{state.position.lat_deg:.7f},"
                f"{state.position.lon_deg:.7f},,,")

    def _rx_loop(self) -> None:
        while not self._stop.is_set():
            data = self.endpoint.recv(timeout_s=0.2)
            if data is None:
                continue
            try:
                frame = decode_frame(data)
                if frame.btp_dest_port != CAM_BTP_PORT:
                    continue
                payload = decode_cam(frame.payload)
            except CodecError:
                continue
            now_ms = int(time.time() * 1000)
            position = GeoPosition(payload.latitude_tenth_udeg / 1e7,
                                   payload.longitude_tenth_udeg / 1e7,
                                   payload.altitude_cm / 100.0)
            self.ldm.upsert(LdmEntry(
                station_id=payload.station_id,
                kind=EntryKind.CAM,
                position=position,
                speed_mps=payload.speed_cmps / 100.0,
                heading_deg=payload.heading_tenth_deg / 10.0,
                last_update_ms=now_ms,
                raw_generation_delta_time=payload.generation_delta_time))
            self.rx_count += 1
            own = self._last_position
            rx_lat = f"{own.lat_deg:.7f}" if own is not None else ""
            rx_lon = f"{own.lon_deg:.7f}" if own is not None else ""
            self._log_row(
                f"{now_ms},RX,{payload.station_id},{self.station_id},"
                f"{position.lat_deg:.7f},{position.lon_deg:.7f},"
                f"{rx_lat},{rx_lon},")

    def wait_tx_done(self, timeout_s: float) -> bool:
        """Block until the GNSS stream is drained and transmitted."""
        for t in self._threads:
            if t.name in ("gnss", "tx"):
                t.join(timeout=timeout_s)
        return all(not t.is_alive() for t in self._threads
                   if t.name in ("gnss", "tx"))

    def stop(self) -> None:
        self._stop.set()
        if self.sweeper is not None:
            self.sweeper.stop()
        if self.api_server is not None:
            self.api_server.shutdown()
            self.api_server.server_close()
        self.endpoint.close()
        for t in self._threads:
            t.join(timeout=2.0)
