"""Local Dynamic Map: received-object store, aging sweeper, query API.

The store keeps one entry per station id (upsert semantics) and is shared
between the receive path, a periodic sweeper and any number of API
connections, so every operation takes the store lock.

The query API is newline-delimited JSON over TCP:

    request:  {"op":"all"}
              {"op":"id","station_id":N}
              {"op":"area","lat":deg,"lon":deg,"radius_m":M}
    response: {"ok":true,"objects":[{"station_id":N,"lat":deg,"lon":deg,
               "speed_mps":S,"heading_deg":H,"age_ms":A}, ...]}
              {"ok":false,"error":"<code>"}

One response line per request line, in order. A malformed request gets an
error response and the connection stays open.
"""

from __future__ import annotations

import enum
import json
import socket
import socketserver
import threading
import time
from dataclasses import dataclass

from .core import GeoPosition, haversine_m


class EntryKind(enum.Enum):
    CAM = "CAM"
    OPAQUE = "OPAQUE"


@dataclass(frozen=True)
class LdmEntry:
    """One perceived/received object. last_update_ms is receiver clock."""

    station_id: int
    kind: EntryKind
    position: GeoPosition
    speed_mps: float
    heading_deg: float
    last_update_ms: int
    raw_generation_delta_time: int = 0


@dataclass(frozen=True)
class LdmConfig:
    max_age_ms: int = 5000
    sweep_period_ms: int = 1000
    api_listen_port: int = 0

    def __post_init__(self) -> None:
        if self.sweep_period_ms > self.max_age_ms:
            raise ValueError("sweep_period_ms must not exceed max_age_ms")
        if self.sweep_period_ms <= 0:
            raise ValueError("sweep_period_ms must be positive")


class LdmStore:
    """Thread-safe map of station_id to newest LdmEntry."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._entries: dict[int, LdmEntry] = {}

    def upsert(self, entry: LdmEntry) -> str:
        """Insert or replace the entry for its station id.

        Returns "inserted" or "updated".
        """
        with self._lock:
            existed = entry.station_id in self._entries
            self._entries[entry.station_id] = entry
            return "updated" if existed else "inserted"

    def get(self, station_id: int) -> LdmEntry | None:
        with self._lock:
            return self._entries.get(station_id)

    def all_entries(self) -> list[LdmEntry]:
        with self._lock:
            return sorted(self._entries.values(), key=lambda e: e.station_id)

    def query_area(self, center: GeoPosition, radius_m: float) -> list[LdmEntry]:
        """Entries within radius_m of center, boundary inclusive."""
        if radius_m < 0:
            raise ValueError(f"radius must be non-negative: {radius_m}")
        with self._lock:
            hits = [e for e in self._entries.values()
                    if haversine_m(center.lat_deg, center.lon_deg,
                                   e.position.lat_deg,
                                   e.position.lon_deg) <= radius_m]
        return sorted(hits, key=lambda e: e.station_id)

    def purge_expired(self, now_ms: int, max_age_ms: int) -> int:
        """Drop entries strictly older than max_age_ms; return the count.

        An entry aged exactly max_age_ms survives.
        """
        with self._lock:
            stale = [sid for sid, e in self._entries.items()
                     if now_ms - e.last_update_ms > max_age_ms]
            for sid in stale:
                del self._entries[sid]
            return len(stale)

    def __len__(self) -> int:
        with self._lock:
            return len(self._entries)


def _entry_json(e: LdmEntry, now_ms: int) -> dict:
    return {
        "station_id": e.station_id,
        "lat": e.position.lat_deg,
        "lon": e.position.lon_deg,
        "speed_mps": e.speed_mps,
        "heading_deg": e.heading_deg,
        "age_ms": now_ms - e.last_update_ms,
    }


def handle_api_request(store: LdmStore, line: str, now_ms: int) -> dict:
    """Evaluate one API request line against the store.

    Always returns a response object, never raises: protocol errors map
    to {"ok": false, "error": code}.
    """
    try:
        req = json.loads(line)
    except json.JSONDecodeError:
        return {"ok": False, "error": "parse"}
    if not isinstance(req, dict) or "op" not in req:
        return {"ok": False, "error": "bad-request"}

    op = req["op"]
    try:
        if op == "all":
            entries = store.all_entries()
        elif op == "id":
            entry = store.get(int(req["station_id"]))
            entries = [entry] if entry is not None else []
        elif op == "area":
            center = GeoPosition(float(req["lat"]), float(req["lon"]))
            entries = store.query_area(center, float(req["radius_m"]))
        else:
            return {"ok": False, "error": "unknown-op"}
    except (KeyError, TypeError, ValueError):
        return {"ok": False, "error": "bad-request"}

    return {"ok": True, "objects": [_entry_json(e, now_ms) for e in entries]}


class _ApiHandler(socketserver.StreamRequestHandler):
    def handle(self) -> None:
        server: LdmApiServer = self.server  # type: ignore[assignment]
        while True:
            raw = self.rfile.readline()
            if not raw:
                return
            line = raw.decode("utf-8", errors="replace").strip()
            if not line:
                continue
            resp = handle_api_request(server.store, line, server.now_ms())
            self.wfile.write((json.dumps(resp) + "\n").encode("utf-8"))
            self.wfile.flush()


class LdmApiServer(socketserver.ThreadingTCPServer):
    """JSON-over-TCP query endpoint for one LdmStore.

    Pass port 0 to bind an ephemeral port; read it back from
    server_address after construction.
    """

    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, store: LdmStore, port: int,
                 host: str = "127.0.0.1",
                 clock_ms=None) -> None:
        self.store = store
        self.now_ms = clock_ms if clock_ms is not None \
            else (lambda: int(time.time() * 1000))
        super().__init__((host, port), _ApiHandler)

    @property
    def port(self) -> int:
        return self.server_address[1]

    def start_background(self) -> threading.Thread:
        t = threading.Thread(target=self.serve_forever,
                             name="ldm-api", daemon=True)
        t.start()
        return t


class LdmSweeper(threading.Thread):
    """Periodically purges expired entries until stop() is called."""

    def __init__(self, store: LdmStore, cfg: LdmConfig, clock_ms=None) -> None:
        super().__init__(name="ldm-sweeper", daemon=True)
        self.store = store
        self.cfg = cfg
        self.now_ms = clock_ms if clock_ms is not None \
            else (lambda: int(time.time() * 1000))
        self._stop_event = threading.Event()
        self.removed_total = 0

    def run(self) -> None:
        period_s = self.cfg.sweep_period_ms / 1000.0
        while not self._stop_event.wait(period_s):
            self.removed_total += self.store.purge_expired(
                self.now_ms(), self.cfg.max_age_ms)

    def stop(self) -> None:
        self._stop_event.set()


def query_api_once(host: str, port: int, request: dict,
                   timeout_s: float = 5.0) -> dict:
    """Client helper: send one request line, read one response line."""
    with socket.create_connection((host, port), timeout=timeout_s) as sock:
        sock.sendall((json.dumps(request) + "\n").encode("utf-8"))
        buf = b""
        while not buf.endswith(b"\n"):
            chunk = sock.recv(4096)
            if not chunk:
                break
            buf += chunk
    return json.loads(buf.decode("utf-8"))
