import json
import random
import socket
import threading
import time

import pytest

from deskits.core import GeoPosition, haversine_m
from deskits.ldm import (
    EntryKind,
    LdmApiServer,
    LdmConfig,
    LdmEntry,
    LdmStore,
    LdmSweeper,
    handle_api_request,
    query_api_once,
)


def entry(sid: int, lat: float = 44.65, lon: float = 10.9,
          t_ms: int = 0) -> LdmEntry:
    return LdmEntry(station_id=sid, kind=EntryKind.CAM,
                    position=GeoPosition(lat, lon), speed_mps=10.0,
                    heading_deg=90.0, last_update_ms=t_ms)


class TestStore:
    def test_insert_then_update(self):
        store = LdmStore()
        assert store.upsert(entry(1)) == "inserted"
        assert len(store) == 1
        assert store.upsert(entry(1, t_ms=100)) == "updated"
        assert len(store) == 1
        assert store.get(1).last_update_ms == 100

    def test_thousand_distinct_ids(self):
        store = LdmStore()
        for sid in range(1000):
            store.upsert(entry(sid))
        assert len(store) == 1000

    def test_query_area_boundary_inclusive(self):
        store = LdmStore()
        store.upsert(entry(1, lat=44.65, lon=10.9))
        hits = store.query_area(GeoPosition(44.65, 10.9), radius_m=0.0)
        assert [e.station_id for e in hits] == [1]

    def test_query_area_excludes_beyond_radius(self):
        store = LdmStore()
        # ~100 m north of center
        store.upsert(entry(1, lat=44.65 + 100.0 / 111194.93, lon=10.9))
        assert store.query_area(GeoPosition(44.65, 10.9), 50.0) == []
        assert len(store.query_area(GeoPosition(44.65, 10.9), 150.0)) == 1

    def test_negative_radius_rejected(self):
        with pytest.raises(ValueError):
            LdmStore().query_area(GeoPosition(0, 0), -1.0)

    def test_query_area_matches_linear_scan(self):
        rng = random.Random(13)
        store = LdmStore()
        entries = []
        for sid in range(1000):
            e = entry(sid, lat=44.65 + rng.uniform(-0.01, 0.01),
                      lon=10.9 + rng.uniform(-0.01, 0.01))
            entries.append(e)
            store.upsert(e)
        for _ in range(50):
            center = GeoPosition(44.65 + rng.uniform(-0.01, 0.01),
                                 10.9 + rng.uniform(-0.01, 0.01))
            radius = rng.uniform(0, 1500)
            expected = sorted(
                (e.station_id for e in entries
                 if haversine_m(center.lat_deg, center.lon_deg,
                                e.position.lat_deg,
                                e.position.lon_deg) <= radius))
            got = [e.station_id for e in store.query_area(center, radius)]
            assert got == expected

    def test_purge_boundary(self):
        store = LdmStore()
        store.upsert(entry(1, t_ms=0))
        # aged exactly max_age: retained
        assert store.purge_expired(now_ms=5000, max_age_ms=5000) == 0
        assert len(store) == 1
        # one past: removed
        assert store.purge_expired(now_ms=5001, max_age_ms=5000) == 1
        assert len(store) == 0

    def test_purge_empty(self):
        assert LdmStore().purge_expired(0, 5000) == 0

    def test_interleaved_upserts_and_purges(self):
        rng = random.Random(19)
        store = LdmStore()
        shadow: dict[int, int] = {}
        now = 0
        max_age = 500
        for _ in range(1000):
            now += rng.randrange(0, 50)
            if rng.random() < 0.8:
                sid = rng.randrange(0, 60)
                store.upsert(entry(sid, t_ms=now))
                shadow[sid] = now
            else:
                removed = store.purge_expired(now, max_age)
                expected_removed = [s for s, t in shadow.items()
                                    if now - t > max_age]
                assert removed == len(expected_removed)
                for s in expected_removed:
                    del shadow[s]
            assert len(store) == len(shadow)
        # ids unique by construction of dict; verify freshness bound
        store.purge_expired(now, max_age)
        for e in store.all_entries():
            assert now - e.last_update_ms <= max_age


class TestConfig:
    def test_sweep_longer_than_age_rejected(self):
        with pytest.raises(ValueError):
            LdmConfig(max_age_ms=1000, sweep_period_ms=2000)

    def test_defaults(self):
        cfg = LdmConfig()
        assert cfg.max_age_ms == 5000
        assert cfg.sweep_period_ms == 1000


class TestApiHandler:
    def test_all(self):
        store = LdmStore()
        store.upsert(entry(2, t_ms=100))
        store.upsert(entry(1, t_ms=200))
        resp = handle_api_request(store, '{"op":"all"}', now_ms=300)
        assert resp["ok"] is True
        assert [o["station_id"] for o in resp["objects"]] == [1, 2]
        assert resp["objects"][0]["age_ms"] == 100
        assert resp["objects"][1]["age_ms"] == 200

    def test_id(self):
        store = LdmStore()
        store.upsert(entry(7))
        resp = handle_api_request(store, '{"op":"id","station_id":7}', 0)
        assert resp["ok"] and len(resp["objects"]) == 1
        resp = handle_api_request(store, '{"op":"id","station_id":8}', 0)
        assert resp["ok"] and resp["objects"] == []

    def test_area_matches_store_query(self):
        store = LdmStore()
        for sid in range(20):
            store.upsert(entry(sid, lat=44.65 + sid * 1e-4))
        req = json.dumps({"op": "area", "lat": 44.65, "lon": 10.9,
                          "radius_m": 500})
        resp = handle_api_request(store, req, 0)
        oracle = store.query_area(GeoPosition(44.65, 10.9), 500)
        assert [o["station_id"] for o in resp["objects"]] \
            == [e.station_id for e in oracle]

    def test_parse_error(self):
        resp = handle_api_request(LdmStore(), "not json", 0)
        assert resp == {"ok": False, "error": "parse"}

    def test_unknown_op(self):
        resp = handle_api_request(LdmStore(), '{"op":"nope"}', 0)
        assert resp == {"ok": False, "error": "unknown-op"}

    def test_missing_fields(self):
        resp = handle_api_request(LdmStore(), '{"op":"area","lat":1}', 0)
        assert resp == {"ok": False, "error": "bad-request"}
        resp = handle_api_request(LdmStore(), '{"no_op":1}', 0)
        assert resp == {"ok": False, "error": "bad-request"}


class TestApiServer:
    @pytest.fixture
    def server(self):
        store = LdmStore()
        store.upsert(entry(1, t_ms=0))
        store.upsert(entry(2, lat=44.66, t_ms=0))
        srv = LdmApiServer(store, port=0, clock_ms=lambda: 1000)
        srv.start_background()
        yield srv
        srv.shutdown()
        srv.server_close()

    def test_all_over_tcp(self, server):
        resp = query_api_once("127.0.0.1", server.port, {"op": "all"})
        assert resp["ok"] is True
        assert [o["station_id"] for o in resp["objects"]] == [1, 2]
        assert all(o["age_ms"] == 1000 for o in resp["objects"])

    def test_area_over_tcp_matches_in_process(self, server):
        resp = query_api_once("127.0.0.1", server.port,
                              {"op": "area", "lat": 44.65, "lon": 10.9,
                               "radius_m": 100})
        oracle = server.store.query_area(GeoPosition(44.65, 10.9), 100)
        assert [o["station_id"] for o in resp["objects"]] \
            == [e.station_id for e in oracle]

    def test_malformed_keeps_connection_open(self, server):
        with socket.create_connection(("127.0.0.1", server.port),
                                      timeout=5) as sock:
            fh = sock.makefile("rwb")
            fh.write(b"garbage\n")
            fh.flush()
            resp1 = json.loads(fh.readline())
            assert resp1 == {"ok": False, "error": "parse"}
            fh.write(b'{"op":"all"}\n')
            fh.flush()
            resp2 = json.loads(fh.readline())
            assert resp2["ok"] is True

    def test_responses_in_request_order(self, server):
        with socket.create_connection(("127.0.0.1", server.port),
                                      timeout=5) as sock:
            fh = sock.makefile("rwb")
            fh.write(b'{"op":"id","station_id":1}\n'
                     b'{"op":"id","station_id":2}\n'
                     b'{"op":"all"}\n')
            fh.flush()
            r1 = json.loads(fh.readline())
            r2 = json.loads(fh.readline())
            r3 = json.loads(fh.readline())
        assert [o["station_id"] for o in r1["objects"]] == [1]
        assert [o["station_id"] for o in r2["objects"]] == [2]
        assert len(r3["objects"]) == 2

    def test_concurrent_connections(self, server):
        results = []
        errors = []

        def worker():
            try:
                results.append(query_api_once("127.0.0.1", server.port,
                                              {"op": "all"}))
            except Exception as exc:  # noqa: BLE001 - collect for assert
                errors.append(exc)

        threads = [threading.Thread(target=worker) for _ in range(8)]
        for t in threads:
            t.start()
        for t in threads:
            t.join(timeout=5)
        assert not errors
        assert len(results) == 8
        assert all(r["ok"] for r in results)


class TestSweeper:
    def test_sweeper_removes_stale(self):
        store = LdmStore()
        now = {"ms": 0}
        store.upsert(entry(1, t_ms=0))
        sweeper = LdmSweeper(store, LdmConfig(max_age_ms=100,
                                              sweep_period_ms=20),
                             clock_ms=lambda: now["ms"])
        sweeper.start()
        try:
            now["ms"] = 500
            deadline = time.time() + 3.0
            while len(store) > 0 and time.time() < deadline:
                time.sleep(0.01)
            assert len(store) == 0
        finally:
            sweeper.stop()
            sweeper.join(timeout=2)
