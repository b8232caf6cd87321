import io
import socket
import time

import pytest

from conftest import straight_trace
from deskits.cam_service import CamTriggerConfig
from deskits.codec import CamPayload, Frame, encode_cam, encode_frame
from deskits.gnss import FixUpdate
from deskits.ldm import query_api_once
from deskits.station import SimBus, Station, UdpEndpoint, parse_transport

BASE_LAT, BASE_LON = 44.6500000, 10.9000000


def fixes_from(states):
    return [FixUpdate(position=s.position, fix_time_ms=s.timestamp_ms,
                      valid=True, speed_mps=s.speed_mps,
                      heading_deg=s.heading_deg)
            for s in states]


def wait_until(cond, timeout_s=5.0):
    deadline = time.monotonic() + timeout_s
    while time.monotonic() < deadline:
        if cond():
            return True
        time.sleep(0.02)
    return cond()


class TestSimBus:
    def test_fanout_excludes_sender(self):
        bus = SimBus()
        a = bus.attach(1)
        b = bus.attach(2)
        c = bus.attach(3)
        a.send(b"hello")
        assert b.recv(1.0) == b"hello"
        assert c.recv(1.0) == b"hello"
        assert a.recv(0.05) is None

    def test_duplicate_attach_rejected(self):
        bus = SimBus()
        bus.attach(1)
        with pytest.raises(ValueError):
            bus.attach(1)

    def test_detach_stops_delivery(self):
        bus = SimBus()
        a = bus.attach(1)
        b = bus.attach(2)
        b.close()
        a.send(b"x")
        assert b.recv(0.05) is None

    def test_recv_timeout_none(self):
        bus = SimBus()
        a = bus.attach(1)
        assert a.recv(0.05) is None


class TestParseTransport:
    def test_sim_shares_bus(self):
        bus = SimBus()
        factory = parse_transport("sim", bus=bus)
        a = factory(1)
        b = factory(2)
        a.send(b"z")
        assert b.recv(1.0) == b"z"

    def test_udp_spec_parsed(self):
        factory = parse_transport("udp:239.23.5.9:34567", bus=None)
        assert callable(factory)

    def test_bad_specs(self):
        with pytest.raises(ValueError):
            parse_transport("udp:missing-port")
        with pytest.raises(ValueError):
            parse_transport("carrier-pigeon")


class TestStationPair:
    def run_pair(self, n_seconds=2.0):
        bus = SimBus()
        log_a, log_b = io.StringIO(), io.StringIO()
        a = Station(1, bus.attach(1),
                    trigger_cfg=CamTriggerConfig(forced_period_ms=100),
                    log_file=log_a)
        b = Station(2, bus.attach(2),
                    trigger_cfg=CamTriggerConfig(forced_period_ms=100),
                    log_file=log_b)
        states = straight_trace(BASE_LAT, BASE_LON, 0.0, 10.0, n_seconds)
        try:
            b.start([])
            a.start(fixes_from(states))
            assert a.wait_tx_done(10.0)
            assert wait_until(lambda: b.rx_count >= a.tx_count)
        finally:
            a.stop()
            b.stop()
        return a, b, states, log_a, log_b

    def test_all_cams_cross_the_bus(self):
        a, b, states, _, _ = self.run_pair()
        assert a.tx_count == len(states) == 20
        assert b.rx_count == a.tx_count

    def test_receiver_ldm_tracks_sender(self):
        a, b, states, _, _ = self.run_pair()
        entry = b.ldm.get(1)
        assert entry is not None
        last = states[-1]
        # CAM lat/lon are quantized to 1e-7 degrees
        assert entry.position.lat_deg == pytest.approx(
            last.position.lat_deg, abs=1e-6)
        assert entry.position.lon_deg == pytest.approx(
            last.position.lon_deg, abs=1e-6)
        assert entry.speed_mps == pytest.approx(10.0, abs=0.01)
        assert entry.heading_deg == pytest.approx(0.0, abs=0.1)
        assert len(b.ldm) == 1
        assert a.ldm.get(2) is None  # b never transmitted

    def test_log_format(self):
        a, b, states, log_a, log_b = self.run_pair()
        lines_a = log_a.getvalue().splitlines()
        assert lines_a[0].startswith("time_ms,event,")
        tx_rows = [ln for ln in lines_a[1:] if ln.split(",")[1] == "TX"]
        assert len(tx_rows) == a.tx_count
        lines_b = log_b.getvalue().splitlines()
        rx_rows = [ln for ln in lines_b[1:] if ln.split(",")[1] == "RX"]
        assert len(rx_rows) == b.rx_count
        for row in rx_rows:
            parts = row.split(",")
            assert parts[2] == "1"      # sender
            assert parts[3] == "2"      # receiver
            assert parts[8] == ""       # no channel model live

    def test_invalid_fixes_skipped(self):
        bus = SimBus()
        st = Station(1, bus.attach(1),
                     trigger_cfg=CamTriggerConfig(forced_period_ms=100),
                     log_file=io.StringIO())
        states = straight_trace(BASE_LAT, BASE_LON, 0.0, 10.0, 1.0)
        fixes = fixes_from(states)
        # void every other fix
        fixes = [FixUpdate(position=f.position, fix_time_ms=f.fix_time_ms,
                           valid=(i % 2 == 0), speed_mps=f.speed_mps,
                           heading_deg=f.heading_deg)
                 for i, f in enumerate(fixes)]
        try:
            st.start(fixes)
            assert st.wait_tx_done(10.0)
        finally:
            st.stop()
        # valid fixes land on a 200 ms grid, forced period is 100 ms,
        # so every remaining fix still transmits
        assert st.tx_count == 5

    def test_garbage_and_foreign_frames_ignored(self):
        bus = SimBus()
        raw = bus.attach(99)
        st = Station(2, bus.attach(2), log_file=io.StringIO())
        try:
            st.start([])
            raw.send(b"")
            raw.send(b"junk")
            raw.send(b"\x00" * 64)
            # well-formed frame on a non-CAM port
            cam = encode_cam(CamPayload(station_id=5))
            frame = Frame(source_station_id=5, source_lat_tenth_udeg=0,
                          source_lon_tenth_udeg=0, timestamp_ms=0,
                          payload=cam, btp_dest_port=2009)
            raw.send(encode_frame(frame))
            time.sleep(0.3)
            assert st.rx_count == 0
            assert len(st.ldm) == 0
            # now a proper CAM frame gets through
            good = Frame(source_station_id=5,
                         source_lat_tenth_udeg=446500000,
                         source_lon_tenth_udeg=109000000,
                         timestamp_ms=1000, payload=cam)
            raw.send(encode_frame(good))
            assert wait_until(lambda: st.rx_count == 1)
            assert st.ldm.get(5) is not None
        finally:
            st.stop()

    def test_ldm_api_live(self):
        bus = SimBus()
        raw = bus.attach(99)
        st = Station(2, bus.attach(2), log_file=io.StringIO())
        try:
            st.start([], api_port=0)
            port = st.api_server.port
            cam = encode_cam(CamPayload(
                station_id=5, latitude_tenth_udeg=446500000,
                longitude_tenth_udeg=109000000, speed_cmps=500))
            raw.send(encode_frame(Frame(
                source_station_id=5, source_lat_tenth_udeg=446500000,
                source_lon_tenth_udeg=109000000, timestamp_ms=0,
                payload=cam)))
            assert wait_until(lambda: st.rx_count == 1)
            reply = query_api_once("127.0.0.1", port, {"op": "all"})
            assert reply["ok"]
            assert len(reply["objects"]) == 1
            got = reply["objects"][0]
            assert got["station_id"] == 5
            assert got["lat"] == pytest.approx(44.65)
            assert got["speed_mps"] == pytest.approx(5.0)
        finally:
            st.stop()


class TestUdpEndpoint:
    def test_loopback_roundtrip(self):
        try:
            a = UdpEndpoint("239.23.5.9", 38473)
        except OSError as exc:
            pytest.skip(f"multicast unavailable: {exc}")
        try:
            a.send(b"ping")
            got = a.recv(1.0)
            if got is None:
                pytest.skip("multicast loopback not delivered")
            assert got == b"ping"
        finally:
            a.close()

    def test_two_endpoints_same_group(self):
        try:
            a = UdpEndpoint("239.23.5.10", 38474)
            b = UdpEndpoint("239.23.5.10", 38474)
        except OSError as exc:
            pytest.skip(f"multicast unavailable: {exc}")
        try:
            a.send(b"hello")
            got = b.recv(1.0)
            if got is None:
                pytest.skip("multicast loopback not delivered")
            assert got == b"hello"
        finally:
            a.close()
            b.close()
