"""Binary wire format for CAMs and the broadcast frame that carries them.

Both layouts are fixed-size big-endian structs rather than ASN.1 UPER.
Interoperability with commercial stations is a non-goal here; a byte-exact,
deterministic encoding is what the tests and logs need.

CAM payload, 25 bytes big-endian:

    offset  size  field
    0       1     protocol_version        (fixed 2)
    1       1     message_id              (fixed 2 = CAM)
    2       4     station_id              unsigned
    6       2     generation_delta_time   unsigned ms, epoch_ms mod 65536
    8       4     latitude                signed, 0.1 micro-degree units
    12      4     longitude               signed, 0.1 micro-degree units
    16      4     altitude                signed, centimetres
    20      2     speed                   unsigned, 0.01 m/s units
    22      2     heading                 unsigned, 0.1 degree units, 0..3599
    24      1     station_type            unsigned

Frame header, 23 bytes big-endian, followed by the payload:

    offset  size  field
    0       2     magic                   fixed 0x4753
    2       1     frame_type              1 = single-hop broadcast
    3       4     source_station_id       unsigned
    7       4     source_lat              signed, 0.1 micro-degree units
    11      4     source_lon              signed, 0.1 micro-degree units
    15      4     timestamp_ms            unsigned, low 32 bits of epoch ms
    19      2     btp_dest_port           unsigned (2001 for CAM)
    21      2     payload_len             unsigned
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

FRAME_MAGIC = 0x4753
FRAME_TYPE_SHB = 1
CAM_BTP_PORT = 2001
CAM_PROTOCOL_VERSION = 2
CAM_MESSAGE_ID = 2

_CAM_STRUCT = struct.Struct(">BBIHiiiHHB")
_FRAME_STRUCT = struct.Struct(">HBIiiIHH")

CAM_SIZE = _CAM_STRUCT.size
FRAME_HEADER_SIZE = _FRAME_STRUCT.size

_U16 = (0, 0xFFFF)
_U32 = (0, 0xFFFFFFFF)
_I32 = (-(2 ** 31), 2 ** 31 - 1)


class CodecError(ValueError):
    """Base class for encode/decode failures."""


class TruncatedMessage(CodecError):
    """Input buffer shorter than the declared layout."""


class WrongMessageType(CodecError):
    """message_id field does not identify a CAM."""


class BadMagic(CodecError):
    """Frame does not start with the expected magic constant."""


def _check_range(name: str, value: int, lo: int, hi: int) -> None:
    if not isinstance(value, int):
        raise CodecError(f"{name} must be an integer, got {type(value).__name__}")
    if not lo <= value <= hi:
        raise CodecError(f"{name} out of range [{lo}, {hi}]: {value}")


@dataclass(frozen=True)
class CamPayload:
    """One CAM in wire units. Defaults give the all-zero payload."""

    station_id: int = 0
    generation_delta_time: int = 0
    latitude_tenth_udeg: int = 0
    longitude_tenth_udeg: int = 0
    altitude_cm: int = 0
    speed_cmps: int = 0
    heading_tenth_deg: int = 0
    station_type: int = 0
    protocol_version: int = CAM_PROTOCOL_VERSION
    message_id: int = CAM_MESSAGE_ID

    def __post_init__(self) -> None:
        _check_range("protocol_version", self.protocol_version, 0, 0xFF)
        if self.message_id != CAM_MESSAGE_ID:
            raise WrongMessageType(f"message_id must be {CAM_MESSAGE_ID}: "
                                   f"{self.message_id}")
        _check_range("station_id", self.station_id, *_U32)
        _check_range("generation_delta_time", self.generation_delta_time, *_U16)
        _check_range("latitude_tenth_udeg", self.latitude_tenth_udeg,
                     -900_000_000, 900_000_000)
        _check_range("longitude_tenth_udeg", self.longitude_tenth_udeg,
                     -1_800_000_000, 1_800_000_000)
        _check_range("altitude_cm", self.altitude_cm, *_I32)
        _check_range("speed_cmps", self.speed_cmps, *_U16)
        _check_range("heading_tenth_deg", self.heading_tenth_deg, 0, 3599)
        _check_range("station_type", self.station_type, 0, 0xFF)


@dataclass(frozen=True)
class Frame:
    """Single-hop broadcast frame wrapping an opaque payload."""

    source_station_id: int
    source_lat_tenth_udeg: int
    source_lon_tenth_udeg: int
    timestamp_ms: int
    payload: bytes
    btp_dest_port: int = CAM_BTP_PORT
    frame_type: int = FRAME_TYPE_SHB
    magic: int = FRAME_MAGIC

    def __post_init__(self) -> None:
        _check_range("magic", self.magic, *_U16)
        _check_range("frame_type", self.frame_type, 0, 0xFF)
        _check_range("source_station_id", self.source_station_id, *_U32)
        _check_range("source_lat_tenth_udeg", self.source_lat_tenth_udeg, *_I32)
        _check_range("source_lon_tenth_udeg", self.source_lon_tenth_udeg, *_I32)
        _check_range("timestamp_ms", self.timestamp_ms, *_U32)
        _check_range("btp_dest_port", self.btp_dest_port, *_U16)
        if not isinstance(self.payload, (bytes, bytearray)):
            raise CodecError("payload must be bytes")
        if len(self.payload) > 0xFFFF:
            raise CodecError(f"payload too long: {len(self.payload)}")


def encode_cam(p: CamPayload) -> bytes:
    """Serialize a CamPayload to its fixed 25-byte layout."""
    return _CAM_STRUCT.pack(
        p.protocol_version, p.message_id, p.station_id,
        p.generation_delta_time, p.latitude_tenth_udeg,
        p.longitude_tenth_udeg, p.altitude_cm, p.speed_cmps,
        p.heading_tenth_deg, p.station_type)


def decode_cam(b: bytes) -> CamPayload:
    """Parse a 25-byte CAM. Exact inverse of encode_cam on valid input.

    Raises TruncatedMessage on wrong length, WrongMessageType if the
    message_id byte is not a CAM, CodecError on field range violations.
    """
    if len(b) != CAM_SIZE:
        raise TruncatedMessage(f"CAM must be {CAM_SIZE} bytes, got {len(b)}")
    (version, message_id, station_id, gen_delta, lat, lon, alt,
     speed, heading, station_type) = _CAM_STRUCT.unpack(b)
    if message_id != CAM_MESSAGE_ID:
        raise WrongMessageType(f"not a CAM: message_id={message_id}")
    return CamPayload(
        protocol_version=version, message_id=message_id,
        station_id=station_id, generation_delta_time=gen_delta,
        latitude_tenth_udeg=lat, longitude_tenth_udeg=lon,
        altitude_cm=alt, speed_cmps=speed, heading_tenth_deg=heading,
        station_type=station_type)


def encode_frame(f: Frame) -> bytes:
    """Serialize header + payload."""
    header = _FRAME_STRUCT.pack(
        f.magic, f.frame_type, f.source_station_id,
        f.source_lat_tenth_udeg, f.source_lon_tenth_udeg,
        f.timestamp_ms, f.btp_dest_port, len(f.payload))
    return header + bytes(f.payload)


def decode_frame(b: bytes) -> Frame:
    """Parse a frame, validating magic and the declared payload length.

    Never reads past the buffer: the header is checked for size first and
    payload_len is validated against the remaining bytes.
    """
    if len(b) < FRAME_HEADER_SIZE:
        raise TruncatedMessage(
            f"frame header needs {FRAME_HEADER_SIZE} bytes, got {len(b)}")
    (magic, frame_type, source_id, lat, lon, ts,
     port, payload_len) = _FRAME_STRUCT.unpack_from(b, 0)
    if magic != FRAME_MAGIC:
        raise BadMagic(f"bad magic 0x{magic:04X}")
    if len(b) - FRAME_HEADER_SIZE < payload_len:
        raise TruncatedMessage(
            f"payload_len={payload_len} but only "
            f"{len(b) - FRAME_HEADER_SIZE} bytes follow the header")
    if len(b) - FRAME_HEADER_SIZE > payload_len:
        raise CodecError(
            f"payload_len={payload_len} mismatches "
            f"{len(b) - FRAME_HEADER_SIZE} trailing bytes")
    payload = b[FRAME_HEADER_SIZE:FRAME_HEADER_SIZE + payload_len]
    return Frame(
        magic=magic, frame_type=frame_type, source_station_id=source_id,
        source_lat_tenth_udeg=lat, source_lon_tenth_udeg=lon,
        timestamp_ms=ts, btp_dest_port=port, payload=payload)
