"""RTPS message model: parse and serialize at byte level.

Layout follows the RTPS 2.x platform-specific mapping: a 20-byte header
(``"RTPS"``, protocol version, vendor id, 12-byte GUID prefix) followed by
submessages, each introduced by a 4-byte header whose length field uses the
endianness selected by flag bit 0.

Unknown submessage kinds are carried as opaque bodies so that
``serialize_message(parse_message(b)) == b`` holds for every accepted input.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from typing import Iterator, NamedTuple

from graphguard import _kernels
from graphguard.errors import BodyTooLarge, DiscoveryError, Truncated, WireError

MAGIC = b"RTPS"
HEADER_SIZE = 20

# submessage ids
PAD = 0x01
ACKNACK = 0x06
HEARTBEAT = 0x07
GAP = 0x08
INFO_TS = 0x09
INFO_SRC = 0x0C
INFO_REPLY_IP4 = 0x0D
INFO_DST = 0x0E
INFO_REPLY = 0x0F
NACK_FRAG = 0x12
HEARTBEAT_FRAG = 0x13
DATA = 0x15
DATA_FRAG = 0x16

SUBMESSAGE_NAMES = {
    PAD: "PAD", ACKNACK: "ACKNACK", HEARTBEAT: "HEARTBEAT", GAP: "GAP",
    INFO_TS: "INFO_TS", INFO_SRC: "INFO_SRC", INFO_REPLY_IP4: "INFO_REPLY_IP4",
    INFO_DST: "INFO_DST", INFO_REPLY: "INFO_REPLY", NACK_FRAG: "NACK_FRAG",
    HEARTBEAT_FRAG: "HEARTBEAT_FRAG", DATA: "DATA", DATA_FRAG: "DATA_FRAG",
}

# submessage flags
FLAG_ENDIANNESS = 0x01
DATA_FLAG_INLINE_QOS = 0x02
DATA_FLAG_DATA = 0x04
DATA_FLAG_KEY = 0x08

# kinds whose zero length field means "empty", not "extends to the end"
_ZERO_LENGTH_IS_EMPTY = frozenset({PAD, INFO_TS})


class ProtocolVersion(NamedTuple):
    major: int
    minor: int

    def __str__(self):
        return f"{self.major}.{self.minor}"


PROTOCOL_2_2 = ProtocolVersion(2, 2)


@dataclass(frozen=True)
class GuidPrefix:
    """Twelve-octet participant identifier.

    ``host_id``, ``app_id`` and ``instance_id`` are big-endian views of
    octets 0-3, 4-7 and 8-11.
    """

    value: bytes

    def __post_init__(self):
        if not isinstance(self.value, (bytes, bytearray)) or len(self.value) != 12:
            raise ValueError("a GUID prefix is exactly 12 octets")
        object.__setattr__(self, "value", bytes(self.value))

    @classmethod
    def from_ids(cls, host_id, app_id, instance_id):
        return cls(struct.pack(">III", host_id, app_id, instance_id))

    @classmethod
    def from_hex(cls, text):
        return cls(bytes.fromhex(text.replace(" ", "").replace(":", "").replace(".", "")))

    @property
    def host_id(self):
        return int.from_bytes(self.value[0:4], "big")

    @property
    def app_id(self):
        return int.from_bytes(self.value[4:8], "big")

    @property
    def instance_id(self):
        return int.from_bytes(self.value[8:12], "big")

    def __str__(self):
        return self.value.hex()


ZERO_PREFIX = GuidPrefix(bytes(12))


@dataclass(frozen=True)
class Submessage:
    """One submessage with its raw body.

    ``to_end`` records a zero length field meaning "extends to the end of
    the message"; it is only legal on the final submessage.
    """

    submessage_id: int
    flags: int
    body: bytes = b""
    to_end: bool = False

    def __post_init__(self):
        if not 0 <= self.submessage_id <= 0xFF or not 0 <= self.flags <= 0xFF:
            raise ValueError("submessage id and flags are single octets")
        if self.to_end and self.submessage_id in _ZERO_LENGTH_IS_EMPTY:
            raise ValueError(f"{self.name} cannot extend to the end of a message")
        object.__setattr__(self, "body", bytes(self.body))

    @property
    def name(self):
        return SUBMESSAGE_NAMES.get(self.submessage_id, f"0x{self.submessage_id:02x}")

    @property
    def little_endian(self):
        return bool(self.flags & FLAG_ENDIANNESS)

    @property
    def octets_to_next_header(self):
        return 0 if self.to_end else len(self.body)

    def data(self) -> DataSubmessage:
        """Decode this submessage as DATA (raises ``WireError`` if it is not one)."""
        return parse_data(self)


@dataclass(frozen=True)
class RtpsMessage:
    version: ProtocolVersion = PROTOCOL_2_2
    vendor_id: int = 0
    guid_prefix: GuidPrefix = ZERO_PREFIX
    submessages: tuple[Submessage, ...] = ()

    def __post_init__(self):
        if not 0 <= self.vendor_id <= 0xFFFF:
            raise ValueError("vendor id is an unsigned 16-bit value")
        object.__setattr__(self, "version", ProtocolVersion(*self.version))
        object.__setattr__(self, "submessages", tuple(self.submessages))

    def data_submessages(self) -> Iterator[DataSubmessage]:
        for sm in self.submessages:
            if sm.submessage_id == DATA:
                yield parse_data(sm)


def parse_message(data) -> RtpsMessage:
    """Parse one RTPS message; raises BadMagic, Truncated or UnsupportedVersion."""
    major, minor, vendor, prefix, spans = _kernels.split_message(data)
    raw = bytes(data)
    subs = tuple(
        Submessage(sid, flags, raw[start:end], to_end)
        for sid, flags, to_end, start, end in spans
    )
    return RtpsMessage(ProtocolVersion(major, minor), vendor, GuidPrefix(prefix), subs)


def serialize_message(msg: RtpsMessage) -> bytes:
    if msg.version.major == 0:
        raise WireError("protocol major version 0 cannot be serialized")
    out = [MAGIC, bytes(msg.version), msg.vendor_id.to_bytes(2, "big"), msg.guid_prefix.value]
    last = len(msg.submessages) - 1
    for i, sm in enumerate(msg.submessages):
        if sm.to_end:
            if i != last:
                raise WireError("only the final submessage may extend to the end of the message")
            length = 0
        else:
            length = len(sm.body)
            if length > 0xFFFF:
                raise BodyTooLarge(f"{sm.name} body of {length} octets exceeds 65535")
            if length == 0 and sm.submessage_id not in _ZERO_LENGTH_IS_EMPTY and i != last:
                # would be read back as "extends to the end"
                raise WireError(f"empty {sm.name} body is only representable as the final submessage")
        byteorder = "little" if sm.flags & FLAG_ENDIANNESS else "big"
        out.append(bytes((sm.submessage_id, sm.flags)) + length.to_bytes(2, byteorder))
        out.append(sm.body)
    return b"".join(out)


# --------------------------------------------------------------------------
# DATA submessage view

@dataclass(frozen=True)
class DataSubmessage:
    """Decoded DATA submessage.

    Entity ids are 4-octet big-endian values regardless of the endianness
    flag; the sequence number and the two 16-bit fields follow the flag.
    """

    reader_id: int
    writer_id: int
    writer_sn: int
    serialized_payload: bytes | None = None
    inline_qos: bytes | None = None
    little_endian: bool = True
    key_only: bool = False
    extra_flags: int = 0
    octets_to_inline_qos: int = 16
    extra_header: bytes = field(default=b"", repr=False)

    @property
    def flags(self):
        f = FLAG_ENDIANNESS if self.little_endian else 0
        if self.inline_qos is not None:
            f |= DATA_FLAG_INLINE_QOS
        if self.serialized_payload is not None:
            f |= DATA_FLAG_KEY if self.key_only else DATA_FLAG_DATA
        return f

    def encode(self) -> bytes:
        o = "<" if self.little_endian else ">"
        high, low = divmod(self.writer_sn, 1 << 32)
        parts = [
            struct.pack(o + "HH", self.extra_flags, self.octets_to_inline_qos),
            struct.pack(">II", self.reader_id, self.writer_id),
            struct.pack(o + "iI", high, low),
            self.extra_header,
        ]
        if self.inline_qos is not None:
            parts.append(self.inline_qos)
        if self.serialized_payload is not None:
            parts.append(self.serialized_payload)
        return b"".join(parts)

    def to_submessage(self) -> Submessage:
        return Submessage(DATA, self.flags, self.encode())


def parse_data(sm: Submessage) -> DataSubmessage:
    if sm.submessage_id != DATA:
        raise WireError(f"{sm.name} is not a DATA submessage")
    body = sm.body
    little = sm.little_endian
    o = "<" if little else ">"
    if len(body) < 20:
        raise Truncated(f"DATA body of {len(body)} octets is shorter than its 20-octet fixed part")
    extra_flags, to_qos = struct.unpack_from(o + "HH", body, 0)
    reader_id, writer_id = struct.unpack_from(">II", body, 4)
    high, low = struct.unpack_from(o + "iI", body, 12)
    qos_start = 4 + to_qos
    if to_qos < 16 or qos_start > len(body):
        raise Truncated(f"octetsToInlineQos={to_qos} points outside the DATA body")
    inline_qos = None
    pos = qos_start
    if sm.flags & DATA_FLAG_INLINE_QOS:
        try:
            _, pos = _kernels.scan_parameters(body, qos_start, little)
        except DiscoveryError as exc:
            raise Truncated(f"inline QoS: {exc}") from None
        inline_qos = body[qos_start:pos]
    payload = None
    key_only = False
    if sm.flags & (DATA_FLAG_DATA | DATA_FLAG_KEY):
        payload = body[pos:]
        key_only = not sm.flags & DATA_FLAG_DATA
    return DataSubmessage(
        reader_id=reader_id,
        writer_id=writer_id,
        writer_sn=(high << 32) + low,
        serialized_payload=payload,
        inline_qos=inline_qos,
        little_endian=little,
        key_only=key_only,
        extra_flags=extra_flags,
        octets_to_inline_qos=to_qos,
        extra_header=body[20:qos_start],
    )


# --------------------------------------------------------------------------
# vendor registry

@lru_cache(maxsize=1)
def vendor_table() -> dict[int, str]:
    table = {}
    text = resources.files("graphguard").joinpath("data/vendors.txt").read_text("utf-8")
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        hex_id, _, name = line.partition(" ")
        table[int(hex_id, 16)] = name.strip()
    return table


def vendor_name(vendor_id: int) -> str:
    return vendor_table().get(vendor_id, f"Unknown (0x{vendor_id:04X})")
