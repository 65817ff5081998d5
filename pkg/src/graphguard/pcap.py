"""Capture-file access: classic pcap / pcapng reading and classic pcap writing.

Only UDP datagrams are surfaced; everything else (TCP, ARP, ...) is skipped
silently. Records that cannot be decoded are skipped and reported as
``CorruptRecord`` entries in the reader's ``log``.
"""

from __future__ import annotations

import ipaddress
import logging
import socket
import struct
from typing import BinaryIO, Iterable, Iterator, NamedTuple

from graphguard.errors import CorruptRecord, NotPcap

log = logging.getLogger(__name__)

LINKTYPE_NULL = 0
LINKTYPE_ETHERNET = 1
LINKTYPE_RAW = 101
LINKTYPE_LOOP = 108
LINKTYPE_LINUX_SLL = 113
LINKTYPE_IPV4 = 228
LINKTYPE_IPV6 = 229
LINKTYPE_LINUX_SLL2 = 276

_PCAP_MAGICS = {
    b"\xd4\xc3\xb2\xa1": ("<", 1e-6),
    b"\xa1\xb2\xc3\xd4": (">", 1e-6),
    b"\x4d\x3c\xb2\xa1": ("<", 1e-9),
    b"\xa1\xb2\x3c\x4d": (">", 1e-9),
}
_PCAPNG_SHB = b"\x0a\x0d\x0d\x0a"

# a record bigger than this means the length field itself is garbage
_MAX_RECORD = 1 << 24

ETHERTYPE_IPV4 = 0x0800
ETHERTYPE_IPV6 = 0x86DD
_VLAN_TAGS = (0x8100, 0x88A8, 0x9100)
IPPROTO_UDP = 17
_IPV6_EXT_HEADERS = (0, 43, 60)
_IPV6_FRAGMENT = 44


class UdpDatagram(NamedTuple):
    timestamp: float
    source: str
    destination: str
    payload: bytes


class _Skip(Exception):
    """Frame is well formed but not a complete UDP datagram."""


def _endpoint(addr: bytes, port: int) -> str:
    ip = ipaddress.ip_address(addr)
    return f"[{ip}]:{port}" if ip.version == 6 else f"{ip}:{port}"


def _udp(ip_payload: bytes, src: bytes, dst: bytes):
    if len(ip_payload) < 8:
        raise ValueError("UDP header truncated")
    sport, dport, length = struct.unpack_from(">HHH", ip_payload, 0)
    if length < 8:
        raise ValueError(f"UDP length field {length} < 8")
    if length > len(ip_payload):
        raise ValueError(f"UDP length {length} exceeds captured {len(ip_payload)} octets")
    return _endpoint(src, sport), _endpoint(dst, dport), ip_payload[8:length]


def _ipv4(packet: bytes):
    if len(packet) < 20:
        raise ValueError("IPv4 header truncated")
    ihl = (packet[0] & 0x0F) * 4
    if packet[0] >> 4 != 4 or ihl < 20 or len(packet) < ihl:
        raise ValueError("malformed IPv4 header")
    total = struct.unpack_from(">H", packet, 2)[0]
    frag = struct.unpack_from(">H", packet, 6)[0]
    proto = packet[9]
    if proto != IPPROTO_UDP:
        raise _Skip
    if frag & 0x3FFF:
        raise ValueError("fragmented IPv4 datagram (reassembly unsupported)")
    end = min(total, len(packet)) if total >= ihl else len(packet)
    return _udp(packet[ihl:end], packet[12:16], packet[16:20])


def _ipv6(packet: bytes):
    if len(packet) < 40:
        raise ValueError("IPv6 header truncated")
    if packet[0] >> 4 != 6:
        raise ValueError("malformed IPv6 header")
    payload_len = struct.unpack_from(">H", packet, 4)[0]
    nxt = packet[6]
    body = packet[40:40 + payload_len]
    while nxt in _IPV6_EXT_HEADERS:
        if len(body) < 8:
            raise ValueError("IPv6 extension header truncated")
        nxt, hdr_len = body[0], (body[1] + 1) * 8
        body = body[hdr_len:]
    if nxt == _IPV6_FRAGMENT:
        raise ValueError("fragmented IPv6 datagram (reassembly unsupported)")
    if nxt != IPPROTO_UDP:
        raise _Skip
    return _udp(body, packet[8:24], packet[24:40])


def _network(ethertype: int, packet: bytes):
    if ethertype == ETHERTYPE_IPV4:
        return _ipv4(packet)
    if ethertype == ETHERTYPE_IPV6:
        return _ipv6(packet)
    raise _Skip


def decode_frame(linktype: int, frame: bytes):
    """Return ``(source, destination, payload)`` for a UDP frame.

    Raises ``_Skip`` for non-UDP traffic and ``ValueError`` for damaged frames.
    """
    if linktype == LINKTYPE_ETHERNET:
        if len(frame) < 14:
            raise ValueError("Ethernet header truncated")
        off = 12
        ethertype = struct.unpack_from(">H", frame, off)[0]
        while ethertype in _VLAN_TAGS:
            off += 4
            if len(frame) < off + 2:
                raise ValueError("VLAN tag truncated")
            ethertype = struct.unpack_from(">H", frame, off)[0]
        return _network(ethertype, frame[off + 2:])
    if linktype == LINKTYPE_LINUX_SLL:
        if len(frame) < 16:
            raise ValueError("SLL header truncated")
        return _network(struct.unpack_from(">H", frame, 14)[0], frame[16:])
    if linktype == LINKTYPE_LINUX_SLL2:
        if len(frame) < 20:
            raise ValueError("SLL2 header truncated")
        return _network(struct.unpack_from(">H", frame, 0)[0], frame[20:])
    if linktype in (LINKTYPE_RAW, LINKTYPE_IPV4, LINKTYPE_IPV6):
        if not frame:
            raise ValueError("empty frame")
        return _ipv4(frame) if frame[0] >> 4 == 4 else _ipv6(frame)
    if linktype in (LINKTYPE_NULL, LINKTYPE_LOOP):
        if len(frame) < 4:
            raise ValueError("loopback header truncated")
        family = struct.unpack_from("<I", frame, 0)[0]
        if family > 0xFFFF:
            family = struct.unpack_from(">I", frame, 0)[0]
        if family == 2:
            return _ipv4(frame[4:])
        if family in (10, 24, 28, 30):
            return _ipv6(frame[4:])
        raise _Skip
    raise _Skip


class PcapReader:
    """Iterate the UDP datagrams of a pcap or pcapng file in capture order.

    Damaged records are skipped; each one is appended to ``self.log`` as a
    ``CorruptRecord``. A damaged record header ends iteration, since the
    stream cannot be resynchronised after it.
    """

    def __init__(self, path):
        self.path = path
        self.log: list[CorruptRecord] = []
        self.frames = 0
        try:
            with open(path, "rb") as fh:
                head = fh.read(4)
        except OSError as exc:
            raise NotPcap(f"{path}: {exc.strerror or exc}") from exc
        if head in _PCAP_MAGICS:
            self.format = "pcap"
        elif head == _PCAPNG_SHB:
            self.format = "pcapng"
        else:
            raise NotPcap(f"{path}: not a pcap or pcapng capture (magic {head!r})")

    def __iter__(self) -> Iterator[UdpDatagram]:
        with open(self.path, "rb") as fh:
            frames = self._pcap(fh) if self.format == "pcap" else self._pcapng(fh)
            for index, offset, ts, linktype, frame in frames:
                self.frames += 1
                try:
                    src, dst, payload = decode_frame(linktype, frame)
                except _Skip:
                    continue
                except ValueError as exc:
                    self._corrupt(index, offset, str(exc))
                    continue
                yield UdpDatagram(ts, src, dst, payload)

    def _corrupt(self, index, offset, reason):
        entry = CorruptRecord(index, offset, reason)
        log.debug("%s: %s", self.path, entry)
        self.log.append(entry)

    def _pcap(self, fh: BinaryIO):
        header = fh.read(24)
        if len(header) < 24:
            raise NotPcap(f"{self.path}: truncated global header")
        order, resolution = _PCAP_MAGICS[header[:4]]
        linktype = struct.unpack_from(order + "I", header, 20)[0] & 0x0FFFFFFF
        index = 0
        while True:
            offset = fh.tell()
            rec = fh.read(16)
            if not rec:
                return
            if len(rec) < 16:
                self._corrupt(index, offset, "truncated record header")
                return
            sec, frac, incl, _orig = struct.unpack(order + "IIII", rec)
            if incl > _MAX_RECORD:
                self._corrupt(index, offset, f"implausible record length {incl}")
                return
            frame = fh.read(incl)
            if len(frame) < incl:
                self._corrupt(index, offset, f"record data truncated ({len(frame)} of {incl} octets)")
                return
            yield index, offset, sec + frac * resolution, linktype, frame
            index += 1

    def _pcapng(self, fh: BinaryIO):
        order = "<"
        interfaces: list[tuple[int, float]] = []
        index = 0
        while True:
            offset = fh.tell()
            head = fh.read(8)
            if not head:
                return
            if len(head) < 8:
                self._corrupt(index, offset, "truncated block header")
                return
            if head[:4] == _PCAPNG_SHB:
                bom = fh.read(4)
                if bom == b"\x4d\x3c\x2b\x1a":
                    order = "<"
                elif bom == b"\x1a\x2b\x3c\x4d":
                    order = ">"
                else:
                    self._corrupt(index, offset, "bad byte-order magic")
                    return
                interfaces = []
                total = struct.unpack_from(order + "I", head, 4)[0]
                body_len = total - 12
                rest_len = total - 16
                if total < 28 or total > _MAX_RECORD or total % 4:
                    self._corrupt(index, offset, f"bad section header length {total}")
                    return
                body = bom + fh.read(rest_len)
            else:
                btype, total = struct.unpack(order + "II", head)
                if total < 12 or total > _MAX_RECORD or total % 4:
                    self._corrupt(index, offset, f"bad block length {total}")
                    return
                body_len = total - 12
                body = fh.read(body_len)
            trailer = fh.read(4)
            if len(body) < body_len or len(trailer) < 4:
                self._corrupt(index, offset, "block truncated")
                return
            if head[:4] == _PCAPNG_SHB:
                continue
            if btype == 0x00000001:
                if len(body) < 8:
                    self._corrupt(index, offset, "interface block truncated")
                    return
                linktype = struct.unpack_from(order + "H", body, 0)[0]
                interfaces.append((linktype, self._tsresol(body[8:], order)))
            elif btype == 0x00000006:
                if len(body) < 20:
                    self._corrupt(index, offset, "packet block truncated")
                    index += 1
                    continue
                iface, high, low, cap, _orig = struct.unpack_from(order + "IIIII", body, 0)
                if iface >= len(interfaces) or cap > len(body) - 20:
                    self._corrupt(index, offset, "packet block references unknown interface or overruns")
                    index += 1
                    continue
                linktype, resolution = interfaces[iface]
                yield index, offset, ((high << 32) | low) * resolution, linktype, body[20:20 + cap]
                index += 1
            elif btype == 0x00000003:
                if not interfaces or len(body) < 4:
                    self._corrupt(index, offset, "simple packet block without interface")
                    index += 1
                    continue
                orig = struct.unpack_from(order + "I", body, 0)[0]
                linktype, _ = interfaces[0]
                yield index, offset, 0.0, linktype, body[4:4 + orig]
                index += 1

    @staticmethod
    def _tsresol(options: bytes, order: str) -> float:
        pos = 0
        while pos + 4 <= len(options):
            code, length = struct.unpack_from(order + "HH", options, pos)
            if code == 0:
                break
            if code == 9 and length >= 1:
                v = options[pos + 4]
                return 2.0 ** -(v & 0x7F) if v & 0x80 else 10.0 ** -v
            pos += 4 + ((length + 3) & ~3)
        return 1e-6


def read_pcap(path) -> PcapReader:
    """Open a capture; raises ``NotPcap`` immediately if it is not one.

    The returned reader is iterable once per ``iter()`` call and exposes the
    skip log as ``.log``.
    """
    return PcapReader(path)


# --------------------------------------------------------------------------
# writing

def _checksum(data: bytes) -> int:
    if len(data) % 2:
        data += b"\0"
    total = sum(struct.unpack(f">{len(data) // 2}H", data))
    while total >> 16:
        total = (total & 0xFFFF) + (total >> 16)
    return ~total & 0xFFFF


def udp_frame(src: str, sport: int, dst: str, dport: int, payload: bytes,
              src_mac: bytes = b"\x02\x00\x00\x00\x00\x01") -> bytes:
    """Build an Ethernet/IPv4/UDP frame around ``payload``."""
    s, d = socket.inet_aton(src), socket.inet_aton(dst)
    udp_len = 8 + len(payload)
    if udp_len > 0xFFFF - 20:
        raise ValueError("payload too large for a single UDP datagram")
    pseudo = s + d + struct.pack(">BBH", 0, IPPROTO_UDP, udp_len)
    udp = struct.pack(">HHHH", sport, dport, udp_len, 0) + payload
    csum = _checksum(pseudo + udp) or 0xFFFF
    udp = udp[:6] + struct.pack(">H", csum) + udp[8:]
    ip = struct.pack(">BBHHHBBH4s4s", 0x45, 0, 20 + udp_len, 0, 0x4000, 64, IPPROTO_UDP, 0, s, d)
    ip = ip[:10] + struct.pack(">H", _checksum(ip)) + ip[12:]
    first = d[0]
    if 224 <= first <= 239:
        dst_mac = bytes((0x01, 0x00, 0x5E, d[1] & 0x7F, d[2], d[3]))
    else:
        dst_mac = b"\x02\x00\x00\x00\x00\x02"
    return dst_mac + src_mac + struct.pack(">H", ETHERTYPE_IPV4) + ip + udp


def write_pcap(path, frames: Iterable[tuple[float, bytes]], linktype: int = LINKTYPE_ETHERNET,
               snaplen: int = 65535) -> int:
    """Write ``(timestamp, frame)`` pairs as a classic microsecond pcap. Returns the record count."""
    count = 0
    with open(path, "wb") as fh:
        fh.write(struct.pack("<IHHiIII", 0xA1B2C3D4, 2, 4, 0, 0, snaplen, linktype))
        for ts, frame in frames:
            usec_total = round(ts * 1_000_000)
            sec, usec = divmod(usec_total, 1_000_000)
            cap = frame[:snaplen]
            fh.write(struct.pack("<IIII", sec, usec, len(cap), len(frame)))
            fh.write(cap)
            count += 1
    return count
