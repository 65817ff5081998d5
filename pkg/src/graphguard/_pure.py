"""Pure-Python byte-scanning kernels.

Mirrors ``_speedups.pyx`` function for function; used when the compiled
extension is unavailable or ``GRAPHGUARD_PURE_PYTHON`` is set.
"""

from graphguard.errors import BadMagic, LengthOverrun, Truncated, UnsupportedVersion, UnterminatedList

HEADER_SIZE = 20
SUBMESSAGE_HEADER_SIZE = 4
PAD = 0x01
INFO_TS = 0x09
PID_SENTINEL = 0x0001


def split_message(data):
    """Validate the RTPS header and locate every submessage body.

    Returns ``(major, minor, vendor_id, guid_prefix_bytes, spans)`` where each
    span is ``(submessage_id, flags, to_end, body_start, body_end)``.
    """
    data = bytes(data)
    n = len(data)
    if data[:4] != b"RTPS"[:min(n, 4)]:
        raise BadMagic(f"bad magic {data[:4]!r}")
    if n < HEADER_SIZE:
        raise Truncated(f"message of {n} bytes is shorter than the 20-byte header")
    major = data[4]
    minor = data[5]
    if major == 0:
        raise UnsupportedVersion(f"protocol version {major}.{minor}")
    vendor = (data[6] << 8) | data[7]
    prefix = data[8:20]

    spans = []
    pos = HEADER_SIZE
    while pos < n:
        if n - pos < SUBMESSAGE_HEADER_SIZE:
            raise Truncated(f"{n - pos} stray bytes at offset {pos}")
        sid = data[pos]
        flags = data[pos + 1]
        if flags & 1:
            length = data[pos + 2] | (data[pos + 3] << 8)
        else:
            length = (data[pos + 2] << 8) | data[pos + 3]
        start = pos + SUBMESSAGE_HEADER_SIZE
        if length == 0 and sid != PAD and sid != INFO_TS:
            spans.append((sid, flags, True, start, n))
            break
        end = start + length
        if end > n:
            raise Truncated(
                f"submessage 0x{sid:02x} at offset {pos} declares {length} octets, {n - start} available")
        spans.append((sid, flags, False, start, end))
        pos = end
    return major, minor, vendor, prefix, spans


def scan_parameters(buf, offset, little):
    """Walk a parameter list starting at ``offset``.

    Returns ``(entries, end)``: entries are ``(pid, value_start, value_end)``
    and ``end`` is the offset just past the sentinel.
    """
    buf = bytes(buf)
    n = len(buf)
    pos = offset
    entries = []
    while True:
        if n - pos < 4:
            raise UnterminatedList(f"parameter list ends at offset {pos} without a sentinel")
        if little:
            pid = buf[pos] | (buf[pos + 1] << 8)
            length = buf[pos + 2] | (buf[pos + 3] << 8)
        else:
            pid = (buf[pos] << 8) | buf[pos + 1]
            length = (buf[pos + 2] << 8) | buf[pos + 3]
        if pid == PID_SENTINEL:
            return entries, pos + 4
        start = pos + 4
        end = start + length
        if end > n:
            raise LengthOverrun(f"parameter 0x{pid:04x} at offset {pos} declares {length} octets, {n - start} available")
        entries.append((pid, start, end))
        pos = end
