# cython: language_level=3, boundscheck=False, wraparound=False
"""Compiled byte-scanning kernels; see ``_pure.py`` for the reference version."""

from graphguard.errors import BadMagic, LengthOverrun, Truncated, UnsupportedVersion, UnterminatedList

cdef enum:
    HEADER_SIZE = 20
    PAD = 0x01
    INFO_TS = 0x09
    PID_SENTINEL = 0x0001


def split_message(data):
    cdef bytes raw = bytes(data)
    cdef const unsigned char[:] buf = raw
    cdef Py_ssize_t n = len(raw)
    cdef Py_ssize_t pos, start, end, k
    cdef unsigned int sid, flags, length, major, minor, vendor
    cdef const char* magic = b"RTPS"

    for k in range(4 if n >= 4 else n):
        if buf[k] != <unsigned char>magic[k]:
            raise BadMagic(f"bad magic {raw[:4]!r}")
    if n < HEADER_SIZE:
        raise Truncated(f"message of {n} bytes is shorter than the 20-byte header")
    major = buf[4]
    minor = buf[5]
    if major == 0:
        raise UnsupportedVersion(f"protocol version {major}.{minor}")
    vendor = (buf[6] << 8) | buf[7]

    spans = []
    pos = HEADER_SIZE
    while pos < n:
        if n - pos < 4:
            raise Truncated(f"{n - pos} stray bytes at offset {pos}")
        sid = buf[pos]
        flags = buf[pos + 1]
        if flags & 1:
            length = buf[pos + 2] | (buf[pos + 3] << 8)
        else:
            length = (buf[pos + 2] << 8) | buf[pos + 3]
        start = pos + 4
        if length == 0 and sid != PAD and sid != INFO_TS:
            spans.append((sid, flags, True, start, n))
            break
        end = start + length
        if end > n:
            raise Truncated(
                f"submessage 0x{sid:02x} at offset {pos} declares {length} octets, {n - start} available")
        spans.append((sid, flags, False, start, end))
        pos = end
    return major, minor, vendor, raw[8:20], spans


def scan_parameters(data, Py_ssize_t offset, bint little):
    cdef bytes raw = bytes(data)
    cdef const unsigned char[:] buf = raw
    cdef Py_ssize_t n = len(raw)
    cdef Py_ssize_t pos = offset, start, end
    cdef unsigned int pid, length

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
            raise LengthOverrun(
                f"parameter 0x{pid:04x} at offset {pos} declares {length} octets, {n - start} available")
        entries.append((pid, start, end))
        pos = end
