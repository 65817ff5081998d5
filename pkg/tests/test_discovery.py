import struct

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from graphguard.discovery import (
    ENTITYID_SEDP_PUBLICATIONS_WRITER,
    ENTITYID_SEDP_SUBSCRIPTIONS_WRITER,
    ENTITYID_SPDP_WRITER,
    PID_DOMAIN_ID,
    PID_PARTICIPANT_GUID,
    PID_TOPIC_NAME,
    DecodeIssue,
    EndpointAnnouncement,
    EndpointKind,
    Parameter,
    ParticipantAnnouncement,
    ProductVersion,
    cdr_string,
    decode_endpoint,
    decode_participant,
    encode_parameter_list,
    endpoint_parameters,
    parse_parameter_list,
    participant_parameters,
    read_cdr_string,
)
from graphguard.errors import BadEncapsulation, LengthOverrun, UnterminatedList
from graphguard.simnet import SimEndpoint, SimParticipant, SimSpec, emit, intended_announcements, random_spec
from graphguard.wire import PROTOCOL_2_2, DataSubmessage, GuidPrefix, RtpsMessage, Submessage, parse_message, serialize_message

PREFIX = GuidPrefix.from_hex("01030242ac1100030099473a")


def test_empty_list(backend):
    assert parse_parameter_list(b"\x00\x03\x00\x00" + bytes((1, 0, 0, 0))) == []
    assert parse_parameter_list(b"\x00\x02\x00\x00" + bytes((0, 1, 0, 0))) == []


def test_topic_name_parameter_hand_encoded(backend):
    # length 11 ("rt/chatter" plus NUL), 11 bytes, one byte of padding
    value = b"\x0b\x00\x00\x00" + b"rt/chatter\x00" + b"\x00"
    assert cdr_string("rt/chatter") == value
    payload = b"\x00\x03\x00\x00" + b"\x05\x00\x10\x00" + value + b"\x01\x00\x00\x00"
    params = parse_parameter_list(payload)
    assert params == [Parameter(PID_TOPIC_NAME, value)]
    assert read_cdr_string(params[0].value) == ("rt/chatter", 16)
    assert encode_parameter_list(params) == payload


def test_trailing_bytes_ignored(backend):
    payload = b"\x00\x03\x00\x00" + bytes((1, 0, 0, 0)) + b"junk"
    assert parse_parameter_list(payload) == []


@pytest.mark.parametrize("payload, error", [
    (b"\x00\x01\x00\x00" + bytes((1, 0, 0, 0)), BadEncapsulation),
    (b"\x00\x03", BadEncapsulation),
    (b"\x00\x03\x00\x00", UnterminatedList),
    (b"\x00\x03\x00\x00" + b"\x05\x00\x04\x00abcd", UnterminatedList),
    (b"\x00\x03\x00\x00" + b"\x05\x00\x40\x00abcd", LengthOverrun),
])
def test_parameter_list_errors(backend, payload, error):
    with pytest.raises(error):
        parse_parameter_list(payload)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.integers(2, 0x7FFF), st.binary(max_size=12).map(lambda b: b + bytes(-len(b) % 4))),
                max_size=6),
       st.booleans())
def test_parameter_list_round_trip(entries, little):
    params = [Parameter(pid, value) for pid, value in entries]
    raw = encode_parameter_list(params, little)
    assert parse_parameter_list(raw) == params
    assert encode_parameter_list(parse_parameter_list(raw), little) == raw


def _spdp(ann, little=True, prefix=None):
    payload = encode_parameter_list(participant_parameters(ann, little), little)
    data = DataSubmessage(0x000100C7, ENTITYID_SPDP_WRITER, 1, payload, little_endian=little)
    return RtpsMessage(PROTOCOL_2_2, ann.vendor_id, prefix or ann.guid_prefix, (data.to_submessage(),))


def _sedp(ann, little=True):
    writer = ENTITYID_SEDP_PUBLICATIONS_WRITER if ann.kind == EndpointKind.WRITER else ENTITYID_SEDP_SUBSCRIPTIONS_WRITER
    payload = encode_parameter_list(endpoint_parameters(ann, little), little)
    return DataSubmessage(writer - 5, writer, 1, payload, little_endian=little).to_submessage()


@pytest.mark.parametrize("little", [True, False])
def test_rti_participant(backend, little):
    ann = ParticipantAnnouncement(PREFIX, PROTOCOL_2_2, 0x0101, 0, ProductVersion(6, 0, 1, 25))
    got = decode_participant(_spdp(ann, little))
    assert got == ann
    assert str(got.product_version) == "6.0.1.25"


def test_product_version_from_user_data(backend):
    ann = ParticipantAnnouncement(PREFIX, PROTOCOL_2_2, 0x010F, 3, None,
                                  b"name=talker;namespace=/;product_version=2.6.0.0;")
    got = decode_participant(_spdp(ann))
    assert got.product_version == ProductVersion(2, 6, 0, 0)
    assert got.domain_id == 3
    assert got.user_data_fields() == {"name": "talker", "namespace": "/", "product_version": "2.6.0.0"}


def test_participant_guid_overrides_header(backend):
    ann = ParticipantAnnouncement(PREFIX, PROTOCOL_2_2, 0x0110)
    got = decode_participant(_spdp(ann, prefix=GuidPrefix(bytes(12))))
    assert got.guid_prefix == PREFIX


def test_no_data_submessage(backend):
    msg = RtpsMessage(submessages=(Submessage(0x07, 1, bytes(28)),))
    assert decode_participant(msg) is None
    assert decode_endpoint(msg) == []


def test_spdp_and_sedp_are_disjoint(backend):
    part = ParticipantAnnouncement(PREFIX, PROTOCOL_2_2, 0x0101)
    spdp = _spdp(part)
    assert decode_endpoint(spdp) == []
    ep = EndpointAnnouncement(EndpointKind.WRITER, PREFIX, 0x103, "rt/chatter", "std_msgs::msg::dds_::String_")
    sedp = RtpsMessage(PROTOCOL_2_2, 0x0101, PREFIX, (_sedp(ep),))
    assert decode_participant(sedp) is None
    assert decode_endpoint(sedp) == [ep]


def test_two_endpoints_in_order(backend):
    a = EndpointAnnouncement(EndpointKind.READER, PREFIX, 0x104, "rt/b", "T", ("p1", "p2"))
    b = EndpointAnnouncement(EndpointKind.WRITER, PREFIX, 0x203, "rt/a", "T")
    msg = RtpsMessage(PROTOCOL_2_2, 0x0101, PREFIX, (_sedp(a, False), _sedp(b, True)))
    assert decode_endpoint(parse_message(serialize_message(msg))) == [a, b]


def test_malformed_entries_reported(backend):
    good = EndpointAnnouncement(EndpointKind.WRITER, PREFIX, 0x103, "rt/ok", "T")
    broken = DataSubmessage(0x3C7, ENTITYID_SEDP_PUBLICATIONS_WRITER, 2,
                            b"\x00\x03\x00\x00" + b"\x05\x00\x40\x00abcd").to_submessage()
    no_topic = DataSubmessage(0x3C7, ENTITYID_SEDP_PUBLICATIONS_WRITER, 3,
                              encode_parameter_list([Parameter(PID_DOMAIN_ID, bytes(4))])).to_submessage()
    msg = RtpsMessage(PROTOCOL_2_2, 0x0101, PREFIX, (broken, _sedp(good), no_topic))
    errors = []
    assert decode_endpoint(msg, errors) == [good]
    assert len(errors) == 2 and all(isinstance(e, DecodeIssue) for e in errors)

    bad_guid = DataSubmessage(0x100C7, ENTITYID_SPDP_WRITER, 1,
                              encode_parameter_list([Parameter(PID_PARTICIPANT_GUID, bytes(4))])).to_submessage()
    errors = []
    assert decode_participant(RtpsMessage(submessages=(bad_guid,)), errors) is None
    assert len(errors) == 1


def test_simnet_generator_is_oracle(backend):
    for seed in range(40):
        spec = random_spec(seed, noise_ratio=0.2)
        want_parts, want_eps = intended_announcements(spec)
        parts, eps = set(), set()
        for _, payload in emit(spec):
            try:
                msg = parse_message(payload)
            except ValueError:
                continue
            p = decode_participant(msg)
            if p is not None:
                parts.add(p)
            eps.update(decode_endpoint(msg))
        assert parts == want_parts
        assert eps == want_eps


def test_domain_id_encoding(backend):
    spec = SimSpec(1, (SimParticipant(PREFIX, 0x0101, (6, 0, 1, 25), domain_id=42),),
                   (SimEndpoint(0, "writer", "rt/x", "T"),))
    (ts, payload) = emit(spec)[0]
    got = decode_participant(parse_message(payload))
    assert got.domain_id == 42
    assert struct.pack("<I", 42) in payload or struct.pack(">I", 42) in payload
