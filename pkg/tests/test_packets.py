import random

import pytest

from tftps.packets import (
    ERR_OPTION_REFUSED,
    ERR_SECURITY,
    AckPacket,
    DataPacket,
    ErrorPacket,
    MalformedPacketError,
    OptionAck,
    ReadRequest,
    SecurityOptions,
    TransferPolicy,
    WriteRequest,
    decode_packet,
    encode_packet,
    negotiate,
    security_from_options,
)

# Byte fixtures in RFC 1350/2347 layout, frozen.
RRQ_KERNEL_OCTET = bytes.fromhex("00016b65726e656c2e696d67006f6374657400")
ACK_BLOCK_1 = bytes.fromhex("0004" "0001")
WRQ_WITH_OPTIONS = (
    b"\x00\x02" + b"fw.bin\x00" + b"octet\x00" + b"sec\x00cs1\x00" + b"keyblocks\x003\x00" + b"kid\x00abcd\x00"
)
DATA_BLOCK_2 = b"\x00\x03\x00\x02" + b"payload"
ERROR_NOT_FOUND = b"\x00\x05\x00\x01" + b"File not found\x00"
OACK_SEC = b"\x00\x06" + b"sec\x00cs1\x00" + b"keyblocks\x003\x00"


class TestFixtures:
    def test_rrq_bytes(self):
        packet = ReadRequest(filename="kernel.img", mode="octet")
        assert encode_packet(packet) == RRQ_KERNEL_OCTET
        assert decode_packet(RRQ_KERNEL_OCTET) == packet

    def test_ack_bytes(self):
        assert encode_packet(AckPacket(block=1)) == ACK_BLOCK_1
        assert decode_packet(ACK_BLOCK_1) == AckPacket(block=1)

    def test_wrq_with_options(self):
        packet = WriteRequest(
            filename="fw.bin",
            mode="octet",
            options=(("sec", "cs1"), ("keyblocks", "3"), ("kid", "abcd")),
        )
        assert encode_packet(packet) == WRQ_WITH_OPTIONS
        assert decode_packet(WRQ_WITH_OPTIONS) == packet

    def test_data_bytes(self):
        packet = DataPacket(block=2, data=b"payload")
        assert encode_packet(packet) == DATA_BLOCK_2
        assert decode_packet(DATA_BLOCK_2) == packet

    def test_error_bytes(self):
        packet = ErrorPacket(code=1, message="File not found")
        assert encode_packet(packet) == ERROR_NOT_FOUND
        assert decode_packet(ERROR_NOT_FOUND) == packet

    def test_oack_bytes(self):
        packet = OptionAck(options=(("sec", "cs1"), ("keyblocks", "3")))
        assert encode_packet(packet) == OACK_SEC
        assert decode_packet(OACK_SEC) == packet


class TestRoundtrip:
    def test_randomized_packets(self):
        rng = random.Random(0)
        alphabet = "abcdefghijklmnopqrstuvwxyz0123456789.-_/"

        def word(n):
            return "".join(rng.choice(alphabet) for _ in range(rng.randrange(1, n)))

        for _ in range(300):
            kind = rng.randrange(5)
            if kind == 0:
                options = tuple((word(8), word(8)) for _ in range(rng.randrange(0, 3)))
                cls = ReadRequest if rng.random() < 0.5 else WriteRequest
                packet = cls(filename=word(20), mode=rng.choice(["octet", "netascii"]), options=options)
            elif kind == 1:
                packet = DataPacket(block=rng.randrange(1 << 16), data=rng.randbytes(rng.randrange(0, 513)))
            elif kind == 2:
                packet = AckPacket(block=rng.randrange(1 << 16))
            elif kind == 3:
                packet = ErrorPacket(code=rng.randrange(10), message=word(30))
            else:
                packet = OptionAck(options=tuple((word(8), word(8)) for _ in range(rng.randrange(0, 3))))
            assert decode_packet(encode_packet(packet)) == packet


class TestDecodeRobustness:
    def test_fuzz_never_raises_unexpected(self):
        rng = random.Random(1)
        decoded = 0
        for _ in range(20_000):
            blob = rng.randbytes(rng.randrange(0, 600))
            try:
                decode_packet(blob)
                decoded += 1
            except MalformedPacketError:
                pass
        assert decoded >= 0  # reaching here means nothing else was raised

    def test_mutated_valid_packets(self):
        rng = random.Random(2)
        base = encode_packet(
            WriteRequest("fw.bin", "octet", (("sec", "cs1"), ("keyblocks", "3"), ("kid", "ab")))
        )
        for _ in range(2000):
            mutated = bytearray(base)
            for _ in range(rng.randrange(1, 4)):
                mutated[rng.randrange(len(mutated))] = rng.randrange(256)
            try:
                decode_packet(bytes(mutated))
            except MalformedPacketError:
                pass

    def test_specific_malformed_cases(self):
        cases = [
            b"",
            b"\x00",
            b"\x00\x07",  # unknown opcode
            b"\x00\x01",  # RRQ without strings
            b"\x00\x01no-nul",
            b"\x00\x01name\x00",  # missing mode
            b"\x00\x01\x00octet\x00",  # empty filename
            b"\x00\x01a\x00b\x00dangling\x00",  # odd option strings
            b"\x00\x01a\x00b\x00\x00v\x00",  # empty option name
            b"\x00\x04\x00",  # short ACK
            b"\x00\x04\x00\x01\x00",  # long ACK
            b"\x00\x05\x00",  # ERROR without code/message
            b"\x00\x05\x00\x01msg",  # unterminated message
            b"\x00\x03\x00",  # DATA without full block number
            b"\x00\x03\x00\x01" + bytes(513),  # oversized DATA
            b"\x00\x01n\xffme\x00octet\x00",  # non-ASCII
        ]
        for blob in cases:
            with pytest.raises(MalformedPacketError):
                decode_packet(blob)


class TestSecurityOptions:
    def test_parse_and_render(self):
        sec = SecurityOptions(scheme="cs1", keyblocks=3, kid="abcd")
        assert sec.to_options() == (("sec", "cs1"), ("keyblocks", "3"), ("kid", "abcd"))
        assert security_from_options(sec.to_options()) == sec

    def test_absent(self):
        assert security_from_options((("blksize", "1432"),)) is None

    def test_case_insensitive_names(self):
        sec = security_from_options((("SEC", "cs1"), ("KeyBlocks", "2")))
        assert sec is not None and sec.keyblocks == 2

    def test_bad_keyblocks(self):
        with pytest.raises(MalformedPacketError):
            security_from_options((("sec", "cs1"), ("keyblocks", "zero")))
        with pytest.raises(MalformedPacketError):
            security_from_options((("sec", "cs1"), ("keyblocks", "0")))


class TestNegotiate:
    def test_echoes_supported_options(self):
        request = (("sec", "cs1"), ("keyblocks", "3"), ("kid", "K"))
        assert negotiate(request, TransferPolicy()) == request

    def test_unknown_options_omitted(self):
        request = (("sec", "cs1"), ("blksize", "1432"), ("kid", "K"))
        accepted = negotiate(request, TransferPolicy())
        assert ("blksize", "1432") not in accepted
        assert ("sec", "cs1") in accepted

    def test_plain_request_permissive(self):
        assert negotiate((), TransferPolicy()) == ()

    def test_plain_request_against_required_security(self):
        outcome = negotiate((), TransferPolicy(require_security=True))
        assert isinstance(outcome, ErrorPacket) and outcome.code == ERR_SECURITY

    def test_unknown_scheme_refused(self):
        outcome = negotiate((("sec", "xyz"),), TransferPolicy())
        assert isinstance(outcome, ErrorPacket) and outcome.code == ERR_OPTION_REFUSED
