"""Symmetric protection of file blocks: AES-256-CTR, then HMAC-SHA-256.

The 512 bits of wrapped session material split into a 256-bit cipher key
and a 256-bit MAC key.  Each block is sealed encrypt-then-MAC with the
block sequence number authenticated, so replays and any single-bit tamper
fail verification.  Tag comparison is a full-length accumulate-XOR with no
early exit.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

import hashlib
import hmac

from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes

from .groups import ParameterError

KEY_MATERIAL_LEN = 64
NONCE_LEN = 16
TAG_LEN = 32
SEQ_LEN = 8
RECORD_OVERHEAD = SEQ_LEN + NONCE_LEN + TAG_LEN  # 56 octets per sealed block

_DEFAULT_RNG = random.SystemRandom()


class MacFailure:
    """Distinguished result for records that fail authentication."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "MAC_FAILURE"


MAC_FAILURE = MacFailure()

# Byte-operation counter for the constant-time comparison, so tests can
# assert match and mismatch execute the same amount of work.
_compare_ops = 0


@dataclass(frozen=True)
class SessionKeys:
    enc_key: bytes
    mac_key: bytes


@dataclass(frozen=True)
class SealedRecord:
    seq: int
    nonce: bytes
    ciphertext: bytes
    tag: bytes


def derive_session_keys(material: bytes) -> SessionKeys:
    """Split 64 octets of wrapped material into cipher and MAC keys."""
    if len(material) != KEY_MATERIAL_LEN:
        raise ParameterError(f"session key material must be {KEY_MATERIAL_LEN} octets, got {len(material)}")
    return SessionKeys(enc_key=bytes(material[:32]), mac_key=bytes(material[32:]))


def _aes_ctr(key: bytes, nonce: bytes, data: bytes) -> bytes:
    cipher = Cipher(algorithms.AES(key), modes.CTR(nonce))
    enc = cipher.encryptor()
    return enc.update(data) + enc.finalize()


def _tag(keys: SessionKeys, seq: int, nonce: bytes, ciphertext: bytes) -> bytes:
    msg = seq.to_bytes(SEQ_LEN, "big") + nonce + ciphertext
    return hmac.new(keys.mac_key, msg, hashlib.sha256).digest()


def seal_block(keys: SessionKeys, seq: int, plaintext: bytes, rng: random.Random | None = None) -> SealedRecord:
    """Encrypt-then-MAC one block under a fresh random nonce."""
    rng = rng or _DEFAULT_RNG
    nonce = rng.randbytes(NONCE_LEN)
    ciphertext = _aes_ctr(keys.enc_key, nonce, plaintext)
    return SealedRecord(seq=seq, nonce=nonce, ciphertext=ciphertext, tag=_tag(keys, seq, nonce, ciphertext))


def open_block(keys: SessionKeys, seq: int, record: SealedRecord):
    """Verify then decrypt; returns plaintext bytes or MAC_FAILURE.

    The sequence number is authenticated: both the tag and the caller's
    expected seq must match.  Nothing is decrypted on failure.
    """
    expected = _tag(keys, record.seq, record.nonce, record.ciphertext)
    diff = 0 if constant_time_equal(expected, record.tag) else 1
    diff |= record.seq ^ seq
    if diff != 0:
        return MAC_FAILURE
    return _aes_ctr(keys.enc_key, record.nonce, record.ciphertext)


def constant_time_equal(a: bytes, b: bytes) -> bool:
    """Full-length accumulate-XOR comparison; no early exit."""
    global _compare_ops
    if len(a) != len(b):
        return False
    acc = 0
    ops = 0
    for x, y in zip(a, b):
        acc |= x ^ y
        ops += 1
    _compare_ops += ops
    return acc == 0


def compare_op_count() -> int:
    return _compare_ops


def reset_compare_op_count() -> None:
    global _compare_ops
    _compare_ops = 0


# Wire layout inside a TFTP DATA payload:
# seq (8 BE) | nonce (16) | tag (32) | ciphertext (remainder).

def record_to_bytes(record: SealedRecord) -> bytes:
    return record.seq.to_bytes(SEQ_LEN, "big") + record.nonce + record.tag + record.ciphertext


def record_from_bytes(data: bytes) -> SealedRecord:
    if len(data) < RECORD_OVERHEAD:
        raise ParameterError(f"sealed record too short: {len(data)} octets")
    seq = int.from_bytes(data[:SEQ_LEN], "big")
    nonce = data[SEQ_LEN : SEQ_LEN + NONCE_LEN]
    tag = data[SEQ_LEN + NONCE_LEN : RECORD_OVERHEAD]
    return SealedRecord(seq=seq, nonce=bytes(nonce), ciphertext=bytes(data[RECORD_OVERHEAD:]), tag=bytes(tag))
