#!/usr/bin/env python3
"""Wrap a symmetric session key with Cramer-Shoup and try to tamper with it.

The 4-tuple ciphertext binds all of its components through a hash-derived
validity tag; decryption refuses anything modified, which is the property
the whole transfer protocol leans on.
"""

import random

from tftps import records
from tftps.cramer_shoup import (
    REJECT,
    CsCiphertext,
    ciphertext_to_bytes,
    decrypt,
    encode_message,
    encrypt_with_rng,
    key_id,
    keygen,
)
from tftps.groups import gen_group_params

rng = random.Random(7)
params = gen_group_params(1024, rng)
pk, sk = keygen(params, rng)
print(f"generated a 1024-bit key pair, id {key_id(pk)}")

material = rng.randbytes(64)
print(f"\nsession material ({len(material)} octets): {material.hex()[:48]}...")

element = encode_message(material, params)
ct = encrypt_with_rng(pk, element, rng)
wire = ciphertext_to_bytes(ct)
print(f"wrapped into a 4-tuple ciphertext, {len(wire)} octets on the wire")

recovered = decrypt(sk, params, ct)
keys = records.derive_session_keys(material)
print(f"honest decryption recovers the material: {recovered == element}")
print(f"derived cipher key {keys.enc_key.hex()[:16]}..., mac key {keys.mac_key.hex()[:16]}...")

print("\n== tampering ==")
g = params.g1
for name, mauled in [
    ("u1 * g", CsCiphertext(ct.u1 * g % params.p, ct.u2, ct.e, ct.v)),
    ("u2 * g", CsCiphertext(ct.u1, ct.u2 * g % params.p, ct.e, ct.v)),
    ("e * g (the multiplicative maul)", CsCiphertext(ct.u1, ct.u2, ct.e * g % params.p, ct.v)),
    ("v * g", CsCiphertext(ct.u1, ct.u2, ct.e, ct.v * g % params.p)),
]:
    outcome = decrypt(sk, params, mauled)
    print(f"  {name:35s} -> {outcome!r}" + ("" if outcome is REJECT else "  (!!)"))

print("\nevery modification is rejected before any plaintext is released")
