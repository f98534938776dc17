#!/usr/bin/env python3
"""Walk through the modular arithmetic every other demo builds on.

Shows congruences, the classic primitive-root power table for p = 7, and
a safe-prime group where the quadratic residues form the prime-order
subgroup the encryption scheme lives in.
"""

import random

from tftps.groups import (
    DESK_PARAMS,
    element_order,
    gen_group_params,
    is_primitive_root,
    mod_exp,
    validate_group_params,
)

print("== congruences ==")
print(f"3^2 mod 7 = {mod_exp(3, 2, 7)}   (9 = 2 = -5 mod 7)")

print("\n== powers of g modulo 7 ==")
print("x      " + "  ".join(f"{x}" for x in range(1, 7)))
for g in (3, 4):
    row = [mod_exp(g, x, 7) for x in range(1, 7)]
    tag = "primitive root" if is_primitive_root(g, 7) else "not a primitive root"
    print(f"g={g}    " + "  ".join(str(v) for v in row) + f"   <- {tag}")
print("g=3 reaches every element of {1..6}; g=4 cycles through only {1, 2, 4}.")
print(f"order of 3 mod 7: {element_order(3, 7)}, order of 4 mod 7: {element_order(4, 7)}")

print("\n== the desk-scale safe-prime group ==")
p, q = DESK_PARAMS.p, DESK_PARAMS.q
print(f"p = {p} = 2*{q} + 1, generators g1 = {DESK_PARAMS.g1}, g2 = {DESK_PARAMS.g2}")
residues = sorted({(x * x) % p for x in range(1, p)})
print(f"quadratic residues mod {p}: {residues}")
print(f"subgroup order: every residue^q mod p = 1? "
      f"{all(mod_exp(r, q, p) == 1 for r in residues)}")

print("\n== generating a fresh group ==")
params = gen_group_params(64, random.Random(2024))
print(f"64-bit search found p = {params.p:#x}")
print(f"invariant violations: {validate_group_params(params) or 'none'}")
