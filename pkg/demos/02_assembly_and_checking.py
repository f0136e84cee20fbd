#!/usr/bin/env python3
"""Assembling a constant-time program and checking it statically.

The branchless select computes r3 = (r1 AND m) XOR (r2 AND NOT m)
without ever letting the secret inputs touch an address or branch.  The
static checker proves as much; flipping one instruction to a
data-dependent branch flips the verdict.
"""

from blindsim import MachineConfig, analyze, assemble, disassemble, parse_signature
from blindsim.corpus import branchless_select

cfg = MachineConfig(memory_words=64, cache_lines=8)
sig = parse_signature("r1=B,r2=B")  # both selector inputs are secret

source = branchless_select(mask=0xFF)
image = assemble(source)
print("== the program ==")
print(disassemble(image))

report = analyze(image, sig, cfg)
print(f"static verdict with blinded r1, r2: {report.verdict.value}")
assert report.verdict.value == "compliant"

print()
print("== now a version that branches on the secret ==")
bad_source = source.replace("xor  r3, r8, r9", "bz r1, r0")
bad = analyze(assemble(bad_source), sig, cfg)
print(bad.format())
w = bad.witness
print(
    f"the verdict comes with a replayable witness: {w.fault.value} "
    f"after {w.steps} machine steps from a signature-consistent input"
)
