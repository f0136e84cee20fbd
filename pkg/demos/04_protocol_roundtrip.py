#!/usr/bin/env python3
"""The full outsourced-computation protocol, in one process.

A client attests the device, agrees on a session key, ships encrypted
data, has the server run a computation over the (tainted) plaintext,
and gets an encrypted result back.  Running the same session over two
different secrets produces byte-identical server-side traces: the
observer at the server learns only the length.
"""

from blindsim import EncryptionEngine, MachineConfig, assemble, encode_image
from blindsim.corpus import demo_add_one
from blindsim.engine import client_decrypt, client_encrypt
from blindsim.protocol import (
    Claims,
    ClientHandshake,
    ComputeRequest,
    ExportRequest,
    ImportRequest,
    ServerSession,
    decode_frame,
    encode_frame,
    make_device_keypair,
    parse_compute_result,
)

DATA_BASE, RESULT_BASE = 0x100, 0x180
device_priv, device_pub = make_device_keypair(seed=7)
program = assemble(demo_add_one(3, DATA_BASE, RESULT_BASE))
program_bytes = encode_image(program)


def one_session(secret_words):
    cfg = MachineConfig(memory_words=1024, cache_lines=16)
    engine = EncryptionEngine(root_key=b"\x5a" * 32)
    server = ServerSession(device_priv, Claims(), engine, cfg, seed=11)

    client = ClientHandshake(device_pub, seed=12)
    key = client.finish(server.handle_frame(client.hello()))
    print(f"  session key agreed, id={key.key_id.hex()[:16]}...")

    def call(msg):
        return decode_frame(server.handle_frame(encode_frame(msg))).payload

    call(ImportRequest(DATA_BASE, client_encrypt(key, secret_words, counter=0)))
    outcome, steps = parse_compute_result(
        call(ComputeRequest(program.entry_pc, program_bytes))
    )
    print(f"  compute: {outcome} in {steps} steps")
    result = client_decrypt(key, call(ExportRequest(RESULT_BASE, len(secret_words))))
    return result, server.traces[0]


print("== session over secret [1, 2, 3] ==")
out_a, trace_a = one_session((1, 2, 3))
print(f"  client decrypts: {out_a}")

print("== session over secret [1000, 2000, 3000] ==")
out_b, trace_b = one_session((1000, 2000, 3000))
print(f"  client decrypts: {out_b}")

print()
print(f"server-side traces byte-identical: {trace_a == trace_b}")
print(f"({len(trace_a.splitlines())} observable events either way; none carry a payload)")
assert trace_a == trace_b
assert out_a == (2, 3, 4) and out_b == (1001, 2001, 3001)
