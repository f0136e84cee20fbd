"""Engine behavior: import/export round-trips, sealing, nonce discipline.

The AEAD cross-checks use the independent RFC-construction oracle in
``aead_oracle``; the engine itself is backed by the cryptography library,
so agreement between the two is meaningful.
"""

import random
import struct

import pytest

from blindsim.engine import (
    AuthError,
    EncryptionEngine,
    NoKeyError,
    RangeError,
    SealedKey,
    SessionKey,
    bytes_to_words,
    client_decrypt,
    client_encrypt,
    key_id_for,
    words_to_bytes,
)
from blindsim.model import MemoryImage, blinded, clear

import aead_oracle

RFC_KEY = bytes.fromhex(
    "808182838485868788898a8b8c8d8e8f909192939495969798999a9b9c9d9e9f"
)
RFC_NONCE = bytes.fromhex("070000004041424344454647")
RFC_AAD = bytes.fromhex("50515253c0c1c2c3c4c5c6c7")
RFC_PLAINTEXT = (
    b"Ladies and Gentlemen of the class of '99: If I could offer you "
    b"only one tip for the future, sunscreen would be it."
)
RFC_TAG = bytes.fromhex("1ae10b594f09e26a7e902ecbd0600691")
RFC_CT_PREFIX = bytes.fromhex("d31a8d34648e60db7b86afbc53ef7ec2")


def make_engine(root=b"R" * 32, key=b"K" * 32):
    engine = EncryptionEngine(root)
    session = SessionKey.from_bytes(key)
    engine.install_session_key(session)
    return engine, session


class TestOracleItself:
    def test_rfc_vector(self):
        out = aead_oracle.aead_encrypt(RFC_KEY, RFC_NONCE, RFC_PLAINTEXT, RFC_AAD)
        assert out[-16:] == RFC_TAG
        assert out[:16] == RFC_CT_PREFIX
        assert aead_oracle.aead_decrypt(RFC_KEY, RFC_NONCE, out, RFC_AAD) == RFC_PLAINTEXT

    def test_tamper_detected(self):
        out = bytearray(aead_oracle.aead_encrypt(RFC_KEY, RFC_NONCE, b"hi" * 8))
        out[3] ^= 1
        with pytest.raises(ValueError):
            aead_oracle.aead_decrypt(RFC_KEY, RFC_NONCE, bytes(out))


class TestImportExport:
    def test_import_of_export_is_identity_with_tags(self):
        engine, _ = make_engine()
        mem = MemoryImage(tuple(clear(v) for v in range(16)))
        envelope = engine.export_region(mem, src=4, n=3)
        out = engine.import_region(mem, dst=10, envelope=envelope)
        assert [w.value for w in out.words[10:13]] == [4, 5, 6]
        assert all(w.blinded for w in out.words[10:13])
        assert out.words[:10] == mem.words[:10]

    def test_flipped_tag_bit_leaves_memory_unchanged(self):
        engine, _ = make_engine()
        mem = MemoryImage.zeros(8)
        envelope = bytearray(engine.export_region(mem, 0, 2))
        envelope[-1] ^= 0x80
        with pytest.raises(AuthError):
            engine.import_region(mem, 0, bytes(envelope))

    def test_import_client_encrypted_words_cross_checked(self):
        engine, session = make_engine()
        mem = MemoryImage.zeros(8)
        # build the envelope with the independent oracle, not the library
        nonce = bytes([0x43]) + session.key_id[:3] + struct.pack(">Q", 7)
        body = aead_oracle.aead_encrypt(
            session.key, nonce, words_to_bytes([1, 2, 3])
        )
        out = engine.import_region(mem, 2, nonce + body)
        assert out.words[2:5] == (blinded(1), blinded(2), blinded(3))

    def test_client_encrypt_matches_oracle(self):
        _, session = make_engine()
        envelope = client_encrypt(session, [9, 8], counter=5)
        nonce, body = envelope[:12], envelope[12:]
        expected = aead_oracle.aead_encrypt(session.key, nonce, words_to_bytes([9, 8]))
        assert body == expected

    def test_export_decrypts_with_oracle(self):
        engine, session = make_engine()
        mem = MemoryImage((clear(11), blinded(22), clear(33)))
        envelope = engine.export_region(mem, 0, 3)
        nonce, body = envelope[:12], envelope[12:]
        payload = aead_oracle.aead_decrypt(session.key, nonce, body)
        assert bytes_to_words(payload) == (11, 22, 33)

    def test_export_then_client_decrypt(self):
        engine, session = make_engine()
        mem = MemoryImage(tuple(blinded(v * 3) for v in range(6)))
        envelope = engine.export_region(mem, 1, 4)
        assert client_decrypt(session, envelope) == (3, 6, 9, 12)

    def test_two_exports_of_identical_plaintext_differ(self):
        engine, _ = make_engine()
        mem = MemoryImage.zeros(4)
        e1 = engine.export_region(mem, 0, 4)
        e2 = engine.export_region(mem, 0, 4)
        assert e1 != e2  # fresh nonce each time
        assert e1[:12] != e2[:12]

    def test_range_errors(self):
        engine, _ = make_engine()
        mem = MemoryImage.zeros(4)
        with pytest.raises(RangeError):
            engine.export_region(mem, 2, 3)
        envelope = engine.export_region(mem, 0, 3)
        with pytest.raises(RangeError):
            engine.import_region(mem, 2, envelope)

    def test_no_key(self):
        engine = EncryptionEngine(b"R" * 32)
        mem = MemoryImage.zeros(4)
        with pytest.raises(NoKeyError):
            engine.export_region(mem, 0, 1)

    def test_import_rejects_misaligned_plaintext(self):
        engine, session = make_engine()
        nonce = bytes(12)
        body = aead_oracle.aead_encrypt(session.key, nonce, b"12345")
        with pytest.raises(AuthError):
            engine.import_region(MemoryImage.zeros(4), 0, nonce + body)

    def test_import_is_all_or_nothing_region(self):
        engine, _ = make_engine()
        mem = MemoryImage(tuple(clear(v) for v in range(8)))
        envelope = engine.export_region(mem, 0, 4)
        out = engine.import_region(mem, 4, envelope)
        # the full region is blinded; no partially-clear plaintext exists
        assert all(w.blinded for w in out.words[4:8])


class TestNonceDiscipline:
    def test_export_counter_strictly_increases(self):
        engine, _ = make_engine()
        mem = MemoryImage.zeros(4)
        nonces = []
        for i in range(20):
            assert engine.export_counter == i
            nonces.append(engine.export_region(mem, 0, 1)[:12])
        assert len(set(nonces)) == 20

    def test_counter_survives_seal_load(self):
        engine, _ = make_engine()
        mem = MemoryImage.zeros(4)
        n1 = engine.export_region(mem, 0, 1)[:12]
        sealed = engine.seal_current_key()
        engine.load_sealed_key(sealed)
        n2 = engine.export_region(mem, 0, 1)[:12]
        assert n1 != n2

    def test_client_and_engine_nonce_spaces_disjoint(self):
        _, session = make_engine()
        client_nonce = client_encrypt(session, [0], counter=0)[:12]
        engine, _ = make_engine()
        engine_nonce = engine.export_region(MemoryImage.zeros(1), 0, 1)[:12]
        assert client_nonce[0] != engine_nonce[0]


class TestSealing:
    def test_seal_load_roundtrip(self):
        engine, session = make_engine()
        sealed = engine.seal_current_key()
        assert engine.current_key_id is None
        assert sealed.key_id == session.key_id
        engine.load_sealed_key(sealed)
        assert engine.current_key_id == session.key_id
        mem = MemoryImage(tuple(clear(v) for v in range(4)))
        envelope = engine.export_region(mem, 0, 4)
        assert client_decrypt(session, envelope) == (0, 1, 2, 3)

    def test_cross_root_key_fails(self):
        engine_a, _ = make_engine(root=b"A" * 32)
        sealed = engine_a.seal_current_key()
        engine_b = EncryptionEngine(b"B" * 32)
        with pytest.raises(AuthError):
            engine_b.load_sealed_key(sealed)

    def test_truncated_blob_fails(self):
        engine, _ = make_engine()
        sealed = engine.seal_current_key()
        with pytest.raises(AuthError):
            engine.load_sealed_key(SealedKey(sealed.blob[:-4], sealed.key_id))

    def test_seal_without_key_fails(self):
        engine = EncryptionEngine(b"R" * 32)
        with pytest.raises(NoKeyError):
            engine.seal_current_key()

    def test_swapped_blobs_load_but_key_id_reveals_it(self):
        # The engine accepts any authentic blob sealed under its root key;
        # spotting a swap is the protocol layer's job, via key_id.
        root = b"R" * 32
        engine = EncryptionEngine(root)
        k1 = SessionKey.from_bytes(b"1" * 32)
        k2 = SessionKey.from_bytes(b"2" * 32)
        engine.install_session_key(k1)
        sealed1 = engine.seal_current_key()
        engine.install_session_key(k2)
        sealed2 = engine.seal_current_key()
        engine.load_sealed_key(sealed1)
        assert engine.current_key_id == k1.key_id != k2.key_id
        engine.load_sealed_key(sealed2)
        assert engine.current_key_id == k2.key_id

    def test_three_client_context_switch_scenario(self):
        root = b"Z" * 32
        engine = EncryptionEngine(root)
        rng = random.Random(4)
        clients = []
        for i in range(3):
            key = SessionKey.from_bytes(bytes([i + 1]) * 32)
            data = tuple(rng.getrandbits(64) for _ in range(4))
            clients.append({"key": key, "data": data, "sealed": None, "ct": None})

        # round 1: each client imports its data, then is switched out
        mem = MemoryImage.zeros(32)
        for i, c in enumerate(clients):
            engine.install_session_key(c["key"])
            envelope = client_encrypt(c["key"], c["data"], counter=0)
            mem = engine.import_region(mem, 8 * i, envelope)
            c["sealed"] = engine.seal_current_key()

        # round 2: interleaved wake-ups export their own regions
        for i in (2, 0, 1):
            c = clients[i]
            engine.load_sealed_key(c["sealed"])
            c["ct"] = engine.export_region(mem, 8 * i, 4)
            c["sealed"] = engine.seal_current_key()

        for c in clients:
            assert client_decrypt(c["key"], c["ct"]) == c["data"]


class TestKeyHygiene:
    def test_repr_hides_key(self):
        key = SessionKey.from_bytes(b"S" * 32)
        assert b"S" * 8 not in repr(key).encode()

    def test_key_never_in_envelope(self):
        engine, session = make_engine(key=bytes(range(32)))
        mem = MemoryImage(tuple(clear(v) for v in range(8)))
        for _ in range(50):
            envelope = engine.export_region(mem, 0, 8)
            assert session.key not in envelope
            assert session.key[:8] not in envelope

    def test_key_id_is_hash(self):
        key = b"Q" * 32
        assert SessionKey.from_bytes(key).key_id == key_id_for(key)
        assert len(key_id_for(key)) == 16


class TestWordCodec:
    def test_roundtrip(self):
        rng = random.Random(9)
        words = tuple(rng.getrandbits(64) for _ in range(9))
        assert bytes_to_words(words_to_bytes(words)) == words

    def test_little_endian_layout(self):
        assert words_to_bytes([1]) == b"\x01" + bytes(7)

    def test_misaligned_rejected(self):
        with pytest.raises(ValueError):
            bytes_to_words(b"123")
