"""Encryption engine: the only sanctioned way secrets cross the tag boundary.

The engine holds one session key at a time.  *Import* authenticates and
decrypts a ciphertext and writes the plaintext into machine memory with
every word tagged blinded, as a single indivisible update -- no
intermediate state ever shows the plaintext clear.  *Export* reads a
memory region and returns an authenticated ciphertext; ciphertext is
ordinary clear data.  On a context switch the OS can *seal* the current
key (encrypt it under a device-internal root key) and later load a sealed
key back; it never sees key material in the clear.

Cipher: ChaCha20-Poly1305 with 256-bit keys and 96-bit nonces.  Nonces are
counter-derived and direction-scoped so client and engine never collide
under the shared session key, and the export counter travels inside
sealed blobs to survive context switches:

    nonce = direction(1) || key_id[:3] || counter u64 BE
    direction: 0x43 client->engine, 0x45 engine->client, 0x53 sealing

Envelope layout: ``nonce(12) || ciphertext || tag(16)``.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import ChaCha20Poly1305

from .model import MemoryImage, TaggedWord

AEAD_SCHEME = "chacha20poly1305"
KEY_LEN = 32
NONCE_LEN = 12
TAG_LEN = 16
KEY_ID_LEN = 16

SEAL_LABEL = b"SEAL"

_DIR_CLIENT = 0x43
_DIR_ENGINE = 0x45
_DIR_SEAL = 0x53


class EngineError(Exception):
    pass


class AuthError(EngineError):
    """Ciphertext failed authentication or is malformed."""


class RangeError(EngineError):
    """Memory region out of bounds."""


class NoKeyError(EngineError):
    """No session key is currently loaded."""


def key_id_for(key: bytes) -> bytes:
    return hashlib.sha256(b"blindsim-key-id" + key).digest()[:KEY_ID_LEN]


@dataclass(frozen=True, slots=True)
class SessionKey:
    """256-bit secret plus its public identifier (a key hash)."""

    key: bytes
    key_id: bytes

    @classmethod
    def from_bytes(cls, key: bytes) -> SessionKey:
        if len(key) != KEY_LEN:
            raise ValueError(f"session key must be {KEY_LEN} bytes")
        return cls(key, key_id_for(key))

    def __repr__(self) -> str:  # never leak key material into logs
        return f"SessionKey(key_id={self.key_id.hex()})"


@dataclass(frozen=True, slots=True)
class SealedKey:
    blob: bytes
    key_id: bytes


def _nonce(direction: int, key_id: bytes, counter: int) -> bytes:
    return bytes([direction]) + key_id[:3] + struct.pack(">Q", counter)


def words_to_bytes(words) -> bytes:
    return b"".join(struct.pack("<Q", int(w)) for w in words)


def bytes_to_words(data: bytes) -> tuple[int, ...]:
    if len(data) % 8:
        raise ValueError("payload length is not a multiple of 8")
    return struct.unpack(f"<{len(data) // 8}Q", data)


def seal_envelope(key: bytes, nonce: bytes, plaintext: bytes, aad: bytes = b"") -> bytes:
    return nonce + ChaCha20Poly1305(key).encrypt(nonce, plaintext, aad)


def open_envelope(key: bytes, envelope: bytes, aad: bytes = b"") -> bytes:
    if len(envelope) < NONCE_LEN + TAG_LEN:
        raise AuthError("envelope too short")
    nonce, body = envelope[:NONCE_LEN], envelope[NONCE_LEN:]
    try:
        return ChaCha20Poly1305(key).decrypt(nonce, body, aad)
    except InvalidTag:
        raise AuthError("authentication failed") from None


def client_encrypt(key: SessionKey, words, counter: int) -> bytes:
    """Client-side encryption for import; counter must not repeat per key."""
    nonce = _nonce(_DIR_CLIENT, key.key_id, counter)
    return seal_envelope(key.key, nonce, words_to_bytes(words))


def client_decrypt(key: SessionKey, envelope: bytes) -> tuple[int, ...]:
    """Client-side decryption of an exported result."""
    return bytes_to_words(open_envelope(key.key, envelope))


class EncryptionEngine:
    """Session-key slot plus root-key sealing; one owner at a time.

    All operations are serialized by that owner; the engine performs no
    internal locking.
    """

    def __init__(self, root_key: bytes):
        if len(root_key) != KEY_LEN:
            raise ValueError(f"root key must be {KEY_LEN} bytes")
        self._root_key = root_key
        self._current: SessionKey | None = None
        self._export_counter = 0
        self._seal_counter = 0

    @property
    def current_key_id(self) -> bytes | None:
        return self._current.key_id if self._current else None

    @property
    def export_counter(self) -> int:
        return self._export_counter

    def install_session_key(self, key: SessionKey) -> None:
        """Trusted call used by the attestation module after key agreement."""
        self._current = key
        self._export_counter = 0

    def _require_key(self) -> SessionKey:
        if self._current is None:
            raise NoKeyError("no session key loaded")
        return self._current

    # -- data path ---------------------------------------------------------

    def import_region(self, memory: MemoryImage, dst: int, envelope: bytes) -> MemoryImage:
        """Decrypt and taint: plaintext words land at ``dst`` all blinded.

        Returns the updated memory; the input memory is untouched on any
        failure, and no intermediate state with clear plaintext exists.
        """
        key = self._require_key()
        plaintext = open_envelope(key.key, envelope)
        if len(plaintext) % 8:
            raise AuthError("plaintext length is not a multiple of 8")
        values = bytes_to_words(plaintext)
        if dst < 0 or dst + len(values) > len(memory):
            raise RangeError(
                f"import of {len(values)} words at {dst:#x} exceeds memory"
            )
        words = list(memory.words)
        words[dst: dst + len(values)] = [TaggedWord(v, True) for v in values]
        return MemoryImage(tuple(words))

    def export_region(self, memory: MemoryImage, src: int, n: int) -> bytes:
        """Encrypt and untaint: ciphertext of ``n`` words starting at ``src``.

        Tags are ignored on read -- encrypting data the observer already
        knows reveals nothing, so mixed regions are legal.  Each export
        uses a fresh counter-derived nonce.
        """
        key = self._require_key()
        if src < 0 or n < 0 or src + n > len(memory):
            raise RangeError(f"export of {n} words at {src:#x} exceeds memory")
        payload = words_to_bytes(w.value for w in memory.words[src: src + n])
        nonce = _nonce(_DIR_ENGINE, key.key_id, self._export_counter)
        self._export_counter += 1
        return seal_envelope(key.key, nonce, payload)

    # -- key management ----------------------------------------------------

    def seal_current_key(self) -> SealedKey:
        """Encrypt the session key (and its export counter) under the root
        key and clear the slot."""
        key = self._require_key()
        body = key.key + key.key_id + struct.pack(">Q", self._export_counter)
        nonce = _nonce(_DIR_SEAL, b"\x00" * 3, self._seal_counter)
        self._seal_counter += 1
        blob = seal_envelope(self._root_key, nonce, body, aad=SEAL_LABEL)
        sealed = SealedKey(blob=blob, key_id=key.key_id)
        self._current = None
        self._export_counter = 0
        return sealed

    def load_sealed_key(self, sealed: SealedKey) -> None:
        """Authenticate a sealed blob and make it the current session key."""
        body = open_envelope(self._root_key, sealed.blob, aad=SEAL_LABEL)
        if len(body) != KEY_LEN + KEY_ID_LEN + 8:
            raise AuthError("sealed blob has the wrong shape")
        key = body[:KEY_LEN]
        key_id = body[KEY_LEN: KEY_LEN + KEY_ID_LEN]
        (counter,) = struct.unpack(">Q", body[KEY_LEN + KEY_ID_LEN:])
        if key_id != key_id_for(key):
            raise AuthError("sealed key identifier mismatch")
        self._current = SessionKey(key, key_id)
        self._export_counter = counter
