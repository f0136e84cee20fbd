"""Client/HSM handshake, attestation evidence, and session framing.

Handshake: the client and a fixed-function key-exchange module each
contribute an X25519 ephemeral; the device signs (Ed25519) its measurement
claims together with a hash of the handshake transcript, which binds both
messages.  The session key is HKDF-derived from the shared secret with
the transcript hash as salt, so it depends on both ephemerals and on
every transcript byte.  Any single-bit tamper in transit makes at least
one side abort: the device signs what it actually saw, and the client
recomputes the transcript from what it actually sent.

The device-to-engine hand-off of the agreed key is a direct trusted call
(:meth:`EncryptionEngine.install_session_key`); both ends live inside the
simulator's trust boundary.

Wire format, shared by handshake and session traffic:

    frame := len(u32 BE, covers type+body) || type(u8) || body

    CLIENT_HELLO (1): eph_pub(32)
    HSM_HELLO    (2): eph_pub(32) || claims(4) || transcript_hash(32)
                      || signature(64)
    IMPORT       (3): dst u64 || ct_len u32 || ciphertext
    COMPUTE      (4): entry u64 || img_len u32 || image bytes
    EXPORT       (5): src u64 || count u64
    RESULT       (6): payload (request-specific)
    ERROR        (7): utf-8 message

    claims := taint_extensions(u8) || os_certified(u8) || mode(u8)
              || aead scheme id(u8)

All multi-byte integers big-endian; parsers reject trailing bytes.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, replace
from enum import IntEnum

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.asymmetric.x25519 import (
    X25519PrivateKey,
    X25519PublicKey,
)
from cryptography.hazmat.primitives.kdf.hkdf import HKDF
from cryptography.hazmat.primitives.serialization import (
    Encoding,
    NoEncryption,
    PrivateFormat,
    PublicFormat,
)

from . import machine
from .assembler import ImageFormatError, decode_image
from .engine import AEAD_SCHEME, EncryptionEngine, EngineError, SessionKey
from .isa import Mode
from .model import Status, SystemState

_TRANSCRIPT_LABEL = b"blindsim-handshake-v1"
_EVIDENCE_LABEL = b"blindsim-evidence-v1"
_SESSION_INFO = b"blindsim-session-v1"

_SCHEME_IDS = {AEAD_SCHEME: 1}
_SCHEME_NAMES = {v: k for k, v in _SCHEME_IDS.items()}

_MODE_IDS = {Mode.MODEL: 0, Mode.HARDWARE: 1}
_MODE_NAMES = {v: k for k, v in _MODE_IDS.items()}


class ProtocolError(Exception):
    """Malformed frame or unexpected message."""


class VerifyError(Exception):
    """Attestation evidence or transcript failed verification."""


class FrameType(IntEnum):
    CLIENT_HELLO = 1
    HSM_HELLO = 2
    IMPORT = 3
    COMPUTE = 4
    EXPORT = 5
    RESULT = 6
    ERROR = 7


# ---------------------------------------------------------------------------
# Messages
# ---------------------------------------------------------------------------


@dataclass(frozen=True, slots=True)
class Claims:
    """What the device attests about itself."""

    has_taint_extensions: bool = True
    os_certified: bool = True
    policy_mode: Mode = Mode.HARDWARE
    aead_scheme: str = AEAD_SCHEME

    def encode(self) -> bytes:
        if self.aead_scheme not in _SCHEME_IDS:
            raise ProtocolError(f"unknown AEAD scheme {self.aead_scheme!r}")
        return bytes(
            [
                1 if self.has_taint_extensions else 0,
                1 if self.os_certified else 0,
                _MODE_IDS[self.policy_mode],
                _SCHEME_IDS[self.aead_scheme],
            ]
        )

    @classmethod
    def parse(cls, data: bytes) -> Claims:
        if len(data) != 4:
            raise ProtocolError("claims must be 4 bytes")
        if data[0] > 1 or data[1] > 1:
            raise ProtocolError("boolean claim out of range")
        if data[2] not in _MODE_NAMES or data[3] not in _SCHEME_NAMES:
            raise ProtocolError("unknown mode or scheme id")
        return cls(bool(data[0]), bool(data[1]), _MODE_NAMES[data[2]], _SCHEME_NAMES[data[3]])


@dataclass(frozen=True, slots=True)
class AttestationEvidence:
    claims: Claims
    transcript_hash: bytes
    signature: bytes


@dataclass(frozen=True, slots=True)
class ClientHello:
    ephemeral_public: bytes


@dataclass(frozen=True, slots=True)
class HsmHello:
    ephemeral_public: bytes
    evidence: AttestationEvidence


@dataclass(frozen=True, slots=True)
class ImportRequest:
    dst: int
    ciphertext: bytes


@dataclass(frozen=True, slots=True)
class ComputeRequest:
    entry: int
    image: bytes  # encoded program image


@dataclass(frozen=True, slots=True)
class ExportRequest:
    src: int
    count: int


@dataclass(frozen=True, slots=True)
class ResultResponse:
    payload: bytes


@dataclass(frozen=True, slots=True)
class ErrorResponse:
    message: str


Message = (
    ClientHello
    | HsmHello
    | ImportRequest
    | ComputeRequest
    | ExportRequest
    | ResultResponse
    | ErrorResponse
)


# ---------------------------------------------------------------------------
# Framing
# ---------------------------------------------------------------------------


def encode_frame(msg: Message) -> bytes:
    if isinstance(msg, ClientHello):
        ftype, body = FrameType.CLIENT_HELLO, msg.ephemeral_public
    elif isinstance(msg, HsmHello):
        ev = msg.evidence
        ftype = FrameType.HSM_HELLO
        body = (
            msg.ephemeral_public
            + ev.claims.encode()
            + ev.transcript_hash
            + ev.signature
        )
    elif isinstance(msg, ImportRequest):
        ftype = FrameType.IMPORT
        body = struct.pack(">QI", msg.dst, len(msg.ciphertext)) + msg.ciphertext
    elif isinstance(msg, ComputeRequest):
        ftype = FrameType.COMPUTE
        body = struct.pack(">QI", msg.entry, len(msg.image)) + msg.image
    elif isinstance(msg, ExportRequest):
        ftype = FrameType.EXPORT
        body = struct.pack(">QQ", msg.src, msg.count)
    elif isinstance(msg, ResultResponse):
        ftype, body = FrameType.RESULT, msg.payload
    elif isinstance(msg, ErrorResponse):
        ftype, body = FrameType.ERROR, msg.message.encode()
    else:
        raise ProtocolError(f"cannot encode {msg!r}")
    return struct.pack(">I", 1 + len(body)) + bytes([ftype]) + body


def decode_frame(frame: bytes) -> Message:
    """Strict inverse of :func:`encode_frame`; trailing bytes rejected."""
    if len(frame) < 5:
        raise ProtocolError("frame too short")
    (length,) = struct.unpack(">I", frame[:4])
    if length != len(frame) - 4:
        raise ProtocolError("frame length mismatch")
    ftype, body = frame[4], frame[5:]
    if ftype == FrameType.CLIENT_HELLO:
        if len(body) != 32:
            raise ProtocolError("bad hello length")
        return ClientHello(body)
    if ftype == FrameType.HSM_HELLO:
        if len(body) != 32 + 4 + 32 + 64:
            raise ProtocolError("bad hello length")
        return HsmHello(
            body[:32],
            AttestationEvidence(
                Claims.parse(body[32:36]), body[36:68], bytes(body[68:])
            ),
        )
    if ftype == FrameType.IMPORT:
        if len(body) < 12:
            raise ProtocolError("truncated import frame")
        dst, ct_len = struct.unpack(">QI", body[:12])
        if len(body) != 12 + ct_len:
            raise ProtocolError("import ciphertext length mismatch")
        return ImportRequest(dst, body[12:])
    if ftype == FrameType.COMPUTE:
        if len(body) < 12:
            raise ProtocolError("truncated compute frame")
        entry, img_len = struct.unpack(">QI", body[:12])
        if len(body) != 12 + img_len:
            raise ProtocolError("compute image length mismatch")
        return ComputeRequest(entry, body[12:])
    if ftype == FrameType.EXPORT:
        if len(body) != 16:
            raise ProtocolError("bad export frame")
        src, count = struct.unpack(">QQ", body)
        return ExportRequest(src, count)
    if ftype == FrameType.RESULT:
        return ResultResponse(body)
    if ftype == FrameType.ERROR:
        return ErrorResponse(body.decode(errors="replace"))
    raise ProtocolError(f"unknown frame type {ftype}")


def write_frame(stream, msg: Message) -> None:
    stream.write(encode_frame(msg))
    stream.flush()


def read_frame(stream) -> Message:
    header = stream.read(4)
    if len(header) != 4:
        raise ProtocolError("stream closed mid-frame")
    (length,) = struct.unpack(">I", header)
    body = stream.read(length)
    if len(body) != length:
        raise ProtocolError("stream closed mid-frame")
    return decode_frame(header + body)


# ---------------------------------------------------------------------------
# Key material helpers
# ---------------------------------------------------------------------------


def _seed_bytes(seed: int | bytes) -> bytes:
    if isinstance(seed, int):
        return seed.to_bytes(32, "big")
    return seed


def _derive_private(seed: bytes, label: bytes) -> X25519PrivateKey:
    material = hashlib.sha256(label + seed).digest()
    return X25519PrivateKey.from_private_bytes(material)


def _public_bytes(private: X25519PrivateKey) -> bytes:
    return private.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)


def make_device_keypair(seed: int | bytes | None = None) -> tuple[bytes, bytes]:
    """(private, public) Ed25519 device identity, optionally deterministic."""
    if seed is None:
        private = Ed25519PrivateKey.generate()
    else:
        material = hashlib.sha256(b"device-key" + _seed_bytes(seed)).digest()
        private = Ed25519PrivateKey.from_private_bytes(material)
    priv = private.private_bytes(Encoding.Raw, PrivateFormat.Raw, NoEncryption())
    pub = private.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)
    return priv, pub


def _transcript_hash(client_hello_frame: bytes, hsm_eph: bytes, claims: Claims) -> bytes:
    h = hashlib.sha256()
    h.update(_TRANSCRIPT_LABEL)
    h.update(client_hello_frame)
    h.update(hsm_eph)
    h.update(claims.encode())
    return h.digest()


def _derive_session_key(shared: bytes, transcript_hash: bytes, scheme: str) -> SessionKey:
    kdf = HKDF(
        algorithm=hashes.SHA256(),
        length=32,
        salt=transcript_hash,
        info=_SESSION_INFO + scheme.encode(),
    )
    return SessionKey.from_bytes(kdf.derive(shared))


# ---------------------------------------------------------------------------
# Handshake endpoints
# ---------------------------------------------------------------------------


class ClientHandshake:
    """Client side: emit a hello, then verify the device's reply.

    ``finish`` raises :class:`VerifyError` unless the evidence signature
    checks out under the expected device key, the claims satisfy the
    client's policy, and the transcript hash matches what this client
    actually sent.
    """

    def __init__(
        self,
        device_public: bytes,
        seed: int | bytes,
        require_taint_extensions: bool = True,
        require_os_certified: bool = True,
        required_mode: Mode | None = None,
        expected_scheme: str = AEAD_SCHEME,
    ):
        self._device_public = Ed25519PublicKey.from_public_bytes(device_public)
        self._private = _derive_private(_seed_bytes(seed), b"client-eph")
        self._require_taint_extensions = require_taint_extensions
        self._require_os_certified = require_os_certified
        self._required_mode = required_mode
        self._expected_scheme = expected_scheme
        self._hello_frame: bytes | None = None

    def hello(self) -> bytes:
        """The CLIENT_HELLO frame to put on the wire."""
        self._hello_frame = encode_frame(ClientHello(_public_bytes(self._private)))
        return self._hello_frame

    def finish(self, hsm_hello_frame: bytes) -> SessionKey:
        if self._hello_frame is None:
            raise ProtocolError("finish() before hello()")
        try:
            msg = decode_frame(hsm_hello_frame)
        except ProtocolError as exc:
            raise VerifyError(f"malformed reply: {exc}") from None
        if not isinstance(msg, HsmHello):
            raise VerifyError("expected a device hello")
        ev = msg.evidence

        claims = ev.claims
        if self._require_taint_extensions and not claims.has_taint_extensions:
            raise VerifyError("device lacks taint-tracking extensions")
        if self._require_os_certified and not claims.os_certified:
            raise VerifyError("device OS is not certified")
        if self._required_mode is not None and claims.policy_mode is not self._required_mode:
            raise VerifyError(f"device runs {claims.policy_mode.value} mode")
        if claims.aead_scheme != self._expected_scheme:
            raise VerifyError(f"unexpected AEAD scheme {claims.aead_scheme!r}")

        expected_hash = _transcript_hash(self._hello_frame, msg.ephemeral_public, claims)
        if ev.transcript_hash != expected_hash:
            raise VerifyError("transcript hash mismatch")
        try:
            self._device_public.verify(
                ev.signature, _EVIDENCE_LABEL + claims.encode() + ev.transcript_hash
            )
        except InvalidSignature:
            raise VerifyError("evidence signature invalid") from None

        shared = self._private.exchange(
            X25519PublicKey.from_public_bytes(msg.ephemeral_public)
        )
        return _derive_session_key(shared, ev.transcript_hash, claims.aead_scheme)


class HsmResponder:
    """Device side: answer hellos with signed evidence and derive the key.

    Each response uses a fresh ephemeral (a replayed hello still yields a
    new session key).  The derived key is handed straight to the engine
    when one is attached.
    """

    def __init__(
        self,
        device_private: bytes,
        claims: Claims,
        seed: int | bytes,
        engine: EncryptionEngine | None = None,
    ):
        self._private = Ed25519PrivateKey.from_private_bytes(device_private)
        self._claims = claims
        self._seed = _seed_bytes(seed)
        self._engine = engine
        self._sessions = 0

    def respond(self, client_hello_frame: bytes) -> tuple[bytes, SessionKey]:
        try:
            msg = decode_frame(client_hello_frame)
        except ProtocolError as exc:
            raise ProtocolError(f"malformed hello: {exc}") from None
        if not isinstance(msg, ClientHello):
            raise ProtocolError("expected a client hello")

        eph_seed = self._seed + struct.pack(">Q", self._sessions)
        self._sessions += 1
        private = _derive_private(eph_seed, b"hsm-eph")
        eph_public = _public_bytes(private)

        transcript_hash = _transcript_hash(client_hello_frame, eph_public, self._claims)
        signature = self._private.sign(
            _EVIDENCE_LABEL + self._claims.encode() + transcript_hash
        )
        shared = private.exchange(
            X25519PublicKey.from_public_bytes(msg.ephemeral_public)
        )
        key = _derive_session_key(shared, transcript_hash, self._claims.aead_scheme)
        if self._engine is not None:
            self._engine.install_session_key(key)
        hello = HsmHello(
            eph_public,
            AttestationEvidence(self._claims, transcript_hash, signature),
        )
        return encode_frame(hello), key


# ---------------------------------------------------------------------------
# Server session: the request loop behind the protocol demo
# ---------------------------------------------------------------------------

_OUTCOME_IDS = {"halted": 0, "faulted": 1, "fault-loop": 2, "step-limit": 3}
_OUTCOME_NAMES = {v: k for k, v in _OUTCOME_IDS.items()}


def encode_compute_result(outcome: str, steps: int) -> bytes:
    return bytes([_OUTCOME_IDS[outcome]]) + struct.pack(">Q", steps)


def parse_compute_result(payload: bytes) -> tuple[str, int]:
    if len(payload) != 9 or payload[0] not in _OUTCOME_NAMES:
        raise ProtocolError("bad compute result")
    return _OUTCOME_NAMES[payload[0]], struct.unpack(">Q", payload[1:])[0]


class ServerSession:
    """One client's session: handshake once, then import/compute/export.

    Owns a machine state and an engine; every compute run's trace is
    retained in :attr:`traces` (this is exactly what an observer at the
    server can see).
    """

    def __init__(
        self,
        device_private: bytes,
        claims: Claims,
        engine: EncryptionEngine,
        cfg,
        seed: int | bytes,
        max_steps: int = 100_000,
    ):
        assert isinstance(cfg, machine.MachineConfig)
        self.cfg = cfg
        self.engine = engine
        self.responder = HsmResponder(device_private, claims, seed, engine=engine)
        self.state = SystemState.initial(cfg.memory_words, cfg.cache_lines)
        self.max_steps = max_steps
        self.traces: list[str] = []

    def handle_frame(self, frame: bytes) -> bytes:
        try:
            msg = decode_frame(frame)
        except ProtocolError as exc:
            return encode_frame(ErrorResponse(str(exc)))
        try:
            if isinstance(msg, ClientHello):
                reply, _ = self.responder.respond(frame)
                return reply
            if isinstance(msg, ImportRequest):
                self.state = replace(
                    self.state,
                    memory=self.engine.import_region(
                        self.state.memory, msg.dst, msg.ciphertext
                    ),
                )
                return encode_frame(ResultResponse(b""))
            if isinstance(msg, ComputeRequest):
                image = decode_image(msg.image)
                self.state = replace(
                    machine.overlay_image(self.state, image, pc=msg.entry),
                    status=Status.RUNNING,
                    fault=None,
                )
                result = machine.run(self.state, self.cfg, self.max_steps)
                self.state = result.state
                self.traces.append(machine.format_trace(result.trace))
                return encode_frame(
                    ResultResponse(
                        encode_compute_result(result.outcome.value, result.steps)
                    )
                )
            if isinstance(msg, ExportRequest):
                envelope = self.engine.export_region(
                    self.state.memory, msg.src, msg.count
                )
                return encode_frame(ResultResponse(envelope))
            return encode_frame(ErrorResponse(f"unexpected message {type(msg).__name__}"))
        except (EngineError, ImageFormatError, machine.LoadError, ProtocolError) as exc:
            return encode_frame(ErrorResponse(f"{type(exc).__name__}: {exc}"))

    def serve_stream(self, stream) -> None:
        """Answer frames from a duplex binary stream until it closes."""
        while True:
            try:
                header = stream.read(4)
            except (OSError, ValueError):
                return
            if len(header) != 4:
                return
            (length,) = struct.unpack(">I", header)
            body = stream.read(length)
            if len(body) != length:
                return
            stream.write(self.handle_frame(header + body))
            stream.flush()
