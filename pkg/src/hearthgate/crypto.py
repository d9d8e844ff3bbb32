"""Cryptographic primitives for the onboarding protocol.

Public-key encryption is KEM-hybrid: a key encapsulation produces a shared
secret that keys an AEAD over the payload. The KEM is a pluggable backend;
the default is X25519 (fast, battle-tested), with a pure-Python ML-KEM-512
backend available for post-quantum runs. Because KEM keys cannot sign, every
role keypair is generated together with a companion Ed25519 signing pair
bound to the same role tag, and the public halves travel together.

All randomness comes from an injected :class:`~hearthgate.runtime.Rng` and
all expiry checks from an injected timestamp, so protocol runs replay
deterministically.
"""

from __future__ import annotations

import hashlib
import hmac
import struct
from dataclasses import dataclass
from enum import Enum

from cryptography.exceptions import InvalidSignature, InvalidTag
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.asymmetric.x25519 import (
    X25519PrivateKey,
    X25519PublicKey,
)
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from . import mlkem
from .runtime import Rng


class CryptoError(Exception):
    """Base class for failures raised by this module."""


class MalformedKey(CryptoError):
    pass


class DecryptionFailure(CryptoError):
    """Wrong key or tampered ciphertext. Decryption is atomic: no partial output."""


class KeyExpired(CryptoError):
    pass


class RoleTag(Enum):
    """Which relationship a keypair serves: the four protocol session pairs,
    plus ledger-side organization credentials."""

    SERVER_FOR_AUTH = 0
    AUTH_FOR_SERVER = 1
    DEVICE_FOR_SERVER = 2
    SERVER_FOR_DEVICE = 3
    ORG_CREDENTIAL = 4


AEAD_NONCE_LEN = 12
AEAD_TAG_LEN = 16
NONCE_LEN = 16
UUID_LEN = 16
LINK_KEY_LEN = 32
DEVICE_TOKEN_LEN = 32
TOTP_SECRET_LEN = 20
TOTP_DIGITS = 8
TOTP_STEP = 30

DEFAULT_KEM = "x25519"
SIG_ALGO = "ed25519"


def sha256(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


def _key_id(algo: str, public: bytes) -> str:
    return sha256(algo.encode() + b"|" + public).hex()[:16]


@dataclass(frozen=True)
class PublicKey:
    role_tag: RoleTag
    algo: str
    key: bytes
    created_at: float
    ttl: float

    @property
    def key_id(self) -> str:
        return _key_id(self.algo, self.key)

    def expired(self, now: float) -> bool:
        return now > self.created_at + self.ttl


@dataclass(frozen=True)
class KeyPair:
    role_tag: RoleTag
    algo: str
    public_key: bytes
    secret_key: bytes
    created_at: float
    ttl: float

    @property
    def public(self) -> PublicKey:
        return PublicKey(self.role_tag, self.algo, self.public_key,
                         self.created_at, self.ttl)

    @property
    def key_id(self) -> str:
        return _key_id(self.algo, self.public_key)

    def expired(self, now: float) -> bool:
        return now > self.created_at + self.ttl


def _ensure_fresh(key: KeyPair | PublicKey, now: float) -> None:
    if key.expired(now):
        raise KeyExpired(
            f"{key.algo} key for {key.role_tag.name} expired "
            f"(created {key.created_at}, ttl {key.ttl}, now {now})"
        )


# ---------------------------------------------------------------------------
# KEM backends
# ---------------------------------------------------------------------------

class _X25519Backend:
    """ECIES-style KEM: ephemeral X25519 exchange, HKDF-free SHA-256 KDF."""

    name = "x25519"

    def keygen(self, rng: Rng) -> tuple[bytes, bytes]:
        secret = rng.bytes(32)
        sk = X25519PrivateKey.from_private_bytes(secret)
        pk = sk.public_key().public_bytes_raw()
        return pk, secret

    def encaps(self, peer_public: bytes, rng: Rng) -> tuple[bytes, bytes]:
        try:
            peer = X25519PublicKey.from_public_bytes(peer_public)
        except ValueError as exc:
            raise MalformedKey(str(exc)) from exc
        eph_secret = rng.bytes(32)
        eph = X25519PrivateKey.from_private_bytes(eph_secret)
        encapsulation = eph.public_key().public_bytes_raw()
        raw = eph.exchange(peer)
        return encapsulation, self._kdf(raw, encapsulation, peer_public)

    def decaps(self, secret: bytes, encapsulation: bytes) -> bytes:
        try:
            sk = X25519PrivateKey.from_private_bytes(secret)
            eph_pub = X25519PublicKey.from_public_bytes(encapsulation)
        except ValueError as exc:
            raise MalformedKey(str(exc)) from exc
        raw = sk.exchange(eph_pub)
        own_public = sk.public_key().public_bytes_raw()
        return self._kdf(raw, encapsulation, own_public)

    @staticmethod
    def _kdf(raw: bytes, encapsulation: bytes, recipient_public: bytes) -> bytes:
        # Bind the derived key to both the ephemeral and recipient keys.
        return sha256(b"hearthgate-kem-v1|" + raw + encapsulation + recipient_public)


class _MlKem512Backend:
    name = "ml-kem-512"

    def keygen(self, rng: Rng) -> tuple[bytes, bytes]:
        return mlkem.keygen(rng.bytes(64))

    def encaps(self, peer_public: bytes, rng: Rng) -> tuple[bytes, bytes]:
        try:
            return mlkem.encaps(peer_public, rng.bytes(32))
        except ValueError as exc:
            raise MalformedKey(str(exc)) from exc

    def decaps(self, secret: bytes, encapsulation: bytes) -> bytes:
        try:
            return mlkem.decaps(secret, encapsulation)
        except ValueError as exc:
            raise MalformedKey(str(exc)) from exc


_KEM_BACKENDS = {
    "x25519": _X25519Backend(),
    "ml-kem-512": _MlKem512Backend(),
}


def kem_backend(name: str):
    try:
        return _KEM_BACKENDS[name]
    except KeyError:
        raise MalformedKey(f"unknown KEM backend {name!r}") from None


def kem_keygen(role_tag: RoleTag, ttl: float, rng: Rng, now: float,
               algo: str = DEFAULT_KEM) -> KeyPair:
    """Generate an ephemeral KEM pair for one role relationship."""
    if ttl <= 0:
        raise ValueError("ttl must be positive")
    public, secret = kem_backend(algo).keygen(rng)
    return KeyPair(role_tag, algo, public, secret, now, ttl)


def sig_keygen(role_tag: RoleTag, ttl: float, rng: Rng, now: float) -> KeyPair:
    """Generate the companion Ed25519 signing pair for a role."""
    if ttl <= 0:
        raise ValueError("ttl must be positive")
    secret = rng.bytes(32)
    sk = Ed25519PrivateKey.from_private_bytes(secret)
    public = sk.public_key().public_bytes_raw()
    return KeyPair(role_tag, SIG_ALGO, public, secret, now, ttl)


@dataclass(frozen=True)
class RolePublic:
    kem: PublicKey
    sig: PublicKey


@dataclass(frozen=True)
class RoleKeys:
    """KEM pair plus companion signing pair, exchanged as one bundle."""

    kem: KeyPair
    sig: KeyPair

    @property
    def public(self) -> RolePublic:
        return RolePublic(self.kem.public, self.sig.public)


def generate_role_keys(role_tag: RoleTag, ttl: float, rng: Rng, now: float,
                       kem_algo: str = DEFAULT_KEM) -> RoleKeys:
    return RoleKeys(
        kem=kem_keygen(role_tag, ttl, rng, now, algo=kem_algo),
        sig=sig_keygen(role_tag, ttl, rng, now),
    )


# ---------------------------------------------------------------------------
# AEAD and hybrid encryption
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AeadBox:
    nonce: bytes  # 12 bytes
    body: bytes
    tag: bytes    # 16 bytes


def aead_seal(key: bytes, plaintext: bytes, rng: Rng, aad: bytes = b"") -> AeadBox:
    if len(key) != 32:
        raise MalformedKey("AEAD key must be 32 bytes")
    nonce = rng.bytes(AEAD_NONCE_LEN)
    sealed = AESGCM(key).encrypt(nonce, plaintext, aad)
    return AeadBox(nonce=nonce, body=sealed[:-AEAD_TAG_LEN], tag=sealed[-AEAD_TAG_LEN:])


def aead_open(key: bytes, box: AeadBox, aad: bytes = b"") -> bytes:
    if len(key) != 32:
        raise MalformedKey("AEAD key must be 32 bytes")
    try:
        return AESGCM(key).decrypt(box.nonce, box.body + box.tag, aad)
    except InvalidTag as exc:
        raise DecryptionFailure("AEAD authentication failed") from exc


@dataclass(frozen=True)
class HybridCiphertext:
    encapsulation: bytes
    aead_nonce: bytes
    body: bytes
    auth_tag: bytes


def hybrid_encrypt(public: PublicKey, plaintext: bytes, rng: Rng,
                   now: float) -> HybridCiphertext:
    """Encrypt to a KEM public key: encapsulate, then AEAD under the shared secret."""
    if not plaintext:
        raise ValueError("plaintext must be nonempty")
    _ensure_fresh(public, now)
    encapsulation, shared = kem_backend(public.algo).encaps(public.key, rng)
    box = aead_seal(shared, plaintext, rng, aad=encapsulation)
    return HybridCiphertext(encapsulation, box.nonce, box.body, box.tag)


def hybrid_decrypt(pair: KeyPair, ciphertext: HybridCiphertext,
                   now: float) -> bytes:
    _ensure_fresh(pair, now)
    try:
        shared = kem_backend(pair.algo).decaps(pair.secret_key,
                                               ciphertext.encapsulation)
        box = AeadBox(ciphertext.aead_nonce, ciphertext.body, ciphertext.auth_tag)
        return aead_open(shared, box, aad=ciphertext.encapsulation)
    except (MalformedKey, DecryptionFailure, ValueError) as exc:
        raise DecryptionFailure(f"hybrid decryption failed: {exc}") from exc


# ---------------------------------------------------------------------------
# Signatures
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Signature:
    signer_tag: RoleTag
    value: bytes


def sign(pair: KeyPair, message: bytes, now: float) -> Signature:
    if pair.algo != SIG_ALGO:
        raise MalformedKey(f"cannot sign with a {pair.algo} key")
    _ensure_fresh(pair, now)
    sk = Ed25519PrivateKey.from_private_bytes(pair.secret_key)
    return Signature(signer_tag=pair.role_tag, value=sk.sign(message))


def verify(public: PublicKey, message: bytes, signature: Signature,
           now: float) -> bool:
    if public.algo != SIG_ALGO:
        raise MalformedKey(f"cannot verify with a {public.algo} key")
    _ensure_fresh(public, now)
    if signature.signer_tag != public.role_tag:
        return False
    try:
        pk = Ed25519PublicKey.from_public_bytes(public.key)
    except ValueError as exc:
        raise MalformedKey(str(exc)) from exc
    try:
        pk.verify(signature.value, message)
        return True
    except InvalidSignature:
        return False


# ---------------------------------------------------------------------------
# One-time tokens (HOTP/TOTP, 8 digits, SHA-1, 30 s step)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TransientToken:
    digits: str
    issued_step: int


def hotp(secret: bytes, counter: int, digits: int = TOTP_DIGITS) -> str:
    mac = hmac.new(secret, struct.pack(">Q", counter), hashlib.sha1).digest()
    offset = mac[-1] & 0x0F
    code = struct.unpack(">I", mac[offset:offset + 4])[0] & 0x7FFFFFFF
    return str(code % 10 ** digits).zfill(digits)


def totp_generate(secret: bytes, now: float, step: int = TOTP_STEP) -> TransientToken:
    """One-time token for the 30-second step containing ``now``."""
    step_index = int(now // step)
    return TransientToken(digits=hotp(secret, step_index), issued_step=step_index)


def totp_verify(secret: bytes, digits: str, now: float, step: int = TOTP_STEP) -> bool:
    """Strict single-step check: valid only in the step containing ``now``.

    No step skew is allowed; a wider window would stretch the brute-force
    exposure the short validity is meant to bound.
    """
    if not isinstance(digits, str) or len(digits) != TOTP_DIGITS or not digits.isdigit():
        return False
    expected = totp_generate(secret, now, step).digits
    return hmac.compare_digest(expected, digits)


# ---------------------------------------------------------------------------
# Random values and identifiers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Nonce:
    value: bytes  # 16 bytes

    @property
    def hex(self) -> str:
        return self.value.hex()


@dataclass(frozen=True)
class PseudoUuid:
    value: bytes  # 16 bytes, stable for a device instance

    @property
    def hex(self) -> str:
        return self.value.hex()


@dataclass(frozen=True)
class LongLivedToken:
    value: bytes  # 32 bytes


@dataclass(frozen=True)
class LinkKey:
    """Symmetric key pre-provisioned between authenticator and device."""

    value: bytes  # 32 bytes

    @property
    def key_id(self) -> str:
        return _key_id("link", self.value)


def gen_nonce(rng: Rng) -> Nonce:
    return Nonce(rng.bytes(NONCE_LEN))


def gen_pseudo_uuid(rng: Rng) -> PseudoUuid:
    return PseudoUuid(rng.bytes(UUID_LEN))


def gen_long_lived_token(rng: Rng) -> LongLivedToken:
    return LongLivedToken(rng.bytes(DEVICE_TOKEN_LEN))


def gen_link_key(rng: Rng) -> LinkKey:
    return LinkKey(rng.bytes(LINK_KEY_LEN))


def gen_totp_secret(rng: Rng) -> bytes:
    return rng.bytes(TOTP_SECRET_LEN)
