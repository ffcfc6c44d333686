"""Node identities, signing, and canonical byte encoding.

Transactions, alerts, and blocks are signed with Ed25519 (deterministic
signatures) and hashed with SHA-256. Key pairs are derived
deterministically from (seed, node id) so a whole deployment is
reproducible from one integer.

Canonical encoding: length-prefixed fields in declared order, integers
big-endian, floats as IEEE-754 big-endian doubles. Two distinct payloads
can never share a canonical byte string.
"""

from __future__ import annotations

import hashlib
import hmac as _hmac
import struct
from dataclasses import dataclass, field
from enum import Enum

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)


def sha256(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


# ---------------------------------------------------------------------------
# canonical encoding primitives

def enc_u8(v: int) -> bytes:
    return struct.pack(">B", v)


def enc_u32(v: int) -> bytes:
    return struct.pack(">I", v)


def enc_u64(v: int) -> bytes:
    return struct.pack(">Q", v)


def enc_f64(v: float) -> bytes:
    return struct.pack(">d", v)


def enc_bytes(b: bytes) -> bytes:
    return struct.pack(">I", len(b)) + b


def enc_str(s: str) -> bytes:
    return enc_bytes(s.encode("utf-8"))


class Decoder:
    """Sequential reader matching the enc_* functions."""

    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def _take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise ValueError("canonical decode: truncated input")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return struct.unpack(">B", self._take(1))[0]

    def u32(self) -> int:
        return struct.unpack(">I", self._take(4))[0]

    def u64(self) -> int:
        return struct.unpack(">Q", self._take(8))[0]

    def f64(self) -> float:
        return struct.unpack(">d", self._take(8))[0]

    def bytes_(self) -> bytes:
        n = self.u32()
        return self._take(n)

    def str_(self) -> str:
        return self.bytes_().decode("utf-8")

    def done(self) -> bool:
        return self.pos == len(self.data)


# ---------------------------------------------------------------------------
# identities

class Role(Enum):
    VALIDATOR = "validator"
    LIGHTWEIGHT = "lightweight"


class KeyError_(Exception):
    """Malformed key material."""


@dataclass
class Identity:
    """A node's verifiable identity; the private key stays with the owner."""

    node_id: str
    role: Role
    public_key: bytes
    _private: Ed25519PrivateKey = field(repr=False)

    def sign(self, message: bytes) -> bytes:
        return self._private.sign(message)


def keygen(seed: int, node_id: str, role: Role = Role.LIGHTWEIGHT) -> Identity:
    """Deterministic Ed25519 key pair for (seed, node_id)."""
    material = sha256(
        b"avguard.identity.v1" + enc_u64(int(seed) & 0xFFFFFFFFFFFFFFFF) + enc_str(node_id)
    )
    private = Ed25519PrivateKey.from_private_bytes(material)
    public = private.public_key().public_bytes_raw()
    return Identity(node_id=node_id, role=role, public_key=public, _private=private)


def sign(identity: Identity, message: bytes) -> bytes:
    return identity.sign(message)


def verify(public_key: bytes, message: bytes, signature: bytes) -> bool:
    if len(public_key) != 32:
        raise KeyError_(f"bad public key length {len(public_key)}")
    try:
        Ed25519PublicKey.from_public_bytes(public_key).verify(signature, message)
        return True
    except (InvalidSignature, ValueError):
        return False


# ---------------------------------------------------------------------------
# pairwise MACs for consensus traffic
#
# Protocol messages between validators are authenticated with per-pair
# session MACs instead of signatures (the classic PBFT optimization);
# only transactions, alerts, and chain contents carry signatures.

def session_key(seed: int, a: str, b: str) -> bytes:
    lo, hi = sorted((a, b))
    return sha256(b"avguard.session.v1" + enc_u64(int(seed) & 0xFFFFFFFFFFFFFFFF)
                  + enc_str(lo) + enc_str(hi))


def mac(key: bytes, message: bytes) -> bytes:
    return _hmac.new(key, message, hashlib.sha256).digest()[:16]


def mac_verify(key: bytes, message: bytes, tag: bytes) -> bool:
    return _hmac.compare_digest(mac(key, message), tag)
