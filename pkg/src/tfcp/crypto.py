"""Simulation-grade cryptography with production-shaped interfaces.

Signatures are Ed25519 and authenticated encryption is ChaCha20-Poly1305,
both from the ``cryptography`` package. Threshold sharing is byte-wise
Shamir over GF(256) with the AES reduction polynomial, implemented here.

Every random draw goes through a caller-supplied ``random.Random`` so that a
protocol run is replayable from its seed.
"""

from __future__ import annotations

import hashlib
import hmac
import random
from dataclasses import dataclass

from cryptography.exceptions import InvalidSignature, InvalidTag
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.ciphers.aead import ChaCha20Poly1305
from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat

from .codec import DecodeError, Reader, Writer

KEY_SIZE = 32
DIGEST_SIZE = 32
NONCE_SIZE = 12
FIELD_SIZE = 256
AES_POLY = 0x11B


class CryptoError(Exception):
    pass


class AuthenticationError(CryptoError):
    """Ciphertext, key or associated data failed authentication."""


class SharingError(CryptoError, ValueError):
    pass


class InsufficientShares(SharingError):
    pass


class MalformedShares(SharingError):
    pass


@dataclass(frozen=True)
class KeyPair:
    public_key: bytes
    secret_key: bytes = b""

    def __repr__(self) -> str:
        # keep secrets out of logs and assertion diffs
        return f"KeyPair(public_key={self.public_key.hex()[:16]}...)"


@dataclass(frozen=True)
class Share:
    index: int
    value: bytes


def digest(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


# -- signatures ---------------------------------------------------------------

def keygen(seed: bytes) -> KeyPair:
    if len(seed) != KEY_SIZE:
        raise ValueError(f"seed must be exactly {KEY_SIZE} bytes, got {len(seed)}")
    sk = Ed25519PrivateKey.from_private_bytes(bytes(seed))
    pk = sk.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)
    return KeyPair(public_key=pk, secret_key=bytes(seed))


def public_from_secret(secret_key: bytes) -> bytes:
    return keygen(secret_key).public_key


def sign(secret_key: bytes, message: bytes) -> bytes:
    return Ed25519PrivateKey.from_private_bytes(secret_key).sign(message)


def verify(public_key: bytes, message: bytes, signature: bytes) -> bool:
    try:
        Ed25519PublicKey.from_public_bytes(public_key).verify(signature, message)
    except (InvalidSignature, ValueError):
        return False
    return True


# -- authenticated encryption -------------------------------------------------

def new_shared_key(rng: random.Random) -> bytes:
    return rng.randbytes(KEY_SIZE)


def _check_key(key: bytes) -> None:
    if len(key) != KEY_SIZE:
        raise ValueError(f"key must be {KEY_SIZE} bytes")


def encrypt(key: bytes, plaintext: bytes, associated_data: bytes = b"") -> bytes:
    """Encrypt with a synthetic nonce, so equal inputs give equal ciphertexts.

    The returned ciphertext is ``nonce || sealed``.
    """
    _check_key(key)
    mac = hmac.new(key, b"nonce" + len(associated_data).to_bytes(4, "big")
                   + associated_data + plaintext, hashlib.sha256)
    nonce = mac.digest()[:NONCE_SIZE]
    return nonce + ChaCha20Poly1305(key).encrypt(nonce, plaintext, associated_data)


def decrypt(key: bytes, ciphertext: bytes, associated_data: bytes = b"") -> bytes:
    _check_key(key)
    if len(ciphertext) < NONCE_SIZE + 16:
        raise AuthenticationError("ciphertext too short")
    nonce, sealed = ciphertext[:NONCE_SIZE], ciphertext[NONCE_SIZE:]
    try:
        return ChaCha20Poly1305(key).decrypt(nonce, sealed, associated_data)
    except InvalidTag as exc:
        raise AuthenticationError("authentication failed") from exc


# -- GF(256) ------------------------------------------------------------------

def _build_tables() -> tuple[list[int], list[int]]:
    exp = [0] * 512
    log = [0] * 256
    x = 1
    for i in range(255):
        exp[i] = x
        log[x] = i
        # multiply by the generator 0x03
        x ^= (x << 1) ^ (AES_POLY if x & 0x80 else 0)
        x &= 0xFF
    for i in range(255, 512):
        exp[i] = exp[i - 255]
    return exp, log


_EXP, _LOG = _build_tables()


def gf_mul(a: int, b: int) -> int:
    if a == 0 or b == 0:
        return 0
    return _EXP[_LOG[a] + _LOG[b]]


def gf_inv(a: int) -> int:
    if a == 0:
        raise ZeroDivisionError("0 has no inverse in GF(256)")
    return _EXP[255 - _LOG[a]]


def gf_div(a: int, b: int) -> int:
    return gf_mul(a, gf_inv(b))


def gf_poly_eval(coeffs, x: int) -> int:
    """Horner evaluation; ``coeffs[0]`` is the constant term."""
    y = 0
    for c in reversed(coeffs):
        y = gf_mul(y, x) ^ c
    return y


# -- Shamir sharing -----------------------------------------------------------

def split_secret(secret: bytes, t: int, m: int, rng: random.Random | None = None) -> list[Share]:
    if not 1 <= t <= m <= FIELD_SIZE - 1:
        raise SharingError(f"need 1 <= t <= m <= 255, got t={t}, m={m}")
    rng = rng or random.Random()
    polys = [[b] + [rng.randrange(FIELD_SIZE) for _ in range(t - 1)] for b in secret]
    return [
        Share(index=x, value=bytes(gf_poly_eval(p, x) for p in polys))
        for x in range(1, m + 1)
    ]


def lagrange_at_zero(xs: list[int]) -> list[int]:
    coeffs = []
    for i, xi in enumerate(xs):
        num, den = 1, 1
        for j, xj in enumerate(xs):
            if i != j:
                num = gf_mul(num, xj)
                den = gf_mul(den, xj ^ xi)
        coeffs.append(gf_div(num, den))
    return coeffs


def reconstruct_secret(shares: list[Share], t: int) -> bytes:
    if t < 1:
        raise SharingError("t must be at least 1")
    shares = list(shares)
    indices = [s.index for s in shares]
    if len(set(indices)) != len(indices):
        raise MalformedShares("duplicate share indices")
    if any(not 1 <= i <= FIELD_SIZE - 1 for i in indices):
        raise MalformedShares("share index out of range")
    if len({len(s.value) for s in shares}) > 1:
        raise MalformedShares("share values differ in length")
    if len(shares) < t:
        raise InsufficientShares(f"need {t} shares, got {len(shares)}")
    used = shares[:t]
    lam = lagrange_at_zero([s.index for s in used])
    out = bytearray(len(used[0].value))
    for coeff, share in zip(lam, used):
        for k, y in enumerate(share.value):
            out[k] ^= gf_mul(coeff, y)
    return bytes(out)


# -- wire forms ---------------------------------------------------------------

def encode_share(share: Share) -> bytes:
    return Writer().u8(share.index).blob(share.value).getvalue()


def decode_share(data: bytes) -> Share:
    r = Reader(data)
    share = Share(index=r.u8(), value=r.blob())
    r.done()
    if share.index == 0:
        raise DecodeError("share index 0 is reserved for the secret")
    return share


def encode_key(key: bytes) -> bytes:
    return Writer().blob(key).getvalue()


def decode_key(data: bytes) -> bytes:
    r = Reader(data)
    key = r.blob()
    r.done()
    if len(key) != KEY_SIZE:
        raise DecodeError("bad key length")
    return key


def encode_ciphertext(ciphertext: bytes) -> bytes:
    return Writer().blob(ciphertext).getvalue()


def decode_ciphertext(data: bytes) -> bytes:
    r = Reader(data)
    ct = r.blob()
    r.done()
    return ct
