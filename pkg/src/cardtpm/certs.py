"""Device identity plumbing: minimal certificates and P-256 signing.

Certificates are deliberately small length-prefixed records (subject,
public key, issuer, signature over subject||pubkey) rather than X.509; the
chain is always depth one, rooted at a vendor CA.

Two signer backends produce interchangeable DER ECDSA-SHA256 signatures:

* ``FastSigner`` wraps the OpenSSL-backed ``cryptography`` primitives.
* ``DeterministicSigner`` is a small pure-Python P-256 with a derived
  nonce, so seeded simulation runs are bit-reproducible.

Verification always goes through OpenSSL.  The bundled test vendor CA uses
a fixed, public private-key value: it endorses emulated devices only and
secures nothing real.
"""

from __future__ import annotations

import hashlib
import hmac
from dataclasses import dataclass

import gmpy2
from gmpy2 import mpz
from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.asymmetric import ec
from cryptography.hazmat.primitives.asymmetric.utils import (
    decode_dss_signature,
    encode_dss_signature,
)


class CertError(ValueError):
    pass


# NIST P-256 domain parameters.
_P = mpz(0xFFFFFFFF00000001000000000000000000000000FFFFFFFFFFFFFFFFFFFFFFFF)
_N = mpz(0xFFFFFFFF00000000FFFFFFFFFFFFFFFFBCE6FAADA7179E84F3B9CAC2FC632551)
_A = mpz(-3) % _P
_B = mpz(0x5AC635D8AA3A93E7B3EBBD55769886BC651D06B0CC53B0F63BCE3C3E27D2604B)
_GX = mpz(0x6B17D1F2E12C4247F8BCE6E563A440F277037D812DEB33A0F4A13945D898C296)
_GY = mpz(0x4FE342E2FE1A7F9B8EE7EB4A7C0F9E162BCE33576B315ECECBB6406837BF51F5)
CURVE_ORDER = int(_N)


def _jac_double(pt):
    if pt is None:
        return None
    x, y, z = pt
    if y == 0:
        return None
    ysq = (y * y) % _P
    s = (4 * x * ysq) % _P
    m = (3 * x * x + _A * z**4) % _P
    nx = (m * m - 2 * s) % _P
    ny = (m * (s - nx) - 8 * ysq * ysq) % _P
    nz = (2 * y * z) % _P
    return (nx, ny, nz)


def _jac_add(p1, p2):
    if p1 is None:
        return p2
    if p2 is None:
        return p1
    x1, y1, z1 = p1
    x2, y2, z2 = p2
    z1z1, z2z2 = (z1 * z1) % _P, (z2 * z2) % _P
    u1, u2 = (x1 * z2z2) % _P, (x2 * z1z1) % _P
    s1, s2 = (y1 * z2 * z2z2) % _P, (y2 * z1 * z1z1) % _P
    if u1 == u2:
        if s1 != s2:
            return None
        return _jac_double(p1)
    h = (u2 - u1) % _P
    r = (s2 - s1) % _P
    h2 = (h * h) % _P
    h3 = (h2 * h) % _P
    v = (u1 * h2) % _P
    nx = (r * r - h3 - 2 * v) % _P
    ny = (r * (v - nx) - s1 * h3) % _P
    nz = (h * z1 * z2) % _P
    return (nx, ny, nz)


def _scalar_mul(k, pt):
    k = int(k)
    result = None
    for bit in bin(k)[2:]:
        result = _jac_double(result)
        if bit == "1":
            result = _jac_add(result, pt)
    return result


def _to_affine(pt):
    x, y, z = pt
    zi = gmpy2.invert(z, _P)
    zi2 = (zi * zi) % _P
    return ((x * zi2) % _P, (y * zi2 * zi) % _P)


_GEN = (_GX, _GY, mpz(1))

_ECDSA_SHA256 = ec.ECDSA(hashes.SHA256())


def public_point_bytes(private_value: int) -> bytes:
    """SEC1 uncompressed public point for a P-256 private scalar."""
    x, y = _to_affine(_scalar_mul(private_value, _GEN))
    return b"\x04" + int(x).to_bytes(32, "big") + int(y).to_bytes(32, "big")


class FastSigner:
    """OpenSSL-backed ECDSA-P256 signer (nondeterministic nonce)."""

    def __init__(self, private_key: ec.EllipticCurvePrivateKey):
        self._key = private_key

    @classmethod
    def generate(cls, rng=None) -> "FastSigner":
        if rng is None:
            return cls(ec.generate_private_key(ec.SECP256R1()))
        return cls(ec.derive_private_key(rng.randrange(1, CURVE_ORDER), ec.SECP256R1()))

    def sign(self, data: bytes) -> bytes:
        return self._key.sign(data, _ECDSA_SHA256)

    def public_bytes(self) -> bytes:
        nums = self._key.public_key().public_numbers()
        return b"\x04" + nums.x.to_bytes(32, "big") + nums.y.to_bytes(32, "big")


class DeterministicSigner:
    """Pure-Python ECDSA-P256 with an HMAC-derived nonce.

    Signatures depend only on (key, message), which keeps seeded scenario
    transcripts byte-stable across runs.
    """

    def __init__(self, private_value: int):
        if not 1 <= private_value < CURVE_ORDER:
            raise CertError("private value out of range")
        self.d = private_value

    @classmethod
    def generate(cls, rng) -> "DeterministicSigner":
        return cls(rng.randrange(1, CURVE_ORDER))

    def sign(self, data: bytes) -> bytes:
        z = int.from_bytes(hashlib.sha256(data).digest(), "big") % CURVE_ORDER
        seed = self.d.to_bytes(32, "big") + z.to_bytes(32, "big")
        counter = 0
        while True:
            k = int.from_bytes(
                hmac.new(seed, counter.to_bytes(4, "big"), hashlib.sha256).digest(),
                "big",
            ) % CURVE_ORDER
            counter += 1
            if k == 0:
                continue
            x, _ = _to_affine(_scalar_mul(k, _GEN))
            r = int(x) % CURVE_ORDER
            if r == 0:
                continue
            s = (pow(k, -1, CURVE_ORDER) * (z + r * self.d)) % CURVE_ORDER
            if s == 0:
                continue
            return encode_dss_signature(r, s)

    def public_bytes(self) -> bytes:
        return public_point_bytes(self.d)


class Verifier:
    """Verification handle with the decoded public key cached (hot loops)."""

    def __init__(self, public: bytes):
        self.public = public
        self._key = ec.EllipticCurvePublicKey.from_encoded_point(ec.SECP256R1(), public)

    def verify(self, data: bytes, signature: bytes) -> bool:
        try:
            self._key.verify(signature, data, _ECDSA_SHA256)
            return True
        except (InvalidSignature, ValueError):
            return False


def verify_signature(public: bytes, data: bytes, signature: bytes) -> bool:
    try:
        return Verifier(public).verify(data, signature)
    except ValueError:
        return False


# ---------------------------------------------------------------------------
# Minimal certificates.


def _lv(b: bytes) -> bytes:
    return len(b).to_bytes(2, "big") + b


def _read_lv(data: bytes, off: int) -> tuple[bytes, int]:
    if off + 2 > len(data):
        raise CertError("truncated certificate")
    ln = int.from_bytes(data[off:off + 2], "big")
    off += 2
    if off + ln > len(data):
        raise CertError("truncated certificate field")
    return data[off:off + ln], off + ln


@dataclass(frozen=True)
class Certificate:
    subject: bytes
    public_key: bytes      # SEC1 uncompressed point
    issuer: bytes
    signature: bytes       # issuer ECDSA over subject || public_key

    def to_bytes(self) -> bytes:
        return _lv(self.subject) + _lv(self.public_key) + _lv(self.issuer) + _lv(self.signature)

    @classmethod
    def from_bytes(cls, data: bytes) -> "Certificate":
        subject, off = _read_lv(data, 0)
        pub, off = _read_lv(data, off)
        issuer, off = _read_lv(data, off)
        sig, off = _read_lv(data, off)
        if off != len(data):
            raise CertError("trailing certificate bytes")
        return cls(subject=subject, public_key=pub, issuer=issuer, signature=sig)


class VendorCA:
    """Depth-one certificate authority for emulated device identities."""

    def __init__(self, signer, name: bytes = b"cardtpm test vendor CA"):
        self.signer = signer
        self.name = name
        self.public_bytes = signer.public_bytes()
        self._verifier = Verifier(self.public_bytes)

    def issue(self, subject: bytes, public_key: bytes) -> Certificate:
        return Certificate(
            subject=subject,
            public_key=public_key,
            issuer=self.name,
            signature=self.signer.sign(subject + public_key),
        )

    def verify(self, cert: Certificate) -> bool:
        if cert.issuer != self.name:
            return False
        return self._verifier.verify(cert.subject + cert.public_key, cert.signature)


# Fixed, public test-CA key: fills the role of a vendor-provisioned root for
# the emulator.  Anyone can mint "vendor" certificates; that is the point of
# a test CA.
_TEST_CA_SCALAR = int.from_bytes(hashlib.sha256(b"cardtpm test vendor CA key v1").digest(), "big") % CURVE_ORDER

_test_ca = None


def test_vendor_ca() -> VendorCA:
    global _test_ca
    if _test_ca is None:
        _test_ca = VendorCA(DeterministicSigner(_TEST_CA_SCALAR))
    return _test_ca
