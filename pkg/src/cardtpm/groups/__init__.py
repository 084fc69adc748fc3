"""Pairing-friendly group abstraction used by the attestation scheme.

Exposes immutable wrapper types (Scalar, G1Element, G2Element, GTElement)
with multiplicative notation matching the usual group-signature literature:
``*`` combines group elements, ``**`` raises to a scalar power.  The curve
backend is a 254-bit BN curve; see ``bn254.py``.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Callable, Optional

from . import bn254 as _bn


class DecodeError(ValueError):
    """Raised for malformed or off-curve element encodings."""


ORDER = int(_bn.R)

_DST_PREFIX = b"cardtpm-v1/"


def _digest(tag: str, *parts: bytes) -> bytes:
    h = hashlib.sha256()
    h.update(_DST_PREFIX + tag.encode("ascii"))
    for part in parts:
        h.update(len(part).to_bytes(4, "big"))
        h.update(part)
    return h.digest()


class Scalar:
    """Element of Z_p for the group order p (prime, ~2^254)."""

    __slots__ = ("v",)

    def __init__(self, value: int):
        self.v = int(value) % ORDER

    def __add__(self, other):
        return Scalar(self.v + _val(other))

    def __radd__(self, other):
        return Scalar(_val(other) + self.v)

    def __sub__(self, other):
        return Scalar(self.v - _val(other))

    def __rsub__(self, other):
        return Scalar(_val(other) - self.v)

    def __mul__(self, other):
        return Scalar(self.v * _val(other))

    def __rmul__(self, other):
        return Scalar(_val(other) * self.v)

    def __neg__(self):
        return Scalar(-self.v)

    def inverse(self) -> "Scalar":
        if self.v == 0:
            raise ZeroDivisionError("scalar 0 has no inverse")
        return Scalar(pow(self.v, -1, ORDER))

    def __eq__(self, other):
        return isinstance(other, (Scalar, int)) and self.v == _val(other)

    def __hash__(self):
        return hash(("scalar", self.v))

    def __int__(self):
        return self.v

    def __repr__(self):
        return f"Scalar({self.v:#x})"

    def to_bytes(self) -> bytes:
        return self.v.to_bytes(32, "big")

    @classmethod
    def from_bytes(cls, data: bytes) -> "Scalar":
        if len(data) != 32:
            raise DecodeError(f"scalar must be 32 bytes, got {len(data)}")
        v = int.from_bytes(data, "big")
        if v >= ORDER:
            raise DecodeError("scalar out of range")
        return cls(v)

    @classmethod
    def random(cls, rng, nonzero: bool = False) -> "Scalar":
        while True:
            v = rng.randrange(ORDER)
            if v or not nonzero:
                return cls(v)


def _val(x) -> int:
    if isinstance(x, Scalar):
        return x.v
    return int(x)


class G1Element:
    __slots__ = ("pt",)

    def __init__(self, pt):
        self.pt = pt  # backend Jacobian tuple or None

    def __mul__(self, other: "G1Element") -> "G1Element":
        return G1Element(_bn.g1_add(self.pt, other.pt))

    def __pow__(self, k) -> "G1Element":
        return G1Element(_bn.g1_mul(self.pt, _val(k)))

    def inverse(self) -> "G1Element":
        return G1Element(_bn.g1_neg(self.pt))

    def is_identity(self) -> bool:
        return self.pt is None

    def __eq__(self, other):
        return isinstance(other, G1Element) and _bn.g1_eq(self.pt, other.pt)

    def __hash__(self):
        return hash(("g1", self.to_bytes()))

    def __repr__(self):
        return f"G1({self.to_bytes().hex()})"

    def to_bytes(self) -> bytes:
        if self.pt is None:
            return b"\x00" * 33
        x, y = _bn.g1_to_affine(self.pt)
        tag = 0x02 | (int(y) & 1)
        return bytes([tag]) + int(x).to_bytes(32, "big")

    @classmethod
    def from_bytes(cls, data: bytes) -> "G1Element":
        if len(data) != 33:
            raise DecodeError(f"G1 encoding must be 33 bytes, got {len(data)}")
        if data == b"\x00" * 33:
            return cls(None)
        tag = data[0]
        if tag not in (0x02, 0x03):
            raise DecodeError(f"bad G1 tag {tag:#x}")
        x = int.from_bytes(data[1:], "big")
        if x >= _bn.P:
            raise DecodeError("G1 x coordinate out of range")
        pt = _bn.g1_from_x(x, tag & 1)
        if pt is None:
            raise DecodeError("G1 x coordinate is not on the curve")
        return cls(pt)


class G2Element:
    __slots__ = ("pt", "_prep")

    def __init__(self, pt):
        self.pt = pt
        self._prep = None

    def __mul__(self, other: "G2Element") -> "G2Element":
        return G2Element(_bn.g2_add(self.pt, other.pt))

    def __pow__(self, k) -> "G2Element":
        return G2Element(_bn.g2_mul(self.pt, _val(k)))

    def inverse(self) -> "G2Element":
        return G2Element(_bn.g2_neg(self.pt))

    def is_identity(self) -> bool:
        return self.pt is None

    def prepared(self):
        if self._prep is None and self.pt is not None:
            self._prep = _bn.prepare_g2(self.pt)
        return self._prep

    def __eq__(self, other):
        return isinstance(other, G2Element) and _bn.g2_eq(self.pt, other.pt)

    def __hash__(self):
        return hash(("g2", self.to_bytes()))

    def __repr__(self):
        return f"G2({self.to_bytes().hex()})"

    def to_bytes(self) -> bytes:
        if self.pt is None:
            return b"\x00" * 65
        x, y = _bn.g2_to_affine(self.pt)
        parity = int(y[0]) & 1 if y[0] != 0 else int(y[1]) & 1
        tag = 0x02 | parity
        return bytes([tag]) + int(x[0]).to_bytes(32, "big") + int(x[1]).to_bytes(32, "big")

    @classmethod
    def from_bytes(cls, data: bytes) -> "G2Element":
        if len(data) != 65:
            raise DecodeError(f"G2 encoding must be 65 bytes, got {len(data)}")
        if data == b"\x00" * 65:
            return cls(None)
        tag = data[0]
        if tag not in (0x02, 0x03):
            raise DecodeError(f"bad G2 tag {tag:#x}")
        c0 = int.from_bytes(data[1:33], "big")
        c1 = int.from_bytes(data[33:], "big")
        if c0 >= _bn.P or c1 >= _bn.P:
            raise DecodeError("G2 x coordinate out of range")
        x = (_bn.mpz(c0), _bn.mpz(c1))
        rhs = _bn.fp2_add(_bn.fp2_mul(_bn.fp2_sqr(x), x), _bn.TWIST_B)
        y = _bn.fp2_sqrt(rhs)
        if y is None:
            raise DecodeError("G2 x coordinate is not on the twist")
        parity = int(y[0]) & 1 if y[0] != 0 else int(y[1]) & 1
        if parity != (tag & 1):
            y = _bn.fp2_neg(y)
        pt = (x, y, _bn.FP2_ONE)
        if not _bn.g2_in_subgroup(pt):
            raise DecodeError("G2 point not in the prime-order subgroup")
        return cls(pt)


class GTElement:
    __slots__ = ("v",)

    def __init__(self, v):
        self.v = v  # backend Fp12 tuple

    def __mul__(self, other: "GTElement") -> "GTElement":
        return GTElement(_bn.fp12_mul(self.v, other.v))

    def __pow__(self, k) -> "GTElement":
        return GTElement(_bn.fp12_pow(self.v, _val(k) % ORDER))

    def inverse(self) -> "GTElement":
        return GTElement(_bn.fp12_inv(self.v))

    def is_one(self) -> bool:
        return self.v == _bn.FP12_ONE

    def __eq__(self, other):
        return isinstance(other, GTElement) and self.v == other.v

    def __hash__(self):
        return hash(("gt", self.to_bytes()))

    def __repr__(self):
        return f"GT({self.to_bytes()[:8].hex()}...)"

    def to_bytes(self) -> bytes:
        out = bytearray()
        for six in self.v:
            for two in six:
                for c in two:
                    out += int(c).to_bytes(32, "big")
        return bytes(out)


def pairing(a: G1Element, b: G2Element) -> GTElement:
    """Bilinear map e: G1 x G2 -> GT."""
    if not isinstance(a, G1Element) or not isinstance(b, G2Element):
        raise TypeError("pairing expects (G1Element, G2Element)")
    if a.is_identity() or b.is_identity():
        return GTElement(_bn.FP12_ONE)
    return GTElement(_bn.final_exponentiation(_bn.miller_loop(b.prepared(), a.pt)))


def pairing_product_is_one(*pairs) -> bool:
    """Check prod e(a_i, b_i) == 1 with a single final exponentiation."""
    mm = [(a.pt, b.prepared()) for a, b in pairs if not (a.is_identity() or b.is_identity())]
    return _bn.multi_miller(mm) == _bn.FP12_ONE


def hash_to_zp(msg: bytes, tag: str = "hash-to-zp") -> Scalar:
    return Scalar(int.from_bytes(_digest(tag, msg), "big"))


def hash_to_g1(msg: bytes, tag: str = "hash-to-g1") -> G1Element:
    """Deterministic try-and-increment map onto the curve (never identity)."""
    for counter in range(256):
        h = _digest(tag, bytes([counter]), msg)
        x = int.from_bytes(h, "big") % _bn.P
        pt = _bn.g1_from_x(x, h[-1] & 1)
        if pt is not None:
            return G1Element(pt)
    raise RuntimeError("hash_to_g1 failed after 256 counters")  # pragma: no cover


def hash_elements(tag: str, *parts: bytes) -> Scalar:
    """Length-prefixed multi-part hash into Z_p (Fiat-Shamir challenges)."""
    return Scalar(int.from_bytes(_digest(tag, *parts), "big"))


@dataclass(frozen=True)
class GroupParams:
    """Public group description: order, generators, pairing and hash maps."""

    p: int
    g1: G1Element
    g2: G2Element
    gT: GTElement
    security: int
    pair: Callable[[G1Element, G2Element], GTElement] = field(default=pairing, repr=False)

    def random_scalar(self, rng, nonzero: bool = False) -> Scalar:
        return Scalar.random(rng, nonzero=nonzero)

    def random_g1(self, rng) -> G1Element:
        return self.g1 ** Scalar.random(rng, nonzero=True)

    def hash_to_zp(self, msg: bytes, tag: str = "hash-to-zp") -> Scalar:
        return hash_to_zp(msg, tag)

    def hash_to_g1(self, msg: bytes, tag: str = "hash-to-g1") -> G1Element:
        return hash_to_g1(msg, tag)


_DEFAULT: Optional[GroupParams] = None


def default_params(security: int = 128) -> GroupParams:
    """The package-wide BN254 instantiation (prepared generators cached)."""
    global _DEFAULT
    if _DEFAULT is None or _DEFAULT.security != security:
        g1 = G1Element(_bn.G1_GEN)
        g2 = G2Element(_bn.G2_GEN)
        _DEFAULT = GroupParams(
            p=ORDER, g1=g1, g2=g2, gT=pairing(g1, g2), security=security
        )
    return _DEFAULT
