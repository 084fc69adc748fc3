"""Additively homomorphic public-key encryption (Paillier construction).

Used inside the attestation join protocol, which requires a plaintext space
covering Z_{2^(lam+3) * p^2} for group order p: the issuer's blinded response
t = b*(u' + u'' + sk_iss) + k*p must decrypt exactly, without wrapping.

Ciphertexts live in Z_{n^2}^*, plaintexts in Z_n with n = p*q an RSA modulus.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import gmpy2
from gmpy2 import mpz


class HomEncError(ValueError):
    pass


@dataclass(frozen=True)
class HomEncPublicKey:
    n: int

    @property
    def n_sq(self) -> int:
        return self.n * self.n

    @property
    def plaintext_modulus(self) -> int:
        return self.n

    def to_bytes(self) -> bytes:
        size = (self.n.bit_length() + 7) // 8
        return size.to_bytes(4, "big") + self.n.to_bytes(size, "big")

    @classmethod
    def from_bytes(cls, data: bytes) -> "HomEncPublicKey":
        if len(data) < 4:
            raise HomEncError("truncated public key")
        size = int.from_bytes(data[:4], "big")
        if len(data) != 4 + size:
            raise HomEncError("public key length mismatch")
        return cls(int.from_bytes(data[4:], "big"))


@dataclass(frozen=True)
class HomEncKeyPair:
    public: HomEncPublicKey
    p: int
    q: int
    max_plaintext: int  # M_max: the plaintext space bound guaranteed at keygen

    @property
    def n(self) -> int:
        return self.public.n

    def _crt_parts(self):
        p, q = mpz(self.p), mpz(self.q)
        n = p * q
        p_sq, q_sq = p * p, q * q
        # g = n+1; h_p = L_p(g^(p-1) mod p^2)^-1 mod p, likewise for q
        hp = gmpy2.invert((gmpy2.powmod(n + 1, p - 1, p_sq) - 1) // p, p)
        hq = gmpy2.invert((gmpy2.powmod(n + 1, q - 1, q_sq) - 1) // q, q)
        q_inv_p = gmpy2.invert(q, p)
        return p, q, p_sq, q_sq, hp, hq, q_inv_p


@dataclass(frozen=True)
class HomCiphertext:
    value: int

    def to_bytes(self, pk: HomEncPublicKey) -> bytes:
        size = (pk.n_sq.bit_length() + 7) // 8
        return self.value.to_bytes(size, "big")

    @classmethod
    def from_bytes(cls, data: bytes, pk: HomEncPublicKey) -> "HomCiphertext":
        size = (pk.n_sq.bit_length() + 7) // 8
        if len(data) != size:
            raise HomEncError("ciphertext length mismatch")
        return cls(int.from_bytes(data, "big"))


def _random_prime(bits: int, rng) -> int:
    while True:
        candidate = rng.getrandbits(bits) | (1 << (bits - 1)) | (1 << (bits - 2)) | 1
        p = int(gmpy2.next_prime(mpz(candidate)))
        if p.bit_length() == bits:
            return p


def he_keygen(lam: int, group_order: int, rng) -> HomEncKeyPair:
    """Key generation sized so the plaintext space covers 2^(lam+3) * p^2."""
    if lam < 80:
        raise HomEncError(f"security parameter too small: {lam}")
    bound = (1 << (lam + 3)) * group_order * group_order
    # Factoring-hardness floor scales with lam (RSA-1024 ~ 80-bit security);
    # a 256-bit group order lands on 1024-bit prime factors / 2048-bit n.
    factor_bits = 512 if lam < 112 else 1024
    while (1 << (2 * factor_bits - 1)) < bound:
        factor_bits += 512
    while True:
        p = _random_prime(factor_bits, rng)
        q = _random_prime(factor_bits, rng)
        if p != q:
            break
    n = p * q
    assert n >= bound
    return HomEncKeyPair(public=HomEncPublicKey(n=n), p=p, q=q, max_plaintext=n)


def he_enc(pk: HomEncPublicKey, m: int, rng) -> HomCiphertext:
    """Probabilistic encryption of m in [0, n)."""
    n = mpz(pk.n)
    m = mpz(m)
    if m < 0 or m >= n:
        raise HomEncError("plaintext out of range")
    n_sq = n * n
    while True:
        r = mpz(rng.randrange(1, int(n)))
        if gmpy2.gcd(r, n) == 1:
            break
    # g = n+1, so g^m = 1 + m*n (mod n^2)
    c = ((1 + m * n) * gmpy2.powmod(r, n, n_sq)) % n_sq
    return HomCiphertext(int(c))


def he_enc_with_randomness(pk: HomEncPublicKey, m: int, randomness: int) -> HomCiphertext:
    """Encryption with caller-supplied randomness (zero-knowledge plumbing)."""
    n = mpz(pk.n)
    m = mpz(m)
    if m < 0 or m >= n:
        raise HomEncError("plaintext out of range")
    if not 0 < randomness < n or gmpy2.gcd(mpz(randomness), n) != 1:
        raise HomEncError("bad encryption randomness")
    n_sq = n * n
    c = ((1 + m * n) * gmpy2.powmod(mpz(randomness), n, n_sq)) % n_sq
    return HomCiphertext(int(c))


def random_unit(pk: HomEncPublicKey, rng) -> int:
    """A uniform unit of Z_n^* (encryption randomness)."""
    n = pk.n
    while True:
        r = rng.randrange(1, n)
        if math.gcd(r, n) == 1:
            return r


def he_dec(keypair: HomEncKeyPair, c: HomCiphertext) -> int:
    n = mpz(keypair.n)
    n_sq = n * n
    cv = mpz(c.value)
    if cv <= 0 or cv >= n_sq or gmpy2.gcd(cv, n) != 1:
        raise HomEncError("malformed ciphertext")
    # CRT decryption: recover m mod p and m mod q independently.
    p, q, p_sq, q_sq, hp, hq, q_inv_p = keypair._crt_parts()
    mp = ((gmpy2.powmod(cv % p_sq, p - 1, p_sq) - 1) // p * hp) % p
    mq = ((gmpy2.powmod(cv % q_sq, q - 1, q_sq) - 1) // q * hq) % q
    m = mq + q * (((mp - mq) * q_inv_p) % p)
    return int(m % n)


def he_add(pk: HomEncPublicKey, c1: HomCiphertext, c2: HomCiphertext) -> HomCiphertext:
    n_sq = pk.n_sq
    for c in (c1, c2):
        if not 0 < c.value < n_sq:
            raise HomEncError("malformed ciphertext")
    return HomCiphertext((c1.value * c2.value) % n_sq)


def he_mulc(pk: HomEncPublicKey, c: HomCiphertext, k: int) -> HomCiphertext:
    n_sq = pk.n_sq
    if not 0 < c.value < n_sq:
        raise HomEncError("malformed ciphertext")
    k = k % pk.n
    return HomCiphertext(int(gmpy2.powmod(mpz(c.value), mpz(k), mpz(n_sq))))


def encode_signed(pk: HomEncPublicKey, m: int) -> int:
    """Wraparound encoding for negative plaintexts: -x maps to n - x."""
    if abs(m) >= pk.n // 2:
        raise HomEncError("magnitude too large for signed encoding")
    return m % pk.n


def decode_signed(pk: HomEncPublicKey, m: int) -> int:
    return m - pk.n if m > pk.n // 2 else m
