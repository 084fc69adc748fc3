"""Direct anonymous attestation over a pairing-friendly group.

The scheme is a Boneh-Boyen-style credential with Fiat-Shamir signatures of
knowledge.  Roles:

* Issuer setup publishes ``gpk1 = g1^sk_iss`` and ``gpk2 = g2^sk_iss``.
* Join-Issue hands the platform a credential ``w = (A, sk_u)`` with
  ``A = g1^(1/(sk_u + sk_iss))``; the issuer certifies blindly, seeing the
  platform key only under additively homomorphic encryption.
* Attestation signatures ``(c, s1, s2, R, B, nym)`` prove knowledge of a
  certified key; pseudonyms ``nym = H0(bsn)^sk_u`` make signatures linkable
  within one basename and unlinkable across basenames.

A programmable challenge oracle plus the transcript extractor live here too;
they are test instruments for the zero-knowledge / soundness properties and
refuse to run against a non-programmable oracle.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field, replace
from typing import Optional

from . import homenc
from .groups import (
    G1Element,
    G2Element,
    GTElement,
    GroupParams,
    Scalar,
    _digest,
    default_params,
    hash_to_g1,
    pairing,
    pairing_product_is_one,
)

# Fiat-Shamir parameters for the join proof: challenge width and the
# statistical slack of the integer commitment (the "alpha in Z_p" interval
# argument).  The homomorphic message space 2^(lam+3)*p^2 absorbs the slack.
SOK_CHALLENGE_BITS = 128
SOK_SLACK_BITS = 40


class DaaError(Exception):
    pass


class IssuanceRefused(DaaError):
    """The issuer rejected a join request (proof failure)."""


class CredentialInvalid(DaaError):
    """The issuer response failed the platform's pairing check."""


class ExtractionDegenerate(DaaError):
    """Forked transcripts do not allow extraction (equal challenges, b=0)."""


class ChallengeOracle:
    """Default Fiat-Shamir challenge: a domain-separated hash into Z_p."""

    programmable = False

    def challenge(self, parts: tuple[bytes, ...]) -> Scalar:
        return Scalar(int.from_bytes(_digest("daa-sign", *parts), "big"))


class ProgrammableOracle(ChallengeOracle):
    """Random-oracle stand-in that can be programmed point-by-point (tests)."""

    programmable = True

    def __init__(self):
        self._table: dict[tuple[bytes, ...], Scalar] = {}

    def program(self, parts: tuple[bytes, ...], value: Scalar) -> None:
        self._table[parts] = value

    def challenge(self, parts: tuple[bytes, ...]) -> Scalar:
        hit = self._table.get(parts)
        return hit if hit is not None else super().challenge(parts)


@dataclass(frozen=True)
class DaaPublicParams:
    """Common reference string: group description plus issuer public keys."""

    group: GroupParams
    gpk1: G1Element
    gpk2: G2Element
    oracle: ChallengeOracle = field(default_factory=ChallengeOracle, repr=False)

    def consistent(self) -> bool:
        return pairing(self.gpk1, self.group.g2) == pairing(self.group.g1, self.gpk2)

    def with_oracle(self, oracle: ChallengeOracle) -> "DaaPublicParams":
        return replace(self, oracle=oracle)

    def challenge(self, d, nym, r, b, t1, t2, m: bytes) -> Scalar:
        # Input order fixed: gpk (the G2 issuer key), D, nym, R, B, T1, T2, m.
        parts = (
            self.gpk2.to_bytes(),
            d.to_bytes(),
            nym.to_bytes(),
            r.to_bytes(),
            b.to_bytes(),
            t1.to_bytes(),
            t2.to_bytes(),
            m,
        )
        return self.oracle.challenge(parts)


@dataclass(frozen=True)
class IssuerSecret:
    sk_iss: Scalar


@dataclass(frozen=True)
class JoinSok:
    """Proof of U' = g1^a and c = Enc(pk_E, a) with a in a bounded interval."""

    W: G1Element
    C_t: homenc.HomCiphertext
    e: int
    z: int          # integer response, NOT reduced mod p (range-checked)
    z_s: int        # combined encryption randomness


@dataclass(frozen=True)
class JoinRequest:
    U_prime: G1Element
    pk_E: homenc.HomEncPublicKey
    c_u_prime: homenc.HomCiphertext
    sok: JoinSok


@dataclass(frozen=True)
class JoinResponse:
    c_u_dblprime: homenc.HomCiphertext
    A_prime: G1Element
    u_dblprime: Scalar


@dataclass(frozen=True)
class PlatformJoinState:
    crs: DaaPublicParams
    u_prime: Scalar
    he_keypair: homenc.HomEncKeyPair


@dataclass(frozen=True)
class DaaCredential:
    A: G1Element
    sk_u: Scalar

    def valid_for(self, crs: DaaPublicParams) -> bool:
        rhs = (crs.group.g2 ** self.sk_u) * crs.gpk2
        return pairing(self.A, rhs) == crs.group.gT


@dataclass(frozen=True)
class DaaSignature:
    c: Scalar
    s1: Scalar
    s2: Scalar
    R: G1Element
    B: G1Element
    nym: G1Element
    D: Optional[G1Element] = None  # present exactly when bsn was absent


@dataclass(frozen=True)
class SignPrecomp:
    """One-shot per-signature tuple prepared ahead of time."""

    r: Scalar
    R: G1Element
    B: G1Element
    t1: Scalar
    t2: Scalar
    T1: G1Element


class PrecompCache:
    """Thread-safe pool of one-shot signature tuples (take-one semantics)."""

    def __init__(self):
        self._lock = threading.Lock()
        self._items: list[SignPrecomp] = []

    def __len__(self) -> int:
        return len(self._items)

    def add(self, item: SignPrecomp) -> None:
        with self._lock:
            self._items.append(item)

    def take(self) -> Optional[SignPrecomp]:
        with self._lock:
            return self._items.pop() if self._items else None


def daa_setup(lam: int, rng) -> tuple[DaaPublicParams, IssuerSecret]:
    """Issuer setup; lam picks the security level (80, 112 or 128)."""
    if lam not in (80, 112, 128):
        raise DaaError(f"unsupported security level {lam}")
    group = default_params(lam)
    sk_iss = Scalar.random(rng, nonzero=True)
    crs = DaaPublicParams(
        group=group, gpk1=group.g1 ** sk_iss, gpk2=group.g2 ** sk_iss
    )
    return crs, IssuerSecret(sk_iss=sk_iss)


# ---------------------------------------------------------------------------
# Join signature of knowledge.


def _sok_challenge(crs, U_prime, pk_E, c, W, C_t) -> int:
    digest = _digest(
        "join-sok",
        crs.gpk1.to_bytes(),
        crs.gpk2.to_bytes(),
        U_prime.to_bytes(),
        pk_E.to_bytes(),
        c.to_bytes(pk_E),
        W.to_bytes(),
        C_t.to_bytes(pk_E),
    )
    return int.from_bytes(digest, "big") >> (256 - SOK_CHALLENGE_BITS)


def sok_join_prove(crs, pk_E, alpha: Scalar, enc_randomness: int,
                   U_prime: G1Element, c: homenc.HomCiphertext, rng) -> JoinSok:
    """Prove U' = g1^alpha and c = Enc(pk_E, alpha; s) with bounded alpha."""
    p = crs.group.p
    n = pk_E.n
    r_bound = (1 << (SOK_CHALLENGE_BITS + SOK_SLACK_BITS)) * p
    r_alpha = rng.randrange(r_bound)
    r_s = homenc.random_unit(pk_E, rng)
    W = crs.group.g1 ** Scalar(r_alpha)
    C_t = homenc.he_enc_with_randomness(pk_E, r_alpha, r_s)
    e = _sok_challenge(crs, U_prime, pk_E, c, W, C_t)
    z = r_alpha + e * int(alpha)          # over the integers
    z_s = (r_s * pow(enc_randomness, e, n)) % n
    return JoinSok(W=W, C_t=C_t, e=e, z=z, z_s=z_s)


def sok_join_verify(crs, U_prime: G1Element, pk_E, c: homenc.HomCiphertext,
                    proof: JoinSok) -> bool:
    p = crs.group.p
    n = pk_E.n
    bound = (1 << (SOK_CHALLENGE_BITS + SOK_SLACK_BITS + 1)) * p
    if not 0 <= proof.z < bound:
        return False
    if _sok_challenge(crs, U_prime, pk_E, c, proof.W, proof.C_t) != proof.e:
        return False
    if crs.group.g1 ** Scalar(proof.z) != proof.W * (U_prime ** Scalar(proof.e)):
        return False
    try:
        lhs = homenc.he_enc_with_randomness(pk_E, proof.z, proof.z_s)
    except homenc.HomEncError:
        return False
    rhs = homenc.he_mulc(pk_E, c, proof.e)
    rhs = homenc.he_add(pk_E, proof.C_t, rhs)
    return lhs.value == rhs.value


# ---------------------------------------------------------------------------
# Join-Issue protocol.


def join_init(crs: DaaPublicParams, rng) -> tuple[PlatformJoinState, JoinRequest]:
    """Platform side, first flow: blinded key request plus proof."""
    keypair = he_keygen_for_group(crs, rng)
    pk_E = keypair.public
    u_prime = Scalar.random(rng)
    U_prime = crs.group.g1 ** u_prime
    # Encrypt u' keeping the randomness, which the proof needs as witness.
    s = homenc.random_unit(pk_E, rng)
    c_u_prime = homenc.he_enc_with_randomness(pk_E, int(u_prime), s)
    sok = sok_join_prove(crs, pk_E, u_prime, s, U_prime, c_u_prime, rng)
    state = PlatformJoinState(crs=crs, u_prime=u_prime, he_keypair=keypair)
    request = JoinRequest(U_prime=U_prime, pk_E=pk_E, c_u_prime=c_u_prime, sok=sok)
    return state, request


def he_keygen_for_group(crs: DaaPublicParams, rng) -> homenc.HomEncKeyPair:
    return homenc.he_keygen(crs.group.security, crs.group.p, rng)


def issue(crs: DaaPublicParams, secret: IssuerSecret, req: JoinRequest,
          rng) -> JoinResponse:
    """Issuer side: blind Boneh-Boyen certification of the platform key."""
    if not sok_join_verify(crs, req.U_prime, req.pk_E, req.c_u_prime, req.sok):
        raise IssuanceRefused("join proof rejected")
    p = crs.group.p
    pk_E = req.pk_E
    u_dbl = Scalar.random(rng)
    b = Scalar.random(rng, nonzero=True)  # b = 0 would leak a trivial A'
    c1 = homenc.he_add(
        pk_E,
        homenc.he_add(pk_E, req.c_u_prime, homenc.he_enc(pk_E, int(u_dbl), rng)),
        homenc.he_enc(pk_E, int(secret.sk_iss), rng),
    )
    c2 = homenc.he_mulc(pk_E, c1, int(b))
    k = rng.randrange((1 << (crs.group.security + 2)) * p)
    c_out = homenc.he_add(pk_E, c2, homenc.he_enc(pk_E, k * p, rng))
    return JoinResponse(c_u_dblprime=c_out, A_prime=crs.group.g1 ** b, u_dblprime=u_dbl)


def join_finish(state: PlatformJoinState, resp: JoinResponse) -> DaaCredential:
    """Platform side, final flow: unblind and verify the credential."""
    crs = state.crs
    sk_u = state.u_prime + resp.u_dblprime
    t = homenc.he_dec(state.he_keypair, resp.c_u_dblprime)
    t_mod_p = t % crs.group.p
    if t_mod_p == 0:
        raise CredentialInvalid("degenerate blinded exponent")
    A = resp.A_prime ** Scalar(t_mod_p).inverse()
    cred = DaaCredential(A=A, sk_u=sk_u)
    if not cred.valid_for(crs):
        raise CredentialInvalid("pairing check failed; issuer response corrupt")
    return cred


# ---------------------------------------------------------------------------
# Signing and verification.


def precompute_tuple(crs: DaaPublicParams, w: DaaCredential, rng) -> SignPrecomp:
    r = Scalar.random(rng, nonzero=True)
    R = w.A ** r
    B = (crs.group.g1 ** r) * (R ** (-w.sk_u))
    t1 = Scalar.random(rng)
    t2 = Scalar.random(rng)
    T1 = (crs.group.g1 ** t2) * (R ** (-t1))
    return SignPrecomp(r=r, R=R, B=B, t1=t1, t2=t2, T1=T1)


def daa_sign(crs: DaaPublicParams, bsn: Optional[bytes], w: DaaCredential,
             m: bytes, rng, precomp: Optional[PrecompCache] = None) -> DaaSignature:
    if bsn is not None:
        D = hash_to_g1(bsn, tag="daa-bsn")
        include_d = False
    else:
        D = crs.group.random_g1(rng)
        include_d = True
    nym = D ** w.sk_u

    pre = precomp.take() if precomp is not None else None
    if pre is None:
        pre = precompute_tuple(crs, w, rng)
    T2 = D ** pre.t1
    c = crs.challenge(D, nym, pre.R, pre.B, pre.T1, T2, m)
    s1 = pre.t1 + c * w.sk_u
    s2 = pre.t2 + c * pre.r
    return DaaSignature(
        c=c, s1=s1, s2=s2, R=pre.R, B=pre.B, nym=nym, D=D if include_d else None
    )


def daa_verify(crs: DaaPublicParams, bsn: Optional[bytes], m: bytes,
               sig: DaaSignature) -> bool:
    """Accept iff the challenge matches and e(R, gpk2) == e(B, g2)."""
    try:
        if bsn is not None:
            if sig.D is not None:
                return False
            D = hash_to_g1(bsn, tag="daa-bsn")
        else:
            if sig.D is None or sig.D.is_identity():
                return False
            D = sig.D
        if sig.R.is_identity() or sig.B.is_identity() or sig.nym.is_identity():
            return False
        T1 = (crs.group.g1 ** sig.s2) * (sig.R ** (-sig.s1)) * (sig.B ** (-sig.c))
        T2 = (D ** sig.s1) * (sig.nym ** (-sig.c))
        if crs.challenge(D, sig.nym, sig.R, sig.B, T1, T2, m) != sig.c:
            return False
        return pairing_product_is_one((sig.R, crs.gpk2), (sig.B.inverse(), crs.group.g2))
    except (AttributeError, TypeError, ValueError):
        return False


# ---------------------------------------------------------------------------
# Proof-artifact instruments: simulator and extractor.


def sim_sign(crs: DaaPublicParams, bsn: Optional[bytes], nym: G1Element,
             m: bytes, rng, D: Optional[G1Element] = None) -> DaaSignature:
    """Produce a verifying signature with no credential, by programming the
    challenge oracle.  Only runs when crs carries a ProgrammableOracle."""
    if not crs.oracle.programmable:
        raise DaaError("sim_sign requires a programmable challenge oracle")
    if bsn is not None:
        D = hash_to_g1(bsn, tag="daa-bsn")
        include_d = False
    else:
        if D is None:
            D = crs.group.random_g1(rng)
        include_d = True
    r_hat = Scalar.random(rng, nonzero=True)
    R = crs.group.g1 ** r_hat
    B = crs.gpk1 ** r_hat            # e(R, gpk2) == e(B, g2) by construction
    c = Scalar.random(rng)
    s1 = Scalar.random(rng)
    s2 = Scalar.random(rng)
    T1 = (crs.group.g1 ** s2) * (R ** (-s1)) * (B ** (-c))
    T2 = (D ** s1) * (nym ** (-c))
    parts = (
        crs.gpk2.to_bytes(), D.to_bytes(), nym.to_bytes(), R.to_bytes(),
        B.to_bytes(), T1.to_bytes(), T2.to_bytes(), m,
    )
    crs.oracle.program(parts, c)
    return DaaSignature(c=c, s1=s1, s2=s2, R=R, B=B, nym=nym,
                        D=D if include_d else None)


@dataclass(frozen=True)
class ForkedTranscripts:
    """Two accepting transcripts sharing commitments (R, B, T1, T2, nym, D)."""

    R: G1Element
    B: G1Element
    D: G1Element
    nym: G1Element
    c: Scalar
    s1: Scalar
    s2: Scalar
    c_prime: Scalar
    s1_prime: Scalar
    s2_prime: Scalar


def fork_transcripts(crs: DaaPublicParams, w: DaaCredential, bsn: bytes,
                     rng) -> ForkedTranscripts:
    """Rewinding stand-in: sign twice with identical commitments and two
    independent challenges."""
    D = hash_to_g1(bsn, tag="daa-bsn")
    nym = D ** w.sk_u
    pre = precompute_tuple(crs, w, rng)
    c = Scalar.random(rng)
    c_prime = Scalar.random(rng)
    while c_prime == c:
        c_prime = Scalar.random(rng)
    return ForkedTranscripts(
        R=pre.R, B=pre.B, D=D, nym=nym,
        c=c, s1=pre.t1 + c * w.sk_u, s2=pre.t2 + c * pre.r,
        c_prime=c_prime, s1_prime=pre.t1 + c_prime * w.sk_u,
        s2_prime=pre.t2 + c_prime * pre.r,
    )


def extract(crs: DaaPublicParams, fork: ForkedTranscripts) -> tuple[G1Element, Scalar]:
    """Recover the certified pair (A_hat, sk_hat) from forked transcripts.

    With delta notation ds_i = s_i - s_i', dc = c - c', the transcripts pin
    alpha = ds1/dc and beta = ds2/dc satisfying B = g1^beta * R^-alpha and
    nym = D^alpha; then A_hat = R^(1/beta) and sk_hat = alpha reproduce
    nym = D^sk_hat and e(A_hat, gpk2 * g2^sk_hat) = gT.
    """
    dc = fork.c - fork.c_prime
    if dc == Scalar(0):
        raise ExtractionDegenerate("identical challenges")
    dc_inv = dc.inverse()
    alpha = (fork.s1 - fork.s1_prime) * dc_inv
    beta = (fork.s2 - fork.s2_prime) * dc_inv
    if beta == Scalar(0):
        raise ExtractionDegenerate("zero blinding exponent")
    A_hat = fork.R ** beta.inverse()
    return A_hat, alpha


# ---------------------------------------------------------------------------
# Wire encodings (versioned, length-prefixed).

WIRE_VERSION = 1


class WireError(ValueError):
    pass


def _pack(*fields: bytes) -> bytes:
    out = bytearray([WIRE_VERSION])
    for f in fields:
        out += len(f).to_bytes(4, "big") + f
    return bytes(out)


def _unpack(data: bytes, count: int) -> list[bytes]:
    if not data or data[0] != WIRE_VERSION:
        raise WireError("unsupported wire version")
    fields = []
    off = 1
    for _ in range(count):
        if off + 4 > len(data):
            raise WireError("truncated message")
        ln = int.from_bytes(data[off:off + 4], "big")
        off += 4
        if off + ln > len(data):
            raise WireError("truncated field")
        fields.append(data[off:off + ln])
        off += ln
    if off != len(data):
        raise WireError("trailing bytes")
    return fields


def _int_bytes(v: int) -> bytes:
    return v.to_bytes((v.bit_length() + 7) // 8 or 1, "big")


def encode_signature(sig: DaaSignature) -> bytes:
    fields = [
        sig.c.to_bytes(), sig.s1.to_bytes(), sig.s2.to_bytes(),
        sig.R.to_bytes(), sig.B.to_bytes(), sig.nym.to_bytes(),
        sig.D.to_bytes() if sig.D is not None else b"",
    ]
    return _pack(*fields)


def decode_signature(data: bytes) -> DaaSignature:
    c, s1, s2, r, b, nym, d = _unpack(data, 7)
    return DaaSignature(
        c=Scalar.from_bytes(c), s1=Scalar.from_bytes(s1), s2=Scalar.from_bytes(s2),
        R=G1Element.from_bytes(r), B=G1Element.from_bytes(b),
        nym=G1Element.from_bytes(nym),
        D=G1Element.from_bytes(d) if d else None,
    )


def encode_join_request(req: JoinRequest) -> bytes:
    return _pack(
        req.U_prime.to_bytes(),
        req.pk_E.to_bytes(),
        req.c_u_prime.to_bytes(req.pk_E),
        req.sok.W.to_bytes(),
        req.sok.C_t.to_bytes(req.pk_E),
        _int_bytes(req.sok.e),
        _int_bytes(req.sok.z),
        _int_bytes(req.sok.z_s),
    )


def decode_join_request(data: bytes) -> JoinRequest:
    u, pk, c, w, ct, e, z, zs = _unpack(data, 8)
    pk_E = homenc.HomEncPublicKey.from_bytes(pk)
    return JoinRequest(
        U_prime=G1Element.from_bytes(u),
        pk_E=pk_E,
        c_u_prime=homenc.HomCiphertext.from_bytes(c, pk_E),
        sok=JoinSok(
            W=G1Element.from_bytes(w),
            C_t=homenc.HomCiphertext.from_bytes(ct, pk_E),
            e=int.from_bytes(e, "big"),
            z=int.from_bytes(z, "big"),
            z_s=int.from_bytes(zs, "big"),
        ),
    )


def encode_join_response(resp: JoinResponse, pk_E: homenc.HomEncPublicKey) -> bytes:
    return _pack(
        resp.c_u_dblprime.to_bytes(pk_E),
        resp.A_prime.to_bytes(),
        resp.u_dblprime.to_bytes(),
    )


def decode_join_response(data: bytes, pk_E: homenc.HomEncPublicKey) -> JoinResponse:
    c, a, u = _unpack(data, 3)
    return JoinResponse(
        c_u_dblprime=homenc.HomCiphertext.from_bytes(c, pk_E),
        A_prime=G1Element.from_bytes(a),
        u_dblprime=Scalar.from_bytes(u),
    )
