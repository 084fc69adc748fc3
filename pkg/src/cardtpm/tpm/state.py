"""Card-resident TPM state machine.

State splits into volatile registers (PCR bank, injected clock, hierarchy
lock, binding session, precomputation caches) reset on every power cycle,
and persistent storage (NV regions, monotonic counters, SRK, EK, wrapped
keys, attestation credential) that survives via the persistence file.

Gating: until an RTM binding succeeds, the state-changing user surface
(extend, seal, unseal, quote) answers "conditions not satisfied".  In
TEE-proxy mode those commands additionally must arrive through the secure
channel even after binding.
"""

from __future__ import annotations

import hashlib
import secrets
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional

from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric import ec
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.kdf.hkdf import HKDF
from cryptography.exceptions import InvalidTag

from .. import apdu, certs, daa
from ..groups import G1Element, G2Element, Scalar

PCR_COUNT = 24
PCR_SIZE = 32
MAX_RANDOM = 64
MAX_SEAL_DATA = 4096

# NV region the binding protocol writes its transcript into.
BINDING_NV_REGION = 0xB0


class CommandSource(Enum):
    HOST = "host"          # plain APDU from the (untrusted) host
    CHANNEL = "channel"    # arrived through the TEE secure channel
    BINDING = "binding"    # generated inside the binding protocol


class TpmError(Exception):
    """Command failure carrying an APDU status word."""

    def __init__(self, sw: int, message: str):
        super().__init__(message)
        self.sw = sw


def _bad(message: str) -> TpmError:
    return TpmError(apdu.SW_MALFORMED, message)


def _refused(message: str) -> TpmError:
    return TpmError(apdu.SW_CONDITIONS_NOT_SATISFIED, message)


# ---------------------------------------------------------------------------
# Policies.


@dataclass(frozen=True)
class Policy:
    kind: str = "none"                     # none | pcr | authorized
    selection: tuple[int, ...] = ()
    digest: bytes = b""                    # composite digest (pcr variant)
    authority_public: bytes = b""          # SEC1 point (authorized variant)

    def to_bytes(self) -> bytes:
        kind_tag = {"none": 0, "pcr": 1, "authorized": 2}[self.kind]
        sel = bytes(sorted(self.selection))
        out = bytes([kind_tag, len(sel)]) + sel
        out += len(self.digest).to_bytes(2, "big") + self.digest
        out += len(self.authority_public).to_bytes(2, "big") + self.authority_public
        return out

    @classmethod
    def from_bytes(cls, data: bytes) -> "Policy":
        try:
            kind = {0: "none", 1: "pcr", 2: "authorized"}[data[0]]
            sel_len = data[1]
            off = 2
            selection = tuple(data[off:off + sel_len])
            off += sel_len
            dlen = int.from_bytes(data[off:off + 2], "big")
            off += 2
            digest = data[off:off + dlen]
            off += dlen
            alen = int.from_bytes(data[off:off + 2], "big")
            off += 2
            authority = data[off:off + alen]
            if off + alen != len(data):
                raise KeyError
            return cls(kind=kind, selection=selection, digest=bytes(digest),
                       authority_public=bytes(authority))
        except (KeyError, IndexError):
            raise _bad("malformed policy encoding") from None


@dataclass(frozen=True)
class DigestApproval:
    """Authority signature over an allowed composite digest (TPM_Authorize)."""

    digest: bytes
    signature: bytes

    def to_bytes(self) -> bytes:
        return (len(self.digest).to_bytes(2, "big") + self.digest
                + len(self.signature).to_bytes(2, "big") + self.signature)

    @classmethod
    def from_bytes(cls, data: bytes) -> "DigestApproval":
        dlen = int.from_bytes(data[:2], "big")
        digest = data[2:2 + dlen]
        off = 2 + dlen
        slen = int.from_bytes(data[off:off + 2], "big")
        sig = data[off + 2:off + 2 + slen]
        if off + 2 + slen != len(data):
            raise _bad("malformed approval encoding")
        return cls(digest=bytes(digest), signature=bytes(sig))


# ---------------------------------------------------------------------------
# Key records and blobs.


@dataclass(frozen=True)
class KeyRecord:
    handle: int
    public: bytes                 # SEC1 uncompressed point
    wrapped_private: bytes        # nonce || AESGCM(private scalar)
    duplicable: bool
    attestation: bool


@dataclass(frozen=True)
class SealedBlob:
    parent_public: bytes
    policy: Policy
    ephemeral_public: bytes
    nonce: bytes
    ciphertext: bytes             # AESGCM ct+tag, AAD = policy encoding

    def to_bytes(self) -> bytes:
        parts = [self.parent_public, self.policy.to_bytes(),
                 self.ephemeral_public, self.nonce, self.ciphertext]
        out = b"SBLB"
        for p in parts:
            out += len(p).to_bytes(4, "big") + p
        return out

    @classmethod
    def from_bytes(cls, data: bytes) -> "SealedBlob":
        if data[:4] != b"SBLB":
            raise _bad("not a sealed blob")
        fields = []
        off = 4
        for _ in range(5):
            if off + 4 > len(data):
                raise _bad("truncated sealed blob")
            ln = int.from_bytes(data[off:off + 4], "big")
            off += 4
            if off + ln > len(data):
                raise _bad("truncated sealed blob field")
            fields.append(bytes(data[off:off + ln]))
            off += ln
        if off != len(data):
            raise _bad("trailing bytes in sealed blob")
        parent, policy, eph, nonce, ct = fields
        return cls(parent_public=parent, policy=Policy.from_bytes(policy),
                   ephemeral_public=eph, nonce=nonce, ciphertext=ct)


@dataclass(frozen=True)
class DuplicationBlob:
    public: bytes
    ephemeral_public: bytes
    nonce: bytes
    wrapped: bytes                # private scalar under the new parent
    duplicable: bool
    attestation: bool

    def to_bytes(self) -> bytes:
        out = b"DUPB" + bytes([self.duplicable, self.attestation])
        for p in (self.public, self.ephemeral_public, self.nonce, self.wrapped):
            out += len(p).to_bytes(4, "big") + p
        return out

    @classmethod
    def from_bytes(cls, data: bytes) -> "DuplicationBlob":
        if data[:4] != b"DUPB" or len(data) < 6:
            raise _bad("not a duplication blob")
        duplicable, attestation = bool(data[4]), bool(data[5])
        fields = []
        off = 6
        for _ in range(4):
            ln = int.from_bytes(data[off:off + 4], "big")
            off += 4
            fields.append(bytes(data[off:off + ln]))
            off += ln
        if off != len(data):
            raise _bad("trailing bytes in duplication blob")
        pub, eph, nonce, wrapped = fields
        return cls(public=pub, ephemeral_public=eph, nonce=nonce, wrapped=wrapped,
                   duplicable=duplicable, attestation=attestation)


# ---------------------------------------------------------------------------
# ECIES helpers (256-bit curve + AEAD).


def _derive_key(shared: bytes, context: bytes) -> bytes:
    return HKDF(algorithm=hashes.SHA256(), length=32, salt=None,
                info=b"cardtpm-ecies:" + context).derive(shared)


def _ecies_encrypt(recipient_public: bytes, plaintext: bytes, aad: bytes, rng) -> tuple[bytes, bytes, bytes]:
    eph_priv = ec.derive_private_key(rng.randrange(1, certs.CURVE_ORDER), ec.SECP256R1())
    recipient = ec.EllipticCurvePublicKey.from_encoded_point(ec.SECP256R1(), recipient_public)
    shared = eph_priv.exchange(ec.ECDH(), recipient)
    eph_pub = eph_priv.public_key().public_bytes(
        serialization.Encoding.X962, serialization.PublicFormat.UncompressedPoint
    )
    key = _derive_key(shared, eph_pub)
    nonce = rng.randbytes(12)
    ct = AESGCM(key).encrypt(nonce, plaintext, aad)
    return eph_pub, nonce, ct


def _ecies_decrypt(private_value: int, ephemeral_public: bytes, nonce: bytes,
                   ciphertext: bytes, aad: bytes) -> bytes:
    priv = ec.derive_private_key(private_value, ec.SECP256R1())
    try:
        eph = ec.EllipticCurvePublicKey.from_encoded_point(ec.SECP256R1(), ephemeral_public)
    except ValueError:
        raise _bad("malformed ephemeral point") from None
    shared = priv.exchange(ec.ECDH(), eph)
    key = _derive_key(shared, ephemeral_public)
    try:
        return AESGCM(key).decrypt(nonce, ciphertext, aad)
    except InvalidTag:
        raise _bad("integrity check failed") from None


# ---------------------------------------------------------------------------
# The TPM proper.


@dataclass
class DaaState:
    gpk1: G1Element
    gpk2: G2Element
    credential: daa.DaaCredential

    def crs(self) -> daa.DaaPublicParams:
        from ..groups import default_params
        return daa.DaaPublicParams(group=default_params(), gpk1=self.gpk1, gpk2=self.gpk2)


class TpmState:
    """One emulated card.  All mutation funnels through command methods that
    raise TpmError with an APDU status word on refusal."""

    def __init__(self, rng=None):
        self.rng = rng or secrets.SystemRandom()
        # persistent
        self.nv: dict[int, bytes] = {}
        self.counters: dict[int, int] = {}
        self.srk_private: Optional[int] = None
        self.ek_private: Optional[int] = None
        self.ek_cert: Optional[certs.Certificate] = None
        self.keys: dict[int, KeyRecord] = {}
        self.next_handle = 0x8100_0000
        self.daa_state: Optional[DaaState] = None
        # volatile
        self.pcrs: list[bytes] = [bytes(PCR_SIZE)] * PCR_COUNT
        self.clock_us: Optional[int] = None
        self.clock_fresh = False
        self.hierarchies_locked = True
        self.initialized_this_cycle = False
        self.binding_mode = "db"
        self.untrusted_phase = False
        self.binding_session = None          # owned by cardtpm.binding
        self.tee_channel = None              # owned by cardtpm.binding
        self.precomp = daa.PrecompCache()
        self._join_state: Optional[daa.PlatformJoinState] = None

    # -- lifecycle ---------------------------------------------------------

    def power_cycle(self) -> None:
        """Reset volatile state; persistent stores survive."""
        self.pcrs = [bytes(PCR_SIZE)] * PCR_COUNT
        self.clock_us = None
        self.clock_fresh = False
        self.hierarchies_locked = True
        self.initialized_this_cycle = False
        self.untrusted_phase = False
        self.binding_session = None
        self.tee_channel = None
        self.precomp = daa.PrecompCache()
        self._join_state = None

    def tpm_init(self, mode: str = "db") -> None:
        if self.initialized_this_cycle:
            raise _refused("already initialized this power cycle")
        if mode not in ("db", "tee"):
            raise _bad(f"unknown binding mode {mode!r}")
        self.binding_mode = mode
        if self.srk_private is None:
            self.srk_private = self.rng.randrange(1, certs.CURVE_ORDER)
        if mode == "tee":
            self._ensure_ek()
        self.initialized_this_cycle = True

    def _ensure_ek(self) -> None:
        # Provisioned once, on first need; certified by the test vendor CA.
        if self.ek_private is None:
            self.ek_private = self.rng.randrange(1, certs.CURVE_ORDER)
            serial = self.rng.randbytes(8)
            self.ek_cert = certs.test_vendor_ca().issue(
                b"ek:" + serial.hex().encode(), certs.public_point_bytes(self.ek_private)
            )

    def mark_untrusted_phase(self) -> None:
        """Secure->normal world switch: TEE handshakes are refused after this."""
        self.untrusted_phase = True

    # -- gating ------------------------------------------------------------

    def _require_initialized(self):
        if self.srk_private is None:
            raise _refused("TPM_INIT has not run: no storage root key")

    def _gate(self, source: CommandSource):
        """Binding gate for extend/seal/unseal/quote."""
        if source is CommandSource.BINDING:
            return
        if self.hierarchies_locked:
            raise _refused("hierarchies locked until RTM binding")
        if self.binding_mode == "tee" and source is not CommandSource.CHANNEL:
            raise _refused("TEE-proxy mode accepts this command only via the secure channel")

    # -- clock -------------------------------------------------------------

    def set_clock(self, time_us: int) -> None:
        if time_us < 0:
            raise _bad("negative timestamp")
        if self.clock_us is not None and time_us < self.clock_us:
            raise _refused("clock regression rejected")
        self.clock_us = time_us
        self.clock_fresh = True

    def _consume_fresh_clock(self) -> int:
        if self.clock_us is None or not self.clock_fresh:
            raise _refused("time-sensitive command needs a fresh clock injection")
        self.clock_fresh = False
        return self.clock_us

    # -- PCR bank ----------------------------------------------------------

    def pcr_extend(self, index: int, digest: bytes,
                   source: CommandSource = CommandSource.HOST) -> bytes:
        if not 0 <= index < PCR_COUNT:
            raise _bad(f"PCR index {index} out of range")
        if len(digest) != PCR_SIZE:
            raise _bad(f"extend digest must be {PCR_SIZE} bytes")
        self._gate(source)
        self.pcrs[index] = hashlib.sha256(self.pcrs[index] + digest).digest()
        return self.pcrs[index]

    def pcr_read(self, index: int) -> bytes:
        if not 0 <= index < PCR_COUNT:
            raise _bad(f"PCR index {index} out of range")
        return self.pcrs[index]

    def extend_measurement(self, index: int, digest: bytes) -> None:
        """Measurement sink used by the boot simulation (host source)."""
        self.pcr_extend(index, digest, source=CommandSource.HOST)

    def binding_extend_raw(self, index: int, data: bytes) -> bytes:
        """Variable-length extend used only by the binding protocol itself
        (PCR[0] absorbs the raw RTM signature)."""
        if not 0 <= index < PCR_COUNT:
            raise _bad(f"PCR index {index} out of range")
        self.pcrs[index] = hashlib.sha256(self.pcrs[index] + data).digest()
        return self.pcrs[index]

    def unlock_hierarchies(self) -> None:
        self.hierarchies_locked = False

    def composite_digest(self, selection: tuple[int, ...]) -> bytes:
        if not selection or any(not 0 <= i < PCR_COUNT for i in selection):
            raise _bad("bad PCR selection")
        acc = b"".join(self.pcrs[i] for i in sorted(selection))
        return hashlib.sha256(acc).digest()

    # -- counters and NV ---------------------------------------------------

    def counter_create(self, counter_id: int) -> int:
        if counter_id in self.counters:
            raise _refused(f"counter {counter_id} exists")
        self.counters[counter_id] = 0
        return 0

    def counter_increment(self, counter_id: int) -> int:
        if counter_id not in self.counters:
            raise _bad(f"unknown counter {counter_id}")
        self.counters[counter_id] += 1
        return self.counters[counter_id]

    def counter_read(self, counter_id: int) -> int:
        if counter_id not in self.counters:
            raise _bad(f"unknown counter {counter_id}")
        return self.counters[counter_id]

    def nv_write(self, region: int, data: bytes) -> None:
        self.nv[region] = bytes(data)

    def nv_read(self, region: int) -> bytes:
        if region not in self.nv:
            raise _bad(f"NV region {region:#x} undefined")
        return self.nv[region]

    # -- randomness and hashing ---------------------------------------------

    def get_random(self, n: int) -> bytes:
        if not 0 < n <= MAX_RANDOM:
            raise _bad(f"random size limited to {MAX_RANDOM} bytes")
        return self.rng.randbytes(n)

    @staticmethod
    def hash_data(data: bytes) -> bytes:
        return hashlib.sha256(data).digest()

    # -- keys ----------------------------------------------------------------

    def _wrap_key(self) -> bytes:
        self._require_initialized()
        return _derive_key(self.srk_private.to_bytes(32, "big"), b"wrap")

    @property
    def srk_public(self) -> bytes:
        self._require_initialized()
        return certs.public_point_bytes(self.srk_private)

    @property
    def ek_public(self) -> bytes:
        self._require_initialized()
        self._ensure_ek()
        return certs.public_point_bytes(self.ek_private)

    def create_key(self, duplicable: bool = False, attestation: bool = False,
                   algorithm: str = "p256") -> tuple[int, bytes]:
        self._require_initialized()
        if algorithm != "p256":
            raise _bad(f"unsupported algorithm {algorithm!r}")
        private = self.rng.randrange(1, certs.CURVE_ORDER)
        public = certs.public_point_bytes(private)
        nonce = self.rng.randbytes(12)
        wrapped = nonce + AESGCM(self._wrap_key()).encrypt(
            nonce, private.to_bytes(32, "big"), public
        )
        handle = self.next_handle
        self.next_handle += 1
        self.keys[handle] = KeyRecord(handle=handle, public=public,
                                      wrapped_private=wrapped,
                                      duplicable=duplicable, attestation=attestation)
        if attestation and self.daa_state is not None:
            crs = self.daa_state.crs()
            for _ in range(2):
                self.precomp.add(daa.precompute_tuple(crs, self.daa_state.credential, self.rng))
        return handle, public

    def _unwrap_private(self, record: KeyRecord) -> int:
        nonce, ct = record.wrapped_private[:12], record.wrapped_private[12:]
        try:
            raw = AESGCM(self._wrap_key()).decrypt(nonce, ct, record.public)
        except InvalidTag:
            raise _bad("key record integrity failure") from None
        return int.from_bytes(raw, "big")

    def duplicate_key(self, handle: int, new_parent_public: bytes) -> DuplicationBlob:
        record = self.keys.get(handle)
        if record is None:
            raise _bad(f"unknown key handle {handle:#x}")
        if not record.duplicable:
            raise _refused("key is not duplicable")
        private = self._unwrap_private(record)
        eph, nonce, ct = _ecies_encrypt(new_parent_public, private.to_bytes(32, "big"),
                                        record.public, self.rng)
        return DuplicationBlob(public=record.public, ephemeral_public=eph, nonce=nonce,
                               wrapped=ct, duplicable=True, attestation=record.attestation)

    def import_key(self, blob: DuplicationBlob) -> int:
        self._require_initialized()
        raw = _ecies_decrypt(self.srk_private, blob.ephemeral_public, blob.nonce,
                             blob.wrapped, blob.public)
        private = int.from_bytes(raw, "big")
        if certs.public_point_bytes(private) != blob.public:
            raise _bad("imported key does not match its public part")
        nonce = self.rng.randbytes(12)
        wrapped = nonce + AESGCM(self._wrap_key()).encrypt(
            nonce, private.to_bytes(32, "big"), blob.public
        )
        handle = self.next_handle
        self.next_handle += 1
        self.keys[handle] = KeyRecord(handle=handle, public=blob.public,
                                      wrapped_private=wrapped,
                                      duplicable=blob.duplicable,
                                      attestation=blob.attestation)
        return handle

    # -- sealing -------------------------------------------------------------

    def _finalize_policy(self, policy: Policy) -> Policy:
        if policy.kind == "pcr":
            if not policy.selection:
                raise _bad("pcr policy needs a selection")
            return replace(policy, digest=self.composite_digest(policy.selection))
        if policy.kind == "authorized" and not policy.authority_public:
            raise _bad("authorized policy needs an authority key")
        return policy

    def seal(self, data: bytes, policy: Policy = Policy(),
             key_handle: Optional[int] = None,
             source: CommandSource = CommandSource.HOST) -> SealedBlob:
        self._require_initialized()
        self._gate(source)
        if len(data) > MAX_SEAL_DATA:
            raise _bad(f"seal payload limited to {MAX_SEAL_DATA} bytes")
        policy = self._finalize_policy(policy)
        if key_handle is None:
            parent_public = self.srk_public
        else:
            record = self.keys.get(key_handle)
            if record is None:
                raise _bad(f"unknown key handle {key_handle:#x}")
            parent_public = record.public
        aad = policy.to_bytes()
        eph, nonce, ct = _ecies_encrypt(parent_public, data, aad, self.rng)
        return SealedBlob(parent_public=parent_public, policy=policy,
                          ephemeral_public=eph, nonce=nonce, ciphertext=ct)

    def _policy_satisfied(self, policy: Policy, approval: Optional[DigestApproval]):
        if policy.kind == "none":
            return
        if policy.kind == "pcr":
            if self.composite_digest(policy.selection) != policy.digest:
                raise _refused("PCR policy not satisfied")
            return
        if policy.kind == "authorized":
            if not policy.selection:
                raise _refused("authorized policy carries no selection")
            current = self.composite_digest(policy.selection)
            if approval is None:
                raise _refused("authorized policy needs a signed digest approval")
            if approval.digest != current:
                raise _refused("current state digest is not the approved one")
            if not certs.verify_signature(policy.authority_public,
                                          approval.digest, approval.signature):
                raise _refused("authority signature invalid")
            return
        raise _bad(f"unknown policy kind {policy.kind!r}")

    def unseal(self, blob: SealedBlob, approval: Optional[DigestApproval] = None,
               source: CommandSource = CommandSource.HOST) -> bytes:
        self._require_initialized()
        self._gate(source)
        self._policy_satisfied(blob.policy, approval)
        if blob.parent_public == self.srk_public:
            private = self.srk_private
        else:
            private = None
            for record in self.keys.values():
                if record.public == blob.parent_public:
                    private = self._unwrap_private(record)
                    break
            if private is None:
                raise _bad("no key on this TPM can unseal the blob")
        return _ecies_decrypt(private, blob.ephemeral_public, blob.nonce,
                              blob.ciphertext, blob.policy.to_bytes())

    # -- attestation -----------------------------------------------------------

    def daa_join_begin(self, crs: daa.DaaPublicParams) -> daa.JoinRequest:
        """Platform side of the join protocol runs on-card."""
        self._require_initialized()
        state, request = daa.join_init(crs, self.rng)
        self._join_state = state
        return request

    def daa_join_complete(self, resp: daa.JoinResponse) -> None:
        if self._join_state is None:
            raise _refused("no join in progress")
        credential = daa.join_finish(self._join_state, resp)
        crs = self._join_state.crs
        self.daa_state = DaaState(gpk1=crs.gpk1, gpk2=crs.gpk2, credential=credential)
        self._join_state = None

    def quote(self, selection: tuple[int, ...], nonce: bytes,
              bsn: Optional[bytes] = None,
              source: CommandSource = CommandSource.HOST) -> daa.DaaSignature:
        self._gate(source)
        if self.daa_state is None:
            raise _refused("no attestation credential; run the join protocol")
        self._consume_fresh_clock()
        message = quote_message(selection, [self.pcrs[i] for i in sorted(selection)], nonce)
        crs = self.daa_state.crs()
        return daa.daa_sign(crs, bsn, self.daa_state.credential, message,
                            self.rng, precomp=self.precomp)

    # -- persistence -------------------------------------------------------

    MAGIC = b"SIMTPM01"
    VERSION = 1

    def to_bytes(self) -> bytes:
        def section(tag: int, body: bytes) -> bytes:
            return bytes([tag]) + len(body).to_bytes(4, "big") + body

        out = bytearray(self.MAGIC + bytes([self.VERSION]))
        body = len(self.nv).to_bytes(4, "big")
        for region in sorted(self.nv):
            data = self.nv[region]
            body += region.to_bytes(4, "big") + len(data).to_bytes(4, "big") + data
        out += section(0x01, body)
        body = len(self.counters).to_bytes(4, "big")
        for cid in sorted(self.counters):
            body += cid.to_bytes(4, "big") + self.counters[cid].to_bytes(8, "big")
        out += section(0x02, body)
        if self.srk_private is not None:
            out += section(0x03, self.srk_private.to_bytes(32, "big"))
        if self.ek_private is not None:
            cert = self.ek_cert.to_bytes()
            out += section(0x04, self.ek_private.to_bytes(32, "big")
                           + len(cert).to_bytes(4, "big") + cert)
        body = len(self.keys).to_bytes(4, "big")
        for handle in sorted(self.keys):
            rec = self.keys[handle]
            body += handle.to_bytes(4, "big")
            body += bytes([rec.duplicable, rec.attestation])
            body += len(rec.public).to_bytes(4, "big") + rec.public
            body += len(rec.wrapped_private).to_bytes(4, "big") + rec.wrapped_private
        out += section(0x05, body)
        if self.daa_state is not None:
            body = (self.daa_state.gpk1.to_bytes() + self.daa_state.gpk2.to_bytes()
                    + self.daa_state.credential.A.to_bytes()
                    + self.daa_state.credential.sk_u.to_bytes())
            out += section(0x06, body)
        out += section(0x07, self.next_handle.to_bytes(8, "big"))
        return bytes(out)

    @classmethod
    def from_bytes(cls, data: bytes, rng=None) -> "TpmState":
        if data[:8] != cls.MAGIC:
            raise _bad("bad persistence magic")
        if data[8] != cls.VERSION:
            raise _bad(f"unsupported persistence version {data[8]}")
        tpm = cls(rng=rng)
        off = 9
        while off < len(data):
            tag = data[off]
            ln = int.from_bytes(data[off + 1:off + 5], "big")
            body = data[off + 5:off + 5 + ln]
            off += 5 + ln
            if tag == 0x01:
                count = int.from_bytes(body[:4], "big")
                pos = 4
                for _ in range(count):
                    region = int.from_bytes(body[pos:pos + 4], "big")
                    dlen = int.from_bytes(body[pos + 4:pos + 8], "big")
                    tpm.nv[region] = bytes(body[pos + 8:pos + 8 + dlen])
                    pos += 8 + dlen
            elif tag == 0x02:
                count = int.from_bytes(body[:4], "big")
                pos = 4
                for _ in range(count):
                    cid = int.from_bytes(body[pos:pos + 4], "big")
                    tpm.counters[cid] = int.from_bytes(body[pos + 4:pos + 12], "big")
                    pos += 12
            elif tag == 0x03:
                tpm.srk_private = int.from_bytes(body, "big")
            elif tag == 0x04:
                tpm.ek_private = int.from_bytes(body[:32], "big")
                clen = int.from_bytes(body[32:36], "big")
                tpm.ek_cert = certs.Certificate.from_bytes(bytes(body[36:36 + clen]))
            elif tag == 0x05:
                count = int.from_bytes(body[:4], "big")
                pos = 4
                for _ in range(count):
                    handle = int.from_bytes(body[pos:pos + 4], "big")
                    duplicable, attestation = bool(body[pos + 4]), bool(body[pos + 5])
                    pos += 6
                    plen = int.from_bytes(body[pos:pos + 4], "big")
                    public = bytes(body[pos + 4:pos + 4 + plen])
                    pos += 4 + plen
                    wlen = int.from_bytes(body[pos:pos + 4], "big")
                    wrapped = bytes(body[pos + 4:pos + 4 + wlen])
                    pos += 4 + wlen
                    tpm.keys[handle] = KeyRecord(handle=handle, public=public,
                                                 wrapped_private=wrapped,
                                                 duplicable=duplicable,
                                                 attestation=attestation)
            elif tag == 0x06:
                gpk1 = G1Element.from_bytes(bytes(body[:33]))
                gpk2 = G2Element.from_bytes(bytes(body[33:98]))
                a = G1Element.from_bytes(bytes(body[98:131]))
                sk = Scalar.from_bytes(bytes(body[131:163]))
                tpm.daa_state = DaaState(gpk1=gpk1, gpk2=gpk2,
                                         credential=daa.DaaCredential(A=a, sk_u=sk))
            elif tag == 0x07:
                tpm.next_handle = int.from_bytes(body, "big")
            else:
                raise _bad(f"unknown persistence section {tag:#x}")
        return tpm

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path, rng=None) -> "TpmState":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read(), rng=rng)


def quote_message(selection: tuple[int, ...], pcr_values: list[bytes],
                  nonce: bytes) -> bytes:
    """Digest a quote attests to; the verifier recomputes it from reported
    PCR values and the nonce."""
    h = hashlib.sha256(b"cardtpm-quote")
    h.update(bytes(sorted(selection)))
    for value in pcr_values:
        h.update(value)
    h.update(nonce)
    return h.digest()


def verify_quote(crs: daa.DaaPublicParams, selection: tuple[int, ...],
                 reported_pcrs: list[bytes], nonce: bytes, bsn: Optional[bytes],
                 sig: daa.DaaSignature) -> bool:
    """Host-side quote verification against reported PCR values."""
    message = quote_message(selection, reported_pcrs, nonce)
    return daa.daa_verify(crs, bsn, message, sig)
