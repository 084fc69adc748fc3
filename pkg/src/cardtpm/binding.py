"""Binding the removable card to the local root of trust for measurement.

Two mutually exclusive modes, selected at TPM_INIT:

* Distance bounding: the card challenges the RTM with a nonce; binding
  succeeds when enough rounds return a correctly signed response within the
  time threshold.  Round timing uses the injected (baseband) clock, so
  simulations are deterministic under a seeded latency model.
* TEE proxy: a vendor-certified device key establishes an authenticated
  encryption channel; gated commands are accepted only through it.

Also here: the statistics the protocol design rests on (binomial acceptance
tail, empirical latency CDF, relay bandwidth floor, attacker success).
"""

from __future__ import annotations

import hashlib
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.exceptions import InvalidTag

from . import apdu, boot, certs
from .timing import TimingModel
from .tpm.state import (
    BINDING_NV_REGION,
    CommandSource,
    TpmError,
    TpmState,
)

FAIL_UNTRUSTED_CERT = "untrusted certificate"
FAIL_UNTRUSTED_RTM = "untrusted RTM"
FAIL_NOT_LOCAL = "not local RTM"


class BindingError(Exception):
    pass


class ChannelBroken(Exception):
    """Raised by an RTM channel that died mid-protocol."""


@dataclass(frozen=True)
class DistanceBoundingConfig:
    threshold_us: float = 721.0          # T: multi-round response threshold
    exchange_threshold_us: Optional[float] = None  # delta; defaults to T
    rounds: int = 30                     # n
    success_fraction: float = 0.47       # f
    nonce_bits: int = 64

    def __post_init__(self):
        if self.rounds < 1:
            raise BindingError("rounds must be >= 1")
        if not 0 < self.success_fraction <= 1:
            raise BindingError("success fraction must be in (0, 1]")
        if self.threshold_us <= 0:
            raise BindingError("threshold must be positive")
        if self.nonce_bits % 8 or self.nonce_bits <= 0:
            raise BindingError("nonce_bits must be a positive multiple of 8")

    @property
    def delta_us(self) -> float:
        return (self.exchange_threshold_us
                if self.exchange_threshold_us is not None else self.threshold_us)

    @property
    def required_successes(self) -> int:
        # floor(f*n): a fractional quota of 14.1 rounds means 14 must land.
        return math.floor(self.success_fraction * self.rounds)

    @property
    def nonce_bytes(self) -> int:
        return self.nonce_bits // 8


@dataclass(frozen=True)
class RoundResult:
    ok: bool
    reason: str = ""
    rtt_us: float = 0.0


@dataclass(frozen=True)
class BindingOutcome:
    bound: bool
    successes: int
    rounds_played: int
    reason: str = ""


# ---------------------------------------------------------------------------
# Card-side session state machine.


class BindingSession:
    """Strict per-card protocol state: unbound -> (rounds) -> bound|failed."""

    def __init__(self, tpm: TpmState, cfg: Optional[DistanceBoundingConfig] = None,
                 ca: Optional[certs.VendorCA] = None):
        self.tpm = tpm
        self.cfg = cfg or DistanceBoundingConfig(rounds=1, success_fraction=1.0)
        self.ca = ca or certs.test_vendor_ca()
        self.state = "unbound"
        self.rounds_played = 0
        self.successes = 0
        self.nonce: Optional[bytes] = None
        self.t1_us: Optional[float] = None
        self.last_reason = ""
        self._verifier: Optional[certs.Verifier] = None
        self._verified_cert: Optional[bytes] = None
        self._last_success: Optional[tuple[bytes, bytes, bytes]] = None

    # -- protocol steps -----------------------------------------------------

    def init_extend(self, pk: bytes, cert: certs.Certificate) -> bytes:
        """First flow: authenticate the claimed RTM key, issue the nonce."""
        if self.state == "nonce-issued":
            raise TpmError(apdu.SW_CONDITIONS_NOT_SATISFIED,
                           "nonce already outstanding")
        if self.state in ("bound", "failed"):
            raise TpmError(apdu.SW_CONDITIONS_NOT_SATISFIED,
                           f"binding session is {self.state}")
        if self.tpm.clock_us is None:
            raise TpmError(apdu.SW_CONDITIONS_NOT_SATISFIED,
                           "no injected clock for T1")
        cert_bytes = cert.to_bytes()
        if cert_bytes != self._verified_cert:
            if cert.public_key != pk or not self.ca.verify(cert):
                self.state = "failed"
                self.last_reason = FAIL_UNTRUSTED_CERT
                raise TpmError(apdu.SW_CONDITIONS_NOT_SATISFIED, FAIL_UNTRUSTED_CERT)
            self._verified_cert = cert_bytes
            self._verifier = certs.Verifier(pk)
        self.nonce = self.tpm.rng.randbytes(self.cfg.nonce_bytes)
        self.t1_us = float(self.tpm.clock_us)
        self.state = "nonce-issued"
        return self.nonce

    def pcr_sig_extend(self, m: bytes, m_bl2: bytes) -> RoundResult:
        """Second flow: timing gate, signature gate, then commit or count."""
        if self.state != "nonce-issued":
            raise TpmError(apdu.SW_CONDITIONS_NOT_SATISFIED, "no nonce outstanding")
        if len(m_bl2) != 32:
            raise TpmError(apdu.SW_MALFORMED, "M_BL2 must be 32 bytes")
        if self.tpm.clock_us is None:
            raise TpmError(apdu.SW_CONDITIONS_NOT_SATISFIED, "no injected clock for T2")
        t2 = float(self.tpm.clock_us)
        rtt = t2 - self.t1_us
        self.rounds_played += 1
        if rtt < self.cfg.delta_us:
            if self._verifier.verify(self.nonce, m):
                self.successes += 1
                self._last_success = (self.nonce, m, m_bl2)
                result = RoundResult(True, rtt_us=rtt)
            else:
                result = RoundResult(False, FAIL_UNTRUSTED_RTM, rtt)
        else:
            result = RoundResult(False, FAIL_NOT_LOCAL, rtt)
        self.nonce = None
        self.t1_us = None
        self.state = "collecting"
        if self.rounds_played >= self.cfg.rounds:
            self._finalize()
        if self.state == "failed":
            self.last_reason = self.last_reason or result.reason
        return result

    def _finalize(self) -> None:
        if self.successes >= max(self.cfg.required_successes, 1) and self._last_success:
            nonce, m, m_bl2 = self._last_success
            # The protocol figure's commit sequence, in order:
            self.tpm.binding_extend_raw(0, m)                       # PCR[0] = H(0||m)
            self.tpm.nv_write(BINDING_NV_REGION,
                              len(nonce).to_bytes(2, "big") + nonce + m)
            self.tpm.unlock_hierarchies()
            self.tpm.pcr_extend(1, m_bl2, source=CommandSource.BINDING)
            self.state = "bound"
        else:
            self.state = "failed"
            if not self.last_reason:
                self.last_reason = (FAIL_NOT_LOCAL if self.successes < self.rounds_played
                                    else FAIL_UNTRUSTED_RTM)

    @property
    def bound(self) -> bool:
        return self.state == "bound"


def get_session(tpm: TpmState, cfg: Optional[DistanceBoundingConfig] = None,
                ca: Optional[certs.VendorCA] = None) -> BindingSession:
    if tpm.binding_session is None:
        tpm.binding_session = BindingSession(tpm, cfg, ca)
    return tpm.binding_session


def handle_bind_command(tpm: TpmState, p1: int, payload: bytes) -> bytes:
    """Dispatcher entry for INS 0x80 (wire form of the binding ops)."""
    if p1 == 0:
        pk, off = _read_lv(payload, 0)
        cert_raw, off = _read_lv(payload, off)
        if off != len(payload):
            raise TpmError(apdu.SW_MALFORMED, "trailing bind bytes")
        try:
            cert = certs.Certificate.from_bytes(cert_raw)
        except certs.CertError:
            raise TpmError(apdu.SW_MALFORMED, "malformed certificate") from None
        return get_session(tpm).init_extend(bytes(pk), cert)
    if p1 == 1:
        m, off = _read_lv(payload, 0)
        m_bl2 = payload[off:]
        session = get_session(tpm)
        result = session.pcr_sig_extend(bytes(m), bytes(m_bl2))
        if session.bound:
            return b"OK"
        if result.ok:
            return b"ROUND"
        raise TpmError(apdu.SW_CONDITIONS_NOT_SATISFIED, result.reason)
    if p1 == 3:
        return _channel_handshake(tpm, payload)
    raise TpmError(apdu.SW_MALFORMED, "unknown bind sub-op")


def _read_lv(data: bytes, off: int) -> tuple[bytes, int]:
    if off + 2 > len(data):
        raise TpmError(apdu.SW_MALFORMED, "truncated length prefix")
    ln = int.from_bytes(data[off:off + 2], "big")
    off += 2
    if off + ln > len(data):
        raise TpmError(apdu.SW_MALFORMED, "truncated field")
    return data[off:off + ln], off + ln


# ---------------------------------------------------------------------------
# Distance-bounding protocol runner.


RtmChannel = Callable[[bytes], tuple[boot.RtmResponse, float]]


def make_rtm_channel(identity: boot.RtmIdentity, chain: boot.BootChain,
                     timing: TimingModel, rng) -> RtmChannel:
    """Honest RTM behind a latency model; returns (response, latency_us)."""

    def channel(nonce: bytes) -> tuple[boot.RtmResponse, float]:
        latency = timing.draw(rng)
        return boot.rtm_respond(nonce, identity, chain), latency

    return channel


def run_distance_bounding(tpm: TpmState, cfg: DistanceBoundingConfig,
                          channel: RtmChannel, identity_cert: certs.Certificate,
                          identity_public: bytes,
                          start_time_us: int = 1_000_000,
                          gap_us: int = 50) -> BindingOutcome:
    """Drive a whole n-round binding attempt against an RTM channel.

    The card's notion of time advances through injected clock values: T1 at
    nonce issue, then T1 + latency when the response arrives.
    """
    tpm.binding_session = BindingSession(tpm, cfg)
    session = tpm.binding_session
    now = float(start_time_us)
    for _ in range(cfg.rounds):
        tpm.set_clock(int(now))
        try:
            nonce = session.init_extend(identity_public, identity_cert)
        except TpmError as err:
            return BindingOutcome(False, session.successes, session.rounds_played,
                                  str(err))
        try:
            response, latency = channel(nonce)
        except ChannelBroken as err:
            session.state = "failed"
            session.last_reason = f"channel broken: {err}"
            return BindingOutcome(False, session.successes, session.rounds_played,
                                  session.last_reason)
        now += latency
        tpm.set_clock(int(now))
        session.pcr_sig_extend(response.m, response.m_bl2)
        now += gap_us
    return BindingOutcome(session.bound, session.successes, session.rounds_played,
                          "" if session.bound else session.last_reason)


def fast_trial(cfg: DistanceBoundingConfig, timing: TimingModel, card_rng,
               channel_rng, signer=None, verifier: Optional[certs.Verifier] = None) -> bool:
    """One protocol attempt with the session bookkeeping stripped away.

    Makes exactly the decisions (and RNG draws, in the same order) that
    run_distance_bounding makes for an honest, already-certified RTM; the
    test suite pins per-trial agreement between the two paths.

    With ``signer``/``verifier`` supplied, every round performs the real
    signature exchange.  Without them, a round counts as success on the
    timing gate alone, stipulating the honest RTM's signature valid -- an
    event of probability one that the crypto-path tests establish
    separately.  Both modes consume identical RNG streams, so outcomes on
    matched seeds agree whenever the signer is honest.
    """
    nonce_len = cfg.nonce_bytes
    delta = cfg.delta_us
    successes = 0
    for _ in range(cfg.rounds):
        nonce = card_rng.randbytes(nonce_len)
        response_latency = timing.draw(channel_rng)
        if response_latency < delta:
            if signer is None or verifier.verify(nonce, signer.sign(nonce)):
                successes += 1
        elif signer is not None:
            signer.sign(nonce)  # the RTM answered; the card just ignores it
    return successes >= max(cfg.required_successes, 1)


def _acceptance_worker(args) -> int:
    cfg, timing, trials, seed, with_crypto = args
    import random as _random

    rng = _random.Random(seed)
    ca = certs.test_vendor_ca()
    identity = boot.make_rtm_identity(b"mc-board", rng, ca=ca)
    assert ca.verify(identity.certificate)
    signer = identity.signer if with_crypto else None
    verifier = certs.Verifier(identity.public_bytes) if with_crypto else None
    card_rng = _random.Random(seed ^ 0x5EED)
    accepted = 0
    for _ in range(trials):
        accepted += fast_trial(cfg, timing, card_rng, rng, signer, verifier)
    return accepted


def estimate_acceptance_rate(cfg: DistanceBoundingConfig, timing: TimingModel,
                             trials: int, seed: int = 0,
                             workers: Optional[int] = None,
                             signature_model: str = "real") -> float:
    """Monte-Carlo acceptance probability over seeded protocol trials.

    ``signature_model="real"`` performs every round's ECDSA exchange;
    ``"stipulated"`` treats the honest RTM's signatures as valid without
    executing them, which is what bulk statistics need (see fast_trial).
    """
    if signature_model not in ("real", "stipulated"):
        raise ValueError(f"unknown signature model {signature_model!r}")
    with_crypto = signature_model == "real"
    workers = workers or min(os.cpu_count() or 1, 4)
    if workers <= 1 or trials < 200 or not with_crypto:
        return _acceptance_worker((cfg, timing, trials, seed, with_crypto)) / trials
    per = [trials // workers] * workers
    per[0] += trials - sum(per)
    args = [(cfg, timing, n, seed + i, with_crypto) for i, n in enumerate(per)]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        accepted = sum(pool.map(_acceptance_worker, args))
    return accepted / trials


# ---------------------------------------------------------------------------
# Statistics.


def binom_tail(n: int, k: int, p: float) -> float:
    """Pr[X >= k] for X ~ Binomial(n, p), evaluated as the exact sum."""
    if n < 0 or not 0 <= k <= n:
        raise ValueError(f"need 0 <= k <= n, got k={k} n={n}")
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"probability out of range: {p}")
    if k == 0:
        return 1.0  # empty requirement, exactly certain
    q = 1.0 - p
    return float(sum(math.comb(n, i) * p**i * q**(n - i) for i in range(k, n + 1)))


def empirical_cdf(samples: Sequence[float], t: float) -> float:
    """Fraction of samples at or below t."""
    if not samples:
        raise ValueError("empty sample set")
    return sum(1 for s in samples if s <= t) / len(samples)


def min_relay_bandwidth(relayed_bits: int, slack_us: float) -> float:
    """Bits per second an attacker must push through the relay window."""
    if slack_us <= 0:
        raise ValueError("slack must be positive")
    return relayed_bits / (slack_us * 1e-6)


def attacker_success(relay_delay_us: float, samples: Sequence[float],
                     cfg: DistanceBoundingConfig) -> float:
    """Probability a relay attacker with fixed added delay gets accepted."""
    if relay_delay_us >= cfg.threshold_us:
        return 0.0
    p_round = empirical_cdf(samples, cfg.threshold_us - relay_delay_us)
    return binom_tail(cfg.rounds, cfg.required_successes, p_round)


def load_db_config(path) -> DistanceBoundingConfig:
    """Distance-bounding config file: `key = value` lines (T_us, delta_us,
    rounds, fraction, nonce_bits)."""
    values: dict[str, str] = {}
    with open(path) as fh:
        for line_no, raw in enumerate(fh, 1):
            line = raw.split("#")[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise BindingError(f"{path}:{line_no}: expected key = value")
            key, _, val = (s.strip() for s in line.partition("="))
            values[key] = val
    kwargs = {}
    try:
        if "T_us" in values:
            kwargs["threshold_us"] = float(values.pop("T_us"))
        if "delta_us" in values:
            kwargs["exchange_threshold_us"] = float(values.pop("delta_us"))
        if "rounds" in values:
            kwargs["rounds"] = int(values.pop("rounds"))
        if "fraction" in values:
            kwargs["success_fraction"] = float(values.pop("fraction"))
        if "nonce_bits" in values:
            kwargs["nonce_bits"] = int(values.pop("nonce_bits"))
    except ValueError as exc:
        raise BindingError(f"{path}: {exc}") from None
    if values:
        raise BindingError(f"{path}: unknown keys {sorted(values)}")
    return DistanceBoundingConfig(**kwargs)


# ---------------------------------------------------------------------------
# TEE proxy channel.


@dataclass
class _ChannelCore:
    key: bytes
    send_seq: int = 0
    recv_seq: int = 0

    def seal(self, seq: int, direction: int, plaintext: bytes) -> bytes:
        nonce = seq.to_bytes(8, "big") + direction.to_bytes(4, "big")
        return AESGCM(self.key).encrypt(nonce, plaintext, nonce)

    def open(self, seq: int, direction: int, ciphertext: bytes) -> bytes:
        nonce = seq.to_bytes(8, "big") + direction.to_bytes(4, "big")
        try:
            return AESGCM(self.key).decrypt(nonce, ciphertext, nonce)
        except InvalidTag:
            raise TpmError(apdu.SW_CONDITIONS_NOT_SATISFIED,
                           "channel MAC failure") from None


_DIR_TO_CARD = 1
_DIR_TO_HOST = 2


def _channel_key(shared: bytes, device_eph: bytes, card_nonce: bytes) -> bytes:
    return hashlib.sha256(b"cardtpm-tee-session" + shared + device_eph + card_nonce).digest()


def _channel_handshake(tpm: TpmState, payload: bytes) -> bytes:
    """Card side of TEE channel establishment (BIND sub-op 3)."""
    from cryptography.hazmat.primitives.asymmetric import ec

    if tpm.binding_mode != "tee":
        raise TpmError(apdu.SW_CONDITIONS_NOT_SATISFIED,
                       "card not initialized in TEE-proxy mode")
    if tpm.untrusted_phase:
        raise TpmError(apdu.SW_CONDITIONS_NOT_SATISFIED,
                       "handshake refused after untrusted phase began")
    cert_raw, off = _read_lv(payload, 0)
    eph_pub, off = _read_lv(payload, off)
    sig, off = _read_lv(payload, off)
    if off != len(payload):
        raise TpmError(apdu.SW_MALFORMED, "trailing handshake bytes")
    try:
        cert = certs.Certificate.from_bytes(bytes(cert_raw))
    except certs.CertError:
        raise TpmError(apdu.SW_MALFORMED, "malformed certificate") from None
    if not certs.test_vendor_ca().verify(cert):
        raise TpmError(apdu.SW_CONDITIONS_NOT_SATISFIED, FAIL_UNTRUSTED_CERT)
    if not certs.verify_signature(cert.public_key, bytes(eph_pub), bytes(sig)):
        raise TpmError(apdu.SW_CONDITIONS_NOT_SATISFIED, "device signature invalid")
    ek_priv = ec.derive_private_key(tpm.ek_private, ec.SECP256R1())
    try:
        peer = ec.EllipticCurvePublicKey.from_encoded_point(ec.SECP256R1(), bytes(eph_pub))
    except ValueError:
        raise TpmError(apdu.SW_MALFORMED, "malformed ephemeral point") from None
    shared = ek_priv.exchange(ec.ECDH(), peer)
    card_nonce = tpm.rng.randbytes(16)
    tpm.tee_channel = _ChannelCore(key=_channel_key(shared, bytes(eph_pub), card_nonce))
    # Channel establishment is the binding event in TEE-proxy mode.
    tpm.unlock_hierarchies()
    return card_nonce


def handle_channel_frame(dispatcher, payload: bytes) -> bytes:
    """Card side of one sealed channel frame (INS 0x81)."""
    tpm = dispatcher.tpm
    core = tpm.tee_channel
    if core is None:
        raise TpmError(apdu.SW_CONDITIONS_NOT_SATISFIED, "no channel established")
    if len(payload) < 8:
        raise TpmError(apdu.SW_MALFORMED, "short channel frame")
    seq = int.from_bytes(payload[:8], "big")
    if seq <= core.recv_seq:
        raise TpmError(apdu.SW_CONDITIONS_NOT_SATISFIED, "replayed channel frame")
    inner = core.open(seq, _DIR_TO_CARD, payload[8:])
    core.recv_seq = seq
    inner_resp = dispatcher.handle_bytes(inner, source=CommandSource.CHANNEL)
    return core.seal(seq, _DIR_TO_HOST, inner_resp)


class TeeChannel:
    """Host/TEE side of the proxy channel."""

    def __init__(self, dispatcher, signer, certificate: certs.Certificate, rng):
        from cryptography.hazmat.primitives import serialization
        from cryptography.hazmat.primitives.asymmetric import ec
        from .tpm.dispatch import INS_BIND, send_payload

        self.dispatcher = dispatcher
        tpm = dispatcher.tpm
        eph = ec.derive_private_key(rng.randrange(1, certs.CURVE_ORDER), ec.SECP256R1())
        eph_pub = eph.public_key().public_bytes(
            serialization.Encoding.X962, serialization.PublicFormat.UncompressedPoint
        )
        payload = (_lv(certificate.to_bytes()) + _lv(eph_pub)
                   + _lv(signer.sign(eph_pub)))
        resp = send_payload(dispatcher, INS_BIND, payload, p1=3)
        if not resp.ok:
            raise BindingError(f"handshake refused: {apdu.SW_NAMES.get(resp.status_word, hex(resp.status_word))}")
        card_nonce = resp.data
        ek_pub = ec.EllipticCurvePublicKey.from_encoded_point(
            ec.SECP256R1(), tpm.ek_public
        )
        shared = eph.exchange(ec.ECDH(), ek_pub)
        self.core = _ChannelCore(key=_channel_key(shared, eph_pub, card_nonce))

    # Envelope overhead: 8-byte sequence + 16-byte tag + 6-byte inner header
    # must fit the outer 255-byte data field.
    MAX_INNER_DATA = 200

    def send(self, cmd: apdu.ApduCommand) -> apdu.ApduResponse:
        """Encrypt one inner command, traverse the card, decrypt the reply."""
        from .tpm.dispatch import INS_CHANNEL, CLA

        if len(cmd.data) > self.MAX_INNER_DATA:
            raise BindingError("inner command too large; use send_payload")
        self.core.send_seq += 1
        seq = self.core.send_seq
        frame = seq.to_bytes(8, "big") + self.core.seal(
            seq, _DIR_TO_CARD, apdu.encode_command(cmd)
        )
        outer_bytes = apdu.encode_command(
            apdu.ApduCommand(cla=CLA, ins=INS_CHANNEL, p1=0, data=frame)
        )
        outer = apdu.decode_response(self.dispatcher.handle_bytes(outer_bytes))
        if not outer.ok:
            return outer
        inner = self.core.open(seq, _DIR_TO_HOST, outer.data)
        return apdu.decode_response(inner)

    def send_payload(self, ins: int, payload: bytes, p1: int = 0) -> apdu.ApduResponse:
        """Chunk an oversized inner payload across sealed frames."""
        from .tpm.dispatch import CLA

        pieces = [payload[i:i + self.MAX_INNER_DATA]
                  for i in range(0, len(payload), self.MAX_INNER_DATA)] or [b""]
        resp = None
        for idx, piece in enumerate(pieces):
            last = idx == len(pieces) - 1
            resp = self.send(apdu.ApduCommand(
                cla=CLA, ins=ins, p1=p1,
                p2=0 if last else apdu.P2_MORE_CHUNKS, data=piece,
            ))
            if not resp.ok:
                return resp
        return resp


def _lv(data: bytes) -> bytes:
    return len(data).to_bytes(2, "big") + data
