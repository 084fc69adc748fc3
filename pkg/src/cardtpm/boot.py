"""Bootloader-chain simulation: secure boot, measured boot, RTM responses.

The chain models the ARM-style five-stage sequence BL1 -> BL2 -> BL3-1 ->
BL3-2 (optional) -> BL3-3.  BL1 is the root of trust for measurement and is
never verified or measured itself.  Secure boot verifies each next image's
certificate against the fused vendor-key hash and aborts on the first
failure; measured boot hashes each next image into a PCR and never aborts.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional, Sequence

from . import certs
from .timing import TimingModel


class BootError(ValueError):
    pass


class Stage(Enum):
    BL1 = "BL1"
    BL2 = "BL2"
    BL31 = "BL31"
    BL32 = "BL32"
    BL33 = "BL33"


STAGE_ORDER = [Stage.BL1, Stage.BL2, Stage.BL31, Stage.BL32, Stage.BL33]
OPTIONAL_STAGES = {Stage.BL32}

# Boot measurements extend PCR[1]; the device identity goes to PCR[2].
MEASUREMENT_PCR = 1
BOARD_ID_PCR = 2


@dataclass(frozen=True)
class BootImage:
    stage: Stage
    payload: bytes
    signature: bytes = b""
    signer_cert: Optional[certs.Certificate] = None

    @property
    def digest(self) -> bytes:
        return hashlib.sha256(self.payload).digest()


@dataclass(frozen=True)
class BootChain:
    images: tuple[BootImage, ...]
    root_pubkey_hash: bytes  # fused hash of the trusted vendor public key
    vendor_public: bytes     # the key itself, available to BL1 for checking

    def __post_init__(self):
        stages = [img.stage for img in self.images]
        if not stages or stages[0] is not Stage.BL1:
            raise BootError("chain must start at BL1")
        expected = [s for s in STAGE_ORDER if s in stages]
        if stages != expected:
            raise BootError(f"stages out of order: {[s.value for s in stages]}")
        missing = {s for s in STAGE_ORDER if s not in stages} - OPTIONAL_STAGES
        if missing:
            raise BootError(f"missing stages: {sorted(s.value for s in missing)}")

    def stage_image(self, stage: Stage) -> Optional[BootImage]:
        for img in self.images:
            if img.stage is stage:
                return img
        return None


@dataclass(frozen=True)
class Measurement:
    stage: Stage
    digest: bytes
    pcr_index: int
    recorded: bool = True


@dataclass(frozen=True)
class BootResult:
    success: bool
    executed: tuple[Stage, ...]
    failed_stage: Optional[Stage] = None
    reason: str = ""


@dataclass(frozen=True)
class RtmIdentity:
    """Device signing key with its vendor certificate and board identity."""

    signer: object  # certs.FastSigner or certs.DeterministicSigner
    certificate: certs.Certificate
    board_id: bytes

    @property
    def public_bytes(self) -> bytes:
        return self.signer.public_bytes()


@dataclass(frozen=True)
class RtmResponse:
    m: bytes        # signature over the challenge nonce
    m_bl2: bytes    # 32-byte measurement of BL2


def make_rtm_identity(board_id: bytes, rng, ca: Optional[certs.VendorCA] = None,
                      deterministic: bool = False) -> RtmIdentity:
    ca = ca or certs.test_vendor_ca()
    signer = (certs.DeterministicSigner.generate(rng) if deterministic
              else certs.FastSigner.generate(rng))
    cert = ca.issue(b"rtm:" + board_id, signer.public_bytes())
    return RtmIdentity(signer=signer, certificate=cert, board_id=board_id)


def build_chain(payloads: dict[Stage, bytes], rng,
                ca: Optional[certs.VendorCA] = None,
                rogue_stages: Sequence[Stage] = ()) -> BootChain:
    """Assemble a signed chain.  Stages listed in rogue_stages are signed by
    a key whose certificate does NOT chain to the vendor CA."""
    ca = ca or certs.test_vendor_ca()
    images = []
    for stage in STAGE_ORDER:
        if stage not in payloads:
            if stage in OPTIONAL_STAGES or stage is Stage.BL1:
                if stage is Stage.BL1:
                    raise BootError("BL1 payload required")
                continue
            raise BootError(f"missing payload for {stage.value}")
    for stage in STAGE_ORDER:
        if stage not in payloads:
            continue
        payload = payloads[stage]
        if stage is Stage.BL1:
            images.append(BootImage(stage=stage, payload=payload))
            continue
        signer = certs.DeterministicSigner.generate(rng)
        if stage in rogue_stages:
            rogue = certs.VendorCA(certs.DeterministicSigner.generate(rng),
                                   name=b"unknown signer")
            cert = rogue.issue(b"stage:" + stage.value.encode(), signer.public_bytes())
        else:
            cert = ca.issue(b"stage:" + stage.value.encode(), signer.public_bytes())
        images.append(BootImage(stage=stage, payload=payload,
                                signature=signer.sign(payload), signer_cert=cert))
    return BootChain(
        images=tuple(images),
        root_pubkey_hash=hashlib.sha256(ca.public_bytes).digest(),
        vendor_public=ca.public_bytes,
    )


def secure_boot(chain: BootChain) -> BootResult:
    """Verify-then-execute walk of the chain; failure is a result, not a raise."""
    executed = [Stage.BL1]  # BL1 is axiomatically trusted
    if hashlib.sha256(chain.vendor_public).digest() != chain.root_pubkey_hash:
        return BootResult(False, tuple(executed), chain.images[1].stage,
                          "vendor key does not match fused hash")
    for img in chain.images[1:]:
        cert = img.signer_cert
        if cert is None:
            return BootResult(False, tuple(executed), img.stage, "unsigned image")
        anchored = certs.verify_signature(
            chain.vendor_public, cert.subject + cert.public_key, cert.signature
        )
        if not anchored:
            return BootResult(False, tuple(executed), img.stage,
                              "certificate does not chain to fused root")
        if not certs.verify_signature(cert.public_key, img.payload, img.signature):
            return BootResult(False, tuple(executed), img.stage,
                              "image signature invalid")
        executed.append(img.stage)
    return BootResult(True, tuple(executed))


def measured_boot(chain: BootChain, tpm=None,
                  board_id: Optional[bytes] = None,
                  skip_first: bool = False) -> list[Measurement]:
    """Measure-then-extend walk (authenticated boot): nothing aborts.

    ``tpm`` is anything exposing ``extend_measurement(pcr_index, digest)``;
    when it is None or raises, the boot continues and the affected
    measurements are reported as unrecorded.  ``skip_first`` omits the BL2
    measurement for flows where the binding protocol already recorded it.
    """
    measurements = []

    def _extend(pcr_index: int, digest: bytes) -> bool:
        if tpm is None:
            return False
        try:
            tpm.extend_measurement(pcr_index, digest)
            return True
        except Exception:
            return False

    if board_id is not None:
        digest = hashlib.sha256(board_id).digest()
        measurements.append(Measurement(
            stage=Stage.BL1, digest=digest, pcr_index=BOARD_ID_PCR,
            recorded=_extend(BOARD_ID_PCR, digest),
        ))
    start = 2 if skip_first else 1
    for img in chain.images[start:]:  # BL1 is the RTM, never measured
        digest = img.digest
        measurements.append(Measurement(
            stage=img.stage, digest=digest, pcr_index=MEASUREMENT_PCR,
            recorded=_extend(MEASUREMENT_PCR, digest),
        ))
    return measurements


def rtm_respond(nonce: bytes, identity: RtmIdentity, chain: BootChain) -> RtmResponse:
    """BL1's answer to the card's challenge: signed nonce + BL2 measurement."""
    if len(nonce) != 8:
        raise BootError(f"nonce must be 8 bytes, got {len(nonce)}")
    bl2 = chain.stage_image(Stage.BL2)
    if bl2 is None:
        raise BootError("chain has no BL2 image")
    return RtmResponse(m=identity.signer.sign(nonce), m_bl2=bl2.digest)


def simulate_response_latency(model: TimingModel, rng) -> float:
    """Draw one RTM response latency (microseconds) from the model."""
    return model.draw(rng)


# ---------------------------------------------------------------------------
# Chain description files.
#
#   root = trusted            (or "rogue": fused hash mismatches the CA)
#   board_id = 6170706c65     (hex, optional)
#   [stage BL1]
#   payload = images/bl1.bin
#   [stage BL2]
#   payload = images/bl2.bin
#   key = trusted             (or "rogue": cert does not chain to the CA)


def load_chain_file(path, rng) -> tuple[BootChain, Optional[bytes]]:
    path = Path(path)
    payloads: dict[Stage, bytes] = {}
    rogue: list[Stage] = []
    board_id: Optional[bytes] = None
    root_mode = "trusted"
    current: Optional[Stage] = None
    for line_no, raw in enumerate(path.read_text().splitlines(), 1):
        line = raw.split("#")[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            parts = line[1:-1].split()
            if len(parts) != 2 or parts[0] != "stage":
                raise BootError(f"{path}:{line_no}: bad section {line!r}")
            try:
                current = Stage(parts[1])
            except ValueError:
                raise BootError(f"{path}:{line_no}: unknown stage {parts[1]!r}") from None
            continue
        if "=" not in line:
            raise BootError(f"{path}:{line_no}: expected key = value")
        key, _, value = (s.strip() for s in line.partition("="))
        if current is None:
            if key == "board_id":
                board_id = bytes.fromhex(value)
            elif key == "root":
                root_mode = value
            else:
                raise BootError(f"{path}:{line_no}: unknown global key {key!r}")
        elif key == "payload":
            payloads[current] = (path.parent / value).read_bytes()
        elif key == "key":
            if value == "rogue":
                rogue.append(current)
            elif value != "trusted":
                raise BootError(f"{path}:{line_no}: key must be trusted|rogue")
        else:
            raise BootError(f"{path}:{line_no}: unknown stage key {key!r}")
    chain = build_chain(payloads, rng, rogue_stages=rogue)
    if root_mode == "rogue":
        from dataclasses import replace
        chain = replace(chain, root_pubkey_hash=hashlib.sha256(b"wrong root").digest())
    elif root_mode != "trusted":
        raise BootError(f"root must be trusted|rogue, got {root_mode!r}")
    return chain, board_id
