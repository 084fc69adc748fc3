#!/usr/bin/env python3
"""Boot-chain tour: secure boot (verify-then-execute) next to measured boot
(measure-then-extend), and what tampering does to each."""

import dataclasses
import hashlib
import random

from cardtpm import boot
from cardtpm.boot import Stage
from cardtpm.tpm import TpmState

rng = random.Random(2024)

payloads = {stage: f"firmware for {stage.value}".encode() for stage in Stage}
chain = boot.build_chain(payloads, rng)

# --- secure boot: each stage checks the next one's certificate against the
# fused vendor root and its signature over the image. All good here:
result = boot.secure_boot(chain)
print("secure boot:", "OK" if result.success else "ABORT",
      "->", " -> ".join(s.value for s in result.executed))

# Tamper one byte of BL31 and the walk stops exactly there.
images = tuple(
    dataclasses.replace(img, payload=img.payload + b"!") if img.stage is Stage.BL31 else img
    for img in chain.images
)
bad = dataclasses.replace(chain, images=images)
result = boot.secure_boot(bad)
print("tampered BL31:", "ABORT at", result.failed_stage.value, "-", result.reason)

# --- measured boot: nothing is verified and nothing aborts; each stage's
# digest lands in PCR[1], so the damage shows up in the final register value.
card = TpmState(rng=rng)
card.tpm_init()
card.unlock_hierarchies()           # binding is covered in demo 04
boot.measured_boot(chain, card)
golden = card.pcr_read(1)
print("\nmeasured boot PCR[1] (golden):", golden.hex())

card.power_cycle(); card.tpm_init(); card.unlock_hierarchies()
boot.measured_boot(bad, card)
print("measured boot PCR[1] (tampered):", card.pcr_read(1).hex())
print("values differ:", card.pcr_read(1) != golden)

# The register is a hash chain, so the same measurements in another order
# give a different result too:
acc = bytes(32)
for img in chain.images[1:]:
    acc = hashlib.sha256(acc + img.digest).digest()
print("\nindependent fold reproduces the golden value:", acc == golden)

# --- the RTM's challenge-response duty (used by the binding protocol):
identity = boot.make_rtm_identity(b"demo-board", rng)
nonce = rng.randbytes(8)
reply = boot.rtm_respond(nonce, identity, chain)
print("\nRTM response: signature over nonce (%d bytes), M_BL2 %s..." %
      (len(reply.m), reply.m_bl2.hex()[:16]))
