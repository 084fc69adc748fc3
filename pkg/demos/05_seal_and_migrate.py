#!/usr/bin/env python3
"""Portable sealed storage: sealing under policies, the brittleness of raw
PCR binding, authority-endorsed migration, and key duplication between two
cards (the switch-the-SIM and switch-the-phone stories)."""

import hashlib
import random

from cardtpm import certs
from cardtpm.tpm import DigestApproval, Policy, TpmError, TpmState

rng = random.Random(5)

phone_a = TpmState(rng=rng)
phone_a.tpm_init()
phone_a.unlock_hierarchies()

# Device identity lands in PCR[2] during boot; we model two boards.
phone_a.pcr_extend(2, hashlib.sha256(b"board-A").digest())

# --- plain sealing round trip
blob = phone_a.seal(b"disk encryption key")
print("plain seal/unseal:", phone_a.unseal(blob))

# --- PCR-bound sealing is brittle: any further extend bricks the blob
fragile = phone_a.seal(b"fragile secret", Policy(kind="pcr", selection=(2,)))
print("pcr-bound unseal (matching state):", phone_a.unseal(fragile))
phone_a.pcr_extend(2, hashlib.sha256(b"software update").digest())
try:
    phone_a.unseal(fragile)
except TpmError as exc:
    print("after state change:", exc)

# --- TPM_Authorize: instead of pinning one digest, pin an AUTHORITY that
# signs off acceptable digests.  New devices are endorsed with one signature.
authority = certs.FastSigner.generate(rng)
policy = Policy(kind="authorized", selection=(2,),
                authority_public=authority.public_bytes())

phone_a.power_cycle(); phone_a.tpm_init(); phone_a.unlock_hierarchies()
phone_a.pcr_extend(2, hashlib.sha256(b"board-A").digest())
seal_key, _ = phone_a.create_key(duplicable=True)
user_data = phone_a.seal(b"user vault", policy, key_handle=seal_key)

digest_a = phone_a.composite_digest((2,))
approval_a = DigestApproval(digest_a, authority.sign(digest_a))
print("\nauthorized unseal on phone A:", phone_a.unseal(user_data, approval_a))

# The SIM moves to phone B: whole TPM state travels with the card, but the
# data is bound to board identity, so B needs an endorsement.
phone_b = TpmState(rng=rng)
phone_b.tpm_init()
phone_b.unlock_hierarchies()
phone_b.pcr_extend(2, hashlib.sha256(b"board-B").digest())

# Migrate the sealing key (switching the SIM card = key duplication):
dup = phone_a.duplicate_key(seal_key, phone_b.srk_public)
phone_b.import_key(dup)

try:
    phone_b.unseal(user_data, approval_a)
except TpmError as exc:
    print("phone B before endorsement:", exc)

digest_b = phone_b.composite_digest((2,))
approval_b = DigestApproval(digest_b, authority.sign(digest_b))
print("phone B after the authority signs its digest:",
      phone_b.unseal(user_data, approval_b))

# Non-duplicable keys refuse to leave:
pinned_key, _ = phone_a.create_key(duplicable=False)
try:
    phone_a.duplicate_key(pinned_key, phone_b.srk_public)
except TpmError as exc:
    print("\nnon-duplicable key:", exc)

# And a duplication blob aimed at phone B is useless to anyone else:
phone_c = TpmState(rng=rng)
phone_c.tpm_init()
try:
    phone_c.import_key(phone_a.duplicate_key(seal_key, phone_b.srk_public))
except TpmError as exc:
    print("phone C stealing B's blob:", exc)
