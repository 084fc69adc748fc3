#!/usr/bin/env python3
"""Anonymous attestation lifecycle: issuer setup, blind credential issuance,
signing with and without a basename, linkability, and the proof instruments
(simulator, extractor) that back the scheme's security story."""

import random
import time

from cardtpm import daa
from cardtpm.groups import pairing

rng = random.Random(7)

# --- issuer setup publishes gpk1 = g1^sk_iss and gpk2 = g2^sk_iss
crs, issuer = daa.daa_setup(128, rng)
print("issuer keys consistent:", crs.consistent())

# --- join-issue: the platform's key u' stays hidden inside an additively
# homomorphic ciphertext; the issuer certifies it blindly.
t0 = time.perf_counter()
state, request = daa.join_init(crs, rng)
response = daa.issue(crs, issuer, request, rng)
credential = daa.join_finish(state, response)
print("join completed in %.2f s; credential pairing check:" % (time.perf_counter() - t0),
      credential.valid_for(crs))

# What the issuer saw: a group element, a public key, a ciphertext, a proof.
print("issuer's view of the platform key: ciphertext of %d bytes"
      % len(request.c_u_prime.to_bytes(request.pk_E)))

# --- signing: with a basename the pseudonym is stable per service...
sig_a1 = daa.daa_sign(crs, b"service-A", credential, b"message 1", rng)
sig_a2 = daa.daa_sign(crs, b"service-A", credential, b"message 2", rng)
sig_b = daa.daa_sign(crs, b"service-B", credential, b"message 1", rng)
print("\nsame service, same pseudonym:", sig_a1.nym == sig_a2.nym)
print("other service, other pseudonym:", sig_a1.nym != sig_b.nym)

# ... without one, every signature is unlinkable.
sig_n1 = daa.daa_sign(crs, None, credential, b"m", rng)
sig_n2 = daa.daa_sign(crs, None, credential, b"m", rng)
print("basename-less signatures unlinkable:", sig_n1.nym != sig_n2.nym)

print("\nverify (honest):", daa.daa_verify(crs, b"service-A", b"message 1", sig_a1))
print("verify (flipped message):", daa.daa_verify(crs, b"service-A", b"message X", sig_a1))

# --- the zero-knowledge story, executable:
# A simulator with no credential produces verifying signatures once it may
# program the challenge oracle...
patched = crs.with_oracle(daa.ProgrammableOracle())
nym = patched.group.random_g1(rng)
simulated = daa.sim_sign(patched, b"service-A", nym, b"anything", rng)
print("\nsimulated signature verifies (patched oracle):",
      daa.daa_verify(patched, b"service-A", b"anything", simulated))
print("same signature under the real oracle:",
      daa.daa_verify(crs, b"service-A", b"anything", simulated))

# ... and an extractor given two forked transcripts recovers the credential,
# which is what makes forging equivalent to breaking the signature scheme.
fork = daa.fork_transcripts(crs, credential, b"service-A", rng)
A_hat, sk_hat = daa.extract(crs, fork)
print("\nextractor recovered the secret key:", sk_hat == credential.sk_u)
print("extractor recovered the certificate:", A_hat == credential.A)
print("extracted pair satisfies the pairing relation:",
      pairing(A_hat, crs.gpk2 * (crs.group.g2 ** sk_hat)) == crs.group.gT)
