"""Attestation scheme tests: join protocol, sign/verify, soundness probes,
extractor and simulator behavior."""

import dataclasses
import random

import pytest

from cardtpm import daa, homenc
from cardtpm.groups import G1Element, Scalar, hash_to_g1, pairing


@pytest.fixture(scope="module")
def rng():
    return random.Random(0xDAA)


@pytest.fixture(scope="module")
def setup(rng):
    return daa.daa_setup(128, rng)


@pytest.fixture(scope="module")
def crs(setup):
    return setup[0]


@pytest.fixture(scope="module")
def issuer(setup):
    return setup[1]


@pytest.fixture(scope="module")
def credential(crs, issuer, rng):
    state, req = daa.join_init(crs, rng)
    resp = daa.issue(crs, issuer, req, rng)
    return daa.join_finish(state, resp)


# -- setup ------------------------------------------------------------------


def test_setup_public_keys_consistent(crs):
    assert crs.consistent()


def test_setup_gpk2_matches_secret(crs, issuer):
    assert crs.group.g2 ** issuer.sk_iss == crs.gpk2
    assert crs.group.g1 ** issuer.sk_iss == crs.gpk1


def test_setup_randomized(rng):
    crs1, sk1 = daa.daa_setup(128, rng)
    crs2, sk2 = daa.daa_setup(128, rng)
    assert sk1.sk_iss != sk2.sk_iss
    assert crs1.gpk2 != crs2.gpk2


def test_setup_rejects_unknown_level(rng):
    with pytest.raises(daa.DaaError):
        daa.daa_setup(100, rng)


# -- join -------------------------------------------------------------------


def test_join_request_proof_verifies(crs, rng):
    state, req = daa.join_init(crs, rng)
    assert daa.sok_join_verify(crs, req.U_prime, req.pk_E, req.c_u_prime, req.sok)


def test_join_request_structure(crs, rng):
    state, req = daa.join_init(crs, rng)
    assert req.U_prime == crs.group.g1 ** state.u_prime
    assert homenc.he_dec(state.he_keypair, req.c_u_prime) == int(state.u_prime)


def test_join_request_hides_platform_key(crs, rng):
    # Issuer view: U', pk_E, ciphertext, proof. No field carries u' or sk_E.
    state, req = daa.join_init(crs, rng)
    exposed = {f.name for f in dataclasses.fields(req)}
    assert exposed == {"U_prime", "pk_E", "c_u_prime", "sok"}
    assert not hasattr(req, "u_prime")
    assert not hasattr(req.pk_E, "p") and not hasattr(req.pk_E, "q")


def test_full_join_yields_valid_credential(crs, credential):
    # e(A, g2^sk_u * gpk2) == gT -- the step-10 check with both sides known.
    rhs = (crs.group.g2 ** credential.sk_u) * crs.gpk2
    assert pairing(credential.A, rhs) == crs.group.gT


def test_join_finish_key_is_sum(crs, issuer, rng):
    state, req = daa.join_init(crs, rng)
    resp = daa.issue(crs, issuer, req, rng)
    w = daa.join_finish(state, resp)
    assert w.sk_u == state.u_prime + resp.u_dblprime


def test_issue_refuses_tampered_sok(crs, issuer, rng):
    state, req = daa.join_init(crs, rng)
    bad_sok = dataclasses.replace(req.sok, e=req.sok.e ^ 1)
    bad_req = dataclasses.replace(req, sok=bad_sok)
    with pytest.raises(daa.IssuanceRefused):
        daa.issue(crs, issuer, bad_req, rng)


def test_issue_blinding_fresh_per_call(crs, issuer, rng):
    state, req = daa.join_init(crs, rng)
    r1 = daa.issue(crs, issuer, req, rng)
    r2 = daa.issue(crs, issuer, req, rng)
    assert r1.A_prime != r2.A_prime


def test_join_finish_detects_corrupt_response(crs, issuer, rng):
    state, req = daa.join_init(crs, rng)
    resp = daa.issue(crs, issuer, req, rng)
    bad = dataclasses.replace(resp, A_prime=crs.group.g1)
    with pytest.raises(daa.CredentialInvalid):
        daa.join_finish(state, bad)


def test_sok_binds_statement(crs, rng):
    state, req = daa.join_init(crs, rng)
    other = crs.group.g1 ** Scalar.random(rng, nonzero=True)
    assert not daa.sok_join_verify(crs, other, req.pk_E, req.c_u_prime, req.sok)


def test_sok_binds_context(crs, rng):
    # Verifying under a different issuer key (the "(gpk)" binding) must fail.
    state, req = daa.join_init(crs, rng)
    other_crs, _ = daa.daa_setup(128, rng)
    assert not daa.sok_join_verify(
        other_crs, req.U_prime, req.pk_E, req.c_u_prime, req.sok
    )


def test_sok_range_bound_enforced(crs, rng):
    state, req = daa.join_init(crs, rng)
    huge = dataclasses.replace(
        req.sok, z=req.sok.z + (1 << 300) * crs.group.p
    )
    assert not daa.sok_join_verify(crs, req.U_prime, req.pk_E, req.c_u_prime, huge)


# -- sign / verify ----------------------------------------------------------


def test_sign_verify_roundtrip(crs, credential, rng):
    sig = daa.daa_sign(crs, b"svc", credential, b"payload", rng)
    assert daa.daa_verify(crs, b"svc", b"payload", sig)


def test_sign_verify_no_basename(crs, credential, rng):
    sig = daa.daa_sign(crs, None, credential, b"payload", rng)
    assert sig.D is not None
    assert daa.daa_verify(crs, None, b"payload", sig)


def test_basename_linkability(crs, credential, rng):
    s1 = daa.daa_sign(crs, b"svc", credential, b"m1", rng)
    s2 = daa.daa_sign(crs, b"svc", credential, b"m2", rng)
    assert s1.nym == s2.nym
    assert s1.nym == hash_to_g1(b"svc", tag="daa-bsn") ** credential.sk_u


def test_no_basename_unlinkability(crs, credential, rng):
    s1 = daa.daa_sign(crs, None, credential, b"m", rng)
    s2 = daa.daa_sign(crs, None, credential, b"m", rng)
    assert s1.D != s2.D
    assert s1.nym != s2.nym


def test_verify_rejects_flipped_message(crs, credential, rng):
    sig = daa.daa_sign(crs, b"svc", credential, b"\x00\x01\x02", rng)
    assert not daa.daa_verify(crs, b"svc", b"\x00\x01\x03", sig)


def test_verify_rejects_wrong_basename(crs, credential, rng):
    sig = daa.daa_sign(crs, b"svc-a", credential, b"m", rng)
    assert not daa.daa_verify(crs, b"svc-b", b"m", sig)


def test_verify_rejects_single_field_corruption(crs, credential, rng):
    sig = daa.daa_sign(crs, b"svc", credential, b"m", rng)
    g = crs.group.g1
    one = Scalar(1)
    corruptions = {
        "c": dataclasses.replace(sig, c=sig.c + one),
        "s1": dataclasses.replace(sig, s1=sig.s1 + one),
        "s2": dataclasses.replace(sig, s2=sig.s2 + one),
        "R": dataclasses.replace(sig, R=sig.R * g),
        "B": dataclasses.replace(sig, B=sig.B * g),
        "nym": dataclasses.replace(sig, nym=sig.nym * g),
    }
    for name, bad in corruptions.items():
        assert not daa.daa_verify(crs, b"svc", b"m", bad), f"corrupt {name} accepted"


def test_verify_rejects_pairing_violation(crs, credential, rng):
    # Replacing B by B*g1 keeps nothing consistent; also patch the challenge
    # path by re-deriving a fake signature whose hash check passes but whose
    # pairing must fail: use the simulator structure with wrong gpk1.
    sig = daa.daa_sign(crs, b"svc", credential, b"m", rng)
    bad = dataclasses.replace(sig, B=sig.B * crs.group.g1)
    assert not daa.daa_verify(crs, b"svc", b"m", bad)


def test_verify_rejects_mismatched_d_presence(crs, credential, rng):
    with_bsn = daa.daa_sign(crs, b"svc", credential, b"m", rng)
    assert not daa.daa_verify(crs, None, b"m", with_bsn)  # needs D, has none
    without = daa.daa_sign(crs, None, credential, b"m", rng)
    assert not daa.daa_verify(crs, b"svc", b"m", without)  # stray D


def test_completeness_sample(crs, issuer, rng):
    # Broader (w, m, bsn) sweep lives in the acceptance suite.
    for i in range(10):
        state, req = daa.join_init(crs, rng)
        w = daa.join_finish(state, daa.issue(crs, issuer, req, rng))
        bsn = None if i % 3 == 0 else bytes([i])
        m = rng.randbytes(rng.randrange(0, 64))
        assert daa.daa_verify(crs, bsn, m, daa.daa_sign(crs, bsn, w, m, rng))


def test_precomputation_cache_concurrent_take_one(crs, credential, rng):
    import threading

    cache = daa.PrecompCache()
    items = [daa.precompute_tuple(crs, credential, rng) for _ in range(16)]
    for item in items:
        cache.add(item)
    taken = []
    lock = threading.Lock()

    def consumer():
        while True:
            item = cache.take()
            if item is None:
                return
            with lock:
                taken.append(item)

    threads = [threading.Thread(target=consumer) for _ in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    # every tuple handed out exactly once
    assert len(taken) == 16
    assert len({id(t) for t in taken}) == 16


def test_precomputation_cache(crs, credential, rng):
    cache = daa.PrecompCache()
    for _ in range(3):
        cache.add(daa.precompute_tuple(crs, credential, rng))
    assert len(cache) == 3
    sig = daa.daa_sign(crs, b"svc", credential, b"m", rng, precomp=cache)
    assert len(cache) == 2  # one tuple consumed
    assert daa.daa_verify(crs, b"svc", b"m", sig)
    cache.take(), cache.take()
    assert cache.take() is None
    # empty cache falls back to fresh randomness
    sig2 = daa.daa_sign(crs, b"svc", credential, b"m2", rng, precomp=cache)
    assert daa.daa_verify(crs, b"svc", b"m2", sig2)


# -- extractor --------------------------------------------------------------


def test_extractor_recovers_credential(crs, credential, rng):
    fork = daa.fork_transcripts(crs, credential, b"svc", rng)
    A_hat, sk_hat = daa.extract(crs, fork)
    assert sk_hat == credential.sk_u
    assert A_hat == credential.A


def test_extracted_pair_satisfies_relations(crs, credential, rng):
    fork = daa.fork_transcripts(crs, credential, b"svc", rng)
    A_hat, sk_hat = daa.extract(crs, fork)
    assert fork.nym == hash_to_g1(b"svc", tag="daa-bsn") ** sk_hat
    assert pairing(A_hat, crs.gpk2 * (crs.group.g2 ** sk_hat)) == crs.group.gT


def test_extractor_rejects_equal_challenges(crs, credential, rng):
    fork = daa.fork_transcripts(crs, credential, b"svc", rng)
    degenerate = dataclasses.replace(
        fork, c_prime=fork.c, s1_prime=fork.s1, s2_prime=fork.s2
    )
    with pytest.raises(daa.ExtractionDegenerate):
        daa.extract(crs, degenerate)


def test_forked_transcripts_satisfy_verification_equations(crs, credential, rng):
    # The extractor precondition: both transcripts restore the same T-values.
    fork = daa.fork_transcripts(crs, credential, b"svc", rng)
    g1 = crs.group.g1
    t1_a = (g1 ** fork.s2) * (fork.R ** (-fork.s1)) * (fork.B ** (-fork.c))
    t1_b = (g1 ** fork.s2_prime) * (fork.R ** (-fork.s1_prime)) * (fork.B ** (-fork.c_prime))
    assert t1_a == t1_b
    t2_a = (fork.D ** fork.s1) * (fork.nym ** (-fork.c))
    t2_b = (fork.D ** fork.s1_prime) * (fork.nym ** (-fork.c_prime))
    assert t2_a == t2_b


# -- simulator --------------------------------------------------------------


def test_simulator_requires_programmable_oracle(crs, rng):
    nym = crs.group.random_g1(rng)
    with pytest.raises(daa.DaaError):
        daa.sim_sign(crs, b"svc", nym, b"m", rng)


def test_simulated_signature_verifies(crs, rng):
    patched = crs.with_oracle(daa.ProgrammableOracle())
    nym = crs.group.random_g1(rng)
    sig = daa.sim_sign(patched, b"svc", nym, b"m", rng)
    assert daa.daa_verify(patched, b"svc", b"m", sig)
    # outside the patched oracle the simulated challenge no longer matches
    assert not daa.daa_verify(crs, b"svc", b"m", sig)


def test_simulator_pairing_identity(crs, rng):
    patched = crs.with_oracle(daa.ProgrammableOracle())
    nym = crs.group.random_g1(rng)
    sig = daa.sim_sign(patched, b"svc", nym, b"m", rng)
    assert pairing(sig.R, patched.gpk2) == pairing(sig.B, patched.group.g2)


def test_simulator_without_basename(crs, rng):
    patched = crs.with_oracle(daa.ProgrammableOracle())
    nym = crs.group.random_g1(rng)
    sig = daa.sim_sign(patched, None, nym, b"m", rng)
    assert sig.D is not None
    assert daa.daa_verify(patched, None, b"m", sig)


def test_simulated_and_honest_share_pairing_relation(crs, credential, rng):
    patched = crs.with_oracle(daa.ProgrammableOracle())
    for i in range(10):
        honest = daa.daa_sign(patched, b"s", credential, bytes([i]), rng)
        sim = daa.sim_sign(patched, b"s", patched.group.random_g1(rng), bytes([i]), rng)
        for sig in (honest, sim):
            assert pairing(sig.R, patched.gpk2) == pairing(sig.B, patched.group.g2)


# -- wire encodings ---------------------------------------------------------


def test_signature_encoding_roundtrip(crs, credential, rng):
    for bsn in (b"svc", None):
        sig = daa.daa_sign(crs, bsn, credential, b"m", rng)
        assert daa.decode_signature(daa.encode_signature(sig)) == sig


def test_join_message_encoding_roundtrip(crs, issuer, rng):
    state, req = daa.join_init(crs, rng)
    assert daa.decode_join_request(daa.encode_join_request(req)) == req
    resp = daa.issue(crs, issuer, req, rng)
    wire = daa.encode_join_response(resp, req.pk_E)
    assert daa.decode_join_response(wire, req.pk_E) == resp


def test_wire_rejects_bad_version(crs, credential, rng):
    sig = daa.daa_sign(crs, b"svc", credential, b"m", rng)
    data = bytearray(daa.encode_signature(sig))
    data[0] = 0xFF
    with pytest.raises(daa.WireError):
        daa.decode_signature(bytes(data))
    with pytest.raises(daa.WireError):
        daa.decode_signature(bytes(data[:10]))
