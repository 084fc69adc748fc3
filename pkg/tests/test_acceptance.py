"""Acceptance criteria, one test per numbered criterion.

Each test ends by printing a PASS line (run with `pytest -s` to see them).
Criterion 1 carries a documented upstream numerical erratum; see the
comments there and the exactness/provenance companions.
"""

import dataclasses
import hashlib
import random
import time

import pytest

from cardtpm import apdu, binding, boot, certs, daa, homenc
from cardtpm.binding import DistanceBoundingConfig
from cardtpm.groups import ORDER, Scalar, hash_to_g1, pairing
from cardtpm.timing import TimingModel, bundled_rtm_samples
from cardtpm.tpm import (
    DigestApproval,
    Policy,
    SealedBlob,
    TpmError,
    TpmState,
)


def ok(n, text):
    print(f"\nACCEPTANCE {n}: PASS - {text}")


@pytest.fixture(scope="module")
def rng():
    return random.Random(0xACCE97)


@pytest.fixture(scope="module")
def daa_env(rng):
    crs, issuer = daa.daa_setup(128, rng)
    credentials = []
    for _ in range(12):
        state, req = daa.join_init(crs, rng)
        credentials.append(daa.join_finish(state, daa.issue(crs, issuer, req, rng)))
    return crs, issuer, credentials


# -- criterion 1: binomial acceptance figure ---------------------------------


def test_criterion_01_exact_value_and_runtime():
    binding.binom_tail(30, 14, 0.83)  # warm-up
    t0 = time.perf_counter()
    value = binding.binom_tail(30, 14, 0.83)
    elapsed = time.perf_counter() - t0
    # The exact sum at the stated arguments, frozen from a 30-digit
    # mpmath evaluation: 0.999998972130340849...
    assert value == pytest.approx(0.999998972130340849, abs=1e-12)
    assert elapsed < 1e-3
    ok(1, f"binom_tail(30,14,0.83) = {value!r} in {elapsed*1e6:.0f} us "
          "(exact sum; see erratum companions)")


@pytest.mark.xfail(
    strict=True,
    reason="documented upstream erratum: the published figure 0.99999724049 "
    "is binom_tail(30, 15, 0.84), not binom_tail(30, 14, 0.83) = 0.9999989721; "
    "no correct implementation can satisfy the criterion as literally stated",
)
def test_criterion_01_published_figure_as_literally_stated():
    assert binding.binom_tail(30, 14, 0.83) == pytest.approx(0.99999724049, abs=1e-9)


def test_criterion_01_published_figure_provenance():
    # The published constant is reproduced, to well inside the 1e-9
    # tolerance, by the same sum at k=15, p=0.84.
    assert binding.binom_tail(30, 15, 0.84) == pytest.approx(0.99999724049, abs=1e-9)
    ok(1, "published 0.99999724049 identified as binom_tail(30,15,0.84) "
          f"(delta {abs(binding.binom_tail(30,15,0.84)-0.99999724049):.1e})")


# -- criterion 2: binomial oracle equivalence ---------------------------------


def test_criterion_02_enumeration_oracle():
    def enumerated_tail(n, k, p):
        total = 0.0
        for mask in range(1 << n):
            ones = mask.bit_count()
            if ones >= k:
                total += p**ones * (1.0 - p) ** (n - ones)
        return total

    rng = random.Random(2)
    t0 = time.perf_counter()
    checks = 0
    for n in range(1, 13):
        for _ in range(20):
            k = rng.randrange(0, n + 1)
            p = rng.random()
            assert binding.binom_tail(n, k, p) == pytest.approx(
                enumerated_tail(n, k, p), abs=1e-12
            )
            checks += 1
    elapsed = time.perf_counter() - t0
    assert elapsed < 5.0
    ok(2, f"{checks} exhaustive 2^n enumerations agree within 1e-12 "
          f"({elapsed:.2f} s)")


# -- criterion 3: DAA completeness --------------------------------------------


def test_criterion_03_completeness_1000(daa_env, rng):
    crs, _, credentials = daa_env
    t0 = time.perf_counter()
    for i in range(1000):
        w = credentials[i % len(credentials)]
        m = rng.randbytes(rng.randrange(1, 48))
        bsn = rng.randbytes(8) if i % 4 else None
        sig = daa.daa_sign(crs, bsn, w, m, rng)
        assert daa.daa_verify(crs, bsn, m, sig), f"iteration {i} rejected"
    elapsed = time.perf_counter() - t0
    assert elapsed < 120.0
    ok(3, f"1000 random (credential, message, basename) sign->verify accepted "
          f"({elapsed:.1f} s at 254-bit group order)")


# -- criterion 4: extraction ----------------------------------------------------


def test_criterion_04_extraction_100(daa_env, rng):
    crs, _, credentials = daa_env
    t0 = time.perf_counter()
    for i in range(100):
        w = credentials[i % len(credentials)]
        bsn = b"extract-%d" % i
        fork = daa.fork_transcripts(crs, w, bsn, rng)
        A_hat, sk_hat = daa.extract(crs, fork)
        assert sk_hat == w.sk_u
        assert fork.nym == hash_to_g1(bsn, tag="daa-bsn") ** sk_hat
        assert pairing(A_hat, crs.gpk2 * (crs.group.g2 ** sk_hat)) == crs.group.gT
    ok(4, f"100/100 forked transcripts extracted the credential "
          f"({time.perf_counter()-t0:.1f} s)")


# -- criterion 5: simulation ------------------------------------------------------


def test_criterion_05_simulation_100(daa_env, rng):
    crs, _, _ = daa_env
    patched = crs.with_oracle(daa.ProgrammableOracle())
    t0 = time.perf_counter()
    for i in range(100):
        bsn = b"sim-%d" % i
        nym = patched.group.random_g1(rng)
        m = rng.randbytes(24)
        sig = daa.sim_sign(patched, bsn, nym, m, rng)
        assert daa.daa_verify(patched, bsn, m, sig), f"simulated signature {i} rejected"
        assert pairing(sig.R, patched.gpk2) == pairing(sig.B, patched.group.g2)
    ok(5, f"100/100 credential-less simulated signatures verify under the "
          f"patched oracle ({time.perf_counter()-t0:.1f} s)")


# -- criterion 6: join-issue correctness -------------------------------------------


def test_criterion_06_join_100(rng):
    crs, issuer = daa.daa_setup(128, rng)
    t0 = time.perf_counter()
    for i in range(100):
        state, req = daa.join_init(crs, rng)
        resp = daa.issue(crs, issuer, req, rng)
        w = daa.join_finish(state, resp)
        # the step-10 check, with the platform-known exponent on g2
        assert pairing(w.A, (crs.group.g2 ** w.sk_u) * crs.gpk2) == crs.group.gT
    elapsed = time.perf_counter() - t0

    # corruption of each issuer-response field is detected by join_finish
    state, req = daa.join_init(crs, rng)
    resp = daa.issue(crs, issuer, req, rng)
    corrupted = [
        dataclasses.replace(resp, A_prime=crs.group.g1),
        dataclasses.replace(resp, u_dblprime=resp.u_dblprime + Scalar(1)),
        dataclasses.replace(
            resp,
            c_u_dblprime=homenc.he_add(
                req.pk_E, resp.c_u_dblprime, homenc.he_enc(req.pk_E, 1, rng)
            ),
        ),
    ]
    for bad in corrupted:
        with pytest.raises(daa.CredentialInvalid):
            daa.join_finish(state, bad)
    ok(6, f"100/100 joins passed the pairing check ({elapsed:.1f} s); "
          "all issuer-response corruptions detected")


# -- criterion 7: homomorphic encryption ---------------------------------------------


def test_criterion_07_homomorphic_laws(rng):
    keypair = homenc.he_keygen(80, (1 << 61) - 1, rng)
    pk = keypair.public
    n = keypair.n
    t0 = time.perf_counter()
    for _ in range(1000):
        a, b, k = rng.randrange(n), rng.randrange(n), rng.randrange(n)
        ca, cb = homenc.he_enc(pk, a, rng), homenc.he_enc(pk, b, rng)
        assert homenc.he_dec(keypair, homenc.he_add(pk, ca, cb)) == (a + b) % n
        assert homenc.he_dec(keypair, homenc.he_mulc(pk, ca, k)) == (a * k) % n
    elapsed = time.perf_counter() - t0

    # keygen plaintext-space bound, verified arithmetically at the group order
    group_key = homenc.he_keygen(128, ORDER, rng)
    bound = (1 << (128 + 3)) * ORDER * ORDER
    assert group_key.max_plaintext >= bound
    ok(7, f"1000 random (a,b,k) satisfy the homomorphic laws ({elapsed:.1f} s); "
          f"plaintext space {group_key.n.bit_length()} bits >= bound "
          f"{bound.bit_length()} bits")


# -- criterion 8: APDU round trips -----------------------------------------------------


def test_criterion_08_apdu_fuzz():
    rng = random.Random(8)
    t0 = time.perf_counter()
    for _ in range(10_000):
        cmd = apdu.ApduCommand(
            cla=rng.randrange(256), ins=rng.randrange(256),
            p1=rng.randrange(256), p2=rng.randrange(256),
            data=rng.randbytes(rng.randrange(0, 256)),
            exp_data_size=rng.randrange(256),
        )
        frame = apdu.encode_command(cmd)
        assert apdu.decode_command(frame) == cmd
        assert len(frame) == 6 + len(cmd.data)
    for size in (0, 1, 255, 256, 511, 4096, 65535, 65536):
        payload = rng.randbytes(size)
        assert apdu.reassemble(apdu.chunk_payload(0x30, payload)) == payload
    ok(8, f"10^4 frame round trips + chunk identity up to 64 KiB "
          f"({time.perf_counter()-t0:.1f} s)")


# -- criterion 9: PCR oracle and persistence ----------------------------------------------


def test_criterion_09_pcr_oracle_and_persistence(tmp_path):
    rng = random.Random(9)
    tpm = TpmState(rng=rng)
    tpm.tpm_init()
    tpm.unlock_hierarchies()
    for _ in range(100):
        tpm.power_cycle()
        tpm.tpm_init()
        tpm.unlock_hierarchies()
        index = rng.randrange(24)
        seq = [rng.randbytes(32) for _ in range(rng.randrange(0, 21))]
        acc = bytes(32)
        for d in seq:
            tpm.pcr_extend(index, d)
            acc = hashlib.sha256(acc + d).digest()
        assert tpm.pcr_read(index) == acc

    tpm.counter_create(1)
    for _ in range(5):
        tpm.counter_increment(1)
    tpm.nv_write(0x44, rng.randbytes(99))
    snapshot = tpm.to_bytes()
    tpm.pcr_extend(3, rng.randbytes(32))
    tpm.power_cycle()
    assert tpm.pcrs == [bytes(32)] * 24

    path = tmp_path / "state.tpm"
    tpm.save(path)
    loaded = TpmState.load(path)
    assert loaded.to_bytes() == snapshot  # byte-exact persistent state
    assert loaded.counter_read(1) == 5
    assert loaded.nv_read(0x44) == tpm.nv_read(0x44)
    ok(9, "100 extend sequences match the SHA-256 fold oracle; PCRs reset on "
          "power cycle; counters and NV byte-exact through save/load")


# -- criterion 10: sealing ---------------------------------------------------------------


def test_criterion_10_sealing(rng):
    tpm = TpmState(rng=rng)
    tpm.tpm_init()
    tpm.unlock_hierarchies()
    t0 = time.perf_counter()
    for _ in range(100):
        data = rng.randbytes(rng.randrange(0, 4097))
        assert tpm.unseal(tpm.seal(data)) == data

    # PCR-bound blob fails after any extend of a selected register
    for selection in ((1,), (2, 5), (0, 7, 9)):
        for d in selection:
            tpm.pcr_extend(d, rng.randbytes(32))
        blob = tpm.seal(b"fragile", Policy(kind="pcr", selection=selection))
        assert tpm.unseal(blob) == b"fragile"
        victim = selection[rng.randrange(len(selection))]
        tpm.pcr_extend(victim, rng.randbytes(32))
        with pytest.raises(TpmError):
            tpm.unseal(blob)

    # TPM_Authorize migration across device identities
    authority = certs.FastSigner.generate(rng)
    policy = Policy(kind="authorized", selection=(2,),
                    authority_public=authority.public_bytes())
    dev_a = TpmState(rng=rng)
    dev_a.tpm_init()
    dev_a.unlock_hierarchies()
    dev_a.pcr_extend(2, hashlib.sha256(b"board-A").digest())
    key_a, _ = dev_a.create_key(duplicable=True)
    blob = dev_a.seal(b"portable", policy, key_handle=key_a)
    approval_a = DigestApproval(dev_a.composite_digest((2,)),
                                authority.sign(dev_a.composite_digest((2,))))
    assert dev_a.unseal(blob, approval_a) == b"portable"

    dev_b = TpmState(rng=rng)
    dev_b.tpm_init()
    dev_b.unlock_hierarchies()
    dev_b.pcr_extend(2, hashlib.sha256(b"board-B").digest())
    dev_b.import_key(dev_a.duplicate_key(key_a, dev_b.srk_public))
    with pytest.raises(TpmError):
        dev_b.unseal(blob, approval_a)   # A's digest approval does not fit B
    digest_b = dev_b.composite_digest((2,))
    approval_b = DigestApproval(digest_b, authority.sign(digest_b))
    assert dev_b.unseal(blob, approval_b) == b"portable"
    ok(10, f"100 round trips <= 4 KiB; PCR brittleness; authority-gated "
           f"migration ({time.perf_counter()-t0:.1f} s)")


# -- criterion 11: boot chains ----------------------------------------------------------------


def test_criterion_11_boot(rng):
    payloads = {s: b"stage:" + s.value.encode() + rng.randbytes(48) for s in boot.Stage}
    for victim in (boot.Stage.BL2, boot.Stage.BL31, boot.Stage.BL32, boot.Stage.BL33):
        chain = boot.build_chain(payloads, rng, rogue_stages=[victim])
        result = boot.secure_boot(chain)
        assert not result.success and result.failed_stage is victim
        assert victim not in result.executed

    chain = boot.build_chain(payloads, rng)
    assert boot.secure_boot(chain).success

    class Sink:
        def __init__(self):
            self.pcrs = {}

        def extend_measurement(self, idx, digest):
            self.pcrs[idx] = hashlib.sha256(self.pcrs.get(idx, bytes(32)) + digest).digest()

    sink = Sink()
    boot.measured_boot(chain, sink)
    acc = bytes(32)
    for img in chain.images[1:]:
        acc = hashlib.sha256(acc + hashlib.sha256(img.payload).digest()).digest()
    assert sink.pcrs[boot.MEASUREMENT_PCR] == acc

    swapped = list(chain.images)
    swapped[2], swapped[3] = (
        dataclasses.replace(swapped[3], stage=swapped[2].stage),
        dataclasses.replace(swapped[2], stage=swapped[3].stage),
    )
    sink2 = Sink()
    boot.measured_boot(dataclasses.replace(chain, images=tuple(swapped)), sink2)
    assert sink2.pcrs[boot.MEASUREMENT_PCR] != sink.pcrs[boot.MEASUREMENT_PCR]
    ok(11, "per-stage tamper aborts exactly there; measured PCR[1] equals the "
           "fold oracle; permutation changes the result")


# -- criterion 12: distance bounding -------------------------------------------------------------


def test_criterion_12_distance_bounding(rng):
    t0 = time.perf_counter()
    identity = boot.make_rtm_identity(b"ac12-board", rng)
    chain = boot.build_chain({s: b"i" + s.value.encode() for s in boot.Stage}, rng)
    cfg = DistanceBoundingConfig()

    card = TpmState(rng=rng)
    card.tpm_init("db")
    channel = binding.make_rtm_channel(identity, chain, TimingModel.constant(600), rng)
    outcome = binding.run_distance_bounding(card, cfg, channel,
                                            identity.certificate, identity.public_bytes)
    assert outcome.bound and outcome.successes == 30

    card2 = TpmState(rng=rng)
    card2.tpm_init("db")
    relay_model = TimingModel.empirical(bundled_rtm_samples(), relay_delay_us=200)
    outcome2 = binding.run_distance_bounding(
        card2, cfg, binding.make_rtm_channel(identity, chain, relay_model, rng),
        identity.certificate, identity.public_bytes)
    assert not outcome2.bound and outcome2.successes == 0
    assert outcome2.rounds_played == 30

    # 10^4 seeded Bernoulli(0.83) trials; the signature event is stipulated
    # valid for the honest RTM (probability-one event, proven by the
    # real-crypto legs above and the matched-seed subset below).
    model = TimingModel.bernoulli(0.83, cfg.threshold_us)
    rate = binding.estimate_acceptance_rate(cfg, model, trials=10_000, seed=4242,
                                            signature_model="stipulated")
    assert abs(rate - 0.99999724049) <= 1e-3
    rate_crypto = binding.estimate_acceptance_rate(cfg, model, trials=1200, seed=4242,
                                                   workers=2, signature_model="real")
    assert abs(rate_crypto - 0.99999724049) <= 1e-3
    elapsed = time.perf_counter() - t0
    assert elapsed < 60.0
    ok(12, f"30/30 at constant 600 us; 0/30 with +200 us relay; acceptance "
           f"{rate!r} over 10^4 trials (and {rate_crypto!r} over 1200 "
           f"full-crypto trials) within 1e-3 ({elapsed:.1f} s)")


# -- criterion 13: binding gate -----------------------------------------------------------------


def test_criterion_13_binding_gate(rng):
    from cardtpm.tpm import CardDispatcher
    from cardtpm.tpm.dispatch import CLA, INS_INIT, INS_PCR_EXTEND

    def gated_calls(card, blob):
        return [
            lambda: card.pcr_extend(0, bytes(32)),
            lambda: card.seal(b"x"),
            lambda: card.unseal(blob),
            lambda: card.quote((0,), bytes(8)),
        ]

    # distance-bounding mode
    card = TpmState(rng=rng)
    card.tpm_init("db")
    card.unlock_hierarchies()
    blob = card.seal(b"x")
    card.hierarchies_locked = True
    for call in gated_calls(card, blob):
        with pytest.raises(TpmError) as err:
            call()
        assert err.value.sw == apdu.SW_CONDITIONS_NOT_SATISFIED

    identity = boot.make_rtm_identity(b"ac13", rng)
    chain = boot.build_chain({s: b"i" + s.value.encode() for s in boot.Stage}, rng)
    cfg = DistanceBoundingConfig(rounds=1, success_fraction=1.0)
    outcome = binding.run_distance_bounding(
        card, cfg, binding.make_rtm_channel(identity, chain, TimingModel.constant(600), rng),
        identity.certificate, identity.public_bytes)
    assert outcome.bound
    card.pcr_extend(5, bytes(32))
    assert card.unseal(blob) == b"x"

    # TEE-proxy mode: binding via channel, outside-channel refusal, replay drop
    card2 = TpmState(rng=rng)
    disp = CardDispatcher(card2)
    disp.handle(apdu.ApduCommand(cla=CLA, ins=INS_INIT, p1=1))
    extend = apdu.ApduCommand(cla=CLA, ins=INS_PCR_EXTEND, p1=4, data=bytes(32))
    assert disp.handle(extend).status_word == apdu.SW_CONDITIONS_NOT_SATISFIED
    signer = certs.FastSigner.generate(rng)
    cert = certs.test_vendor_ca().issue(b"ac13-dev", signer.public_bytes())
    channel = binding.TeeChannel(disp, signer, cert, rng)
    assert channel.send(extend).ok
    assert disp.handle(extend).status_word == apdu.SW_CONDITIONS_NOT_SATISFIED
    frames = [f for f, _ in disp.log if len(f) > 6 and f[1] == 0x81]
    replay = apdu.decode_response(disp.handle_bytes(frames[-1]))
    assert replay.status_word == apdu.SW_CONDITIONS_NOT_SATISFIED
    ok(13, "gate refuses extend/seal/unseal/quote before binding in both "
           "modes, admits them after, and TEE mode enforces the channel "
           "and drops replays")


# -- criterion 14: bandwidth formula ---------------------------------------------------------------


def test_criterion_14_bandwidth(capsys):
    from cardtpm.cli import main

    code = main(["stats", "bandwidth", "--bits", "880", "--slack-us", "158"])
    out1 = capsys.readouterr().out
    assert code == 0
    assert float(out1) == pytest.approx(5.5696e6, rel=1e-3)

    code = main(["stats", "bandwidth", "--bits", "416", "--slack-us", "158"])
    out2 = capsys.readouterr().out
    assert code == 0
    assert float(out2) == pytest.approx(2.6329e6, rel=1e-3)

    # The published ~5.87 Mbps floor is not reproducible from the stated
    # inputs (880 bits over 158 us gives ~5.57): documented, not asserted.
    assert abs(float(out1) - 5.87e6) > 1e5
    ok(14, f"880 bits/158 us -> {float(out1)/1e6:.2f} Mbps; 416 bits -> "
           f"{float(out2)/1e6:.2f} Mbps; published 5.87 Mbps documented "
           "as not derivable from the stated inputs")
