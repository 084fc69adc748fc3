"""RTM binding: session state machine, distance bounding runs, TEE channel,
and the supporting statistics."""

import hashlib
import math
import random

import pytest

from cardtpm import apdu, binding, boot, certs
from cardtpm.binding import DistanceBoundingConfig
from cardtpm.timing import TimingModel, bundled_rtm_samples
from cardtpm.tpm import BINDING_NV_REGION, CardDispatcher, TpmState
from cardtpm.tpm.dispatch import CLA, INS_BIND, INS_INIT, INS_PCR_EXTEND, send_payload


@pytest.fixture()
def rng():
    return random.Random(0xB17D)


@pytest.fixture()
def identity(rng):
    return boot.make_rtm_identity(b"board-X", rng)


@pytest.fixture()
def chain(rng):
    return boot.build_chain(
        {s: b"img:" + s.value.encode() for s in boot.Stage}, rng
    )


@pytest.fixture()
def card(rng):
    t = TpmState(rng=rng)
    t.tpm_init("db")
    return t


def lv(b):
    return len(b).to_bytes(2, "big") + b


# -- config -------------------------------------------------------------------


def test_config_defaults_match_protocol_constants():
    cfg = DistanceBoundingConfig()
    assert cfg.threshold_us == 721.0
    assert cfg.rounds == 30
    assert cfg.success_fraction == 0.47
    assert cfg.delta_us == 721.0
    assert cfg.nonce_bytes == 8
    # fractional quota floors: 0.47 * 30 = 14.1 -> 14 required successes
    assert cfg.required_successes == 14


def test_config_validation():
    with pytest.raises(binding.BindingError):
        DistanceBoundingConfig(rounds=0)
    with pytest.raises(binding.BindingError):
        DistanceBoundingConfig(success_fraction=0)
    with pytest.raises(binding.BindingError):
        DistanceBoundingConfig(threshold_us=-1)


def test_config_file_roundtrip(tmp_path):
    path = tmp_path / "db.cfg"
    path.write_text("T_us = 700\nrounds = 10\nfraction = 0.5\n")
    cfg = binding.load_db_config(path)
    assert cfg.threshold_us == 700 and cfg.rounds == 10
    assert cfg.required_successes == 5
    bad = tmp_path / "bad.cfg"
    bad.write_text("bogus = 1\n")
    with pytest.raises(binding.BindingError):
        binding.load_db_config(bad)


# -- single-exchange protocol (the figure's two steps) --------------------------


def test_single_exchange_success_updates_pcrs(card, identity, chain, rng):
    session = binding.BindingSession(card)  # defaults: one round, must succeed
    card.set_clock(10_000)
    nonce = session.init_extend(identity.public_bytes, identity.certificate)
    assert len(nonce) == 8
    resp = boot.rtm_respond(nonce, identity, chain)
    card.set_clock(10_600)  # rtt 600 < 721
    result = session.pcr_sig_extend(resp.m, resp.m_bl2)
    assert result.ok and session.bound
    # PCR[0] = H(0^32 || m), PCR[1] = H(0^32 || M_BL2), transcript in NV
    assert card.pcr_read(0) == hashlib.sha256(bytes(32) + resp.m).digest()
    assert card.pcr_read(1) == hashlib.sha256(bytes(32) + resp.m_bl2).digest()
    stored = card.nv_read(BINDING_NV_REGION)
    assert stored == lv(nonce)[:2] + nonce + resp.m
    assert not card.hierarchies_locked


def test_single_exchange_timing_failure(card, identity, chain):
    session = binding.BindingSession(card)
    card.set_clock(10_000)
    nonce = session.init_extend(identity.public_bytes, identity.certificate)
    resp = boot.rtm_respond(nonce, identity, chain)
    card.set_clock(10_000 + 721)  # rtt exactly 721 is NOT < delta
    result = session.pcr_sig_extend(resp.m, resp.m_bl2)
    assert not result.ok and result.reason == binding.FAIL_NOT_LOCAL
    assert session.state == "failed"
    assert card.hierarchies_locked
    assert card.pcr_read(0) == bytes(32)


def test_single_exchange_bad_signature(card, identity, chain, rng):
    session = binding.BindingSession(card)
    card.set_clock(10_000)
    nonce = session.init_extend(identity.public_bytes, identity.certificate)
    impostor = boot.make_rtm_identity(b"board-X", rng)
    forged = boot.rtm_respond(nonce, impostor, chain)  # wrong private key
    card.set_clock(10_500)
    result = session.pcr_sig_extend(forged.m, forged.m_bl2)
    assert not result.ok and result.reason == binding.FAIL_UNTRUSTED_RTM
    assert card.hierarchies_locked


def test_uncertified_key_fails(card, identity, rng):
    session = binding.BindingSession(card)
    card.set_clock(10_000)
    self_signed = certs.VendorCA(certs.FastSigner.generate(rng), name=b"nobody")
    rogue_cert = self_signed.issue(b"rtm:evil", identity.public_bytes)
    from cardtpm.tpm import TpmError
    with pytest.raises(TpmError):
        session.init_extend(identity.public_bytes, rogue_cert)
    assert session.state == "failed"
    assert session.last_reason == binding.FAIL_UNTRUSTED_CERT


def test_nonce_outstanding_is_protocol_error(card, identity):
    session = binding.BindingSession(card)
    card.set_clock(10_000)
    session.init_extend(identity.public_bytes, identity.certificate)
    from cardtpm.tpm import TpmError
    with pytest.raises(TpmError):
        session.init_extend(identity.public_bytes, identity.certificate)


def test_init_extend_requires_clock(card, identity):
    session = binding.BindingSession(card)
    from cardtpm.tpm import TpmError
    with pytest.raises(TpmError):
        session.init_extend(identity.public_bytes, identity.certificate)


# -- multi-round runs -----------------------------------------------------------


def test_constant_fast_rtm_binds_30_of_30(card, identity, chain, rng):
    cfg = DistanceBoundingConfig()
    channel = binding.make_rtm_channel(identity, chain, TimingModel.constant(600), rng)
    outcome = binding.run_distance_bounding(card, cfg, channel,
                                            identity.certificate, identity.public_bytes)
    assert outcome.bound and outcome.successes == 30
    assert not card.hierarchies_locked


def test_relay_beyond_slack_rejected_0_of_30(card, identity, chain, rng):
    cfg = DistanceBoundingConfig()
    model = TimingModel.empirical(bundled_rtm_samples(), relay_delay_us=200)
    channel = binding.make_rtm_channel(identity, chain, model, rng)
    outcome = binding.run_distance_bounding(card, cfg, channel,
                                            identity.certificate, identity.public_bytes)
    assert not outcome.bound and outcome.successes == 0
    assert outcome.rounds_played == 30
    assert card.hierarchies_locked


def test_partial_success_quota(card, identity, chain, rng):
    # Alternate fast/slow rounds: 15 of 30 within threshold -> quota of 14 met.
    latencies = iter([600, 800] * 15)

    def channel(nonce):
        return boot.rtm_respond(nonce, identity, chain), next(latencies)

    cfg = DistanceBoundingConfig()
    outcome = binding.run_distance_bounding(card, cfg, channel,
                                            identity.certificate, identity.public_bytes)
    assert outcome.successes == 15
    assert outcome.bound


def test_channel_broken_mid_run(card, identity, chain, rng):
    sent = 0

    def dying_channel(nonce):
        nonlocal sent
        sent += 1
        if sent > 5:
            raise binding.ChannelBroken("cable pulled")
        return boot.rtm_respond(nonce, identity, chain), 600.0

    cfg = DistanceBoundingConfig()
    outcome = binding.run_distance_bounding(card, cfg, dying_channel,
                                            identity.certificate, identity.public_bytes)
    assert not outcome.bound
    assert outcome.successes == 5
    assert "channel broken" in outcome.reason


def test_seeded_runs_reproducible(identity, chain):
    cfg = DistanceBoundingConfig(rounds=10)
    outcomes = []
    for _ in range(2):
        rng = random.Random(1234)
        ident = boot.make_rtm_identity(b"board-R", rng, deterministic=True)
        card = TpmState(rng=random.Random(99))
        card.tpm_init("db")
        model = TimingModel.empirical(bundled_rtm_samples())
        channel = binding.make_rtm_channel(ident, chain, model, rng)
        outcome = binding.run_distance_bounding(card, cfg, channel,
                                                ident.certificate, ident.public_bytes)
        outcomes.append((outcome, card.pcr_read(0), card.pcr_read(1)))
    assert outcomes[0] == outcomes[1]


def test_attacker_beyond_min_latency_never_accepted(identity, chain, rng):
    # relay > T - min(samples): no honest latency can beat the threshold
    samples = bundled_rtm_samples()
    relay = 721 - min(samples) + 1
    cfg = DistanceBoundingConfig(rounds=10)
    for trial in range(20):
        card = TpmState(rng=rng)
        card.tpm_init("db")
        model = TimingModel.empirical(samples, relay_delay_us=relay)
        channel = binding.make_rtm_channel(identity, chain, model, rng)
        outcome = binding.run_distance_bounding(card, cfg, channel,
                                                identity.certificate,
                                                identity.public_bytes)
        assert not outcome.bound and outcome.successes == 0


def test_fast_trial_agrees_with_full_protocol_per_trial(identity, chain):
    """Same seeds, same decisions: tight loop == full session machinery,
    and the stipulated-signature model agrees for an honest RTM."""
    # quota of 7/8 at p~0.83 splits outcomes roughly half/half
    cfg = DistanceBoundingConfig(rounds=8, success_fraction=0.9)
    model = TimingModel.empirical(bundled_rtm_samples())
    verifier = certs.Verifier(identity.public_bytes)
    agree_bound = 0
    for trial in range(40):
        seed = 1000 + trial
        card_rng = random.Random(seed)
        tpm = TpmState(rng=card_rng)
        tpm.tpm_init("db")  # consumes the SRK draw from card_rng
        channel = binding.make_rtm_channel(identity, chain, model, random.Random(seed ^ 0xABC))
        slow = binding.run_distance_bounding(
            tpm, cfg, channel, identity.certificate, identity.public_bytes
        ).bound
        card2 = random.Random(seed)
        card2.randrange(1, certs.CURVE_ORDER)  # mirror the SRK draw
        fast = binding.fast_trial(cfg, model, card2, random.Random(seed ^ 0xABC),
                                  identity.signer, verifier)
        card3 = random.Random(seed)
        card3.randrange(1, certs.CURVE_ORDER)
        stipulated = binding.fast_trial(cfg, model, card3, random.Random(seed ^ 0xABC))
        assert slow == fast == stipulated
        agree_bound += slow
    assert 0 < agree_bound < 40  # both outcomes exercised


def test_acceptance_rate_converges_to_binomial(identity, chain):
    # Bernoulli(0.6) per-round success over seeded trials vs analytic tail
    cfg = DistanceBoundingConfig(rounds=10, success_fraction=0.5)  # need 5 of 10
    p = 0.6
    trials = 400
    rate = binding.estimate_acceptance_rate(
        cfg, TimingModel.bernoulli(p, cfg.threshold_us), trials=trials, seed=7, workers=1
    )
    expected = binding.binom_tail(cfg.rounds, cfg.required_successes, p)
    sigma = math.sqrt(expected * (1 - expected) / trials)
    assert abs(rate - expected) <= 4 * sigma


# -- binding gate over the wire ---------------------------------------------------


def test_gate_closed_then_open_via_dispatcher(rng, identity, chain):
    card = TpmState(rng=rng)
    disp = CardDispatcher(card)
    disp.handle(apdu.ApduCommand(cla=CLA, ins=INS_INIT, p1=0))
    extend = apdu.ApduCommand(cla=CLA, ins=INS_PCR_EXTEND, p1=3, data=bytes(32))
    assert disp.handle(extend).status_word == apdu.SW_CONDITIONS_NOT_SATISFIED

    # drive the figure's two steps over INS 0x80
    disp.handle(apdu.ApduCommand(cla=CLA, ins=0x02, data=(1_000_000).to_bytes(8, "big")))
    payload = lv(identity.public_bytes) + lv(identity.certificate.to_bytes())
    r = send_payload(disp, INS_BIND, payload, p1=0)
    assert r.ok
    nonce = r.data
    resp = boot.rtm_respond(nonce, identity, chain)
    disp.handle(apdu.ApduCommand(cla=CLA, ins=0x02, data=(1_000_600).to_bytes(8, "big")))
    r = send_payload(disp, INS_BIND, lv(resp.m) + resp.m_bl2, p1=1)
    assert r.ok and r.data == b"OK"
    assert disp.handle(extend).status_word == apdu.SW_SUCCESS


def test_gate_uniform_refusal_before_binding(rng):
    """Every gated entry point answers conditions-not-satisfied while locked."""
    card = TpmState(rng=rng)
    card.tpm_init("db")
    from cardtpm.tpm import Policy, TpmError
    blob = None
    card.unlock_hierarchies()
    blob = card.seal(b"x")
    card.hierarchies_locked = True
    gated_calls = [
        lambda: card.pcr_extend(0, bytes(32)),
        lambda: card.seal(b"x"),
        lambda: card.unseal(blob),
        lambda: card.quote((0,), bytes(8)),
    ]
    for call in gated_calls:
        with pytest.raises(TpmError) as err:
            call()
        assert err.value.sw == apdu.SW_CONDITIONS_NOT_SATISFIED


# -- TEE proxy mode ----------------------------------------------------------------


@pytest.fixture()
def tee_setup(rng):
    card = TpmState(rng=rng)
    disp = CardDispatcher(card)
    disp.handle(apdu.ApduCommand(cla=CLA, ins=INS_INIT, p1=1))
    signer = certs.FastSigner.generate(rng)
    cert = certs.test_vendor_ca().issue(b"device-key-1", signer.public_bytes())
    return card, disp, signer, cert


def test_tee_channel_binds_and_gates(tee_setup, rng):
    card, disp, signer, cert = tee_setup
    extend = apdu.ApduCommand(cla=CLA, ins=INS_PCR_EXTEND, p1=2, data=bytes(32))
    assert disp.handle(extend).status_word == apdu.SW_CONDITIONS_NOT_SATISFIED
    channel = binding.TeeChannel(disp, signer, cert, rng)
    assert not card.hierarchies_locked
    # via channel: accepted
    assert channel.send(extend).ok
    # outside the channel: still refused in TEE mode
    assert disp.handle(extend).status_word == apdu.SW_CONDITIONS_NOT_SATISFIED


def test_tee_uncertified_device_refused(rng):
    card = TpmState(rng=rng)
    disp = CardDispatcher(card)
    disp.handle(apdu.ApduCommand(cla=CLA, ins=INS_INIT, p1=1))
    signer = certs.FastSigner.generate(rng)
    rogue_ca = certs.VendorCA(certs.FastSigner.generate(rng), name=b"rogue")
    cert = rogue_ca.issue(b"device", signer.public_bytes())
    with pytest.raises(binding.BindingError):
        binding.TeeChannel(disp, signer, cert, rng)
    assert card.hierarchies_locked


def test_tee_handshake_refused_after_untrusted_phase(tee_setup, rng):
    card, disp, signer, cert = tee_setup
    disp.handle(apdu.ApduCommand(cla=CLA, ins=0x03, p1=1))  # world switch
    with pytest.raises(binding.BindingError):
        binding.TeeChannel(disp, signer, cert, rng)


def test_tee_replay_dropped(tee_setup, rng):
    card, disp, signer, cert = tee_setup
    channel = binding.TeeChannel(disp, signer, cert, rng)
    extend = apdu.ApduCommand(cla=CLA, ins=INS_PCR_EXTEND, p1=2, data=bytes(32))
    assert channel.send(extend).ok
    frames = [f for f, _ in disp.log if len(f) > 6 and f[1] == 0x81]
    replayed = apdu.decode_response(disp.handle_bytes(frames[-1]))
    assert replayed.status_word == apdu.SW_CONDITIONS_NOT_SATISFIED


def test_tee_garbled_frame_dropped(tee_setup, rng):
    card, disp, signer, cert = tee_setup
    channel = binding.TeeChannel(disp, signer, cert, rng)
    core = channel.core
    core.send_seq += 1
    bad = core.seal(core.send_seq, 1, b"\x80\x20\x00\x00\x00\x00")
    bad = bytes([bad[0] ^ 1]) + bad[1:]
    frame = core.send_seq.to_bytes(8, "big") + bad
    from cardtpm.tpm.dispatch import INS_CHANNEL
    r = disp.handle(apdu.ApduCommand(cla=CLA, ins=INS_CHANNEL, data=frame))
    assert r.status_word == apdu.SW_CONDITIONS_NOT_SATISFIED


def test_db_mode_rejects_tee_handshake(rng):
    card = TpmState(rng=rng)
    disp = CardDispatcher(card)
    disp.handle(apdu.ApduCommand(cla=CLA, ins=INS_INIT, p1=0))
    signer = certs.FastSigner.generate(rng)
    cert = certs.test_vendor_ca().issue(b"device", signer.public_bytes())
    with pytest.raises(binding.BindingError):
        binding.TeeChannel(disp, signer, cert, rng)


# -- statistics ---------------------------------------------------------------------


def test_binom_tail_reference_values():
    assert binding.binom_tail(30, 0, 0.83) == 1.0
    assert binding.binom_tail(2, 2, 0.5) == pytest.approx(0.25, abs=1e-15)
    assert binding.binom_tail(5, 0, 0.2) == 1.0
    # exact value of the sum at the protocol's prose parameters
    assert binding.binom_tail(30, 14, 0.83) == pytest.approx(0.999998972130341, abs=1e-12)


def test_binom_tail_validation():
    with pytest.raises(ValueError):
        binding.binom_tail(10, 11, 0.5)
    with pytest.raises(ValueError):
        binding.binom_tail(10, -1, 0.5)
    with pytest.raises(ValueError):
        binding.binom_tail(10, 5, 1.5)


def test_binom_tail_monotonicity(rng):
    for _ in range(200):
        n = rng.randrange(1, 40)
        k = rng.randrange(0, n + 1)
        p = rng.random()
        base = binding.binom_tail(n, k, p)
        # non-decreasing in p
        assert binding.binom_tail(n, k, min(1.0, p + 0.05)) >= base - 1e-12
        # non-increasing in k
        if k < n:
            assert binding.binom_tail(n, k + 1, p) <= base + 1e-12


def test_binom_tail_matches_enumeration_oracle(rng):
    """Exhaustive 2^n enumeration for n <= 12."""
    def enumerate_tail(n, k, p):
        total = 0.0
        for mask in range(1 << n):
            ones = mask.bit_count()
            if ones >= k:
                total += p**ones * (1 - p) ** (n - ones)
        return total

    for _ in range(20):
        n = rng.randrange(1, 13)
        k = rng.randrange(0, n + 1)
        p = rng.random()
        assert binding.binom_tail(n, k, p) == pytest.approx(
            enumerate_tail(n, k, p), abs=1e-12
        )


def test_empirical_cdf():
    samples = bundled_rtm_samples()
    assert binding.empirical_cdf(samples, max(samples)) == 1.0
    assert binding.empirical_cdf(samples, min(samples) - 1) == 0.0
    assert binding.empirical_cdf(samples, 721) == pytest.approx(25 / 30)
    with pytest.raises(ValueError):
        binding.empirical_cdf([], 1.0)


def test_min_relay_bandwidth():
    assert binding.min_relay_bandwidth(880, 158) == pytest.approx(5.5696e6, rel=1e-4)
    assert binding.min_relay_bandwidth(416, 158) == pytest.approx(2.6329e6, rel=1e-4)
    # doubling the slack halves the requirement
    assert binding.min_relay_bandwidth(880, 316) == pytest.approx(
        binding.min_relay_bandwidth(880, 158) / 2
    )
    with pytest.raises(ValueError):
        binding.min_relay_bandwidth(880, 0)


def test_attacker_success_composition():
    cfg = DistanceBoundingConfig()
    samples = bundled_rtm_samples()
    assert binding.attacker_success(721, samples, cfg) == 0.0
    assert binding.attacker_success(1000, samples, cfg) == 0.0
    # zero relay delay reduces to the honest acceptance probability
    honest = binding.binom_tail(30, 14, binding.empirical_cdf(samples, 721))
    assert binding.attacker_success(0, samples, cfg) == pytest.approx(honest)
    # T - delay = min(samples): only the minimum latency sneaks through
    delay = 721 - min(samples)
    per_round = binding.empirical_cdf(samples, min(samples))
    assert per_round == pytest.approx(1 / 30)
    assert binding.attacker_success(delay, samples, cfg) == pytest.approx(
        binding.binom_tail(30, 14, 1 / 30)
    )
