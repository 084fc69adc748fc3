#!/usr/bin/env python3
"""Distance bounding: how a removable card convinces itself the measuring
bootloader is physically local, and what the statistics say about honest
devices and relay attackers."""

import random

from cardtpm import binding, boot
from cardtpm.binding import DistanceBoundingConfig
from cardtpm.timing import TimingModel, bundled_rtm_samples
from cardtpm.tpm import TpmState

rng = random.Random(42)
cfg = DistanceBoundingConfig()  # T = 721 us, 30 rounds, quota floor(0.47*30) = 14
print("threshold %.0f us, %d rounds, %d required successes"
      % (cfg.threshold_us, cfg.rounds, cfg.required_successes))

identity = boot.make_rtm_identity(b"demo-board", rng)
chain = boot.build_chain({s: b"fw:" + s.value.encode() for s in boot.Stage}, rng)

# --- an honest local RTM answering at a constant 600 us binds 30/30
card = TpmState(rng=rng)
card.tpm_init("db")
channel = binding.make_rtm_channel(identity, chain, TimingModel.constant(600), rng)
outcome = binding.run_distance_bounding(card, cfg, channel,
                                        identity.certificate, identity.public_bytes)
print("\nconstant 600 us RTM:", outcome)
print("hierarchies unlocked:", not card.hierarchies_locked)
print("PCR[0] now carries the signed transcript:", card.pcr_read(0).hex()[:32], "...")

# --- the bundled empirical latency model: 30 samples on [563, 894] us with
# 25 of 30 at or below the threshold.
samples = bundled_rtm_samples()
p_round = binding.empirical_cdf(samples, cfg.threshold_us)
print("\nempirical per-round success:", round(p_round, 4))
print("acceptance probability for an honest device:",
      binding.binom_tail(cfg.rounds, cfg.required_successes, p_round))

# --- a relay attacker adds wire delay to every round.  The tightest slack is
# threshold - fastest honest response = 721 - 563 = 158 us.
slack = cfg.threshold_us - min(samples)
print("\nrelay slack: %.0f us" % slack)
for bits, label in ((880, "two minimal 55-byte Ethernet frames"),
                    (416, "just the 112-bit challenge + 304-bit response")):
    print("  needs %.2f Mbps to relay %s" %
          (binding.min_relay_bandwidth(bits, slack) / 1e6, label))

# Attack probability collapses as the relay gets slower:
for delay in (0, 100, 158, 200):
    p = binding.attacker_success(delay, samples, cfg)
    print("  attacker with +%3d us relay: acceptance %.3g" % (delay, p))

# And a protocol run through a 200 us relay really is hopeless:
card2 = TpmState(rng=rng)
card2.tpm_init("db")
relayed = TimingModel.empirical(samples, relay_delay_us=200)
outcome = binding.run_distance_bounding(
    card2, cfg, binding.make_rtm_channel(identity, chain, relayed, rng),
    identity.certificate, identity.public_bytes)
print("\nrelayed run:", outcome)

# --- Monte-Carlo over seeded trials against the analytic tail
model = TimingModel.bernoulli(0.83, cfg.threshold_us)
rate = binding.estimate_acceptance_rate(cfg, model, trials=2000, seed=1,
                                        signature_model="stipulated")
print("\nMonte-Carlo acceptance over 2000 trials at p=0.83:", rate)
print("analytic tail:", binding.binom_tail(cfg.rounds, cfg.required_successes, 0.83))
