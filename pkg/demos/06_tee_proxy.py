#!/usr/bin/env python3
"""TEE-proxy binding: a vendor-certified device key opens an authenticated
encrypted channel to the card; sensitive commands are honored only through
it, and recorded frames cannot be replayed."""

import random

from cardtpm import apdu, binding, certs
from cardtpm.apdu import ApduCommand
from cardtpm.tpm import CardDispatcher, TpmState
from cardtpm.tpm.dispatch import CLA, INS_INIT, INS_PCR_EXTEND, INS_PCR_READ

rng = random.Random(9)

card = TpmState(rng=rng)
dispatcher = CardDispatcher(card)
dispatcher.handle(ApduCommand(cla=CLA, ins=INS_INIT, p1=1))  # TEE-proxy mode

extend = ApduCommand(cla=CLA, ins=INS_PCR_EXTEND, p1=3, data=bytes(32))
resp = dispatcher.handle(extend)
print("extend before binding:", apdu.SW_NAMES[resp.status_word])

# The TEE holds a device key certified by the vendor; the handshake derives
# a fresh session key from it and the card's endorsement key.
device_signer = certs.FastSigner.generate(rng)
device_cert = certs.test_vendor_ca().issue(b"demo-device", device_signer.public_bytes())
channel = binding.TeeChannel(dispatcher, device_signer, device_cert, rng)
print("channel established; hierarchies unlocked:", not card.hierarchies_locked)

print("extend via channel:", apdu.SW_NAMES[channel.send(extend).status_word])
print("same extend as a plain APDU:", apdu.SW_NAMES[dispatcher.handle(extend).status_word])

read = ApduCommand(cla=CLA, ins=INS_PCR_READ, p1=3)
print("PCR[3] via channel:", channel.send(read).data.hex())

# Replay a recorded channel frame: the sequence number gives it away.
recorded = [f for f, _ in dispatcher.log if len(f) > 6 and f[1] == 0x81][-1]
replayed = apdu.decode_response(dispatcher.handle_bytes(recorded))
print("replayed frame:", apdu.SW_NAMES[replayed.status_word])

# Once the boot hands over to the normal world, late handshakes are refused:
card2 = TpmState(rng=rng)
disp2 = CardDispatcher(card2)
disp2.handle(ApduCommand(cla=CLA, ins=INS_INIT, p1=1))
disp2.handle(ApduCommand(cla=CLA, ins=0x03, p1=1))  # secure -> normal switch
try:
    binding.TeeChannel(disp2, device_signer, device_cert, rng)
except binding.BindingError as exc:
    print("handshake after world switch:", exc)
