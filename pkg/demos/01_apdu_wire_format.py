#!/usr/bin/env python3
"""Wire format tour: command frames, response frames, chunked transfer.

Every message to the card is one APDU frame:

    CLA INS P1 P2 DATA_LEN [DATA ...] EXP_DATA_SIZE

and every answer is the payload followed by a two-byte status word.
"""

from cardtpm import apdu
from cardtpm.apdu import ApduCommand, ApduResponse

# A PCR-extend command: instruction 0x10, register number in P1, a 32-byte
# digest as the data field.
cmd = ApduCommand(cla=0x80, ins=0x10, p1=0x01, data=b"\xaa" * 32)
frame = apdu.encode_command(cmd)
print("extend frame (%d bytes):" % len(frame))
print(" ", apdu.hex_dump(frame))

# A PCR-read command carries no data; the trailer advertises how many bytes
# we expect back (advisory in this emulator).
cmd = ApduCommand(cla=0x80, ins=0x20, p1=0x01, exp_data_size=0x20)
print("\nread frame:")
print(" ", apdu.hex_dump(apdu.encode_command(cmd)))

# Responses: data then status word. 0x9000 is success.
resp = ApduResponse(data=b"\x01\x02", status_word=0x9000)
print("\nresponse frame:")
print(" ", apdu.hex_dump(apdu.encode_response(resp)))

# Frames are hard-limited to 255 data bytes, so bigger payloads travel as a
# chunk train: every chunk but the last sets the continuation bit in P2.
payload = bytes(range(256)) * 3  # 768 bytes
transfer = apdu.chunk_payload(0x30, payload)
print("\n%d-byte payload -> %d chunks:" % (len(payload), len(transfer.chunks)))
for i, chunk in enumerate(transfer.chunks):
    marker = "more..." if chunk.continuation else "final"
    print("  chunk %d: %3d bytes, P2=%02x (%s)" % (i, len(chunk.data), chunk.p2, marker))

assert apdu.reassemble(transfer) == payload
print("\nreassembled payload matches the original:", len(payload), "bytes")

# Decoding enforces the frame invariants and names the offending field.
try:
    apdu.decode_command(bytes([0x80, 0x10, 0x00, 0x00, 0x20, 0x01, 0x00]))
except apdu.ApduDecodeError as exc:
    print("\nmalformed frame rejected:", exc)
