"""APDU command dispatcher: the card's single entry point.

One command at a time, strictly serialized; every instruction byte yields a
response with a defined status word.  Payloads larger than one frame arrive
as chunk sequences (continuation bit in P2) and are buffered per (CLA, INS,
P1) until the final chunk.

Instruction map (the wire contract; PCR extend/read byte values are the
card-protocol standard, the rest are this emulator's assignments):

    0x01 INIT           P1: 0 = distance-bounding mode, 1 = TEE-proxy mode
    0x02 CLOCK          data: 8-byte big-endian microseconds
    0x03 WORLD          P1: 1 = mark untrusted phase (secure->normal switch)
    0x10 PCR_EXTEND     P1: index, data: 32-byte digest
    0x20 PCR_READ       P1: index
    0x30 SEAL           data: policy LV || payload
    0x31 UNSEAL         data: blob LV [ || approval LV ]
    0x40 CREATE_KEY     P1: bit0 duplicable, bit1 attestation
    0x41 DUPLICATE      data: handle(4) || new parent public (65)
    0x42 IMPORT         data: duplication blob
    0x50 QUOTE          data: selection(3) || nonce(8) || bsn LV
    0x60 HASH           data: payload (chunkable)
    0x61 RANDOM         P1: byte count (<= 64)
    0x70 COUNTER        P1: 0 create / 1 increment / 2 read, P2: id
    0x71 NV             P1: 0 write / 1 read, P2: region id
    0x80 BIND           P1: 0 init_extend / 1 pcr_sig_extend
    0x81 CHANNEL        data: one sealed channel frame
"""

from __future__ import annotations

from typing import Optional

from .. import apdu, daa
from ..apdu import ApduCommand, ApduResponse
from .state import CommandSource, DigestApproval, DuplicationBlob, Policy, SealedBlob, TpmError, TpmState

INS_INIT = 0x01
INS_CLOCK = 0x02
INS_WORLD = 0x03
INS_PCR_EXTEND = 0x10
INS_PCR_READ = 0x20
INS_SEAL = 0x30
INS_UNSEAL = 0x31
INS_CREATE_KEY = 0x40
INS_DUPLICATE = 0x41
INS_IMPORT = 0x42
INS_QUOTE = 0x50
INS_HASH = 0x60
INS_RANDOM = 0x61
INS_COUNTER = 0x70
INS_NV = 0x71
INS_BIND = 0x80
INS_CHANNEL = 0x81

CLA = 0x80


def _lv(data: bytes) -> bytes:
    return len(data).to_bytes(2, "big") + data


def _read_lv(data: bytes, off: int) -> tuple[bytes, int]:
    if off + 2 > len(data):
        raise TpmError(apdu.SW_MALFORMED, "truncated length prefix")
    ln = int.from_bytes(data[off:off + 2], "big")
    off += 2
    if off + ln > len(data):
        raise TpmError(apdu.SW_MALFORMED, "truncated field")
    return data[off:off + ln], off + ln


class CardDispatcher:
    """Serialized command front end over one TpmState."""

    def __init__(self, tpm: TpmState):
        self.tpm = tpm
        self._chunks: dict[tuple[int, int, int], bytearray] = {}
        self.log: list[tuple[bytes, bytes]] = []

    # -- transport ----------------------------------------------------------

    def handle_bytes(self, frame: bytes, source: CommandSource = CommandSource.HOST) -> bytes:
        try:
            cmd = apdu.decode_command(frame)
        except apdu.ApduDecodeError:
            resp = apdu.encode_response(ApduResponse(b"", apdu.SW_MALFORMED))
            self.log.append((bytes(frame), resp))
            return resp
        return apdu.encode_response(self.handle(cmd, source))

    def handle(self, cmd: ApduCommand, source: CommandSource = CommandSource.HOST) -> ApduResponse:
        resp = self._handle_inner(cmd, source)
        self._assert_no_private_material(resp.data)
        self.log.append((apdu.encode_command(cmd), apdu.encode_response(resp)))
        return resp

    def _assert_no_private_material(self, data: bytes) -> None:
        # Invariant: the private halves of SRK and EK never leave the card.
        for private in (self.tpm.srk_private, self.tpm.ek_private):
            if private is not None and private.to_bytes(32, "big") in data:
                raise RuntimeError("private key material in an APDU response")

    def _handle_inner(self, cmd: ApduCommand, source: CommandSource) -> ApduResponse:
        key = (cmd.cla, cmd.ins, cmd.p1)
        if cmd.continuation:
            self._chunks.setdefault(key, bytearray()).extend(cmd.data)
            return ApduResponse(b"", apdu.SW_SUCCESS)
        buffered = self._chunks.pop(key, bytearray())
        payload = bytes(buffered) + cmd.data
        try:
            data = self._execute(cmd, payload, source)
            return ApduResponse(data, apdu.SW_SUCCESS)
        except TpmError as err:
            return ApduResponse(b"", err.sw)
        except Exception:
            # Dispatcher totality: no command may crash the card.
            return ApduResponse(b"", apdu.SW_MALFORMED)

    # -- command bodies -------------------------------------------------------

    def _execute(self, cmd: ApduCommand, payload: bytes, source: CommandSource) -> bytes:
        tpm = self.tpm
        ins = cmd.ins
        if ins == INS_INIT:
            tpm.tpm_init("tee" if cmd.p1 == 1 else "db")
            return b""
        if ins == INS_CLOCK:
            if len(payload) != 8:
                raise TpmError(apdu.SW_MALFORMED, "clock payload must be 8 bytes")
            tpm.set_clock(int.from_bytes(payload, "big"))
            return b""
        if ins == INS_WORLD:
            if cmd.p1 == 1:
                tpm.mark_untrusted_phase()
                return b""
            raise TpmError(apdu.SW_MALFORMED, "unknown world switch")
        if ins == INS_PCR_EXTEND:
            return tpm.pcr_extend(cmd.p1, payload, source=source)
        if ins == INS_PCR_READ:
            return tpm.pcr_read(cmd.p1)
        if ins == INS_SEAL:
            policy_raw, off = _read_lv(payload, 0)
            blob = tpm.seal(payload[off:], Policy.from_bytes(policy_raw), source=source)
            return blob.to_bytes()
        if ins == INS_UNSEAL:
            blob_raw, off = _read_lv(payload, 0)
            approval = None
            if off < len(payload):
                approval_raw, off = _read_lv(payload, off)
                approval = DigestApproval.from_bytes(approval_raw)
            if off != len(payload):
                raise TpmError(apdu.SW_MALFORMED, "trailing unseal bytes")
            return tpm.unseal(SealedBlob.from_bytes(blob_raw), approval, source=source)
        if ins == INS_CREATE_KEY:
            handle, public = tpm.create_key(
                duplicable=bool(cmd.p1 & 1), attestation=bool(cmd.p1 & 2)
            )
            return handle.to_bytes(4, "big") + public
        if ins == INS_DUPLICATE:
            if len(payload) != 4 + 65:
                raise TpmError(apdu.SW_MALFORMED, "expected handle + parent point")
            handle = int.from_bytes(payload[:4], "big")
            return tpm.duplicate_key(handle, payload[4:]).to_bytes()
        if ins == INS_IMPORT:
            handle = tpm.import_key(DuplicationBlob.from_bytes(payload))
            return handle.to_bytes(4, "big")
        if ins == INS_QUOTE:
            if len(payload) < 3 + 8 + 2:
                raise TpmError(apdu.SW_MALFORMED, "quote payload too short")
            selection = _selection_from_bitmap(payload[:3])
            nonce = payload[3:11]
            bsn_raw, off = _read_lv(payload, 11)
            if off != len(payload):
                raise TpmError(apdu.SW_MALFORMED, "trailing quote bytes")
            sig = tpm.quote(selection, nonce, bsn_raw or None, source=source)
            return daa.encode_signature(sig)
        if ins == INS_HASH:
            return tpm.hash_data(payload)
        if ins == INS_RANDOM:
            return tpm.get_random(cmd.p1)
        if ins == INS_COUNTER:
            if cmd.p1 == 0:
                value = tpm.counter_create(cmd.p2)
            elif cmd.p1 == 1:
                value = tpm.counter_increment(cmd.p2)
            elif cmd.p1 == 2:
                value = tpm.counter_read(cmd.p2)
            else:
                raise TpmError(apdu.SW_MALFORMED, "unknown counter sub-op")
            return value.to_bytes(8, "big")
        if ins == INS_NV:
            if cmd.p1 == 0:
                tpm.nv_write(cmd.p2, payload)
                return b""
            if cmd.p1 == 1:
                return tpm.nv_read(cmd.p2)
            raise TpmError(apdu.SW_MALFORMED, "unknown NV sub-op")
        if ins == INS_BIND:
            from ..binding import handle_bind_command
            return handle_bind_command(tpm, cmd.p1, payload)
        if ins == INS_CHANNEL:
            from ..binding import handle_channel_frame
            return handle_channel_frame(self, payload)
        raise TpmError(apdu.SW_UNKNOWN_INS, f"unknown instruction {ins:#04x}")


def _selection_from_bitmap(bitmap: bytes) -> tuple[int, ...]:
    out = []
    for byte_index, byte in enumerate(bitmap):
        for bit in range(8):
            if byte & (1 << bit):
                out.append(byte_index * 8 + bit)
    return tuple(i for i in out if i < 24)


def selection_to_bitmap(selection: tuple[int, ...]) -> bytes:
    bitmap = bytearray(3)
    for index in selection:
        bitmap[index // 8] |= 1 << (index % 8)
    return bytes(bitmap)


def send_payload(dispatcher: CardDispatcher, ins: int, payload: bytes,
                 p1: int = 0, source: CommandSource = CommandSource.HOST) -> ApduResponse:
    """Host helper: chunk an oversized payload into frames and send them."""
    transfer = apdu.chunk_payload(ins, payload, cla=CLA, p1=p1)
    resp = None
    for chunk in transfer.chunks:
        resp = dispatcher.handle(chunk, source=source)
        if not resp.ok:
            return resp
    return resp
