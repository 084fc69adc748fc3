"""Smart-card APDU framing and chunked transfer.

Command frame layout (fixed offsets, always 6 + DATA_LEN bytes):

    offset 0    CLA           class byte
    offset 1    INS           instruction byte
    offset 2    P1            parameter 1
    offset 3    P2            parameter 2
    offset 4    DATA_LEN      length n of the data field (0..255)
    offset 5    DATA          n bytes
    offset 5+n  EXP_DATA_SIZE expected response length (advisory)

Responses are the payload followed by a two-byte status word.  Payloads
larger than one frame travel as chunk sequences: every chunk but the last
sets the continuation bit in P2.
"""

from __future__ import annotations

from dataclasses import dataclass, field

MAX_DATA = 255

# Continuation marker: P2 bit 0x80 set means "more chunks follow".
P2_MORE_CHUNKS = 0x80

# Status words (ISO 7816 conventions).
SW_SUCCESS = 0x9000
SW_MALFORMED = 0x6A80
SW_CONDITIONS_NOT_SATISFIED = 0x6985
SW_UNKNOWN_INS = 0x6D00

SW_NAMES = {
    SW_SUCCESS: "success",
    SW_MALFORMED: "malformed data",
    SW_CONDITIONS_NOT_SATISFIED: "conditions not satisfied",
    SW_UNKNOWN_INS: "unknown instruction",
}


class FrameError(ValueError):
    """Encode-side violation of the frame invariants."""


class ApduDecodeError(ValueError):
    """Decode-side violation; the message names the offending field."""


class ReassemblyError(ValueError):
    """Chunk sequence violates ordering or termination rules."""


def _check_byte(value: int, name: str) -> int:
    if not 0 <= value <= 0xFF:
        raise FrameError(f"{name} out of byte range: {value}")
    return value


@dataclass(frozen=True)
class ApduCommand:
    cla: int
    ins: int
    p1: int = 0
    p2: int = 0
    data: bytes = b""
    exp_data_size: int = 0

    def __post_init__(self):
        for name in ("cla", "ins", "p1", "p2", "exp_data_size"):
            _check_byte(getattr(self, name), name.upper())
        if len(self.data) > MAX_DATA:
            raise FrameError(f"data field limited to {MAX_DATA} bytes, got {len(self.data)}")

    @property
    def continuation(self) -> bool:
        return bool(self.p2 & P2_MORE_CHUNKS)


@dataclass(frozen=True)
class ApduResponse:
    data: bytes = b""
    status_word: int = SW_SUCCESS

    def __post_init__(self):
        if not 0 <= self.status_word <= 0xFFFF:
            raise FrameError(f"status word out of range: {self.status_word:#x}")

    @property
    def ok(self) -> bool:
        return self.status_word == SW_SUCCESS


@dataclass(frozen=True)
class ChunkedTransfer:
    ins: int
    total_len: int
    chunks: tuple[ApduCommand, ...] = field(default_factory=tuple)


def encode_command(cmd: ApduCommand) -> bytes:
    """CLA || INS || P1 || P2 || DATA_LEN || DATA || EXP_DATA_SIZE."""
    return (
        bytes([cmd.cla, cmd.ins, cmd.p1, cmd.p2, len(cmd.data)])
        + cmd.data
        + bytes([cmd.exp_data_size])
    )


def decode_command(frame: bytes) -> ApduCommand:
    if len(frame) < 6:
        raise ApduDecodeError(f"truncated frame: {len(frame)} bytes, header needs 6")
    data_len = frame[4]
    expected = 6 + data_len
    if len(frame) != expected:
        raise ApduDecodeError(
            f"DATA_LEN mismatch: header says {data_len}, frame holds {len(frame) - 6}"
        )
    return ApduCommand(
        cla=frame[0],
        ins=frame[1],
        p1=frame[2],
        p2=frame[3],
        data=bytes(frame[5:5 + data_len]),
        exp_data_size=frame[5 + data_len],
    )


def encode_response(resp: ApduResponse) -> bytes:
    return resp.data + resp.status_word.to_bytes(2, "big")


def decode_response(frame: bytes) -> ApduResponse:
    if len(frame) < 2:
        raise ApduDecodeError("response shorter than the status word")
    return ApduResponse(
        data=bytes(frame[:-2]), status_word=int.from_bytes(frame[-2:], "big")
    )


def chunk_payload(ins: int, payload: bytes, cla: int = 0x80, p1: int = 0,
                  exp_data_size: int = 0) -> ChunkedTransfer:
    """Split a payload into ceil(len/255) frames (one frame when empty)."""
    _check_byte(ins, "INS")
    pieces = [payload[i:i + MAX_DATA] for i in range(0, len(payload), MAX_DATA)] or [b""]
    chunks = []
    for idx, piece in enumerate(pieces):
        last = idx == len(pieces) - 1
        p2 = 0 if last else P2_MORE_CHUNKS
        chunks.append(ApduCommand(cla=cla, ins=ins, p1=p1, p2=p2, data=piece,
                                  exp_data_size=exp_data_size if last else 0))
    return ChunkedTransfer(ins=ins, total_len=len(payload), chunks=tuple(chunks))


def reassemble(transfer: ChunkedTransfer) -> bytes:
    chunks = transfer.chunks
    if not chunks:
        raise ReassemblyError("no chunks")
    for idx, chunk in enumerate(chunks):
        if chunk.ins != transfer.ins:
            raise ReassemblyError(f"chunk {idx} carries INS {chunk.ins:#x}, expected {transfer.ins:#x}")
        last = idx == len(chunks) - 1
        if last and chunk.continuation:
            raise ReassemblyError("final chunk still flags continuation")
        if not last and not chunk.continuation:
            raise ReassemblyError(f"chunk {idx} lacks continuation marker before the end")
    payload = b"".join(c.data for c in chunks)
    if len(payload) != transfer.total_len:
        raise ReassemblyError(
            f"length mismatch: declared {transfer.total_len}, assembled {len(payload)}"
        )
    return payload


def hex_dump(frame: bytes) -> str:
    """Two hex digits per byte, space separated (CLI text form)."""
    return " ".join(f"{b:02x}" for b in frame)


def parse_hex(text: str) -> bytes:
    try:
        return bytes.fromhex(text.replace(" ", ""))
    except ValueError as exc:
        raise ApduDecodeError(f"bad hex frame: {exc}") from None
