"""The card-resident TPM: state machine, policies, sealing, dispatch."""

from .state import (
    BINDING_NV_REGION,
    CommandSource,
    DigestApproval,
    DuplicationBlob,
    KeyRecord,
    MAX_SEAL_DATA,
    PCR_COUNT,
    Policy,
    SealedBlob,
    TpmError,
    TpmState,
    quote_message,
    verify_quote,
)
from .dispatch import CardDispatcher, selection_to_bitmap, send_payload

__all__ = [
    "BINDING_NV_REGION",
    "CardDispatcher",
    "CommandSource",
    "DigestApproval",
    "DuplicationBlob",
    "KeyRecord",
    "MAX_SEAL_DATA",
    "PCR_COUNT",
    "Policy",
    "SealedBlob",
    "TpmError",
    "TpmState",
    "quote_message",
    "selection_to_bitmap",
    "send_payload",
    "verify_quote",
]
