"""cardtpm: a desk-scale emulation of a SIM-card-hosted TPM.

Subsystems:

* :mod:`cardtpm.apdu` -- smart-card wire frames and chunked transfer
* :mod:`cardtpm.groups` -- pairing group arithmetic and hashing
* :mod:`cardtpm.homenc` -- additively homomorphic (Paillier) encryption
* :mod:`cardtpm.daa` -- direct anonymous attestation scheme
* :mod:`cardtpm.tpm` -- the card-resident TPM state machine and dispatcher
* :mod:`cardtpm.boot` -- secure / measured boot-chain simulation
* :mod:`cardtpm.binding` -- RTM binding: distance bounding, TEE proxy, statistics
* :mod:`cardtpm.cli` -- command-line front end and scenario runner
"""

__version__ = "0.1.0"
