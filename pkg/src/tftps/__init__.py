"""Secure TFTP suite.

Hybrid file transfer for unreliable datagram links: Cramer-Shoup public-key
encryption wraps per-session symmetric keys, the wrapped material and the
sealed file blocks ride a simplex stop-and-wait ARQ inside TFTP packets,
cryptographic operations can be padded to worst-case fixed-time budgets,
and an executable game harness measures chosen-ciphertext and
timing-attack advantage against the implementation itself.
"""

from .arq import ChunkSet, Frame, chunk_payload, crc32, reassemble
from .cramer_shoup import (
    REJECT,
    CsCiphertext,
    CsPublicKey,
    CsSecretKey,
    decrypt,
    encrypt,
    encrypt_with_rng,
    keygen,
)
from .fixed_time import OpClass, TimeBudget, calibrate, observe, run_fixed
from .games import GameConfig, GameResult, run_ind_cca2, run_ind_cca2_scta
from .groups import DESK_PARAMS, GroupParams, gen_group_params, mod_exp, validate_group_params
from .packets import SecurityOptions, TransferPolicy, decode_packet, encode_packet
from .records import MAC_FAILURE, SealedRecord, SessionKeys, derive_session_keys, open_block, seal_block
from .tftp import KeyStore, TftpClient, TftpServer, TransferSummary
from .transport import ChannelModel, SimulatedNetwork, UdpNetwork, run_scenario

__version__ = "0.1.0"

__all__ = [
    "ChannelModel",
    "ChunkSet",
    "CsCiphertext",
    "CsPublicKey",
    "CsSecretKey",
    "DESK_PARAMS",
    "Frame",
    "GameConfig",
    "GameResult",
    "GroupParams",
    "KeyStore",
    "MAC_FAILURE",
    "OpClass",
    "REJECT",
    "SealedRecord",
    "SecurityOptions",
    "SessionKeys",
    "SimulatedNetwork",
    "TftpClient",
    "TftpServer",
    "TimeBudget",
    "TransferPolicy",
    "TransferSummary",
    "UdpNetwork",
    "calibrate",
    "chunk_payload",
    "crc32",
    "decode_packet",
    "decrypt",
    "derive_session_keys",
    "encode_packet",
    "encrypt",
    "encrypt_with_rng",
    "gen_group_params",
    "keygen",
    "mod_exp",
    "observe",
    "open_block",
    "reassemble",
    "run_fixed",
    "run_ind_cca2",
    "run_ind_cca2_scta",
    "run_scenario",
    "seal_block",
    "validate_group_params",
]
