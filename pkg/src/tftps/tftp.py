"""Secure TFTP sessions: key exchange over DATA blocks, then sealed records.

A transfer with the ``sec`` option runs in phases: NEGOTIATE (request and
OACK), KEY_EXCHANGE (the data sender wraps 64 octets of fresh session
material under the data receiver's public key; the serialized ciphertext
rides in the first ``keyblocks`` DATA blocks), then DATA_TRANSFER (every
block is a sealed record, 456 plaintext octets per 512-octet block).  The
receiving side decrypts the key material under a fixed-time budget.

Block numbers are the stop-and-wait sequence numbers; the lock-step
DATA/ACK exchange is driven by the state machines in tftps.arq.  A record
that fails MAC verification is treated exactly like a corrupted frame:
dropped without acknowledgement, healed by retransmission.  Security
failures that cannot be healed (a tampered or misdirected key exchange,
policy refusals) terminate the session with ERROR 9.
"""

from __future__ import annotations

import logging
import random
import threading
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

from . import arq, cramer_shoup, fixed_time, packets, records
from .cramer_shoup import REJECT, CsPublicKey, CsSecretKey, EncodingError
from .groups import GroupParams, ParameterError
from .packets import (
    AckPacket,
    DataPacket,
    ErrorPacket,
    OptionAck,
    ReadRequest,
    SecurityOptions,
    TransferPolicy,
    WriteRequest,
    decode_packet,
    encode_packet,
)
from .transport import TIMEOUT

log = logging.getLogger(__name__)

BLOCK_SIZE = packets.BLOCK_SIZE
PLAINTEXT_PER_BLOCK = BLOCK_SIZE - records.RECORD_OVERHEAD  # 456 octets
KEYSTORE_ENV = "TFTPS_KEYSTORE"

_DEFAULT_RNG = random.SystemRandom()


class SecurityFailureResult:
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "SECURITY_FAILURE"


SECURITY_FAILURE = SecurityFailureResult()


class Phase:
    NEGOTIATE = "NEGOTIATE"
    KEY_EXCHANGE = "KEY_EXCHANGE"
    DATA_TRANSFER = "DATA_TRANSFER"
    DONE = "DONE"
    FAILED = "FAILED"


_PHASE_ORDER = [Phase.NEGOTIATE, Phase.KEY_EXCHANGE, Phase.DATA_TRANSFER, Phase.DONE, Phase.FAILED]


# ---------------------------------------------------------------------------
# Keystore.
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class KeyEntry:
    kid: str
    public: CsPublicKey
    secret: CsSecretKey | None = None

    @property
    def params(self) -> GroupParams:
        return self.public.params


class KeyStore:
    """Pre-installed keys, addressed by their 16-hex-char identifier."""

    def __init__(self):
        self._entries: dict[str, KeyEntry] = {}

    def add(self, pk: CsPublicKey, sk: CsSecretKey | None = None) -> KeyEntry:
        entry = KeyEntry(kid=cramer_shoup.key_id(pk), public=pk, secret=sk)
        existing = self._entries.get(entry.kid)
        if existing is not None and existing.secret is not None and sk is None:
            return existing  # never downgrade a secret entry to public-only
        self._entries[entry.kid] = entry
        return entry

    def load_file(self, path: str | Path) -> KeyEntry:
        pk, sk = cramer_shoup.load_key_file(path)
        return self.add(pk, sk)

    def load_dir(self, path: str | Path) -> "KeyStore":
        for child in sorted(Path(path).iterdir()):
            if child.suffix in (".pub", ".key") and child.is_file():
                self.load_file(child)
        return self

    def get(self, kid: str) -> KeyEntry | None:
        return self._entries.get(kid)

    def kids(self) -> list[str]:
        return sorted(self._entries)

    def __len__(self) -> int:
        return len(self._entries)


# ---------------------------------------------------------------------------
# Key exchange.
# ---------------------------------------------------------------------------

def key_exchange_send(
    recipient: CsPublicKey,
    rng: random.Random | None = None,
    block_size: int = BLOCK_SIZE,
) -> tuple[bytes, list[bytes]]:
    """Draw fresh session material and wrap it for the recipient.

    Returns (material, key-exchange DATA payloads).  The 64 octets plus the
    encoding prefix need a group of more than 520 bits; smaller groups are
    refused rather than silently truncated.
    """
    rng = rng or _DEFAULT_RNG
    material = rng.randbytes(records.KEY_MATERIAL_LEN)
    element = cramer_shoup.encode_message(material, recipient.params)
    ct = cramer_shoup.encrypt_with_rng(recipient, element, rng)
    wire = cramer_shoup.ciphertext_to_bytes(ct)
    chunks = arq.chunk_payload(wire, block_size)
    return material, list(chunks.chunks)


def key_exchange_receive(
    chunks: list[bytes],
    sk: CsSecretKey,
    params: GroupParams,
    budget: fixed_time.TimeBudget | None = None,
):
    """Reassemble, decrypt (optionally under a fixed-time budget), derive keys.

    Any failure — undecodable ciphertext, validity rejection, an element
    that is not a key-material encoding — collapses to SECURITY_FAILURE; no
    partial keys are ever retained.
    """
    blob = b"".join(chunks)
    try:
        ct = cramer_shoup.ciphertext_from_bytes(blob)
    except (EncodingError, ParameterError):
        return SECURITY_FAILURE

    def _decrypt():
        try:
            return cramer_shoup.decrypt(sk, params, ct)
        except (ParameterError, EncodingError):
            return REJECT

    if budget is not None:
        result, _ = fixed_time.run_fixed(budget, _decrypt)
    else:
        result = _decrypt()
    if result is REJECT:
        return SECURITY_FAILURE
    try:
        material = cramer_shoup.decode_message(result, params)
    except EncodingError:
        return SECURITY_FAILURE
    if len(material) != records.KEY_MATERIAL_LEN:
        return SECURITY_FAILURE
    return records.derive_session_keys(material)


def calibrate_decrypt_budget(
    entry: KeyEntry,
    rng: random.Random | None = None,
    n_samples: int = 30,
    safety_factor: float = 1.5,
) -> fixed_time.TimeBudget:
    """Worst-case budget for unwrapping key material under this entry's key."""
    if entry.secret is None:
        raise ParameterError(f"key {entry.kid} has no secret half to calibrate with")
    rng = rng or random.Random(0xC0DEC)
    material = rng.randbytes(records.KEY_MATERIAL_LEN)
    element = cramer_shoup.encode_message(material, entry.params)
    ct = cramer_shoup.encrypt_with_rng(entry.public, element, rng)
    wire_len = len(cramer_shoup.ciphertext_to_bytes(ct))
    op_class = fixed_time.OpClass(name="cs.decrypt", input_length=wire_len)
    return fixed_time.calibrate(
        op_class,
        lambda: cramer_shoup.decrypt(entry.secret, entry.params, ct),
        n_samples=n_samples,
        safety_factor=safety_factor,
    )


# ---------------------------------------------------------------------------
# Session bookkeeping.
# ---------------------------------------------------------------------------

@dataclass
class TransferSummary:
    status: str = Phase.FAILED
    error_code: int | None = None
    error_message: str = ""
    bytes_transferred: int = 0
    blocks: int = 0
    retransmissions: int = 0
    mac_failures: int = 0
    mac_checks: int = 0
    blocks_accepted: int = 0
    elapsed_s: float = 0.0
    key_exchange_s: float = 0.0
    security: bool = False
    phases: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.status == Phase.DONE


class _SessionAborted(Exception):
    def __init__(self, code: int | None, message: str):
        super().__init__(message)
        self.code = code
        self.message = message


class _Session:
    """Shared plumbing for one lock-step exchange on one endpoint."""

    def __init__(self, endpoint, peer, *, timeout: float, max_retries: int, summary: TransferSummary, stop=None):
        self.endpoint = endpoint
        self.peer = peer
        self.timeout = timeout
        self.max_retries = max_retries
        self.summary = summary
        self.stop = stop
        self.prompt: bytes | None = None

    def enter_phase(self, phase: str) -> None:
        phases = self.summary.phases
        if phases:
            if _PHASE_ORDER.index(phase) < _PHASE_ORDER.index(phases[-1]):
                raise AssertionError(f"phase regression {phases[-1]} -> {phase}")
        if not phases or phases[-1] != phase:
            phases.append(phase)

    def send_packet(self, packet, dst=None) -> None:
        self.endpoint.send(encode_packet(packet), dst if dst is not None else self.peer)

    def abort(self, code: int | None, message: str, notify_peer: bool = True) -> None:
        if notify_peer and self.peer is not None and code is not None:
            try:
                self.send_packet(ErrorPacket(code, message))
            except Exception:
                pass
        raise _SessionAborted(code, message)

    def check_stop(self) -> None:
        if self.stop is not None and self.stop.is_set():
            self.abort(packets.ERR_NOT_DEFINED, "server shutting down")

    def recv_packet(self):
        """One datagram from the locked peer: (packet, src) or TIMEOUT.

        Wrong-TID datagrams get ERROR 5 and are skipped; undecodable
        datagrams are treated as channel noise and skipped.
        """
        deadline = time.monotonic() + self.timeout
        while True:
            self.check_stop()
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                return TIMEOUT
            result = self.endpoint.recv(remaining)
            if result is TIMEOUT:
                return TIMEOUT
            data, src = result
            if self.peer is not None and src != self.peer:
                try:
                    self.endpoint.send(
                        encode_packet(ErrorPacket(packets.ERR_UNKNOWN_TID, "unknown transfer id")), src
                    )
                except Exception:
                    pass
                continue
            try:
                packet = decode_packet(data)
            except packets.MalformedPacketError:
                continue  # bit errors on the wire; the ARQ layer recovers
            return packet, src

    # -- data sender ---------------------------------------------------------

    def send_stream(self, payloads: list[bytes], first_block: int) -> None:
        """Send payloads as DATA blocks first_block.. in lock-step."""
        if first_block + len(payloads) - 1 > 0xFFFF:
            self.abort(packets.ERR_NOT_DEFINED, "transfer exceeds the 16-bit block space")
        sender = arq.new_sender(seq_bits=16, max_retries=self.max_retries, start_seq=first_block)
        done = False

        def handle(actions, retransmit: bool) -> None:
            nonlocal done
            for action in actions:
                if isinstance(action, arq.EmitFrame):
                    if retransmit:
                        self.summary.retransmissions += 1
                    self.send_packet(DataPacket(block=action.frame.seq, data=action.frame.payload))
                elif isinstance(action, arq.Done):
                    done = True
                elif isinstance(action, arq.Fail):
                    self.abort(None, f"transfer failed: {action.reason}", notify_peer=False)

        for payload in payloads:
            sender, actions = arq.sender_step(sender, arq.Send(payload))
            handle(actions, retransmit=False)

        while not done:
            reply = self.recv_packet()
            if reply is TIMEOUT:
                sender, actions = arq.sender_step(sender, arq.Timeout())
                handle(actions, retransmit=True)
                continue
            packet, _ = reply
            if isinstance(packet, AckPacket):
                sender, actions = arq.sender_step(sender, arq.AckReceived(packet.block))
                handle(actions, retransmit=False)
            elif isinstance(packet, ErrorPacket):
                self.summary.error_code = packet.code
                self.abort(None, f"peer error {packet.code}: {packet.message}", notify_peer=False)
            # stray DATA/OACK during the send phase is ignored

    # -- data receiver -------------------------------------------------------

    def recv_stream(
        self,
        first_block: int,
        keyblocks: int,
        on_key_chunks,
        block_size: int = BLOCK_SIZE,
        on_final=None,
    ) -> bytes:
        """Receive key chunks (blocks first_block..first_block+keyblocks-1),
        then sealed or raw data blocks until a short block ends the transfer.

        on_key_chunks(chunks) -> SessionKeys | SECURITY_FAILURE | None is
        called once all key blocks are in; None means a legacy transfer.
        on_final(data) runs before the final block is acknowledged, so a
        sender that sees the last ACK knows the payload was persisted.
        """
        receiver = arq.new_receiver(seq_bits=16, start_seq=first_block)
        keys: records.SessionKeys | None = None
        key_chunks: list[bytes] = []
        out = bytearray()
        quiet = 0
        finished = False

        if keyblocks == 0:
            maybe_keys = on_key_chunks([])
            if maybe_keys is not None:
                keys = maybe_keys
                self.enter_phase(Phase.DATA_TRANSFER)

        while not finished:
            reply = self.recv_packet()
            if reply is TIMEOUT:
                quiet += 1
                if quiet > self.max_retries:
                    self.abort(None, "peer silent, retries exhausted", notify_peer=False)
                # Nudge with the OACK/initial ACK until the stream starts; once
                # DATA flows, recovery is the sender's timer alone.  Re-sending
                # stale data ACKs is dangerous: a bit error can turn ACK(n-1)
                # into the awaited ACK(n) and desynchronize the lock-step.
                if self.prompt is not None and receiver.last_acked is None:
                    self.endpoint.send(self.prompt, self.peer)
                    self.summary.retransmissions += 1
                continue
            packet, _ = reply
            quiet = 0
            if isinstance(packet, ErrorPacket):
                self.summary.error_code = packet.code
                self.abort(None, f"peer error {packet.code}: {packet.message}", notify_peer=False)
            if not isinstance(packet, DataPacket):
                continue

            payload = packet.data
            if keys is not None and packet.block == receiver.expected_seq:
                try:
                    record = records.record_from_bytes(packet.data)
                except ParameterError:
                    continue  # truncated record: treat as corruption
                self.summary.mac_checks += 1
                opened = records.open_block(keys, packet.block, record)
                if opened is records.MAC_FAILURE:
                    self.summary.mac_failures += 1
                    continue  # no ACK; the sender retransmits
                payload = opened

            frame = arq.make_data_frame(packet.block, payload)
            receiver, actions = arq.receiver_step(receiver, frame)
            delivered = False
            pending_ack: bytes | None = None
            for action in actions:
                if isinstance(action, arq.Deliver):
                    delivered = True
                    if keys is None and keyblocks and len(key_chunks) < keyblocks:
                        key_chunks.append(action.payload)
                        if len(key_chunks) == keyblocks:
                            started = time.monotonic()
                            maybe_keys = on_key_chunks(key_chunks)
                            self.summary.key_exchange_s = time.monotonic() - started
                            if maybe_keys is SECURITY_FAILURE:
                                self.summary.error_code = packets.ERR_SECURITY
                                self.abort(packets.ERR_SECURITY, "key exchange failed")
                            keys = maybe_keys
                            self.enter_phase(Phase.DATA_TRANSFER)
                    else:
                        out += action.payload
                        self.summary.blocks += 1
                        self.summary.blocks_accepted += 1
                elif isinstance(action, arq.EmitFrame):
                    pending_ack = encode_packet(AckPacket(block=action.frame.seq))
            if delivered and packet.block >= first_block + keyblocks and len(packet.data) < block_size:
                finished = True
                if on_final is not None:
                    on_final(bytes(out))  # persist before the final ACK
            if pending_ack is not None:
                self.endpoint.send(pending_ack, self.peer)
                self.prompt = pending_ack

        return bytes(out)

    def dally(self) -> None:
        """Re-acknowledge retransmitted final blocks for one timeout slice."""
        deadline = time.monotonic() + self.timeout
        while time.monotonic() < deadline:
            result = self.endpoint.recv(max(deadline - time.monotonic(), 0.001))
            if result is TIMEOUT:
                return
            data, src = result
            if src == self.peer and self.prompt is not None:
                try:
                    if isinstance(decode_packet(data), DataPacket):
                        self.endpoint.send(self.prompt, self.peer)
                except packets.MalformedPacketError:
                    pass


def _split_for_transfer(data: bytes, chunk_size: int) -> list[bytes]:
    """File payload chunks, plus the empty end-marker block for exact multiples."""
    chunks = list(arq.chunk_payload(data, chunk_size).chunks)
    if data and len(data) % chunk_size == 0:
        chunks.append(b"")
    return chunks


def _seal_all(keys: records.SessionKeys, chunks: list[bytes], first_block: int, rng) -> list[bytes]:
    sealed = []
    for i, chunk in enumerate(chunks):
        record = records.seal_block(keys, first_block + i, chunk, rng)
        sealed.append(records.record_to_bytes(record))
    return sealed


# ---------------------------------------------------------------------------
# Client.
# ---------------------------------------------------------------------------

class TftpClient:
    """Blocking TFTP client over a real or simulated datagram network."""

    def __init__(
        self,
        network,
        keystore: KeyStore | None = None,
        *,
        rng: random.Random | None = None,
        timeout: float = arq.DEFAULT_TIMEOUT,
        max_retries: int = arq.DEFAULT_MAX_RETRIES,
        decrypt_budget: fixed_time.TimeBudget | str | None = "auto",
    ):
        self.network = network
        self.keystore = keystore or KeyStore()
        self.rng = rng or _DEFAULT_RNG
        self.timeout = timeout
        self.max_retries = max_retries
        self.decrypt_budget = decrypt_budget
        self._budget_cache: dict[str, fixed_time.TimeBudget] = {}

    def _budget_for(self, entry: KeyEntry) -> fixed_time.TimeBudget | None:
        if self.decrypt_budget is None:
            return None
        if isinstance(self.decrypt_budget, fixed_time.TimeBudget):
            return self.decrypt_budget
        if entry.kid not in self._budget_cache:
            self._budget_cache[entry.kid] = calibrate_decrypt_budget(entry)
        return self._budget_cache[entry.kid]

    def _request_reply(self, session: _Session, request_wire: bytes, server):
        """Send the request until the first session reply arrives; locks the TID."""
        retries = 0
        session.endpoint.send(request_wire, server)
        while True:
            result = session.endpoint.recv(session.timeout)
            if result is TIMEOUT:
                retries += 1
                if retries > session.max_retries:
                    session.abort(None, "no response from server", notify_peer=False)
                session.endpoint.send(request_wire, server)
                session.summary.retransmissions += 1
                continue
            data, src = result
            try:
                packet = decode_packet(data)
            except packets.MalformedPacketError:
                continue
            session.peer = src
            return packet

    def put(
        self,
        data: bytes,
        server,
        remote_name: str,
        security: SecurityOptions | None = None,
    ) -> TransferSummary:
        """Upload bytes; returns a summary whose status is DONE or FAILED."""
        summary = TransferSummary(security=security is not None)
        started = time.monotonic()
        endpoint = self.network.endpoint()
        session = _Session(
            endpoint, None, timeout=self.timeout, max_retries=self.max_retries, summary=summary
        )
        try:
            session.enter_phase(Phase.NEGOTIATE)
            options: tuple[tuple[str, str], ...] = ()
            key_payloads: list[bytes] = []
            material = b""
            if security is not None:
                entry = self.keystore.get(security.kid)
                if entry is None:
                    raise ParameterError(f"recipient key {security.kid!r} not in keystore")
                kx_started = time.monotonic()
                material, key_payloads = key_exchange_send(entry.public, self.rng)
                summary.key_exchange_s = time.monotonic() - kx_started
                options = replace(security, keyblocks=len(key_payloads)).to_options()

            request = WriteRequest(filename=remote_name, mode="octet", options=options)
            reply = self._request_reply(session, encode_packet(request), server)

            if isinstance(reply, ErrorPacket):
                summary.error_code, summary.error_message = reply.code, reply.message
                session.abort(None, f"server refused: {reply.message}", notify_peer=False)
            if security is not None:
                if not isinstance(reply, OptionAck):
                    session.abort(packets.ERR_OPTION_REFUSED, "server did not acknowledge security options")
                echoed = packets.security_from_options(reply.options)
                if (
                    echoed is None
                    or echoed.scheme != security.scheme
                    or echoed.keyblocks != len(key_payloads)
                ):
                    session.abort(packets.ERR_OPTION_REFUSED, "server altered security options")
                session.enter_phase(Phase.KEY_EXCHANGE)
                keys = records.derive_session_keys(material)
                chunks = _split_for_transfer(data, PLAINTEXT_PER_BLOCK)
                payloads = key_payloads + _seal_all(keys, chunks, 1 + len(key_payloads), self.rng)
                session.enter_phase(Phase.DATA_TRANSFER)
            else:
                if not isinstance(reply, (AckPacket, OptionAck)):
                    session.abort(None, f"unexpected reply {reply!r}", notify_peer=False)
                if isinstance(reply, AckPacket) and reply.block != 0:
                    session.abort(None, "unexpected initial ACK block", notify_peer=False)
                payloads = _split_for_transfer(data, BLOCK_SIZE)
                session.enter_phase(Phase.DATA_TRANSFER)

            session.send_stream(payloads, first_block=1)
            summary.blocks = len(payloads)
            summary.bytes_transferred = len(data)
            session.enter_phase(Phase.DONE)
            summary.status = Phase.DONE
        except _SessionAborted as abort:
            summary.status = Phase.FAILED
            if not summary.error_message:
                summary.error_message = abort.message
            if abort.code is not None and summary.error_code is None:
                summary.error_code = abort.code
            if summary.phases and summary.phases[-1] != Phase.FAILED:
                summary.phases.append(Phase.FAILED)
        finally:
            endpoint.close()
            summary.elapsed_s = time.monotonic() - started
        return summary

    def get(
        self,
        remote_name: str,
        server,
        security: SecurityOptions | None = None,
    ) -> tuple[bytes | None, TransferSummary]:
        """Download a file; returns (bytes or None, summary)."""
        summary = TransferSummary(security=security is not None)
        started = time.monotonic()
        endpoint = self.network.endpoint()
        session = _Session(
            endpoint, None, timeout=self.timeout, max_retries=self.max_retries, summary=summary
        )
        payload: bytes | None = None
        entry: KeyEntry | None = None
        try:
            session.enter_phase(Phase.NEGOTIATE)
            options: tuple[tuple[str, str], ...] = ()
            budget = None
            if security is not None:
                entry = self.keystore.get(security.kid)
                if entry is None or entry.secret is None:
                    raise ParameterError(f"no secret key {security.kid!r} in keystore for download")
                budget = self._budget_for(entry)  # calibrate before the clock starts
                options = SecurityOptions(scheme=security.scheme, kid=security.kid).to_options()

            request = ReadRequest(filename=remote_name, mode="octet", options=options)
            request_wire = encode_packet(request)
            reply = self._request_reply(session, request_wire, server)

            keyblocks = 0
            first_packet: DataPacket | None = None
            if isinstance(reply, ErrorPacket):
                summary.error_code, summary.error_message = reply.code, reply.message
                session.abort(None, f"server refused: {reply.message}", notify_peer=False)
            elif isinstance(reply, OptionAck):
                echoed = packets.security_from_options(reply.options)
                if security is None:
                    session.abort(packets.ERR_OPTION_REFUSED, "unsolicited security options")
                if echoed is None or echoed.scheme != security.scheme or not echoed.keyblocks:
                    session.abort(packets.ERR_OPTION_REFUSED, "server altered security options")
                keyblocks = echoed.keyblocks
                ack0 = encode_packet(AckPacket(block=0))
                session.endpoint.send(ack0, session.peer)
                session.prompt = ack0
                session.enter_phase(Phase.KEY_EXCHANGE)
            elif isinstance(reply, DataPacket):
                if security is not None:
                    session.abort(packets.ERR_OPTION_REFUSED, "server ignored security options")
                first_packet = reply
            else:
                session.abort(None, f"unexpected reply {reply!r}", notify_peer=False)

            def on_key_chunks(chunks):
                if security is None:
                    return None
                assert entry is not None
                return key_exchange_receive(chunks, entry.secret, entry.params, budget)

            if first_packet is not None:
                # Legacy transfer already in flight: replay the first DATA
                # packet into the endpoint path by handling it inline.
                payload = self._recv_with_first(session, first_packet, on_key_chunks)
            else:
                payload = session.recv_stream(first_block=1, keyblocks=keyblocks, on_key_chunks=on_key_chunks)
                session.dally()
            summary.bytes_transferred = len(payload)
            session.enter_phase(Phase.DONE)
            summary.status = Phase.DONE
        except _SessionAborted as abort:
            summary.status = Phase.FAILED
            if not summary.error_message:
                summary.error_message = abort.message
            if abort.code is not None and summary.error_code is None:
                summary.error_code = abort.code
            if summary.phases and summary.phases[-1] != Phase.FAILED:
                summary.phases.append(Phase.FAILED)
            payload = None
        finally:
            endpoint.close()
            summary.elapsed_s = time.monotonic() - started
        return payload, summary

    def _recv_with_first(self, session: _Session, first: DataPacket, on_key_chunks) -> bytes:
        if first.block != 1:
            session.abort(None, "legacy transfer did not start at block 1", notify_peer=False)
        ack = encode_packet(AckPacket(block=1))
        session.endpoint.send(ack, session.peer)
        session.prompt = ack
        session.enter_phase(Phase.DATA_TRANSFER)
        session.summary.blocks += 1
        session.summary.blocks_accepted += 1
        if len(first.data) < BLOCK_SIZE:
            session.dally()
            return first.data
        receiver_tail = session.recv_stream(first_block=2, keyblocks=0, on_key_chunks=lambda _: None)
        session.dally()
        return first.data + receiver_tail


# ---------------------------------------------------------------------------
# Server.
# ---------------------------------------------------------------------------

@dataclass
class SessionLog:
    peer: object
    operation: str
    filename: str
    security: bool
    summary: TransferSummary


class TftpServer:
    """Serves read and write requests, one session thread per transfer."""

    def __init__(
        self,
        network,
        root: str | Path,
        keystore: KeyStore | None = None,
        policy: TransferPolicy | None = None,
        *,
        port: int | None = None,
        rng: random.Random | None = None,
        timeout: float = arq.DEFAULT_TIMEOUT,
        max_retries: int = arq.DEFAULT_MAX_RETRIES,
        decrypt_budget: fixed_time.TimeBudget | str | None = "auto",
        calibration_samples: int = 30,
    ):
        self.network = network
        self.root = Path(root)
        self.keystore = keystore or KeyStore()
        self.policy = policy or TransferPolicy()
        self.rng = rng or _DEFAULT_RNG
        self.timeout = timeout
        self.max_retries = max_retries
        self.decrypt_budget = decrypt_budget
        self.calibration_samples = calibration_samples
        self.endpoint = network.endpoint(port) if port is not None else network.endpoint()
        self.session_logs: list[SessionLog] = []
        self._log_lock = threading.Lock()
        self._budget_cache: dict[str, fixed_time.TimeBudget] = {}
        self._budget_lock = threading.Lock()
        self._threads: list[threading.Thread] = []

    @property
    def address(self):
        return self.endpoint.address

    def _budget_for(self, entry: KeyEntry) -> fixed_time.TimeBudget | None:
        if self.decrypt_budget is None:
            return None
        if isinstance(self.decrypt_budget, fixed_time.TimeBudget):
            return self.decrypt_budget
        with self._budget_lock:
            if entry.kid not in self._budget_cache:
                log.info("calibrating fixed-time decrypt budget for key %s", entry.kid)
                self._budget_cache[entry.kid] = calibrate_decrypt_budget(
                    entry, n_samples=self.calibration_samples
                )
            return self._budget_cache[entry.kid]

    def warm_up(self) -> None:
        """Calibrate decrypt budgets for every secret key before serving.

        Lazy calibration would otherwise delay the first secured session past
        the client's retransmission timeout.
        """
        for kid in self.keystore.kids():
            entry = self.keystore.get(kid)
            if entry is not None and entry.secret is not None:
                self._budget_for(entry)

    def serve_forever(self, stop: threading.Event) -> None:
        """Accept requests until the stop event is set; then abort sessions."""
        while not stop.is_set():
            result = self.endpoint.recv(0.1)
            if result is TIMEOUT:
                continue
            data, src = result
            try:
                packet = decode_packet(data)
            except packets.MalformedPacketError as exc:
                self.endpoint.send(encode_packet(ErrorPacket(packets.ERR_ILLEGAL_OPERATION, str(exc))), src)
                continue
            if isinstance(packet, (ReadRequest, WriteRequest)):
                thread = threading.Thread(
                    target=self._run_session, args=(packet, src, stop), daemon=True
                )
                thread.start()
                self._threads.append(thread)
            else:
                self.endpoint.send(
                    encode_packet(ErrorPacket(packets.ERR_ILLEGAL_OPERATION, "not a transfer request")), src
                )
        for thread in self._threads:
            thread.join(timeout=2 * self.timeout + 1)

    def _run_session(self, request, src, stop) -> None:
        summary = TransferSummary()
        operation = "get" if isinstance(request, ReadRequest) else "put"
        started = time.monotonic()
        endpoint = self.network.endpoint()
        session = _Session(
            endpoint, src, timeout=self.timeout, max_retries=self.max_retries, summary=summary, stop=stop
        )
        try:
            session.enter_phase(Phase.NEGOTIATE)
            if isinstance(request, WriteRequest):
                self._serve_write(session, request)
            else:
                self._serve_read(session, request)
            session.enter_phase(Phase.DONE)
            summary.status = Phase.DONE
        except _SessionAborted as abort:
            summary.status = Phase.FAILED
            if not summary.error_message:
                summary.error_message = abort.message
            if abort.code is not None and summary.error_code is None:
                summary.error_code = abort.code
            if summary.phases and summary.phases[-1] != Phase.FAILED:
                summary.phases.append(Phase.FAILED)
        finally:
            endpoint.close()
            summary.elapsed_s = time.monotonic() - started
            try:
                summary.security = packets.security_from_options(request.options) is not None
            except packets.MalformedPacketError:
                summary.security = False
            with self._log_lock:
                self.session_logs.append(
                    SessionLog(
                        peer=src,
                        operation=operation,
                        filename=request.filename,
                        security=summary.security,
                        summary=summary,
                    )
                )
            log.info(
                "session %s %r from %s: %s bytes=%d blocks=%d retrans=%d mac_failures=%d security=%s",
                operation,
                request.filename,
                src,
                summary.status,
                summary.bytes_transferred,
                summary.blocks,
                summary.retransmissions,
                summary.mac_failures,
                summary.security,
            )

    def _resolve(self, session: _Session, filename: str, must_exist: bool) -> Path:
        candidate = (self.root / filename).resolve()
        root = self.root.resolve()
        if root != candidate and root not in candidate.parents:
            session.abort(packets.ERR_ACCESS_VIOLATION, "path escapes the served root")
        if must_exist and not candidate.is_file():
            session.abort(packets.ERR_FILE_NOT_FOUND, f"no such file: {filename}")
        return candidate

    def _check_mode(self, session: _Session, request) -> None:
        if request.mode.lower() != "octet":
            session.abort(packets.ERR_ILLEGAL_OPERATION, f"only octet mode is served, not {request.mode!r}")

    def _negotiate(self, session: _Session, request) -> SecurityOptions | None:
        outcome = packets.negotiate(request.options, self.policy)
        if isinstance(outcome, ErrorPacket):
            summary = session.summary
            summary.error_code = outcome.code
            session.send_packet(outcome)
            raise _SessionAborted(outcome.code, outcome.message)
        return packets.security_from_options(outcome)

    def _serve_write(self, session: _Session, request: WriteRequest) -> None:
        summary = session.summary
        self._check_mode(session, request)
        target = self._resolve(session, request.filename, must_exist=False)
        sec = self._negotiate(session, request)

        entry = None
        budget = None
        if sec is not None:
            if sec.keyblocks is None:
                session.abort(packets.ERR_OPTION_REFUSED, "secured write needs a keyblocks option")
            entry = self.keystore.get(sec.kid)
            if entry is None or entry.secret is None:
                session.abort(packets.ERR_OPTION_REFUSED, f"no secret key for kid {sec.kid!r}")
            budget = self._budget_for(entry)  # calibrate before answering
            oack = OptionAck(options=replace(sec, keyblocks=sec.keyblocks).to_options())
            initial = encode_packet(oack)
            session.enter_phase(Phase.KEY_EXCHANGE)
        else:
            initial = encode_packet(AckPacket(block=0))
            session.enter_phase(Phase.DATA_TRANSFER)

        session.endpoint.send(initial, session.peer)
        session.prompt = initial

        def on_key_chunks(chunks):
            if sec is None:
                return None
            return key_exchange_receive(chunks, entry.secret, entry.params, budget)

        def store(data: bytes) -> None:
            try:
                target.parent.mkdir(parents=True, exist_ok=True)
                target.write_bytes(data)
            except OSError as exc:
                session.abort(packets.ERR_DISK_FULL, f"cannot store file: {exc}")

        data = session.recv_stream(
            first_block=1,
            keyblocks=sec.keyblocks if sec else 0,
            on_key_chunks=on_key_chunks,
            on_final=store,
        )
        summary.bytes_transferred = len(data)
        session.dally()

    def _serve_read(self, session: _Session, request: ReadRequest) -> None:
        summary = session.summary
        self._check_mode(session, request)
        source = self._resolve(session, request.filename, must_exist=True)
        sec = self._negotiate(session, request)
        data = source.read_bytes()

        if sec is not None:
            entry = self.keystore.get(sec.kid)
            if entry is None:
                session.abort(packets.ERR_OPTION_REFUSED, f"no public key for kid {sec.kid!r}")
            session.enter_phase(Phase.KEY_EXCHANGE)
            kx_started = time.monotonic()
            material, key_payloads = key_exchange_send(entry.public, self.rng)
            keys = records.derive_session_keys(material)
            summary.key_exchange_s = time.monotonic() - kx_started
            oack = OptionAck(
                options=SecurityOptions(scheme=sec.scheme, keyblocks=len(key_payloads), kid=sec.kid).to_options()
            )
            self._await_ack0(session, encode_packet(oack))
            chunks = _split_for_transfer(data, PLAINTEXT_PER_BLOCK)
            payloads = key_payloads + _seal_all(keys, chunks, 1 + len(key_payloads), self.rng)
            session.enter_phase(Phase.DATA_TRANSFER)
        else:
            payloads = _split_for_transfer(data, BLOCK_SIZE)
            session.enter_phase(Phase.DATA_TRANSFER)

        session.send_stream(payloads, first_block=1)
        summary.blocks = len(payloads)
        summary.bytes_transferred = len(data)

    def _await_ack0(self, session: _Session, oack_wire: bytes) -> None:
        retries = 0
        session.endpoint.send(oack_wire, session.peer)
        while True:
            reply = session.recv_packet()
            if reply is TIMEOUT:
                retries += 1
                if retries > session.max_retries:
                    session.abort(None, "client never acknowledged options", notify_peer=False)
                session.endpoint.send(oack_wire, session.peer)
                session.summary.retransmissions += 1
                continue
            packet, _ = reply
            if isinstance(packet, AckPacket) and packet.block == 0:
                return
            if isinstance(packet, ErrorPacket):
                session.summary.error_code = packet.code
                session.abort(None, f"peer error {packet.code}: {packet.message}", notify_peer=False)
