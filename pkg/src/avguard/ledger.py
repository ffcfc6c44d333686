"""Append-only consortium ledger.

Signed transactions (sensor-window digests, anomaly alerts, mitigation
logs, rule-set commitments) are batched into hash-chained blocks with a
merkle root over transaction hashes. Serialization is canonical and
bit-exact: length-prefixed fields in declared order, integers
big-endian, so independent implementations interoperate on the same
test vectors.

`verify_chain` recomputes every hash, merkle root, and signature and
reports the lowest failing height.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum

from . import crypto
from .crypto import (
    Decoder,
    Identity,
    enc_bytes,
    enc_f64,
    enc_str,
    enc_u8,
    enc_u32,
    enc_u64,
    sha256,
)
from .detector import AnomalyAlert, Severity, SuspectedKind
from .errors import ChainError, InputError
from .fleet import HEALTH_CHANNELS

GENESIS_PROPOSER = "genesis"
EMPTY_MERKLE = sha256(b"avguard.empty.v1")


class PayloadKind(IntEnum):
    SENSOR_DIGEST = 0
    ALERT = 1
    MITIGATION_LOG = 2
    RULESET_COMMIT = 3


@dataclass(frozen=True)
class SensorDigest:
    vehicle_id: int
    window_end: float
    digest: bytes  # sha256 over the window's frame records

    kind = PayloadKind.SENSOR_DIGEST

    def encode(self) -> bytes:
        return (enc_u8(self.kind) + enc_u32(self.vehicle_id)
                + enc_f64(self.window_end) + enc_bytes(self.digest))


@dataclass(frozen=True)
class AlertPayload:
    alert: AnomalyAlert

    kind = PayloadKind.ALERT

    def encode(self) -> bytes:
        a = self.alert
        return (enc_u8(self.kind) + a.canonical_bytes() + enc_bytes(a.signature))


@dataclass(frozen=True)
class MitigationLog:
    action_kind: int             # contracts.ActionKind value
    target_vehicle: int
    alert_height: int
    alert_index: int
    exec_time: float
    rule_id: str
    note: str = ""

    kind = PayloadKind.MITIGATION_LOG

    def encode(self) -> bytes:
        return (enc_u8(self.kind) + enc_u8(self.action_kind)
                + enc_u32(self.target_vehicle) + enc_u64(self.alert_height)
                + enc_u32(self.alert_index) + enc_f64(self.exec_time)
                + enc_str(self.rule_id) + enc_str(self.note))


@dataclass(frozen=True)
class RuleSetCommit:
    rules_hash: bytes

    kind = PayloadKind.RULESET_COMMIT

    def encode(self) -> bytes:
        return enc_u8(self.kind) + enc_bytes(self.rules_hash)


def decode_payload(dec: Decoder):
    kind = PayloadKind(dec.u8())
    if kind is PayloadKind.SENSOR_DIGEST:
        return SensorDigest(dec.u32(), dec.f64(), dec.bytes_())
    if kind is PayloadKind.ALERT:
        vehicle = dec.u32()
        ts = dec.f64()
        score = dec.f64()
        threshold = dec.f64()
        severity = Severity(dec.u8())
        suspected = SuspectedKind(dec.u8())
        n = dec.u8()
        channels = tuple(HEALTH_CHANNELS[dec.u8()] for _ in range(n))
        signer = dec.str_()
        alert = AnomalyAlert(vehicle, ts, score, threshold, severity, suspected,
                             channels, signer_id=signer)
        alert.signature = dec.bytes_()
        return AlertPayload(alert)
    if kind is PayloadKind.MITIGATION_LOG:
        return MitigationLog(dec.u8(), dec.u32(), dec.u64(), dec.u32(),
                             dec.f64(), dec.str_(), dec.str_())
    if kind is PayloadKind.RULESET_COMMIT:
        return RuleSetCommit(dec.bytes_())
    raise InputError(f"unknown payload kind {kind}")  # pragma: no cover


# ---------------------------------------------------------------------------
# transactions

@dataclass(frozen=True)
class SignedTransaction:
    payload: object
    submitter: str
    submit_time: float
    signature: bytes

    def signing_bytes(self) -> bytes:
        return (self.payload.encode() + enc_str(self.submitter)
                + enc_f64(self.submit_time))

    def encode(self) -> bytes:
        return self.signing_bytes() + enc_bytes(self.signature)

    def tx_hash(self) -> bytes:
        return sha256(self.encode())


def decode_tx(dec: Decoder) -> SignedTransaction:
    payload = decode_payload(dec)
    submitter = dec.str_()
    submit_time = dec.f64()
    signature = dec.bytes_()
    return SignedTransaction(payload, submitter, submit_time, signature)


def make_tx(identity: Identity, payload, submit_time: float) -> SignedTransaction:
    unsigned = SignedTransaction(payload, identity.node_id, submit_time, b"")
    sig = identity.sign(unsigned.signing_bytes())
    return SignedTransaction(payload, identity.node_id, submit_time, sig)


def verify_tx(tx: SignedTransaction, pubkeys: dict) -> bool:
    pub = pubkeys.get(tx.submitter)
    if pub is None or not crypto.verify(pub, tx.signing_bytes(), tx.signature):
        return False
    if isinstance(tx.payload, AlertPayload):
        alert = tx.payload.alert
        apub = pubkeys.get(alert.signer_id)
        if apub is None or not crypto.verify(apub, alert.canonical_bytes(),
                                             alert.signature):
            return False
    return True


# ---------------------------------------------------------------------------
# merkle tree and blocks

def merkle_root(hashes: list) -> bytes:
    if not hashes:
        return EMPTY_MERKLE
    level = list(hashes)
    while len(level) > 1:
        if len(level) % 2 == 1:
            level.append(level[-1])
        level = [sha256(level[i] + level[i + 1]) for i in range(0, len(level), 2)]
    return level[0]


@dataclass
class Block:
    height: int
    prev_hash: bytes
    proposer: str
    commit_time: float           # proposer-stamped batch time
    txs: list
    merkle: bytes = b""
    hash: bytes = b""

    def header_bytes(self) -> bytes:
        return (enc_u64(self.height) + enc_bytes(self.prev_hash)
                + enc_str(self.proposer) + enc_f64(self.commit_time))

    def seal(self) -> "Block":
        self.merkle = merkle_root([tx.tx_hash() for tx in self.txs])
        self.hash = sha256(self.header_bytes() + self.merkle)
        return self

    def encode(self) -> bytes:
        body = self.header_bytes() + enc_bytes(self.merkle) + enc_bytes(self.hash)
        body += enc_u32(len(self.txs))
        for tx in self.txs:
            body += enc_bytes(tx.encode())
        return body


def decode_block(dec: Decoder) -> Block:
    height = dec.u64()
    prev = dec.bytes_()
    proposer = dec.str_()
    t = dec.f64()
    merkle = dec.bytes_()
    h = dec.bytes_()
    n = dec.u32()
    txs = [decode_tx(Decoder(dec.bytes_())) for _ in range(n)]
    return Block(height, prev, proposer, t, txs, merkle, h)


def make_block(height: int, prev_hash: bytes, proposer: str, commit_time: float,
               txs: list) -> Block:
    return Block(height, prev_hash, proposer, commit_time, list(txs)).seal()


def genesis() -> Block:
    return make_block(0, b"\x00" * 32, GENESIS_PROPOSER, 0.0, [])


def append_block(chain: list, block: Block) -> list:
    head = chain[-1]
    if block.height != head.height + 1:
        raise ChainError(f"height {block.height} does not extend {head.height}")
    if block.prev_hash != head.hash:
        raise ChainError("prev_hash does not match current head")
    chain.append(block)
    return chain


def verify_chain(chain: list, pubkeys: dict):
    """Recompute everything; returns None if ok, else the first bad height."""
    if not chain:
        return None
    g = genesis()
    b0 = chain[0]
    if (b0.height, b0.prev_hash, b0.proposer, b0.commit_time) != (
            0, g.prev_hash, g.proposer, g.commit_time) or b0.hash != g.hash or b0.txs:
        return 0
    for i, block in enumerate(chain[1:], start=1):
        if block.height != i:
            return i
        if block.prev_hash != chain[i - 1].hash:
            return i
        merkle = merkle_root([tx.tx_hash() for tx in block.txs])
        if merkle != block.merkle:
            return i
        if sha256(block.header_bytes() + merkle) != block.hash:
            return i
        for tx in block.txs:
            if not verify_tx(tx, pubkeys):
                return i
    return None


# chain dump: one block per line, hex encoded
def export_chain(chain: list) -> str:
    return "\n".join(b.encode().hex() for b in chain) + "\n"


def import_chain(text: str) -> list:
    chain = []
    for line in text.splitlines():
        if line.strip():
            chain.append(decode_block(Decoder(bytes.fromhex(line.strip()))))
    return chain


# ---------------------------------------------------------------------------
# forensic queries

@dataclass(frozen=True)
class ForensicEvent:
    height: int
    index: int
    block_time: float
    tx: SignedTransaction


@dataclass(frozen=True)
class CoordinationFlag:
    suspected_kind: SuspectedKind
    vehicles: tuple
    window_start: float
    window_end: float


def forensic_query(chain: list, pubkeys: dict, time_range=None, vehicles=None,
                   kinds=None, coordination_m: int = 3,
                   coordination_w: float = 10.0) -> tuple:
    """Ordered event list plus coordinated-attack flags.

    Refuses unverified chains. Filters: block commit-time range, vehicle
    id set, payload kind set. Events are ordered by (height, intra-block
    index).
    """
    bad = verify_chain(chain, pubkeys)
    if bad is not None:
        raise ChainError(f"refusing forensic query: chain invalid at height {bad}")
    events = []
    for block in chain:
        if time_range is not None and not (time_range[0] <= block.commit_time <= time_range[1]):
            continue
        for idx, tx in enumerate(block.txs):
            p = tx.payload
            if kinds is not None and p.kind not in kinds:
                continue
            if vehicles is not None:
                vid = getattr(p, "vehicle_id", None)
                if vid is None and isinstance(p, AlertPayload):
                    vid = p.alert.vehicle_id
                if vid is None and isinstance(p, MitigationLog):
                    vid = p.target_vehicle
                if vid not in vehicles:
                    continue
            events.append(ForensicEvent(block.height, idx, block.commit_time, tx))
    flags = _coordination_flags(events, coordination_m, coordination_w)
    return events, flags


def _coordination_flags(events: list, m: int, w: float) -> list:
    """Flag >= m distinct vehicles alerting with one suspected kind within w."""
    alerts = [(e.tx.payload.alert.timestamp, e.tx.payload.alert)
              for e in events if isinstance(e.tx.payload, AlertPayload)]
    alerts.sort(key=lambda p: p[0])
    flags = []
    flagged_windows = set()
    by_kind: dict = {}
    for t, alert in alerts:
        by_kind.setdefault(alert.suspected_kind, []).append((t, alert.vehicle_id))
    for kind, items in by_kind.items():
        for i, (t0, _) in enumerate(items):
            group = [(t, v) for (t, v) in items if t0 <= t <= t0 + w]
            vehicles = tuple(sorted({v for _, v in group}))
            if len(vehicles) >= m:
                key = (kind, vehicles)
                if key not in flagged_windows:
                    flagged_windows.add(key)
                    flags.append(CoordinationFlag(kind, vehicles, t0,
                                                  max(t for t, _ in group)))
    return flags
