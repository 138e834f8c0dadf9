"""Wire protocol: length-prefixed JSON frames and the typed message set.

Every frame is a 4-byte big-endian unsigned length N followed by N bytes
of UTF-8 JSON shaped {"type": <name>, "payload": {...}}. Frames are
self-delimiting, so any chunking of the byte stream reassembles into the
same message sequence. The full byte-level contract lives in protocol.md.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

from .blocks import Block, Transaction

MESSAGE_TYPES = frozenset(
    {
        "REGISTER",
        "MINER_INFO",
        "SIM_START",
        "GENESIS",
        "TX_POOL",
        "BLOCK",
        "SIM_END",
        "LAST_BLOCK",
        "CHAIN_REQUEST",
        "CHAIN",
        "CONSENSUS_RESULT",
        "DISCARD",
    }
)

LENGTH_PREFIX = struct.Struct(">I")
MAX_FRAME = 2**32 - 1


class ProtocolError(ValueError):
    """Base for every framing or message-shape violation."""


class FrameOverflow(ProtocolError):
    """Encoded body does not fit the 4-byte length prefix."""


class IncompleteFrame(ProtocolError):
    """Buffer ends before the frame does; feed more bytes and retry."""


class EmptyFrame(ProtocolError):
    """Length prefix of zero; no valid message is empty."""


class ParseError(ProtocolError):
    """Frame body is not the expected JSON shape."""


class UnknownMessage(ProtocolError):
    """Well-formed frame with a type outside the message set."""


@dataclass(frozen=True)
class WireMessage:
    type: str
    payload: dict

    def __post_init__(self) -> None:
        if self.type not in MESSAGE_TYPES:
            raise UnknownMessage(f"unknown message type {self.type!r}")


@dataclass(frozen=True)
class MinerRecord:
    """One roster entry: everything peers need to reach a miner."""

    miner_id: int
    hashpower: float
    ip: str
    port: int


def encode(msg: WireMessage) -> bytes:
    """Serialize a message to one frame. Inverse of decode."""
    body = json.dumps(
        {"type": msg.type, "payload": msg.payload},
        separators=(",", ":"),
        sort_keys=True,
    ).encode("utf-8")
    if len(body) > MAX_FRAME:
        raise FrameOverflow(f"body of {len(body)} bytes exceeds frame limit")
    return LENGTH_PREFIX.pack(len(body)) + body


def decode(data: bytes) -> tuple[WireMessage, int]:
    """Parse one frame from the head of data.

    Returns the message and the number of bytes consumed; anything after
    the frame is left for the next call.
    """
    if len(data) < LENGTH_PREFIX.size:
        raise IncompleteFrame("length prefix not yet complete")
    (length,) = LENGTH_PREFIX.unpack_from(data)
    if length == 0:
        raise EmptyFrame("zero-length frame")
    end = LENGTH_PREFIX.size + length
    if len(data) < end:
        raise IncompleteFrame(f"frame wants {length} bytes, have {len(data) - 4}")
    try:
        obj = json.loads(data[LENGTH_PREFIX.size:end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ParseError(f"frame body is not valid JSON: {exc}") from exc
    if not isinstance(obj, dict) or not isinstance(obj.get("type"), str):
        raise ParseError("frame body must be an object with a string 'type'")
    if obj["type"] not in MESSAGE_TYPES:
        raise UnknownMessage(f"unknown message type {obj['type']!r}")
    payload = obj.get("payload")
    if not isinstance(payload, dict):
        raise ParseError("'payload' must be an object")
    return WireMessage(obj["type"], payload), end


class FrameReader:
    """Incremental reassembler: feed arbitrary chunks, get whole messages."""

    def __init__(self) -> None:
        self._buf = bytearray()

    def feed(self, chunk: bytes) -> list[WireMessage]:
        self._buf.extend(chunk)
        out: list[WireMessage] = []
        while True:
            try:
                msg, used = decode(bytes(self._buf))
            except IncompleteFrame:
                return out
            del self._buf[:used]
            out.append(msg)

    @property
    def pending_bytes(self) -> int:
        return len(self._buf)


# payload codecs


def block_to_payload(block: Block) -> dict:
    return {
        "id": block.id,
        "parent_id": block.parent_id,
        "depth": block.depth,
        "miner_id": block.miner_id,
        "blocktime": block.blocktime,
        "tx_ids": list(block.tx_ids),
        "is_empty": block.is_empty,
    }


def block_from_payload(obj: dict) -> Block:
    try:
        return Block(
            id=obj["id"],
            parent_id=obj["parent_id"],
            depth=obj["depth"],
            miner_id=obj["miner_id"],
            blocktime=obj["blocktime"],
            tx_ids=tuple(obj["tx_ids"]),
            is_empty=obj["is_empty"],
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"bad block payload: {exc}") from exc


def tx_to_payload(tx: Transaction) -> dict:
    return {"id": tx.id, "size_bytes": tx.size_bytes, "fee": tx.fee}


def tx_from_payload(obj: dict) -> Transaction:
    try:
        return Transaction(id=obj["id"], size_bytes=obj["size_bytes"], fee=obj["fee"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"bad transaction payload: {exc}") from exc


def miner_record_to_payload(rec: MinerRecord) -> dict:
    return {
        "miner_id": rec.miner_id,
        "hashpower": rec.hashpower,
        "ip": rec.ip,
        "port": rec.port,
    }


def miner_record_from_payload(obj: dict) -> MinerRecord:
    try:
        return MinerRecord(
            miner_id=obj["miner_id"],
            hashpower=obj["hashpower"],
            ip=obj["ip"],
            port=obj["port"],
        )
    except (KeyError, TypeError) as exc:
        raise ParseError(f"bad miner record: {exc}") from exc


# message constructors


def msg_register(port: int, hashpower: float) -> WireMessage:
    return WireMessage("REGISTER", {"port": port, "hashpower": hashpower})


def msg_miner_info(
    miner_id: int, miners: list[MinerRecord], total_hashpower: float
) -> WireMessage:
    return WireMessage(
        "MINER_INFO",
        {
            "miner_id": miner_id,
            "miners": [miner_record_to_payload(m) for m in miners],
            "total_hashpower": total_hashpower,
        },
    )


def msg_sim_start(
    duration: float, interval: float, time_scale: float, subseed: int
) -> WireMessage:
    return WireMessage(
        "SIM_START",
        {
            "duration": duration,
            "interval": interval,
            "time_scale": time_scale,
            "subseed": subseed,
        },
    )


def msg_genesis(block: Block) -> WireMessage:
    return WireMessage("GENESIS", {"block": block_to_payload(block)})


def msg_tx_pool(txs: list[Transaction]) -> WireMessage:
    return WireMessage("TX_POOL", {"transactions": [tx_to_payload(t) for t in txs]})


def msg_block(block: Block) -> WireMessage:
    return WireMessage("BLOCK", {"block": block_to_payload(block)})


def msg_sim_end() -> WireMessage:
    return WireMessage("SIM_END", {})


def msg_last_block(miner_id: int, block: Block) -> WireMessage:
    return WireMessage(
        "LAST_BLOCK", {"miner_id": miner_id, "block": block_to_payload(block)}
    )


def msg_chain_request() -> WireMessage:
    return WireMessage("CHAIN_REQUEST", {})


def msg_chain(miner_id: int, blocks: list[Block]) -> WireMessage:
    return WireMessage(
        "CHAIN", {"miner_id": miner_id, "blocks": [block_to_payload(b) for b in blocks]}
    )


def msg_consensus_result(winner_id: int, blocks: list[Block]) -> WireMessage:
    return WireMessage(
        "CONSENSUS_RESULT",
        {"winner_id": winner_id, "blocks": [block_to_payload(b) for b in blocks]},
    )


def msg_discard(reason: str) -> WireMessage:
    return WireMessage("DISCARD", {"reason": reason})


def chain_from_payload(objs: list[dict]) -> list[Block]:
    return [block_from_payload(o) for o in objs]
