"""Canonical byte encodings, hashing, and simulation-grade authentication.

Every digest, message id, and Merkle leaf in the system is computed over the
length-prefixed encodings defined here. docs/encoding.md is the normative
description; changing any prefix or layout invalidates recorded traces.
"""

from __future__ import annotations

import hashlib

# One-byte domain-separation prefixes. LEAF/NODE block second-preimage
# attacks on the Merkle tree; the rest keep hash inputs disjoint by use.
LEAF = b"\x00"
NODE = b"\x01"
MSG_ID = b"\x02"
BLOCK = b"\x03"
SEED = b"\x04"
PRIORITY = b"\x05"
KEY = b"\x06"
TAG = b"\x07"
ADDR = b"\x08"
MERGE = b"\x09"

TAG_BYTES = 16
ZERO32 = b"\x00" * 32


def sha256(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


def u32(value: int) -> bytes:
    return value.to_bytes(4, "big")


def u64(value: int) -> bytes:
    return value.to_bytes(8, "big")


def enc_bytes(data: bytes) -> bytes:
    return u32(len(data)) + data


def enc_str(text: str) -> bytes:
    return enc_bytes(text.encode("utf-8"))


def enc_opt_u64(value: int | None) -> bytes:
    if value is None:
        return b"\x00"
    return b"\x01" + u64(value)


def enc_opt_bytes(data: bytes | None) -> bytes:
    if data is None:
        return b"\x00"
    return b"\x01" + enc_bytes(data)


def enc_list(encoded_items: list[bytes]) -> bytes:
    return u32(len(encoded_items)) + b"".join(encoded_items)


def node_key(node: str) -> bytes:
    """Per-node signing key. Derivable by anyone: simulation-grade only."""
    return sha256(KEY + enc_str(node))


def sign(node: str, payload: bytes) -> bytes:
    return sha256(TAG + node_key(node) + payload)[:TAG_BYTES]


def check(node: str, payload: bytes, tag: bytes) -> bool:
    return sign(node, payload) == tag
