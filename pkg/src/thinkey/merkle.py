"""Merkle tree with duplicate-last padding and (hash, side) inclusion proofs.

Leaves are hashed with a 0x00 prefix and interior nodes with 0x01, so a leaf
can never be reinterpreted as a node. Odd-width layers duplicate their final
node, which means proofs are only meaningful together with the leaf count
conventions documented in docs/encoding.md.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .encoding import LEAF, NODE, sha256

# Root of the empty tree, by definition.
EMPTY_ROOT = sha256(b"")


@dataclass(frozen=True)
class MerkleProof:
    """Sibling path for one leaf; side is the sibling's position (L or R)."""

    leaf_index: int
    siblings: tuple[tuple[bytes, str], ...]


def leaf_hash(data: bytes) -> bytes:
    return sha256(LEAF + data)


def node_hash(left: bytes, right: bytes) -> bytes:
    return sha256(NODE + left + right)


def _layers(leaves: Sequence[bytes]) -> list[list[bytes]]:
    layer = [leaf_hash(leaf) for leaf in leaves]
    layers = [layer]
    while len(layer) > 1:
        if len(layer) % 2:
            layer = layer + [layer[-1]]
        layer = [node_hash(layer[i], layer[i + 1]) for i in range(0, len(layer), 2)]
        layers.append(layer)
    return layers


def build_merkle(leaves: Sequence[bytes]) -> bytes:
    """Root hash of the leaf sequence; empty input yields EMPTY_ROOT."""
    if not leaves:
        return EMPTY_ROOT
    return _layers(leaves)[-1][0]


def prove(leaves: Sequence[bytes], index: int) -> MerkleProof:
    if not 0 <= index < len(leaves):
        raise IndexError(f"leaf index {index} out of range for {len(leaves)} leaves")
    layers = _layers(leaves)
    siblings = []
    i = index
    for layer in layers[:-1]:
        sibling = i ^ 1
        if sibling >= len(layer):
            sibling = len(layer) - 1  # odd width: sibling is the duplicate
        side = "L" if i % 2 else "R"
        siblings.append((layer[sibling], side))
        i //= 2
    return MerkleProof(index, tuple(siblings))


def verify(root: bytes, leaf: bytes, index: int, proof: MerkleProof) -> bool:
    """True iff the path recomputation reaches root. Malformed proofs are False."""
    if index != proof.leaf_index or index < 0:
        return False
    current = leaf_hash(leaf)
    i = index
    for sibling, side in proof.siblings:
        # Side must agree with the index bit at this level.
        if side not in ("L", "R") or side != ("L" if i % 2 else "R"):
            return False
        if side == "L":
            current = node_hash(sibling, current)
        else:
            current = node_hash(current, sibling)
        i //= 2
    if i != 0:
        return False
    return current == root
