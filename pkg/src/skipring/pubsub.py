"""Per-subscriber publication store and hash-guided reconciliation.

Publications are keyed by a fixed-width digest of (origin id, payload)
and kept in a compressed binary trie: every inner node has exactly two
children, its label is the longest common prefix of the children's
labels, and labels are absolute prefixes (the root's label may be the
empty string).  Node hashes are Merkle-style — a leaf hashes its label,
an inner node hashes the concatenation of its children's hashes — so
equal key sets give bit-identical root hashes regardless of insertion
order, and a single summary (label, hash) pins down a whole subtree.

Reconciliation ships such summaries between ring neighbors; hash
mismatches descend one level per round trip, and missing-subtree
discoveries answer with the publications under the divergent prefix.
The digests need to separate desk-scale key sets, not resist attackers.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Iterator, Optional

from .messages import (
    Bits,
    CheckAndPublish,
    CheckTrie,
    Publication,
    PublishNew,
    PublishSet,
    TrieSummary,
)

DEFAULT_KEY_BITS = 64

EMPTY = Bits(0, 0)


class KeyCollisionError(ValueError):
    """Two distinct publications digested to the same key."""


def bit_at(b: Bits, i: int) -> int:
    return (b.value >> (b.nbits - 1 - i)) & 1


def is_prefix(p: Bits, b: Bits) -> bool:
    return p.nbits <= b.nbits and (b.value >> (b.nbits - p.nbits)) == p.value


def concat_bit(p: Bits, bit: int) -> Bits:
    return Bits(p.nbits + 1, (p.value << 1) | bit)


def bits_bytes(b: Bits) -> bytes:
    return b.nbits.to_bytes(2, "big") + b.value.to_bytes((b.nbits + 7) // 8 or 1, "big")


def _digest(data: bytes) -> bytes:
    return hashlib.blake2b(data, digest_size=8).digest()


def pub_hash(origin: int, payload: bytes, m: int = DEFAULT_KEY_BITS) -> Bits:
    """Deterministic m-bit publication key for (origin, payload)."""
    raw = hashlib.blake2b(
        origin.to_bytes(8, "big", signed=True) + payload, digest_size=(m + 7) // 8
    ).digest()
    return Bits(m, int.from_bytes(raw, "big") >> (8 * ((m + 7) // 8) - m))


def make_publication(origin: int, payload: bytes, m: int = DEFAULT_KEY_BITS,
                     key: Optional[Bits] = None) -> Publication:
    return Publication(origin, payload, key if key is not None else pub_hash(origin, payload, m))


@dataclass(slots=True)
class TrieNode:
    label: Bits
    digest: bytes
    pub: Optional[Publication] = None            # set iff leaf
    children: Optional[tuple] = None             # (zero-child, one-child) iff inner

    @property
    def is_leaf(self) -> bool:
        return self.pub is not None


class PatriciaTrie:
    """Canonical compressed trie over equal-length keys with node hashes."""

    def __init__(self) -> None:
        self.root: Optional[TrieNode] = None
        self._by_label: dict[Bits, TrieNode] = {}
        self._keys: set[Bits] = set()

    def __len__(self) -> int:
        return len(self._keys)

    def key_set(self) -> frozenset[Bits]:
        return frozenset(self._keys)

    def key_list(self) -> list[Bits]:
        return sorted(self._keys)

    def root_hash(self) -> Optional[bytes]:
        return self.root.digest if self.root else None

    def root_summary(self) -> Optional[TrieSummary]:
        return TrieSummary(self.root.label, self.root.digest) if self.root else None

    def search_node(self, label: Bits) -> Optional[TrieNode]:
        return self._by_label.get(label)

    def has(self, pub: Publication) -> bool:
        node = self._by_label.get(pub.key)
        return node is not None and node.pub == pub

    def publications(self) -> Iterator[Publication]:
        for key in sorted(self._keys):
            yield self._by_label[key].pub

    def insert(self, pub: Publication) -> bool:
        """Store a publication; returns False if it was already present."""
        leaf = TrieNode(pub.key, _digest(bits_bytes(pub.key)), pub=pub)
        if self.root is None:
            self.root = leaf
            self._register(leaf)
            return True
        path: list[TrieNode] = []
        node = self.root
        while True:
            if node.label == pub.key:
                if node.pub == pub:
                    return False
                raise KeyCollisionError(f"key {pub.key!r} already bound to a different publication")
            if node.children is not None and is_prefix(node.label, pub.key):
                path.append(node)
                node = node.children[bit_at(pub.key, node.label.nbits)]
                continue
            # diverges here: split `node` into (lcp -> node, leaf)
            lcp = _common_prefix(node.label, pub.key)
            if lcp == node.label:
                # a leaf whose full key prefixes the new key: unequal widths
                raise KeyCollisionError(f"key {pub.key!r} extends stored key {node.label!r}")
            kids = (node, leaf) if bit_at(node.label, lcp.nbits) == 0 else (leaf, node)
            inner = TrieNode(lcp, _inner_digest(kids), children=kids)
            if path:
                parent = path[-1]
                side = bit_at(lcp, parent.label.nbits)
                pair = list(parent.children)
                pair[side] = inner
                parent.children = tuple(pair)
            else:
                self.root = inner
            self._register(leaf)
            self._by_label[inner.label] = inner
            for p in reversed(path):
                p.digest = _inner_digest(p.children)
            return True

    def _register(self, leaf: TrieNode) -> None:
        self._by_label[leaf.label] = leaf
        self._keys.add(leaf.label)

    def min_extension(self, label: Bits) -> Optional[TrieNode]:
        """Shallowest node whose label strictly extends ``label``, if any."""
        node = self.root
        while node is not None:
            if node.label.nbits > label.nbits:
                return node if is_prefix(label, node.label) else None
            if node.label.nbits == label.nbits or not is_prefix(node.label, label):
                return None
            if node.children is None:
                return None
            node = node.children[bit_at(label, node.label.nbits)]
        return None

    def collect_prefix(self, prefix: Bits) -> list[Publication]:
        """All stored publications whose key starts with ``prefix``, key order."""
        node = self.root
        while node is not None and node.label.nbits < prefix.nbits:
            if not is_prefix(node.label, prefix) or node.children is None:
                return []
            node = node.children[bit_at(prefix, node.label.nbits)]
        if node is None or not is_prefix(prefix, node.label):
            return []
        out = []
        stack = [node]
        while stack:
            cur = stack.pop()
            if cur.pub is not None:
                out.append(cur.pub)
            else:
                stack.extend(reversed(cur.children))
        return sorted(out, key=lambda p: p.key)


def _common_prefix(a: Bits, b: Bits) -> Bits:
    n = min(a.nbits, b.nbits)
    av = a.value >> (a.nbits - n)
    bv = b.value >> (b.nbits - n)
    x = av ^ bv
    keep = n if x == 0 else n - x.bit_length()
    return Bits(keep, av >> (n - keep))


def _inner_digest(children: tuple) -> bytes:
    return _digest(children[0].digest + children[1].digest)


# --- reconciliation case analysis -------------------------------------------

CHECK = "check"
CHECK_AND_PUBLISH = "check_and_publish"


def trie_check_responses(trie: PatriciaTrie, summaries) -> list[tuple]:
    """Replies owed to a peer that sent these subtree summaries.

    For each (label, hash): a matching local hash means the subtrees are
    equal and needs no answer; a mismatched inner node descends by
    returning both child summaries; an unknown label means the peer holds
    publications we lack, so we ask it to keep checking our nearest
    extension (if any) and to deliver everything under the prefix we can
    prove missing here.
    """
    out: list[tuple] = []
    for summ in summaries:
        node = trie.search_node(summ.label)
        if node is not None:
            if node.digest == summ.digest:
                continue
            if node.children is not None:
                kids = tuple(TrieSummary(c.label, c.digest) for c in node.children)
                out.append((CHECK, kids))
            else:
                # leaf with a diverging hash: only a garbled summary can do
                # this; answer with our leaf and swap everything under it
                out.append((CHECK_AND_PUBLISH, (TrieSummary(node.label, node.digest),), node.label))
        else:
            ext = trie.min_extension(summ.label)
            if ext is not None:
                flipped = concat_bit(summ.label, 1 - bit_at(ext.label, summ.label.nbits))
                out.append((CHECK_AND_PUBLISH, (TrieSummary(ext.label, ext.digest),), flipped))
            else:
                out.append((CHECK_AND_PUBLISH, (), summ.label))
    return out


def phi(keys_u: frozenset, keys_v: frozenset) -> int:
    """How many of u's publications are missing at v."""
    return len(keys_u - keys_v)


# --- message handlers (operate on a subscriber's per-topic instance) ----------

def publish_timeout(inst, send) -> None:
    """Offer the root summary to one random direct ring neighbor.

    An empty store stays quiet; such a node still catches up because its
    neighbors' offers land in the missing-subtree case below.
    """
    if len(inst.trie) == 0:
        return
    targets = [r.node for r in (inst.left, inst.right, inst.ring) if r is not None]
    if not targets:
        return
    dst = targets[inst.rng.randrange(len(targets))]
    send(dst, CheckTrie(inst.topic, inst.node, (inst.trie.root_summary(),)))


def on_check_trie(inst, send, sender: int, summaries) -> None:
    for action in trie_check_responses(inst.trie, summaries):
        if action[0] == CHECK:
            send(sender, CheckTrie(inst.topic, inst.node, action[1]))
        else:
            send(sender, CheckAndPublish(inst.topic, inst.node, action[1], action[2]))


def on_check_and_publish(inst, send, sender: int, summaries, prefix: Bits) -> None:
    on_check_trie(inst, send, sender, summaries)
    pubs = tuple(inst.trie.collect_prefix(prefix))
    send(sender, PublishSet(inst.topic, pubs))


def on_publish_set(inst, pubs) -> None:
    for pub in pubs:
        if not inst.trie.has(pub):
            inst.trie.insert(pub)


def on_publish_new(inst, send, pub: Publication) -> bool:
    """Flood a fresh publication; returns True when it was new here."""
    if inst.trie.has(pub):
        return False
    inst.trie.insert(pub)
    flood(inst, send, pub)
    return True


def flood(inst, send, pub: Publication) -> None:
    """Forward to every populated slot, one copy per stored reference."""
    for ref in (inst.left, inst.right, inst.ring):
        if ref is not None:
            send(ref.node, PublishNew(inst.topic, pub))
    for slot in inst.shortcut_slots():
        if slot.node is not None:
            send(slot.node, PublishNew(inst.topic, pub))
