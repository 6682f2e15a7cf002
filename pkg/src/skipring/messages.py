"""Protocol wire format.

Every message names the topic it belongs to and carries only node ids,
labels, trie summaries and publications — state machines compare, store
and forward these values but never fabricate node ids.  ``LabeledRef`` is
the unit stored in neighbor variables: the referenced node plus the label
the holder believes that node has (the belief can be stale).
"""

from __future__ import annotations

from typing import NamedTuple, Optional, Tuple

from .labels import Label

LIN = 0  # list maintenance introduction
CYC = 1  # wrap-edge (min/max closing) introduction


class LabeledRef(NamedTuple):
    label: Label
    node: int

    def __repr__(self) -> str:
        return f"({self.label!r},n{self.node})"


class Bits(NamedTuple):
    """Fixed-width bit string used for publication keys and trie labels."""

    nbits: int
    value: int

    def __repr__(self) -> str:
        return "b:" + (format(self.value, f"0{self.nbits}b") if self.nbits else "''")


class Publication(NamedTuple):
    origin: int
    payload: bytes
    key: Bits


class TrieSummary(NamedTuple):
    """What travels in trie-reconciliation messages: label + hash, no edges."""

    label: Bits
    digest: bytes


# --- ring maintenance ------------------------------------------------------

class Check(NamedTuple):
    """Periodic self-introduction carrying the label we believe the target has."""

    topic: int
    sender: LabeledRef
    claimed: Label
    flag: int


class Introduce(NamedTuple):
    topic: int
    ref: LabeledRef
    flag: int


class Linearize(NamedTuple):
    topic: int
    ref: LabeledRef


class RemoveConnections(NamedTuple):
    """Ask the receiver to erase every reference to ``node``."""

    topic: int
    node: int


# --- supervisor traffic ----------------------------------------------------

class Subscribe(NamedTuple):
    topic: int
    node: int


class Unsubscribe(NamedTuple):
    topic: int
    node: int


class GetConfiguration(NamedTuple):
    """Request the stored configuration for ``node`` (not necessarily the sender)."""

    topic: int
    node: int


class SetData(NamedTuple):
    """A configuration: cyclic predecessor, own label, cyclic successor.

    All three absent means the receiver should give up its position and
    shed its connections.
    """

    topic: int
    pred: Optional[LabeledRef]
    label: Optional[Label]
    succ: Optional[LabeledRef]


class CrashReport(NamedTuple):
    """Failure-detector notice; applies to every topic of the crashed node."""

    node: int


# --- shortcuts -------------------------------------------------------------

class IntroduceShortcut(NamedTuple):
    topic: int
    label: Label
    node: int


# --- publication reconciliation and flooding --------------------------------

class CheckTrie(NamedTuple):
    topic: int
    sender: int
    summaries: Tuple[TrieSummary, ...]


class CheckAndPublish(NamedTuple):
    topic: int
    sender: int
    summaries: Tuple[TrieSummary, ...]
    prefix: Bits


class PublishSet(NamedTuple):
    topic: int
    pubs: Tuple[Publication, ...]


class PublishNew(NamedTuple):
    topic: int
    pub: Publication


MESSAGE_KINDS = {
    Check: "Check",
    Introduce: "Introduce",
    Linearize: "Linearize",
    RemoveConnections: "RemoveConnections",
    Subscribe: "Subscribe",
    Unsubscribe: "Unsubscribe",
    GetConfiguration: "GetConfiguration",
    SetData: "SetData",
    CrashReport: "CrashReport",
    IntroduceShortcut: "IntroduceShortcut",
    CheckTrie: "CheckTrie",
    CheckAndPublish: "CheckAndPublish",
    PublishSet: "Publish",
    PublishNew: "PublishNew",
}

kind_of = MESSAGE_KINDS.__getitem__


def kind_name(msg) -> str:
    return MESSAGE_KINDS[type(msg)]
