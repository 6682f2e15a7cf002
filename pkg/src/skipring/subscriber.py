"""Subscriber state machine: sorted-ring repair and shortcut upkeep.

Each subscriber keeps, per topic: its supervisor-assigned label, its
closest smaller (``left``) and larger (``right``) ranked neighbors, a
``ring`` slot that closes the circle at the globally smallest and
largest ranks, and two shortcut ladders (one per side) spanning the
coarser ring levels.  All slots hold (label, node) pairs where the label
is the holder's possibly-stale belief.

Repair works by relentless introduction: every timeout re-announces this
node to its neighbors together with the label it believes they have, so
stale labels get corrected, far references get delegated toward their
rank position, and a node stripped of its label answers everything with
a request to be forgotten.

Rank ties between distinct nodes (possible only in corrupted states) are
broken by node id so that every side decision is total and deterministic.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Optional

from .labels import Label, rank_key, shortcut_labels
from .messages import (
    CYC,
    Check,
    GetConfiguration,
    Introduce,
    IntroduceShortcut,
    LIN,
    LabeledRef,
    Linearize,
    RemoveConnections,
    SetData,
    Subscribe,
)
from .pubsub import PatriciaTrie

SUPERVISOR = -1


@dataclass(slots=True)
class ShortcutSlot:
    """One rung of a shortcut ladder: locally derived label, learned node id."""

    label: Label
    node: Optional[int] = None

    def ref(self) -> Optional[LabeledRef]:
        return LabeledRef(self.label, self.node) if self.node is not None else None


@dataclass
class RingInstance:
    """Per-(node, topic) protocol state; one message or timeout at a time."""

    node: int
    topic: int
    rng: random.Random = field(default_factory=lambda: random.Random(0), repr=False)
    label: Optional[Label] = None
    left: Optional[LabeledRef] = None
    right: Optional[LabeledRef] = None
    ring: Optional[LabeledRef] = None
    sc_left: list[ShortcutSlot] = field(default_factory=list)
    sc_right: list[ShortcutSlot] = field(default_factory=list)
    trie: PatriciaTrie = field(default_factory=PatriciaTrie)
    leave_pending: bool = False
    departed: bool = False

    # -- ordering helpers ---------------------------------------------------

    def _okey(self) -> tuple[int, int]:
        return (rank_key(self.label), self.node)

    def _self_ref(self) -> LabeledRef:
        return LabeledRef(self.label, self.node)

    def _is_left(self, ref: LabeledRef) -> bool:
        return (rank_key(ref.label), ref.node) < self._okey()

    def _side(self, ref: LabeledRef) -> str:
        return "left" if self._is_left(ref) else "right"

    def _dist(self, label: Label) -> int:
        return abs(rank_key(label) - rank_key(self.label))

    def slot_refs(self) -> list[LabeledRef]:
        return [r for r in (self.left, self.right, self.ring) if r is not None]

    def shortcut_slots(self) -> list[ShortcutSlot]:
        return self.sc_left + self.sc_right

    def degree(self) -> int:
        return len(self.slot_refs()) + sum(1 for s in self.shortcut_slots() if s.node is not None)

    # -- periodic maintenance -------------------------------------------------

    def timeout(self, send) -> None:
        self.ring_timeout(send)
        self.reconcile_shortcuts(send)
        if self.leave_pending:
            pass  # awaiting leave permission; stop courting the supervisor
        elif self.label is None:
            send(SUPERVISOR, Subscribe(self.topic, self.node))
        elif self.thinks_minimal():
            if self.rng.random() < 0.5:
                send(SUPERVISOR, GetConfiguration(self.topic, self.node))
        else:
            k = self.label.length
            if self.rng.random() < 1.0 / ((1 << k) * k * k):
                send(SUPERVISOR, GetConfiguration(self.topic, self.node))
        self.introduce_shortcut_pair(send)

    def thinks_minimal(self) -> bool:
        """No populated direct ring slot holds a strictly smaller rank."""
        if self.label is None:
            return False
        own = rank_key(self.label)
        return all(rank_key(r.label) >= own for r in self.slot_refs())

    def ring_timeout(self, send) -> None:
        if self.ring is not None and self.ring.node == self.node:
            self.ring = None
        if self.ring is None:
            if self.label is not None:
                if self.left is None and self.right is not None:
                    send(self.right.node, Introduce(self.topic, self._self_ref(), CYC))
                elif self.right is None and self.left is not None:
                    send(self.left.node, Introduce(self.topic, self._self_ref(), CYC))
        elif self.label is None:
            send(self.ring.node, RemoveConnections(self.topic, self.node))
            self.ring = None
        else:
            own = self._okey()
            rk = (rank_key(self.ring.label), self.ring.node)
            if rk > own and self.left is not None:
                send(self.left.node, Introduce(self.topic, self.ring, CYC))
                self.ring = None
            elif rk < own and self.right is not None:
                send(self.right.node, Introduce(self.topic, self.ring, CYC))
                self.ring = None
            if self.ring is not None and (
                (self.left is None and rk > own) or (self.right is None and rk < own)
            ):
                send(self.ring.node, Check(self.topic, self._self_ref(), self.ring.label, CYC))
        self.list_timeout(send)

    def list_timeout(self, send) -> None:
        if self.label is None:
            return
        for attr in ("left", "right"):
            slot: Optional[LabeledRef] = getattr(self, attr)
            if slot is None:
                continue
            if slot.node == self.node:
                setattr(self, attr, None)
                continue
            if self._side(slot) == attr:
                send(slot.node, Check(self.topic, self._self_ref(), slot.label, LIN))
            else:
                setattr(self, attr, None)
                self.on_linearize(send, slot)

    # -- ring message handlers --------------------------------------------------

    def on_check(self, send, sender: LabeledRef, claimed: Label, flag: int) -> None:
        if self.label is None:
            send(sender.node, RemoveConnections(self.topic, self.node))
        elif self.label != claimed:
            send(sender.node, Introduce(self.topic, self._self_ref(), flag))
        else:
            self.on_introduce(send, sender, flag)

    def on_introduce(self, send, ref: LabeledRef, flag: int) -> None:
        if self.label is None:
            send(ref.node, RemoveConnections(self.topic, self.node))
            return
        if ref.node == self.node:
            return
        if self.ring is not None and self.ring.node == ref.node and self.ring.label != ref.label:
            if self._side(ref) == self._side(self.ring):
                self.ring = ref
            else:
                self.ring = None  # corrected label switched sides; re-place below
        if flag != CYC:
            self.on_linearize(send, ref)
            return
        own = self._okey()
        rk = (rank_key(ref.label), ref.node)
        if self.ring is None:
            if rk < own:
                if self.right is None:
                    self.ring = ref
                else:
                    send(self.right.node, Introduce(self.topic, ref, CYC))
            else:
                if self.left is None:
                    self.ring = ref
                else:
                    send(self.left.node, Introduce(self.topic, ref, CYC))
        elif self.ring == ref:
            pass  # already the stored wrap partner
        elif self._side(ref) == self._side(self.ring):
            # two wrap candidates for the same side: the farther rank wins
            if self._dist(ref.label) > self._dist(self.ring.label):
                loser, self.ring = self.ring, ref
            else:
                loser = ref
            self.on_linearize(send, loser)
        else:
            old, self.ring = self.ring, None
            self.on_linearize(send, ref)
            self.on_linearize(send, old)

    def on_linearize(self, send, ref: LabeledRef) -> None:
        if self.label is None:
            send(ref.node, RemoveConnections(self.topic, self.node))
            return
        if ref.node == self.node:
            return
        for attr in ("left", "right"):
            slot: Optional[LabeledRef] = getattr(self, attr)
            if slot is not None and slot.node == ref.node:
                if slot.label == ref.label:
                    return  # stored exactly; nothing to repair
                if self._side(ref) == attr:
                    setattr(self, attr, ref)  # adopt the corrected label in place
                else:
                    setattr(self, attr, None)
                    self.on_linearize(send, ref)  # re-place on its new side
                return
        attr = self._side(ref)
        slot = getattr(self, attr)
        if slot is None:
            setattr(self, attr, ref)
            return
        key, skey, own = (rank_key(ref.label), ref.node), (rank_key(slot.label), slot.node), self._okey()
        closer = (skey < key) if attr == "left" else (key < skey)
        if closer:
            # ref sits between the current neighbor and us: swap, delegate the old
            setattr(self, attr, ref)
            send(ref.node, Linearize(self.topic, slot))
        else:
            send(slot.node, Linearize(self.topic, ref))

    def on_remove_connections(self, send, node: int) -> None:
        for attr in ("left", "right", "ring"):
            slot: Optional[LabeledRef] = getattr(self, attr)
            if slot is not None and slot.node == node:
                setattr(self, attr, None)
        for sc in self.shortcut_slots():
            if sc.node == node:
                sc.node = None

    # -- configurations ----------------------------------------------------------

    def on_set_data(self, send, pred: Optional[LabeledRef], label: Optional[Label],
                    succ: Optional[LabeledRef]) -> None:
        if label is None:
            self.shed_connections(send)
            if self.leave_pending:
                self.departed = True
            return
        self.label = label
        own = self._okey()

        def placed(ref: Optional[LabeledRef]) -> Optional[LabeledRef]:
            if ref is None or ref.node == self.node:
                return None
            return ref

        pred, succ = placed(pred), placed(succ)
        new_left = pred if pred is not None and (rank_key(pred.label), pred.node) < own else None
        new_right = succ if succ is not None and (rank_key(succ.label), succ.node) > own else None
        if pred is not None and (rank_key(pred.label), pred.node) > own:
            new_ring = pred
        elif succ is not None and (rank_key(succ.label), succ.node) < own:
            new_ring = succ
        else:
            new_ring = None
        # a neighbor we hold that beats its replacement is unknown or stale at
        # the supervisor: ask for its configuration on its behalf
        for slot, proposal in ((self.left, new_left), (self.right, new_right),
                               (self.ring, new_ring)):
            if slot is None:
                continue
            if proposal is None or self._dist(slot.label) < self._dist(proposal.label):
                send(SUPERVISOR, GetConfiguration(self.topic, slot.node))
        for attr, new in (("left", new_left), ("right", new_right), ("ring", new_ring)):
            old: Optional[LabeledRef] = getattr(self, attr)
            setattr(self, attr, new)
            if old is not None and (new is None or old != new):
                # probe the displaced holder: a live one reintroduces itself,
                # a crashed one absorbs the reference for good
                send(old.node, Check(self.topic, self._self_ref(), old.label, LIN))
        leftovers = [r for r in (pred, succ) if r is not None
                     and r not in (self.left, self.right, self.ring)]
        for ref in leftovers:
            self.on_linearize(send, ref)

    def shed_connections(self, send) -> None:
        refs = {r.node for r in self.slot_refs()}
        refs.update(s.node for s in self.shortcut_slots() if s.node is not None)
        self.label = None
        self.left = self.right = self.ring = None
        self.sc_left = []
        self.sc_right = []
        for node in sorted(refs):
            if node != self.node:
                send(node, RemoveConnections(self.topic, self.node))

    # -- shortcuts ---------------------------------------------------------------

    def effective_neighbors(self) -> tuple[Optional[LabeledRef], Optional[LabeledRef]]:
        """left/right with the wrap partner standing in for the missing side."""
        left, right = self.left, self.right
        if self.label is None or self.ring is None or (left is None and right is None):
            return left, right
        if left is None and not self._is_left(self.ring):
            left = self.ring  # we are the minimum; the wrap partner is our predecessor
        elif right is None and self._is_left(self.ring):
            right = self.ring
        return left, right

    def reconcile_shortcuts(self, send) -> None:
        if self.label is None:
            return
        eff_left, eff_right = self.effective_neighbors()
        known: dict[Label, int] = {}
        extras: list[LabeledRef] = []
        for s in self.shortcut_slots():
            if s.node is None:
                continue
            if s.label in known and known[s.label] != s.node:
                extras.append(LabeledRef(s.label, s.node))
            else:
                known[s.label] = s.node

        def rebuild(neighbor: Optional[LabeledRef]) -> list[ShortcutSlot]:
            if neighbor is None:
                return []
            return [ShortcutSlot(lab, known.get(lab)) for lab in
                    shortcut_labels(self.label, neighbor.label)]

        new_left, new_right = rebuild(eff_left), rebuild(eff_right)
        keep = {s.label for s in new_left} | {s.label for s in new_right}
        extras.extend(LabeledRef(lab, node) for lab, node in sorted(known.items())
                      if lab not in keep)
        self.sc_left, self.sc_right = new_left, new_right
        for ref in extras:  # hand obsolete ids back to the ring instead of dropping them
            if ref.node != self.node:
                self.on_linearize(send, ref)

    def introduce_shortcut_pair(self, send) -> None:
        """Introduce this node's two same-level neighbors to each other.

        The pair lives at the bottom of the shortcut ladders; a node whose
        label sits on the finest ring level has no ladder and uses its two
        direct ring neighbors instead.
        """
        if self.label is None:
            return
        if self.sc_left and self.sc_right:
            a, b = self.sc_left[-1].ref(), self.sc_right[-1].ref()
        elif not self.sc_left and not self.sc_right:
            a, b = self.effective_neighbors()
        else:
            return
        if a is None or b is None:
            return
        if a.node != b.node:
            send(a.node, IntroduceShortcut(self.topic, b.label, b.node))
            send(b.node, IntroduceShortcut(self.topic, a.label, a.node))

    def on_introduce_shortcut(self, send, label: Label, node: int) -> None:
        if self.label is None:
            send(node, RemoveConnections(self.topic, self.node))
            return
        matched = [s for s in self.shortcut_slots() if s.label == label]
        if not matched:
            self.on_linearize(send, LabeledRef(label, node))
            return
        displaced = {s.node for s in matched if s.node is not None and s.node != node}
        for slot in matched:
            slot.node = node
        for old in sorted(displaced):
            if old != self.node:
                self.on_linearize(send, LabeledRef(label, old))
