"""Supervisor: label database upkeep, repair, and configuration hand-out.

The supervisor owns one label table per topic, mapping labels to node
ids.  A healthy table is exactly {label_of(0) .. label_of(n-1)}, each
bound to a distinct live node.  Repair is entirely local: entries with
no node are dropped, duplicate bindings of one node keep only the
lowest-index label, and holes in the index sequence are filled by
relabeling the entry with the highest index down into the gap.  Nobody
is told about a relabel directly — the periodic round-robin
configuration push carries the news.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .labels import Label, index_of, is_assignable, label_of, rank_key
from .messages import (
    CrashReport,
    GetConfiguration,
    LabeledRef,
    SetData,
    Subscribe,
    Unsubscribe,
)


@dataclass
class TopicDb:
    """Ordered label table plus the round-robin cursor for one topic."""

    entries: dict[Label, Optional[int]] = field(default_factory=dict)
    next: int = 0

    def size(self) -> int:
        return len(self.entries)

    def sorted_items(self) -> list[tuple[Label, Optional[int]]]:
        return sorted(self.entries.items(), key=lambda kv: (rank_key(kv[0]), kv[0].length))

    def labels_of(self, node: int) -> list[Label]:
        return [lab for lab, v in self.entries.items() if v == node]

    def find_node(self, node: int) -> Optional[Label]:
        for lab, v in self.entries.items():
            if v == node:
                return lab
        return None

    def is_corrupted(self) -> bool:
        """Any of: empty bindings, double bindings, index holes, stray indexes."""
        nodes = [v for v in self.entries.values()]
        if any(v is None for v in nodes):
            return True
        if len(set(nodes)) != len(nodes):
            return True
        want = {label_of(i) for i in range(len(self.entries))}
        return set(self.entries) != want

    def neighbors(self, label: Label) -> tuple[Optional[LabeledRef], Optional[LabeledRef]]:
        """Rank-cyclic predecessor and successor refs of ``label`` in the table."""
        items = self.sorted_items()
        if len(items) <= 1:
            return None, None
        idx = next(i for i, (lab, _) in enumerate(items) if lab == label)
        pl, pv = items[idx - 1]
        sl, sv = items[(idx + 1) % len(items)]
        pred = LabeledRef(pl, pv) if pv is not None else None
        succ = LabeledRef(sl, sv) if sv is not None else None
        return pred, succ


class Supervisor:
    """One message or timeout processed atomically; one TopicDb per topic."""

    def __init__(self) -> None:
        self.dbs: dict[int, TopicDb] = {}

    def db(self, topic: int) -> TopicDb:
        if topic not in self.dbs:
            self.dbs[topic] = TopicDb()
        return self.dbs[topic]

    # -- periodic ------------------------------------------------------------

    def timeout(self, send) -> None:
        for topic in sorted(self.dbs):
            self.topic_timeout(topic, send)

    def topic_timeout(self, topic: int, send) -> None:
        db = self.db(topic)
        self.check_labels(db)
        n = db.size()
        if n == 0:
            return
        db.next = (db.next + 1) % n
        target = db.entries.get(label_of(db.next))
        if target is not None:
            self.get_configuration(topic, target, send)

    # -- message handlers ----------------------------------------------------

    def handle(self, msg, send) -> None:
        if isinstance(msg, Subscribe):
            self.subscribe(msg.topic, msg.node, send)
        elif isinstance(msg, Unsubscribe):
            self.unsubscribe(msg.topic, msg.node, send)
        elif isinstance(msg, GetConfiguration):
            self.get_configuration(msg.topic, msg.node, send)
        elif isinstance(msg, CrashReport):
            self.crashed(msg.node)

    def subscribe(self, topic: int, node: int, send) -> None:
        db = self.db(topic)
        if db.find_node(node) is not None:
            self.get_configuration(topic, node, send)
            return
        lab = label_of(db.size())
        db.entries[lab] = node
        pred, succ = db.neighbors(lab)
        send(node, SetData(topic, pred, lab, succ))

    def unsubscribe(self, topic: int, node: int, send) -> None:
        db = self.db(topic)
        self.check_multiple_copies(db, node)
        lab = db.find_node(node)
        if lab is not None:
            n = db.size()
            top = label_of(n - 1)
            idx = index_of(lab) if is_assignable(lab) else None
            if n > 1 and idx != n - 1 and top in db.entries:
                mover = db.entries.pop(top)
                db.entries[lab] = mover
                pred, succ = db.neighbors(lab)
                if mover is not None:
                    send(mover, SetData(topic, pred, lab, succ))
            else:
                del db.entries[lab]
        send(node, SetData(topic, None, None, None))

    def get_configuration(self, topic: int, node: int, send) -> None:
        db = self.db(topic)
        self.check_multiple_copies(db, node)
        lab = db.find_node(node)
        if lab is None:
            # unknown requester: integrate it, then answer with the fresh slot
            self.subscribe(topic, node, send)
            return
        pred, succ = db.neighbors(lab)
        send(node, SetData(topic, pred, lab, succ))

    def crashed(self, node: int) -> None:
        # no relabel here; the periodic label check compacts the index space
        for db in self.dbs.values():
            for lab in db.labels_of(node):
                del db.entries[lab]

    # -- local repair ---------------------------------------------------------

    @staticmethod
    def check_multiple_copies(db: TopicDb, node: int) -> None:
        """Keep only the lowest-index binding of ``node``; drop the rest."""
        bound = db.labels_of(node)
        if len(bound) <= 1:
            return
        bound.sort(key=lambda lab: (0, index_of(lab)) if is_assignable(lab)
                   else (1, rank_key(lab), lab.length))
        for lab in bound[1:]:
            del db.entries[lab]

    @staticmethod
    def check_labels(db: TopicDb) -> None:
        """Drop dead entries, then pull top-index entries down into holes."""
        for lab in [lab for lab, v in db.entries.items() if v is None]:
            del db.entries[lab]
        for lab in [lab for lab in db.entries if not is_assignable(lab)]:
            del db.entries[lab]  # unindexable label: no repair rule can place it
        n = db.size()
        present = {index_of(lab): lab for lab in db.entries}
        for i in range(n):
            if i in present:
                continue
            j = max(present)
            lab_j = present.pop(j)
            node = db.entries.pop(lab_j)
            lab_i = label_of(i)
            db.entries[lab_i] = node
            present[i] = lab_i
