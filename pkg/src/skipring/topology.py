"""Target topology and the global legitimacy oracle.

``target_skip_ring(n)`` spells out, for every index 0..n-1, exactly which
references that subscriber holds in a converged system: the sorted-ring
slots (left / right, with the wrap edge between the extreme ranks kept in
``ring``) and the two shortcut ladders.  It is built by brute force —
sort every level set and read off the neighbors — precisely so tests can
hold the arithmetic shortcut derivation against it.

Level sets: K_i is every node whose label has at most i bits; for each
level i below the finest one, the members of K_i form their own sorted
bidirectional ring, and those are the shortcut edges (an edge's level is
the longer endpoint label).  Ladder slots are counted per stored
reference, so a node may hold two slots for the same partner (the
two-node level-1 ring), which is what makes the edge count land on
4n - 4 at powers of two.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Optional

from .labels import Label, label_of, rank, rank_key


@dataclass(frozen=True)
class NodeTarget:
    index: int
    label: Label
    left: Optional[int]
    right: Optional[int]
    ring: Optional[int]
    sc_left: tuple[Label, ...]   # coarse-to-fine ladder, one rung per level
    sc_right: tuple[Label, ...]

    def slot_count(self) -> int:
        refs = sum(1 for x in (self.left, self.right, self.ring) if x is not None)
        return refs + len(self.sc_left) + len(self.sc_right)


@dataclass(frozen=True)
class TargetTopology:
    n: int
    nodes: tuple[NodeTarget, ...]
    ring_edges: frozenset            # directed (index, index)
    shortcut_edges: frozenset        # directed (index, index, level)

    def node(self, index: int) -> NodeTarget:
        return self.nodes[index]

    def total_directed_edges(self) -> int:
        return sum(t.slot_count() for t in self.nodes)

    def edge_pairs(self) -> frozenset:
        """Every directed reference as an (index, index) pair, deduplicated."""
        out = set()
        for t in self.nodes:
            for x in (t.left, t.right, t.ring):
                if x is not None:
                    out.add((t.index, x))
            for lab in t.sc_left + t.sc_right:
                out.add((t.index, _holder(lab)))
        return frozenset(out)


def _holder(label: Label) -> int:
    from .labels import index_of

    return index_of(label)


@lru_cache(maxsize=None)
def target_skip_ring(n: int) -> TargetTopology:
    if n < 1:
        raise ValueError("need at least one node")
    labels = [label_of(i) for i in range(n)]
    order = sorted(range(n), key=lambda i: rank_key(labels[i]))
    pos = {idx: p for p, idx in enumerate(order)}

    ring_edges = set()
    left: dict[int, Optional[int]] = {}
    right: dict[int, Optional[int]] = {}
    wrap: dict[int, Optional[int]] = {}
    for idx in range(n):
        left[idx] = right[idx] = wrap[idx] = None
    if n >= 2:
        for p, idx in enumerate(order):
            pred = order[p - 1]
            succ = order[(p + 1) % n]
            ring_edges.add((idx, pred))
            ring_edges.add((idx, succ))
            if p == 0:
                wrap[idx], right[idx] = pred, succ
            elif p == n - 1:
                left[idx], wrap[idx] = pred, succ
            else:
                left[idx], right[idx] = pred, succ

    top = max(labels[i].length for i in range(n))
    level_pred: dict[int, dict[int, int]] = {}
    level_succ: dict[int, dict[int, int]] = {}
    shortcut_edges = set()
    for lvl in range(1, top):
        members = sorted((i for i in range(n) if labels[i].length <= lvl),
                         key=lambda i: rank_key(labels[i]))
        if len(members) < 2:
            continue
        level_pred[lvl] = {}
        level_succ[lvl] = {}
        m = len(members)
        for p, idx in enumerate(members):
            pred, succ = members[p - 1], members[(p + 1) % m]
            level_pred[lvl][idx] = pred
            level_succ[lvl][idx] = succ
            shortcut_edges.add((idx, pred, lvl))
            shortcut_edges.add((idx, succ, lvl))

    nodes = []
    for idx in range(n):
        k = labels[idx].length
        eff_left = left[idx] if left[idx] is not None else (
            wrap[idx] if wrap[idx] is not None and pos[wrap[idx]] > pos[idx] else None)
        eff_right = right[idx] if right[idx] is not None else (
            wrap[idx] if wrap[idx] is not None and pos[wrap[idx]] < pos[idx] else None)

        def ladder(neighbor: Optional[int], table) -> tuple[Label, ...]:
            if neighbor is None:
                return ()
            rungs = []
            for lvl in range(labels[neighbor].length - 1, k - 1, -1):
                rungs.append(labels[table[lvl][idx]])
            return tuple(rungs)

        nodes.append(NodeTarget(
            index=idx,
            label=labels[idx],
            left=left[idx],
            right=right[idx],
            ring=wrap[idx],
            sc_left=ladder(eff_left, level_pred),
            sc_right=ladder(eff_right, level_succ),
        ))
    return TargetTopology(n, tuple(nodes), frozenset(ring_edges), frozenset(shortcut_edges))


# --- oracle over a paused world ------------------------------------------------

def live_instances(world, topic: int) -> dict[int, object]:
    """node id -> instance, for live nodes actively running this topic."""
    out = {}
    for node_id, actor in world.nodes.items():
        if node_id in world.crashed:
            continue
        inst = actor.topics.get(topic)
        if inst is not None and not inst.departed:
            out[node_id] = inst
    return out


def db_status(world, topic: int):
    db = world.supervisor.dbs.get(topic)
    if db is None or db.is_corrupted():
        return None
    return db


def topology_matches(world, topic: int) -> bool:
    """Database healthy, labels agreed, every slot equal to the target's."""
    db = db_status(world, topic)
    if db is None:
        return False
    insts = live_instances(world, topic)
    n = db.size()
    if len(insts) != n or n == 0:
        return False
    by_label = {lab: node for lab, node in db.entries.items()}
    if set(by_label.values()) != set(insts):
        return False
    target = target_skip_ring(n)
    node_of = {t.index: by_label[t.label] for t in target.nodes if t.label in by_label}
    if len(node_of) != n:
        return False

    def ref_of(index: Optional[int]):
        if index is None:
            return None
        t = target.node(index)
        return (t.label, node_of[index])

    label_to_index = {target.node(i).label: i for i in range(n)}
    for t in target.nodes:
        inst = insts[node_of[t.index]]
        if inst.label != t.label:
            return False
        for attr, want in (("left", t.left), ("right", t.right), ("ring", t.ring)):
            got = getattr(inst, attr)
            got = (got.label, got.node) if got is not None else None
            if got != ref_of(want):
                return False
        for chain, want_chain in ((inst.sc_left, t.sc_left), (inst.sc_right, t.sc_right)):
            if len(chain) != len(want_chain):
                return False
            for slot, lab in zip(chain, want_chain):
                if slot.label != lab or slot.node != node_of[label_to_index[lab]]:
                    return False
    return True


def protocol_snapshot(world, topic: int):
    """Canonical protocol-visible state, used to detect drift under drain."""
    insts = live_instances(world, topic)
    rows = []
    for node_id in sorted(insts):
        inst = insts[node_id]
        rows.append((
            node_id,
            inst.label,
            inst.left, inst.right, inst.ring,
            tuple((s.label, s.node) for s in inst.sc_left),
            tuple((s.label, s.node) for s in inst.sc_right),
            inst.trie.key_set(),
        ))
    db = world.supervisor.dbs.get(topic)
    entries = tuple(sorted(db.entries.items())) if db else ()
    return (tuple(rows), entries)


def is_legitimate(world, topic: int) -> bool:
    """True iff the world sits exactly on the target and cannot drift.

    Structural checks first; then every pending message is delivered
    against a throwaway copy, and the copy must come out quiescent and
    bit-identical in all protocol variables.
    """
    if not topology_matches(world, topic):
        return False
    if world.pending_count() == 0:
        return True
    probe = world.clone()
    before = protocol_snapshot(probe, topic)
    if not probe.drain_messages():
        return False
    return protocol_snapshot(probe, topic) == before


def degree_stats(world, topic: int) -> tuple[int, Fraction]:
    insts = live_instances(world, topic)
    if not insts:
        return 0, Fraction(0)
    degrees = [inst.degree() for inst in insts.values()]
    return max(degrees), Fraction(sum(degrees), len(degrees))


def rank_fraction(label: Label) -> Fraction:
    r = rank(label)
    return Fraction(r.num, 1 << r.exp)
