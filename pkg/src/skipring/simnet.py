"""Deterministic discrete-event harness for the protocol.

The world advances one event at a time: either one pending message is
delivered to its target's handler, or one live actor fires its periodic
timeout.  Scheduling is driven by a seeded generator under two fairness
rules: a message that has waited ``age_cap`` steps is delivered before
anything younger, and each round consists of one shuffled pass in which
every live actor (supervisor included) times out exactly once, with
deliveries interleaved.  A round is therefore the unit in which "every
subscriber acted once", which is what the request-rate accounting is
measured against.

Channels are unordered and lossless; messages to crashed nodes vanish at
delivery.  Scheduler randomness and per-node protocol randomness come
from independent streams, so perturbing the schedule never shifts a
protocol coin flip.
"""

from __future__ import annotations

import copy
import hashlib
import random
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Optional

from . import pubsub
from .labels import Label, label_of
from .messages import (
    Check,
    CheckAndPublish,
    CheckTrie,
    CrashReport,
    GetConfiguration,
    Introduce,
    IntroduceShortcut,
    Linearize,
    PublishNew,
    PublishSet,
    RemoveConnections,
    SetData,
    Subscribe,
    Unsubscribe,
    kind_name,
)
from .pubsub import make_publication
from .subscriber import SUPERVISOR, RingInstance
from .supervisor import Supervisor


@dataclass
class SimConfig:
    age_cap_factor: int = 4          # overdue threshold = factor * node count
    detect_delay_rounds: int = 2     # crash-to-report latency
    deliver_bias: float = 0.5        # chance to deliver instead of timing out
    key_bits: int = 64
    key_fn: Optional[Callable[[int, bytes], object]] = None


@dataclass(slots=True)
class Envelope:
    seq: int
    src: int
    dst: int
    msg: object
    enq_step: int
    parent: Optional[int] = None
    hops: int = 1
    corrupted_root: Optional[int] = None
    delivered: bool = False
    idx: int = -1  # position inside the in-flight list


class NodeActor:
    """A peer; owns one protocol instance per topic it participates in."""

    def __init__(self, node_id: int):
        self.id = node_id
        self.topics: dict[int, RingInstance] = {}


@dataclass
class RoundMetrics:
    round: int
    sends: dict = field(default_factory=dict)
    to_supervisor: int = 0
    get_configurations: int = 0
    dropped: int = 0
    timeouts: int = 0


def _derive_seed(*parts) -> int:
    raw = hashlib.blake2b(":".join(map(str, parts)).encode(), digest_size=8).digest()
    return int.from_bytes(raw, "big")


class World:
    def __init__(self, seed: int = 0, config: Optional[SimConfig] = None):
        self.seed = seed
        self.config = config or SimConfig()
        self.nodes: dict[int, NodeActor] = {}
        self.supervisor = Supervisor()
        self.crashed: set[int] = set()
        self.round = 0
        self.step_count = 0
        self.sched_rng = random.Random(_derive_seed(seed, "sched"))
        self._in_flight: list[Envelope] = []
        self._fifo: deque[Envelope] = deque()
        self._perm: list[int] = []
        self._seq = 0
        self._current_env: Optional[Envelope] = None
        self._pending_reports: list[tuple[int, int]] = []  # (due_round, node)
        self.metrics: list[RoundMetrics] = []
        self._round_metrics = RoundMetrics(round=0)
        self.send_hook: Optional[Callable] = None
        self.last_delivered: Optional[Envelope] = None

    # -- population -----------------------------------------------------------

    def add_node(self, node_id: int) -> NodeActor:
        if node_id < 0:
            raise ValueError("node ids are non-negative")
        if node_id not in self.nodes:
            self.nodes[node_id] = NodeActor(node_id)
        return self.nodes[node_id]

    def node_rng(self, node_id: int, topic: int) -> random.Random:
        return random.Random(_derive_seed(self.seed, "node", node_id, topic))

    def ensure_instance(self, node_id: int, topic: int) -> RingInstance:
        actor = self.add_node(node_id)
        inst = actor.topics.get(topic)
        if inst is None or inst.departed:
            inst = RingInstance(node=node_id, topic=topic,
                                rng=self.node_rng(node_id, topic))
            actor.topics[topic] = inst
        return inst

    # -- client-facing operations ----------------------------------------------

    def client_subscribe(self, node_id: int, topic: int = 0) -> None:
        """Start (or restart) participation; the instance contacts the
        supervisor from its own timeout."""
        self.ensure_instance(node_id, topic)

    def client_unsubscribe(self, node_id: int, topic: int = 0) -> None:
        actor = self.nodes.get(node_id)
        inst = actor.topics.get(topic) if actor else None
        if inst is None or inst.departed:
            return
        inst.leave_pending = True
        self.send(node_id, SUPERVISOR, Unsubscribe(topic, node_id))

    def client_publish(self, node_id: int, payload: bytes, topic: int = 0):
        """Insert a fresh publication at its origin and flood it."""
        inst = self.nodes[node_id].topics[topic]
        pub = self.make_pub(node_id, payload)
        send = self._sender(node_id)
        pubsub.on_publish_new(inst, send, pub)
        return pub

    def make_pub(self, origin: int, payload: bytes):
        if self.config.key_fn is not None:
            return make_publication(origin, payload, key=self.config.key_fn(origin, payload))
        return make_publication(origin, payload, m=self.config.key_bits)

    def inject_crash(self, node_id: int) -> None:
        if node_id == SUPERVISOR:
            raise ValueError("the supervisor does not fail")
        if node_id not in self.nodes or node_id in self.crashed:
            return
        self.crashed.add(node_id)
        for env in self._in_flight:
            if env.dst == node_id:
                env.delivered = True
        self._in_flight = [e for e in self._in_flight if not e.delivered]
        for i, env in enumerate(self._in_flight):
            env.idx = i
        self._perm = [a for a in self._perm if a != node_id]
        self._pending_reports.append((self.round + self.config.detect_delay_rounds, node_id))

    # -- message plumbing --------------------------------------------------------

    def send(self, src: int, dst: int, msg) -> Envelope:
        self._seq += 1
        parent = self._current_env
        env = Envelope(
            seq=self._seq, src=src, dst=dst, msg=msg, enq_step=self.step_count,
            parent=parent.seq if parent else None,
            hops=parent.hops + 1 if parent else 1,
            corrupted_root=parent.corrupted_root if parent else None,
        )
        env.idx = len(self._in_flight)
        self._in_flight.append(env)
        self._fifo.append(env)
        m = self._round_metrics
        kind = kind_name(msg)
        m.sends[kind] = m.sends.get(kind, 0) + 1
        if dst == SUPERVISOR:
            m.to_supervisor += 1
            if type(msg) is GetConfiguration:
                m.get_configurations += 1
        if self.send_hook is not None:
            self.send_hook(src, dst, msg, env)
        return env

    def inject_message(self, dst: int, msg, corrupted: bool = False) -> Envelope:
        env = self.send(-2, dst, msg)
        if corrupted:
            env.corrupted_root = env.seq
        return env

    def _sender(self, src: int):
        return lambda dst, msg: self.send(src, dst, msg)

    def pending_count(self) -> int:
        return len(self._in_flight)

    def pending_envelopes(self) -> list[Envelope]:
        return list(self._in_flight)

    def _pop_in_flight(self, env: Envelope) -> None:
        last = self._in_flight[-1]
        i = env.idx
        self._in_flight[i] = last
        last.idx = i
        self._in_flight.pop()
        env.delivered = True

    def _deliver(self, env: Envelope) -> None:
        self._pop_in_flight(env)
        self.last_delivered = env
        if env.dst in self.crashed or (env.dst != SUPERVISOR and env.dst not in self.nodes):
            self._round_metrics.dropped += 1
            return
        self._current_env = env
        try:
            if env.dst == SUPERVISOR:
                self.supervisor.handle(env.msg, self._sender(SUPERVISOR))
            else:
                self._dispatch_node(self.nodes[env.dst], env.msg)
        finally:
            self._current_env = None

    def _dispatch_node(self, actor: NodeActor, msg) -> None:
        send = self._sender(actor.id)
        if type(msg) is CrashReport:
            return  # detector traffic is supervisor-only
        topic = msg.topic
        inst = actor.topics.get(topic)
        if inst is None or inst.departed:
            self._stateless_reply(actor.id, topic, msg, send)
            return
        t = type(msg)
        if t is Check:
            inst.on_check(send, msg.sender, msg.claimed, msg.flag)
        elif t is Introduce:
            inst.on_introduce(send, msg.ref, msg.flag)
        elif t is Linearize:
            inst.on_linearize(send, msg.ref)
        elif t is RemoveConnections:
            inst.on_remove_connections(send, msg.node)
        elif t is SetData:
            inst.on_set_data(send, msg.pred, msg.label, msg.succ)
        elif t is IntroduceShortcut:
            inst.on_introduce_shortcut(send, msg.label, msg.node)
        elif t is CheckTrie:
            pubsub.on_check_trie(inst, send, msg.sender, msg.summaries)
        elif t is CheckAndPublish:
            pubsub.on_check_and_publish(inst, send, msg.sender, msg.summaries, msg.prefix)
        elif t is PublishSet:
            pubsub.on_publish_set(inst, msg.pubs)
        elif t is PublishNew:
            pubsub.on_publish_new(inst, send, msg.pub)

    def _stateless_reply(self, node_id: int, topic: int, msg, send) -> None:
        """A node not running the topic wants only to be forgotten."""
        t = type(msg)
        if t is Check:
            send(msg.sender.node, RemoveConnections(topic, node_id))
        elif t in (Introduce, Linearize):
            send(msg.ref.node, RemoveConnections(topic, node_id))
        elif t is IntroduceShortcut:
            send(msg.node, RemoveConnections(topic, node_id))
        elif t is SetData and msg.label is not None:
            send(SUPERVISOR, Unsubscribe(topic, node_id))
        # publication traffic and RemoveConnections need no action

    # -- scheduling ----------------------------------------------------------------

    def live_actor_ids(self) -> list[int]:
        out = [SUPERVISOR]
        for node_id in sorted(self.nodes):
            if node_id in self.crashed:
                continue
            actor = self.nodes[node_id]
            if any(not inst.departed for inst in actor.topics.values()):
                out.append(node_id)
        return out

    def _begin_round(self) -> None:
        if self.round > 0 or self._round_metrics.sends or self._round_metrics.timeouts:
            self.metrics.append(self._round_metrics)
        self.round += 1
        self._round_metrics = RoundMetrics(round=self.round)
        self._perm = self.live_actor_ids()
        self.sched_rng.shuffle(self._perm)
        due = [n for (r, n) in self._pending_reports if r <= self.round]
        if due:
            self._pending_reports = [(r, n) for (r, n) in self._pending_reports
                                     if r > self.round]
            for node in due:
                self.inject_message(SUPERVISOR, CrashReport(node))

    def _oldest_overdue(self) -> Optional[Envelope]:
        cap = self.config.age_cap_factor * max(len(self.nodes), 1)
        while self._fifo and self._fifo[0].delivered:
            self._fifo.popleft()
        if self._fifo and self.step_count - self._fifo[0].enq_step >= cap:
            return self._fifo[0]
        return None

    def _fire_timeout(self, actor_id: int) -> None:
        if actor_id == SUPERVISOR:
            self._round_metrics.timeouts += 1
            self.supervisor.timeout(self._sender(SUPERVISOR))
            return
        if actor_id in self.crashed:
            return
        self._round_metrics.timeouts += 1
        actor = self.nodes[actor_id]
        send = self._sender(actor_id)
        for topic in sorted(actor.topics):
            inst = actor.topics[topic]
            if inst.departed:
                continue
            inst.timeout(send)
            pubsub.publish_timeout(inst, send)

    def step(self) -> None:
        """Deliver one message or fire one timeout; deterministic under seed."""
        self.step_count += 1
        env = self._oldest_overdue()
        if env is not None:
            self._deliver(env)
            return
        if not self._perm:
            self._begin_round()
        can_deliver = bool(self._in_flight)
        if self._perm and (not can_deliver
                           or self.sched_rng.random() >= self.config.deliver_bias):
            self._fire_timeout(self._perm.pop())
            return
        if can_deliver:
            env = self._in_flight[self.sched_rng.randrange(len(self._in_flight))]
            self._deliver(env)

    def run_round(self, max_steps: Optional[int] = None) -> int:
        """Advance to the next round boundary; returns steps taken."""
        taken = 0
        self.step()
        taken += 1
        while self._perm and (max_steps is None or taken < max_steps):
            self.step()
            taken += 1
        return taken

    def run_rounds(self, count: int) -> None:
        for _ in range(count):
            self.run_round()

    def run_until(self, predicate, max_steps: int,
                  check_interval: Optional[int] = None) -> tuple[int, bool]:
        """Step until the predicate holds; checked up-front and then at round
        boundaries (or every ``check_interval`` steps).  Returns (steps,
        satisfied)."""
        if predicate(self):
            return 0, True
        steps = 0
        since_check = 0
        while steps < max_steps:
            self.step()
            steps += 1
            since_check += 1
            boundary = not self._perm if check_interval is None else since_check >= check_interval
            if boundary:
                since_check = 0
                if predicate(self):
                    return steps, True
        return steps, predicate(self)

    def drain_messages(self, budget: Optional[int] = None) -> bool:
        """Deliver pending messages (oldest first, no timeouts) to quiescence."""
        if budget is None:
            budget = 200 * (len(self._in_flight) + 1) + 1000
        delivered = 0
        while self._in_flight and delivered < budget:
            while self._fifo and self._fifo[0].delivered:
                self._fifo.popleft()
            self._deliver(self._fifo[0])
            delivered += 1
        return not self._in_flight

    # -- inspection ----------------------------------------------------------------

    def clone(self) -> "World":
        memo: dict = {}
        probe = World(self.seed, self.config)
        probe.nodes = copy.deepcopy(self.nodes, memo)
        probe.supervisor = copy.deepcopy(self.supervisor, memo)
        probe.crashed = set(self.crashed)
        probe.round = self.round
        probe.step_count = self.step_count
        probe.sched_rng = copy.deepcopy(self.sched_rng)
        probe._seq = self._seq
        probe._pending_reports = list(self._pending_reports)
        probe._perm = list(self._perm)
        order = sorted(self._in_flight, key=lambda e: e.seq)
        probe._in_flight = copy.deepcopy(order, memo)
        for i, env in enumerate(probe._in_flight):
            env.idx = i
        probe._fifo = deque(probe._in_flight)
        return probe

    def phi(self, topic: int = 0) -> int:
        """Missing-publication potential summed over direct ring out-edges."""
        insts = {}
        for node_id, actor in self.nodes.items():
            if node_id in self.crashed:
                continue
            inst = actor.topics.get(topic)
            if inst is not None and not inst.departed:
                insts[node_id] = inst
        keys = {nid: inst.trie.key_set() for nid, inst in insts.items()}
        total = 0
        for nid, inst in insts.items():
            for ref in (inst.left, inst.right, inst.ring):
                if ref is not None and ref.node in keys:
                    total += len(keys[nid] - keys[ref.node])
        return total

    def state_digest(self) -> str:
        from .topology import protocol_snapshot

        h = hashlib.blake2b(digest_size=16)
        topics = sorted({t for a in self.nodes.values() for t in a.topics}
                        | set(self.supervisor.dbs))
        for topic in topics:
            h.update(repr(protocol_snapshot(self, topic)).encode())
        h.update(repr(sorted((e.dst, repr(e.msg)) for e in self._in_flight)).encode())
        return h.hexdigest()


# --- world builders ---------------------------------------------------------

@dataclass
class CorruptionProfile:
    """Knobs for adversarial initial states.

    db_mode: empty | correct | missing-node | duplicate-node | missing-label |
             stray-label | shuffled
    label_mode: absent | correct | random | mixed
    edge_mode: none | correct | random
    """

    name: str = "custom"
    db_mode: str = "correct"
    label_mode: str = "correct"
    edge_mode: str = "correct"
    max_label_len: int = 6
    corrupt_messages: int = 0
    connect_subscribers: bool = False
    topics: int = 1


PROFILES = {
    "clean-empty": CorruptionProfile("clean-empty", db_mode="empty",
                                     label_mode="absent", edge_mode="none"),
    "legitimate": CorruptionProfile("legitimate"),
    "corrupt-db": CorruptionProfile("corrupt-db", db_mode="shuffled",
                                    label_mode="correct", edge_mode="correct"),
    "random-labels": CorruptionProfile("random-labels", db_mode="empty",
                                       label_mode="random", edge_mode="random",
                                       connect_subscribers=True),
    "adversarial": CorruptionProfile("adversarial", db_mode="shuffled",
                                     label_mode="mixed", edge_mode="random",
                                     corrupt_messages=10),
}

DB_CORRUPTIONS = ("missing-node", "duplicate-node", "missing-label", "stray-label")


def make_legitimate_world(n: int, seed: int = 0, topics: int = 1,
                          config: Optional[SimConfig] = None) -> World:
    """A world already sitting exactly on the target topology."""
    from .messages import LabeledRef
    from .subscriber import ShortcutSlot
    from .topology import target_skip_ring

    world = World(seed, config)
    target = target_skip_ring(n)
    for topic in range(topics):
        db = world.supervisor.db(topic)
        for i in range(n):
            db.entries[label_of(i)] = i

        def ref(index):
            if index is None:
                return None
            return LabeledRef(target.node(index).label, index)

        for t in target.nodes:
            inst = world.ensure_instance(t.index, topic)
            inst.label = t.label
            inst.left, inst.right, inst.ring = ref(t.left), ref(t.right), ref(t.ring)
            inst.sc_left = [ShortcutSlot(lab, _holder_id(lab)) for lab in t.sc_left]
            inst.sc_right = [ShortcutSlot(lab, _holder_id(lab)) for lab in t.sc_right]
    return world


def _holder_id(label: Label) -> int:
    from .labels import index_of

    return index_of(label)


def _random_label(rng: random.Random, max_len: int) -> Label:
    length = rng.randint(1, max_len)
    return Label(length, rng.randrange(1 << length))


def gen_initial_state(seed: int, n: int, profile: CorruptionProfile,
                      config: Optional[SimConfig] = None) -> World:
    """Seeded adversarial world; every node implicitly knows the supervisor,
    so the whole graph is weakly connected no matter what the profile does."""
    rng = random.Random(_derive_seed(seed, "genesis", profile.name))
    world = World(seed, config)
    for topic in range(profile.topics):
        world.supervisor.db(topic)
        for i in range(n):
            world.ensure_instance(i, topic)
        _fill_db(world, topic, n, profile, rng)
        _fill_labels(world, topic, n, profile, rng)
        _fill_edges(world, topic, n, profile, rng)
        for _ in range(profile.corrupt_messages):
            dst = rng.randrange(n)
            world.inject_message(dst, _random_message(rng, topic, n, profile), corrupted=True)
    return world


def _fill_db(world: World, topic: int, n: int, profile: CorruptionProfile,
             rng: random.Random) -> None:
    db = world.supervisor.db(topic)
    mode = profile.db_mode
    if mode == "shuffled":
        mode = rng.choice(("empty", "correct") + DB_CORRUPTIONS + ("multi",))
    if mode == "empty":
        return
    for i in range(n):
        db.entries[label_of(i)] = i
    db.next = rng.randrange(n) if n else 0
    modes = DB_CORRUPTIONS if mode == "multi" else (mode,) if mode in DB_CORRUPTIONS else ()
    for m in modes:
        if n == 0:
            break
        lab = label_of(rng.randrange(n))
        if lab not in db.entries:
            continue
        if m == "missing-node":
            db.entries[lab] = None
        elif m == "duplicate-node":
            other = label_of(rng.randrange(n))
            if other in db.entries:
                db.entries[lab] = db.entries[other]
        elif m == "missing-label" and n > 1:
            del db.entries[lab]
        elif m == "stray-label":
            node = db.entries.pop(lab)
            db.entries[label_of(n + rng.randrange(4))] = node


def _fill_labels(world: World, topic: int, n: int, profile: CorruptionProfile,
                 rng: random.Random) -> None:
    db = world.supervisor.db(topic)
    recorded = {node: lab for lab, node in db.entries.items() if node is not None}
    for i in range(n):
        inst = world.nodes[i].topics[topic]
        mode = profile.label_mode
        if mode == "mixed":
            mode = rng.choice(("absent", "correct", "random", "random"))
        if mode == "absent":
            inst.label = None
        elif mode == "correct":
            inst.label = recorded.get(i, label_of(i))
        else:
            inst.label = _random_label(rng, profile.max_label_len)


def _fill_edges(world: World, topic: int, n: int, profile: CorruptionProfile,
                rng: random.Random) -> None:
    from .messages import LabeledRef
    from .subscriber import ShortcutSlot

    if profile.edge_mode == "none" or n == 0:
        return
    if profile.edge_mode == "correct":
        _copy_target_edges(world, topic, n)
        return

    def claimed(j: int) -> Label:
        actual = world.nodes[j].topics[topic].label
        if actual is not None and rng.random() < 0.6:
            return actual
        return _random_label(rng, profile.max_label_len)

    def some_ref(exclude: int) -> Optional[LabeledRef]:
        if n < 2 or rng.random() < 0.3:
            return None
        j = rng.randrange(n)
        if j == exclude:
            return None
        return LabeledRef(claimed(j), j)

    for i in range(n):
        inst = world.nodes[i].topics[topic]
        inst.left = some_ref(i)
        inst.right = some_ref(i)
        inst.ring = some_ref(i)
        inst.sc_left = [ShortcutSlot(_random_label(rng, profile.max_label_len),
                                     rng.randrange(n) if rng.random() < 0.5 else None)
                        for _ in range(rng.randrange(3))]
        inst.sc_right = [ShortcutSlot(_random_label(rng, profile.max_label_len),
                                      rng.randrange(n) if rng.random() < 0.5 else None)
                         for _ in range(rng.randrange(3))]
    if profile.connect_subscribers and n > 1:
        order = list(range(n))
        rng.shuffle(order)
        for a, b in zip(order, order[1:]):  # spanning path keeps one component
            inst = world.nodes[a].topics[topic]
            if inst.left is None:
                inst.left = LabeledRef(claimed(b), b)
            elif inst.right is None:
                inst.right = LabeledRef(claimed(b), b)
            else:
                inst.ring = LabeledRef(claimed(b), b)


def _copy_target_edges(world: World, topic: int, n: int) -> None:
    from .messages import LabeledRef
    from .subscriber import ShortcutSlot
    from .topology import target_skip_ring

    target = target_skip_ring(n)

    def ref(index):
        return None if index is None else LabeledRef(target.node(index).label, index)

    for t in target.nodes:
        inst = world.nodes[t.index].topics[topic]
        inst.left, inst.right, inst.ring = ref(t.left), ref(t.right), ref(t.ring)
        inst.sc_left = [ShortcutSlot(lab, _holder_id(lab)) for lab in t.sc_left]
        inst.sc_right = [ShortcutSlot(lab, _holder_id(lab)) for lab in t.sc_right]


def _random_message(rng: random.Random, topic: int, n: int,
                    profile: CorruptionProfile):
    from .messages import LabeledRef, TrieSummary
    from .messages import Bits as MBits

    def node() -> int:
        return rng.randrange(n)

    def lab() -> Label:
        return _random_label(rng, profile.max_label_len)

    def ref() -> LabeledRef:
        return LabeledRef(lab(), node())

    kind = rng.randrange(9)
    if kind == 0:
        return Check(topic, ref(), lab(), rng.choice((0, 1)))
    if kind == 1:
        return Introduce(topic, ref(), rng.choice((0, 1)))
    if kind == 2:
        return Linearize(topic, ref())
    if kind == 3:
        return RemoveConnections(topic, node())
    if kind == 4:
        maybe_ref = lambda: ref() if rng.random() < 0.8 else None
        maybe_lab = lab() if rng.random() < 0.8 else None
        return SetData(topic, maybe_ref(), maybe_lab, maybe_ref())
    if kind == 5:
        return IntroduceShortcut(topic, lab(), node())
    if kind == 6:
        return GetConfiguration(topic, node())
    if kind == 7:
        width = rng.randint(1, 8)
        summ = TrieSummary(MBits(width, rng.randrange(1 << width)),
                           rng.getrandbits(64).to_bytes(8, "big"))
        return CheckTrie(topic, node(), (summ,))
    return Subscribe(topic, node())
