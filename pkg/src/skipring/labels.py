"""Exact label arithmetic for the skip ring.

A label is a bit string positioning a subscriber on the unit circle:
the label ``y_1 .. y_d`` denotes the dyadic rank ``sum y_i / 2^i`` in
``[0, 1)``.  The supervisor hands out labels in the order

    0, 1, 01, 11, 001, 011, 101, 111, 0001, ...

i.e. ``label_of(x)`` takes the leading bit of ``x``'s minimal binary
representation and moves it to the units place.  Consecutive blocks of
new labels land exactly on the midpoints of the already-assigned ranks,
which is what makes the nested level rings of the topology work.

Everything here is integer arithmetic; no floats touch a comparison.
"""

from __future__ import annotations

from typing import NamedTuple


class LabelError(ValueError):
    """A bit string that cannot occur in a well-formed configuration."""


class Label(NamedTuple):
    """A bit string stored as (length, value); bit 1 is the most significant.

    ``Label(4, 3)`` is the string ``0011``.  Identity compares
    (length, value): ``01`` and ``010`` are distinct labels even though
    their ranks are equal.
    """

    length: int
    value: int

    def bits(self) -> str:
        return format(self.value, f"0{self.length}b")

    def __repr__(self) -> str:  # compact in traces and assertion diffs
        return f"L:{self.bits()}"


class Rank(NamedTuple):
    """Reduced dyadic fraction num / 2^exp in [0, 1)."""

    num: int
    exp: int

    def __repr__(self) -> str:
        return f"{self.num}/{1 << self.exp}"


ZERO = Label(1, 0)

# Labels are capped well below this; a single shifted integer then gives a
# total order on ranks (value << (KEY_BITS - length), common denominator 2^64).
KEY_BITS = 64

LT, EQ, GT = -1, 0, 1


def make_label(bits: str) -> Label:
    """Build a Label from a literal bit string such as ``"0011"``."""
    if not bits or any(c not in "01" for c in bits):
        raise LabelError(f"not a bit string: {bits!r}")
    return Label(len(bits), int(bits, 2))


def label_of(x: int) -> Label:
    """The x-th label: leading bit of x's binary representation moved last."""
    if x < 0:
        raise LabelError(f"negative index: {x}")
    if x == 0:
        return ZERO
    d = x.bit_length() - 1
    return Label(d + 1, ((x - (1 << d)) << 1) | 1)


def index_of(label: Label) -> int:
    """Inverse of :func:`label_of`; rejects strings outside its image.

    Every generated label except ``0`` ends in its original leading bit,
    so a trailing 0 (e.g. ``00`` or ``010``) signals corruption.
    """
    length, value = label
    if length == 1:
        if value == 0:
            return 0
        return 1
    if length < 1 or value < 0 or value >= (1 << length) or not value & 1:
        raise LabelError(f"label not in the image of label_of: {label}")
    return (1 << (length - 1)) + (value >> 1)


def is_assignable(label: Label) -> bool:
    """True iff ``index_of`` accepts the label."""
    try:
        index_of(label)
    except LabelError:
        return False
    return True


def rank(label: Label) -> Rank:
    """Exact dyadic rank of a label, in reduced form."""
    length, value = label
    if length < 1 or value < 0 or value >= (1 << length):
        raise LabelError(f"malformed label: {label}")
    if value == 0:
        return Rank(0, 0)
    shift = (value & -value).bit_length() - 1  # strip trailing zero bits
    return Rank(value >> shift, length - shift)


def rank_key(label: Label) -> int:
    """Rank as an integer over the common denominator 2^KEY_BITS.

    Monotone in rank; equal iff ranks are equal.  Differences of keys are
    exact rank distances scaled by 2^KEY_BITS.
    """
    length, value = label
    if length > KEY_BITS:
        raise LabelError(f"label longer than {KEY_BITS} bits: {label}")
    return value << (KEY_BITS - length)


def label_from_rank(num: int, exp: int) -> Label:
    """Minimal-length label whose rank is num / 2^exp (num in [0, 2^exp))."""
    if num == 0:
        return ZERO
    if num < 0 or num >= (1 << exp):
        raise LabelError(f"rank {num}/2^{exp} outside [0,1)")
    shift = (num & -num).bit_length() - 1
    return Label(exp - shift, num >> shift)


def compare_by_rank(a: Label, b: Label) -> int:
    """LT/EQ/GT on exact ranks; zero-padded variants compare equal."""
    ka, kb = rank_key(a), rank_key(b)
    if ka < kb:
        return LT
    if ka > kb:
        return GT
    return EQ


def shortcut_labels(v_label: Label, neighbor_label: Label) -> list[Label]:
    """Shortcut label chain derived from one direct ring neighbor.

    A neighbor with a longer label was inserted between ``v`` and v's
    previous neighbor on that side, so mirroring the neighbor's rank
    through itself, ``r(s) = 2 r(neighbor) - r(v)``, recovers that older
    neighbor; iterating recovers the whole ladder of coarser ring levels.
    The chain ends with the first label no longer than ``v_label``.

    Arithmetic is modulo 1: on the wrap side of the circle the ladder
    steps through rank 1, which is the position of label ``0``.  Emitted
    labels are minimal-length, with strictly decreasing lengths.
    """
    if neighbor_label.length <= v_label.length:
        return []
    v_num, v_exp = rank(v_label)
    cur_num, cur_exp = rank(neighbor_label)
    out: list[Label] = []
    prev_len = neighbor_label.length
    for _ in range(neighbor_label.length - v_label.length):
        exp = max(cur_exp - 1, v_exp)
        num = (cur_num << (exp - cur_exp + 1)) - (v_num << (exp - v_exp))
        num %= 1 << exp
        s = label_from_rank(num, exp)
        if s.length >= prev_len:  # cannot happen for well-formed input
            raise LabelError(
                f"shortcut chain not descending: {v_label} via {neighbor_label}"
            )
        out.append(s)
        if s.length <= v_label.length:
            break
        prev_len = s.length
        cur_num, cur_exp = rank(s)
    return out
