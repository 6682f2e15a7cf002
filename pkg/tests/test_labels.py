"""Label algebra tests.

The reference oracle here works on literal bit strings and Fractions,
independently of the packed-integer implementation it checks.
"""

from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from skipring.labels import (
    EQ,
    GT,
    LT,
    Label,
    LabelError,
    ZERO,
    compare_by_rank,
    index_of,
    is_assignable,
    label_from_rank,
    label_of,
    make_label,
    rank,
    rank_key,
    shortcut_labels,
)


# --- string/Fraction reference oracle -------------------------------------

def oracle_label_bits(x: int) -> str:
    if x == 0:
        return "0"
    b = format(x, "b")
    return b[1:] + b[0]


def oracle_rank(bits: str) -> Fraction:
    return sum(Fraction(int(c), 2 ** (i + 1)) for i, c in enumerate(bits))


# First 16 assignments; the first nine are the documented generation order.
FIRST_LABELS = [
    "0", "1", "01", "11", "001", "011", "101", "111",
    "0001", "0011", "0101", "0111", "1001", "1011", "1101", "1111",
]


def test_first_sixteen_labels_and_ranks():
    for x, bits in enumerate(FIRST_LABELS):
        assert oracle_label_bits(x) == bits
        lab = label_of(x)
        assert lab.bits() == bits
        r = rank(lab)
        assert Fraction(r.num, 2**r.exp) == oracle_rank(bits)
    assert label_of(9).bits() == "0011"
    assert rank(label_of(9)) == (3, 4)  # 3/16
    assert label_of(10).bits() == "0101"
    assert rank(label_of(10)) == (5, 4)  # 5/16


def test_roundtrip_small():
    for x in range(1 << 14):
        assert index_of(label_of(x)) == x


@given(st.integers(min_value=0, max_value=2**60))
def test_roundtrip_property(x):
    lab = label_of(x)
    assert lab.bits() == oracle_label_bits(x)
    assert index_of(lab) == x


def test_ranks_distinct():
    seen = {rank_key(label_of(x)) for x in range(1 << 14)}
    assert len(seen) == 1 << 14


def test_spreading_midpoints():
    # Each new block of labels lands on midpoints of the existing ranks.
    for d in range(1, 7):
        old = sorted(Fraction(rank(label_of(y)).num, 2 ** rank(label_of(y)).exp)
                     for y in range(2**d))
        bounds = old + [Fraction(1)]
        mids = {(a + b) / 2 for a, b in zip(bounds, bounds[1:])}
        new = {Fraction(rank(label_of(x)).num, 2 ** rank(label_of(x)).exp)
               for x in range(2**d, 2 ** (d + 1))}
        assert new == mids


def test_index_of_rejects_corrupt():
    for bad in ("00", "010", "0110", "10"):
        with pytest.raises(LabelError):
            index_of(make_label(bad))
    assert not is_assignable(make_label("00"))
    assert is_assignable(make_label("0011"))


def test_rank_examples():
    assert rank(make_label("01")) == (1, 2)      # 1/4
    assert rank(ZERO) == (0, 0)
    assert rank(make_label("0011")) == (3, 4)    # 3/16
    assert rank(make_label("0101")) == (5, 4)    # 5/16


def test_compare_by_rank():
    assert compare_by_rank(make_label("0"), make_label("1")) == LT
    assert compare_by_rank(make_label("0011"), make_label("01")) == LT
    assert compare_by_rank(make_label("01"), make_label("010")) == EQ
    assert compare_by_rank(make_label("11"), make_label("01")) == GT


@given(st.integers(min_value=0, max_value=2**16), st.integers(min_value=0, max_value=2**16))
def test_rank_key_total_order(x, y):
    a, b = label_of(x), label_of(y)
    fa = Fraction(rank(a).num, 2 ** rank(a).exp)
    fb = Fraction(rank(b).num, 2 ** rank(b).exp)
    assert (rank_key(a) < rank_key(b)) == (fa < fb)
    assert (rank_key(a) == rank_key(b)) == (fa == fb)


def test_label_from_rank_minimal():
    assert label_from_rank(0, 5) == ZERO
    assert label_from_rank(4, 4) == make_label("01")   # 4/16 reduces to 1/4
    assert label_from_rank(3, 4) == make_label("0011")
    with pytest.raises(LabelError):
        label_from_rank(16, 4)


# --- shortcut chains -------------------------------------------------------

def test_shortcut_chain_worked_examples():
    quarter = make_label("01")
    assert shortcut_labels(quarter, make_label("0011")) == [
        make_label("001"),  # 2*(3/16) - 1/4 = 1/8
        make_label("0"),    # 2*(1/8) - 1/4 = 0
    ]
    assert shortcut_labels(quarter, make_label("0101")) == [
        make_label("011"),  # 2*(5/16) - 1/4 = 3/8
        make_label("1"),    # 2*(3/8) - 1/4 = 1/2
    ]


def test_shortcut_chain_same_length_empty():
    assert shortcut_labels(ZERO, ZERO) == []
    assert shortcut_labels(make_label("01"), make_label("1")) == []


def test_shortcut_chain_wraps_through_zero():
    # Minimum node deriving its far-side ladder from the wrap neighbor.
    chain = shortcut_labels(ZERO, make_label("1111"))
    assert chain == [make_label("111"), make_label("11"), make_label("1")]
    chain = shortcut_labels(make_label("1"), make_label("1001"))
    assert chain == [make_label("101"), make_label("11"), make_label("0")]


@settings(max_examples=300)
@given(st.integers(min_value=0, max_value=2**14), st.integers(min_value=0, max_value=2**14))
def test_shortcut_chain_lengths_descend(xv, xw):
    v, w = label_of(xv), label_of(xw)
    chain = shortcut_labels(v, w)
    if w.length <= v.length:
        assert chain == []
        return
    assert len(chain) <= w.length - v.length
    lengths = [w.length] + [s.length for s in chain]
    assert all(a > b for a, b in zip(lengths, lengths[1:]))
    assert chain[-1].length <= v.length
    assert all(s.length > v.length for s in chain[:-1])
