import itertools
from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from cloudalloc.core import (
    MAX_COMPONENT,
    ZERO_SPEC,
    Cluster,
    VmRequest,
    VmSpec,
    spec_add,
    spec_matches_exactly,
    spec_satisfies,
    to_fraction,
)
from cloudalloc.errors import ArithmeticOverflow, CapacityExceeded

specs = st.builds(
    VmSpec,
    st.integers(0, 10**6),
    st.integers(0, 256),
    st.fractions(min_value=0, max_value=1000, max_denominator=100),
    st.integers(0, 10**6),
)


@pytest.mark.parametrize(
    "offer, demand, expected",
    [
        (VmSpec(512, 1, 1, 1024), VmSpec(512, 1, 1, 1024), True),
        (VmSpec(512, 1, 1, 1024), VmSpec(812, 1, 1, 1024), False),
        (VmSpec(1024, 2, 2, 2048), VmSpec(512, 1, 1, 1024), True),
    ],
)
def test_spec_satisfies_examples(offer, demand, expected):
    assert spec_satisfies(offer, demand) is expected


def test_spec_add_identity_and_merge():
    s = VmSpec(512, 1, 1, 1024)
    assert ZERO_SPEC + s == s
    merged = spec_add(s, s)
    assert merged == VmSpec(1024, 2, 2, 2048)
    assert merged.cpu_ghz == Fraction(2)


@settings(max_examples=1000)
@given(specs, specs)
def test_spec_add_commutes_componentwise(a, b):
    oracle = tuple(x + y for x, y in zip(a.components(), b.components()))
    assert spec_add(a, b) == spec_add(b, a)
    assert spec_add(a, b).components() == oracle


def test_spec_add_overflow():
    big = VmSpec(MAX_COMPONENT, 0, 0, 0)
    with pytest.raises(ArithmeticOverflow):
        spec_add(big, VmSpec(1, 0, 0, 0))


def test_negative_components_rejected():
    with pytest.raises(ValueError):
        VmSpec(-1, 0, 0, 0)
    with pytest.raises(ValueError):
        VmSpec(0, 0, -0.5, 0)


def test_satisfies_is_a_partial_order_on_a_small_lattice():
    lattice = [VmSpec(r, c, Fraction(g, 2), d) for r, c, g, d in itertools.product((0, 1), (0, 2), (0, 1), (0, 3))]
    for a in lattice:
        assert spec_satisfies(a, a)
    for a, b in itertools.product(lattice, repeat=2):
        if spec_satisfies(a, b) and spec_satisfies(b, a):
            assert a == b
    for a, b, c in itertools.product(lattice, repeat=3):
        if spec_satisfies(a, b) and spec_satisfies(b, c):
            assert spec_satisfies(a, c)


def test_exact_match_treats_zero_ghz_as_wildcard():
    vm = VmSpec(1024, 5, 5, 4096)
    assert spec_matches_exactly(vm, VmSpec(1024, 5, 0, 4096))
    assert spec_matches_exactly(vm, VmSpec(1024, 5, 5, 4096))
    assert not spec_matches_exactly(vm, VmSpec(1024, 5, 4, 4096))
    assert not spec_matches_exactly(VmSpec(2048, 5, 5, 4096), VmSpec(1024, 5, 0, 4096))


def test_scaled_down_truncates():
    held = VmSpec(1024, 1, 1, 100).scaled_down(Fraction(1, 10))
    assert held == VmSpec(102, 0, Fraction(1, 10), 0)


def test_to_fraction_reads_decimal_text():
    assert to_fraction(0.1) == Fraction(1, 10)
    assert to_fraction("1/1024") == Fraction(1, 1024)
    with pytest.raises(TypeError):
        to_fraction(True)


def test_request_requires_positive_lease():
    with pytest.raises(ValueError):
        VmRequest(1, 0, VmSpec(), 0)


def test_cluster_refuses_overcommit():
    c = Cluster()
    c.add_host(1, VmSpec(1024, 2, 2, 2048))
    c.add_vm(VmSpec(1024, 1, 1, 1024), 1)
    with pytest.raises(CapacityExceeded):
        c.add_vm(VmSpec(1, 0, 0, 0), 1)
    assert c.headroom(1) == VmSpec(0, 1, 1, 1024)
    assert c.conservation_violations() == []


def test_vm_ids_are_never_reused():
    c = Cluster()
    c.add_host(1, VmSpec(4096, 4, 4, 4096))
    first = c.add_vm(VmSpec(512, 1, 1, 512), 1)
    c.remove_vm(first.vm_id)
    second = c.add_vm(VmSpec(512, 1, 1, 512), 1)
    assert second.vm_id != first.vm_id
    with pytest.raises(ValueError):
        c.add_vm(VmSpec(512, 1, 1, 512), 1, vm_id=first.vm_id)
