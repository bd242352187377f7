import itertools
import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from layerassign.assignments import (
    AssignmentError,
    LayerAssignment,
    count_assignments,
    count_range,
    enumerate_assignments,
    is_inherited_chain,
    seed_assignment,
    successors,
)

A = LayerAssignment


def brute_compositions(m, n):
    """Independent oracle: filter the full grid of per-group counts."""
    return sorted(c for c in itertools.product(range(1, m + 1), repeat=n) if sum(c) == m)


class TestLayerAssignment:
    def test_invariants(self):
        a = A([3, 4, 6, 3])
        assert a.depth == 16
        assert a.n_groups == 4
        assert str(a) == "3-4-6-3"

    def test_parse_roundtrip(self):
        assert A.parse("3-4-6-3") == A([3, 4, 6, 3])
        assert A.parse(str(A([2, 1, 2]))) == A([2, 1, 2])

    @pytest.mark.parametrize("bad", [[0, 1, 1], [1, -2], [], [1.5, 2]])
    def test_rejects_invalid(self, bad):
        with pytest.raises(AssignmentError):
            A(bad)

    @pytest.mark.parametrize("text", ["", "1--2", "a-b", "1-0-2"])
    def test_parse_rejects(self, text):
        with pytest.raises(AssignmentError):
            A.parse(text)

    def test_value_semantics(self):
        a = A([1, 2])
        assert a == A((1, 2))
        assert hash(a) == hash(A([1, 2]))
        assert a.increment(0) == A([2, 2])
        assert a == A([1, 2])  # unchanged


class TestCounting:
    @pytest.mark.parametrize("m,n,expected", [(4, 4, 1), (11, 3, 45), (5, 3, 6)])
    def test_examples(self, m, n, expected):
        assert count_assignments(m, n) == expected

    def test_examples_match_brute_force(self):
        assert len(brute_compositions(11, 3)) == 45
        assert len(brute_compositions(5, 3)) == 6

    def test_domain_error(self):
        with pytest.raises(AssignmentError, match="no valid assignment"):
            count_assignments(2, 3)

    def test_overflow_guard(self):
        assert count_assignments(64, 32) == math.comb(63, 31)
        with pytest.raises(AssignmentError):
            count_assignments(65, 3)

    def test_range_examples(self):
        assert count_range(3, 4, 15) == 454
        assert count_range(3, 4, 15) * 2 == 908
        assert count_range(3, 3, 3) == 1
        assert count_range(2, 2, 4) == 6

    def test_range_domain_error(self):
        with pytest.raises(AssignmentError):
            count_range(3, 2, 5)

    @pytest.mark.parametrize("n", range(1, 6))
    def test_range_closed_form(self, n):
        # sum over i of prod_{j=1}^{n-1} (i - j), divided by (n-1)!
        for m in range(n, 21):
            closed = sum(math.prod(i - j for j in range(1, n)) for i in range(n, m + 1)) // math.factorial(n - 1)
            assert count_range(n, n, m) == closed


class TestEnumeration:
    def test_small(self):
        assert enumerate_assignments(4, 3) == [A([1, 1, 2]), A([1, 2, 1]), A([2, 1, 1])]

    def test_lexicographic_ends(self):
        got = enumerate_assignments(5, 3)
        assert len(got) == 6
        assert got[0] == A([1, 1, 3]) and got[-1] == A([3, 1, 1])

    def test_contains_paper_examples(self):
        got = enumerate_assignments(11, 3)
        assert len(got) == 45
        assert A([3, 2, 6]) in got and A([2, 4, 5]) in got

    @pytest.mark.parametrize("n", range(1, 6))
    def test_matches_count_and_brute_force(self, n):
        for m in range(n, 21):
            got = enumerate_assignments(m, n)
            assert len(got) == count_assignments(m, n)
            assert got == sorted(got) and len(set(got)) == len(got)
            if count_assignments(m, n) < 5000:
                assert [tuple(a) for a in got] == brute_compositions(m, n)

    def test_domain_error(self):
        with pytest.raises(AssignmentError):
            enumerate_assignments(2, 3)


class TestInheritance:
    def test_seed(self):
        assert seed_assignment(3) == A([1, 1, 1])
        assert seed_assignment(4) == A([1, 1, 1, 1])
        assert seed_assignment(1) == A([1])
        with pytest.raises(AssignmentError):
            seed_assignment(0)

    def test_successors(self):
        assert successors(A([1, 1, 1])) == [A([2, 1, 1]), A([1, 2, 1]), A([1, 1, 2])]
        assert A([3, 1, 2]) in successors(A([2, 1, 2]))
        assert A([2, 5, 8]) in successors(A([2, 5, 7]))

    def test_paper_search_chain_is_inherited(self):
        chain = [A.parse(s) for s in
                 "2-1-1 2-1-2 3-1-2 3-2-2 3-2-3 4-2-3 5-2-3 5-3-3 6-3-3 7-3-3 7-4-3 8-4-3".split()]
        assert is_inherited_chain(chain)

    def test_paper_best_column_is_not(self):
        chain = [A.parse(s) for s in "1-1-2 2-1-2 2-2-2 3-2-2 4-2-2 3-4-2".split()]
        assert not is_inherited_chain(chain)

    def test_single_element(self):
        assert is_inherited_chain([A([4, 2, 2])])

    @given(st.lists(st.integers(1, 6), min_size=1, max_size=5), st.data())
    @settings(max_examples=100, deadline=None)
    def test_successor_properties(self, groups, data):
        a = A(groups)
        succ = successors(a)
        assert len(succ) == len(a) == len(set(succ))
        assert all(s.depth == a.depth + 1 and min(s) >= 1 for s in succ)
        chain = [a]
        for _ in range(data.draw(st.integers(0, 8))):
            chain.append(data.draw(st.sampled_from(successors(chain[-1]))))
        assert is_inherited_chain(chain)
