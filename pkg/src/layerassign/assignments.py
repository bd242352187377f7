"""Layer assignments: value type, counting, enumeration and inheritance.

A layer assignment ``[a_1, ..., a_n]`` tells how many layers each
spatial-resolution group of a convolutional network receives.  Every group
holds at least one layer and the sum of the entries is the network depth.
"""

from __future__ import annotations

from typing import Iterable, Iterator, Sequence

__all__ = [
    "AssignmentError",
    "LayerAssignment",
    "MAX_DEPTH",
    "count_assignments",
    "count_range",
    "enumerate_assignments",
    "iter_assignments",
    "successors",
    "seed_assignment",
    "is_inherited_chain",
    "is_successor",
]

# Largest depth accepted by the counting functions.
MAX_DEPTH = 64


class AssignmentError(ValueError):
    """Raised for invalid assignments or out-of-domain counting queries."""


class LayerAssignment(tuple):
    """Immutable per-group layer counts.

    Behaves like a tuple of ints, so equality, hashing and lexicographic
    ordering come for free::

        >>> a = LayerAssignment([2, 1, 2])
        >>> a.depth
        5
        >>> str(a)
        '2-1-2'
        >>> LayerAssignment.parse("3-4-6-3")
        LayerAssignment([3, 4, 6, 3])
    """

    __slots__ = ()

    def __new__(cls, groups: Iterable[int]) -> "LayerAssignment":
        values = []
        for g in groups:
            if isinstance(g, bool) or int(g) != g:
                raise AssignmentError(f"layer counts must be integers, got {g!r}")
            values.append(int(g))
        if not values:
            raise AssignmentError("an assignment needs at least one group")
        if any(v < 1 for v in values):
            raise AssignmentError(f"every group needs at least one layer, got {values}")
        return super().__new__(cls, values)

    @classmethod
    def parse(cls, text: str) -> "LayerAssignment":
        """Parse the canonical ``a1-a2-...-an`` form."""
        parts = text.strip().split("-")
        try:
            return cls(int(p) for p in parts)
        except ValueError as exc:
            if isinstance(exc, AssignmentError):
                raise
            raise AssignmentError(f"cannot parse assignment {text!r}") from None

    @property
    def depth(self) -> int:
        return sum(self)

    @property
    def n_groups(self) -> int:
        return len(self)

    def increment(self, group: int) -> "LayerAssignment":
        """Return a copy with one more layer in ``group`` (0-based)."""
        values = list(self)
        values[group] += 1
        return LayerAssignment(values)

    def __str__(self) -> str:
        return "-".join(str(v) for v in self)

    def __repr__(self) -> str:
        return f"LayerAssignment({list(self)})"


def _binomial(n: int, k: int) -> int:
    # Pascal's rule, row by row; exact and never forms a factorial.
    if k < 0 or k > n:
        return 0
    k = min(k, n - k)
    row = [1] + [0] * k
    for i in range(1, n + 1):
        for j in range(min(i, k), 0, -1):
            row[j] += row[j - 1]
    return row[k]


def count_assignments(m: int, n: int) -> int:
    """Number of layer assignments of depth ``m`` over ``n`` groups.

    Equals ``(m-1)! / ((n-1)! (m-n)!)``, i.e. C(m-1, n-1).
    """
    if n < 1:
        raise AssignmentError(f"group count must be >= 1, got {n}")
    if m < n:
        raise AssignmentError(f"no valid assignment: depth {m} < group count {n}")
    if m > MAX_DEPTH:
        raise AssignmentError(f"depth {m} exceeds supported maximum {MAX_DEPTH}")
    return _binomial(m - 1, n - 1)


def count_range(n: int, m_lo: int, m_hi: int) -> int:
    """Total number of assignments over the depth range ``[m_lo, m_hi]``."""
    if m_lo < n:
        raise AssignmentError(f"no valid assignment: depth {m_lo} < group count {n}")
    if m_hi < m_lo:
        raise AssignmentError(f"empty depth range {m_lo}..{m_hi}")
    return sum(count_assignments(m, n) for m in range(m_lo, m_hi + 1))


def iter_assignments(m: int, n: int) -> Iterator[LayerAssignment]:
    """Yield the positive compositions of ``m`` into ``n`` parts, lexicographically."""
    if n < 1:
        raise AssignmentError(f"group count must be >= 1, got {n}")
    if m < n:
        raise AssignmentError(f"no valid assignment: depth {m} < group count {n}")

    def rec(prefix: list[int], remaining: int, slots: int) -> Iterator[list[int]]:
        if slots == 1:
            yield prefix + [remaining]
            return
        # leave at least one layer for each remaining group
        for first in range(1, remaining - slots + 2):
            yield from rec(prefix + [first], remaining - first, slots - 1)

    for values in rec([], m, n):
        yield LayerAssignment(values)


def enumerate_assignments(m: int, n: int) -> list[LayerAssignment]:
    return list(iter_assignments(m, n))


def successors(a: LayerAssignment) -> list[LayerAssignment]:
    """The ``n`` one-layer-deeper assignments inherited from ``a``, by group index."""
    return [a.increment(i) for i in range(len(a))]


def seed_assignment(n: int) -> LayerAssignment:
    """The single assignment of depth ``n``: one layer per group."""
    if n < 1:
        raise AssignmentError(f"group count must be >= 1, got {n}")
    return LayerAssignment([1] * n)


def is_successor(parent: Sequence[int], child: Sequence[int]) -> bool:
    """True iff ``child`` equals ``parent`` plus one layer in exactly one group."""
    if len(parent) != len(child):
        return False
    diff = [c - p for p, c in zip(parent, child)]
    return sorted(diff) == [0] * (len(diff) - 1) + [1]


def is_inherited_chain(chain: Sequence[Sequence[int]]) -> bool:
    if not chain:
        raise AssignmentError("chain must be non-empty")
    return all(is_successor(p, c) for p, c in zip(chain, chain[1:]))
