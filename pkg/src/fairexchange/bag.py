"""Immutable, hashable multisets with a deterministic iteration order."""

from __future__ import annotations

from typing import Any, Generic, Hashable, Iterable, Iterator, Mapping, TypeVar

T = TypeVar("T", bound=Hashable)


class Bag(Generic[T]):
    """A finite multiset stored as a sorted tuple of ``(element, count)`` pairs.

    Elements must be mutually comparable; counts are always positive.
    """

    __slots__ = ("_items", "_index", "_hash", "_size")

    def __init__(self, elements: Iterable[T] | Mapping[T, int] = ()) -> None:
        counts: dict[T, int] = {}
        if isinstance(elements, Mapping):
            for key, n in elements.items():
                if n < 0:
                    raise ValueError(f"negative multiplicity for {key!r}")
                if n:
                    counts[key] = counts.get(key, 0) + n
        else:
            for key in elements:
                counts[key] = counts.get(key, 0) + 1
        self._items: tuple[tuple[T, int], ...] = tuple(sorted(counts.items()))
        self._index = counts
        self._hash: int | None = None
        self._size = sum(counts.values())

    @classmethod
    def _raw(cls, counts: dict[T, int]) -> "Bag[T]":
        bag = cls.__new__(cls)
        bag._index = {k: n for k, n in counts.items() if n}
        bag._items = tuple(sorted(bag._index.items()))
        bag._hash = None
        bag._size = sum(bag._index.values())
        return bag

    def items(self) -> tuple[tuple[T, int], ...]:
        return self._items

    def distinct(self) -> tuple[T, ...]:
        return tuple(k for k, _ in self._items)

    def count(self, key: T) -> int:
        return self._index.get(key, 0)

    def __iter__(self) -> Iterator[T]:
        for key, n in self._items:
            for _ in range(n):
                yield key

    def __len__(self) -> int:
        return self._size

    def __bool__(self) -> bool:
        return self._size > 0

    def __contains__(self, key: object) -> bool:
        return key in self._index

    def __add__(self, other: "Bag[T]") -> "Bag[T]":
        counts = dict(self._index)
        for key, n in other._items:
            counts[key] = counts.get(key, 0) + n
        return Bag._raw(counts)

    def __sub__(self, other: "Bag[T]") -> "Bag[T]":
        """Multiset difference; raises ``ValueError`` unless ``other <= self``."""
        counts = dict(self._index)
        for key, n in other._items:
            have = counts.get(key, 0)
            if have < n:
                raise ValueError(f"{key!r} missing from multiset")
            counts[key] = have - n
        return Bag._raw(counts)

    def monus(self, other: "Bag[T]") -> "Bag[T]":
        """Truncated difference (counts never drop below zero)."""
        counts = dict(self._index)
        for key, n in other._items:
            if key in counts:
                counts[key] = max(0, counts[key] - n)
        return Bag._raw(counts)

    def add(self, key: T, n: int = 1) -> "Bag[T]":
        counts = dict(self._index)
        counts[key] = counts.get(key, 0) + n
        if counts[key] < 0:
            raise ValueError(f"{key!r} missing from multiset")
        return Bag._raw(counts)

    def remove(self, key: T, n: int = 1) -> "Bag[T]":
        return self.add(key, -n)

    def __le__(self, other: "Bag[T]") -> bool:
        return all(other._index.get(k, 0) >= n for k, n in self._items)

    def issubset(self, other: "Bag[T]") -> bool:
        return self <= other

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Bag) and self._items == other._items

    def __lt__(self, other: "Bag[T]") -> bool:
        # total order used only to sort bags of bags deterministically
        return self._items < other._items

    def __hash__(self) -> int:
        if self._hash is None:
            self._hash = hash(self._items)
        return self._hash

    def __repr__(self) -> str:
        inner = ", ".join(f"{k!r}" if n == 1 else f"{k!r}×{n}" for k, n in self._items)
        return "Bag{" + inner + "}"

    def map(self, fn: Any) -> "Bag":
        counts: dict = {}
        for key, n in self._items:
            new = fn(key)
            counts[new] = counts.get(new, 0) + n
        return Bag._raw(counts)


EMPTY: Bag = Bag()


def split_diff(left: Bag, right: Bag) -> tuple[Bag, Bag]:
    """Return ``(left - common, right - common)`` where common is the meet."""
    only_left: dict = {}
    only_right: dict = {}
    for key, n in left.items():
        m = right.count(key)
        if n > m:
            only_left[key] = n - m
    for key, m in right.items():
        n = left.count(key)
        if m > n:
            only_right[key] = m - n
    return Bag._raw(only_left), Bag._raw(only_right)
