"""Hilbert bases of integer cones ``{y ∈ ℕ^m : My ≥ 0}``.

The inequality system is homogenized with one slack per row, giving
``[M | -I](y, s) = 0``, and the minimal nonzero solutions of that equation
system are enumerated by the completion procedure of Contejean and Devie:
starting from the unit vectors, a candidate ``x`` is extended by ``e_j`` only
when ``e_j`` pushes the defect ``Kx`` back towards zero (``<Kx, Ke_j> < 0``),
and candidates dominating a solution already found are dropped.
"""

from __future__ import annotations

import itertools
from typing import Sequence

DEFAULT_FRONTIER_CAP = 100_000

Vector = tuple


class ResourceCap(Exception):
    """The completion frontier grew beyond the configured bound."""


def _dot(a: Sequence[int], b: Sequence[int]) -> int:
    return sum(x * y for x, y in zip(a, b))


def _leq(a: Sequence[int], b: Sequence[int]) -> bool:
    return all(x <= y for x, y in zip(a, b))


def minimal_solutions(K: Sequence[Sequence[int]], n: int, cap: int = DEFAULT_FRONTIER_CAP) -> list[Vector]:
    """Minimal nonzero ``x ∈ ℕ^n`` with ``Kx = 0`` (``K`` given as rows)."""
    cols = [tuple(row[j] for row in K) for j in range(n)]
    basis: list[Vector] = []
    frontier: dict[Vector, tuple] = {}
    for j in range(n):
        e = tuple(1 if i == j else 0 for i in range(n))
        frontier[e] = cols[j]
    while frontier:
        if len(frontier) > cap:
            raise ResourceCap(f"completion frontier reached {len(frontier)} candidates (cap {cap})")
        nxt: dict[Vector, tuple] = {}
        solved = [x for x, d in frontier.items() if not any(d)]
        basis.extend(solved)
        for x, defect in frontier.items():
            if not any(defect):
                continue
            for j in range(n):
                if _dot(defect, cols[j]) >= 0:
                    continue
                y = x[:j] + (x[j] + 1,) + x[j + 1:]
                if y in nxt or any(_leq(b, y) for b in basis):
                    continue
                nxt[y] = tuple(a + b for a, b in zip(defect, cols[j]))
        frontier = nxt
    return sorted(basis)


def hilbert_basis(M: Sequence[Sequence[int]], m: int | None = None,
                  cap: int = DEFAULT_FRONTIER_CAP) -> list[Vector]:
    """Minimal generating set of ``{y ∈ ℕ^m : My ≥ 0}``.

    ``m`` is needed when ``M`` has no rows.  Elements are returned sorted.
    Minimality is componentwise on the lifted vectors ``(y, My)``: in
    ``y``-space alone one generator may dominate another (e.g. ``(1,0)`` and
    ``(1,1)`` for ``y₁ ≥ y₂``).
    """
    q = len(M)
    if m is None:
        if not q:
            raise ValueError("column count required for an empty matrix")
        m = len(M[0])
    K = [list(M[i]) + [-1 if k == i else 0 for k in range(q)] for i in range(q)]
    lifted = minimal_solutions(K, m + q, cap)
    return sorted({x[:m] for x in lifted if any(x[:m])})


def lift(M: Sequence[Sequence[int]], y: Sequence[int]) -> Vector:
    return tuple(y) + tuple(_dot(row, y) for row in M)


def in_cone(M: Sequence[Sequence[int]], y: Sequence[int]) -> bool:
    return all(v >= 0 for v in y) and all(_dot(row, y) >= 0 for row in M)


def brute_force_basis(M: Sequence[Sequence[int]], m: int, bound: int) -> list[Vector]:
    """Irreducible elements of the cone with every component at most ``bound``.

    Independent of :func:`hilbert_basis`; used as a cross-check.  Complete
    whenever ``bound`` is at least the largest generator component.
    """
    sols = [y for y in itertools.product(range(bound + 1), repeat=m)
            if any(y) and in_cone(M, y)]
    sol_set = set(sols)
    out = []
    for y in sols:
        reducible = False
        for z in sols:
            if z == y or not _leq(z, y):
                continue
            rest = tuple(a - b for a, b in zip(y, z))
            if rest in sol_set:
                reducible = True
                break
        if not reducible:
            out.append(y)
    return sorted(out)


def generated(H: Sequence[Vector], y: Sequence[int]) -> bool:
    """Is ``y`` a nonnegative integer combination of ``H`` (bounded knapsack)?"""
    target = tuple(y)
    gens = [h for h in H if any(h)]
    seen: set = set()

    def reach(rest: tuple, start: int) -> bool:
        if not any(rest):
            return True
        key = (rest, start)
        if key in seen:
            return False
        seen.add(key)
        for i in range(start, len(gens)):
            h = gens[i]
            if _leq(h, rest) and reach(tuple(a - b for a, b in zip(rest, h)), i):
                return True
        return False

    return reach(target, 0)
